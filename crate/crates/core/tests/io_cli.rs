mod common;

use std::path::Path;
use std::process::{Command, Output};

use ::tpadmm::applications::{synthetic_shapes, ImageGrid};
use ::tpadmm::io::{
    encode_image, parse_image, read_image, read_trace, read_trace_from, write_image, write_trace,
    write_trace_to, ImageFormat, TraceRow, TRACE_HEADER,
};
use ::tpadmm::modules::make_identity_module;
use ::tpadmm::problem::IterateW;
use ::tpadmm::tpadmm::{tpadmm_solve, TpadmmConfig};
use ::tpadmm::trace::IterRecord;
use common::lasso_1d;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quantized(width: usize, height: usize, channels: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..width * height * channels)
        .map(|_| rng.gen_range(0..=255u32) as f64 / 255.0)
        .collect();
    ImageGrid::new(width, height, channels, pixels).unwrap()
}

fn records(iterations: usize) -> Vec<IterRecord> {
    let p = lasso_1d(2.0, 1.0);
    let cfg = TpadmmConfig {
        max_outer: iterations,
        tol_violation: 0.0,
        tol_change: 0.0,
        tol_residual: 0.0,
        ..TpadmmConfig::default()
    };
    tpadmm_solve(&p, &cfg, make_identity_module().as_ref(), &IterateW::zeros(&p))
        .unwrap()
        .trace
        .records
}

#[test]
fn image_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (channels, format) in [(1, ImageFormat::Pgm), (3, ImageFormat::Ppm)] {
        let img = quantized(7, 5, channels, channels as u64);
        let path = dir.path().join(format!("img{channels}"));
        write_image(&img, &path, format).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }
    // Re-encoding a decoded file reproduces its bytes.
    let bytes = encode_image(&quantized(4, 4, 1, 9), ImageFormat::Pgm).unwrap();
    assert_eq!(encode_image(&parse_image(&bytes).unwrap(), ImageFormat::Pgm).unwrap(), bytes);
}

#[test]
fn constant_and_out_of_range_images() {
    let img = ImageGrid::filled(3, 2, 1, 0.5).unwrap();
    let bytes = encode_image(&img, ImageFormat::Pgm).unwrap();
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|b| *b == 128));

    let img = ImageGrid::new(4, 1, 1, vec![-0.3, 1.7, 0.0, 1.0]).unwrap();
    let bytes = encode_image(&img, ImageFormat::Pgm).unwrap();
    assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 0, 255]);
}

#[test]
fn trace_line_counts() {
    let mut buf = Vec::new();
    write_trace_to(&records(2), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], TRACE_HEADER);

    let mut buf = Vec::new();
    write_trace_to(&[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().trim_end(), TRACE_HEADER);
    assert!(read_trace_from(TRACE_HEADER.as_bytes()).unwrap().is_empty());
}

#[test]
fn trace_round_trip_is_bit_exact() {
    let mut recs = records(25);
    recs[3].psnr = Some(31.234567890123456);
    recs[4].objective = 1.0 / 3.0;
    recs[5].violation = f64::MIN_POSITIVE;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trace(&recs, &path).unwrap();
    let rows = read_trace(&path).unwrap();
    assert_eq!(rows.len(), recs.len());
    for (row, rec) in rows.iter().zip(&recs) {
        let want = TraceRow::from_record(rec);
        assert_eq!(row, &want);
        for (a, b) in [
            (row.objective, want.objective),
            (row.violation, want.violation),
            (row.lambda_gap, want.lambda_gap),
            (row.ek_norm, want.ek_norm),
            (row.wall_ms, want.wall_ms),
        ] {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert!(rows.windows(2).all(|w| w[0].k < w[1].k));
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpadmm"))
        .args(args)
        .output()
        .unwrap()
}

fn shapes_pgm(dir: &Path) -> String {
    let path = dir.join("a.pgm");
    write_image(&synthetic_shapes(12, 12).unwrap(), &path, ImageFormat::Pgm).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn denoise_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let input = shapes_pgm(dir.path());
    let out = dir.path().join("out.pgm");
    let trace = dir.path().join("trace.csv");
    let o = cli(&[
        "denoise", "--in", &input, "--noise", "uniform:0.2", "--solver", "tpadmm", "--module",
        "median:1", "--mu", "1e-4", "--beta", "1", "--eta", "auto", "--out",
        out.to_str().unwrap(), "--trace", trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let restored = read_image(&out).unwrap();
    assert_eq!((restored.width, restored.height), (12, 12));
    assert!(!read_trace(&trace).unwrap().is_empty());
}

#[test]
fn inadmissible_eta_is_a_config_error() {
    let o = cli(&["denoise", "--synthetic", "shapes:8x8", "--eta", "0.99"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("eta_max"), "{msg}");
}

#[test]
fn bad_flags_are_config_errors() {
    for args in [
        &["denoise", "--synthetic", "shapes:8x8", "--module", "sharpen"][..],
        &["denoise", "--synthetic", "shapes:8x8", "--beta", "-1"],
        &["denoise", "--in", "/nonexistent/x.pgm"],
        &["inpaint", "--synthetic", "shapes:8x8", "--mask", "ratio:1.5"],
        &["frobnicate"],
    ] {
        assert_eq!(cli(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn early_stop_is_non_convergence() {
    let o = cli(&["denoise", "--synthetic", "shapes:8x8", "--noise", "uniform:0.2", "--max-outer", "3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn diagnose_reports_two_thirds_regime() {
    let o = cli(&["diagnose", "--synthetic", "shapes:8x8"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let bound = text
        .lines()
        .find_map(|l| l.strip_prefix("eta_max (bound) = "))
        .unwrap()
        .parse::<f64>()
        .unwrap();
    assert!(bound >= 2.0 / 3.0 - 1e-12, "{bound}");
    for key in ["‖N‖₂ (bound)", "‖N‖₂ (power)", "lambda_min", "‖A‖₂²"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let o = cli(&[
            "inpaint", "--synthetic", "shapes:10x10", "--noise", "uniform:0.2", "--mask",
            "ratio:0.4", "--mu", "0.05", "--module", "adversarial", "--seed", "11", "--trace",
            path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        read_trace(&path).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        // Wall time is the only column allowed to differ.
        assert_eq!(TraceRow { wall_ms: 0.0, ..x.clone() }, TraceRow { wall_ms: 0.0, ..y.clone() });
    }
}

#[test]
fn bench_writes_one_trace_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "bench", "--synthetic", "shapes:8x8", "--noise", "uniform:0.2", "--mu", "0.05",
        "--modules", "identity,median:1", "--max-outer", "20000", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}{}", String::from_utf8_lossy(&o.stderr));
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 5);
    for cell in ["admm", "ladmm", "padmm", "tpadmm-identity", "tpadmm-median:1"] {
        assert!(text.lines().any(|l| l.starts_with(cell)), "{cell}\n{text}");
    }
}
