//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver did not reach its
//! tolerances within `--max-outer`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::applications::{
    build_inpaint, build_tv_denoise, multiblock_rain_solve, psnr_slices, synthetic_shapes,
    synthetic_smooth, synthetic_step, synthetic_streaks, ImageGrid, MaskOperator, NoiseKind,
    NoiseSpec,
};
use crate::baseline::{
    admm_solve, ladmm_solve, operator_norm_sq_of, proximal_admm_solve, BaselineConfig, XInner,
};
use crate::error::{Error, Result};
use crate::io::{read_image, write_image, write_trace, ImageFormat};
use crate::linops::{min_eig_lower_bound, vec};
use crate::modules::{
    make_adversarial_module, make_exact_oracle_module, make_identity_module,
    make_smoothing_module, AdversarialMode, Shape, SharedModule, SmoothingKind,
};
use crate::problem::{IterateW, ProximalWeight, SeparableProblem};
use crate::tpadmm::{
    eta_from_n_norm, n_norm_estimate, proximal_system, tpadmm_solve, EtaChoice, NormMode,
    TpadmmConfig,
};
use crate::trace::{Metric, SolveTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNCONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tpadmm", version, about = "Task-adaptive proximal ADMM for image restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// TV denoising of an image.
    Denoise(DenoiseArgs),
    /// TV inpainting of a masked image.
    Inpaint(InpaintArgs),
    /// Background / rain-streak separation with the multi-block scheme.
    Derain(DerainArgs),
    /// Runs every solver and module on one instance and prints a summary.
    Bench(BenchArgs),
    /// Prints the spectral quantities behind the admissible η.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Admm,
    Ladmm,
    Padmm,
    Tpadmm,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Admm => "admm",
            Self::Ladmm => "ladmm",
            Self::Padmm => "padmm",
            Self::Tpadmm => "tpadmm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormModeArg {
    Bound,
    Power,
}

/// Where the input image comes from.
#[derive(Args, Clone, Debug)]
pub struct InputArgs {
    /// Input PGM/PPM file.
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Synthetic clean image instead of a file: step|shapes|smooth[:WxH].
    #[arg(long, value_name = "SPEC", conflicts_with = "input")]
    pub synthetic: Option<String>,
    /// Additive noise: none | uniform:A | gaussian:A (clamped to [0, 1]).
    #[arg(long, default_value = "none")]
    pub noise: String,
    /// Clean reference for PSNR.
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value_t = SolverKind::Tpadmm)]
    pub solver: SolverKind,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Baseline proximal parameter (padmm: G = τI; ladmm: τ ≥ ‖A‖², default ‖A‖²).
    #[arg(long)]
    pub tau: Option<f64>,
    /// TPADMM weight W = τ_w·I.
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    pub weight_tau: f64,
    /// auto (0.9·η_max) or a value below η_max.
    #[arg(long, default_value = "auto")]
    pub eta: String,
    #[arg(long, value_enum, default_value_t = NormModeArg::Bound)]
    pub norm_mode: NormModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub zeta0: f64,
    #[arg(long = "C", alias = "c", default_value_t = 0.1)]
    pub c: f64,
    #[arg(long, default_value_t = 20)]
    pub t_max: usize,
    /// Accepted and ignored.
    #[arg(long, default_value_t = 0.0)]
    pub xi0: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub mu: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_violation: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol_change: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol_residual: f64,
    /// identity | exact | box[:r] | gaussian:σ | median:r |
    /// adversarial[:constant:c | :noise:scale]
    #[arg(long, default_value = "identity")]
    pub module: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV trace output.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Restored image output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
}

#[derive(Args, Clone, Debug)]
pub struct InpaintArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// ratio:R[:SEED] (fraction R of pixels removed) or a PGM whose nonzero
    /// pixels are kept.
    #[arg(long, default_value = "ratio:0.4")]
    pub mask: String,
}

#[derive(Args, Clone, Debug)]
pub struct DerainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, default_value_t = 0.05)]
    pub mu1: f64,
    #[arg(long, default_value_t = 0.05)]
    pub mu2: f64,
    /// Module for the rain layer (the background uses --module).
    #[arg(long, default_value = "identity")]
    pub module_r: String,
    /// Rain layer output.
    #[arg(long, value_name = "PATH")]
    pub out_rain: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Comma-separated TPADMM modules.
    #[arg(long, default_value = "identity,box,gaussian:1,median:1,adversarial")]
    pub modules: String,
    /// Directory for one trace per cell.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Diagnose the inpainting instance with this mask instead of denoising.
    #[arg(long)]
    pub mask: Option<String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| config_err(format!("{what}: cannot parse {s:?} as a number")))
}

pub fn parse_noise(spec: &str, seed: u64) -> Result<Option<NoiseSpec>> {
    if spec == "none" {
        return Ok(None);
    }
    let (kind, amp) = spec
        .split_once(':')
        .ok_or_else(|| config_err(format!("noise spec {spec:?}: expected KIND:AMPLITUDE")))?;
    let kind = match kind {
        "uniform" => NoiseKind::Uniform,
        "gaussian" => NoiseKind::Gaussian,
        k => return Err(config_err(format!("unknown noise kind {k:?}"))),
    };
    Ok(Some(NoiseSpec {
        kind,
        amplitude: parse_f64(amp, "noise amplitude")?,
        seed,
    }))
}

pub fn parse_synthetic(spec: &str) -> Result<ImageGrid> {
    let (name, size) = match spec.split_once(':') {
        Some((n, s)) => (n, s),
        None => (spec, "64x64"),
    };
    let (w, h) = size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
        .ok_or_else(|| config_err(format!("synthetic size {size:?}: expected WxH")))?;
    match name {
        "step" => synthetic_step(w, h),
        "shapes" => synthetic_shapes(w, h),
        "smooth" => synthetic_smooth(w, h),
        "rain" => {
            let bg = synthetic_smooth(w, h)?;
            let streaks = synthetic_streaks(w, h, 6, 0.3)?;
            bg.with_pixels(vec::add(&bg.pixels, &streaks.pixels))
                .map(ImageGrid::clamped)
        }
        n => Err(config_err(format!("unknown synthetic image {n:?}"))),
    }
}

pub fn parse_mask(spec: &str, shape: Shape, seed: u64) -> Result<MaskOperator> {
    if let Some(rest) = spec.strip_prefix("ratio:") {
        let mut parts = rest.split(':');
        let ratio = parse_f64(parts.next().unwrap_or(""), "mask ratio")?;
        let seed = match parts.next() {
            Some(s) => s
                .parse()
                .map_err(|_| config_err(format!("mask seed {s:?} is not an integer")))?,
            None => seed,
        };
        if parts.next().is_some() {
            return Err(config_err(format!("mask spec {spec:?}: expected ratio:R[:SEED]")));
        }
        return MaskOperator::random(shape, ratio, seed);
    }
    let img = read_image(Path::new(spec))?;
    if img.width != shape.width || img.height != shape.height {
        return Err(config_err("mask image size differs from the input"));
    }
    let mut keep = Vec::with_capacity(shape.len());
    for p in 0..shape.width * shape.height {
        let on = (0..img.channels).any(|c| img.pixels[p * img.channels + c] > 0.0);
        keep.extend(std::iter::repeat_n(on, shape.channels));
    }
    Ok(MaskOperator::new(keep))
}

/// Builds a task module from its command-line spelling.
pub fn parse_module(
    spec: &str,
    shape: Shape,
    seed: u64,
    exact: Option<(&SeparableProblem, &ProximalWeight, f64)>,
) -> Result<SharedModule> {
    let parts: Vec<&str> = spec.split(':').collect();
    let radius = |s: Option<&&str>, default: usize| -> Result<usize> {
        match s {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| config_err(format!("module {spec:?}: bad radius {v:?}"))),
        }
    };
    match parts[0] {
        "identity" if parts.len() == 1 => Ok(make_identity_module()),
        "exact" if parts.len() == 1 => {
            let (p, w, b) =
                exact.ok_or_else(|| config_err("the exact module is not available here"))?;
            make_exact_oracle_module(p, w, b)
        }
        "box" if parts.len() <= 2 => {
            make_smoothing_module(SmoothingKind::Box { radius: radius(parts.get(1), 1)? }, shape)
        }
        "median" if parts.len() <= 2 => make_smoothing_module(
            SmoothingKind::Median { radius: radius(parts.get(1), 1)? },
            shape,
        ),
        "gaussian" if parts.len() <= 2 => {
            let sigma = match parts.get(1) {
                Some(s) => parse_f64(s, "gaussian sigma")?,
                None => 1.0,
            };
            make_smoothing_module(SmoothingKind::Gaussian { sigma }, shape)
        }
        "adversarial" => match &parts[1..] {
            [] => Ok(make_adversarial_module(AdversarialMode::Constant(0.0))),
            ["constant", c] => Ok(make_adversarial_module(AdversarialMode::Constant(parse_f64(
                c,
                "adversarial constant",
            )?))),
            ["noise", s] => Ok(make_adversarial_module(AdversarialMode::Noise {
                seed,
                scale: parse_f64(s, "adversarial noise scale")?,
            })),
            _ => Err(config_err(format!("module {spec:?}: unrecognized adversarial mode"))),
        },
        _ => Err(config_err(format!(
            "unknown module {spec:?}; expected identity, exact, box[:r], gaussian:σ, median:r \
             or adversarial[:constant:c|:noise:scale]"
        ))),
    }
}

pub fn parse_eta(spec: &str) -> Result<EtaChoice> {
    if spec == "auto" {
        Ok(EtaChoice::Auto)
    } else {
        Ok(EtaChoice::Value(parse_f64(spec, "eta")?))
    }
}

struct Loaded {
    clean: Option<ImageGrid>,
    observed: ImageGrid,
}

fn load_input(args: &InputArgs, seed: u64) -> Result<Loaded> {
    let (base, clean) = match (&args.input, &args.synthetic) {
        (Some(p), _) => {
            let img = read_image(p)?;
            (img, None)
        }
        (None, Some(spec)) => {
            let img = parse_synthetic(spec)?;
            (img.clone(), Some(img))
        }
        (None, None) => return Err(config_err("give --in PATH or --synthetic SPEC")),
    };
    let clean = match &args.truth {
        Some(p) => Some(read_image(p)?),
        None => clean,
    };
    let observed = match parse_noise(&args.noise, seed)? {
        Some(n) => n.apply(&base)?,
        None => base,
    };
    Ok(Loaded { clean, observed })
}

fn metric_for(clean: &Option<ImageGrid>) -> Option<Metric> {
    clean.as_ref().map(|c| {
        let reference = c.pixels.clone();
        Arc::new(move |x: &[f64]| psnr_slices(x, &reference)) as Metric
    })
}

impl SolveArgs {
    fn weight(&self, n: usize) -> Result<ProximalWeight> {
        if !(self.weight_tau >= 0.0) {
            return Err(config_err("--weight-tau must be >= 0"));
        }
        Ok(if self.weight_tau == 0.0 {
            ProximalWeight::Zero
        } else {
            ProximalWeight::scaled_identity(n, self.weight_tau)
        })
    }

    pub fn tpadmm_config(&self, n: usize, metric: Option<Metric>) -> Result<TpadmmConfig> {
        let cfg = TpadmmConfig {
            beta: self.beta,
            weight: Some(self.weight(n)?),
            eta: parse_eta(&self.eta)?,
            norm_mode: match self.norm_mode {
                NormModeArg::Bound => NormMode::Bound,
                NormModeArg::Power => NormMode::Power,
            },
            zeta0: self.zeta0,
            c: self.c,
            t_max: self.t_max,
            xi0: self.xi0,
            max_outer: self.max_outer,
            tol_violation: self.tol_violation,
            tol_change: self.tol_change,
            tol_residual: self.tol_residual,
            metric,
            ..TpadmmConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn baseline_config(&self, tau: f64, metric: Option<Metric>) -> BaselineConfig {
        BaselineConfig {
            beta: self.beta,
            tau,
            max_outer: self.max_outer,
            tol_violation: self.tol_violation,
            tol_change: self.tol_change,
            x_inner: XInner::Cg { tol: 1e-12 },
            metric,
            ..BaselineConfig::default()
        }
    }
}

/// `x⁰ = b`-style start with `y⁰ = 0`, `λ⁰ = 0`.
fn initial_iterate(problem: &SeparableProblem, x0: &[f64]) -> IterateW {
    let mut w = IterateW::zeros(problem);
    w.x.copy_from_slice(x0);
    w
}

fn run_solver(
    solver: SolverKind,
    problem: &SeparableProblem,
    args: &SolveArgs,
    module_spec: &str,
    shape: Shape,
    x0: &[f64],
    metric: Option<Metric>,
) -> Result<SolveTrace> {
    let init = initial_iterate(problem, x0);
    match solver {
        SolverKind::Tpadmm => {
            let cfg = args.tpadmm_config(problem.n(), metric)?;
            let weight = cfg.resolved_weight(problem.n());
            let module = parse_module(
                module_spec,
                shape,
                args.seed,
                Some((problem, &weight, cfg.beta)),
            )?;
            Ok(tpadmm_solve(problem, &cfg, module.as_ref(), &init)?.trace)
        }
        SolverKind::Admm => {
            let tau = args.tau.unwrap_or(0.0);
            admm_solve(problem, &args.baseline_config(tau, metric), &init)
        }
        SolverKind::Padmm => {
            let tau = args.tau.unwrap_or(args.weight_tau * args.weight_tau);
            proximal_admm_solve(problem, &args.baseline_config(tau, metric), &init)
        }
        SolverKind::Ladmm => {
            let tau = match args.tau {
                Some(t) => t,
                None => operator_norm_sq_of(&problem.a)? * (1.0 + 1e-6),
            };
            ladmm_solve(problem, &args.baseline_config(tau, metric), &init)
        }
    }
}

fn summarize(label: &str, trace: &SolveTrace) -> String {
    let last = trace.last();
    format!(
        "{label}: {} after {} iterations, objective {:.10e}, violation {:.3e}, gap {:.3e}{}",
        trace.termination.label(),
        trace.records.len(),
        last.map(|r| r.objective).unwrap_or(f64::NAN),
        last.map(|r| r.violation).unwrap_or(f64::NAN),
        last.map(|r| r.lambda_gap).unwrap_or(f64::NAN),
        last.and_then(|r| r.psnr)
            .map(|p| format!(", PSNR {p:.2} dB"))
            .unwrap_or_default()
    )
}

fn write_outputs(
    trace: &SolveTrace,
    template: &ImageGrid,
    x: &[f64],
    args: &SolveArgs,
) -> Result<()> {
    if let Some(p) = &args.trace {
        write_trace(&trace.records, p)?;
    }
    if let Some(p) = &args.out {
        let img = template.with_pixels(x.to_vec())?.clamped();
        write_image(&img, p, ImageFormat::for_channels(img.channels)?)?;
    }
    Ok(())
}

fn exit_for(trace: &SolveTrace) -> i32 {
    if trace.converged() {
        EXIT_OK
    } else {
        EXIT_UNCONVERGED
    }
}

fn cmd_denoise(a: &DenoiseArgs) -> Result<i32> {
    let loaded = load_input(&a.input, a.solve.seed)?;
    let b = &loaded.observed;
    let problem = build_tv_denoise(b, a.solve.mu)?;
    let trace = run_solver(
        a.solve.solver,
        &problem,
        &a.solve,
        &a.solve.module,
        b.shape(),
        &b.pixels,
        metric_for(&loaded.clean),
    )?;
    println!("{}", summarize(&a.solve.solver.to_string(), &trace));
    write_outputs(&trace, b, &trace.final_iterate.x, &a.solve)?;
    Ok(exit_for(&trace))
}

fn cmd_inpaint(a: &InpaintArgs) -> Result<i32> {
    let loaded = load_input(&a.input, a.solve.seed)?;
    let b = &loaded.observed;
    let mask = parse_mask(&a.mask, b.shape(), a.solve.seed)?;
    let problem = build_inpaint(b, &mask, a.solve.mu)?;
    let x0 = problem.q.apply(&b.pixels)?;
    let trace = run_solver(
        a.solve.solver,
        &problem,
        &a.solve,
        &a.solve.module,
        b.shape(),
        &x0,
        metric_for(&loaded.clean),
    )?;
    println!("{}", summarize(&a.solve.solver.to_string(), &trace));
    write_outputs(&trace, b, &trace.final_iterate.x, &a.solve)?;
    Ok(exit_for(&trace))
}

fn cmd_derain(a: &DerainArgs) -> Result<i32> {
    if a.solve.solver != SolverKind::Tpadmm {
        return Err(config_err("derain runs the multi-block task-adaptive scheme only"));
    }
    let loaded = load_input(&a.input, a.solve.seed)?;
    let b = &loaded.observed;
    let cfg = a.solve.tpadmm_config(b.len(), metric_for(&loaded.clean))?;
    let mb = parse_module(&a.solve.module, b.shape(), a.solve.seed, None)?;
    let mr = parse_module(&a.module_r, b.shape(), a.solve.seed, None)?;
    let sol = multiblock_rain_solve(b, a.mu1, a.mu2, &cfg, mb.as_ref(), mr.as_ref())?;
    println!("{}", summarize("tpadmm-multiblock", &sol.trace));
    write_outputs(&sol.trace, b, &sol.background.pixels, &a.solve)?;
    if let Some(p) = &a.out_rain {
        let r = sol.rain.clone().clamped();
        write_image(&r, p, ImageFormat::for_channels(r.channels)?)?;
    }
    Ok(exit_for(&sol.trace))
}

/// One `bench` cell result.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub cell: String,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub violation: f64,
    pub psnr: Option<f64>,
    pub wall_ms: f64,
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let loaded = load_input(&a.input, a.solve.seed)?;
    let b = &loaded.observed;
    let problem = build_tv_denoise(b, a.solve.mu)?;
    let mut cells: Vec<(SolverKind, String)> = vec![
        (SolverKind::Admm, String::new()),
        (SolverKind::Ladmm, String::new()),
        (SolverKind::Padmm, String::new()),
    ];
    for m in a.modules.split(',').filter(|s| !s.is_empty()) {
        // Fail early on a bad spelling instead of inside the pool.
        parse_module(m, b.shape(), a.solve.seed, None).or_else(|e| {
            if m == "exact" {
                Ok(make_identity_module())
            } else {
                Err(e)
            }
        })?;
        cells.push((SolverKind::Tpadmm, m.to_string()));
    }
    a.solve.tpadmm_config(b.len(), None)?;
    if let Some(d) = &a.out_dir {
        std::fs::create_dir_all(d)?;
    }
    let results: Vec<Result<BenchRow>> = cells
        .par_iter()
        .map(|(solver, module)| {
            let label = if module.is_empty() {
                solver.to_string()
            } else {
                format!("{solver}-{module}")
            };
            let trace = run_solver(
                *solver,
                &problem,
                &a.solve,
                module,
                b.shape(),
                &b.pixels,
                metric_for(&loaded.clean),
            )?;
            if let Some(d) = &a.out_dir {
                let name = label.replace([':', '.'], "_");
                write_trace(&trace.records, &d.join(format!("{name}.csv")))?;
            }
            let last = trace.last();
            Ok(BenchRow {
                cell: label,
                iterations: trace.records.len(),
                converged: trace.converged(),
                objective: last.map(|r| r.objective).unwrap_or(f64::NAN),
                violation: last.map(|r| r.violation).unwrap_or(f64::NAN),
                psnr: last.and_then(|r| r.psnr),
                wall_ms: last.map(|r| r.wall_ms).unwrap_or(0.0),
            })
        })
        .collect();
    println!(
        "{:<24} {:>6} {:>9} {:>18} {:>10} {:>8} {:>10}",
        "cell", "iters", "status", "objective", "violation", "psnr", "ms"
    );
    let mut all_converged = true;
    for r in results {
        let r = r?;
        all_converged &= r.converged;
        println!(
            "{:<24} {:>6} {:>9} {:>18.10e} {:>10.3e} {:>8} {:>10.1}",
            r.cell,
            r.iterations,
            if r.converged { "tol-met" } else { "max-iter" },
            r.objective,
            r.violation,
            r.psnr.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into()),
            r.wall_ms
        );
    }
    Ok(if all_converged { EXIT_OK } else { EXIT_UNCONVERGED })
}

/// Spectral quantities of one instance.
#[derive(Clone, Debug)]
pub struct Diagnosis {
    pub lambda_min_bound: f64,
    pub a_norm_sq: f64,
    pub n_norm_bound: f64,
    pub n_norm_power: f64,
    pub eta_max_bound: f64,
    pub eta_max_power: f64,
}

pub fn diagnose(problem: &SeparableProblem, weight: &ProximalWeight, beta: f64) -> Result<Diagnosis> {
    let system = proximal_system(problem, weight, beta)?;
    let (alpha, l) = (problem.loss.alpha(), problem.loss.lipschitz());
    let n_norm_bound = n_norm_estimate(problem, weight, beta, NormMode::Bound)?;
    let n_norm_power = n_norm_estimate(problem, weight, beta, NormMode::Power)?;
    Ok(Diagnosis {
        lambda_min_bound: min_eig_lower_bound(&system)?,
        a_norm_sq: operator_norm_sq_of(&problem.a)?,
        n_norm_bound,
        n_norm_power,
        eta_max_bound: eta_from_n_norm(alpha, l, n_norm_bound),
        eta_max_power: eta_from_n_norm(alpha, l, n_norm_power),
    })
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<i32> {
    let loaded = load_input(&a.input, a.solve.seed)?;
    let b = &loaded.observed;
    let problem = match &a.mask {
        Some(m) => build_inpaint(b, &parse_mask(m, b.shape(), a.solve.seed)?, a.solve.mu)?,
        None => build_tv_denoise(b, a.solve.mu)?,
    };
    let weight = a.solve.weight(problem.n())?;
    let d = diagnose(&problem, &weight, a.solve.beta)?;
    println!("alpha = {}, L = {}", problem.loss.alpha(), problem.loss.lipschitz());
    println!("lambda_min(W̄ + βAᵀA) lower bound = {:.12}", d.lambda_min_bound);
    println!("‖A‖₂² estimate = {:.12}", d.a_norm_sq);
    println!("‖N‖₂ (bound) = {:.12}", d.n_norm_bound);
    println!("‖N‖₂ (power) = {:.12}", d.n_norm_power);
    println!("eta_max (bound) = {:.12}", d.eta_max_bound);
    println!("eta_max (power) = {:.12}", d.eta_max_power);
    Ok(EXIT_OK)
}

/// Maps an error to its exit code.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Unconverged { .. } => EXIT_UNCONVERGED,
        _ => EXIT_CONFIG,
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Denoise(a) => cmd_denoise(a),
        Command::Inpaint(a) => cmd_inpaint(a),
        Command::Derain(a) => cmd_derain(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run_command(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
