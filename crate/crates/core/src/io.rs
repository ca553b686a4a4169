//! PGM/PPM images and CSV traces.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::applications::ImageGrid;
use crate::error::{Error, Result};
use crate::trace::{AcceptedSource, InnerReport, IterRecord};

pub const TRACE_HEADER: &str =
    "k,objective,violation,lambda_gap,ek_norm,accepted_source,t_used,psnr,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary graymap (P5).
    Pgm,
    /// Binary pixmap (P6).
    Ppm,
}

impl ImageFormat {
    /// P5 for one channel, P6 for three.
    pub fn for_channels(channels: usize) -> Result<Self> {
        match channels {
            1 => Ok(Self::Pgm),
            3 => Ok(Self::Ppm),
            c => Err(Error::Format(format!("no portable format for {c} channels"))),
        }
    }
}

struct Header<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            let b = self.data[self.pos];
            if b == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("expected {what}, found truncated or bad data")));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} out of range")))
    }
}

/// Parses PGM (P2/P5) or PPM (P3/P6) bytes, scaling samples to `[0, 1]`.
pub fn parse_image(data: &[u8]) -> Result<ImageGrid> {
    if data.len() < 2 || data[0] != b'P' {
        return Err(Error::Format("bad magic: not a PGM/PPM file".into()));
    }
    let (channels, binary) = match data[1] {
        b'2' => (1, false),
        b'5' => (1, true),
        b'3' => (3, false),
        b'6' => (3, true),
        m => {
            return Err(Error::Format(format!(
                "bad magic P{}: only P2, P3, P5 and P6 are supported",
                m as char
            )))
        }
    };
    let mut h = Header { data, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval must be in 1..=65535, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        if h.pos >= data.len() || !data[h.pos].is_ascii_whitespace() {
            return Err(Error::Format("missing separator before raster".into()));
        }
        let raster = &data[h.pos + 1..];
        let bytes = if maxval < 256 { 1 } else { 2 };
        if raster.len() < count * bytes {
            return Err(Error::Format(format!(
                "truncated payload: need {} bytes, found {}",
                count * bytes,
                raster.len()
            )));
        }
        for i in 0..count {
            let v = if bytes == 1 {
                raster[i] as usize
            } else {
                ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
            };
            pixels.push(check_sample(v, maxval)? as f64 / scale);
        }
    } else {
        for _ in 0..count {
            let v = h.number("sample").map_err(|_| {
                Error::Format(format!("truncated payload: expected {count} samples"))
            })?;
            pixels.push(check_sample(v, maxval)? as f64 / scale);
        }
    }
    ImageGrid::new(width, height, channels, pixels)
}

fn check_sample(v: usize, maxval: usize) -> Result<usize> {
    if v > maxval {
        return Err(Error::Format(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(v)
}

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    parse_image(&data)
}

/// Clamps to `[0, 1]` and rounds half up to 8 bits.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

pub fn encode_image(img: &ImageGrid, format: ImageFormat) -> Result<Vec<u8>> {
    let (magic, channels) = match format {
        ImageFormat::Pgm => ("P5", 1),
        ImageFormat::Ppm => ("P6", 3),
    };
    if img.channels != channels {
        return Err(Error::Format(format!(
            "{magic} needs {channels} channel(s), image has {}",
            img.channels
        )));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|v| quantize(*v)));
    Ok(out)
}

pub fn write_image(img: &ImageGrid, path: &Path, format: ImageFormat) -> Result<()> {
    fs::write(path, encode_image(img, format)?)?;
    Ok(())
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace_to<W: Write>(records: &[IterRecord], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f(r.objective),
            fmt_f(r.violation),
            fmt_f(r.lambda_gap),
            fmt_f(r.ek_norm),
            r.accepted_source().label(),
            r.t_used(),
            r.psnr.map(fmt_f).unwrap_or_default(),
            fmt_f(r.wall_ms)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(records: &[IterRecord], path: &Path) -> Result<()> {
    write_trace_to(records, fs::File::create(path)?)
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub objective: f64,
    pub violation: f64,
    pub lambda_gap: f64,
    pub ek_norm: f64,
    pub accepted_source: AcceptedSource,
    pub t_used: usize,
    pub psnr: Option<f64>,
    pub wall_ms: f64,
}

impl TraceRow {
    pub fn from_record(r: &IterRecord) -> Self {
        Self {
            k: r.k,
            objective: r.objective,
            violation: r.violation,
            lambda_gap: r.lambda_gap,
            ek_norm: r.ek_norm,
            accepted_source: r.accepted_source(),
            t_used: r.t_used(),
            psnr: r.psnr,
            wall_ms: r.wall_ms,
        }
    }

    /// Rebuilds a record; `y_change` and the inner residual pair are not
    /// stored in the CSV and come back as NaN.
    pub fn to_record(&self) -> IterRecord {
        let inner = match self.accepted_source {
            AcceptedSource::Exact => None,
            s => Some(InnerReport {
                accepted_source: s,
                t_used: self.t_used,
                residual_before: f64::NAN,
                residual_after: self.ek_norm,
            }),
        };
        IterRecord {
            k: self.k,
            objective: self.objective,
            violation: self.violation,
            lambda_gap: self.lambda_gap,
            ek_norm: self.ek_norm,
            y_change: f64::NAN,
            inner,
            psnr: self.psnr,
            wall_ms: self.wall_ms,
        }
    }
}

pub fn read_trace_from<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(TRACE_HEADER) {
        return Err(Error::Format("trace CSV header mismatch".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Format(format!("trace line {}: expected 9 fields", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("trace line {}: bad number {s:?}", i + 2)))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("trace line {}: bad integer {s:?}", i + 2)))
        };
        rows.push(TraceRow {
            k: int(f[0])?,
            objective: num(f[1])?,
            violation: num(f[2])?,
            lambda_gap: num(f[3])?,
            ek_norm: num(f[4])?,
            accepted_source: AcceptedSource::parse(f[5]).ok_or_else(|| {
                Error::Format(format!("trace line {}: unknown source {:?}", i + 2, f[5]))
            })?,
            t_used: int(f[6])?,
            psnr: if f[7].is_empty() { None } else { Some(num(f[7])?) },
            wall_ms: num(f[8])?,
        });
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace_from(fs::File::open(path)?)
}
