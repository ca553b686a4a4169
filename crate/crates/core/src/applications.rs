//! Image restoration instances: TV denoising, TV inpainting and two-layer
//! rain-streak removal.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{check_len, Error, Result};
use crate::linops::{vec, LinearMap};
use crate::modules::{Shape, TaskModule};
use crate::problem::{m_norm, IterateW, Regularizer, SeparableProblem, SmoothLoss};
use crate::subproblem::ProximalSubproblem;
use crate::tpadmm::{
    compute_sk, normal_system, proximal_system, select_and_step, ErrorController, Inner,
    TpadmmConfig,
};
use crate::trace::{IterRecord, SolveTrace, Termination};

/// Row-major, channel-interleaved image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        check_len("image pixels", width * height * channels, pixels.len())?;
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.width, self.height, self.channels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[self.shape().index(row, col, ch)]
    }

    pub fn clamped(mut self) -> Self {
        self.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, self.channels, pixels)
    }

    fn same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                context: "image shapes",
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }
}

/// `∇ = [∇_h; ∇_v]`: forward differences per channel, zero in the last
/// column (for `∇_h`) and last row (for `∇_v`).
pub fn gradient_operator(shape: Shape) -> Result<LinearMap> {
    let n = shape.len();
    if n == 0 {
        return Err(Error::InvalidParameter("gradient of an empty grid".into()));
    }
    let ch = shape.channels;
    let row = shape.width * ch;
    let rows = shape.height;
    let fwd = move |x: &[f64], out: &mut [f64]| {
        let (h, v) = out.split_at_mut(n);
        for r in 0..rows {
            let (xr, hr) = (&x[r * row..(r + 1) * row], &mut h[r * row..(r + 1) * row]);
            for j in 0..row - ch {
                hr[j] = xr[j + ch] - xr[j];
            }
            hr[row - ch..].iter_mut().for_each(|e| *e = 0.0);
        }
        for i in 0..n - row {
            v[i] = x[i + row] - x[i];
        }
        v[n - row..].iter_mut().for_each(|e| *e = 0.0);
    };
    let adj = move |y: &[f64], out: &mut [f64]| {
        let (h, v) = y.split_at(n);
        out.iter_mut().for_each(|e| *e = 0.0);
        for r in 0..rows {
            let (hr, or) = (&h[r * row..(r + 1) * row], &mut out[r * row..(r + 1) * row]);
            for j in 0..row - ch {
                or[j] -= hr[j];
                or[j + ch] += hr[j];
            }
        }
        for i in 0..n - row {
            out[i] -= v[i];
            out[i + row] += v[i];
        }
    };
    LinearMap::new(n, 2 * n, fwd, adj, "∇")
}

/// A 0/1 diagonal sampling pattern.
#[derive(Clone, Debug)]
pub struct MaskOperator {
    pub keep: Vec<bool>,
}

impl MaskOperator {
    pub fn new(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn full(n: usize) -> Self {
        Self::new(vec![true; n])
    }

    /// Removes `round(ratio · pixels)` pixel positions (all channels),
    /// chosen uniformly by a seeded shuffle.
    pub fn random(shape: Shape, ratio: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidParameter(format!(
                "mask ratio must lie in [0, 1], got {ratio}"
            )));
        }
        use rand::seq::SliceRandom;
        let npix = shape.width * shape.height;
        let drop = (ratio * npix as f64).round() as usize;
        let mut order: Vec<usize> = (0..npix).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut keep = vec![true; shape.len()];
        for &p in &order[..drop] {
            for ch in 0..shape.channels {
                keep[p * shape.channels + ch] = false;
            }
        }
        Ok(Self::new(keep))
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Fraction of removed entries.
    pub fn missing_ratio(&self) -> f64 {
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len().max(1) as f64
    }

    pub fn as_map(&self) -> LinearMap {
        LinearMap::diagonal(self.keep.iter().map(|k| if *k { 1.0 } else { 0.0 }).collect())
            .with_tag("mask")
    }
}

fn tv_problem(loss: SmoothLoss, q: LinearMap, shape: Shape, mu: f64) -> Result<SeparableProblem> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be > 0, got {mu}")));
    }
    let grad = gradient_operator(shape)?;
    let l = grad.range_dim();
    SeparableProblem::new(
        loss,
        q,
        Regularizer::l1(mu),
        grad,
        LinearMap::scaled_identity(l, -1.0),
        vec![0.0; l],
    )
}

/// `min ½‖x − b‖² + μ‖u‖₁  s.t.  ∇x − u = 0`
pub fn build_tv_denoise(b: &ImageGrid, mu: f64) -> Result<SeparableProblem> {
    if b.is_empty() {
        return Err(Error::InvalidParameter("empty image".into()));
    }
    tv_problem(
        SmoothLoss::quadratic(b.pixels.clone()),
        LinearMap::identity(b.len()),
        b.shape(),
        mu,
    )
}

/// `min ½‖Qx − Qb‖² + μ‖u‖₁  s.t.  ∇x − u = 0` with `Q` the mask.
pub fn build_inpaint(b: &ImageGrid, mask: &MaskOperator, mu: f64) -> Result<SeparableProblem> {
    if b.is_empty() {
        return Err(Error::InvalidParameter("empty image".into()));
    }
    check_len("mask", b.len(), mask.len())?;
    if !mask.keep.iter().any(|k| *k) {
        return Err(Error::InvalidParameter("mask removes every pixel; no data to fit".into()));
    }
    let q = mask.as_map();
    let target = q.apply(&b.pixels)?;
    tv_problem(SmoothLoss::quadratic(target), q, b.shape(), mu)
}

#[inline]
pub fn soft_threshold_scalar(v: f64, theta: f64) -> f64 {
    v.signum() * (v.abs() - theta).max(0.0)
}

/// Componentwise `sign(v)·max(|v| − θ, 0)`.
pub fn soft_threshold(v: &[f64], theta: f64) -> Vec<f64> {
    v.iter().map(|x| soft_threshold_scalar(*x, theta)).collect()
}

/// Peak-1 PSNR, capped at 99 dB.
pub fn psnr(a: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    a.same_shape(reference)?;
    Ok(psnr_slices(&a.pixels, &reference.pixels))
}

pub fn psnr_slices(a: &[f64], reference: &[f64]) -> f64 {
    let mse = a
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse <= 0.0 {
        return 99.0;
    }
    (10.0 * (1.0 / mse).log10()).min(99.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// `U[−a, a]`
    Uniform,
    /// `N(0, a²)`
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub amplitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn uniform(amplitude: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Uniform,
            amplitude,
            seed,
        }
    }

    /// Adds seeded noise and clamps to `[0, 1]`.
    pub fn apply(&self, img: &ImageGrid) -> Result<ImageGrid> {
        if !(self.amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let a = self.amplitude;
        let pixels: Vec<f64> = match self.kind {
            _ if a == 0.0 => img.pixels.clone(),
            NoiseKind::Uniform => {
                let d = Uniform::new_inclusive(-a, a);
                img.pixels.iter().map(|p| p + d.sample(&mut rng)).collect()
            }
            NoiseKind::Gaussian => {
                let d = Normal::new(0.0, a).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                img.pixels.iter().map(|p| p + d.sample(&mut rng)).collect()
            }
        };
        Ok(img.with_pixels(pixels)?.clamped())
    }
}

/// Two flat halves, 0.2 on the left and 0.8 on the right.
pub fn synthetic_step(width: usize, height: usize) -> Result<ImageGrid> {
    let mut px = Vec::with_capacity(width * height);
    for _ in 0..height {
        for c in 0..width {
            px.push(if c < width / 2 { 0.2 } else { 0.8 });
        }
    }
    ImageGrid::new(width, height, 1, px)
}

/// Piecewise-constant test scene: background, a bright rectangle and a
/// darker disc.
pub fn synthetic_shapes(width: usize, height: usize) -> Result<ImageGrid> {
    let mut px = Vec::with_capacity(width * height);
    let (w, h) = (width as f64, height as f64);
    for r in 0..height {
        for c in 0..width {
            let (x, y) = ((c as f64 + 0.5) / w, (r as f64 + 0.5) / h);
            let mut v = 0.3;
            if (0.15..0.55).contains(&x) && (0.2..0.7).contains(&y) {
                v = 0.85;
            }
            if (x - 0.68).powi(2) + (y - 0.62).powi(2) < 0.04 {
                v = 0.1;
            }
            px.push(v);
        }
    }
    ImageGrid::new(width, height, 1, px)
}

/// A smooth ramp in `[0.25, 0.75]`.
pub fn synthetic_smooth(width: usize, height: usize) -> Result<ImageGrid> {
    let mut px = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let t = (r + c) as f64 / (width + height).saturating_sub(2).max(1) as f64;
            px.push(0.25 + 0.5 * t);
        }
    }
    ImageGrid::new(width, height, 1, px)
}

/// Vertical streaks of height `amplitude` on every `period`-th column.
pub fn synthetic_streaks(
    width: usize,
    height: usize,
    period: usize,
    amplitude: f64,
) -> Result<ImageGrid> {
    if period == 0 {
        return Err(Error::InvalidParameter("streak period must be positive".into()));
    }
    let mut px = Vec::with_capacity(width * height);
    for _ in 0..height {
        for c in 0..width {
            px.push(if c % period == period / 2 { amplitude } else { 0.0 });
        }
    }
    ImageGrid::new(width, height, 1, px)
}

/// Output of [`multiblock_rain_solve`].
#[derive(Clone, Debug)]
pub struct RainSolution {
    pub background: ImageGrid,
    pub rain: ImageGrid,
    pub trace: SolveTrace,
    /// `(‖∇x_b − u‖, ‖x_r − v‖)` per iteration.
    pub violations: Vec<(f64, f64)>,
}

struct Block {
    a: LinearMap,
    x: Vec<f64>,
    x_hat: Vec<f64>,
    y: Vec<f64>,
    lambda: Vec<f64>,
    mu: f64,
}

impl Block {
    fn problem(&self, target: Vec<f64>) -> Result<SeparableProblem> {
        let l = self.a.range_dim();
        SeparableProblem::new(
            SmoothLoss::quadratic(target),
            LinearMap::identity(self.x.len()),
            Regularizer::l1(self.mu),
            self.a.clone(),
            LinearMap::scaled_identity(l, -1.0),
            vec![0.0; l],
        )
    }
}

/// Separates `b = x_b + x_r` by
/// `min ½‖x_b + x_r − b‖² + μ₁‖u‖₁ + μ₂‖v‖₁  s.t.  ∇x_b − u = 0, x_r − v = 0`.
///
/// Both x-blocks are updated from the previous iterate (Jacobi order), each
/// through the same module/error-control inner loop as the two-block solver;
/// `u` and `v` follow by soft thresholding and both multipliers take a dual
/// step. Convergence is not covered by the two-block theory.
pub fn multiblock_rain_solve(
    b: &ImageGrid,
    mu1: f64,
    mu2: f64,
    config: &TpadmmConfig,
    module_b: &dyn TaskModule,
    module_r: &dyn TaskModule,
) -> Result<RainSolution> {
    config.validate()?;
    if !(mu1 > 0.0 && mu2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu1 and mu2 must be > 0, got {mu1}, {mu2}"
        )));
    }
    let n = b.len();
    let beta = config.beta;
    let weight = config.resolved_weight(n);
    let grad = gradient_operator(b.shape())?;
    let mut blocks = [
        Block {
            x: b.pixels.clone(),
            x_hat: b.pixels.clone(),
            y: grad.apply(&b.pixels)?,
            lambda: vec![0.0; 2 * n],
            a: grad,
            mu: mu1,
        },
        Block {
            a: LinearMap::identity(n),
            x: vec![0.0; n],
            x_hat: vec![0.0; n],
            y: vec![0.0; n],
            lambda: vec![0.0; n],
            mu: mu2,
        },
    ];
    let mut controllers = Vec::with_capacity(2);
    let mut systems = Vec::with_capacity(2);
    let mut normals = Vec::with_capacity(2);
    for blk in &blocks {
        let p = blk.problem(vec![0.0; n])?;
        controllers.push(ErrorController::new(
            &p,
            &weight,
            beta,
            config.eta,
            config.norm_mode,
            config.abs_floor,
        )?);
        let sys = proximal_system(&p, &weight, beta)?;
        normals.push(normal_system(&p, &sys)?);
        systems.push(sys);
    }

    let modules = [module_b, module_r];
    let mut records = Vec::new();
    let mut violations = Vec::new();
    let mut termination = Termination::MaxIter;
    let start = Instant::now();

    for k in 0..config.max_outer {
        let mut stepped = Vec::with_capacity(2);
        for (i, blk) in blocks.iter().enumerate() {
            let other = &blocks[1 - i].x;
            let target = vec::sub(&b.pixels, other);
            let p = blk.problem(target)?;
            let s = compute_sk(&p, &weight, beta, &blk.y, &blk.lambda, &blk.x)?;
            let inner = Inner {
                sub: ProximalSubproblem::new(&p.loss, &p.q, &systems[i], &s, normals[i].as_ref())?,
                module: modules[i],
                fallback: config.fallback,
                zeta0: config.zeta0,
                c: config.c,
                t_max: config.t_max,
            };
            let (sel, x_next) = select_and_step(&inner, k, &blk.x, &blk.x_hat, &controllers[i])?;
            let y_next = p.y_update(&x_next, &blk.lambda, beta)?;
            let r = p.constraint_residual(&x_next, &y_next)?;
            let mut lambda_next = blk.lambda.clone();
            vec::axpy(-beta, &r, &mut lambda_next);
            let old = IterateW {
                x: blk.x.clone(),
                y: blk.y.clone(),
                lambda: blk.lambda.clone(),
            };
            let new = IterateW {
                x: x_next,
                y: y_next,
                lambda: lambda_next,
            };
            let gap = m_norm(&old.difference(&new), &weight, beta, &p.b)?;
            let y_change = vec::dist(&old.y, &new.y);
            stepped.push((new, sel, vec::norm(&r), gap, y_change));
        }
        let mut viol = [0.0; 2];
        let mut gaps = [0.0; 2];
        let mut ek = [0.0; 2];
        let mut y_change = 0.0f64;
        let mut report = None;
        for (i, (new, sel, v, g, yc)) in stepped.into_iter().enumerate() {
            viol[i] = v;
            gaps[i] = g;
            ek[i] = sel.report.residual_after;
            y_change = y_change.hypot(yc);
            controllers[i].residual_history.push(ek[i]);
            if i == 0 {
                report = Some(sel.report);
            }
            let blk = &mut blocks[i];
            blk.x = new.x;
            blk.y = new.y;
            blk.lambda = new.lambda;
            blk.x_hat = sel.x_hat;
        }
        let fit = vec::sub(&vec::add(&blocks[0].x, &blocks[1].x), &b.pixels);
        let obj = 0.5 * vec::dot(&fit, &fit)
            + mu1 * vec::norm_l1(&blocks[0].y)
            + mu2 * vec::norm_l1(&blocks[1].y);
        let violation = viol[0].hypot(viol[1]);
        let gap = gaps[0].hypot(gaps[1]);
        let ek_norm = ek[0].hypot(ek[1]);
        violations.push((viol[0], viol[1]));
        records.push(IterRecord {
            k,
            objective: obj,
            violation,
            lambda_gap: gap,
            ek_norm,
            y_change,
            inner: report,
            psnr: config.metric.as_ref().map(|m| m(&blocks[0].x)),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if violation <= config.tol_violation
            && gap <= config.tol_change
            && ek_norm <= config.tol_residual
        {
            termination = Termination::TolMet;
            break;
        }
    }
    let [bg, rain] = blocks;
    let mut final_x = bg.x.clone();
    final_x.extend_from_slice(&rain.x);
    let mut final_y = bg.y;
    final_y.extend_from_slice(&rain.y);
    let mut final_l = bg.lambda;
    final_l.extend_from_slice(&rain.lambda);
    Ok(RainSolution {
        background: b.with_pixels(bg.x)?,
        rain: b.with_pixels(rain.x)?,
        trace: SolveTrace {
            solver: "tpadmm-multiblock".into(),
            records,
            final_iterate: IterateW {
                x: final_x,
                y: final_y,
                lambda: final_l,
            },
            termination,
            inner_flagged: false,
        },
        violations,
    })
}
