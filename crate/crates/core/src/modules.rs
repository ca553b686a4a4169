//! Task modules: the candidate generators `Dᵏ` plugged into the inner loop.
//!
//! A module maps the current `xᵏ` to a proposal for the next subproblem
//! solution. Nothing is assumed about its quality; the error-control test in
//! the solver decides whether the proposal is used.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::linops::SpdSystem;
use crate::problem::{ProximalWeight, SeparableProblem};
use crate::subproblem::{InnerMethod, ProximalSubproblem, StopRule};
use crate::tpadmm::proximal_system;

/// Grid layout of an image-valued `x` (row-major, channel-interleaved).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }
}

/// What the solver knows about the current subproblem.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModuleContext<'a> {
    /// `sᵏ` of the proximal x-subproblem.
    pub s_k: Option<&'a [f64]>,
}

pub trait TaskModule: Send + Sync {
    fn label(&self) -> String;

    fn shape_hint(&self) -> Option<Shape> {
        None
    }

    /// Proposes a candidate from `x` at outer iteration `k`. Must be
    /// deterministic in `(k, x)` and preserve the length of `x`.
    fn apply(&self, k: usize, x: &[f64], ctx: &ModuleContext<'_>) -> Result<Vec<f64>>;
}

pub type SharedModule = Arc<dyn TaskModule>;

struct Identity;

impl TaskModule for Identity {
    fn label(&self) -> String {
        "identity".into()
    }

    fn apply(&self, _k: usize, x: &[f64], _ctx: &ModuleContext<'_>) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

pub fn make_identity_module() -> SharedModule {
    Arc::new(Identity)
}

struct ExactOracle {
    problem: SeparableProblem,
    system: SpdSystem,
    normal: Option<SpdSystem>,
}

impl TaskModule for ExactOracle {
    fn label(&self) -> String {
        "exact".into()
    }

    fn apply(&self, _k: usize, x: &[f64], ctx: &ModuleContext<'_>) -> Result<Vec<f64>> {
        let s = ctx
            .s_k
            .ok_or_else(|| Error::Module("exact oracle needs the subproblem context sᵏ".into()))?;
        check_len("exact oracle input", self.problem.n(), x.len())?;
        let sub = ProximalSubproblem::new(
            &self.problem.loss,
            &self.problem.q,
            &self.system,
            s,
            self.normal.as_ref(),
        )?;
        let stop = if self.normal.is_some() {
            StopRule::Gradient { tol: 1e-14 }
        } else {
            StopRule::Residual { target: 1e-11 }
        };
        Ok(sub.solve(x, stop, InnerMethod::NewtonCg)?.x)
    }
}

/// Returns the exact x-subproblem minimizer for the `sᵏ` the solver passes in.
pub fn make_exact_oracle_module(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
) -> Result<SharedModule> {
    let system = proximal_system(problem, weight, beta)?;
    let normal = match problem.loss.quadratic_target() {
        Some(_) => Some(system.with_added_gram(1.0, &problem.q)?),
        None => None,
    };
    Ok(Arc::new(ExactOracle {
        problem: problem.clone(),
        system,
        normal,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmoothingKind {
    /// Mean over a `(2r+1)²` window.
    Box { radius: usize },
    /// Normalized Gaussian truncated at `⌈3σ⌉`.
    Gaussian { sigma: f64 },
    /// Median over a `(2r+1)²` window.
    Median { radius: usize },
}

struct Smoothing {
    kind: SmoothingKind,
    shape: Shape,
    taps: Vec<f64>,
}

/// Normalized 1-D Gaussian taps on `[-⌈3σ⌉, ⌈3σ⌉]`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut t: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Half-sample symmetric extension: `x[-1] = x[0]`, `x[-2] = x[1]`, and so on.
/// Agrees with edge replication one pixel out; for a symmetric kernel it
/// keeps the filter matrix symmetric and doubly stochastic.
#[inline]
fn mirror_index(i: i64, n: usize) -> usize {
    let p = 2 * n as i64;
    let m = i.rem_euclid(p);
    (if m < n as i64 { m } else { p - 1 - m }) as usize
}

impl Smoothing {
    /// Separable correlation with mirrored boundary.
    fn separable(&self, x: &[f64]) -> Vec<f64> {
        let sh = self.shape;
        let r = (self.taps.len() / 2) as i64;
        let mut tmp = vec![0.0; x.len()];
        for row in 0..sh.height {
            for col in 0..sh.width {
                for ch in 0..sh.channels {
                    let mut acc = 0.0;
                    for (j, t) in self.taps.iter().enumerate() {
                        let c = mirror_index(col as i64 + j as i64 - r, sh.width);
                        acc += t * x[sh.index(row, c, ch)];
                    }
                    tmp[sh.index(row, col, ch)] = acc;
                }
            }
        }
        let mut out = vec![0.0; x.len()];
        for row in 0..sh.height {
            for col in 0..sh.width {
                for ch in 0..sh.channels {
                    let mut acc = 0.0;
                    for (i, t) in self.taps.iter().enumerate() {
                        let rr = mirror_index(row as i64 + i as i64 - r, sh.height);
                        acc += t * tmp[sh.index(rr, col, ch)];
                    }
                    out[sh.index(row, col, ch)] = acc;
                }
            }
        }
        out
    }

    fn median(&self, x: &[f64], radius: usize) -> Vec<f64> {
        let sh = self.shape;
        let r = radius as i64;
        let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
        let mut out = vec![0.0; x.len()];
        for row in 0..sh.height {
            for col in 0..sh.width {
                for ch in 0..sh.channels {
                    window.clear();
                    for dr in -r..=r {
                        for dc in -r..=r {
                            let rr = mirror_index(row as i64 + dr, sh.height);
                            let cc = mirror_index(col as i64 + dc, sh.width);
                            window.push(x[sh.index(rr, cc, ch)]);
                        }
                    }
                    window.sort_by(f64::total_cmp);
                    out[sh.index(row, col, ch)] = window[window.len() / 2];
                }
            }
        }
        out
    }
}

impl TaskModule for Smoothing {
    fn label(&self) -> String {
        match self.kind {
            SmoothingKind::Box { radius } => format!("box:{radius}"),
            SmoothingKind::Gaussian { sigma } => format!("gaussian:{sigma}"),
            SmoothingKind::Median { radius } => format!("median:{radius}"),
        }
    }

    fn shape_hint(&self) -> Option<Shape> {
        Some(self.shape)
    }

    fn apply(&self, _k: usize, x: &[f64], _ctx: &ModuleContext<'_>) -> Result<Vec<f64>> {
        check_len("smoothing module input", self.shape.len(), x.len())?;
        Ok(match self.kind {
            SmoothingKind::Median { radius } => self.median(x, radius),
            _ => self.separable(x),
        })
    }
}

/// Classical image filter acting on `x` reshaped to `shape`.
pub fn make_smoothing_module(kind: SmoothingKind, shape: Shape) -> Result<SharedModule> {
    if shape.is_empty() {
        return Err(Error::InvalidParameter("smoothing shape must be non-empty".into()));
    }
    let taps = match kind {
        SmoothingKind::Box { radius } => vec![1.0 / (2 * radius + 1) as f64; 2 * radius + 1],
        SmoothingKind::Gaussian { sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
            }
            gaussian_taps(sigma)
        }
        SmoothingKind::Median { .. } => Vec::new(),
    };
    Ok(Arc::new(Smoothing { kind, shape, taps }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdversarialMode {
    /// Ignores `x` and returns the constant vector.
    Constant(f64),
    /// `x + U(−scale, scale)` noise drawn from a stream seeded by `(seed, k)`.
    Noise { seed: u64, scale: f64 },
}

struct Adversarial(AdversarialMode);

impl TaskModule for Adversarial {
    fn label(&self) -> String {
        match self.0 {
            AdversarialMode::Constant(c) => format!("adversarial:constant:{c}"),
            AdversarialMode::Noise { seed, scale } => format!("adversarial:noise:{seed}:{scale}"),
        }
    }

    fn apply(&self, k: usize, x: &[f64], _ctx: &ModuleContext<'_>) -> Result<Vec<f64>> {
        Ok(match self.0 {
            AdversarialMode::Constant(c) => vec![c; x.len()],
            AdversarialMode::Noise { seed, scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                x.iter().map(|v| v + rng.gen_range(-scale..=scale)).collect()
            }
        })
    }
}

pub fn make_adversarial_module(mode: AdversarialMode) -> SharedModule {
    Arc::new(Adversarial(mode))
}

struct Schedule {
    stages: Vec<(usize, SharedModule)>,
}

impl TaskModule for Schedule {
    fn label(&self) -> String {
        let parts: Vec<String> = self
            .stages
            .iter()
            .map(|(k, m)| format!("{k}:{}", m.label()))
            .collect();
        format!("schedule[{}]", parts.join(","))
    }

    fn shape_hint(&self) -> Option<Shape> {
        self.stages.iter().find_map(|(_, m)| m.shape_hint())
    }

    fn apply(&self, k: usize, x: &[f64], ctx: &ModuleContext<'_>) -> Result<Vec<f64>> {
        let module = self
            .stages
            .iter()
            .rev()
            .find(|(start, _)| *start <= k)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Module(format!("no scheduled module for iteration {k}")))?;
        module.apply(k, x, ctx)
    }
}

/// Switches modules at given outer iterations: stage `(k₀, D)` is used for
/// `k ≥ k₀` until the next stage starts. The first stage must start at 0.
pub fn make_schedule_module(mut stages: Vec<(usize, SharedModule)>) -> Result<SharedModule> {
    stages.sort_by_key(|(k, _)| *k);
    if stages.first().map(|(k, _)| *k) != Some(0) {
        return Err(Error::InvalidParameter("schedule must start at iteration 0".into()));
    }
    Ok(Arc::new(Schedule { stages }))
}
