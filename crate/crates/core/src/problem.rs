//! The separable model `min l(Qx) + g(y)  s.t.  Ax + By = c`, its augmented
//! Lagrangian and the M-seminorm geometry used by every solver.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linops::{vec, LinearMap, Structure};

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type ProxFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Shape of a smooth loss, used to pick closed-form subproblem solves.
#[derive(Clone, Debug, PartialEq)]
pub enum LossKind {
    /// `½‖z − b‖²`
    Quadratic { target: Arc<[f64]> },
    General,
}

/// A strongly convex, L-smooth loss `l` on `ℝᵖ` with declared moduli.
#[derive(Clone)]
pub struct SmoothLoss {
    dim: usize,
    value: ValueFn,
    gradient: GradFn,
    alpha: f64,
    lipschitz: f64,
    kind: LossKind,
    label: String,
}

impl fmt::Debug for SmoothLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothLoss")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl SmoothLoss {
    pub fn new<V, G>(
        dim: usize,
        value: V,
        gradient: G,
        alpha: f64,
        lipschitz: f64,
        label: impl Into<String>,
    ) -> Result<Self>
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if !(alpha > 0.0) || !(lipschitz >= alpha) {
            return Err(Error::InvalidParameter(format!(
                "loss moduli need 0 < alpha <= L, got alpha={alpha}, L={lipschitz}"
            )));
        }
        Ok(Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            alpha,
            lipschitz,
            kind: LossKind::General,
            label: label.into(),
        })
    }

    /// `½‖z − b‖²` with `α = L = 1`.
    pub fn quadratic(target: Vec<f64>) -> Self {
        let b: Arc<[f64]> = target.into();
        let (bv, bg) = (b.clone(), b.clone());
        Self {
            dim: b.len(),
            value: Arc::new(move |z| 0.5 * vec::dist(z, &bv).powi(2)),
            gradient: Arc::new(move |z, g| {
                for ((gi, zi), bi) in g.iter_mut().zip(z).zip(bg.iter()) {
                    *gi = zi - bi;
                }
            }),
            alpha: 1.0,
            lipschitz: 1.0,
            kind: LossKind::Quadratic { target: b },
            label: "quadratic".into(),
        }
    }

    /// `½‖z − b‖² + Σ log cosh(zᵢ − bᵢ)`: Hessian eigenvalues lie in `[1, 2]`,
    /// so `α = 1`, `L = 2`. Exercises the non-quadratic subproblem paths.
    pub fn quadratic_logcosh(target: Vec<f64>) -> Self {
        let b: Arc<[f64]> = target.into();
        let (bv, bg) = (b.clone(), b.clone());
        Self {
            dim: b.len(),
            value: Arc::new(move |z| {
                z.iter()
                    .zip(bv.iter())
                    .map(|(zi, bi)| {
                        let r: f64 = zi - bi;
                        // log cosh r = |r| + log(1 + e^{-2|r|}) - log 2
                        0.5 * r * r + r.abs() + (-2.0 * r.abs()).exp().ln_1p()
                            - std::f64::consts::LN_2
                    })
                    .sum()
            }),
            gradient: Arc::new(move |z, g| {
                for ((gi, zi), bi) in g.iter_mut().zip(z).zip(bg.iter()) {
                    let r = zi - bi;
                    *gi = r + r.tanh();
                }
            }),
            alpha: 1.0,
            lipschitz: 2.0,
            kind: LossKind::General,
            label: "quadratic+logcosh".into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn quadratic_target(&self) -> Option<&[f64]> {
        match &self.kind {
            LossKind::Quadratic { target } => Some(target),
            LossKind::General => None,
        }
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        check_len("loss argument", self.dim, z.len())?;
        Ok((self.value)(z))
    }

    pub fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("loss argument", self.dim, z.len())?;
        let mut g = vec![0.0; self.dim];
        (self.gradient)(z, &mut g);
        Ok(g)
    }

    pub(crate) fn gradient_into(&self, z: &[f64], g: &mut [f64]) {
        (self.gradient)(z, g)
    }
}

/// Nonsmooth term `g`, represented by its value and proximal map.
#[derive(Clone)]
pub struct Regularizer {
    value: ValueFn,
    prox: ProxFn,
    label: String,
}

impl fmt::Debug for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Regularizer").field("label", &self.label).finish()
    }
}

impl Regularizer {
    /// `prox(v, θ)` must write `argmin_z g(z) + ‖z − v‖²/(2θ)`.
    pub fn new<V, P>(value: V, prox: P, label: impl Into<String>) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        P: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            prox: Arc::new(prox),
            label: label.into(),
        }
    }

    /// `μ‖·‖₁`, prox = soft thresholding at `μθ`.
    pub fn l1(mu: f64) -> Self {
        Self::new(
            move |y| mu * y.iter().map(|v| v.abs()).sum::<f64>(),
            move |v, theta, out| {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = crate::applications::soft_threshold_scalar(*vi, mu * theta);
                }
            },
            format!("{mu}·l1"),
        )
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |v, _, out| out.copy_from_slice(v), "0")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }

    pub fn prox(&self, v: &[f64], theta: f64) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        (self.prox)(v, theta, &mut out);
        out
    }
}

/// Primal-dual state `w = (x, y, λ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateW {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl IterateW {
    pub fn zeros(problem: &SeparableProblem) -> Self {
        Self {
            x: vec![0.0; problem.n()],
            y: vec![0.0; problem.m()],
            lambda: vec![0.0; problem.l()],
        }
    }

    pub fn difference(&self, other: &IterateW) -> IterateW {
        IterateW {
            x: vec::sub(&self.x, &other.x),
            y: vec::sub(&self.y, &other.y),
            lambda: vec::sub(&self.lambda, &other.lambda),
        }
    }

    pub fn check(&self, problem: &SeparableProblem) -> Result<()> {
        check_len("iterate x", problem.n(), self.x.len())?;
        check_len("iterate y", problem.m(), self.y.len())?;
        check_len("iterate lambda", problem.l(), self.lambda.len())
    }
}

/// The proximal weight of the x-subproblem: `½‖W(x − xᵏ)‖²`.
#[derive(Clone, Debug)]
pub enum ProximalWeight {
    Zero,
    /// The factor `W` itself.
    Factor(LinearMap),
    /// Only `W̄ = WᵀW` is known (a symmetric PSD operator).
    Gram(LinearMap),
}

impl ProximalWeight {
    /// `W = τ·I`, hence `W̄ = τ²·I`.
    pub fn scaled_identity(n: usize, tau: f64) -> Self {
        Self::Factor(LinearMap::scaled_identity(n, tau).with_tag(format!("{tau}I")))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::Factor(m) | Self::Gram(m) => matches!(m.structure(), Structure::Zero),
        }
    }

    /// `W̄ = WᵀW` as an operator on `ℝⁿ`, `None` for the zero weight.
    pub fn bar(&self) -> Option<LinearMap> {
        match self {
            Self::Zero => None,
            Self::Factor(w) => Some(w.gram()),
            Self::Gram(g) => Some(g.clone()),
        }
    }

    pub fn apply_bar(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.bar() {
            None => Ok(vec![0.0; x.len()]),
            Some(b) => b.apply(x),
        }
    }

    /// `‖W x‖² = xᵀW̄x`.
    pub fn seminorm_sq(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Factor(w) => Ok(vec::norm(&w.apply(x)?).powi(2)),
            Self::Gram(g) => Ok(vec::dot(x, &g.apply(x)?).max(0.0)),
        }
    }
}

/// A full instance of the linearly constrained separable model.
#[derive(Clone, Debug)]
pub struct SeparableProblem {
    pub loss: SmoothLoss,
    pub q: LinearMap,
    pub g: Regularizer,
    pub a: LinearMap,
    pub b: LinearMap,
    pub c: Vec<f64>,
}

impl SeparableProblem {
    pub fn new(
        loss: SmoothLoss,
        q: LinearMap,
        g: Regularizer,
        a: LinearMap,
        b: LinearMap,
        c: Vec<f64>,
    ) -> Result<Self> {
        check_len("Q range vs loss dimension", loss.dim(), q.range_dim())?;
        check_len("A domain vs Q domain", q.domain_dim(), a.domain_dim())?;
        check_len("B range vs A range", a.range_dim(), b.range_dim())?;
        check_len("c length vs A range", a.range_dim(), c.len())?;
        Ok(Self { loss, q, g, a, b, c })
    }

    pub fn n(&self) -> usize {
        self.q.domain_dim()
    }

    pub fn m(&self) -> usize {
        self.b.domain_dim()
    }

    pub fn l(&self) -> usize {
        self.a.range_dim()
    }

    pub fn p(&self) -> usize {
        self.q.range_dim()
    }

    /// `Ax + By − c`
    pub fn constraint_residual(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.a.apply(x)?;
        let by = self.b.apply(y)?;
        for ((ri, bi), ci) in r.iter_mut().zip(&by).zip(&self.c) {
            *ri += bi - ci;
        }
        Ok(r)
    }

    /// `Qᵀ∇l(Qx)`
    pub fn smooth_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let qx = self.q.apply(x)?;
        self.q.apply_adjoint(&self.loss.gradient(&qx)?)
    }

    /// `f(x) = l(Qx)`
    pub fn smooth_value(&self, x: &[f64]) -> Result<f64> {
        self.loss.value(&self.q.apply(x)?)
    }

    /// `y = argmin g(y) − λᵀBy + (β/2)‖Ax + By − c‖²`, available when `BᵀB = κI`.
    pub fn y_update(&self, x: &[f64], lambda: &[f64], beta: f64) -> Result<Vec<f64>> {
        let kappa = self.b.gram_scale().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "y-update needs BᵀB = κI; operator {} has no such structure",
                self.b.tag()
            ))
        })?;
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter("B must be nonzero".into()));
        }
        let ax = self.a.apply(x)?;
        check_len("lambda", self.l(), lambda.len())?;
        let v: Vec<f64> = ax
            .iter()
            .zip(&self.c)
            .zip(lambda)
            .map(|((axi, ci), li)| ci - axi + li / beta)
            .collect();
        let arg = vec::scaled(1.0 / kappa, &self.b.apply_adjoint(&v)?);
        Ok(self.g.prox(&arg, 1.0 / (beta * kappa)))
    }
}

/// `l(Qx) + g(y)`
pub fn objective(problem: &SeparableProblem, x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("objective y", problem.m(), y.len())?;
    Ok(problem.smooth_value(x)? + problem.g.value(y))
}

/// `‖Ax + By − c‖₂`
pub fn constraint_violation(problem: &SeparableProblem, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(vec::norm(&problem.constraint_residual(x, y)?))
}

/// `l(Qx) + g(y) − λᵀ(Ax + By − c) + (β/2)‖Ax + By − c‖²`
pub fn aug_lagrangian(problem: &SeparableProblem, beta: f64, w: &IterateW) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    w.check(problem)?;
    let r = problem.constraint_residual(&w.x, &w.y)?;
    Ok(objective(problem, &w.x, &w.y)? - vec::dot(&w.lambda, &r)
        + 0.5 * beta * vec::dot(&r, &r))
}

/// `‖w‖_M = √(‖Wx‖² + β‖By‖² + ‖λ‖²/β)`
pub fn m_norm(w: &IterateW, weight: &ProximalWeight, beta: f64, b: &LinearMap) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    check_len("m_norm lambda vs B range", b.range_dim(), w.lambda.len())?;
    let wx = weight.seminorm_sq(&w.x)?;
    let by = vec::norm(&b.apply(&w.y)?).powi(2);
    let l = vec::dot(&w.lambda, &w.lambda);
    Ok((wx + beta * by + l / beta).sqrt())
}

/// The three blocks of `F(w) = (Qᵀ∇l(Qx) − Aᵀλ, −Bᵀλ, Ax + By − c)`.
pub fn vi_operator_f(
    problem: &SeparableProblem,
    w: &IterateW,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    w.check(problem)?;
    let mut b1 = problem.smooth_gradient(&w.x)?;
    vec::axpy(-1.0, &problem.a.apply_adjoint(&w.lambda)?, &mut b1);
    let b2 = vec::scaled(-1.0, &problem.b.apply_adjoint(&w.lambda)?);
    let b3 = problem.constraint_residual(&w.x, &w.y)?;
    Ok((b1, b2, b3))
}
