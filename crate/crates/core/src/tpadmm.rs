//! Task-adaptive proximal ADMM.
//!
//! The x-step solves the proximal subproblem
//! `min l(Qx) + ½‖x − xᵏ‖²_W̄ + (β/2)‖Ax + Byᵏ − c − λᵏ/β‖²`
//! only approximately: a task module proposes a candidate and the candidate
//! is accepted when its fixed-point residual `e_k` has contracted by `η`
//! relative to the previous accepted point. Otherwise the proposal is blended
//! with a certified fallback until the test passes.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use crate::baseline::dual_shift;
use crate::error::{check_len, Error, Result};
use crate::linops::{
    cg_solve, min_eig_lower_bound, operator_norm_sq, vec, LinearMap, SpdSystem, SpdTerm,
};
use crate::modules::{ModuleContext, TaskModule};
use crate::problem::{m_norm, objective, IterateW, ProximalWeight, SeparableProblem};
use crate::subproblem::{InnerMethod, ProximalSubproblem, Residual, StopRule, CG_TOL_FLOOR};
use crate::trace::{AcceptedSource, InnerReport, IterRecord, Metric, SolveTrace, Termination};

/// Residuals below this are treated as zero by the acceptance test.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-12;
/// Upper cap on the relative CG tolerance of `F` and `e`.
pub const CG_TOL_CAP: f64 = 1e-10;
/// `x̃` is solved to this fraction of the acceptance threshold.
const FALLBACK_MARGIN: f64 = 0.5;
/// Slack allowed by [`prop1_check`] for rounding.
pub const PROP1_SLACK: f64 = 1e-9;

/// How `‖N‖₂` is obtained for the admissible-η bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormMode {
    /// `‖N‖₂ ≤ ‖Q‖₂ / √λ_min(W̄ + βAᵀA)`.
    #[default]
    Bound,
    /// Power iteration on the composite `N`.
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaChoice {
    /// `0.9 · η_max`
    Auto,
    Value(f64),
}

#[derive(Clone)]
pub struct TpadmmConfig {
    pub beta: f64,
    /// `None` means `W = √2·I`.
    pub weight: Option<ProximalWeight>,
    pub eta: EtaChoice,
    pub norm_mode: NormMode,
    pub zeta0: f64,
    pub c: f64,
    pub t_max: usize,
    /// Accepted for completeness; the algorithm never reads it.
    pub xi0: f64,
    pub max_outer: usize,
    pub tol_violation: f64,
    pub tol_change: f64,
    /// Stopping also waits for `‖e_k(x̂ᵏ⁺¹)‖` to drop below this.
    pub tol_residual: f64,
    pub abs_floor: f64,
    pub fallback: InnerMethod,
    pub metric: Option<Metric>,
}

impl fmt::Debug for TpadmmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TpadmmConfig")
            .field("beta", &self.beta)
            .field("weight", &self.weight)
            .field("eta", &self.eta)
            .field("norm_mode", &self.norm_mode)
            .field("zeta0", &self.zeta0)
            .field("c", &self.c)
            .field("t_max", &self.t_max)
            .field("max_outer", &self.max_outer)
            .field("tol_violation", &self.tol_violation)
            .field("tol_change", &self.tol_change)
            .field("tol_residual", &self.tol_residual)
            .field("abs_floor", &self.abs_floor)
            .field("fallback", &self.fallback)
            .finish()
    }
}

impl Default for TpadmmConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            weight: None,
            eta: EtaChoice::Auto,
            norm_mode: NormMode::Bound,
            zeta0: 1.0,
            c: 0.1,
            t_max: 20,
            xi0: 0.0,
            max_outer: 2000,
            tol_violation: 1e-9,
            tol_change: 1e-9,
            tol_residual: 1e-7,
            abs_floor: DEFAULT_ABS_FLOOR,
            fallback: InnerMethod::NewtonCg,
            metric: None,
        }
    }
}

impl TpadmmConfig {
    pub fn resolved_weight(&self, n: usize) -> ProximalWeight {
        self.weight
            .clone()
            .unwrap_or_else(|| ProximalWeight::scaled_identity(n, std::f64::consts::SQRT_2))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.zeta0) {
            return bad(format!("zeta0 must lie in [0, 1], got {}", self.zeta0));
        }
        if !(self.c > 0.0 && self.c <= 0.5) {
            return bad(format!("C must lie in (0, 0.5], got {}", self.c));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive".into());
        }
        if !(self.abs_floor > 0.0) {
            return bad(format!("abs_floor must be > 0, got {}", self.abs_floor));
        }
        if self.xi0 < 0.0 {
            return bad(format!("xi0 must be >= 0, got {}", self.xi0));
        }
        if let EtaChoice::Value(e) = self.eta {
            if !(e > 0.0 && e < 1.0) {
                return bad(format!("eta must lie in (0, 1), got {e}"));
            }
        }
        Ok(())
    }
}

/// `η`, its admissible bound and the residual history of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorController {
    pub eta: f64,
    pub eta_max: f64,
    /// `L · ‖N‖₂`
    pub gamma: f64,
    pub n_norm: f64,
    pub residual_history: Vec<f64>,
    pub abs_floor: f64,
}

impl ErrorController {
    pub fn new(
        problem: &SeparableProblem,
        weight: &ProximalWeight,
        beta: f64,
        eta: EtaChoice,
        mode: NormMode,
        abs_floor: f64,
    ) -> Result<Self> {
        let n_norm = n_norm_estimate(problem, weight, beta, mode)?;
        Self::from_n_norm(problem.loss.alpha(), problem.loss.lipschitz(), n_norm, eta, abs_floor)
    }

    pub fn from_n_norm(
        alpha: f64,
        lipschitz: f64,
        n_norm: f64,
        eta: EtaChoice,
        abs_floor: f64,
    ) -> Result<Self> {
        let eta_max = eta_from_n_norm(alpha, lipschitz, n_norm);
        let eta = match eta {
            EtaChoice::Auto => 0.9 * eta_max,
            EtaChoice::Value(e) => {
                if !(e > 0.0 && e < eta_max) {
                    return Err(Error::InvalidParameter(format!(
                        "eta = {e} is not admissible: need 0 < eta < eta_max = {eta_max:.6} \
                         (√(2α)/(√(2α) + L‖N‖₂) with α = {alpha}, L = {lipschitz}, ‖N‖₂ = {n_norm:.6})"
                    )));
                }
                e
            }
        };
        Ok(Self {
            eta,
            eta_max,
            gamma: lipschitz * n_norm,
            n_norm,
            residual_history: Vec::new(),
            abs_floor,
        })
    }

    /// Acceptance test `‖e(x̂ᵏ⁺¹)‖ ≤ η‖e(x̂ᵏ)‖`.
    pub fn admits(&self, candidate: f64, reference: f64) -> bool {
        candidate <= self.eta * reference
    }
}

/// `√(2α) / (√(2α) + L‖N‖₂)`
pub fn eta_from_n_norm(alpha: f64, lipschitz: f64, n_norm: f64) -> f64 {
    let r = (2.0 * alpha).sqrt();
    r / (r + lipschitz * n_norm)
}

/// `W̄ + βAᵀA`, rejected when singular.
pub fn proximal_system(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
) -> Result<SpdSystem> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let n = problem.n();
    let mut terms = Vec::new();
    match weight {
        ProximalWeight::Zero => {}
        ProximalWeight::Factor(w) => {
            check_len("weight W domain", n, w.domain_dim())?;
            terms.push(SpdTerm::Gram(1.0, w.clone()));
        }
        ProximalWeight::Gram(g) => {
            check_len("weight W̄ domain", n, g.domain_dim())?;
            terms.push(SpdTerm::Psd(g.clone()));
        }
    }
    terms.push(SpdTerm::Gram(beta, problem.a.clone()));
    let singular = |detail: String| {
        Error::NotPositiveDefinite(format!(
            "W̄ + βAᵀA is singular ({detail}); use a nonzero proximal weight W"
        ))
    };
    let system = SpdSystem::compose(n, terms).map_err(|e| singular(e.to_string()))?;
    if system.identity_shift() <= 0.0 {
        let lb = min_eig_lower_bound(&system).map_err(|e| singular(e.to_string()))?;
        if !(lb > 1e-12) {
            return Err(singular(format!("λ_min bound {lb:.3e}")));
        }
    }
    Ok(system)
}

/// `sᵏ = βAᵀ(−Byᵏ + c + λᵏ/β) + W̄xᵏ`
pub fn compute_sk(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    y_k: &[f64],
    lambda_k: &[f64],
    x_k: &[f64],
) -> Result<Vec<f64>> {
    check_len("sᵏ y", problem.m(), y_k.len())?;
    check_len("sᵏ λ", problem.l(), lambda_k.len())?;
    check_len("sᵏ x", problem.n(), x_k.len())?;
    let mut s = dual_shift(problem, beta, y_k, lambda_k)?;
    if !weight.is_zero() {
        vec::axpy(1.0, &weight.apply_bar(x_k)?, &mut s);
    }
    Ok(s)
}

pub(crate) fn normal_system(problem: &SeparableProblem, system: &SpdSystem) -> Result<Option<SpdSystem>> {
    match problem.loss.quadratic_target() {
        Some(_) => Ok(Some(system.with_added_gram(1.0, &problem.q)?)),
        None => Ok(None),
    }
}

/// `Fᵏ(x̂) = (W̄ + βAᵀA)⁻¹(sᵏ − Qᵀ∇l(Qx̂))`
pub fn fk_apply(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    s_k: &[f64],
    x_hat: &[f64],
) -> Result<Vec<f64>> {
    let system = proximal_system(problem, weight, beta)?;
    let sub = ProximalSubproblem::new(&problem.loss, &problem.q, &system, s_k, None)?;
    sub.fk_apply(x_hat, CG_TOL_FLOOR * 100.0)
}

/// `e_k(x) = ∇l(Q Fᵏ(x)) − ∇l(Qx)`
pub fn ek_residual(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    s_k: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    let system = proximal_system(problem, weight, beta)?;
    let sub = ProximalSubproblem::new(&problem.loss, &problem.q, &system, s_k, None)?;
    Ok(sub.residual(x, CG_TOL_FLOOR * 100.0)?.e)
}

fn q_norm(q: &LinearMap) -> Result<f64> {
    match q.norm_hint() {
        Some(v) => Ok(v),
        None => {
            let est = operator_norm_sq(q, 1e-10, 20_000)?;
            if !est.converged {
                return Err(Error::Unconverged {
                    what: "power iteration for ‖Q‖₂",
                    iterations: est.iterations,
                    residual: est.value,
                });
            }
            // Power iteration approaches from below.
            Ok(est.value.sqrt() * (1.0 + 1e-6))
        }
    }
}

/// `N = Q(W̄ + βAᵀA)⁻¹[Wᵀ √βAᵀ]` as a matrix-free map. For a `Gram` weight
/// the factor is unknown and `NNᵀ = Q(W̄ + βAᵀA)⁻¹Qᵀ` is returned instead.
fn n_operator(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    system: &SpdSystem,
) -> Result<(LinearMap, bool)> {
    let l = problem.l();
    let q = problem.q.clone();
    let a = problem.a.clone();
    let sb = beta.sqrt();
    let sys = system.clone();
    let inv = move |rhs: &[f64]| -> Vec<f64> {
        match cg_solve(&sys, rhs, 1e-13, 20 * rhs.len() + 200) {
            Ok(out) => out.solution,
            Err(_) => vec![f64::NAN; rhs.len()],
        }
    };
    let inv = Arc::new(inv);
    let p = q.range_dim();
    match weight {
        ProximalWeight::Gram(_) => {
            let (q1, q2, i1, i2) = (q.clone(), q, inv.clone(), inv);
            let fwd = move |v: &[f64], out: &mut [f64]| {
                let z = q1.apply_adjoint(v).expect("dimension checked");
                q1.apply_into(&i1(&z), out);
            };
            let adj = move |v: &[f64], out: &mut [f64]| {
                let z = q2.apply_adjoint(v).expect("dimension checked");
                q2.apply_into(&i2(&z), out);
            };
            Ok((LinearMap::new(p, p, fwd, adj, "NNᵀ")?, true))
        }
        ProximalWeight::Zero | ProximalWeight::Factor(_) => {
            let w = match weight {
                ProximalWeight::Factor(w) => Some(w.clone()),
                _ => None,
            };
            let wr = w.as_ref().map(|w| w.range_dim()).unwrap_or(0);
            let (qf, af, wf, invf) = (q.clone(), a.clone(), w.clone(), inv.clone());
            let fwd = move |u: &[f64], out: &mut [f64]| {
                let mut z = af.apply_adjoint(&u[wr..]).expect("dimension checked");
                z.iter_mut().for_each(|v| *v *= sb);
                if let Some(w) = &wf {
                    vec::axpy(1.0, &w.apply_adjoint(&u[..wr]).expect("dimension checked"), &mut z);
                }
                qf.apply_into(&invf(&z), out);
            };
            let adj = move |v: &[f64], out: &mut [f64]| {
                let z = q.apply_adjoint(v).expect("dimension checked");
                let x = inv(&z);
                if let Some(w) = &w {
                    w.apply_into(&x, &mut out[..wr]);
                }
                a.apply_into(&x, &mut out[wr..]);
                out[wr..].iter_mut().for_each(|v| *v *= sb);
            };
            Ok((LinearMap::new(wr + l, p, fwd, adj, "N")?, false))
        }
    }
}

/// `‖N‖₂` by the configured route.
pub fn n_norm_estimate(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    mode: NormMode,
) -> Result<f64> {
    let system = proximal_system(problem, weight, beta)?;
    let bound = || -> Result<f64> {
        let lmin = min_eig_lower_bound(&system)?;
        Ok(q_norm(&problem.q)? / lmin.sqrt())
    };
    match mode {
        NormMode::Bound => bound(),
        NormMode::Power => {
            let (map, squared) = n_operator(problem, weight, beta, &system)?;
            let est = operator_norm_sq(&map, 1e-10, 5000)?;
            let ok = est.converged && est.value.is_finite();
            if ok {
                // ‖N‖² is the top eigenvalue of NNᵀ; the power route on the
                // symmetric NNᵀ squares once more.
                let n2 = if squared { est.value.sqrt() } else { est.value };
                Ok(n2.sqrt())
            } else {
                bound().map_err(|_| Error::Unconverged {
                    what: "power iteration for ‖N‖₂ (λ_min bound unavailable)",
                    iterations: est.iterations,
                    residual: est.value,
                })
            }
        }
    }
}

/// The admissible upper bound on `η`.
pub fn eta_upper_bound(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    mode: NormMode,
) -> Result<f64> {
    let nn = n_norm_estimate(problem, weight, beta, mode)?;
    Ok(eta_from_n_norm(problem.loss.alpha(), problem.loss.lipschitz(), nn))
}

/// Solves the subproblem to `‖e(x̃)‖ ≤ target_residual`, starting at zero.
pub fn fallback_solve(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    s_k: &[f64],
    target_residual: f64,
) -> Result<Vec<f64>> {
    let system = proximal_system(problem, weight, beta)?;
    let normal = normal_system(problem, &system)?;
    let sub = ProximalSubproblem::new(&problem.loss, &problem.q, &system, s_k, normal.as_ref())?;
    Ok(fallback_from(&sub, &vec![0.0; problem.n()], target_residual, InnerMethod::NewtonCg)?.0)
}

fn fallback_from(
    sub: &ProximalSubproblem<'_>,
    x0: &[f64],
    target: f64,
    method: InnerMethod,
) -> Result<(Vec<f64>, Residual)> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fallback target must be > 0, got {target}"
        )));
    }
    let target = target.min(f64::MAX);
    let sol = sub.solve(x0, StopRule::Residual { target }, method)?;
    let res = match sol.residual {
        Some(r) => r,
        None => sub.residual(&sol.x, sub.cg_tol_for(0.01 * target, CG_TOL_CAP))?,
    };
    Ok((sol.x, res))
}

/// Solver-internal state shared across outer iterations.
pub(crate) struct Inner<'a> {
    pub(crate) sub: ProximalSubproblem<'a>,
    pub(crate) module: &'a dyn TaskModule,
    pub(crate) fallback: InnerMethod,
    pub(crate) zeta0: f64,
    pub(crate) c: f64,
    pub(crate) t_max: usize,
}

pub(crate) struct Selected {
    pub(crate) x_hat: Vec<f64>,
    pub(crate) report: InnerReport,
    /// `F(x̂ᵏ⁺¹)` from the residual evaluation.
    fx: Vec<f64>,
    cg_tol: f64,
}

fn select(
    inner: &Inner<'_>,
    k: usize,
    x_k: &[f64],
    x_hat_prev: &[f64],
    controller: &ErrorController,
) -> Result<Selected> {
    let sub = &inner.sub;
    let eta = controller.eta;
    let mut prev = sub.residual(x_hat_prev, CG_TOL_CAP)?;
    let mut cg_tol = sub.cg_tol_for(0.01 * eta * prev.norm, CG_TOL_CAP);
    if cg_tol < CG_TOL_CAP {
        prev = sub.residual(x_hat_prev, cg_tol)?;
        cg_tol = sub.cg_tol_for(0.01 * eta * prev.norm, CG_TOL_CAP);
    }
    let r_prev = prev.norm;

    if r_prev < controller.abs_floor {
        let (x, res) = fallback_from(sub, x_hat_prev, controller.abs_floor, inner.fallback)?;
        return Ok(Selected {
            x_hat: x,
            report: InnerReport {
                accepted_source: AcceptedSource::Degenerate,
                t_used: 0,
                residual_before: r_prev,
                residual_after: res.norm,
            },
            fx: res.fx,
            cg_tol: sub.cg_tol_for(0.01 * controller.abs_floor, CG_TOL_CAP),
        });
    }

    let ctx = ModuleContext { s_k: Some(sub.s) };
    let proposal = inner.module.apply(k, x_k, &ctx)?;
    if proposal.len() != x_k.len() || proposal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Module(format!(
            "module {} returned {} values (expected {}) or non-finite entries",
            inner.module.label(),
            proposal.len(),
            x_k.len()
        )));
    }
    let res_check = sub.residual(&proposal, cg_tol)?;
    if controller.admits(res_check.norm, r_prev) {
        return Ok(Selected {
            x_hat: proposal,
            report: InnerReport {
                accepted_source: AcceptedSource::Module,
                t_used: 0,
                residual_before: r_prev,
                residual_after: res_check.norm,
            },
            fx: res_check.fx,
            cg_tol,
        });
    }
    let affine = sub.loss.quadratic_target().is_some();

    let (x_tilde, tilde_res) = fallback_from(sub, x_k, FALLBACK_MARGIN * eta * r_prev, inner.fallback)?;
    if !controller.admits(tilde_res.norm, r_prev) {
        return Err(Error::Unconverged {
            what: "fallback solve missed the acceptance threshold",
            iterations: 0,
            residual: tilde_res.norm,
        });
    }
    let mut zeta = inner.zeta0;
    for t in 1..=inner.t_max {
        zeta *= inner.c;
        let cand: Vec<f64> = x_tilde
            .iter()
            .zip(&proposal)
            .map(|(a, b)| (1.0 - zeta) * a + zeta * b)
            .collect();
        let res = if affine {
            // e and F are affine for a quadratic loss.
            let e: Vec<f64> = tilde_res
                .e
                .iter()
                .zip(&res_check.e)
                .map(|(a, b)| (1.0 - zeta) * a + zeta * b)
                .collect();
            let fx = tilde_res
                .fx
                .iter()
                .zip(&res_check.fx)
                .map(|(a, b)| (1.0 - zeta) * a + zeta * b)
                .collect();
            let norm = vec::norm(&e);
            Residual { e, fx, norm }
        } else {
            sub.residual(&cand, cg_tol)?
        };
        if controller.admits(res.norm, r_prev) {
            return Ok(Selected {
                x_hat: cand,
                report: InnerReport {
                    accepted_source: AcceptedSource::Blend(t),
                    t_used: t,
                    residual_before: r_prev,
                    residual_after: res.norm,
                },
                fx: res.fx,
                cg_tol,
            });
        }
    }
    Ok(Selected {
        x_hat: x_tilde,
        report: InnerReport {
            accepted_source: AcceptedSource::FallbackForced,
            t_used: inner.t_max + 1,
            residual_before: r_prev,
            residual_after: tilde_res.norm,
        },
        fx: tilde_res.fx,
        cg_tol,
    })
}

/// Inner selection followed by `xᵏ⁺¹ = Fᵏ(x̂ᵏ⁺¹)`, tightened from the cached value.
pub(crate) fn select_and_step(
    inner: &Inner<'_>,
    k: usize,
    x_k: &[f64],
    x_hat_prev: &[f64],
    controller: &ErrorController,
) -> Result<(Selected, Vec<f64>)> {
    let mut sel = select(inner, k, x_k, x_hat_prev, controller)?;
    let x_next = if sel.cg_tol > 1e-12 {
        match inner.sub.fk_apply(&sel.x_hat, 1e-12) {
            Ok(x) => x,
            Err(Error::Unconverged { .. }) => std::mem::take(&mut sel.fx),
            Err(e) => return Err(e),
        }
    } else {
        std::mem::take(&mut sel.fx)
    };
    Ok((sel, x_next))
}

/// One pass of the inner acceptance loop for subproblem `sᵏ`.
#[allow(clippy::too_many_arguments)]
pub fn inner_select(
    problem: &SeparableProblem,
    weight: &ProximalWeight,
    beta: f64,
    s_k: &[f64],
    x_k: &[f64],
    x_hat_prev: &[f64],
    module: &dyn TaskModule,
    controller: &ErrorController,
    config: &TpadmmConfig,
) -> Result<(Vec<f64>, InnerReport)> {
    config.validate()?;
    check_len("inner_select x̂ᵏ", problem.n(), x_hat_prev.len())?;
    let system = proximal_system(problem, weight, beta)?;
    let normal = normal_system(problem, &system)?;
    let inner = Inner {
        sub: ProximalSubproblem::new(&problem.loss, &problem.q, &system, s_k, normal.as_ref())?,
        module,
        fallback: config.fallback,
        zeta0: config.zeta0,
        c: config.c,
        t_max: config.t_max,
    };
    let sel = select(&inner, 0, x_k, x_hat_prev, controller)?;
    Ok((sel.x_hat, sel.report))
}

/// Runs the task-adaptive scheme from `init` (with `x̂⁰ = x⁰`).
pub fn tpadmm_solve(
    problem: &SeparableProblem,
    config: &TpadmmConfig,
    module: &dyn TaskModule,
    init: &IterateW,
) -> Result<TpadmmRun> {
    config.validate()?;
    init.check(problem)?;
    let beta = config.beta;
    let weight = config.resolved_weight(problem.n());
    let mut controller = ErrorController::new(
        problem,
        &weight,
        beta,
        config.eta,
        config.norm_mode,
        config.abs_floor,
    )?;
    let system = proximal_system(problem, &weight, beta)?;
    let normal = normal_system(problem, &system)?;

    let mut w = init.clone();
    let mut x_hat = init.x.clone();
    let mut records = Vec::with_capacity(config.max_outer.min(4096));
    let mut termination = Termination::MaxIter;
    let start = Instant::now();

    for k in 0..config.max_outer {
        let s = compute_sk(problem, &weight, beta, &w.y, &w.lambda, &w.x)?;
        let inner = Inner {
            sub: ProximalSubproblem::new(&problem.loss, &problem.q, &system, &s, normal.as_ref())?,
            module,
            fallback: config.fallback,
            zeta0: config.zeta0,
            c: config.c,
            t_max: config.t_max,
        };
        let (sel, x_next) = select_and_step(&inner, k, &w.x, &x_hat, &controller)?;
        let y_next = problem.y_update(&x_next, &w.lambda, beta)?;
        let r = problem.constraint_residual(&x_next, &y_next)?;
        let mut lambda_next = w.lambda.clone();
        vec::axpy(-beta, &r, &mut lambda_next);
        let next = IterateW {
            x: x_next,
            y: y_next,
            lambda: lambda_next,
        };
        let diff = w.difference(&next);
        let gap = m_norm(&diff, &weight, beta, &problem.b)?;
        let violation = vec::norm(&r);
        let ek = sel.report.residual_after;
        controller.residual_history.push(ek);
        records.push(IterRecord {
            k,
            objective: objective(problem, &next.x, &next.y)?,
            violation,
            lambda_gap: gap,
            ek_norm: ek,
            y_change: vec::norm(&problem.b.apply(&diff.y)?),
            inner: Some(sel.report),
            psnr: config.metric.as_ref().map(|m| m(&next.x)),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        w = next;
        x_hat = sel.x_hat;
        if violation <= config.tol_violation && gap <= config.tol_change && ek <= config.tol_residual
        {
            termination = Termination::TolMet;
            break;
        }
    }
    Ok(TpadmmRun {
        trace: SolveTrace {
            solver: "tpadmm".into(),
            records,
            final_iterate: w,
            termination,
            inner_flagged: false,
        },
        controller,
        x_hat,
    })
}

/// Output of [`tpadmm_solve`].
#[derive(Clone, Debug)]
pub struct TpadmmRun {
    pub trace: SolveTrace,
    pub controller: ErrorController,
    /// The last accepted inner point `x̂ᴷ`.
    pub x_hat: Vec<f64>,
}

/// Checks `‖e_k(x̂ᵏ⁺¹)‖ ≤ η‖e_{k−1}(x̂ᵏ)‖ + ηγΛ^{k−1,k}` for every `k ≥ 1`.
pub fn prop1_check(trace: &SolveTrace, controller: &ErrorController) -> Result<bool> {
    if trace.records.iter().any(|r| r.inner.is_none()) {
        return Err(Error::InvalidParameter(
            "trace has no inner-loop records; prop1_check needs a task-adaptive run".into(),
        ));
    }
    if controller.residual_history.len() != trace.records.len() {
        return Err(Error::InvalidParameter(format!(
            "residual history has {} entries for {} records",
            controller.residual_history.len(),
            trace.records.len()
        )));
    }
    let eta = controller.eta;
    let h = &controller.residual_history;
    Ok(trace.records.windows(2).enumerate().all(|(i, pair)| {
        let rhs = eta * h[i] + eta * controller.gamma * pair[0].lambda_gap;
        h[i + 1] <= rhs + PROP1_SLACK
    }))
}

/// One point of the non-ergodic rate certificates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePoint {
    pub k: usize,
    /// `K · min_{k≤K} Λ²`
    pub gap_cert: f64,
    /// `K · min_{k≤K} ‖e_k‖²`
    pub residual_cert: f64,
}

pub fn rate_series(trace: &SolveTrace) -> Vec<RatePoint> {
    let mut min_gap = f64::INFINITY;
    let mut min_e = f64::INFINITY;
    trace
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let k = i + 1;
            min_gap = min_gap.min(r.lambda_gap * r.lambda_gap);
            min_e = min_e.min(r.ek_norm * r.ek_norm);
            RatePoint {
                k,
                gap_cert: k as f64 * min_gap,
                residual_cert: k as f64 * min_e,
            }
        })
        .collect()
}

/// `λ̄ᵏ = λᵏ − β(Axᵏ⁺¹ + Byᵏ − c)`
pub fn lambda_bar(
    problem: &SeparableProblem,
    beta: f64,
    x_next: &[f64],
    y_k: &[f64],
    lambda_k: &[f64],
) -> Result<Vec<f64>> {
    check_len("λ̄ λᵏ", problem.l(), lambda_k.len())?;
    let r = problem.constraint_residual(x_next, y_k)?;
    let mut out = lambda_k.to_vec();
    vec::axpy(-beta, &r, &mut out);
    Ok(out)
}
