//! Reference ADMM schemes: exact, linearized and proximal x-steps.
//!
//! All three share the y-prox and the dual ascent
//! `λᵏ⁺¹ = λᵏ − β(Axᵏ⁺¹ + Byᵏ⁺¹ − c)` and stop once both the constraint
//! violation and the M-norm step `‖wᵏ − wᵏ⁺¹‖_M` fall below their tolerances.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linops::{operator_norm_sq, vec, LinearMap, SpdSystem, SpdTerm};
use crate::problem::{m_norm, objective, IterateW, ProximalWeight, SeparableProblem};
use crate::subproblem::{InnerMethod, ProximalSubproblem, StopRule};
use crate::trace::{IterRecord, Metric, SolveTrace, Termination};

/// How the x-subproblem is solved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum XInner {
    /// Dense elimination on the materialized normal system (quadratic loss,
    /// at most 1024 unknowns).
    DirectSmall,
    /// CG (quadratic loss) or the configured inner method, to relative `tol`.
    Cg { tol: f64 },
}

#[derive(Clone)]
pub struct BaselineConfig {
    pub beta: f64,
    /// Proximal (`G = τI`) or linearization (`G = τβI − βAᵀA`) parameter.
    pub tau: f64,
    pub max_outer: usize,
    pub tol_violation: f64,
    pub tol_change: f64,
    pub x_inner: XInner,
    pub inner_method: InnerMethod,
    pub metric: Option<Metric>,
}

impl fmt::Debug for BaselineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BaselineConfig")
            .field("beta", &self.beta)
            .field("tau", &self.tau)
            .field("max_outer", &self.max_outer)
            .field("tol_violation", &self.tol_violation)
            .field("tol_change", &self.tol_change)
            .field("x_inner", &self.x_inner)
            .finish()
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            tau: 1.0,
            max_outer: 2000,
            tol_violation: 1e-9,
            tol_change: 1e-9,
            x_inner: XInner::Cg { tol: 1e-12 },
            inner_method: InnerMethod::NewtonCg,
            metric: None,
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidParameter("max_outer must be positive".into()));
        }
        if let XInner::Cg { tol } = self.x_inner {
            if !(tol > 0.0) {
                return Err(Error::InvalidParameter("x_inner tolerance must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Variant {
    Exact,
    Linearized,
    Proximal,
}

impl Variant {
    fn name(&self) -> &'static str {
        match self {
            Self::Exact => "admm",
            Self::Linearized => "ladmm",
            Self::Proximal => "padmm",
        }
    }
}

/// Classical ADMM with the x-subproblem solved to `x_inner` accuracy.
pub fn admm_solve(
    problem: &SeparableProblem,
    config: &BaselineConfig,
    init: &IterateW,
) -> Result<SolveTrace> {
    run(problem, config, init, Variant::Exact)
}

/// Linearized ADMM (`G = τβI − βAᵀA`); requires `τ ≥ ‖A‖₂²`.
pub fn ladmm_solve(
    problem: &SeparableProblem,
    config: &BaselineConfig,
    init: &IterateW,
) -> Result<SolveTrace> {
    run(problem, config, init, Variant::Linearized)
}

/// Proximal ADMM (`G = τI`, `τ > 0`).
pub fn proximal_admm_solve(
    problem: &SeparableProblem,
    config: &BaselineConfig,
    init: &IterateW,
) -> Result<SolveTrace> {
    run(problem, config, init, Variant::Proximal)
}

/// `‖A‖₂²`, exact from structure when available.
pub fn operator_norm_sq_of(a: &LinearMap) -> Result<f64> {
    match a.norm_hint() {
        Some(v) => Ok(v * v),
        None => {
            let est = operator_norm_sq(a, 1e-12, 20_000)?;
            Ok(est.value)
        }
    }
}

/// `s₀ = βAᵀ(−Byᵏ + c + λᵏ/β)`
pub(crate) fn dual_shift(
    problem: &SeparableProblem,
    beta: f64,
    y: &[f64],
    lambda: &[f64],
) -> Result<Vec<f64>> {
    let by = problem.b.apply(y)?;
    let v: Vec<f64> = by
        .iter()
        .zip(&problem.c)
        .zip(lambda)
        .map(|((byi, ci), li)| beta * (ci - byi) + li)
        .collect();
    problem.a.apply_adjoint(&v)
}

fn run(
    problem: &SeparableProblem,
    config: &BaselineConfig,
    init: &IterateW,
    variant: Variant,
) -> Result<SolveTrace> {
    config.validate()?;
    init.check(problem)?;
    let beta = config.beta;
    let tau = config.tau;
    let n = problem.n();

    let (system, weight) = match variant {
        Variant::Exact => (
            SpdSystem::compose(n, vec![SpdTerm::Gram(beta, problem.a.clone())]),
            ProximalWeight::Zero,
        ),
        Variant::Proximal => {
            if !(tau > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "proximal ADMM needs tau > 0, got {tau}"
                )));
            }
            (
                SpdSystem::compose(
                    n,
                    vec![SpdTerm::Identity(tau), SpdTerm::Gram(beta, problem.a.clone())],
                ),
                ProximalWeight::scaled_identity(n, tau.sqrt()),
            )
        }
        Variant::Linearized => {
            let bound = operator_norm_sq_of(&problem.a)?;
            if tau < bound * (1.0 - 1e-9) {
                return Err(Error::InvalidParameter(format!(
                    "linearized ADMM needs tau >= ‖A‖₂² = {bound:.6e}, got {tau}"
                )));
            }
            let g = LinearMap::sum(&[
                &LinearMap::scaled_identity(n, tau * beta),
                &problem.a.gram().scaled(-beta),
            ])?
            .with_tag("τβI − βAᵀA");
            (
                SpdSystem::compose(n, vec![SpdTerm::Identity(tau * beta)]),
                ProximalWeight::Gram(g),
            )
        }
    };
    let system = system?;
    let normal = match problem.loss.quadratic_target() {
        Some(_) => Some(system.with_added_gram(1.0, &problem.q)?),
        None => None,
    };
    let dense_normal = match (config.x_inner, &normal) {
        (XInner::DirectSmall, Some(ns)) => Some(ns.operator().materialize()?),
        _ => None,
    };

    let mut w = init.clone();
    let mut records = Vec::with_capacity(config.max_outer.min(4096));
    let mut inner_flagged = false;
    let start = Instant::now();
    let mut termination = Termination::MaxIter;

    for k in 0..config.max_outer {
        // s = s₀ + G xᵏ
        let mut s = dual_shift(problem, beta, &w.y, &w.lambda)?;
        match variant {
            Variant::Exact => {}
            Variant::Proximal => vec::axpy(tau, &w.x, &mut s),
            Variant::Linearized => {
                let gx = weight.apply_bar(&w.x)?;
                vec::axpy(1.0, &gx, &mut s);
            }
        }

        let (x_next, x_residual) = match (&dense_normal, problem.loss.quadratic_target()) {
            (Some(dense), Some(b)) => {
                let mut rhs = problem.q.apply_adjoint(b)?;
                vec::axpy(1.0, &s, &mut rhs);
                let x = dense.solve(&rhs)?;
                let ns = normal.as_ref().expect("quadratic loss has a normal system");
                let r = vec::dist(&ns.apply(&x)?, &rhs);
                (x, r)
            }
            _ => {
                let tol = match config.x_inner {
                    XInner::Cg { tol } => tol,
                    XInner::DirectSmall => 1e-12,
                };
                let sub = ProximalSubproblem::new(
                    &problem.loss,
                    &problem.q,
                    &system,
                    &s,
                    normal.as_ref(),
                )?;
                match sub.solve(&w.x, StopRule::Gradient { tol }, config.inner_method) {
                    Ok(sol) => (sol.x, sol.achieved),
                    Err(Error::Unconverged { .. }) => {
                        inner_flagged = true;
                        let sol = sub.solve(
                            &w.x,
                            StopRule::Gradient { tol: tol * 1e4 },
                            config.inner_method,
                        )?;
                        (sol.x, sol.achieved)
                    }
                    Err(e) => return Err(e),
                }
            }
        };

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
        let y_change = vec::norm(&problem.b.apply(&diff.y)?);
        records.push(IterRecord {
            k,
            objective: objective(problem, &next.x, &next.y)?,
            violation,
            lambda_gap: gap,
            ek_norm: x_residual,
            y_change,
            inner: None,
            psnr: config.metric.as_ref().map(|m| m(&next.x)),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        w = next;
        if violation <= config.tol_violation && gap <= config.tol_change {
            termination = Termination::TolMet;
            break;
        }
    }
    Ok(SolveTrace {
        solver: variant.name().into(),
        records,
        final_iterate: w,
        termination,
        inner_flagged,
    })
}
