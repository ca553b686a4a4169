//! The proximal x-subproblem shared by every solver:
//!
//! `φ(x) = l(Qx) + ½ xᵀS x − sᵀx`
//!
//! where `S` is SPD. Exact ADMM, proximal ADMM, linearized ADMM and the
//! task-adaptive scheme only differ in how `S` and `s` are formed.

use crate::error::{check_len, Error, Result};
use crate::linops::{cg_solve_from, operator_norm_sq, symmetric_top_eig, vec, LinearMap, SpdSystem};
use crate::problem::SmoothLoss;

/// Floor for relative CG tolerances; below this the solves are rounding-bound.
pub const CG_TOL_FLOOR: f64 = 1e-14;

/// How a non-quadratic subproblem is minimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InnerMethod {
    /// Newton steps with finite-difference Hessian-vector products and CG.
    #[default]
    NewtonCg,
    GradientDescent,
}

/// When an inner minimization may stop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// `‖∇φ(x)‖ ≤ tol · max(1, ‖s‖)` (for quadratic losses: the CG criterion).
    Gradient { tol: f64 },
    /// `‖e(x)‖ ≤ target`, with `e(x) = ∇l(Q F(x)) − ∇l(Qx)`.
    Residual { target: f64 },
}

/// `e(x)` together with the fixed-point map value `F(x)` it was built from.
#[derive(Clone, Debug)]
pub struct Residual {
    pub e: Vec<f64>,
    pub fx: Vec<f64>,
    pub norm: f64,
}

#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖e(x)‖` for residual rules, `‖∇φ(x)‖` for gradient rules.
    pub achieved: f64,
    /// Filled when the stopping rule evaluated `e(x)`.
    pub residual: Option<Residual>,
}

/// One instance of the x-subproblem.
pub struct ProximalSubproblem<'a> {
    pub loss: &'a SmoothLoss,
    pub q: &'a LinearMap,
    pub system: &'a SpdSystem,
    pub s: &'a [f64],
    /// `QᵀQ + S`, used for quadratic losses.
    pub normal_system: Option<&'a SpdSystem>,
}

impl<'a> ProximalSubproblem<'a> {
    pub fn new(
        loss: &'a SmoothLoss,
        q: &'a LinearMap,
        system: &'a SpdSystem,
        s: &'a [f64],
        normal_system: Option<&'a SpdSystem>,
    ) -> Result<Self> {
        check_len("subproblem s", system.dim(), s.len())?;
        check_len("subproblem Q domain", system.dim(), q.domain_dim())?;
        check_len("subproblem loss", loss.dim(), q.range_dim())?;
        if let Some(ns) = normal_system {
            check_len("subproblem normal system", system.dim(), ns.dim())?;
        }
        Ok(Self {
            loss,
            q,
            system,
            s,
            normal_system,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    fn max_cg(&self) -> usize {
        10 * self.dim() + 200
    }

    /// `∇l(Qx)` and `Qᵀ∇l(Qx)`
    fn loss_gradients(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut qx = vec![0.0; self.q.range_dim()];
        self.q.apply_into(x, &mut qx);
        let mut gl = vec![0.0; qx.len()];
        self.loss.gradient_into(&qx, &mut gl);
        let mut qt = vec![0.0; self.dim()];
        self.q.apply_adjoint_into(&gl, &mut qt);
        (gl, qt)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let qx = self.q.apply(x)?;
        let sx = self.system.apply(x)?;
        Ok(self.loss.value(&qx)? + 0.5 * vec::dot(x, &sx) - vec::dot(self.s, x))
    }

    /// `∇φ(x) = Qᵀ∇l(Qx) + Sx − s`
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("subproblem point", self.dim(), x.len())?;
        let (_, mut g) = self.loss_gradients(x);
        let sx = self.system.apply(x)?;
        for ((gi, si), bi) in g.iter_mut().zip(&sx).zip(self.s) {
            *gi += si - bi;
        }
        Ok(g)
    }

    /// `F(x) = S⁻¹(s − Qᵀ∇l(Qx))`, solved by CG to relative tolerance `cg_tol`.
    pub fn fk_apply(&self, x: &[f64], cg_tol: f64) -> Result<Vec<f64>> {
        check_len("F argument", self.dim(), x.len())?;
        let (_, qt) = self.loss_gradients(x);
        let rhs = vec::sub(self.s, &qt);
        self.solve_s(&rhs, Some(x), cg_tol)
    }

    fn solve_s(&self, rhs: &[f64], warm: Option<&[f64]>, cg_tol: f64) -> Result<Vec<f64>> {
        let tol = cg_tol.max(CG_TOL_FLOOR);
        let out = cg_solve_from(self.system, rhs, warm, tol, self.max_cg())?;
        let scale = vec::norm(rhs).max(1.0);
        // Rounding can stall CG just short of a floor-level tolerance.
        if !out.converged && out.residual_norm > 1e3 * tol * scale {
            return Err(Error::Unconverged {
                what: "CG solve with W̄ + βAᵀA",
                iterations: out.iterations,
                residual: out.residual_norm,
            });
        }
        Ok(out.solution)
    }

    /// `e(x) = ∇l(Q F(x)) − ∇l(Qx)`.
    pub fn residual(&self, x: &[f64], cg_tol: f64) -> Result<Residual> {
        check_len("residual argument", self.dim(), x.len())?;
        let (gl, qt) = self.loss_gradients(x);
        let rhs = vec::sub(self.s, &qt);
        let fx = self.solve_s(&rhs, Some(x), cg_tol)?;
        let qf = self.q.apply(&fx)?;
        let mut e = self.loss.gradient(&qf)?;
        vec::axpy(-1.0, &gl, &mut e);
        let norm = vec::norm(&e);
        Ok(Residual { e, fx, norm })
    }

    /// CG tolerance that keeps the error in `e` below `abs_err`.
    pub fn cg_tol_for(&self, abs_err: f64, cap: f64) -> f64 {
        let scale = vec::norm(self.s).max(1.0);
        (abs_err / scale).min(cap).max(CG_TOL_FLOOR)
    }

    /// Minimizes `φ` from `x0` until `stop` holds.
    pub fn solve(&self, x0: &[f64], stop: StopRule, method: InnerMethod) -> Result<InnerSolution> {
        check_len("subproblem start", self.dim(), x0.len())?;
        match (self.loss.quadratic_target(), stop) {
            (Some(b), StopRule::Gradient { tol }) => self.solve_quadratic_gradient(b, x0, tol),
            (Some(b), StopRule::Residual { target }) => self.solve_quadratic_residual(b, x0, target),
            (None, _) => match method {
                InnerMethod::NewtonCg => self.solve_newton(x0, stop),
                InnerMethod::GradientDescent => self.solve_gradient_descent(x0, stop),
            },
        }
    }

    fn normal_system_or_err(&self) -> Result<&SpdSystem> {
        self.normal_system.ok_or_else(|| {
            Error::InvalidParameter("quadratic subproblem needs the QᵀQ + S system".into())
        })
    }

    fn quadratic_rhs(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.q.apply_adjoint(b)?;
        vec::axpy(1.0, self.s, &mut rhs);
        Ok(rhs)
    }

    fn solve_quadratic_gradient(&self, b: &[f64], x0: &[f64], tol: f64) -> Result<InnerSolution> {
        let sys = self.normal_system_or_err()?;
        let rhs = self.quadratic_rhs(b)?;
        let out = cg_solve_from(sys, &rhs, Some(x0), tol.max(CG_TOL_FLOOR), self.max_cg())?;
        if !out.converged && out.residual_norm > 1e3 * tol.max(CG_TOL_FLOOR) * vec::norm(&rhs).max(1.0)
        {
            return Err(Error::Unconverged {
                what: "quadratic x-subproblem",
                iterations: out.iterations,
                residual: out.residual_norm,
            });
        }
        Ok(InnerSolution {
            x: out.solution,
            iterations: out.iterations,
            achieved: out.residual_norm,
            residual: None,
        })
    }

    fn solve_quadratic_residual(
        &self,
        b: &[f64],
        x0: &[f64],
        target: f64,
    ) -> Result<InnerSolution> {
        if !(target > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "residual target must be > 0, got {target}"
            )));
        }
        let check_tol = self.cg_tol_for(0.01 * target, 1e-10);
        let first = self.residual(x0, check_tol)?;
        if first.norm <= target {
            return Ok(InnerSolution {
                x: x0.to_vec(),
                iterations: 0,
                achieved: first.norm,
                residual: Some(first),
            });
        }
        let sys = self.normal_system_or_err()?;
        let rhs = self.quadratic_rhs(b)?;
        let rhs_scale = vec::norm(&rhs).max(1.0);
        let mut tol = (0.1 * target / rhs_scale).clamp(CG_TOL_FLOOR, 1e-8);
        let mut x = x0.to_vec();
        let mut iterations = 0;
        let mut best = first.norm;
        loop {
            let out = cg_solve_from(sys, &rhs, Some(&x), tol, self.max_cg())?;
            iterations += out.iterations;
            x = out.solution;
            let res = self.residual(&x, check_tol)?;
            best = best.min(res.norm);
            if res.norm <= target {
                return Ok(InnerSolution {
                    x,
                    iterations,
                    achieved: res.norm,
                    residual: Some(res),
                });
            }
            if tol <= CG_TOL_FLOOR {
                return Err(Error::Unconverged {
                    what: "fallback solve",
                    iterations,
                    residual: best,
                });
            }
            tol = (tol * 1e-2).max(CG_TOL_FLOOR);
        }
    }

    fn stop_met(&self, x: &[f64], g: &[f64], stop: StopRule) -> Result<(bool, f64, Option<Residual>)> {
        match stop {
            StopRule::Gradient { tol } => {
                let gn = vec::norm(g);
                Ok((gn <= tol * vec::norm(self.s).max(1.0), gn, None))
            }
            StopRule::Residual { target } => {
                let res = self.residual(x, self.cg_tol_for(0.01 * target, 1e-10))?;
                Ok((res.norm <= target, res.norm, Some(res)))
            }
        }
    }

    /// Hessian-vector products of `φ` by forward differences of `∇l`.
    fn hessian_map(&self, x: &[f64]) -> Result<LinearMap> {
        let loss = self.loss.clone();
        let q = self.q.clone();
        let s_op = self.system.operator().clone();
        let qx = q.apply(x)?;
        let gl = loss.gradient(&qx)?;
        let n = self.dim();
        let apply = move |v: &[f64], out: &mut [f64]| {
            let qv = q.apply(v).expect("dimension checked");
            let nv = vec::norm(&qv);
            s_op.apply_into(v, out);
            if nv == 0.0 {
                return;
            }
            let eps = 1e-7 * (1.0 + vec::norm(&qx)) / nv;
            let shifted: Vec<f64> = qx.iter().zip(&qv).map(|(a, b)| a + eps * b).collect();
            let g2 = loss.gradient(&shifted).expect("dimension checked");
            let d: Vec<f64> = g2.iter().zip(&gl).map(|(a, b)| (a - b) / eps).collect();
            let qt = q.apply_adjoint(&d).expect("dimension checked");
            vec::axpy(1.0, &qt, out);
        };
        let apply = std::sync::Arc::new(apply);
        let adj = apply.clone();
        LinearMap::new(n, n, move |v, o| apply(v, o), move |v, o| adj(v, o), "Hφ")
    }

    fn solve_newton(&self, x0: &[f64], stop: StopRule) -> Result<InnerSolution> {
        let mut x = x0.to_vec();
        let mut fx = self.value(&x)?;
        let mut last = f64::INFINITY;
        for it in 0..200 {
            let g = self.gradient(&x)?;
            let (done, achieved, residual) = self.stop_met(&x, &g, stop)?;
            last = achieved;
            if done {
                return Ok(InnerSolution {
                    x,
                    iterations: it,
                    achieved,
                    residual,
                });
            }
            let gn = vec::norm(&g);
            let h = SpdSystem::from_operator(self.hessian_map(&x)?)?;
            let neg_g = vec::scaled(-1.0, &g);
            let forcing = gn.sqrt().clamp(1e-12, 0.1);
            let dir = match cg_solve_from(&h, &neg_g, None, forcing / gn.max(1.0), 4 * self.dim() + 50) {
                Ok(out) if vec::dot(&out.solution, &g) < 0.0 => out.solution,
                _ => neg_g.clone(),
            };
            let slope = vec::dot(&dir, &g);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let ft = self.value(&trial)?;
                // Values stop resolving progress near the optimum; fall back to
                // gradient-norm decrease there.
                if ft <= fx + 1e-4 * step * slope
                    || vec::norm(&self.gradient(&trial)?) <= 0.9 * gn
                {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::Unconverged {
            what: "Newton-CG x-subproblem",
            iterations: 200,
            residual: last,
        })
    }

    /// Gradient descent with the fixed step `1/(L‖Q‖² + λ_max(S))`.
    fn solve_gradient_descent(&self, x0: &[f64], stop: StopRule) -> Result<InnerSolution> {
        const MAX_ITER: usize = 100_000;
        let q_norm_sq = match self.q.norm_hint() {
            Some(v) => v * v,
            None => operator_norm_sq(self.q, 1e-6, 500)?.value * 1.01,
        };
        let s_top = symmetric_top_eig(self.system.operator(), 1e-6, 500)?.value * 1.01;
        let step = 1.0 / (self.loss.lipschitz() * q_norm_sq + s_top);
        let mut x = x0.to_vec();
        let mut last = f64::INFINITY;
        for it in 0..MAX_ITER {
            let g = self.gradient(&x)?;
            let (done, achieved, residual) = self.stop_met(&x, &g, stop)?;
            last = achieved;
            if done {
                return Ok(InnerSolution {
                    x,
                    iterations: it,
                    achieved,
                    residual,
                });
            }
            vec::axpy(-step, &g, &mut x);
        }
        Err(Error::Unconverged {
            what: "gradient-descent x-subproblem",
            iterations: MAX_ITER,
            residual: last,
        })
    }
}
