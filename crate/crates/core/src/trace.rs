//! Per-iteration solver records.

use std::fmt;
use std::sync::Arc;

use crate::problem::IterateW;

/// Which candidate the inner loop of the task-adaptive scheme accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptedSource {
    /// The task module output passed the error-control test directly.
    Module,
    /// The blend `(1 − ζ)x̃ + ζ·D(x)` with `ζ = ζ₀Cᵗ` passed at this `t`.
    Blend(usize),
    /// Every blend failed; the fallback solution was taken.
    FallbackForced,
    /// The previous residual was below the absolute floor; the fallback was
    /// solved to that floor instead of testing the module.
    Degenerate,
    /// Baseline solvers: the subproblem was solved directly.
    Exact,
}

impl AcceptedSource {
    pub fn label(&self) -> String {
        match self {
            Self::Module => "module".into(),
            Self::Blend(t) => format!("blend({t})"),
            Self::FallbackForced => "fallback-forced".into(),
            Self::Degenerate => "degenerate".into(),
            Self::Exact => "exact".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "module" => Some(Self::Module),
            "fallback-forced" => Some(Self::FallbackForced),
            "degenerate" => Some(Self::Degenerate),
            "exact" => Some(Self::Exact),
            _ => s
                .strip_prefix("blend(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|t| t.parse().ok())
                .map(Self::Blend),
        }
    }

    pub fn is_blend_or_fallback(&self) -> bool {
        matches!(self, Self::Blend(_) | Self::FallbackForced)
    }
}

impl fmt::Display for AcceptedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Observability record for one pass through the inner acceptance loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerReport {
    pub accepted_source: AcceptedSource,
    pub t_used: usize,
    /// `‖e_k(x̂ᵏ)‖`, the reference the candidate was tested against.
    pub residual_before: f64,
    /// `‖e_k(x̂ᵏ⁺¹)‖` of the accepted candidate.
    pub residual_after: f64,
}

/// One outer iteration `k → k+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    /// `l(Qxᵏ⁺¹) + g(yᵏ⁺¹)`
    pub objective: f64,
    /// `‖Axᵏ⁺¹ + Byᵏ⁺¹ − c‖`
    pub violation: f64,
    /// `‖wᵏ − wᵏ⁺¹‖_M`
    pub lambda_gap: f64,
    /// `‖e_k(x̂ᵏ⁺¹)‖` for the task-adaptive scheme; the inner solver's
    /// achieved residual for the baselines.
    pub ek_norm: f64,
    /// `‖B(yᵏ − yᵏ⁺¹)‖`
    pub y_change: f64,
    pub inner: Option<InnerReport>,
    pub psnr: Option<f64>,
    pub wall_ms: f64,
}

impl IterRecord {
    pub fn accepted_source(&self) -> AcceptedSource {
        self.inner
            .map(|r| r.accepted_source)
            .unwrap_or(AcceptedSource::Exact)
    }

    pub fn t_used(&self) -> usize {
        self.inner.map(|r| r.t_used).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    TolMet,
    MaxIter,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Self::TolMet => "tol-met",
            Self::MaxIter => "max-iter",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub solver: String,
    pub records: Vec<IterRecord>,
    pub final_iterate: IterateW,
    pub termination: Termination,
    /// Set when some inner solve returned an unconverged best effort.
    pub inner_flagged: bool,
}

impl SolveTrace {
    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.last().map(|r| r.objective)
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::TolMet
    }
}

/// A scalar quality measure evaluated on `xᵏ⁺¹` after every iteration
/// (for images: PSNR against a ground truth).
pub type Metric = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
