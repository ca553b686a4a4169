//! Matrix-free linear operators, conjugate gradients and spectral estimates.
//!
//! A [`LinearMap`] is a pair of closures (forward, adjoint) plus a small
//! structural hint. Dense materialization exists only for small operators and
//! is meant for verification, not for solving.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

/// Seed for the starting vector of every power iteration.
pub const POWER_ITERATION_SEED: u64 = 0x7a5e_ed01;

/// Largest dimension accepted by [`LinearMap::materialize`].
pub const MAX_DENSE_DIM: usize = 1024;

/// Plain vector helpers shared across the crate.
pub mod vec {
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn norm_l1(a: &[f64]) -> f64 {
        a.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(a: &[f64]) -> f64 {
        a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `y += alpha * x`
    pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), y.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn scaled(alpha: f64, a: &[f64]) -> Vec<f64> {
        a.iter().map(|x| alpha * x).collect()
    }

    pub fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

type ApplyFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Structural knowledge about an operator that lets callers skip estimation.
#[derive(Clone, Debug, PartialEq)]
pub enum Structure {
    General,
    Zero,
    /// `s * I` on a square space.
    ScaledIdentity(f64),
    Diagonal(Arc<[f64]>),
}

/// A linear operator given by its forward and adjoint actions.
#[derive(Clone)]
pub struct LinearMap {
    domain_dim: usize,
    range_dim: usize,
    forward: ApplyFn,
    adjoint: ApplyFn,
    tag: String,
    structure: Structure,
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearMap")
            .field("tag", &self.tag)
            .field("domain_dim", &self.domain_dim)
            .field("range_dim", &self.range_dim)
            .field("structure", &self.structure)
            .finish()
    }
}

impl LinearMap {
    /// Builds an operator from closures. `forward` writes `range_dim` values,
    /// `adjoint` writes `domain_dim` values; both overwrite their output.
    pub fn new<F, G>(
        domain_dim: usize,
        range_dim: usize,
        forward: F,
        adjoint: G,
        tag: impl Into<String>,
    ) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if domain_dim == 0 || range_dim == 0 {
            return Err(Error::InvalidParameter(
                "operator dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            domain_dim,
            range_dim,
            forward: Arc::new(forward),
            adjoint: Arc::new(adjoint),
            tag: tag.into(),
            structure: Structure::General,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0).with_tag("I")
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        assert!(n > 0, "identity dimension must be positive");
        let f = move |x: &[f64], y: &mut [f64]| {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = s * xi;
            }
        };
        Self {
            domain_dim: n,
            range_dim: n,
            forward: Arc::new(f),
            adjoint: Arc::new(f),
            tag: format!("{s}I"),
            structure: Structure::ScaledIdentity(s),
        }
    }

    pub fn zero(domain_dim: usize, range_dim: usize) -> Self {
        assert!(domain_dim > 0 && range_dim > 0);
        let f = |_: &[f64], y: &mut [f64]| y.iter_mut().for_each(|v| *v = 0.0);
        Self {
            domain_dim,
            range_dim,
            forward: Arc::new(f),
            adjoint: Arc::new(f),
            tag: "0".into(),
            structure: Structure::Zero,
        }
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        assert!(!d.is_empty());
        let d: Arc<[f64]> = d.into();
        let dd = d.clone();
        let f = move |x: &[f64], y: &mut [f64]| {
            for ((yi, xi), di) in y.iter_mut().zip(x).zip(dd.iter()) {
                *yi = di * xi;
            }
        };
        Self {
            domain_dim: d.len(),
            range_dim: d.len(),
            forward: Arc::new(f.clone()),
            adjoint: Arc::new(f),
            tag: "diag".into(),
            structure: Structure::Diagonal(d),
        }
    }

    /// Dense operator from a row-major `rows x cols` array.
    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("dense operator data", rows * cols, data.len())?;
        let a = Arc::new(data);
        let at = a.clone();
        Self::new(
            cols,
            rows,
            move |x, y| {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = vec::dot(&a[i * cols..(i + 1) * cols], x);
                }
            },
            move |y, x| {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (i, yi) in y.iter().enumerate() {
                    vec::axpy(*yi, &at[i * cols..(i + 1) * cols], x);
                }
            },
            "dense",
        )
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn range_dim(&self) -> usize {
        self.range_dim
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn is_square(&self) -> bool {
        self.domain_dim == self.range_dim
    }

    /// Writes `A x` into `out` without allocating.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.domain_dim);
        debug_assert_eq!(out.len(), self.range_dim);
        (self.forward)(x, out)
    }

    /// Writes `Aᵀ y` into `out` without allocating.
    pub fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.range_dim);
        debug_assert_eq!(out.len(), self.domain_dim);
        (self.adjoint)(y, out)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator forward input", self.domain_dim, x.len())?;
        let mut out = vec![0.0; self.range_dim];
        (self.forward)(x, &mut out);
        Ok(out)
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("operator adjoint input", self.range_dim, y.len())?;
        let mut out = vec![0.0; self.domain_dim];
        (self.adjoint)(y, &mut out);
        Ok(out)
    }

    /// `self ∘ inner`
    pub fn compose(&self, inner: &LinearMap) -> Result<LinearMap> {
        check_len("operator composition", self.domain_dim, inner.range_dim)?;
        let (outer_f, outer_a) = (self.forward.clone(), self.adjoint.clone());
        let (inner_f, inner_a) = (inner.forward.clone(), inner.adjoint.clone());
        let mid = inner.range_dim;
        let mut map = Self::new(
            inner.domain_dim,
            self.range_dim,
            move |x, y| {
                let mut t = vec![0.0; mid];
                inner_f(x, &mut t);
                outer_f(&t, y);
            },
            move |y, x| {
                let mut t = vec![0.0; mid];
                outer_a(y, &mut t);
                inner_a(&t, x);
            },
            format!("{}∘{}", self.tag, inner.tag),
        )?;
        map.structure = match (&self.structure, &inner.structure) {
            (Structure::Zero, _) | (_, Structure::Zero) => Structure::Zero,
            (Structure::ScaledIdentity(a), Structure::ScaledIdentity(b)) => {
                Structure::ScaledIdentity(a * b)
            }
            _ => Structure::General,
        };
        Ok(map)
    }

    pub fn scaled(&self, s: f64) -> LinearMap {
        let (f, a) = (self.forward.clone(), self.adjoint.clone());
        let structure = match &self.structure {
            Structure::Zero => Structure::Zero,
            Structure::ScaledIdentity(c) => Structure::ScaledIdentity(s * c),
            Structure::Diagonal(d) => Structure::Diagonal(d.iter().map(|v| s * v).collect()),
            Structure::General => Structure::General,
        };
        LinearMap {
            domain_dim: self.domain_dim,
            range_dim: self.range_dim,
            forward: Arc::new(move |x, y| {
                f(x, y);
                y.iter_mut().for_each(|v| *v *= s);
            }),
            adjoint: Arc::new(move |y, x| {
                a(y, x);
                x.iter_mut().for_each(|v| *v *= s);
            }),
            tag: format!("{s}·{}", self.tag),
            structure,
        }
    }

    /// `AᵀA` as a square operator on the domain.
    pub fn gram(&self) -> LinearMap {
        let (f, a) = (self.forward.clone(), self.adjoint.clone());
        let m = self.range_dim;
        let g: ApplyFn = Arc::new(move |x, y| {
            let mut t = vec![0.0; m];
            f(x, &mut t);
            a(&t, y);
        });
        let structure = match &self.structure {
            Structure::Zero => Structure::Zero,
            Structure::ScaledIdentity(s) => Structure::ScaledIdentity(s * s),
            Structure::Diagonal(d) => Structure::Diagonal(d.iter().map(|v| v * v).collect()),
            Structure::General => Structure::General,
        };
        LinearMap {
            domain_dim: self.domain_dim,
            range_dim: self.domain_dim,
            forward: g.clone(),
            adjoint: g,
            tag: format!("{}ᵀ{}", self.tag, self.tag),
            structure,
        }
    }

    /// Sum of operators with identical shapes.
    pub fn sum(maps: &[&LinearMap]) -> Result<LinearMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty operator sum".into()))?;
        for m in maps {
            check_len("operator sum domain", first.domain_dim, m.domain_dim)?;
            check_len("operator sum range", first.range_dim, m.range_dim)?;
        }
        let fs: Vec<ApplyFn> = maps.iter().map(|m| m.forward.clone()).collect();
        let ads: Vec<ApplyFn> = maps.iter().map(|m| m.adjoint.clone()).collect();
        let (n, r) = (first.domain_dim, first.range_dim);
        let tag = maps.iter().map(|m| m.tag.as_str()).collect::<Vec<_>>().join("+");
        Self::new(
            n,
            r,
            move |x, y| {
                let mut t = vec![0.0; r];
                y.iter_mut().for_each(|v| *v = 0.0);
                for f in &fs {
                    f(x, &mut t);
                    vec::axpy(1.0, &t, y);
                }
            },
            move |y, x| {
                let mut t = vec![0.0; n];
                x.iter_mut().for_each(|v| *v = 0.0);
                for a in &ads {
                    a(y, &mut t);
                    vec::axpy(1.0, &t, x);
                }
            },
            tag,
        )
    }

    /// Vertical stack `[A₁; A₂; …]` sharing one domain.
    pub fn stack(maps: &[&LinearMap]) -> Result<LinearMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty operator stack".into()))?;
        for m in maps {
            check_len("operator stack domain", first.domain_dim, m.domain_dim)?;
        }
        let parts: Vec<(usize, ApplyFn, ApplyFn)> = maps
            .iter()
            .map(|m| (m.range_dim, m.forward.clone(), m.adjoint.clone()))
            .collect();
        let parts_adj = parts.clone();
        let n = first.domain_dim;
        let range: usize = maps.iter().map(|m| m.range_dim).sum();
        let tag = maps.iter().map(|m| m.tag.as_str()).collect::<Vec<_>>().join(";");
        Self::new(
            n,
            range,
            move |x, y| {
                let mut off = 0;
                for (r, f, _) in &parts {
                    f(x, &mut y[off..off + r]);
                    off += r;
                }
            },
            move |y, x| {
                let mut t = vec![0.0; n];
                x.iter_mut().for_each(|v| *v = 0.0);
                let mut off = 0;
                for (r, _, a) in &parts_adj {
                    a(&y[off..off + r], &mut t);
                    vec::axpy(1.0, &t, x);
                    off += r;
                }
            },
            format!("[{tag}]"),
        )
    }

    /// Horizontal block row `[A₁ A₂ …]` sharing one range.
    pub fn block_row(maps: &[&LinearMap]) -> Result<LinearMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty block row".into()))?;
        for m in maps {
            check_len("block row range", first.range_dim, m.range_dim)?;
        }
        let parts: Vec<(usize, ApplyFn, ApplyFn)> = maps
            .iter()
            .map(|m| (m.domain_dim, m.forward.clone(), m.adjoint.clone()))
            .collect();
        let parts_adj = parts.clone();
        let r = first.range_dim;
        let domain: usize = maps.iter().map(|m| m.domain_dim).sum();
        let tag = maps.iter().map(|m| m.tag.as_str()).collect::<Vec<_>>().join(" ");
        Self::new(
            domain,
            r,
            move |x, y| {
                let mut t = vec![0.0; r];
                y.iter_mut().for_each(|v| *v = 0.0);
                let mut off = 0;
                for (d, f, _) in &parts {
                    f(&x[off..off + d], &mut t);
                    vec::axpy(1.0, &t, y);
                    off += d;
                }
            },
            move |y, x| {
                let mut off = 0;
                for (d, _, a) in &parts_adj {
                    a(y, &mut x[off..off + d]);
                    off += d;
                }
            },
            format!("[{tag}]"),
        )
    }

    /// `κ` such that `AᵀA = κ I`, when the structure makes it exact.
    pub fn gram_scale(&self) -> Option<f64> {
        match &self.structure {
            Structure::ScaledIdentity(s) => Some(s * s),
            Structure::Diagonal(d) => {
                let k = d[0] * d[0];
                d.iter().all(|v| v * v == k).then_some(k)
            }
            _ => None,
        }
    }

    /// Exact spectral norm when the structure determines it.
    pub fn norm_hint(&self) -> Option<f64> {
        match &self.structure {
            Structure::Zero => Some(0.0),
            Structure::ScaledIdentity(s) => Some(s.abs()),
            Structure::Diagonal(d) => Some(vec::norm_inf(d)),
            Structure::General => None,
        }
    }

    /// Dense row-major copy; only for operators with both dimensions ≤ [`MAX_DENSE_DIM`].
    pub fn materialize(&self) -> Result<DenseMatrix> {
        if self.domain_dim > MAX_DENSE_DIM || self.range_dim > MAX_DENSE_DIM {
            return Err(Error::InvalidParameter(format!(
                "materialize limited to {MAX_DENSE_DIM} dims, operator is {}x{}",
                self.range_dim, self.domain_dim
            )));
        }
        let (rows, cols) = (self.range_dim, self.domain_dim);
        let mut data = vec![0.0; rows * cols];
        let mut e = vec![0.0; cols];
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            e[j] = 1.0;
            (self.forward)(&e, &mut col);
            e[j] = 0.0;
            for i in 0..rows {
                data[i * cols + j] = col[i];
            }
        }
        Ok(DenseMatrix { rows, cols, data })
    }
}

/// Row-major dense matrix produced by [`LinearMap::materialize`].
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Gaussian elimination with partial pivoting on a square matrix.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows;
        check_len("dense solve columns", n, self.cols)?;
        check_len("dense solve rhs", n, rhs.len())?;
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .unwrap_or(k);
            if a[p * n + k].abs() < 1e-300 {
                return Err(Error::NotPositiveDefinite("singular dense system".into()));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                b.swap(k, p);
            }
            for i in k + 1..n {
                let f = a[i * n + k] / a[k * n + k];
                if f != 0.0 {
                    for j in k..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                    b[i] -= f * b[k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k * n + k];
        }
        Ok(x)
    }
}

/// One summand of a symmetric positive (semi)definite composition.
#[derive(Clone, Debug)]
pub enum SpdTerm {
    /// `c · I`
    Identity(f64),
    /// `c · MᵀM`
    Gram(f64, LinearMap),
    /// A square operator the caller vouches is symmetric PSD.
    Psd(LinearMap),
}

/// A symmetric positive definite operator together with how it was composed.
#[derive(Clone, Debug)]
pub struct SpdSystem {
    operator: LinearMap,
    identity_shift: f64,
    diagonal: Option<Arc<[f64]>>,
    description: String,
    preconditioner: Option<Arc<[f64]>>,
}

impl SpdSystem {
    /// Wraps a square operator that the caller asserts is SPD.
    pub fn from_operator(operator: LinearMap) -> Result<Self> {
        if !operator.is_square() {
            return Err(Error::InvalidParameter(format!(
                "SPD operator must be square, got {}x{}",
                operator.range_dim, operator.domain_dim
            )));
        }
        let (identity_shift, diagonal) = match operator.structure() {
            Structure::ScaledIdentity(s) if *s > 0.0 => (*s, None),
            Structure::ScaledIdentity(_) | Structure::Zero => {
                return Err(Error::NotPositiveDefinite(format!(
                    "operator {} is not positive definite",
                    operator.tag
                )))
            }
            Structure::Diagonal(d) => {
                if d.iter().any(|v| *v <= 0.0) {
                    return Err(Error::NotPositiveDefinite(
                        "diagonal system has a non-positive entry".into(),
                    ));
                }
                (0.0, Some(d.clone()))
            }
            Structure::General => (0.0, None),
        };
        let description = operator.tag.clone();
        Ok(Self {
            operator,
            identity_shift,
            diagonal,
            description,
            preconditioner: None,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_operator(LinearMap::identity(n)).expect("identity is SPD")
    }

    pub fn diagonal(d: Vec<f64>) -> Result<Self> {
        Self::from_operator(LinearMap::diagonal(d))
    }

    /// Builds `Σ terms`; every coefficient must be non-negative.
    pub fn compose(dim: usize, terms: Vec<SpdTerm>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("system dimension must be positive".into()));
        }
        let mut shift = 0.0;
        let mut maps = Vec::new();
        let mut desc = Vec::new();
        for t in terms {
            match t {
                SpdTerm::Identity(c) => {
                    if c < 0.0 {
                        return Err(Error::NotPositiveDefinite(format!(
                            "negative identity coefficient {c}"
                        )));
                    }
                    shift += c;
                }
                SpdTerm::Gram(c, m) => {
                    if c < 0.0 {
                        return Err(Error::NotPositiveDefinite(format!(
                            "negative coefficient {c} on {}ᵀ{}",
                            m.tag, m.tag
                        )));
                    }
                    check_len("SPD term domain", dim, m.domain_dim)?;
                    if let Structure::ScaledIdentity(sc) = m.structure {
                        shift += c * sc * sc;
                    } else if c > 0.0 && !matches!(m.structure, Structure::Zero) {
                        desc.push(format!("{c}·{}ᵀ{}", m.tag, m.tag));
                        maps.push(m.gram().scaled(c));
                    }
                }
                SpdTerm::Psd(m) => {
                    if !m.is_square() {
                        return Err(Error::InvalidParameter("PSD term must be square".into()));
                    }
                    check_len("SPD term domain", dim, m.domain_dim)?;
                    if let Structure::ScaledIdentity(s) = m.structure {
                        if s < 0.0 {
                            return Err(Error::NotPositiveDefinite(format!(
                                "negative identity coefficient {s}"
                            )));
                        }
                        shift += s;
                    } else if !matches!(m.structure, Structure::Zero) {
                        desc.push(m.tag.clone());
                        maps.push(m);
                    }
                }
            }
        }
        if shift > 0.0 {
            desc.insert(0, format!("{shift}·I"));
        }
        let operator = if maps.is_empty() {
            if shift <= 0.0 {
                return Err(Error::NotPositiveDefinite("empty composition".into()));
            }
            LinearMap::scaled_identity(dim, shift)
        } else {
            let id = LinearMap::scaled_identity(dim, shift);
            let mut refs: Vec<&LinearMap> = maps.iter().collect();
            if shift > 0.0 {
                refs.insert(0, &id);
            }
            if refs.len() == 1 {
                refs[0].clone()
            } else {
                LinearMap::sum(&refs)?
            }
        };
        let description = desc.join(" + ");
        Ok(Self {
            operator: operator.with_tag(description.clone()),
            identity_shift: shift,
            diagonal: None,
            description,
            preconditioner: None,
        })
    }

    /// `self + c·MᵀM`, keeping the known identity shift.
    pub fn with_added_gram(&self, c: f64, m: &LinearMap) -> Result<Self> {
        if c < 0.0 {
            return Err(Error::NotPositiveDefinite(format!("negative coefficient {c}")));
        }
        check_len("added gram domain", self.dim(), m.domain_dim)?;
        let g = m.gram().scaled(c);
        let operator = LinearMap::sum(&[&self.operator, &g])?;
        let description = format!("{} + {c}·{}ᵀ{}", self.description, m.tag, m.tag);
        Ok(Self {
            operator: operator.with_tag(description.clone()),
            identity_shift: self.identity_shift,
            diagonal: None,
            description,
            preconditioner: None,
        })
    }

    /// Installs a Jacobi preconditioner (the diagonal of the operator).
    pub fn with_diagonal_preconditioner(mut self, diag: Vec<f64>) -> Result<Self> {
        check_len("preconditioner", self.dim(), diag.len())?;
        if diag.iter().any(|d| *d <= 0.0) {
            return Err(Error::InvalidParameter(
                "preconditioner entries must be positive".into(),
            ));
        }
        self.preconditioner = Some(diag.into());
        Ok(self)
    }

    pub fn operator(&self) -> &LinearMap {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.domain_dim
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Coefficient `c` of the `c·I` part; the rest of the composition is PSD.
    pub fn identity_shift(&self) -> f64 {
        self.identity_shift
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.operator.apply(x)
    }
}

/// Outcome of [`cg_solve`].
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solves `S z = rhs` from a zero start; see [`cg_solve_from`].
pub fn cg_solve(system: &SpdSystem, rhs: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    cg_solve_from(system, rhs, None, tol, max_iter)
}

/// Conjugate gradients stopping at `‖S z − rhs‖ ≤ tol · max(1, ‖rhs‖)`.
///
/// The recursive residual is confirmed against the true residual before
/// returning; on disagreement the recursion restarts from the true residual.
/// Exhausting `max_iter` returns the best iterate with `converged = false`.
pub fn cg_solve_from(
    system: &SpdSystem,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = system.dim();
    check_len("cg rhs", n, rhs.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("cg tolerance must be > 0, got {tol}")));
    }
    let op = &system.operator;
    let precond = system
        .preconditioner
        .clone()
        .or_else(|| system.diagonal.clone());
    let threshold = tol * vec::norm(rhs).max(1.0);

    let mut x = match x0 {
        Some(x0) => {
            check_len("cg initial guess", n, x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut ap = vec![0.0; n];
    let true_residual = |x: &[f64], ap: &mut Vec<f64>| -> Vec<f64> {
        op.apply_into(x, ap);
        rhs.iter().zip(ap.iter()).map(|(b, a)| b - a).collect()
    };
    let mut r = true_residual(&x, &mut ap);
    let mut best = (vec::norm(&r), x.clone());
    let mut iterations = 0;

    'restart: loop {
        let mut z = apply_precond(&precond, &r);
        let mut p = z.clone();
        let mut rz = vec::dot(&r, &z);
        let mut rnorm = vec::norm(&r);
        loop {
            if rnorm <= threshold {
                let r_true = true_residual(&x, &mut ap);
                let true_norm = vec::norm(&r_true);
                if true_norm < best.0 {
                    best = (true_norm, x.clone());
                }
                if true_norm <= threshold {
                    return Ok(CgOutcome {
                        solution: x,
                        iterations,
                        residual_norm: true_norm,
                        converged: true,
                    });
                }
                if iterations >= max_iter {
                    break 'restart;
                }
                r = r_true;
                continue 'restart;
            }
            if iterations >= max_iter {
                break 'restart;
            }
            op.apply_into(&p, &mut ap);
            let pap = vec::dot(&p, &ap);
            if !(pap > 0.0) {
                if pap == 0.0 && vec::norm(&p) == 0.0 {
                    break 'restart;
                }
                return Err(Error::NotPositiveDefinite(format!(
                    "curvature pᵀSp = {pap:e} in CG on {}",
                    system.description
                )));
            }
            let alpha = rz / pap;
            vec::axpy(alpha, &p, &mut x);
            vec::axpy(-alpha, &ap, &mut r);
            iterations += 1;
            rnorm = vec::norm(&r);
            z = apply_precond(&precond, &r);
            let rz_next = vec::dot(&r, &z);
            let b = rz_next / rz;
            rz = rz_next;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + b * *pi;
            }
        }
    }

    let r_true = true_residual(&x, &mut ap);
    let true_norm = vec::norm(&r_true);
    if true_norm < best.0 {
        best = (true_norm, x);
    }
    Ok(CgOutcome {
        solution: best.1,
        iterations,
        residual_norm: best.0,
        converged: best.0 <= threshold,
    })
}

fn apply_precond(precond: &Option<Arc<[f64]>>, r: &[f64]) -> Vec<f64> {
    match precond {
        Some(d) => r.iter().zip(d.iter()).map(|(ri, di)| ri / di).collect(),
        None => r.to_vec(),
    }
}

/// Result of a power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn seeded_unit_vector(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = vec::norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    v
}

/// Power iteration for the top eigenvalue of a symmetric PSD action.
fn power_iterate<F>(n: usize, tol: f64, max_iter: usize, mut apply: F) -> NormEstimate
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut v = seeded_unit_vector(n);
    let mut w = vec![0.0; n];
    let mut rho = 0.0;
    for it in 1..=max_iter {
        apply(&v, &mut w);
        let next = vec::dot(&v, &w);
        let wn = vec::norm(&w);
        if !next.is_finite() || !wn.is_finite() {
            return NormEstimate {
                value: rho,
                iterations: it,
                converged: false,
            };
        }
        if wn == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let done = it > 1 && (next - rho).abs() <= tol * next.abs();
        rho = next;
        if done {
            return NormEstimate {
                value: rho,
                iterations: it,
                converged: true,
            };
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    NormEstimate {
        value: rho,
        iterations: max_iter,
        converged: false,
    }
}

/// Estimates `‖A‖₂²` by power iteration on `AᵀA` from a fixed seeded start.
pub fn operator_norm_sq(map: &LinearMap, tol: f64, max_iter: usize) -> Result<NormEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    let mut t = vec![0.0; map.range_dim];
    Ok(power_iterate(map.domain_dim, tol, max_iter, |v, w| {
        map.apply_into(v, &mut t);
        map.apply_adjoint_into(&t, w);
    }))
}

/// Top eigenvalue of a symmetric PSD operator (no squaring).
pub fn symmetric_top_eig(map: &LinearMap, tol: f64, max_iter: usize) -> Result<NormEstimate> {
    if !map.is_square() {
        return Err(Error::InvalidParameter("symmetric operator must be square".into()));
    }
    Ok(power_iterate(map.domain_dim, tol, max_iter, |v, w| {
        map.apply_into(v, w)
    }))
}

const MIN_EIG_SAFETY: f64 = 0.99;

/// A lower bound on the smallest eigenvalue of an SPD system.
///
/// Uses the structure when it settles the question (`c·I + PSD` gives `c`,
/// diagonals give their minimum); otherwise runs inverse power iteration with
/// CG inner solves and scales the estimate by 0.99.
pub fn min_eig_lower_bound(system: &SpdSystem) -> Result<f64> {
    if let Some(d) = &system.diagonal {
        return Ok(d.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    if system.identity_shift > 0.0 {
        return Ok(system.identity_shift);
    }
    let n = system.dim();
    let max_cg = 20 * n + 100;
    let mut failure = None;
    let est = power_iterate(n, 1e-8, 500, |v, w| {
        if failure.is_some() {
            w.iter_mut().for_each(|x| *x = f64::NAN);
            return;
        }
        match cg_solve(system, v, 1e-12, max_cg) {
            Ok(out) if out.converged => w.copy_from_slice(&out.solution),
            Ok(out) => {
                failure = Some(format!(
                    "inverse iteration solve stalled at residual {:.3e}",
                    out.residual_norm
                ));
                w.iter_mut().for_each(|x| *x = f64::NAN);
            }
            Err(e) => {
                failure = Some(e.to_string());
                w.iter_mut().for_each(|x| *x = f64::NAN);
            }
        }
    });
    if let Some(msg) = failure {
        return Err(Error::NotPositiveDefinite(format!(
            "{} appears singular or indefinite: {msg}",
            system.description
        )));
    }
    if !(est.value > 0.0) || !est.value.is_finite() {
        return Err(Error::NotPositiveDefinite(format!(
            "{}: inverse iteration gave {}",
            system.description, est.value
        )));
    }
    Ok(MIN_EIG_SAFETY / est.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_norm_is_one() {
        let est = operator_norm_sq(&LinearMap::identity(5), 1e-12, 100).unwrap();
        assert!((est.value - 1.0).abs() < 1e-15);
        assert!(est.converged);
    }

    #[test]
    fn diagonal_norm_sq() {
        let d = LinearMap::diagonal(vec![1.0, 2.0, 3.0]);
        let est = operator_norm_sq(&d, 1e-14, 1000).unwrap();
        assert!((est.value - 9.0).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn unconverged_power_iteration_is_flagged() {
        let d = LinearMap::diagonal(vec![1.0, 0.999, 0.998]);
        let est = operator_norm_sq(&d, 1e-15, 2).unwrap();
        assert!(!est.converged);
        assert!(est.value > 0.9);
    }

    #[test]
    fn cg_trivial_systems() {
        let b = vec![1.0, -2.0, 3.5];
        let out = cg_solve(&SpdSystem::identity(3), &b, 1e-12, 10).unwrap();
        assert_eq!(out.solution, b);
        let out = cg_solve(&SpdSystem::diagonal(vec![2.0]).unwrap(), &[4.0], 1e-12, 10).unwrap();
        assert!((out.solution[0] - 2.0).abs() < 1e-15);
        assert!(out.converged);
    }

    #[test]
    fn cg_reports_unconverged() {
        let a = LinearMap::dense(3, 3, vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]).unwrap();
        let sys = SpdSystem::from_operator(a).unwrap();
        let out = cg_solve(&sys, &[1.0, 2.0, 3.0], 1e-14, 1).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn cg_rejects_bad_rhs() {
        assert!(matches!(
            cg_solve(&SpdSystem::identity(3), &[1.0], 1e-10, 10),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn min_eig_examples() {
        assert_eq!(min_eig_lower_bound(&SpdSystem::identity(4)).unwrap(), 1.0);
        assert_eq!(
            min_eig_lower_bound(&SpdSystem::diagonal(vec![2.0, 5.0]).unwrap()).unwrap(),
            2.0
        );
        let a = LinearMap::dense(2, 3, vec![1.0, 2.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        for beta in [0.0, 0.5, 10.0] {
            let sys = SpdSystem::compose(
                3,
                vec![SpdTerm::Identity(2.0), SpdTerm::Gram(beta, a.clone())],
            )
            .unwrap();
            assert_eq!(min_eig_lower_bound(&sys).unwrap(), 2.0);
        }
    }

    #[test]
    fn min_eig_inverse_iteration() {
        let a = LinearMap::dense(2, 2, vec![3.0, 1.0, 1.0, 3.0]).unwrap();
        let sys = SpdSystem::from_operator(a).unwrap();
        let lb = min_eig_lower_bound(&sys).unwrap();
        assert!((0.99 * 2.0 * (1.0 - 1e-6)..=2.0).contains(&lb), "{lb}");
    }

    #[test]
    fn indefinite_compositions_rejected() {
        let a = LinearMap::identity(2);
        assert!(matches!(
            SpdSystem::compose(2, vec![SpdTerm::Identity(-1.0)]),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            SpdSystem::compose(2, vec![SpdTerm::Gram(-1.0, a)]),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(SpdSystem::diagonal(vec![1.0, -2.0]).is_err());
        let singular = LinearMap::dense(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let sys = SpdSystem::compose(2, vec![SpdTerm::Gram(1.0, singular)]).unwrap();
        assert!(min_eig_lower_bound(&sys).is_err());
    }

    #[test]
    fn dense_solve_matches_known() {
        let m = DenseMatrix {
            rows: 2,
            cols: 2,
            data: vec![0.0, 2.0, 1.0, 1.0],
        };
        let x = m.solve(&[4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn block_operators_shapes() {
        let a = LinearMap::dense(2, 3, (0..6).map(f64::from).collect()).unwrap();
        let s = LinearMap::stack(&[&a, &LinearMap::identity(3)]).unwrap();
        assert_eq!((s.domain_dim(), s.range_dim()), (3, 5));
        let r = LinearMap::block_row(&[&a, &LinearMap::identity(2)]).unwrap();
        assert_eq!((r.domain_dim(), r.range_dim()), (5, 2));
        let y = r.apply(&[1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![1.0, 4.0]);
    }
}
