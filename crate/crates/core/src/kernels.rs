//! Gaussian kernels and the RKHS geometry of empirical measures.
//!
//! Both kernel variants satisfy `k(x, x) = 1`, so every embedded probability
//! measure has RKHS norm at most one and `‖P − Q‖²_{F_k}` is bounded by 2.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

/// Largest negative MMD² value treated as roundoff and clamped to zero.
pub const MMD_CLAMP: f64 = 1e-12;

/// Maximum number of points used by [`median_bandwidth`].
pub const BANDWIDTH_SUBSAMPLE: usize = 1000;

/// A positive-definite, unit-diagonal Gaussian kernel on `R^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum KernelSpec {
    /// `k(x, y) = exp(−‖x − y‖² / (2h²))`.
    IsotropicGaussian { bandwidth: f64 },
    /// `k(x, y) = exp(−(x − y)ᵀ A (x − y))` with `A` symmetric positive definite.
    MahalanobisGaussian { scale: DMatrix<f64> },
}

impl KernelSpec {
    pub fn isotropic(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KernelSpec::IsotropicGaussian { bandwidth })
    }

    pub fn mahalanobis(scale: DMatrix<f64>) -> Result<Self> {
        check_spd(&scale, "kernel scale matrix")?;
        Ok(KernelSpec::MahalanobisGaussian { scale })
    }

    /// The kernel whose induced metric matches the Hellinger distance between
    /// `N(θ₁, Σ)` and `N(θ₂, Σ)` up to the factor `1/√2`: `A = Σ⁻¹ / 8`.
    pub fn hellinger_matched(covariance: &DMatrix<f64>) -> Result<Self> {
        let chol = check_spd(covariance, "covariance")?;
        Self::mahalanobis(chol.inverse() / 8.0)
    }

    /// Dimension the kernel is tied to, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            KernelSpec::IsotropicGaussian { .. } => None,
            KernelSpec::MahalanobisGaussian { scale } => Some(scale.nrows()),
        }
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != p => Err(Error::DimensionMismatch { expected: d, found: p }),
            _ => Ok(()),
        }
    }

    /// Kernel value without dimension checks; callers guarantee `x.len() == y.len()`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::IsotropicGaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::MahalanobisGaussian { scale } => {
                let p = x.len();
                let mut quad = 0.0;
                for i in 0..p {
                    let di = x[i] - y[i];
                    let mut row = 0.0;
                    for j in 0..p {
                        row += scale[(i, j)] * (x[j] - y[j]);
                    }
                    quad += di * row;
                }
                (-quad).exp()
            }
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel-induced metric `ρ_k(x, y) = √(k(x,x) + k(y,y) − 2k(x,y))`.
    pub fn rho(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let kxy = self.eval(x, y)?;
        let kxx = self.eval_unchecked(x, x);
        let kyy = self.eval_unchecked(y, y);
        Ok((kxx + kyy - 2.0 * kxy).max(0.0).sqrt())
    }

    /// Gram matrix `K[i][j] = k(xᵢ, xⱼ)` of the atoms of `m`.
    pub fn gram(&self, m: &EmpiricalMeasure) -> Result<DMatrix<f64>> {
        self.check_dim(m.dim())?;
        let n = m.len();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = self.eval_unchecked(m.atom(i), m.atom(i));
            for j in 0..i {
                let v = self.eval_unchecked(m.atom(i), m.atom(j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }
}

/// `⟨Σβᵢk(zᵢ,·), Σγⱼk(yⱼ,·)⟩ = Σᵢⱼ βᵢγⱼ k(zᵢ, yⱼ)`.
///
/// Rows are summed in parallel; each row sum and the final reduction run in
/// a fixed order so the result does not depend on the thread schedule.
pub fn inner_product(p: &EmpiricalMeasure, q: &EmpiricalMeasure, spec: &KernelSpec) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), found: q.dim() });
    }
    spec.check_dim(p.dim())?;
    let row = |(z, beta): (&[f64], f64)| -> f64 {
        if beta == 0.0 {
            return 0.0;
        }
        let s: f64 = q.iter().map(|(y, gamma)| gamma * spec.eval_unchecked(z, y)).sum();
        beta * s
    };
    let rows: Vec<f64> = if p.len() * q.len() >= 4096 {
        let atoms: Vec<(&[f64], f64)> = p.iter().collect();
        atoms.into_par_iter().map(row).collect()
    } else {
        p.iter().map(row).collect()
    };
    Ok(rows.iter().sum())
}

/// Squared RKHS distance between the mean embeddings of two discrete measures.
pub fn mmd_squared(p: &EmpiricalMeasure, q: &EmpiricalMeasure, spec: &KernelSpec) -> Result<f64> {
    let pp = inner_product(p, p, spec)?;
    let qq = inner_product(q, q, spec)?;
    // Canonical argument order makes the cross term, and so the distance, exactly symmetric.
    let pq = if canonical_order(p, q) == std::cmp::Ordering::Greater {
        inner_product(q, p, spec)?
    } else {
        inner_product(p, q, spec)?
    };
    Ok(clamp_mmd(pp + qq - 2.0 * pq))
}

fn canonical_order(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> std::cmp::Ordering {
    let lex = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
    };
    p.len().cmp(&q.len()).then_with(|| lex(p.coords(), q.coords())).then_with(|| lex(p.weights(), q.weights()))
}

/// `‖P − Q‖_{F_k}`.
pub fn mmd(p: &EmpiricalMeasure, q: &EmpiricalMeasure, spec: &KernelSpec) -> Result<f64> {
    mmd_squared(p, q, spec).map(f64::sqrt)
}

pub(crate) fn clamp_mmd(v: f64) -> f64 {
    if (-MMD_CLAMP..0.0).contains(&v) {
        0.0
    } else {
        // Larger negative values would signal a non-PSD kernel; surface them
        // as NaN after sqrt rather than hiding them.
        v
    }
}

/// Median of the pairwise Euclidean distances between distinct points.
///
/// At most [`BANDWIDTH_SUBSAMPLE`] points are used, taken with a fixed stride.
pub fn median_bandwidth(points: &[Vec<f64>]) -> Result<f64> {
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    median_bandwidth_of(&refs)
}

/// [`median_bandwidth`] over the pooled atoms of several measures.
pub fn median_bandwidth_pooled(measures: &[EmpiricalMeasure]) -> Result<f64> {
    let refs: Vec<&[f64]> = measures.iter().flat_map(|m| m.atoms()).collect();
    median_bandwidth_of(&refs)
}

fn median_bandwidth_of(points: &[&[f64]]) -> Result<f64> {
    let dim = points.first().map_or(0, |p| p.len());
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
    }
    let stride = points.len().div_ceil(BANDWIDTH_SUBSAMPLE).max(1);
    let sample: Vec<&[f64]> = points.iter().step_by(stride).copied().collect();
    let mut dists = Vec::with_capacity(sample.len() * sample.len().saturating_sub(1) / 2);
    for i in 0..sample.len() {
        for j in 0..i {
            let d2: f64 = sample[i].iter().zip(sample[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 > 0.0 {
                dists.push(d2.sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::Degenerate("need at least two distinct points for the median bandwidth".into()));
    }
    let mid = dists.len() / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if dists.len() % 2 == 1 {
        return Ok(upper);
    }
    let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(0.5 * (lower + upper))
}

/// Hellinger distance between `N(μ₁, Σ₁)` and `N(μ₂, Σ₂)`.
pub fn hellinger_gaussian(
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    sigma2: &DMatrix<f64>,
) -> Result<f64> {
    let p = mu1.len();
    for (what, rows, cols) in [
        ("mu2", mu2.len(), 1),
        ("sigma1", sigma1.nrows(), sigma1.ncols()),
        ("sigma2", sigma2.nrows(), sigma2.ncols()),
    ] {
        if rows != p || (what != "mu2" && cols != p) {
            return Err(Error::DimensionMismatch { expected: p, found: rows });
        }
    }
    let c1 = check_spd(sigma1, "sigma1")?;
    let c2 = check_spd(sigma2, "sigma2")?;
    let avg = (sigma1 + sigma2) * 0.5;
    let ca = check_spd(&avg, "(sigma1 + sigma2) / 2")?;
    let delta = mu1 - mu2;
    let quad = delta.dot(&ca.solve(&delta));
    // Log-determinants via Cholesky diagonals keep the ratio stable in high dimension.
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_coef = 0.25 * (logdet(&c1) + logdet(&c2)) - 0.5 * logdet(&ca);
    let h2 = 1.0 - (log_coef - quad / 8.0).exp();
    Ok(h2.max(0.0).sqrt())
}

/// Hellinger distance between two members of a natural exponential family
/// with log-partition function `G`.
pub fn hellinger_expfam<G>(log_partition: G, theta1: &[f64], theta2: &[f64]) -> Result<f64>
where
    G: Fn(&[f64]) -> f64,
{
    if theta1.len() != theta2.len() {
        return Err(Error::DimensionMismatch { expected: theta1.len(), found: theta2.len() });
    }
    let mid: Vec<f64> = theta1.iter().zip(theta2).map(|(a, b)| 0.5 * (a + b)).collect();
    let (g1, g2, gm) = (log_partition(theta1), log_partition(theta2), log_partition(&mid));
    if !(g1.is_finite() && g2.is_finite() && gm.is_finite()) {
        return Err(Error::NonFinite("log-partition function".into()));
    }
    // Convexity makes the bracket nonnegative; tiny negatives are roundoff.
    let bracket = (g1 + g2 - 2.0 * gm).max(0.0);
    let h2 = 1.0 - (-0.5 * bracket).exp();
    Ok(h2.max(0.0).sqrt())
}

pub(crate) fn check_spd(a: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::NotPositiveDefinite(format!("{what} is not a non-empty square matrix")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
            }
        }
    }
    a.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(format!("Cholesky of {what} failed")))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum KernelRepr {
    Gaussian {
        h: f64,
    },
    Mahalanobis {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(repr: KernelRepr) -> Result<Self> {
        match repr {
            KernelRepr::Gaussian { h } => KernelSpec::isotropic(h),
            KernelRepr::Mahalanobis { a } => {
                let p = a.len();
                if a.iter().any(|row| row.len() != p) {
                    return Err(Error::invalid("kernel scale matrix must be square"));
                }
                KernelSpec::mahalanobis(DMatrix::from_row_iterator(p, p, a.into_iter().flatten()))
            }
        }
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(spec: KernelSpec) -> Self {
        match spec {
            KernelSpec::IsotropicGaussian { bandwidth } => KernelRepr::Gaussian { h: bandwidth },
            KernelSpec::MahalanobisGaussian { scale } => KernelRepr::Mahalanobis {
                a: scale.row_iter().map(|r| r.iter().copied().collect()).collect(),
            },
        }
    }
}
