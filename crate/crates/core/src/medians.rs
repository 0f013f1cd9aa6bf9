//! Medians of probability measures.
//!
//! The geometric median of `Q₁..Q_m` in the RKHS is a convex combination
//! `Σ wⱼ Qⱼ`, so it is found by iterating on the weight vector alone. With
//! `S[i][j] = ⟨Qᵢ, Qⱼ⟩` precomputed, the distance from the mixture to `Qᵢ` is
//! `√(wᵀSw − 2(Sw)ᵢ + Sᵢᵢ)` and no atom-level work happens inside the loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelSpec};
use crate::measures::{validate_simplex, EmpiricalMeasure};

/// Distances below this value are clamped before inversion in Weiszfeld's update.
pub const DISTANCE_FLOOR: f64 = 1e-10;

/// Gram matrix of subset measures in the RKHS.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductMatrix(DMatrix<f64>);

impl InnerProductMatrix {
    /// `S[i][j] = ⟨Qᵢ, Qⱼ⟩`. The upper triangle is computed (in parallel) and mirrored.
    pub fn from_measures(measures: &[EmpiricalMeasure], spec: &KernelSpec) -> Result<Self> {
        let first = measures.first().ok_or_else(|| Error::invalid("need at least one measure"))?;
        if let Some(q) = measures.iter().find(|q| q.dim() != first.dim()) {
            return Err(Error::DimensionMismatch { expected: first.dim(), found: q.dim() });
        }
        let m = measures.len();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| kernels::inner_product(&measures[i], &measures[j], spec))
            .collect::<Result<_>>()?;
        let mut s = DMatrix::zeros(m, m);
        for (&(i, j), v) in pairs.iter().zip(values) {
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
        Ok(Self(s))
    }

    /// Wraps a precomputed matrix after checking symmetry, unit-bounded
    /// diagonal and positive semidefiniteness.
    pub fn from_matrix(s: DMatrix<f64>) -> Result<Self> {
        let m = s.nrows();
        if m == 0 || s.ncols() != m {
            return Err(Error::invalid("inner-product matrix must be square and non-empty"));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inner-product matrix".into()));
        }
        for i in 0..m {
            if s[(i, i)] > 1.0 + 1e-10 {
                return Err(Error::invalid(format!("diagonal entry {i} exceeds 1: {}", s[(i, i)])));
            }
            for j in 0..i {
                if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 {
                    return Err(Error::invalid(format!("inner-product matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        let min_eig = s.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-8 {
            return Err(Error::invalid(format!("inner-product matrix not PSD (min eigenvalue {min_eig})")));
        }
        Ok(Self(s))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `‖Σ wⱼ Qⱼ − Qᵢ‖_{F_k}` for every `i`.
    pub fn distances(&self, w: &DVector<f64>) -> DVector<f64> {
        let sw = &self.0 * w;
        let wsw = w.dot(&sw);
        DVector::from_iterator(
            self.size(),
            (0..self.size()).map(|i| kernels::clamp_mmd(wsw - 2.0 * sw[i] + self.0[(i, i)]).max(0.0).sqrt()),
        )
    }

    /// `Σᵢ ‖Σ wⱼ Qⱼ − Qᵢ‖_{F_k}`, the geometric-median objective.
    pub fn objective(&self, w: &[f64]) -> f64 {
        self.distances(&DVector::from_column_slice(w)).sum()
    }

    /// `‖Σ (aⱼ − bⱼ) Qⱼ‖_{F_k}`.
    pub fn mixture_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let d = a - b;
        d.dot(&(&self.0 * &d)).max(0.0).sqrt()
    }
}

/// Stopping rule for [`weiszfeld`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeiszfeldOptions {
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for WeiszfeldOptions {
    fn default() -> Self {
        Self { epsilon: 1e-8, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeiszfeldResult {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the starting point followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
}

/// Weiszfeld's fixed-point iteration on mixture weights.
///
/// Starts from uniform weights and repeats
/// `wⱼ ← dⱼ⁻¹ / Σᵢ dᵢ⁻¹` with `dⱼ = ‖Σ wᵢ Qᵢ − Qⱼ‖_{F_k}` (floored at
/// [`DISTANCE_FLOOR`]) until two successive mixtures are within `epsilon`
/// of each other in RKHS norm.
pub fn weiszfeld(s: &InnerProductMatrix, opts: WeiszfeldOptions) -> Result<WeiszfeldResult> {
    if !(opts.epsilon.is_finite() && opts.epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let m = s.size();
    let mut w = DVector::from_element(m, 1.0 / m as f64);
    let mut dist = s.distances(&w);
    let mut trace = vec![dist.sum()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let inv = dist.map(|d| 1.0 / d.max(DISTANCE_FLOOR));
        let next = &inv / inv.sum();
        let step = s.mixture_distance(&next, &w);
        w = next;
        iterations += 1;
        dist = s.distances(&w);
        trace.push(dist.sum());
        if step <= opts.epsilon {
            converged = true;
            break;
        }
    }
    Ok(WeiszfeldResult { weights: w.iter().copied().collect(), iterations, converged, objective_trace: trace })
}

/// Zeroes weights below `1/(2m)` and renormalizes the rest.
pub fn threshold_weights(w: &[f64], m: usize) -> Result<Vec<f64>> {
    if m != w.len() {
        return Err(Error::invalid(format!("weight vector of length {} with m = {m}", w.len())));
    }
    validate_simplex(w, 1e-9)?;
    let cutoff = 1.0 / (2.0 * m as f64);
    if w.iter().all(|&v| v >= cutoff) {
        return Ok(w.to_vec());
    }
    let kept: Vec<f64> = w.iter().map(|&v| if v >= cutoff { v } else { 0.0 }).collect();
    // The largest entry is at least 1/m up to the 1e-9 slack, so the kept mass is positive.
    let total: f64 = kept.iter().sum();
    Ok(kept.into_iter().map(|v| v / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMedianResult {
    pub index: usize,
    pub eps_star: f64,
}

/// The point whose smallest ball containing more than half of the points
/// has minimal radius. `eps_star` is half that radius; ties go to the lowest
/// index.
pub fn metric_median(d: &DMatrix<f64>) -> Result<MetricMedianResult> {
    let m = d.nrows();
    if m == 0 || d.ncols() != m {
        return Err(Error::invalid("distance matrix must be square and non-empty"));
    }
    for i in 0..m {
        if d[(i, i)] != 0.0 {
            return Err(Error::invalid(format!("distance matrix has nonzero diagonal at {i}")));
        }
        for j in 0..m {
            let v = d[(i, j)];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("distance matrix entry ({i}, {j}) = {v}")));
            }
            if v != d[(j, i)] {
                return Err(Error::invalid(format!("distance matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let rank = m / 2;
    let mut best = MetricMedianResult { index: 0, eps_star: f64::INFINITY };
    let mut column = Vec::with_capacity(m);
    for j in 0..m {
        column.clear();
        column.extend(d.column(j).iter().copied());
        column.sort_by(f64::total_cmp);
        let radius = column[rank];
        if radius / 2.0 < best.eps_star {
            best = MetricMedianResult { index: j, eps_star: radius / 2.0 };
        }
    }
    Ok(best)
}

/// `ψ(α, q) = (1−α) ln((1−α)/(1−q)) + α ln(α/q)`: the Kullback–Leibler
/// divergence between Bernoulli(α) and Bernoulli(q).
pub fn psi(alpha: f64, q: f64) -> Result<f64> {
    if !(0.0 < q && q < alpha && alpha < 1.0) {
        return Err(Error::invalid(format!("psi needs 0 < q < alpha < 1, got alpha = {alpha}, q = {q}")));
    }
    Ok((1.0 - alpha) * ((1.0 - alpha) / (1.0 - q)).ln() + alpha * (alpha / q).ln())
}

/// Parameters of the median concentration bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub alpha: f64,
    pub q: f64,
    pub gamma: f64,
    pub m: usize,
}

impl ConcentrationParams {
    pub fn new(alpha: f64, q: f64, gamma: f64, m: usize) -> Result<Self> {
        if !(0.0 < q && q < alpha && alpha < 0.5) {
            return Err(Error::invalid(format!("need 0 < q < alpha < 1/2, got alpha = {alpha}, q = {q}")));
        }
        if !(0.0..(alpha - q) / (1.0 - q)).contains(&gamma) {
            return Err(Error::invalid(format!(
                "gamma must lie in [0, (alpha - q)/(1 - q)) = [0, {}), got {gamma}",
                (alpha - q) / (1.0 - q)
            )));
        }
        if m == 0 {
            return Err(Error::invalid("m must be positive"));
        }
        Ok(Self { alpha, q, gamma, m })
    }

    /// Dilation of the geometric median: `(1−α)√(1/(1−2α))`.
    pub fn c_alpha(&self) -> f64 {
        (1.0 - self.alpha) * (1.0 / (1.0 - 2.0 * self.alpha)).sqrt()
    }

    /// `exp(−m(1−γ) ψ((α−γ)/(1−γ), q))`, the failure bound of the geometric median at radius `C_α ε`.
    pub fn geometric_bound(&self) -> f64 {
        let a = (self.alpha - self.gamma) / (1.0 - self.gamma);
        (-(self.m as f64) * (1.0 - self.gamma) * psi(a, self.q).expect("validated")).exp()
    }

    /// `exp(−m(1−γ) ψ((½−γ)/(1−γ), q))`, the failure bound of the metric median at radius `3ε`.
    pub fn metric_bound(&self) -> Result<f64> {
        let a = (0.5 - self.gamma) / (1.0 - self.gamma);
        Ok((-(self.m as f64) * (1.0 - self.gamma) * psi(a, self.q)?).exp())
    }
}

/// Picks the number of subsets whose M-posterior is the metric median of
/// all candidate M-posteriors under the MMD.
pub fn select_m(candidates: &[(usize, EmpiricalMeasure)], spec: &KernelSpec) -> Result<usize> {
    let (first_m, first) = candidates.first().ok_or_else(|| Error::invalid("no candidates for m"))?;
    if let Some((_, q)) = candidates.iter().find(|(_, q)| q.dim() != first.dim()) {
        return Err(Error::DimensionMismatch { expected: first.dim(), found: q.dim() });
    }
    if candidates.len() == 1 {
        return Ok(*first_m);
    }
    let n = candidates.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| kernels::mmd(&candidates[i].1, &candidates[j].1, spec))
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(dists) {
        d[(i, j)] = v;
        d[(j, i)] = v;
    }
    Ok(candidates[metric_median(&d)?.index].0)
}
