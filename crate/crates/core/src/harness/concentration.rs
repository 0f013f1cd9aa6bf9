//! Monte-Carlo check of the median concentration bounds.
//!
//! Each trial draws `m` independent estimators of `θ₀ = 0` in `R²` from
//! `N(0, I₂)`; the radius `ε = √(2 ln(1/q))` makes `P(‖θ̂ⱼ‖ > ε) = q`
//! exactly. `⌊γm⌋` estimators are replaced by gross outliers. The geometric
//! median fails when it lands farther than `C_α ε` from the origin, the metric
//! median when it lands farther than `3ε`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binomial_se;
use crate::bayes;
use crate::error::{Error, Result};
use crate::medians::{metric_median, weiszfeld, ConcentrationParams, InnerProductMatrix, WeiszfeldOptions};

const DIM: usize = 2;

/// Distance of corrupted estimators from `θ₀`, in units of `ε`.
const OUTLIER_DISTANCE: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub params: ConcentrationParams,
    pub trials: usize,
    pub epsilon: f64,
    pub c_alpha: f64,
    /// Empirical failure frequency of the clean individual estimators.
    pub q_hat: f64,
    pub geometric_failure: f64,
    pub geometric_bound: f64,
    pub geometric_bound_se: f64,
    pub metric_failure: f64,
    pub metric_bound: f64,
    pub metric_bound_se: f64,
}

impl ConcentrationReport {
    /// Both empirical frequencies are within three binomial standard errors of their bounds.
    pub fn within_bounds(&self) -> bool {
        self.geometric_failure <= self.geometric_bound + 3.0 * self.geometric_bound_se
            && self.metric_failure <= self.metric_bound + 3.0 * self.metric_bound_se
    }
}

struct Trial {
    individual_failures: usize,
    clean: usize,
    geometric_failed: bool,
    metric_failed: bool,
}

fn geometric_median(points: &[[f64; DIM]]) -> Result<[f64; DIM]> {
    // Rescaling leaves the median weights unchanged and keeps the Gram
    // diagonal within the unit bound of an RKHS inner-product matrix.
    let scale = points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let m = points.len();
    let gram = DMatrix::from_fn(m, m, |i, j| (points[i][0] * points[j][0] + points[i][1] * points[j][1]) / scale);
    let s = InnerProductMatrix::from_matrix(gram)?;
    let w = weiszfeld(&s, WeiszfeldOptions { epsilon: 1e-10, max_iter: 10_000 })?.weights;
    let mut out = [0.0; DIM];
    for (p, wj) in points.iter().zip(&w) {
        out[0] += wj * p[0];
        out[1] += wj * p[1];
    }
    Ok(out)
}

fn run_trial(params: &ConcentrationParams, epsilon: f64, root: u64, t: usize) -> Result<Trial> {
    let mut rng = bayes::rng_for(root, t as u64);
    let corrupted = (params.gamma * params.m as f64).floor() as usize;
    let mut points = Vec::with_capacity(params.m);
    let mut individual_failures = 0;
    for j in 0..params.m {
        let p = if j < corrupted {
            let angle: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let r = OUTLIER_DISTANCE * epsilon;
            [r * angle.cos(), r * angle.sin()]
        } else {
            let p = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            individual_failures += usize::from(norm(&p) > epsilon);
            p
        };
        points.push(p);
    }
    let gm = geometric_median(&points)?;
    let d = DMatrix::from_fn(params.m, params.m, |i, j| {
        let (a, b) = (points[i], points[j]);
        // Evaluated in a fixed argument order so D is exactly symmetric.
        let (a, b) = if i <= j { (a, b) } else { (b, a) };
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    });
    let med0 = points[metric_median(&d)?.index];
    Ok(Trial {
        individual_failures,
        clean: params.m - corrupted,
        geometric_failed: norm(&gm) > params.c_alpha() * epsilon,
        metric_failed: norm(&med0) > 3.0 * epsilon,
    })
}

fn norm(p: &[f64; DIM]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt()
}

pub fn run_concentration_check(params: ConcentrationParams, trials: usize, seed: u64) -> Result<ConcentrationReport> {
    // Re-validate: the fields are public.
    let params = ConcentrationParams::new(params.alpha, params.q, params.gamma, params.m)?;
    if trials < 100 {
        return Err(Error::invalid(format!("need at least 100 trials, got {trials}")));
    }
    let epsilon = (2.0 * (1.0 / params.q).ln()).sqrt();
    let results: Vec<Trial> =
        (0..trials).into_par_iter().map(|t| run_trial(&params, epsilon, seed, t)).collect::<Result<_>>()?;
    let n = trials as f64;
    let clean_total: usize = results.iter().map(|t| t.clean).sum();
    let fails: usize = results.iter().map(|t| t.individual_failures).sum();
    let geometric_bound = params.geometric_bound();
    let metric_bound = params.metric_bound()?;
    Ok(ConcentrationReport {
        params,
        trials,
        epsilon,
        c_alpha: params.c_alpha(),
        q_hat: if clean_total > 0 { fails as f64 / clean_total as f64 } else { 0.0 },
        geometric_failure: results.iter().filter(|t| t.geometric_failed).count() as f64 / n,
        geometric_bound,
        geometric_bound_se: binomial_se(geometric_bound, trials),
        metric_failure: results.iter().filter(|t| t.metric_failed).count() as f64 / n,
        metric_bound,
        metric_bound_se: binomial_se(metric_bound, trials),
    })
}
