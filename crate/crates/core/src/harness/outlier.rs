//! Coverage of credible intervals for a Gaussian mean under one growing outlier.
//!
//! Each data set holds `n − 1` standard normal draws plus one outlier at
//! `i · max|xⱼ|`, for `i = 1..=max_outlier`. The full posterior, the
//! M-posterior and the consensus baseline are compared through the
//! frequency with which their equal-tailed intervals cover the true mean 0.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{consensus_baseline, m_posterior, sample_subsets, KernelChoice, MPosteriorConfig, Multiplicity};
use crate::bayes::{self, gaussian_subset_posterior, partition, PartitionStrategy, Prior};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::measures::EmpiricalMeasure;
use crate::medians::WeiszfeldOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub replications: usize,
    /// Observations per data set, the outlier included.
    pub n: usize,
    pub m: usize,
    pub max_outlier: usize,
    /// Tail probabilities `α`; intervals have nominal level `1 − α`.
    pub alphas: Vec<f64>,
    pub draws_per_subset: usize,
    pub full_draws: usize,
    /// Known observation variance.
    pub sigma2: f64,
    /// Multiplier on the outlier magnitude; 0 gives clean data.
    pub outlier_scale: f64,
    /// `None` uses the Gaussian kernel matched to the Hellinger distance of
    /// the subset sample-mean model, `A = (n/m) / (8σ²)`.
    pub kernel: Option<KernelChoice>,
    pub weiszfeld: WeiszfeldOptions,
    pub threshold: bool,
    pub seed: u64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            replications: 50,
            n: 100,
            m: 10,
            max_outlier: 25,
            alphas: vec![0.2, 0.15, 0.10, 0.05],
            draws_per_subset: 100,
            full_draws: 1000,
            sigma2: 1.0,
            outlier_scale: 1.0,
            kernel: None,
            weiszfeld: WeiszfeldOptions::default(),
            threshold: true,
            seed: 0,
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::invalid(msg.to_string()));
        if self.replications == 0 {
            return fail("replications must be at least 1");
        }
        if self.n < 2 || self.m == 0 || 2 * self.m > self.n {
            return fail("need n >= 2 and 1 <= m <= n/2");
        }
        if self.max_outlier == 0 {
            return fail("max_outlier must be at least 1");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return fail("levels must lie in (0, 1)");
        }
        if self.draws_per_subset == 0 || self.full_draws == 0 {
            return fail("draw counts must be positive");
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return fail("sigma2 must be positive");
        }
        if !(self.outlier_scale.is_finite() && self.outlier_scale >= 0.0) {
            return fail("outlier_scale must be nonnegative");
        }
        Ok(())
    }

    fn kernel_choice(&self) -> Result<KernelChoice> {
        match &self.kernel {
            Some(k) => Ok(k.clone()),
            None => {
                let l = (self.n / self.m) as f64;
                Ok(KernelChoice::Fixed(KernelSpec::mahalanobis(DMatrix::from_element(1, 1, l / (8.0 * self.sigma2)))?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MPosterior,
    FullPosterior,
    Consensus,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MPosterior, Method::FullPosterior, Method::Consensus];

    pub fn name(self) -> &'static str {
        match self {
            Method::MPosterior => "m_posterior",
            Method::FullPosterior => "full_posterior",
            Method::Consensus => "consensus",
        }
    }
}

/// Aggregate over replications for one (outlier index, level, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub outlier_index: usize,
    pub nominal_level: f64,
    pub method: Method,
    pub coverage: f64,
    pub mean_width: f64,
    /// `(width − width_full) / width_full`, averaged over replications.
    pub mean_rel_width_diff: f64,
    pub median_rel_width_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replications: usize,
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    pub fn get(&self, outlier_index: usize, nominal_level: f64, method: Method) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| {
            r.outlier_index == outlier_index && (r.nominal_level - nominal_level).abs() < 1e-9 && r.method == method
        })
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "outlier_index",
            "nominal_level",
            "method",
            "coverage",
            "mean_width",
            "mean_rel_width_diff",
            "median_rel_width_diff",
        ])?;
        for r in &self.rows {
            wtr.write_record([
                r.outlier_index.to_string(),
                r.nominal_level.to_string(),
                r.method.name().to_string(),
                r.coverage.to_string(),
                r.mean_width.to_string(),
                r.mean_rel_width_diff.to_string(),
                r.median_rel_width_diff.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Interval endpoints for one data set: `[level][method] -> (lower, upper)`.
type Intervals = Vec<[(f64, f64); 3]>;

/// The `n` observations of one data set with outlier index `i`.
pub(crate) fn outlier_data<R: Rng + ?Sized>(n: usize, i: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n - 1).map(|_| rng.sample(StandardNormal)).collect();
    let max_abs = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    x.push(scale * i as f64 * max_abs);
    x
}

fn one_data_set(cfg: &OutlierConfig, kernel: &KernelChoice, rep: usize, i: usize) -> Result<Intervals> {
    let stream = bayes::derive_seed(cfg.seed, rep as u64);
    let mut rng = bayes::rng_for(stream, i as u64);
    let x = outlier_data(cfg.n, i, cfg.outlier_scale, &mut rng);
    let data: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();

    let full = gaussian_subset_posterior(&data, &Prior::Flat, cfg.sigma2, 1)?.sample(cfg.full_draws, &mut rng)?;

    let plan = partition(cfg.n, cfg.m, PartitionStrategy::RandomDisjoint, rng.next_u64())?;
    let groups = plan.split(&data);
    let mp_cfg = MPosteriorConfig {
        m_subsets: cfg.m,
        kernel: kernel.clone(),
        draws_per_subset: cfg.draws_per_subset,
        weiszfeld: cfg.weiszfeld,
        multiplicity: Multiplicity::Auto,
        threshold: cfg.threshold,
        seed: rng.next_u64(),
    };
    let subsets = sample_subsets(&groups, &Prior::Flat, cfg.sigma2, &mp_cfg)?;
    let mp = m_posterior(&subsets, &mp_cfg)?;

    // The consensus baseline combines ordinary subset posteriors.
    let plain = MPosteriorConfig { multiplicity: Multiplicity::Fixed(1), seed: rng.next_u64(), ..mp_cfg };
    let consensus = consensus_baseline(&sample_subsets(&groups, &Prior::Flat, cfg.sigma2, &plain)?)?;

    let levels: Vec<f64> = cfg.alphas.iter().flat_map(|a| [a / 2.0, 1.0 - a / 2.0]).collect();
    let ends = |m: &EmpiricalMeasure| m.weighted_quantiles(&levels);
    let (q_mp, q_full, q_cons) = (ends(&mp.measure)?, ends(&full)?, ends(&consensus)?);
    Ok((0..cfg.alphas.len())
        .map(|k| {
            let pick = |q: &[f64]| (q[2 * k], q[2 * k + 1]);
            [pick(&q_mp), pick(&q_full), pick(&q_cons)]
        })
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every (replication, outlier index) data set in parallel and
/// aggregates coverage, widths and relative widths.
pub fn run_outlier_experiment(cfg: &OutlierConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let kernel = cfg.kernel_choice()?;
    let jobs: Vec<(usize, usize)> =
        (1..=cfg.max_outlier).flat_map(|i| (0..cfg.replications).map(move |r| (i, r))).collect();
    let results: Vec<Intervals> =
        jobs.par_iter().map(|&(i, r)| one_data_set(cfg, &kernel, r, i)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (i, per_i) in (1..=cfg.max_outlier).zip(results.chunks(cfg.replications)) {
        for (k, &alpha) in cfg.alphas.iter().enumerate() {
            for (mi, method) in Method::ALL.into_iter().enumerate() {
                let mut covered = 0usize;
                let mut width_sum = 0.0;
                let mut rel = Vec::with_capacity(cfg.replications);
                for rep in per_i {
                    let (lo, hi) = rep[k][mi];
                    covered += usize::from(lo <= 0.0 && 0.0 <= hi);
                    width_sum += hi - lo;
                    let (flo, fhi) = rep[k][1];
                    rel.push(((hi - lo) - (fhi - flo)) / (fhi - flo));
                }
                let n = cfg.replications as f64;
                rows.push(CoverageRow {
                    outlier_index: i,
                    nominal_level: 1.0 - alpha,
                    method,
                    coverage: covered as f64 / n,
                    mean_width: width_sum / n,
                    mean_rel_width_diff: rel.iter().sum::<f64>() / n,
                    median_rel_width_diff: median(&mut rel),
                });
            }
        }
    }
    Ok(CoverageReport { replications: cfg.replications, rows })
}
