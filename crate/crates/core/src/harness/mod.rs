//! End-to-end M-posterior pipeline, baselines and simulation studies.

mod concentration;
mod gp;
mod outlier;

pub use concentration::{run_concentration_check, ConcentrationReport};
pub use gp::{f0, run_gp_experiment, GpCurve, GpExperimentConfig, GpMethod, GpReplication, GpReport};
pub use outlier::{run_outlier_experiment, CoverageReport, CoverageRow, Method, OutlierConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, gaussian_subset_posterior, partition, PartitionPlan, PartitionStrategy, Prior};
use crate::error::{Error, Result};
use crate::kernels::{median_bandwidth_pooled, KernelSpec};
use crate::measures::{mixture, EmpiricalMeasure};
use crate::medians::{threshold_weights, weiszfeld, InnerProductMatrix, WeiszfeldOptions, WeiszfeldResult};

/// Kernel used to embed subset measures.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    /// Isotropic Gaussian with the median pairwise distance of the pooled draws as bandwidth.
    #[default]
    Auto,
    Fixed(KernelSpec),
}

impl KernelChoice {
    pub fn resolve(&self, measures: &[EmpiricalMeasure]) -> Result<KernelSpec> {
        match self {
            KernelChoice::Auto => KernelSpec::isotropic(median_bandwidth_pooled(measures)?),
            KernelChoice::Fixed(spec) => Ok(spec.clone()),
        }
    }
}

/// Power to which each subset likelihood is raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    /// Equal to the number of subsets.
    #[default]
    Auto,
    Fixed(usize),
}

impl Multiplicity {
    pub fn resolve(self, m_subsets: usize) -> usize {
        match self {
            Multiplicity::Auto => m_subsets,
            Multiplicity::Fixed(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPosteriorConfig {
    pub m_subsets: usize,
    pub kernel: KernelChoice,
    pub draws_per_subset: usize,
    pub weiszfeld: WeiszfeldOptions,
    pub multiplicity: Multiplicity,
    /// Drop subsets whose median weight is below `1/(2m)`.
    pub threshold: bool,
    pub seed: u64,
}

impl Default for MPosteriorConfig {
    fn default() -> Self {
        Self {
            m_subsets: 10,
            kernel: KernelChoice::Auto,
            draws_per_subset: 100,
            weiszfeld: WeiszfeldOptions::default(),
            multiplicity: Multiplicity::Auto,
            threshold: true,
            seed: 0,
        }
    }
}

impl MPosteriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_subsets == 0 {
            return Err(Error::invalid("m_subsets must be at least 1"));
        }
        if self.draws_per_subset == 0 {
            return Err(Error::invalid("draws_per_subset must be at least 1"));
        }
        if self.multiplicity == Multiplicity::Fixed(0) {
            return Err(Error::invalid("multiplicity must be at least 1"));
        }
        Ok(())
    }
}

/// Output of [`m_posterior`].
#[derive(Debug, Clone)]
pub struct MPosterior {
    /// `Σ ŵⱼ Qⱼ`, with every subset atom present (zero-weight subsets included).
    pub measure: EmpiricalMeasure,
    /// Final mixing weights, after thresholding when enabled.
    pub weights: Vec<f64>,
    pub weiszfeld: WeiszfeldResult,
    pub kernel: KernelSpec,
}

/// Diagnostics written by the `aggregate` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub weiszfeld_weights: Vec<f64>,
    pub kernel: KernelSpec,
}

impl From<&MPosterior> for AggregateReport {
    fn from(mp: &MPosterior) -> Self {
        AggregateReport {
            weights: mp.weights.clone(),
            iterations: mp.weiszfeld.iterations,
            converged: mp.weiszfeld.converged,
            objective_trace: mp.weiszfeld.objective_trace.clone(),
            weiszfeld_weights: mp.weiszfeld.weights.clone(),
            kernel: mp.kernel.clone(),
        }
    }
}

/// Aggregates subset posterior draws into the M-posterior: inner products,
/// Weiszfeld, optional thresholding, then the mixture.
pub fn m_posterior(subset_draws: &[EmpiricalMeasure], config: &MPosteriorConfig) -> Result<MPosterior> {
    if subset_draws.is_empty() {
        return Err(Error::invalid("need at least one subset measure"));
    }
    let kernel = config.kernel.resolve(subset_draws)?;
    let s = InnerProductMatrix::from_measures(subset_draws, &kernel)?;
    let result = weiszfeld(&s, config.weiszfeld)?;
    let weights = if config.threshold {
        threshold_weights(&result.weights, subset_draws.len())?
    } else {
        result.weights.clone()
    };
    let measure = match subset_draws {
        [only] => only.clone(),
        _ => mixture(subset_draws, &weights)?,
    };
    Ok(MPosterior { measure, weights, weiszfeld: result, kernel })
}

/// Draw-averaging consensus: the `i`-th output atom is the mean over subsets
/// of their `i`-th draws.
pub fn consensus_baseline(subset_draws: &[EmpiricalMeasure]) -> Result<EmpiricalMeasure> {
    let first = subset_draws.first().ok_or_else(|| Error::invalid("need at least one subset measure"))?;
    let (n, p) = (first.len(), first.dim());
    for q in subset_draws {
        if q.dim() != p {
            return Err(Error::DimensionMismatch { expected: p, found: q.dim() });
        }
        if q.len() != n {
            return Err(Error::invalid(format!("unequal draw counts: {} vs {n}", q.len())));
        }
    }
    let m = subset_draws.len() as f64;
    let mut coords = vec![0.0; n * p];
    for q in subset_draws {
        for (c, x) in coords.iter_mut().zip(q.coords()) {
            *c += x;
        }
    }
    coords.iter_mut().for_each(|c| *c /= m);
    EmpiricalMeasure::from_flat(p, coords, None)
}

/// Everything produced by [`gaussian_pipeline`].
#[derive(Debug, Clone)]
pub struct GaussianPipeline {
    pub plan: PartitionPlan,
    pub subset_draws: Vec<EmpiricalMeasure>,
    pub result: MPosterior,
}

/// Full pipeline for the conjugate Gaussian mean model: random partition,
/// closed-form subset posteriors, seeded draws, aggregation.
pub fn gaussian_pipeline(
    data: &[Vec<f64>],
    prior: &Prior,
    sigma2: f64,
    config: &MPosteriorConfig,
) -> Result<GaussianPipeline> {
    config.validate()?;
    let plan = partition(data.len(), config.m_subsets, PartitionStrategy::RandomDisjoint, config.seed)?;
    let subset_draws = sample_subsets(&plan.split(data), prior, sigma2, config)?;
    let result = m_posterior(&subset_draws, config)?;
    Ok(GaussianPipeline { plan, subset_draws, result })
}

/// Seeded draws from each group's conjugate posterior; group `j` uses the
/// stream derived from `(config.seed, j)`.
pub fn sample_subsets(
    groups: &[Vec<Vec<f64>>],
    prior: &Prior,
    sigma2: f64,
    config: &MPosteriorConfig,
) -> Result<Vec<EmpiricalMeasure>> {
    let multiplicity = config.multiplicity.resolve(groups.len());
    groups
        .par_iter()
        .enumerate()
        .map(|(j, g)| {
            let post = gaussian_subset_posterior(g, prior, sigma2, multiplicity)?;
            post.sample(config.draws_per_subset, &mut bayes::rng_for(config.seed, j as u64))
        })
        .collect()
}

/// Reads every `*.csv` / `*.json` draw file in `dir`, sorted by file name.
pub fn read_draw_dir(dir: impl AsRef<std::path::Path>) -> Result<Vec<EmpiricalMeasure>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no draw files in {}", dir.as_ref().display())));
    }
    paths.iter().map(EmpiricalMeasure::read).collect()
}

/// Standard error of a binomial frequency with success probability `p` over `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
