//! GP regression of `f₀(x) = 1 + 3 sin(2πx − π)` with a block of gross outliers.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{m_posterior, KernelChoice, MPosteriorConfig, Multiplicity};
use crate::bayes::{self, gp_subset_posterior, partition, GaussianPosterior, GpModel, PartitionStrategy};
use crate::error::{Error, Result};
use crate::kernels::median_bandwidth;
use crate::measures::EmpiricalMeasure;
use crate::medians::WeiszfeldOptions;

pub fn f0(x: f64) -> f64 {
    1.0 + 3.0 * (2.0 * PI * x - PI).sin()
}

fn linspace(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpExperimentConfig {
    /// Clean observations at equidistant inputs in `[0, 1]`.
    pub n_clean: usize,
    /// Outliers on their own equidistant grid in `[0, 1]`.
    pub n_outliers: usize,
    pub m: usize,
    pub replications: usize,
    pub grid_points: usize,
    pub draws_per_subset: usize,
    pub full_draws: usize,
    /// GP nugget.
    pub noise_variance: f64,
    /// Standard deviation of the noise added to every observation.
    pub observation_sd: f64,
    /// Outliers sit at `outlier_factor · max f₀(clean inputs)`.
    pub outlier_factor: f64,
    /// `None`: median pairwise distance of the training inputs.
    pub length_scale: Option<f64>,
    /// Center and scale the responses of every fit to mean 0 and variance 1,
    /// mapping the posterior back afterwards.
    pub standardize: bool,
    pub multiplicity: Multiplicity,
    pub kernel: KernelChoice,
    pub weiszfeld: WeiszfeldOptions,
    pub threshold: bool,
    pub seed: u64,
}

impl Default for GpExperimentConfig {
    fn default() -> Self {
        Self::case(1).expect("case 1 exists")
    }
}

impl GpExperimentConfig {
    /// Case 1: 90 clean points, 10 outliers, 10 subsets. Case 2: 980, 20, 20.
    pub fn case(case: u8) -> Result<Self> {
        let (n_clean, n_outliers, m) = match case {
            1 => (90, 10, 10),
            2 => (980, 20, 20),
            other => return Err(Error::invalid(format!("unknown GP case {other}; expected 1 or 2"))),
        };
        Ok(Self {
            n_clean,
            n_outliers,
            m,
            replications: 30,
            grid_points: 100,
            draws_per_subset: 100,
            full_draws: 1000,
            noise_variance: 0.01,
            observation_sd: 1.0,
            outlier_factor: 10.0,
            length_scale: None,
            standardize: true,
            multiplicity: Multiplicity::Auto,
            kernel: KernelChoice::Auto,
            weiszfeld: WeiszfeldOptions::default(),
            threshold: true,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_clean + self.n_outliers;
        if self.n_clean < 2 {
            return Err(Error::invalid("need at least two clean observations"));
        }
        if self.m == 0 || 2 * self.m > n {
            return Err(Error::invalid(format!("need 1 <= m <= n/2, got m = {}, n = {n}", self.m)));
        }
        if self.replications == 0 || self.grid_points == 0 || self.draws_per_subset == 0 || self.full_draws == 0 {
            return Err(Error::invalid("replications, grid points and draw counts must be positive"));
        }
        if !(self.noise_variance > 0.0 && self.observation_sd >= 0.0) {
            return Err(Error::invalid("noise variance must be positive and observation sd nonnegative"));
        }
        if self.multiplicity == Multiplicity::Fixed(0) {
            return Err(Error::invalid("multiplicity must be at least 1"));
        }
        Ok(())
    }

    /// Value the outliers are placed at before noise.
    pub fn outlier_level(&self) -> f64 {
        self.outlier_factor * linspace(self.n_clean).into_iter().map(f0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Inputs and responses for one replication, ordered by input.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let level = self.outlier_level();
        let mut points: Vec<(f64, f64)> = linspace(self.n_clean)
            .into_iter()
            .map(|x| (x, f0(x) + self.observation_sd * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        if self.n_outliers > 0 {
            points.extend(
                linspace(self.n_outliers)
                    .into_iter()
                    .map(|x| (x, level + self.observation_sd * rng.sample::<f64, _>(StandardNormal))),
            );
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.into_iter().unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMethod {
    MPosteriorGp,
    FullGp,
}

impl GpMethod {
    pub fn name(self) -> &'static str {
        match self {
            GpMethod::MPosteriorGp => "m_posterior_gp",
            GpMethod::FullGp => "full_gp",
        }
    }
}

/// Pointwise summaries of posterior draws over the prediction grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpCurve {
    pub method: GpMethod,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_abs_error: f64,
    pub band_coverage: f64,
}

impl GpCurve {
    fn from_draws(method: GpMethod, draws: &EmpiricalMeasure, truth: &[f64]) -> Result<Self> {
        let g = truth.len();
        let (mut median, mut lower, mut upper) = (Vec::with_capacity(g), Vec::with_capacity(g), Vec::with_capacity(g));
        for k in 0..g {
            let q = draws.marginal(k)?.weighted_quantiles(&[0.025, 0.5, 0.975])?;
            lower.push(q[0]);
            median.push(q[1]);
            upper.push(q[2]);
        }
        let max_abs_error = median.iter().zip(truth).map(|(m, f)| (m - f).abs()).fold(0.0, f64::max);
        let covered = (0..g).filter(|&k| lower[k] <= truth[k] && truth[k] <= upper[k]).count();
        Ok(Self { method, median, lower, upper, max_abs_error, band_coverage: covered as f64 / g as f64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpReplication {
    pub length_scale: f64,
    pub m_posterior: GpCurve,
    pub full: GpCurve,
    pub subset_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpReport {
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub replications: Vec<GpReplication>,
}

impl GpReport {
    /// Replications in which the M-posterior median curve has strictly smaller max error.
    pub fn m_posterior_wins(&self) -> usize {
        self.replications.iter().filter(|r| r.m_posterior.max_abs_error < r.full.max_abs_error).count()
    }

    pub fn mean_band_coverage(&self, method: GpMethod) -> f64 {
        let total: f64 = self.replications.iter().map(|r| r.curve(method).band_coverage).sum();
        total / self.replications.len() as f64
    }

    pub fn mean_max_error(&self, method: GpMethod) -> f64 {
        let total: f64 = self.replications.iter().map(|r| r.curve(method).max_abs_error).sum();
        total / self.replications.len() as f64
    }

    /// Long-format curves: `replication,method,x,f0,median,lower,upper`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["replication", "method", "x", "f0", "median", "lower", "upper"])?;
        for (r, rep) in self.replications.iter().enumerate() {
            for curve in [&rep.m_posterior, &rep.full] {
                for k in 0..self.grid.len() {
                    wtr.write_record([
                        r.to_string(),
                        curve.method.name().to_string(),
                        self.grid[k].to_string(),
                        self.truth[k].to_string(),
                        curve.median[k].to_string(),
                        curve.lower[k].to_string(),
                        curve.upper[k].to_string(),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Per-replication errors and band coverage: `replication,method,max_abs_error,band_coverage`.
    pub fn write_summary_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["replication", "method", "max_abs_error", "band_coverage"])?;
        for (r, rep) in self.replications.iter().enumerate() {
            for curve in [&rep.m_posterior, &rep.full] {
                wtr.write_record([
                    r.to_string(),
                    curve.method.name().to_string(),
                    curve.max_abs_error.to_string(),
                    curve.band_coverage.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

impl GpReplication {
    pub fn curve(&self, method: GpMethod) -> &GpCurve {
        match method {
            GpMethod::MPosteriorGp => &self.m_posterior,
            GpMethod::FullGp => &self.full,
        }
    }
}

fn fit(xs: &[f64], ys: &[f64], model: &GpModel, multiplicity: usize, standardize: bool) -> Result<GaussianPosterior> {
    if !standardize {
        return gp_subset_posterior(xs, ys, model, multiplicity);
    }
    let n = ys.len() as f64;
    let center = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - center).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let scaled: Vec<f64> = ys.iter().map(|y| (y - center) / scale).collect();
    let post = gp_subset_posterior(xs, &scaled, model, multiplicity)?;
    let mean = post.mean().map(|v| v * scale + center);
    GaussianPosterior::new(mean, post.covariance() * (scale * scale), multiplicity)
}

fn one_replication(cfg: &GpExperimentConfig, grid: &[f64], truth: &[f64], rep: usize) -> Result<GpReplication> {
    let mut rng = bayes::rng_for(cfg.seed, rep as u64);
    let (xs, ys) = cfg.simulate(&mut rng);
    let length_scale = match cfg.length_scale {
        Some(l) => l,
        None => median_bandwidth(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>())?,
    };
    let model = GpModel::new(length_scale, cfg.noise_variance, grid.to_vec())?;

    let full_post = fit(&xs, &ys, &model, 1, cfg.standardize)?;
    let full_draws = full_post.sample(cfg.full_draws, &mut rng)?;
    let full = GpCurve::from_draws(GpMethod::FullGp, &full_draws, truth)?;

    let plan = partition(xs.len(), cfg.m, PartitionStrategy::GridStrided, 0)?;
    let multiplicity = cfg.multiplicity.resolve(cfg.m);
    let sample_root = rng.random::<u64>();
    let subsets: Vec<EmpiricalMeasure> = plan
        .groups
        .par_iter()
        .enumerate()
        .map(|(j, g)| {
            let sx: Vec<f64> = g.iter().map(|&i| xs[i]).collect();
            let sy: Vec<f64> = g.iter().map(|&i| ys[i]).collect();
            let post = fit(&sx, &sy, &model, multiplicity, cfg.standardize)?;
            post.sample(cfg.draws_per_subset, &mut bayes::rng_for(sample_root, j as u64))
        })
        .collect::<Result<_>>()?;
    let mp_cfg = MPosteriorConfig {
        m_subsets: cfg.m,
        kernel: cfg.kernel.clone(),
        draws_per_subset: cfg.draws_per_subset,
        weiszfeld: cfg.weiszfeld,
        multiplicity: cfg.multiplicity,
        threshold: cfg.threshold,
        seed: sample_root,
    };
    let mp = m_posterior(&subsets, &mp_cfg)?;
    let m_posterior = GpCurve::from_draws(GpMethod::MPosteriorGp, &mp.measure, truth)?;
    Ok(GpReplication { length_scale, m_posterior, full, subset_weights: mp.weights })
}

/// Fits the full GP and the M-posterior GP on every replication.
pub fn run_gp_experiment(cfg: &GpExperimentConfig) -> Result<GpReport> {
    cfg.validate()?;
    let grid = linspace(cfg.grid_points);
    let truth: Vec<f64> = grid.iter().copied().map(f0).collect();
    let replications = (0..cfg.replications)
        .into_par_iter()
        .map(|r| one_replication(cfg, &grid, &truth, r))
        .collect::<Result<_>>()?;
    Ok(GpReport { grid, truth, replications })
}
