use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use mposterior::bayes::{self, partition, PartitionStrategy, Prior};
use mposterior::harness::{
    self, m_posterior, read_draw_dir, run_concentration_check, run_gp_experiment, run_outlier_experiment,
    AggregateReport, GpExperimentConfig, GpMethod, KernelChoice, MPosteriorConfig, Multiplicity, OutlierConfig,
};
use mposterior::kernels::KernelSpec;
use mposterior::medians::{select_m, ConcentrationParams, WeiszfeldOptions};
use mposterior::{Error, Result};

#[derive(Parser)]
#[command(name = "mposterior", version, about = "Median of subset posteriors: robust, parallel Bayesian aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct AggregationArgs {
    /// `auto`, `gaussian:<h>` or `mahalanobis:<json file>`.
    #[arg(long, default_value = "auto")]
    kernel: String,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Keep the raw Weiszfeld weights instead of dropping subsets below 1/(2m).
    #[arg(long)]
    no_threshold: bool,
}

impl AggregationArgs {
    fn config(&self, m: usize) -> Result<MPosteriorConfig> {
        Ok(MPosteriorConfig {
            m_subsets: m,
            kernel: parse_kernel(&self.kernel)?,
            weiszfeld: WeiszfeldOptions { epsilon: self.epsilon, max_iter: self.max_iter },
            threshold: !self.no_threshold,
            ..Default::default()
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Grid,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate externally produced subset posterior draws into the M-posterior.
    Aggregate {
        /// Directory with one draw file (`w,x1..xp` CSV or JSON) per subset.
        #[arg(long)]
        draws: PathBuf,
        #[command(flatten)]
        agg: AggregationArgs,
        /// Weights and diagnostics (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the M-posterior draws (CSV, or JSON by extension).
        #[arg(long)]
        measure_out: Option<PathBuf>,
    },
    /// Credible-interval coverage under a growing outlier (Gaussian mean model).
    SimulateGaussian {
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        /// Tail probabilities α; intervals have level 1 − α.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.15,0.1,0.05")]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 25)]
        max_outlier: usize,
        #[arg(long, default_value_t = 100)]
        draws_per_subset: usize,
        #[arg(long, default_value_t = 1000)]
        full_draws: usize,
        #[arg(long, default_value_t = 1.0)]
        outlier_scale: f64,
        /// Defaults to the Hellinger-matched kernel of the subset mean model.
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        no_threshold: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GP regression with a block of outliers: full GP versus M-posterior GP.
    SimulateGp {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        case: u8,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long)]
        n_clean: Option<usize>,
        #[arg(long)]
        n_outliers: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        length_scale: Option<f64>,
        #[arg(long, default_value = "auto")]
        kernel: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pointwise curves (CSV).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-replication max error and band coverage (CSV).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Choose the number of subsets as the metric median of candidate M-posteriors.
    SelectM {
        /// Directory with one subdirectory `m<value>` of subset draw files per candidate.
        #[arg(long)]
        draws: PathBuf,
        /// `start:end:step`, inclusive.
        #[arg(long)]
        m_range: String,
        #[command(flatten)]
        agg: AggregationArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of the median concentration bounds.
    Concentration {
        #[arg(long, default_value_t = 7)]
        m: usize,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        #[arg(long, default_value_t = 0.2)]
        q: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a partition of n indices into m groups as JSON.
    Partition {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value = "random")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition a data CSV (`x1..xp`) and write conjugate Gaussian subset posterior draws.
    GaussianDraws {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        /// `flat` or `normal:<tau2>` (zero mean).
        #[arg(long, default_value = "flat")]
        prior: String,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Defaults to m.
        #[arg(long)]
        multiplicity: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for `subset_<j>.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the partition plan as JSON.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

fn parse_kernel(arg: &str) -> Result<KernelChoice> {
    if arg == "auto" {
        return Ok(KernelChoice::Auto);
    }
    if let Some(h) = arg.strip_prefix("gaussian:") {
        let h: f64 = h.parse().map_err(|_| Error::InvalidArgument(format!("bad bandwidth in `{arg}`")))?;
        return Ok(KernelChoice::Fixed(KernelSpec::isotropic(h)?));
    }
    if let Some(path) = arg.strip_prefix("mahalanobis:") {
        let text = std::fs::read_to_string(path)?;
        // Either a full kernel spec or the bare row-major matrix.
        if let Ok(spec) = serde_json::from_str::<KernelSpec>(&text) {
            return Ok(KernelChoice::Fixed(spec));
        }
        let rows: Vec<Vec<f64>> = serde_json::from_str(&text)?;
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidArgument("Mahalanobis matrix must be square".into()));
        }
        let a = DMatrix::from_row_iterator(p, p, rows.into_iter().flatten());
        return Ok(KernelChoice::Fixed(KernelSpec::mahalanobis(a)?));
    }
    Err(Error::InvalidArgument(format!("unknown kernel `{arg}`; use auto, gaussian:<h> or mahalanobis:<file>")))
}

fn parse_range(arg: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad m range `{arg}`; expected start:end:step"));
    let parts: Vec<usize> = arg.split(':').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let (start, end, step) = match parts[..] {
        [s, e] => (s, e, 1),
        [s, e, st] => (s, e, st),
        _ => return Err(bad()),
    };
    if start == 0 || step == 0 || end < start {
        return Err(bad());
    }
    Ok((start..=end).step_by(step).collect())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SelectMCandidate {
    m: usize,
    weights: Vec<f64>,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct SelectMReport {
    selected_m: usize,
    kernel: KernelSpec,
    candidates: Vec<SelectMCandidate>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate { draws, agg, out, measure_out } => {
            let subsets = read_draw_dir(&draws)?;
            let cfg = agg.config(subsets.len())?;
            let mp = m_posterior(&subsets, &cfg)?;
            if let Some(path) = measure_out {
                mp.measure.write(path)?;
            }
            write_json(out.as_deref(), &AggregateReport::from(&mp))
        }
        Command::SimulateGaussian {
            reps,
            n,
            m,
            levels,
            max_outlier,
            draws_per_subset,
            full_draws,
            outlier_scale,
            kernel,
            no_threshold,
            seed,
            out,
        } => {
            let cfg = OutlierConfig {
                replications: reps,
                n,
                m,
                max_outlier,
                alphas: levels,
                draws_per_subset,
                full_draws,
                outlier_scale,
                kernel: kernel.as_deref().map(parse_kernel).transpose()?,
                threshold: !no_threshold,
                seed,
                ..Default::default()
            };
            let report = run_outlier_experiment(&cfg)?;
            report.write_csv(output(out.as_deref())?)
        }
        Command::SimulateGp { case, reps, n_clean, n_outliers, m, length_scale, kernel, seed, out, summary } => {
            let mut cfg = GpExperimentConfig::case(case)?;
            cfg.replications = reps;
            cfg.n_clean = n_clean.unwrap_or(cfg.n_clean);
            cfg.n_outliers = n_outliers.unwrap_or(cfg.n_outliers);
            cfg.m = m.unwrap_or(cfg.m);
            cfg.length_scale = length_scale;
            cfg.kernel = parse_kernel(&kernel)?;
            cfg.seed = seed;
            let report = run_gp_experiment(&cfg)?;
            report.write_csv(output(out.as_deref())?)?;
            if let Some(path) = summary {
                report.write_summary_csv(File::create(path)?)?;
            }
            eprintln!(
                "m_posterior wins {}/{}; mean max error m_posterior {:.3}, full {:.3}; mean band coverage m_posterior {:.3}",
                report.m_posterior_wins(),
                report.replications.len(),
                report.mean_max_error(GpMethod::MPosteriorGp),
                report.mean_max_error(GpMethod::FullGp),
                report.mean_band_coverage(GpMethod::MPosteriorGp),
            );
            Ok(())
        }
        Command::SelectM { draws, m_range, agg, out } => {
            let ms = parse_range(&m_range)?;
            let mut candidates = Vec::with_capacity(ms.len());
            let mut summaries = Vec::with_capacity(ms.len());
            for m in ms {
                let subsets = read_draw_dir(draws.join(format!("m{m}")))?;
                if subsets.len() != m {
                    return Err(Error::InvalidArgument(format!(
                        "directory m{m} holds {} draw files, expected {m}",
                        subsets.len()
                    )));
                }
                let mp = m_posterior(&subsets, &agg.config(m)?)?;
                summaries.push(SelectMCandidate {
                    m,
                    weights: mp.weights.clone(),
                    iterations: mp.weiszfeld.iterations,
                    converged: mp.weiszfeld.converged,
                });
                candidates.push((m, mp.measure));
            }
            let measures: Vec<_> = candidates.iter().map(|(_, q)| q.clone()).collect();
            let kernel = parse_kernel(&agg.kernel)?.resolve(&measures)?;
            let selected_m = select_m(&candidates, &kernel)?;
            write_json(out.as_deref(), &SelectMReport { selected_m, kernel, candidates: summaries })
        }
        Command::Concentration { m, alpha, q, gamma, trials, seed, out } => {
            let params = ConcentrationParams::new(alpha, q, gamma, m)?;
            let report = run_concentration_check(params, trials, seed)?;
            write_json(out.as_deref(), &report)
        }
        Command::Partition { n, m, strategy, seed, out } => {
            let strategy = match strategy {
                StrategyArg::Random => PartitionStrategy::RandomDisjoint,
                StrategyArg::Grid => PartitionStrategy::GridStrided,
            };
            write_json(out.as_deref(), &partition(n, m, strategy, seed)?)
        }
        Command::GaussianDraws { data, m, sigma2, prior, draws, multiplicity, seed, out, plan: plan_out } => {
            let rows = read_data_csv(&data)?;
            let p = rows.first().map_or(0, Vec::len);
            let prior = match prior.as_str() {
                "flat" => Prior::Flat,
                other => {
                    let tau2 = other
                        .strip_prefix("normal:")
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown prior `{other}`")))?;
                    Prior::Normal { mean: vec![0.0; p], variance: tau2 }
                }
            };
            let cfg = MPosteriorConfig {
                m_subsets: m,
                draws_per_subset: draws,
                multiplicity: multiplicity.map_or(Multiplicity::Auto, Multiplicity::Fixed),
                seed,
                ..Default::default()
            };
            cfg.validate()?;
            let plan = partition(rows.len(), m, PartitionStrategy::RandomDisjoint, seed)?;
            let subsets = harness::sample_subsets(&plan.split(&rows), &prior, sigma2, &MPosteriorConfig {
                seed: bayes::derive_seed(seed, u64::MAX),
                ..cfg
            })?;
            std::fs::create_dir_all(&out)?;
            let width = m.to_string().len();
            for (j, q) in subsets.iter().enumerate() {
                q.write(out.join(format!("subset_{j:0width$}.csv")))?;
            }
            match plan_out {
                Some(path) => write_json(Some(&path), &plan),
                None => Ok(()),
            }
        }
    }
}

/// Reads a headed CSV of numeric columns `x1..xp`.
fn read_data_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let row = record?
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number `{f}` in {}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
