use mposterior::bayes::{gaussian_subset_posterior, rng_for, Prior};
use mposterior::harness::{
    consensus_baseline, f0, m_posterior, run_concentration_check, run_gp_experiment, run_outlier_experiment,
    GpExperimentConfig, GpMethod, KernelChoice, MPosteriorConfig, Method, OutlierConfig,
};
use mposterior::kernels::{mmd, KernelSpec};
use mposterior::measures::{mixture, EmpiricalMeasure};
use mposterior::medians::{weiszfeld, ConcentrationParams, InnerProductMatrix, WeiszfeldOptions};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn gaussian_cloud(rng: &mut ChaCha8Rng, center: f64, sd: f64, n: usize) -> EmpiricalMeasure {
    let d = Normal::new(center, sd).unwrap();
    EmpiricalMeasure::uniform((0..n).map(|_| vec![d.sample(rng)]).collect()).unwrap()
}

fn random_measures(rng: &mut ChaCha8Rng, m: usize) -> Vec<EmpiricalMeasure> {
    (0..m)
        .map(|_| {
            let n = rng.random_range(1..=8);
            let shift: f64 = rng.random_range(-2.0..2.0);
            let atoms = (0..n)
                .map(|_| (0..2).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            EmpiricalMeasure::uniform(atoms).unwrap()
        })
        .collect()
}

fn fixed(h: f64) -> KernelChoice {
    KernelChoice::Fixed(KernelSpec::isotropic(h).unwrap())
}

#[test]
fn weiszfeld_objective_never_increases() {
    let mut rng = rng_for(1, 0);
    let kernel = KernelSpec::isotropic(1.0).unwrap();
    for _ in 0..200 {
        let m = rng.random_range(2..=12);
        let s = InnerProductMatrix::from_measures(&random_measures(&mut rng, m), &kernel).unwrap();
        let r = weiszfeld(&s, WeiszfeldOptions::default()).unwrap();
        for pair in r.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10, "{:?}", r.objective_trace);
        }
    }
}

#[test]
fn weiszfeld_is_permutation_equivariant() {
    let mut rng = rng_for(2, 0);
    let kernel = KernelSpec::isotropic(1.5).unwrap();
    for _ in 0..50 {
        let measures = random_measures(&mut rng, 6);
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<EmpiricalMeasure> = perm.iter().map(|&i| measures[i].clone()).collect();
        let w = weiszfeld(&InnerProductMatrix::from_measures(&measures, &kernel).unwrap(), WeiszfeldOptions::default())
            .unwrap()
            .weights;
        let wp = weiszfeld(&InnerProductMatrix::from_measures(&permuted, &kernel).unwrap(), WeiszfeldOptions::default())
            .unwrap()
            .weights;
        for (k, &i) in perm.iter().enumerate() {
            assert!((wp[k] - w[i]).abs() < 1e-6, "{w:?} vs {wp:?}");
        }
    }
}

#[test]
fn nested_mixtures_match_the_flat_mixture() {
    let mut rng = rng_for(3, 0);
    let kernel = KernelSpec::isotropic(1.0).unwrap();
    let q = random_measures(&mut rng, 3);
    let inner = mixture(&q[..2], &[0.25, 0.75]).unwrap();
    let nested = mixture(&[inner, q[2].clone()], &[0.4, 0.6]).unwrap();
    let flat = mixture(&q, &[0.1, 0.3, 0.6]).unwrap();
    assert!(mmd(&nested, &flat, &kernel).unwrap() < 1e-7);
}

#[test]
fn corrupted_subsets_barely_move_the_m_posterior() {
    let kernel = KernelSpec::isotropic(1.0).unwrap();
    let cfg = MPosteriorConfig { kernel: KernelChoice::Fixed(kernel.clone()), ..Default::default() };
    let mut close = 0;
    for t in 0..100 {
        let mut rng = rng_for(4, t);
        let clean: Vec<EmpiricalMeasure> = (0..10).map(|_| gaussian_cloud(&mut rng, 0.0, 0.3, 30)).collect();
        let corrupted_count = rng.random_range(1..=2);
        let mut corrupted = clean.clone();
        for q in corrupted.iter_mut().take(corrupted_count) {
            *q = EmpiricalMeasure::dirac(&[1e3]).unwrap();
        }
        let a = m_posterior(&clean, &cfg).unwrap().measure;
        let b = m_posterior(&corrupted, &cfg).unwrap().measure;
        close += usize::from(mmd(&a, &b, &kernel).unwrap() < 0.05);
    }
    assert!(close >= 95, "{close}/100");
}

#[test]
fn nine_clean_subsets_and_one_outlier() {
    let mut rng = rng_for(5, 0);
    let mut subsets: Vec<EmpiricalMeasure> = (0..9).map(|_| gaussian_cloud(&mut rng, 0.0, 0.1f64.sqrt(), 100)).collect();
    subsets.push(gaussian_cloud(&mut rng, 50.0, 0.1f64.sqrt(), 100));
    let mp = m_posterior(&subsets, &MPosteriorConfig::default()).unwrap();
    assert_eq!(mp.weights[9], 0.0);
    assert!(mp.measure.mean()[0].abs() < 0.2, "{}", mp.measure.mean()[0]);
}

#[test]
fn identical_subsets_get_uniform_weights() {
    let mut rng = rng_for(6, 0);
    let q = gaussian_cloud(&mut rng, 1.0, 1.0, 40);
    let kernel = KernelSpec::isotropic(1.0).unwrap();
    let cfg = MPosteriorConfig { kernel: KernelChoice::Fixed(kernel.clone()), ..Default::default() };
    let mp = m_posterior(&vec![q.clone(); 10], &cfg).unwrap();
    for w in &mp.weights {
        assert!((w - 0.1).abs() < 1e-12);
    }
    assert!(mmd(&mp.measure, &q, &kernel).unwrap() < 1e-6);
}

#[test]
fn consensus_of_two_separated_normals() {
    let mut rng = rng_for(7, 0);
    let a = gaussian_cloud(&mut rng, 0.0, 1.0, 10_000);
    let b = gaussian_cloud(&mut rng, 10.0, 1.0, 10_000);
    let c = consensus_baseline(&[a, b]).unwrap();
    assert!((c.mean()[0] - 5.0).abs() < 0.1);
}

#[test]
fn consensus_agrees_with_full_posterior_on_clean_data() {
    let mut rng = rng_for(8, 0);
    let data: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.sample::<f64, _>(StandardNormal) + 2.0]).collect();
    let full = gaussian_subset_posterior(&data, &Prior::Flat, 1.0, 1).unwrap();
    let subsets: Vec<EmpiricalMeasure> = data
        .chunks(40)
        .enumerate()
        .map(|(j, g)| {
            gaussian_subset_posterior(g, &Prior::Flat, 1.0, 1).unwrap().sample(2000, &mut rng_for(8, 1 + j as u64)).unwrap()
        })
        .collect();
    let c = consensus_baseline(&subsets).unwrap();
    // Monte-Carlo error of the mean of 2000 draws with variance 1/400.
    let se = (1.0f64 / 400.0 / 2000.0).sqrt();
    assert!((c.mean()[0] - full.mean()[0]).abs() < 5.0 * se, "{} vs {}", c.mean()[0], full.mean()[0]);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = OutlierConfig {
        replications: 4,
        max_outlier: 3,
        full_draws: 200,
        kernel: Some(fixed(0.6)),
        seed: 11,
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_outlier_experiment(&cfg).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run_outlier_experiment(&cfg).unwrap());

    let gp = GpExperimentConfig { replications: 2, seed: 5, ..Default::default() };
    let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_gp_experiment(&gp).unwrap());
    assert_eq!(a, run_gp_experiment(&gp).unwrap());
}

#[test]
fn clean_data_full_posterior_coverage_is_nominal() {
    let cfg = OutlierConfig { max_outlier: 1, outlier_scale: 0.0, alphas: vec![0.05], seed: 12, ..Default::default() };
    let report = run_outlier_experiment(&cfg).unwrap();
    let c = report.get(1, 0.95, Method::FullPosterior).unwrap().coverage;
    assert!((c - 0.95).abs() <= 0.15, "{c}");
}

#[test]
fn m_posterior_coverage_does_not_degrade_with_outlier_size() {
    let cfg = OutlierConfig { alphas: vec![0.05], seed: 42, ..Default::default() };
    let report = run_outlier_experiment(&cfg).unwrap();
    let cov = |i| report.get(i, 0.95, Method::MPosterior).unwrap().coverage;
    let drop = (1..=25).map(|i| cov(1) - cov(i)).fold(f64::NEG_INFINITY, f64::max);
    assert!(drop <= 0.2, "{drop}");
    assert!(cov(25) >= 0.8);
    assert!(report.get(25, 0.95, Method::FullPosterior).unwrap().coverage <= 0.1);
}

#[test]
fn metric_median_concentrates_under_corruption() {
    for (gamma, m) in [(0.0, 9), (0.2, 10), (1.0 / 7.0, 7)] {
        let params = ConcentrationParams::new(0.45, 0.1, gamma, m).unwrap();
        let r = run_concentration_check(params, 2000, 13).unwrap();
        assert!(r.within_bounds(), "{r:?}");
    }
    let bound = ConcentrationParams::new(0.45, 0.1, 0.0, 9).unwrap().metric_bound().unwrap();
    assert!((bound - 0.0101).abs() < 1e-4, "{bound}");
}

#[test]
fn gp_on_clean_data_is_consistent() {
    let run = |n_clean| {
        let cfg = GpExperimentConfig { n_clean, n_outliers: 0, m: 10, replications: 4, ..Default::default() };
        run_gp_experiment(&cfg).unwrap()
    };
    let (small, mid, large) = (run(50), run(200), run(800));
    assert!(mid.replications[0].full.max_abs_error < 0.5, "{}", mid.replications[0].full.max_abs_error);
    for method in [GpMethod::FullGp, GpMethod::MPosteriorGp] {
        let errs = [small.mean_max_error(method), mid.mean_max_error(method), large.mean_max_error(method)];
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{method:?}: {errs:?}");
        assert!(errs[2] < 0.5, "{method:?}: {errs:?}");
    }
}

#[test]
fn gp_outliers_sit_at_ten_times_the_peak() {
    let cfg = GpExperimentConfig { n_clean: 101, ..Default::default() };
    assert!((f0(0.75) - 4.0).abs() < 1e-12);
    assert!((cfg.outlier_level() - 40.0).abs() < 1e-11);
}
