//! Data partitioning and closed-form subset posteriors.
//!
//! A subset posterior with multiplicity `m` treats every observation of its
//! group as if it had been seen `m` times (the likelihood is raised to the
//! power `m`). For Gaussian likelihoods this is the same as dividing the
//! noise variance by `m`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::check_spd;
use crate::measures::EmpiricalMeasure;

/// Diagonal jitter added to GP posterior covariances before factorization.
pub const GP_JITTER: f64 = 1e-10;

/// Seed for stream `index` under `root` (SplitMix64 finalizer).
///
/// Every parallel unit of work derives its own generator from this, so
/// results do not depend on scheduling or thread count.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(root: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Seeded shuffle split into contiguous chunks.
    RandomDisjoint,
    /// Group `j` takes indices `j, j+m, j+2m, …`; each group sits on a
    /// coarser copy of an ordered design grid.
    GridStrided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub groups: Vec<Vec<usize>>,
    pub strategy: PartitionStrategy,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    /// `⌊n/m⌋`, the guaranteed minimum group size.
    pub fn min_group_size(&self) -> usize {
        let n: usize = self.groups.iter().map(Vec::len).sum();
        n / self.m()
    }

    /// The rows of `data` belonging to each group.
    pub fn split<T: Clone>(&self, data: &[T]) -> Vec<Vec<T>> {
        self.groups.iter().map(|g| g.iter().map(|&i| data[i].clone()).collect()).collect()
    }
}

/// Splits `0..n` into `m` disjoint groups, `1 ≤ m ≤ n/2`.
pub fn partition(n: usize, m: usize, strategy: PartitionStrategy, seed: u64) -> Result<PartitionPlan> {
    if m < 1 || 2 * m > n {
        return Err(Error::invalid(format!("need 1 <= m <= n/2, got m = {m}, n = {n}")));
    }
    let groups = match strategy {
        PartitionStrategy::RandomDisjoint => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let base = n / m;
            let extra = n % m;
            let mut groups = Vec::with_capacity(m);
            let mut start = 0;
            for j in 0..m {
                let len = base + usize::from(j < extra);
                groups.push(idx[start..start + len].to_vec());
                start += len;
            }
            groups
        }
        PartitionStrategy::GridStrided => (0..m).map(|j| (j..n).step_by(m).collect()).collect(),
    };
    Ok(PartitionPlan { groups, strategy, seed })
}

/// Prior on the mean of a Gaussian model with known variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Prior {
    Flat,
    /// `N(mean, variance · I)`.
    Normal { mean: Vec<f64>, variance: f64 },
}

impl Prior {
    pub fn standard(p: usize) -> Self {
        Prior::Normal { mean: vec![0.0; p], variance: 1.0 }
    }
}

/// A multivariate normal `N(mean, covariance)` produced from `multiplicity`-fold data.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    multiplicity: usize,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, multiplicity: usize) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: covariance.nrows() });
        }
        if multiplicity == 0 {
            return Err(Error::invalid("multiplicity must be at least 1"));
        }
        check_spd(&covariance, "posterior covariance")?;
        Ok(Self { mean, covariance, multiplicity })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `count` i.i.d. draws `mean + L z` as a uniformly weighted measure.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let chol = self
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))?;
        let l = chol.l();
        let p = self.dim();
        let mut coords = Vec::with_capacity(count * p);
        let mut z = DVector::zeros(p);
        for _ in 0..count {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let x = &self.mean + &l * &z;
            coords.extend(x.iter());
        }
        EmpiricalMeasure::from_flat(p, coords, None)
    }
}

/// [`GaussianPosterior::sample`] with a generator seeded from `seed`.
pub fn sample_gaussian(posterior: &GaussianPosterior, count: usize, seed: u64) -> Result<EmpiricalMeasure> {
    posterior.sample(count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Posterior of the mean of `N(θ, σ² I)` given `data`, each point counted
/// `multiplicity` times.
pub fn gaussian_subset_posterior(
    data: &[Vec<f64>],
    prior: &Prior,
    sigma2: f64,
    multiplicity: usize,
) -> Result<GaussianPosterior> {
    let first = data.first().ok_or_else(|| Error::invalid("subset has no observations"))?;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
    }
    if multiplicity == 0 {
        return Err(Error::invalid("multiplicity must be at least 1"));
    }
    let p = first.len();
    let l = data.len() as f64;
    let mut xbar = DVector::zeros(p);
    for x in data {
        if x.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: x.len() });
        }
        xbar += DVector::from_column_slice(x);
    }
    xbar /= l;
    let lm = l * multiplicity as f64;
    let (mean, var) = match prior {
        Prior::Flat => (xbar, sigma2 / lm),
        Prior::Normal { mean: mu0, variance: tau2 } => {
            if mu0.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: mu0.len() });
            }
            if !(tau2.is_finite() && *tau2 > 0.0) {
                return Err(Error::invalid(format!("prior variance must be positive, got {tau2}")));
            }
            // (lm/σ² + 1/τ²)⁻¹ = σ²τ² / (lmτ² + σ²); written this way the
            // standard-prior case reduces to σ²/(lm + σ²) exactly.
            let denom = lm * tau2 + sigma2;
            let var = sigma2 * tau2 / denom;
            let mu0 = DVector::from_column_slice(mu0);
            let mean = xbar * (lm * tau2 / denom) + mu0 * (sigma2 / denom);
            (mean, var)
        }
    };
    Ok(GaussianPosterior { mean, covariance: DMatrix::identity(p, p) * var, multiplicity })
}

/// Zero-mean GP regression model on one-dimensional inputs with a unit
/// amplitude squared-exponential covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub length_scale: f64,
    pub noise_variance: f64,
    pub grid: Vec<f64>,
}

impl GpModel {
    pub fn new(length_scale: f64, noise_variance: f64, grid: Vec<f64>) -> Result<Self> {
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(Error::invalid(format!("length scale must be positive, got {length_scale}")));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::invalid(format!("noise variance must be positive, got {noise_variance}")));
        }
        if grid.is_empty() {
            return Err(Error::invalid("prediction grid is empty"));
        }
        Ok(Self { length_scale, noise_variance, grid })
    }

    pub fn covariance(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        (-d * d / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Posterior of the latent function on `model.grid` given noisy
/// observations, with the noise variance divided by `multiplicity`.
pub fn gp_subset_posterior(xs: &[f64], ys: &[f64], model: &GpModel, multiplicity: usize) -> Result<GaussianPosterior> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("{} inputs but {} responses", xs.len(), ys.len())));
    }
    if xs.is_empty() {
        return Err(Error::invalid("GP needs at least one observation"));
    }
    if multiplicity == 0 {
        return Err(Error::invalid("multiplicity must be at least 1"));
    }
    let n = xs.len();
    let g = model.grid.len();
    let noise = model.noise_variance / multiplicity as f64;
    let k = DMatrix::from_fn(n, n, |i, j| model.covariance(xs[i], xs[j]) + if i == j { noise } else { 0.0 });
    let k_star = DMatrix::from_fn(n, g, |i, j| model.covariance(xs[i], model.grid[j]));
    let chol = k.cholesky().ok_or_else(|| Error::NotPositiveDefinite("GP training covariance".into()))?;
    let y = DVector::from_column_slice(ys);
    let mean = k_star.transpose() * chol.solve(&y);
    let v = chol.l().solve_lower_triangular(&k_star).ok_or_else(|| Error::NonFinite("GP triangular solve".into()))?;
    let k_ss = DMatrix::from_fn(g, g, |i, j| model.covariance(model.grid[i], model.grid[j]));
    let c = k_ss - v.transpose() * v;
    let mut cov = (&c + c.transpose()) * 0.5;
    for i in 0..g {
        cov[(i, i)] += GP_JITTER;
    }
    if cov.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("GP posterior covariance after jitter".into()));
    }
    Ok(GaussianPosterior { mean, covariance: cov, multiplicity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_covers(plan: &PartitionPlan, n: usize) {
        let mut seen = vec![0u32; n];
        for g in &plan.groups {
            for &i in g {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn random_partition() {
        let a = partition(10, 2, PartitionStrategy::RandomDisjoint, 11).unwrap();
        assert_eq!(a.groups.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
        assert_covers(&a, 10);
        assert_eq!(a, partition(10, 2, PartitionStrategy::RandomDisjoint, 11).unwrap());
        assert_ne!(a, partition(10, 2, PartitionStrategy::RandomDisjoint, 12).unwrap());

        let b = partition(7, 3, PartitionStrategy::RandomDisjoint, 0).unwrap();
        assert_eq!(b.groups.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert_eq!(b.min_group_size(), 2);
    }

    #[test]
    fn strided_partition() {
        let p = partition(8, 2, PartitionStrategy::GridStrided, 0).unwrap();
        assert_eq!(p.groups, vec![vec![0, 2, 4, 6], vec![1, 3, 5, 7]]);
        let data: Vec<char> = "abcdefgh".chars().collect();
        assert_eq!(p.split(&data)[1], vec!['b', 'd', 'f', 'h']);
    }

    #[test]
    fn partition_bounds() {
        assert!(partition(10, 0, PartitionStrategy::RandomDisjoint, 0).is_err());
        assert!(partition(10, 6, PartitionStrategy::GridStrided, 0).is_err());
        assert!(partition(10, 5, PartitionStrategy::GridStrided, 0).is_ok());
    }

    #[test]
    fn plan_json() {
        let p = partition(5, 2, PartitionStrategy::GridStrided, 3).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"groups":[[0,2,4],[1,3]],"strategy":"grid_strided","seed":3}"#);
    }

    #[test]
    fn conjugate_examples() {
        let data = vec![vec![0.5], vec![1.5]];
        let post = gaussian_subset_posterior(&data, &Prior::standard(1), 1.0, 3).unwrap();
        assert_abs_diff_eq!(post.mean()[0], 6.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.covariance()[(0, 0)], 1.0 / 7.0, epsilon = 1e-15);

        let data: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 10.0]).collect();
        let xbar = data.iter().map(|x| x[0]).sum::<f64>() / 100.0;
        let flat = gaussian_subset_posterior(&data, &Prior::Flat, 1.0, 1).unwrap();
        assert_abs_diff_eq!(flat.mean()[0], xbar, epsilon = 1e-12);
        assert_abs_diff_eq!(flat.covariance()[(0, 0)], 0.01, epsilon = 1e-15);

        let data = vec![vec![1.0, -2.0], vec![3.0, 0.0], vec![2.0, 1.0]];
        let post = gaussian_subset_posterior(&data, &Prior::standard(2), 2.0, 1).unwrap();
        assert_abs_diff_eq!(post.mean()[0], 3.0 / 5.0 * 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.mean()[1], 3.0 / 5.0 * (-1.0 / 3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(post.covariance()[(1, 1)], 2.0 / 5.0, epsilon = 1e-15);
        assert_eq!(post.covariance()[(0, 1)], 0.0);
    }

    #[test]
    fn conjugate_errors() {
        assert!(gaussian_subset_posterior(&[], &Prior::Flat, 1.0, 1).is_err());
        assert!(gaussian_subset_posterior(&[vec![1.0]], &Prior::Flat, 0.0, 1).is_err());
        assert!(gaussian_subset_posterior(&[vec![1.0]], &Prior::Flat, 1.0, 0).is_err());
        assert!(gaussian_subset_posterior(&[vec![1.0]], &Prior::standard(2), 1.0, 1).is_err());
    }

    #[test]
    fn sampling() {
        let tiny = GaussianPosterior::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2) * 1e-18, 1)
            .unwrap();
        let draws = sample_gaussian(&tiny, 50, 1).unwrap();
        assert!(draws.atoms().all(|a| (a[0] - 1.0).abs() < 1e-6 && (a[1] + 1.0).abs() < 1e-6));

        let std = GaussianPosterior::new(DVector::zeros(1), DMatrix::identity(1, 1), 1).unwrap();
        let draws = sample_gaussian(&std, 10_000, 7).unwrap();
        let mean = draws.mean()[0];
        let var = draws.atoms().map(|a| (a[0] - mean).powi(2)).sum::<f64>() / 9999.0;
        assert!(mean.abs() < 4.0 / 100.0, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        assert_eq!(draws, sample_gaussian(&std, 10_000, 7).unwrap());
        assert!(sample_gaussian(&std, 0, 7).is_err());
        assert!(GaussianPosterior::new(DVector::zeros(1), DMatrix::from_element(1, 1, -1.0), 1).is_err());
    }

    #[test]
    fn gp_single_point() {
        let model = GpModel::new(0.3, 0.01, vec![0.4]).unwrap();
        let post = gp_subset_posterior(&[0.4], &[2.0], &model, 1).unwrap();
        assert_abs_diff_eq!(post.mean()[0], 2.0 / 1.01, epsilon = 1e-12);
        assert_abs_diff_eq!(post.covariance()[(0, 0)], 1.0 - 1.0 / 1.01 + GP_JITTER, epsilon = 1e-12);
    }

    #[test]
    fn gp_far_from_data_reverts_to_prior() {
        let model = GpModel::new(0.05, 0.01, vec![10.0]).unwrap();
        let post = gp_subset_posterior(&[0.0, 0.1, 0.2], &[3.0, -1.0, 2.0], &model, 1).unwrap();
        assert!(post.mean()[0].abs() < 1e-12);
        assert_abs_diff_eq!(post.covariance()[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn gp_large_multiplicity_interpolates() {
        let model = GpModel::new(0.2, 0.01, vec![0.5]).unwrap();
        let post = gp_subset_posterior(&[0.5], &[1.7], &model, 1_000_000).unwrap();
        assert_abs_diff_eq!(post.mean()[0], 1.7, epsilon = 1e-7);
        assert!(post.covariance()[(0, 0)] < 1e-7);
    }

    #[test]
    fn gp_errors() {
        assert!(GpModel::new(0.0, 0.01, vec![0.0]).is_err());
        assert!(GpModel::new(0.1, 0.0, vec![0.0]).is_err());
        assert!(GpModel::new(0.1, 0.01, vec![]).is_err());
        let model = GpModel::new(0.1, 0.01, vec![0.0]).unwrap();
        assert!(gp_subset_posterior(&[0.0, 1.0], &[1.0], &model, 1).is_err());
        assert!(gp_subset_posterior(&[], &[], &model, 1).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|j| derive_seed(42, j)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    proptest! {
        #[test]
        fn partitions_cover_exactly_once(n in 2usize..200, frac in 0.0..1.0f64, seed in any::<u64>(), grid in any::<bool>()) {
            let m = 1 + ((n / 2 - 1) as f64 * frac) as usize;
            let strategy = if grid { PartitionStrategy::GridStrided } else { PartitionStrategy::RandomDisjoint };
            let plan = partition(n, m, strategy, seed).unwrap();
            prop_assert_eq!(plan.m(), m);
            assert_covers(&plan, n);
            prop_assert!(plan.groups.iter().all(|g| g.len() >= n / m));
        }

        #[test]
        fn conjugate_mean_is_convex_combination(
            xs in prop::collection::vec(-10.0..10.0f64, 1..40),
            mu0 in -5.0..5.0f64,
            tau2 in 0.1..10.0f64,
            sigma2 in 0.1..5.0f64,
            mult in 1usize..20,
        ) {
            let data: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
            let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
            let post = gaussian_subset_posterior(&data, &Prior::Normal { mean: vec![mu0], variance: tau2 }, sigma2, mult).unwrap();
            let (lo, hi) = if xbar < mu0 { (xbar, mu0) } else { (mu0, xbar) };
            prop_assert!(post.mean()[0] >= lo - 1e-12 && post.mean()[0] <= hi + 1e-12);
        }

        #[test]
        fn gp_covariance_is_psd_and_shrinks_with_multiplicity(
            xs in prop::collection::vec(0.0..1.0f64, 1..50),
            seed in any::<u64>(),
            ell in 0.05..0.5f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal)).collect();
            let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
            let model = GpModel::new(ell, 0.01, grid).unwrap();
            let mut prev: Option<DVector<f64>> = None;
            for mult in [1usize, 2, 5, 10] {
                let post = gp_subset_posterior(&xs, &ys, &model, mult).unwrap();
                prop_assert!(post.covariance().clone().cholesky().is_some());
                let diag = post.covariance().diagonal();
                if let Some(p) = &prev {
                    for (a, b) in diag.iter().zip(p.iter()) {
                        prop_assert!(*a <= *b + 1e-9, "variance grew: {} > {}", a, b);
                    }
                }
                prev = Some(diag);
            }
        }
    }
}
