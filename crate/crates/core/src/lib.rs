//! Robust Bayesian aggregation with the median of subset posteriors.
//!
//! The data are split into `m` disjoint groups, a posterior is computed on
//! each group (optionally with every likelihood term raised to the power `m`,
//! the "stochastic approximation"), each posterior is represented by a cloud
//! of weighted draws, and the clouds are combined through their geometric
//! median in the reproducing kernel Hilbert space of a Gaussian kernel. The
//! result, the M-posterior, is a convex combination of the subset posteriors
//! that ignores subsets corrupted by outliers.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | weighted empirical measures, mixtures, quantiles, draw files |
//! | [`kernels`] | Gaussian kernels, RKHS inner products, MMD, Hellinger identities |
//! | [`medians`] | Weiszfeld's algorithm, metric median, weight thresholding, concentration exponent |
//! | [`bayes`] | partitioning, conjugate Gaussian and GP subset posteriors |
//! | [`harness`] | the end-to-end pipeline, baselines and simulation studies |
//!
//! ```
//! use mposterior::measures::EmpiricalMeasure;
//! use mposterior::harness::{m_posterior, MPosteriorConfig};
//!
//! let subsets: Vec<EmpiricalMeasure> = [0.0, 0.1, -0.1, 50.0]
//!     .iter()
//!     .map(|&c| EmpiricalMeasure::uniform(vec![vec![c - 0.05], vec![c + 0.05]]).unwrap())
//!     .collect();
//! let out = m_posterior(&subsets, &MPosteriorConfig::default()).unwrap();
//! assert_eq!(out.weights[3], 0.0);
//! ```

pub mod bayes;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod measures;
pub mod medians;

pub use error::{Error, Result};
