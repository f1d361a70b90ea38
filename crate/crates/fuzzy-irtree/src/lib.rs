//! A probabilistic tree model for LR-type triangular fuzzy rating responses.
//!
//! Fuzzy rating scales collect a response in three steps: the rater marks a
//! core category `c` on an M-point scale, then extends it by `l` levels to the
//! left and `r` levels to the right. The triple `(c, l, r)` is a triangular
//! fuzzy number whose spreads quantify decision uncertainty.
//!
//! The model couples an IRTree (a binary decision tree over the categories,
//! with logistic node probabilities driven by a latent ability) for the core
//! with an entropy-weighted mixture of Binomial spread distributions. Latent
//! ability is integrated out by Gauss–Hermite quadrature and parameters are
//! estimated by constrained marginal maximum likelihood.
//!
//! Module map:
//! - [`irtree`]: tree structure, node and category probabilities
//! - [`fuzzymix`]: entropy weight, spread mixture, conditional pmf
//! - [`quadrature`]: Gauss–Hermite rules, marginal pmf, log-likelihood
//! - [`estimate`]: constrained MML fit, standard errors, BIC comparison
//! - [`simulate`]: generative sampler for synthetic datasets
//! - [`effects`]: marginal effects over covariate grids
//! - [`dataset`] / [`report`]: CSV ingestion, model configuration, reports

pub mod dataset;
pub mod effects;
pub mod estimate;
pub mod fuzzymix;
pub mod irtree;
pub mod quadrature;
pub mod report;
pub mod simulate;

pub use dataset::{Dataset, Formula, ModelSpec, TreeChoice};
pub use estimate::{AlphaSharing, FitOptions, FitResult, ParamVector};
pub use fuzzymix::FuzzyRating;
pub use irtree::{NodeEasiness, TreeSpec};
pub use quadrature::GHRule;
