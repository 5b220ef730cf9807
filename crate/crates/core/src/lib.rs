//! Distribution generalization when the response itself is intervened.
//!
//! The response `Y` depends on its parents through coefficients that change
//! from one environment to the next, and `Y` has children among the
//! predictors. The per-environment linear estimate of a predictor `X_k` from
//! a subset `X_S`, used as one extra regressor, can restore a prediction rule
//! whose coefficients are the same in every environment, including unseen
//! ones. This crate provides:
//!
//! * [`scm`]: the mixture-of-linear-SCMs model, random generation, sampling
//!   and exact population moments;
//! * [`estimators`]: minimum-norm least squares, per-environment feature
//!   estimation, population regressions and the quantile rule;
//! * [`engine`]: candidate enumeration, training, selection and prediction,
//!   plus population oracles for the invariance statements;
//! * [`baselines`]: pooled least squares and anchor regression;
//! * [`experiments`]: the synthetic benchmark presets and report writer.
//!
//! The `book/` directory next to the workspace walks through the same
//! material with runnable examples; those snippets are compiled and run as
//! doctests of this crate.

pub mod baselines;
pub mod data;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod experiments;
mod linalg;
pub mod scm;

pub use data::{EnvDataset, EnvLabel};
pub use engine::{
    enumerate_features, evaluate_rss, fit_candidate, predict, train, CandidateFit, FeatureIndex,
    ImpModel,
};
pub use error::{Error, Result};
pub use scm::{PopulationMoments, ScmSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
