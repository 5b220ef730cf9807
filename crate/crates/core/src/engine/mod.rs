//! Training, selection and prediction with invariant matching features.
//!
//! Every candidate feature `(k, S)` is the per-environment linear estimate of
//! `X_k` from `X_S`. For each candidate the response is regressed on the
//! augmented design `[feature, X]` pooled over all training environments.
//! Candidates whose training residual sum of squares falls below a quantile
//! threshold are kept; on test data the feature is recomputed from the test
//! predictors alone and the stored coefficients are reused. The final
//! prediction is the plain average over kept candidates.

mod population;
mod stats;

pub use population::{
    feature_lambda, matching_conditions_hold, population_candidate, population_lmmse_mse,
    FeatureLambda, PopulationFit,
};
pub use stats::TrainingStats;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, EnvDataset};
use crate::error::{Error, Result};
use crate::estimators::{self, env_feature, ols};

/// Default fraction of candidates kept by the quantile threshold.
pub const DEFAULT_ALPHA_QUANTILE: f64 = 0.05;

/// Without an explicit cap, predictor counts above this are refused.
pub const MAX_UNCAPPED_D: usize = 16;

/// Above this predictor count an uncapped search logs a warning.
pub const WARN_UNCAPPED_D: usize = 12;

/// Candidate feature `E_l[X_k | X_S; U]`. Indices are zero-based; `Display`
/// prints them one-based, e.g. `(3,{1,2})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureIndex {
    pub k: usize,
    pub s: Vec<usize>,
}

impl FeatureIndex {
    /// Build from zero-based indices; `s` is sorted and must be non-empty and
    /// exclude `k`.
    pub fn new(k: usize, s: impl IntoIterator<Item = usize>) -> Result<Self> {
        let s: BTreeSet<usize> = s.into_iter().collect();
        if s.is_empty() || s.contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "feature needs a non-empty S without k (k={k}, S={s:?})"
            )));
        }
        Ok(FeatureIndex {
            k,
            s: s.into_iter().collect(),
        })
    }

    /// Build from one-based indices as printed to users.
    pub fn one_based(k: usize, s: &[usize]) -> Result<Self> {
        if k == 0 || s.contains(&0) {
            return Err(Error::InvalidArgument(
                "one-based indices start at 1".into(),
            ));
        }
        Self::new(k - 1, s.iter().map(|j| j - 1))
    }
}

impl fmt::Display for FeatureIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.s.iter().map(|j| (j + 1).to_string()).collect();
        write!(f, "({},{{{}}})", self.k + 1, s.join(","))
    }
}

/// All `(k, S)` with `S ⊆ {0..d} \ {k}` non-empty and, when given,
/// `|S| ≤ max_subset_size`. Ordered by `k`, then lexicographically by `S`.
pub fn enumerate_features(d: usize, max_subset_size: Option<usize>) -> Vec<FeatureIndex> {
    let cap = max_subset_size.unwrap_or(d);
    let mut out = Vec::new();
    for k in 0..d {
        let others: Vec<usize> = (0..d).filter(|&j| j != k).collect();
        let mut subsets: Vec<Vec<usize>> = (1u64..(1u64 << others.len()))
            .filter(|mask| mask.count_ones() as usize <= cap)
            .map(|mask| {
                others
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &j)| j)
                    .collect()
            })
            .collect();
        subsets.sort();
        out.extend(subsets.into_iter().map(|s| FeatureIndex { k, s }));
    }
    out
}

/// Fitted augmented regression for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFit {
    pub feature: FeatureIndex,
    /// `(λ̂, η̂₁, …, η̂_d)`: the feature coefficient first, then one
    /// coefficient per predictor.
    pub beta: DVector<f64>,
    /// `‖Y − X̃ β‖²` on the pooled training data.
    pub train_rss: f64,
}

impl CandidateFit {
    pub fn lambda(&self) -> f64 {
        self.beta[0]
    }

    pub fn eta(&self) -> DVector<f64> {
        self.beta.rows(1, self.beta.len() - 1).into_owned()
    }

    /// Predictions `λ̂ f + X η̂` for a feature column and matching predictors.
    pub fn apply(&self, feature: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
        feature * self.lambda() + x * self.eta()
    }
}

/// Fit one candidate directly: build the pooled augmented design
/// `[Ê_l[X_k | X_S; U], X]` and solve the minimum-norm least squares problem
/// for the pooled response.
pub fn fit_candidate(train: &[EnvDataset], feature: &FeatureIndex) -> Result<CandidateFit> {
    let column = env_feature(train, feature.k, &feature.s)?;
    let x = data::pooled_x(train)?;
    let y = data::pooled_y(train)?;
    let (n, d) = x.shape();
    let mut design = DMatrix::zeros(n, d + 1);
    design.set_column(0, &column.values);
    design.columns_mut(1, d).copy_from(&x);
    let fit = ols(&design, &y)?;
    Ok(CandidateFit {
        feature: feature.clone(),
        beta: fit.coef,
        train_rss: fit.rss,
    })
}

/// A trained model: all candidate fits, the threshold and the kept subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpModel {
    pub d: usize,
    pub alpha_quantile: f64,
    pub epsilon: f64,
    /// Number of candidates that were fitted during training.
    pub n_candidates: usize,
    /// Every fitted candidate. Empty for a model loaded from disk, which
    /// stores only the selected ones.
    pub candidates: Vec<CandidateFit>,
    /// Candidates with `train_rss ≤ epsilon`, in enumeration order.
    pub selected: Vec<CandidateFit>,
}

impl ImpModel {
    /// Keep the candidates with `train_rss ≤ epsilon`.
    pub fn with_threshold(
        d: usize,
        alpha_quantile: f64,
        epsilon: f64,
        candidates: Vec<CandidateFit>,
    ) -> Result<Self> {
        let selected: Vec<CandidateFit> = candidates
            .iter()
            .filter(|c| c.train_rss <= epsilon)
            .cloned()
            .collect();
        if selected.is_empty() {
            return Err(Error::EmptySelection);
        }
        Ok(ImpModel {
            d,
            alpha_quantile,
            epsilon,
            n_candidates: candidates.len(),
            candidates,
            selected,
        })
    }

    pub fn selected_features(&self) -> impl Iterator<Item = &FeatureIndex> {
        self.selected.iter().map(|c| &c.feature)
    }

    pub fn is_selected(&self, feature: &FeatureIndex) -> bool {
        self.selected_features().any(|f| f == feature)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            d: self.d,
            alpha_quantile: self.alpha_quantile,
            epsilon: self.epsilon,
            n_candidates: self.n_candidates,
            selected: self
                .selected
                .iter()
                .map(|c| CandidateDocument {
                    k: c.feature.k + 1,
                    s: c.feature.s.iter().map(|j| j + 1).collect(),
                    beta: c.beta.iter().copied().collect(),
                    train_rss: c.train_rss,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model schema version {}",
                doc.schema_version
            )));
        }
        let selected = doc
            .selected
            .into_iter()
            .map(|c| {
                let feature = FeatureIndex::one_based(c.k, &c.s)?;
                if c.beta.len() != doc.d + 1
                    || feature.k >= doc.d
                    || feature.s.iter().any(|&j| j >= doc.d)
                {
                    return Err(Error::Schema(format!(
                        "candidate {feature} does not fit d={}",
                        doc.d
                    )));
                }
                Ok(CandidateFit {
                    feature,
                    beta: DVector::from_vec(c.beta),
                    train_rss: c.train_rss,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImpModel {
            d: doc.d,
            alpha_quantile: doc.alpha_quantile,
            epsilon: doc.epsilon,
            n_candidates: doc.n_candidates,
            candidates: Vec::new(),
            selected,
        })
    }
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u32,
    d: usize,
    alpha_quantile: f64,
    epsilon: f64,
    n_candidates: usize,
    selected: Vec<CandidateDocument>,
}

#[derive(Serialize, Deserialize)]
struct CandidateDocument {
    k: usize,
    s: Vec<usize>,
    beta: Vec<f64>,
    train_rss: f64,
}

fn check_training_envs(train: &[EnvDataset]) -> Result<usize> {
    let distinct: BTreeSet<_> = train.iter().map(|ds| &ds.env).collect();
    if distinct.len() < 2 {
        return Err(Error::NoEnvironmentVariation(distinct.len()));
    }
    if distinct.len() != train.len() {
        return Err(Error::InvalidArgument(
            "duplicate environment labels".into(),
        ));
    }
    let d = data::common_dim(train)?;
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two predictors, got {d}"
        )));
    }
    Ok(d)
}

/// Fit every candidate on the training environments and return the residual
/// sums of squares, in enumeration order.
pub fn fit_all_candidates(
    train: &[EnvDataset],
    max_subset_size: Option<usize>,
) -> Result<(usize, Vec<CandidateFit>)> {
    let d = check_training_envs(train)?;
    if max_subset_size.is_none() {
        if d > MAX_UNCAPPED_D {
            return Err(Error::TooManyCandidates(d));
        }
        if d > WARN_UNCAPPED_D {
            log::warn!(
                "searching all {} candidates for d={d}",
                d * ((1usize << (d - 1)) - 1)
            );
        }
    }
    let stats = TrainingStats::from_datasets(train)?;
    let features = enumerate_features(d, max_subset_size);
    let candidates = features
        .par_iter()
        .map(|f| stats.fit(f))
        .collect::<Result<Vec<_>>>()?;
    Ok((d, candidates))
}

/// Fit all candidates and keep those whose training residual sum of squares
/// is at most the `alpha_quantile` quantile of all of them.
pub fn train(
    train: &[EnvDataset],
    alpha_quantile: f64,
    max_subset_size: Option<usize>,
) -> Result<ImpModel> {
    let (d, candidates) = fit_all_candidates(train, max_subset_size)?;
    let rss: Vec<f64> = candidates.iter().map(|c| c.train_rss).collect();
    let epsilon = estimators::quantile(&rss, alpha_quantile)?;
    ImpModel::with_threshold(d, alpha_quantile, epsilon, candidates)
}

/// Average prediction of the selected candidates on (possibly unlabeled) test
/// environments, aligned with the pooled test rows.
pub fn predict(model: &ImpModel, test: &[EnvDataset]) -> Result<DVector<f64>> {
    if model.selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let d = data::common_dim(test)?;
    if d != model.d {
        return Err(Error::DimensionMismatch {
            expected: model.d,
            got: d,
        });
    }
    let x = data::pooled_x(test)?;
    let per_candidate = model
        .selected
        .par_iter()
        .map(|c| {
            let column = env_feature(test, c.feature.k, &c.feature.s)?;
            Ok(c.apply(&column.values, &x))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = DVector::zeros(x.nrows());
    for p in &per_candidate {
        mean += p;
    }
    Ok(mean / per_candidate.len() as f64)
}

/// Mean residual sum of squares `(1/n) Σ (pred − truth)²`.
pub fn evaluate_rss(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((pred - truth).norm_squared() / pred.len() as f64)
}

#[cfg(test)]
mod tests;
