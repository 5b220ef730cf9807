//! Synthetic benchmark: random training/testing model pairs, the three
//! methods fitted on training data, and mean RSS on unseen test environments.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{anchor_cv, pooled_ols};
use crate::data::{self, EnvDataset, EnvLabel};
use crate::engine::{self, evaluate_rss};
use crate::error::{Error, Result};
use crate::scm::{derive_test_spec, random_scm, sample, GenConfig, Interval, ScmSpec};

/// Share of failed models above which a run is aborted.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_models: usize,
    pub d: usize,
    pub train_labels: Vec<EnvLabel>,
    pub test_labels: Vec<EnvLabel>,
    pub n_per_env: usize,
    pub train_alpha_range: Interval,
    pub test_alpha_range: Interval,
    pub edge_prob: f64,
    pub alpha_quantile: f64,
    pub max_subset_size: Option<usize>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        if self.n_models == 0 || self.n_per_env == 0 {
            return bad("counts must be at least one");
        }
        if self.d < 2 {
            return bad("need at least two predictors");
        }
        if self.train_labels.len() < 2 || self.test_labels.is_empty() {
            return bad("need two training and one test environment");
        }
        for r in [self.train_alpha_range, self.test_alpha_range] {
            Interval::new(r.lo, r.hi)?;
        }
        Ok(())
    }

    pub fn pooled_train_rows(&self) -> usize {
        self.train_labels.len() * self.n_per_env
    }
}

fn labels(range: std::ops::RangeInclusive<u32>) -> Vec<EnvLabel> {
    range.map(EnvLabel::from).collect()
}

/// Named configurations: `A` (five training environments, `α ~ U[-2, 2]`),
/// `B1` (`α ~ U[-1, 1]`) and `B2` (two training environments). All use ten
/// predictors, six test environments with `α ~ U[-10, 10]`, 300 rows per
/// environment and 500 models.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        name: name.to_owned(),
        n_models: 500,
        d: 10,
        train_labels: labels(1..=5),
        test_labels: labels(5..=10),
        n_per_env: 300,
        train_alpha_range: Interval::symmetric(2.0),
        test_alpha_range: Interval::symmetric(10.0),
        edge_prob: 0.5,
        alpha_quantile: engine::DEFAULT_ALPHA_QUANTILE,
        max_subset_size: None,
        seed: 0,
    };
    match name {
        "A" => Ok(base),
        "B1" => Ok(ExperimentConfig {
            train_alpha_range: Interval::symmetric(1.0),
            ..base
        }),
        "B2" => Ok(ExperimentConfig {
            train_labels: labels(1..=2),
            ..base
        }),
        other => Err(Error::UnknownPreset(other.to_owned())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IMP")]
    Imp,
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "AR")]
    Anchor,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Imp, Method::Ols, Method::Anchor];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Imp => "IMP",
            Method::Ols => "OLS",
            Method::Anchor => "AR",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssRow {
    pub model: usize,
    pub method: Method,
    pub mean_rss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub count: usize,
    pub median: f64,
    /// Unbiased sample variance of the per-model mean RSS.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFailure {
    pub model: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssReport {
    pub config: ExperimentConfig,
    pub rows: Vec<RssRow>,
    pub failures: Vec<ModelFailure>,
    pub summaries: Vec<MethodSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

fn summarize(rows: &[RssRow]) -> Vec<MethodSummary> {
    Method::ALL
        .iter()
        .map(|&method| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.mean_rss)
                .collect();
            MethodSummary {
                method,
                count: v.len(),
                median: median(&v),
                variance: sample_variance(&v),
            }
        })
        .collect()
}

impl RssReport {
    pub fn values(&self, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.mean_rss)
            .collect()
    }

    pub fn summary(&self, method: Method) -> &MethodSummary {
        self.summaries
            .iter()
            .find(|s| s.method == method)
            .expect("every method is summarized")
    }

    /// Summaries recomputed from the per-model rows.
    pub fn recompute_summaries(&self) -> Vec<MethodSummary> {
        summarize(&self.rows)
    }

    /// Fraction of models in which `a` has strictly smaller mean RSS than `b`.
    pub fn win_rate(&self, a: Method, b: Method) -> f64 {
        let va = self.values(a);
        let vb = self.values(b);
        if va.is_empty() {
            return f64::NAN;
        }
        let wins = va.iter().zip(&vb).filter(|(x, y)| x < y).count();
        wins as f64 / va.len() as f64
    }

    /// `model,method,mean_rss` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "method", "mean_rss"])?;
        for r in &self.rows {
            w.write_record([
                r.model.to_string(),
                r.method.to_string(),
                r.mean_rss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Configuration, failures, per-method summaries and win rates.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a ExperimentConfig,
            n_rows: usize,
            failures: &'a [ModelFailure],
            summaries: &'a [MethodSummary],
            imp_win_rate_vs_ols: f64,
            imp_win_rate_vs_ar: f64,
        }
        Ok(serde_json::to_string_pretty(&Summary {
            config: &self.config,
            n_rows: self.rows.len(),
            failures: &self.failures,
            summaries: &self.summaries,
            imp_win_rate_vs_ols: self.win_rate(Method::Imp, Method::Ols),
            imp_win_rate_vs_ar: self.win_rate(Method::Imp, Method::Anchor),
        })?)
    }
}

/// Random stream for model `index`; independent of how many models run.
pub fn model_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Training spec, testing spec, training data and test data for one model.
pub struct ModelInstance {
    pub train_spec: ScmSpec,
    pub test_spec: ScmSpec,
    pub train: Vec<EnvDataset>,
    pub test: Vec<EnvDataset>,
}

pub fn generate_instance(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<ModelInstance> {
    let gen = GenConfig {
        edge_prob: config.edge_prob,
        alpha_range: config.train_alpha_range,
        ..GenConfig::default()
    };
    let train_spec = random_scm(config.d, &config.train_labels, &gen, rng)?;
    let test_spec = derive_test_spec(
        &train_spec,
        &config.test_labels,
        config.test_alpha_range,
        rng,
    );
    let train = config
        .train_labels
        .iter()
        .map(|u| sample(&train_spec, u, config.n_per_env, rng))
        .collect::<Result<Vec<_>>>()?;
    let test = config
        .test_labels
        .iter()
        .map(|u| sample(&test_spec, u, config.n_per_env, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelInstance {
        train_spec,
        test_spec,
        train,
        test,
    })
}

/// Mean test RSS of IMP, pooled OLS and anchor regression for one model.
pub fn run_model(config: &ExperimentConfig, index: usize) -> Result<[f64; 3]> {
    let mut rng = model_rng(config.seed, index);
    let inst = generate_instance(config, &mut rng)?;
    let truth = data::pooled_y(&inst.test)?;
    let x_test = data::pooled_x(&inst.test)?;
    let unlabeled: Vec<EnvDataset> = inst.test.iter().map(EnvDataset::without_response).collect();

    let model = engine::train(&inst.train, config.alpha_quantile, config.max_subset_size)?;
    let imp = evaluate_rss(&engine::predict(&model, &unlabeled)?, &truth)?;

    let ols_coef = pooled_ols(&inst.train)?;
    let ols = evaluate_rss(&(&x_test * ols_coef), &truth)?;

    let anchor = anchor_cv(&inst.train, &mut rng)?;
    let ar = evaluate_rss(&(&x_test * anchor.coef), &truth)?;
    Ok([imp, ols, ar])
}

/// Run every model of the configuration. Each model draws from its own
/// random stream, so results do not depend on scheduling, and a shorter run
/// with the same seed reproduces a prefix of a longer one.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RssReport> {
    config.validate()?;
    let outcomes: Vec<Result<[f64; 3]>> = (0..config.n_models)
        .into_par_iter()
        .map(|i| run_model(config, i))
        .collect();

    let mut rows = Vec::with_capacity(3 * config.n_models);
    let mut failures = Vec::new();
    for (model, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(values) => {
                for (method, mean_rss) in Method::ALL.into_iter().zip(values) {
                    rows.push(RssRow {
                        model,
                        method,
                        mean_rss,
                    });
                }
            }
            Err(e) => {
                log::warn!("model {model} failed: {e}");
                failures.push(ModelFailure {
                    model,
                    reason: e.to_string(),
                });
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * config.n_models as f64 {
        return Err(Error::ExperimentAborted {
            failed: failures.len(),
            total: config.n_models,
        });
    }
    let summaries = summarize(&rows);
    Ok(RssReport {
        config: config.clone(),
        rows,
        failures,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str, n_models: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_models,
            d: 4,
            n_per_env: 60,
            seed: 17,
            ..preset(name).unwrap()
        }
    }

    #[test]
    fn presets() {
        let a = preset("A").unwrap();
        assert_eq!(a.train_labels.len(), 5);
        assert_eq!(a.test_labels.len(), 6);
        assert_eq!(a.n_models, 500);
        assert_eq!(a.d, 10);
        let b1 = preset("B1").unwrap();
        assert_eq!(b1.train_alpha_range, Interval { lo: -1.0, hi: 1.0 });
        let b2 = preset("B2").unwrap();
        assert_eq!(b2.pooled_train_rows(), 600);
        assert_eq!(
            b2.test_alpha_range,
            Interval {
                lo: -10.0,
                hi: 10.0
            }
        );
        assert!(matches!(preset("C"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn smallest_run_has_three_rows() {
        let config = ExperimentConfig {
            d: 2,
            ..small("A", 1)
        };
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.mean_rss.is_finite()));
    }

    #[test]
    fn summaries_and_determinism() {
        let config = small("B2", 6);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.recompute_summaries(), a.summaries);
        let mut csv_a = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        let mut csv_b = Vec::new();
        b.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        assert!(String::from_utf8(csv_a)
            .unwrap()
            .starts_with("model,method,mean_rss\n"));
    }

    #[test]
    fn shorter_run_is_a_prefix() {
        let long = run_experiment(&small("A", 5)).unwrap();
        let short = run_experiment(&small("A", 3)).unwrap();
        assert_eq!(&long.rows[..short.rows.len()], short.rows.as_slice());
    }

    #[test]
    fn median_and_variance() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_rejected() {
        let config = ExperimentConfig {
            train_labels: vec!["1".into()],
            ..small("A", 1)
        };
        assert!(run_experiment(&config).is_err());
    }
}
