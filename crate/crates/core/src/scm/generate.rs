use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScmSpec;
use crate::data::EnvLabel;
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]` used for uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "interval [{lo}, {hi}] is not well-ordered"
            )));
        }
        Ok(Interval { lo, hi })
    }

    /// Symmetric interval `[-r, r]`.
    pub fn symmetric(r: f64) -> Self {
        Interval { lo: -r, hi: r }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Knobs of [`random_scm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Probability of each forward edge in the random topological order.
    pub edge_prob: f64,
    /// Magnitude range of invariant coefficients; signs are drawn uniformly,
    /// giving `Unif([-hi,-lo] ∪ [lo,hi])`.
    pub coef_magnitude: Interval,
    /// Range of the intervened coefficients `α_j(u)`.
    pub alpha_range: Interval,
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            edge_prob: 0.5,
            coef_magnitude: Interval { lo: 0.5, hi: 1.5 },
            alpha_range: Interval::symmetric(2.0),
            max_retries: 1000,
        }
    }
}

fn signed_coef<R: Rng + ?Sized>(magnitude: &Interval, rng: &mut R) -> f64 {
    let m = magnitude.draw(rng);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Draw a random training model.
///
/// A random order over `(X_1..X_d, Y)` is drawn and every forward edge is kept
/// with probability `edge_prob`; the draw is repeated until `Y` has at least
/// one parent and one child. A uniformly sized, uniformly chosen subset of
/// `Y`'s parents becomes the intervened set: those coordinates carry
/// `α_j(u) ~ alpha_range` for every environment and `β_j = 0`. All noise
/// variances are one.
pub fn random_scm<R: Rng + ?Sized>(
    d: usize,
    env_labels: &[EnvLabel],
    config: &GenConfig,
    rng: &mut R,
) -> Result<ScmSpec> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need d >= 2, got {d}")));
    }
    if env_labels.is_empty() {
        return Err(Error::InvalidArgument("no environment labels".into()));
    }
    if !(0.0..=1.0).contains(&config.edge_prob) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {} outside [0, 1]",
            config.edge_prob
        )));
    }

    let y = d;
    for _ in 0..config.max_retries {
        let mut order: Vec<usize> = (0..=d).collect();
        order.shuffle(rng);

        // adjacency[child][parent]
        let mut adjacency = vec![vec![false; d + 1]; d + 1];
        for (pos, &parent) in order.iter().enumerate() {
            for &child in &order[pos + 1..] {
                adjacency[child][parent] = rng.random_bool(config.edge_prob);
            }
        }
        let parents_y: Vec<usize> = (0..d).filter(|&j| adjacency[y][j]).collect();
        let has_child = (0..d).any(|i| adjacency[i][y]);
        if parents_y.is_empty() || !has_child {
            continue;
        }

        let mut b = DMatrix::zeros(d, d);
        let mut gamma = vec![0.0; d];
        let mut beta = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                if adjacency[i][j] {
                    b[(i, j)] = signed_coef(&config.coef_magnitude, rng);
                }
            }
            if adjacency[i][y] {
                gamma[i] = signed_coef(&config.coef_magnitude, rng);
            }
        }

        let n_p = rng.random_range(1..=parents_y.len());
        let mut intervened: Vec<usize> = index::sample(rng, parents_y.len(), n_p)
            .into_iter()
            .map(|i| parents_y[i])
            .collect();
        intervened.sort_unstable();
        for &j in &parents_y {
            if !intervened.contains(&j) {
                beta[j] = signed_coef(&config.coef_magnitude, rng);
            }
        }

        let alpha: IndexMap<EnvLabel, Vec<f64>> = env_labels
            .iter()
            .map(|u| {
                let mut a = vec![0.0; d];
                for &j in &intervened {
                    a[j] = config.alpha_range.draw(rng);
                }
                (u.clone(), a)
            })
            .collect();

        return Ok(ScmSpec {
            d,
            b,
            gamma,
            beta,
            alpha,
            noise_x_var: vec![1.0; d],
            noise_y_var: 1.0,
        });
    }
    Err(Error::GenerationFailed(config.max_retries))
}

/// Testing model sharing every parameter with `spec` except the environment
/// set and `α`, which is redrawn i.i.d. from `alpha_range` on the training
/// support of `α` and is zero elsewhere.
pub fn derive_test_spec<R: Rng + ?Sized>(
    spec: &ScmSpec,
    test_labels: &[EnvLabel],
    alpha_range: Interval,
    rng: &mut R,
) -> ScmSpec {
    let support = spec.alpha_support();
    let alpha = test_labels
        .iter()
        .map(|u| {
            let mut a = vec![0.0; spec.d];
            for &j in &support {
                a[j] = alpha_range.draw(rng);
            }
            (u.clone(), a)
        })
        .collect();
    ScmSpec {
        alpha,
        ..spec.clone()
    }
}
