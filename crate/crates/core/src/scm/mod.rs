//! Mixtures of linear structural causal models with an intervened response.
//!
//! Conditional on the environment `u`, the predictors `X ∈ R^d` and the
//! response `Y` satisfy
//!
//! ```text
//! X = γ Y + B X + ε_X
//! Y = (β + α(u))ᵀ X + ε_Y
//! ```
//!
//! with independent zero-mean Gaussian noise. Only `α` depends on the
//! environment. Stacking `z = (X, Y)` gives `z = A(u) z + ε` where `A(u)` is
//! the combined coefficient matrix returned by [`ScmSpec::combined_matrix`];
//! index `d` of `z` is the response.

mod generate;
mod simulate;

pub use generate::{derive_test_spec, random_scm, GenConfig, Interval};
pub use simulate::{population_moments, sample, PopulationMoments};

use std::fmt;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::EnvLabel;
use crate::error::{Error, Result};

pub const SPEC_SCHEMA_VERSION: u32 = 1;

/// Full parameterization of the training (or testing) model.
///
/// Vectors are indexed by predictor, `0..d`. `b[(i, j)]` is the coefficient
/// of `X_j` in the assignment of `X_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub d: usize,
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: IndexMap<EnvLabel, Vec<f64>>,
    pub noise_x_var: Vec<f64>,
    pub noise_y_var: f64,
}

/// One violated invariant of an [`ScmSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch(&'static str),
    NonFinite,
    NonPositiveNoise,
    /// The graph has a directed cycle; `env` is `None` when the cycle does
    /// not involve `α` at all.
    AcyclicityViolated {
        env: Option<EnvLabel>,
    },
    /// Predictors that are both invariant and intervened parents of `Y`.
    SupportOverlap(Vec<usize>),
    /// Fewer than two environments with distinct `α` vectors.
    AlphaDegenerate,
}

impl Violation {
    /// Machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::DimensionMismatch(_) => "DimensionMismatch",
            Violation::NonFinite => "NonFinite",
            Violation::NonPositiveNoise => "NonPositiveNoise",
            Violation::AcyclicityViolated { .. } => "AcyclicityViolated",
            Violation::SupportOverlap(_) => "SupportOverlap",
            Violation::AlphaDegenerate => "AlphaDegenerate",
        }
    }

    /// Whether the violation prevents sampling or computing moments. Support
    /// overlap and a degenerate `α` only matter for training.
    pub fn is_structural(&self) -> bool {
        !matches!(
            self,
            Violation::SupportOverlap(_) | Violation::AlphaDegenerate
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch(field) => write!(f, "DimensionMismatch({field})"),
            Violation::AcyclicityViolated { env: Some(u) } => {
                write!(f, "AcyclicityViolated(env {u})")
            }
            Violation::SupportOverlap(js) => {
                let js: Vec<String> = js.iter().map(|j| format!("x{}", j + 1)).collect();
                write!(f, "SupportOverlap({})", js.join(","))
            }
            other => f.write_str(other.code()),
        }
    }
}

impl ScmSpec {
    /// Environment labels in declaration order.
    pub fn env_labels(&self) -> impl Iterator<Item = &EnvLabel> {
        self.alpha.keys()
    }

    pub fn alpha_for(&self, env: &EnvLabel) -> Result<&[f64]> {
        self.alpha
            .get(env)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownEnvironment(env.clone()))
    }

    /// Predictors `j` with `α_j(u) ≠ 0` for some environment.
    pub fn alpha_support(&self) -> Vec<usize> {
        (0..self.d)
            .filter(|&j| self.alpha.values().any(|a| a[j] != 0.0))
            .collect()
    }

    pub fn beta_support(&self) -> Vec<usize> {
        (0..self.d).filter(|&j| self.beta[j] != 0.0).collect()
    }

    /// Parents of `Y` (invariant or intervened).
    pub fn parents_of_y(&self) -> Vec<usize> {
        let alpha = self.alpha_support();
        (0..self.d)
            .filter(|&j| self.beta[j] != 0.0 || alpha.contains(&j))
            .collect()
    }

    /// Predictors with `γ_j ≠ 0`.
    pub fn children_of_y(&self) -> Vec<usize> {
        (0..self.d).filter(|&j| self.gamma[j] != 0.0).collect()
    }

    /// The `(d+1)×(d+1)` matrix `A(u)` with `z = A(u) z + ε`, `z = (X, Y)`.
    /// When `alpha` is `None` the intervened coefficients are left at zero.
    pub fn combined_matrix(&self, alpha: Option<&[f64]>) -> DMatrix<f64> {
        let d = self.d;
        let mut a = DMatrix::zeros(d + 1, d + 1);
        a.view_mut((0, 0), (d, d)).copy_from(&self.b);
        for i in 0..d {
            a[(i, d)] = self.gamma[i];
            a[(d, i)] = self.beta[i] + alpha.map_or(0.0, |al| al[i]);
        }
        a
    }

    /// Noise variances of `z = (X, Y)`.
    pub fn noise_variances(&self) -> Vec<f64> {
        let mut v = self.noise_x_var.clone();
        v.push(self.noise_y_var);
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SpecDocumentRef {
            schema_version: SPEC_SCHEMA_VERSION,
            spec: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        if doc.schema_version != SPEC_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported spec schema version {}",
                doc.schema_version
            )));
        }
        Ok(doc.spec)
    }
}

#[derive(Serialize)]
struct SpecDocumentRef<'a> {
    schema_version: u32,
    #[serde(flatten)]
    spec: &'a ScmSpec,
}

#[derive(Deserialize)]
struct SpecDocument {
    schema_version: u32,
    #[serde(flatten)]
    spec: ScmSpec,
}

/// Return every violated invariant; an empty list means the spec is a
/// well-posed acyclic mixture of linear SCMs.
pub fn validate(spec: &ScmSpec) -> Vec<Violation> {
    let d = spec.d;
    let mut out = Vec::new();
    if d == 0 {
        out.push(Violation::DimensionMismatch("d"));
        return out;
    }
    if spec.b.shape() != (d, d) {
        out.push(Violation::DimensionMismatch("b"));
    }
    for (name, v) in [
        ("gamma", &spec.gamma),
        ("beta", &spec.beta),
        ("noise_x_var", &spec.noise_x_var),
    ] {
        if v.len() != d {
            out.push(Violation::DimensionMismatch(name));
        }
    }
    if spec.alpha.values().any(|a| a.len() != d) {
        out.push(Violation::DimensionMismatch("alpha"));
    }
    if !out.is_empty() {
        return out;
    }

    let finite = spec.b.iter().all(|v| v.is_finite())
        && spec
            .gamma
            .iter()
            .chain(&spec.beta)
            .chain(&spec.noise_x_var)
            .chain(spec.alpha.values().flatten())
            .all(|v| v.is_finite())
        && spec.noise_y_var.is_finite();
    if !finite {
        out.push(Violation::NonFinite);
        return out;
    }

    if spec.noise_x_var.iter().any(|&v| v <= 0.0) || spec.noise_y_var <= 0.0 {
        out.push(Violation::NonPositiveNoise);
    }

    if topological_order(&spec.combined_matrix(None)).is_none() {
        out.push(Violation::AcyclicityViolated { env: None });
    } else if let Some(u) = spec
        .alpha
        .iter()
        .find(|(_, a)| topological_order(&spec.combined_matrix(Some(a))).is_none())
        .map(|(u, _)| u)
    {
        out.push(Violation::AcyclicityViolated {
            env: Some(u.clone()),
        });
    }

    let alpha_support = spec.alpha_support();
    let overlap: Vec<usize> = spec
        .beta_support()
        .into_iter()
        .filter(|j| alpha_support.contains(j))
        .collect();
    if !overlap.is_empty() {
        out.push(Violation::SupportOverlap(overlap));
    }

    let mut vectors = spec.alpha.values();
    let degenerate = match vectors.next() {
        None => true,
        Some(first) => vectors.all(|a| a == first),
    };
    if degenerate {
        out.push(Violation::AlphaDegenerate);
    }
    out
}

/// Error unless the spec can be sampled from (dimensions, finiteness, positive
/// noise, acyclicity).
pub fn check_solvable(spec: &ScmSpec) -> Result<()> {
    let structural: Vec<Violation> = validate(spec)
        .into_iter()
        .filter(Violation::is_structural)
        .collect();
    if structural.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(structural))
    }
}

/// Topological order of the graph with an edge `j → i` wherever
/// `a[(i, j)] ≠ 0`; `None` if the graph has a directed cycle (including
/// self-loops).
pub fn topological_order(a: &DMatrix<f64>) -> Option<Vec<usize>> {
    let p = a.nrows();
    let mut indegree: Vec<usize> = (0..p)
        .map(|i| (0..p).filter(|&j| a[(i, j)] != 0.0).count())
        .collect();
    let mut ready: Vec<usize> = (0..p).rev().filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(p);
    while let Some(j) = ready.pop() {
        order.push(j);
        for i in (0..p).rev() {
            if a[(i, j)] != 0.0 {
                indegree[i] -= 1;
                if indegree[i] == 0 {
                    ready.push(i);
                }
            }
        }
    }
    (order.len() == p).then_some(order)
}

/// The three-predictor example model
///
/// ```text
/// Y  = a(u) X₁ + X₂ + N_Y
/// X₃ = Y + X₁ + N₃
/// ```
///
/// with standard normal `X₁, X₂, N_Y, N₃`. Each `(label, a)` pair defines one
/// environment.
pub fn toy_scm<L: Into<EnvLabel>>(a: impl IntoIterator<Item = (L, f64)>) -> ScmSpec {
    let mut b = DMatrix::zeros(3, 3);
    b[(2, 0)] = 1.0;
    ScmSpec {
        d: 3,
        b,
        gamma: vec![0.0, 0.0, 1.0],
        beta: vec![0.0, 1.0, 0.0],
        alpha: a
            .into_iter()
            .map(|(u, a)| (u.into(), vec![a, 0.0, 0.0]))
            .collect(),
        noise_x_var: vec![1.0; 3],
        noise_y_var: 1.0,
    }
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(de)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }
}
