//! Population-level counterparts of the training procedure, computed from
//! exact moments. These serve as oracles for the sample code and make the
//! invariance statements checkable to rounding error.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::FeatureIndex;
use crate::error::{Error, Result};
use crate::estimators::{ols, population_ols, Target};
use crate::scm::{population_moments, PopulationMoments, ScmSpec};

/// Population augmented regression over an equal-weight mixture of
/// environments.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFit {
    /// `(λ, η₁, …, η_d)`.
    pub beta: DVector<f64>,
    /// Mixture mean squared error of `λ f + ηᵀX` for `Y`.
    pub mse: f64,
    /// Per-environment coefficients of `X_k` on `X_S`.
    pub env_coefs: Vec<DVector<f64>>,
}

/// Population version of [`super::fit_candidate`].
///
/// Within environment `u` the augmented regressor is `M_u X` with
/// `M_u = [c_uᵀ; I]`, so the mixture MSE of `βᵀ M_u X` splits into the
/// per-environment LMMSE error plus `‖L_uᵀ (θ_u − M_uᵀ β)‖²`, where
/// `Σ_u = L_u L_uᵀ` and `θ_u` are the LMMSE coefficients of `Y` on `X`.
/// Minimizing the stacked square-root form rather than the normal equations
/// keeps the solve accurate when the feature coefficient is small and `β`
/// correspondingly large. When the problem is rank deficient (the feature is
/// the same linear map in every environment) the minimum-norm solution is
/// returned.
pub fn population_candidate(
    moments: &[PopulationMoments],
    feature: &FeatureIndex,
) -> Result<PopulationFit> {
    let first = moments.first().ok_or(Error::EmptyInput)?;
    let d = first.d();
    crate::estimators::check_feature_index(d, feature.k, &feature.s)?;
    let w = 1.0 / moments.len() as f64;
    let sw = w.sqrt();
    let all: Vec<usize> = (0..d).collect();

    let mut env_coefs = Vec::with_capacity(moments.len());
    let mut design = DMatrix::zeros(d * moments.len(), d + 1);
    let mut target = DVector::zeros(d * moments.len());
    let mut floor = 0.0;
    for (i, m) in moments.iter().enumerate() {
        let c = population_ols(m, Target::X(feature.k), &feature.s)?;
        let theta = population_ols(m, Target::Y, &all)?;
        let lt = Cholesky::new(m.cov_xx.clone())
            .ok_or(Error::SingularCovariance)?
            .l()
            .transpose();
        let mut mt = DMatrix::zeros(d, d + 1);
        for (ci, &si) in c.iter().zip(&feature.s) {
            mt[(si, 0)] = *ci;
        }
        mt.view_mut((0, 1), (d, d)).fill_with_identity();
        design
            .view_mut((i * d, 0), (d, d + 1))
            .copy_from(&(&lt * mt * sw));
        target.rows_mut(i * d, d).copy_from(&(&lt * &theta * sw));
        floor += w * (m.var_y - theta.dot(&m.cov_xy));
        env_coefs.push(c);
    }
    let fit = ols(&design, &target)?;
    Ok(PopulationFit {
        beta: fit.coef,
        mse: floor + fit.rss,
        env_coefs,
    })
}

/// Mixture MSE of the per-environment LMMSE predictor `E_l[Y | X; U]`, the
/// smallest error any predictor linear in `X` with environment-dependent
/// coefficients can reach.
pub fn population_lmmse_mse(moments: &[PopulationMoments]) -> Result<f64> {
    if moments.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for m in moments {
        let all: Vec<usize> = (0..m.d()).collect();
        let theta = population_ols(m, Target::Y, &all)?;
        total += m.var_y - theta.dot(&m.cov_xy);
    }
    Ok(total / moments.len() as f64)
}

/// Whether `(k, S)` meets the structural conditions under which the feature
/// coefficients are affine in `α(u)`: `α_k ≡ 0` and the support of `α` lies
/// inside `S`.
pub fn matching_conditions_hold(spec: &ScmSpec, feature: &FeatureIndex) -> bool {
    let support = spec.alpha_support();
    !support.contains(&feature.k) && support.iter().all(|j| feature.s.contains(j))
}

/// Decomposition `c_u = λ α(u) + η` of the per-environment feature
/// coefficients (embedded into `R^d`, zero outside `S`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLambda {
    pub lambda: f64,
    pub eta: DVector<f64>,
    /// `max_u ‖c_u − λ α(u) − η‖_∞`; zero to rounding when the decomposition
    /// is exact.
    pub residual: f64,
    /// Largest entrywise spread of `c_u` across environments.
    pub spread: f64,
}

/// Least-squares fit of `λ` and `η` in `c_u = λ α(u) + η` from exact moments.
pub fn feature_lambda(spec: &ScmSpec, feature: &FeatureIndex) -> Result<FeatureLambda> {
    let d = spec.d;
    let mut coefs = Vec::new();
    let mut alphas = Vec::new();
    for (u, a) in &spec.alpha {
        let m = population_moments(spec, u)?;
        let c = population_ols(&m, Target::X(feature.k), &feature.s)?;
        let mut full = DVector::zeros(d);
        for (ci, &si) in c.iter().zip(&feature.s) {
            full[si] = *ci;
        }
        coefs.push(full);
        alphas.push(DVector::from_column_slice(a));
    }
    let (c0, a0) = (&coefs[0], &alphas[0]);
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, a) in coefs.iter().zip(&alphas).skip(1) {
        let da = a - a0;
        num += (c - c0).dot(&da);
        den += da.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::InvalidSpec(vec![
            crate::scm::Violation::AlphaDegenerate,
        ]));
    }
    let lambda = num / den;
    let eta = c0 - a0 * lambda;
    let residual = coefs
        .iter()
        .zip(&alphas)
        .map(|(c, a)| (c - a * lambda - &eta).amax())
        .fold(0.0, f64::max);
    let spread = coefs.iter().map(|c| (c - c0).amax()).fold(0.0, f64::max);
    Ok(FeatureLambda {
        lambda,
        eta,
        residual,
        spread,
    })
}
