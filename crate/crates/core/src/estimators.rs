//! Least squares and LMMSE feature estimation.
//!
//! Nothing here fits an intercept: every variable in the model is zero-mean,
//! so centering is left to the caller when data are shifted.

use nalgebra::{DMatrix, DVector};

use crate::data::EnvDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, all_finite};
use crate::scm::PopulationMoments;

/// Result of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    /// Residual sum of squares.
    pub rss: f64,
    /// Numerical rank of the design.
    pub rank: usize,
}

/// Minimum-norm least squares of `target` on the columns of `design`.
///
/// The design is reduced by a Householder QR to its triangular factor `R`,
/// and `R` is then decomposed by SVD. Singular values below
/// `max(n, p) · ε · σ_max` are treated as zero, which resolves rank-deficient
/// designs to the minimum-norm solution.
pub fn ols(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if n == 0 || p == 0 {
        return Err(Error::EmptyInput);
    }
    if target.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: target.len(),
        });
    }
    if !all_finite(design.iter()) || !all_finite(target.iter()) {
        return Err(Error::NonFiniteInput);
    }

    let qr = design.clone().qr();
    let mut qty = target.clone();
    qr.q_tr_mul(&mut qty);
    let r = qr.r();
    let k = r.nrows();
    let svd = linalg::svd(&r);
    let sigma_max = svd.s.max();
    let tol = n.max(p) as f64 * f64::EPSILON * sigma_max;
    let rank = svd.s.iter().filter(|&&s| s > tol).count();
    let coef = svd.solve(&qty.rows(0, k).into_owned(), tol);

    let residual = target - design * &coef;
    Ok(OlsFit {
        coef,
        rss: residual.norm_squared(),
        rank,
    })
}

/// Columns `cols` of `x`, in order.
pub(crate) fn columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    x.select_columns(cols)
}

/// Fitted LMMSE feature `Ê_l[X_k | X_S; U]` over pooled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub k: usize,
    pub s: Vec<usize>,
    /// Fitted values, aligned with the pooled row order.
    pub values: DVector<f64>,
    /// Per-environment regression coefficients of `X_k` on `X_S`.
    pub env_coefs: Vec<DVector<f64>>,
}

/// For each environment separately, regress `X_k` on `X_S` (no intercept)
/// and keep the fitted values; blocks are concatenated in input order.
pub fn env_feature(datasets: &[EnvDataset], k: usize, s: &[usize]) -> Result<FeatureColumn> {
    let d = crate::data::common_dim(datasets)?;
    check_feature_index(d, k, s)?;
    let mut values = Vec::with_capacity(crate::data::pooled_rows(datasets));
    let mut env_coefs = Vec::with_capacity(datasets.len());
    for ds in datasets {
        if ds.n() < s.len() + 1 {
            return Err(Error::InsufficientSamples(ds.env.clone()));
        }
        let xs = columns(&ds.x, s);
        let xk = ds.x.column(k).into_owned();
        let fit = ols(&xs, &xk)?;
        values.extend((&xs * &fit.coef).iter());
        env_coefs.push(fit.coef);
    }
    Ok(FeatureColumn {
        k,
        s: s.to_vec(),
        values: DVector::from_vec(values),
        env_coefs,
    })
}

pub(crate) fn check_feature_index(d: usize, k: usize, s: &[usize]) -> Result<()> {
    if k >= d || s.is_empty() || s.contains(&k) || s.iter().any(|&j| j >= d) {
        return Err(Error::InvalidArgument(format!(
            "invalid feature index (k={k}, S={s:?}) for d={d}"
        )));
    }
    Ok(())
}

/// Target variable of a population regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Y,
    X(usize),
}

/// `Cov(X_S, X_S)⁻¹ Cov(X_S, target)` from exact moments.
pub fn population_ols(
    moments: &PopulationMoments,
    target: Target,
    s: &[usize],
) -> Result<DVector<f64>> {
    let d = moments.d();
    if s.is_empty() || s.iter().any(|&j| j >= d) {
        return Err(Error::InvalidArgument(format!("bad index set {s:?}")));
    }
    let g = linalg::principal(&moments.cov_xx, s);
    let rhs = match target {
        Target::Y => DVector::from_fn(s.len(), |i, _| moments.cov_xy[s[i]]),
        Target::X(k) if k < d => linalg::column_at(&moments.cov_xx, s, k),
        Target::X(k) => {
            return Err(Error::InvalidArgument(format!(
                "target x{} out of range",
                k + 1
            )))
        }
    };
    linalg::solve_spd(&g, &rhs).ok_or(Error::SingularCovariance)
}

/// Linear-interpolation quantile with inclusive endpoints: for sorted values
/// `v` and `h = (n − 1) q`, returns `v[⌊h⌋] + (h − ⌊h⌋)(v[⌈h⌉] − v[⌊h⌋])`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {q} outside [0, 1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{population_moments, sample, toy_scm};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let fit = ols(&x, &y).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-14);
        assert!(fit.rss < 1e-24);
        assert_eq!(fit.rank, 1);
    }

    #[test]
    fn duplicated_column_splits_coefficient() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let fit = ols(&x, &y).unwrap();
        assert_eq!(fit.rank, 1);
        assert!((fit.coef[0] - 1.0).abs() < 1e-12);
        assert!((fit.coef[1] - 1.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn wide_design_is_min_norm() {
        // one equation, two unknowns: x1 + x2 = 2 -> (1, 1)
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![2.0]);
        let fit = ols(&x, &y).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-12 && (fit.coef[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, f64::NAN]);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(ols(&x, &y), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn toy_feature_coefficients() {
        // E_l[X3 | X1, X2; u] = (1 + a) X1 + X2; here a = 0
        let spec = toy_scm([("u", 0.0), ("v", 2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = sample(&spec, &"u".into(), 100_000, &mut rng).unwrap();
        let fit = ols(&columns(&ds.x, &[0, 1]), &ds.x.column(2).into_owned()).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 0.02);
        assert!((fit.coef[1] - 1.0).abs() < 0.02);

        let dv = sample(&spec, &"v".into(), 100_000, &mut rng).unwrap();
        let feat = env_feature(&[ds, dv], 2, &[0, 1]).unwrap();
        assert_eq!(feat.values.len(), 200_000);
        assert!((feat.env_coefs[1][0] - 3.0).abs() < 0.02);
        assert!((feat.env_coefs[1][1] - 1.0).abs() < 0.02);
    }

    #[test]
    fn single_env_feature_equals_fitted_values() {
        let spec = toy_scm([("u", 0.5), ("v", 2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = sample(&spec, &"u".into(), 50, &mut rng).unwrap();
        let feat = env_feature(std::slice::from_ref(&ds), 0, &[2]).unwrap();
        let xs = columns(&ds.x, &[2]);
        let fit = ols(&xs, &ds.x.column(0).into_owned()).unwrap();
        assert_eq!(feat.values, &xs * fit.coef);
    }

    #[test]
    fn feature_requires_enough_rows() {
        let spec = toy_scm([("u", 0.5), ("v", 2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = sample(&spec, &"u".into(), 2, &mut rng).unwrap();
        assert!(matches!(
            env_feature(&[ds], 2, &[0, 1]),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn toy_population_regressions() {
        for a in [-3.0, 0.0, 1.0, 2.5] {
            let spec = toy_scm([("u", a), ("v", a + 1.0)]);
            let m = population_moments(&spec, &"u".into()).unwrap();
            let theta = population_ols(&m, Target::Y, &[0, 1, 2]).unwrap();
            let want = [0.5 * (a - 1.0), 0.5, 0.5];
            for (g, w) in theta.iter().zip(want) {
                assert!((g - w).abs() < 1e-12, "a={a}: {theta}");
            }
        }
        // X2 on (X1, X3) with a = 0: [[1,1],[1,4]] c = (0,1) -> (-1/3, 1/3)
        let spec = toy_scm([("u", 0.0), ("v", 1.0)]);
        let m = population_moments(&spec, &"u".into()).unwrap();
        let c = population_ols(&m, Target::X(1), &[0, 2]).unwrap();
        assert!((c[0] + 1.0 / 3.0).abs() < 1e-12);
        assert!((c[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_design_gives_one_hot() {
        let m = PopulationMoments {
            env: "u".into(),
            cov_xx: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0])),
            cov_xy: DVector::from_vec(vec![0.0, 6.0, 0.0]),
            var_y: 20.0,
        };
        let theta = population_ols(&m, Target::Y, &[0, 1, 2]).unwrap();
        for (g, w) in theta.iter().zip([0.0, 2.0, 0.0]) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_population_covariance() {
        let m = PopulationMoments {
            env: "u".into(),
            cov_xx: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            cov_xy: DVector::from_vec(vec![1.0, 1.0]),
            var_y: 2.0,
        };
        assert!(matches!(
            population_ols(&m, Target::Y, &[0, 1]),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn quantile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        // h = 4 * 0.05 = 0.2 -> 10 + 0.2 * 10
        let q = quantile(&[10.0, 20.0, 30.0, 40.0, 50.0], 0.05).unwrap();
        assert!((q - 12.0).abs() < 1e-12);
        assert!(matches!(quantile(&[], 0.5), Err(Error::EmptyInput)));
    }

    proptest! {
        #[test]
        fn residual_is_orthogonal_to_design(
            seed in any::<u64>(),
            n in 5usize..40,
            p in 1usize..5,
        ) {
            prop_assume!(n > p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let fit = ols(&x, &y).unwrap();
            let resid = &y - &x * &fit.coef;
            let scale = x.amax() * resid.amax().max(1e-300) * n as f64;
            prop_assert!((x.transpose() * &resid).amax() <= 1e-8 * scale.max(1.0));
            prop_assert!((resid.norm_squared() - fit.rss).abs() < 1e-9);
        }

        #[test]
        fn quantile_is_monotone_and_order_free(
            mut values in prop::collection::vec(-1e6f64..1e6, 1..50),
            q1 in 0.0f64..=1.0,
            q2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = quantile(&values, lo).unwrap();
            let b = quantile(&values, hi).unwrap();
            prop_assert!(a <= b);
            values.reverse();
            prop_assert_eq!(quantile(&values, lo).unwrap(), a);
        }
    }
}
