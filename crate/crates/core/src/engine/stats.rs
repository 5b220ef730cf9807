use nalgebra::{DMatrix, DVector};

use super::{CandidateFit, FeatureIndex};
use crate::data::{EnvDataset, EnvLabel};
use crate::error::{Error, Result};
use crate::estimators::check_feature_index;
use crate::linalg::{column_at, principal, solve_psd_min_norm};

#[derive(Debug, Clone)]
struct EnvStats {
    env: EnvLabel,
    n: usize,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
}

/// Second-moment summaries of the training data, sufficient to fit any
/// candidate without touching the rows again.
///
/// For environment `e` the feature coefficients are `c_e = G_e[S,S]⁺ G_e[S,k]`
/// with `G_e = X_eᵀ X_e`, and every inner product of the augmented design
/// follows from `G_e` and `X_eᵀ Y_e`:
///
/// ```text
/// fᵀf = Σ_e c_eᵀ G_e[S,S] c_e     fᵀX = Σ_e c_eᵀ G_e[S,:]     fᵀY = Σ_e c_eᵀ (X_eᵀY_e)[S]
/// ```
///
/// The augmented normal equations are then solved with the same
/// minimum-norm convention as [`crate::estimators::ols`]. Agreement with the
/// row-level route in [`super::fit_candidate`] is covered by tests.
#[derive(Debug, Clone)]
pub struct TrainingStats {
    d: usize,
    envs: Vec<EnvStats>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl TrainingStats {
    pub fn from_datasets(train: &[EnvDataset]) -> Result<Self> {
        let d = crate::data::common_dim(train)?;
        let mut gram = DMatrix::zeros(d, d);
        let mut xty = DVector::zeros(d);
        let mut yty = 0.0;
        let mut envs = Vec::with_capacity(train.len());
        for ds in train {
            let y = ds.response()?;
            if !crate::linalg::all_finite(ds.x.iter()) || !crate::linalg::all_finite(y.iter()) {
                return Err(Error::NonFiniteInput);
            }
            let g = ds.x.tr_mul(&ds.x);
            let b = ds.x.tr_mul(y);
            gram += &g;
            xty += &b;
            yty += y.norm_squared();
            envs.push(EnvStats {
                env: ds.env.clone(),
                n: ds.n(),
                gram: g,
                xty: b,
            });
        }
        Ok(TrainingStats {
            d,
            envs,
            gram,
            xty,
            yty,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn fit(&self, feature: &FeatureIndex) -> Result<CandidateFit> {
        let d = self.d;
        let (k, s) = (feature.k, feature.s.as_slice());
        check_feature_index(d, k, s)?;

        let mut ff = 0.0;
        let mut fx = DVector::zeros(d);
        let mut fy = 0.0;
        for e in &self.envs {
            if e.n < s.len() + 1 {
                return Err(Error::InsufficientSamples(e.env.clone()));
            }
            let gss = principal(&e.gram, s);
            let c = solve_psd_min_norm(&gss, &column_at(&e.gram, s, k));
            ff += c.dot(&(&gss * &c));
            for (ci, &si) in c.iter().zip(s) {
                fx.axpy(*ci, &e.gram.row(si).transpose(), 1.0);
                fy += ci * e.xty[si];
            }
        }

        let mut m = DMatrix::zeros(d + 1, d + 1);
        m[(0, 0)] = ff;
        for j in 0..d {
            m[(0, j + 1)] = fx[j];
            m[(j + 1, 0)] = fx[j];
        }
        m.view_mut((1, 1), (d, d)).copy_from(&self.gram);
        let mut rhs = DVector::zeros(d + 1);
        rhs[0] = fy;
        rhs.rows_mut(1, d).copy_from(&self.xty);

        let beta = solve_psd_min_norm(&m, &rhs);
        let rss = (self.yty - 2.0 * beta.dot(&rhs) + beta.dot(&(&m * &beta))).max(0.0);
        Ok(CandidateFit {
            feature: feature.clone(),
            beta,
            train_rss: rss,
        })
    }
}
