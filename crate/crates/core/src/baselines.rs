//! Comparison methods: pooled least squares and anchor regression with
//! environment-indicator anchors.
//!
//! For anchor regression, `P_A` is the projection onto the one-hot environment
//! indicators, so `P_A v` replaces each entry of `v` by its environment mean.
//! The estimator minimizes
//!
//! ```text
//! ‖(I − P_A)(Y − Xb)‖² + γ ‖P_A (Y − Xb)‖²
//! ```
//!
//! which is ordinary least squares after applying `W = (I − P_A) + √γ P_A` to
//! both `X` and `Y`. With a single environment `P_A` is the all-ones
//! projection, so `γ ≠ 1` still rescales the sample mean of that one block and
//! the fit differs from pooled OLS by that much.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{self, EnvDataset};
use crate::error::{Error, Result};
use crate::estimators::ols;

/// Candidate penalties searched by [`anchor_cv`], ascending.
pub const ANCHOR_GRID: [f64; 9] = [0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0];

pub const CV_FOLDS: usize = 5;

/// Single least squares fit of the pooled response on the pooled predictors.
pub fn pooled_ols(train: &[EnvDataset]) -> Result<DVector<f64>> {
    let x = data::pooled_x(train)?;
    let y = data::pooled_y(train)?;
    Ok(ols(&x, &y)?.coef)
}

fn env_mean(x: &DMatrix<f64>) -> RowDVector<f64> {
    x.row_mean()
}

/// Apply `W = (I − P_A) + √γ P_A` blockwise.
fn anchor_transform(train: &[EnvDataset], gamma: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut x = data::pooled_x(train)?;
    let mut y = data::pooled_y(train)?;
    let shift = gamma.sqrt() - 1.0;
    let mut offset = 0;
    for ds in train {
        let n = ds.n();
        let mx = env_mean(&ds.x);
        let my = ds.response()?.mean();
        for i in offset..offset + n {
            let mut row = x.row_mut(i);
            row += &mx * shift;
            y[i] += my * shift;
        }
        offset += n;
    }
    Ok((x, y))
}

/// Closed-form anchor regression coefficient for penalty `gamma > 0`.
pub fn anchor_fit(train: &[EnvDataset], gamma: f64) -> Result<DVector<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "anchor penalty must be positive, got {gamma}"
        )));
    }
    let (x, y) = anchor_transform(train, gamma)?;
    Ok(ols(&x, &y)?.coef)
}

/// Value of the anchor objective at `coef`.
pub fn anchor_objective(train: &[EnvDataset], gamma: f64, coef: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for ds in train {
        let r = ds.response()? - &ds.x * coef;
        let mean = r.mean();
        let within = r.add_scalar(-mean).norm_squared();
        total += within + gamma * ds.n() as f64 * mean * mean;
    }
    Ok(total)
}

/// Result of [`anchor_cv`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFit {
    pub gamma: f64,
    pub coef: DVector<f64>,
    /// `(γ, mean squared validation error)` for every grid point.
    pub cv_table: Vec<(f64, f64)>,
}

/// Fold id of every row, per environment. Each environment's rows are
/// shuffled and dealt round-robin into `n_folds` folds, so every fold sees
/// every environment that has at least `n_folds` rows.
pub fn stratified_folds<R: Rng + ?Sized>(
    train: &[EnvDataset],
    n_folds: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    train
        .iter()
        .map(|ds| {
            let mut rows: Vec<usize> = (0..ds.n()).collect();
            rows.shuffle(rng);
            let mut fold = vec![0; ds.n()];
            for (pos, &row) in rows.iter().enumerate() {
                fold[row] = pos % n_folds;
            }
            fold
        })
        .collect()
}

/// Choose `γ` from [`ANCHOR_GRID`] by 5-fold environment-stratified
/// cross-validation of squared prediction error and refit on all data.
///
/// Errors within `1e-10 · mean(Y²)` of the best count as ties and are
/// resolved toward the smaller `γ`.
pub fn anchor_cv<R: Rng + ?Sized>(train: &[EnvDataset], rng: &mut R) -> Result<AnchorFit> {
    let n_total = data::pooled_rows(train);
    if n_total < 2 * CV_FOLDS {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least {} rows, got {n_total}",
            2 * CV_FOLDS
        )));
    }
    let folds = stratified_folds(train, CV_FOLDS, rng);

    let mut splits = Vec::with_capacity(CV_FOLDS);
    for f in 0..CV_FOLDS {
        let mut fit_part = Vec::new();
        let mut held_out = Vec::new();
        for (ds, fold) in train.iter().zip(&folds) {
            let (keep, hold): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| fold[i] != f);
            if !keep.is_empty() {
                fit_part.push(ds.select_rows(&keep));
            }
            if !hold.is_empty() {
                held_out.push(ds.select_rows(&hold));
            }
        }
        splits.push((fit_part, held_out));
    }

    let mut cv_table = Vec::with_capacity(ANCHOR_GRID.len());
    for &gamma in &ANCHOR_GRID {
        let mut sse = 0.0;
        for (fit_part, held_out) in &splits {
            let coef = anchor_fit(fit_part, gamma)?;
            for ds in held_out {
                sse += (ds.response()? - &ds.x * &coef).norm_squared();
            }
        }
        cv_table.push((gamma, sse / n_total as f64));
    }

    let y = data::pooled_y(train)?;
    let tie_tol = 1e-10 * (y.norm_squared() / n_total as f64).max(f64::MIN_POSITIVE);
    let best_err = cv_table
        .iter()
        .map(|&(_, e)| e)
        .fold(f64::INFINITY, f64::min);
    let gamma = cv_table
        .iter()
        .find(|&&(_, e)| e - best_err <= tie_tol)
        .map(|&(g, _)| g)
        .expect("grid is non-empty");
    Ok(AnchorFit {
        gamma,
        coef: anchor_fit(train, gamma)?,
        cv_table,
    })
}
