use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_solvable, topological_order, ScmSpec};
use crate::data::{EnvDataset, EnvLabel};
use crate::error::{Error, Result};

/// Exact second moments of `(X, Y)` given `U = u`. All means are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub env: EnvLabel,
    pub cov_xx: DMatrix<f64>,
    pub cov_xy: DVector<f64>,
    pub var_y: f64,
}

impl PopulationMoments {
    pub fn d(&self) -> usize {
        self.cov_xy.len()
    }

    /// Joint `(d+1)×(d+1)` covariance of `(X, Y)`.
    pub fn joint(&self) -> DMatrix<f64> {
        let d = self.d();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.cov_xx);
        for i in 0..d {
            m[(i, d)] = self.cov_xy[i];
            m[(d, i)] = self.cov_xy[i];
        }
        m[(d, d)] = self.var_y;
        m
    }

    /// Equal-weight mixture of several environments' moments.
    pub fn mixture(moments: &[PopulationMoments], env: EnvLabel) -> Result<Self> {
        let first = moments.first().ok_or(Error::EmptyInput)?;
        let w = 1.0 / moments.len() as f64;
        let mut out = PopulationMoments {
            env,
            cov_xx: DMatrix::zeros(first.d(), first.d()),
            cov_xy: DVector::zeros(first.d()),
            var_y: 0.0,
        };
        for m in moments {
            out.cov_xx += &m.cov_xx * w;
            out.cov_xy += &m.cov_xy * w;
            out.var_y += m.var_y * w;
        }
        Ok(out)
    }
}

/// Draw `n` i.i.d. rows of `(X, Y)` from environment `env`.
///
/// Noise is independent zero-mean Gaussian with the spec's variances; each row
/// is produced by forward substitution along a topological order of `A(u)`.
pub fn sample<R: Rng + ?Sized>(
    spec: &ScmSpec,
    env: &EnvLabel,
    n: usize,
    rng: &mut R,
) -> Result<EnvDataset> {
    check_solvable(spec)?;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let alpha = spec.alpha_for(env)?;
    let a = spec.combined_matrix(Some(alpha));
    let order = topological_order(&a).expect("acyclicity checked above");
    let d = spec.d;
    let sd: Vec<f64> = spec.noise_variances().iter().map(|v| v.sqrt()).collect();
    let parents: Vec<Vec<(usize, f64)>> = (0..=d)
        .map(|i| {
            (0..=d)
                .filter(|&j| a[(i, j)] != 0.0)
                .map(|j| (j, a[(i, j)]))
                .collect()
        })
        .collect();

    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut z = vec![0.0; d + 1];
    for row in 0..n {
        for &node in &order {
            let eps: f64 = rng.sample(StandardNormal);
            z[node] = parents[node].iter().map(|&(j, c)| c * z[j]).sum::<f64>() + sd[node] * eps;
        }
        for j in 0..d {
            x[(row, j)] = z[j];
        }
        y[row] = z[d];
    }
    EnvDataset::new(env.clone(), x, Some(y))
}

/// Closed-form covariance `(I − A(u))⁻¹ Σ_ε (I − A(u))⁻ᵀ`, split into blocks.
pub fn population_moments(spec: &ScmSpec, env: &EnvLabel) -> Result<PopulationMoments> {
    check_solvable(spec)?;
    let alpha = spec.alpha_for(env)?;
    let d = spec.d;
    let a = spec.combined_matrix(Some(alpha));
    let resolvent = (DMatrix::identity(d + 1, d + 1) - a)
        .try_inverse()
        .ok_or(Error::SingularCovariance)?;
    let noise = DMatrix::from_diagonal(&DVector::from_vec(spec.noise_variances()));
    let mut cov = &resolvent * noise * resolvent.transpose();
    // symmetrize away rounding
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(PopulationMoments {
        env: env.clone(),
        cov_xx: cov.view((0, 0), (d, d)).into_owned(),
        cov_xy: cov.view((0, d), (d, 1)).column(0).into_owned(),
        var_y: cov[(d, d)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::toy_scm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_moments_match_hand_expansion() {
        // X3 = 2 X1 + X2 + N_Y + N3 when a = 1
        let spec = toy_scm([("u", 1.0), ("v", 0.0)]);
        let m = population_moments(&spec, &"u".into()).unwrap();
        assert!((m.cov_xx[(2, 2)] - 7.0).abs() < 1e-12);
        assert!((m.cov_xx[(0, 2)] - 2.0).abs() < 1e-12);
        assert!((m.var_y - 3.0).abs() < 1e-12);
        let expect = [1.0, 1.0, 4.0];
        for (got, want) in m.cov_xy.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_give_noise_covariance() {
        let mut spec = toy_scm([("u", 0.0), ("v", 0.0)]);
        spec.b.fill(0.0);
        spec.gamma = vec![0.0; 3];
        spec.beta = vec![0.0; 3];
        spec.noise_x_var = vec![1.0, 2.0, 3.0];
        let m = population_moments(&spec, &"u".into()).unwrap();
        assert_eq!(
            m.cov_xx,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]))
        );
        assert_eq!(m.var_y, 1.0);
    }

    #[test]
    fn unknown_environment_is_an_error() {
        let spec = toy_scm([("u", 0.0), ("v", 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample(&spec, &"w".into(), 5, &mut rng),
            Err(Error::UnknownEnvironment(_))
        ));
    }

    #[test]
    fn cyclic_spec_cannot_be_sampled() {
        let mut spec = toy_scm([("u", 0.0), ("v", 1.0)]);
        spec.b[(0, 1)] = 1.0;
        spec.b[(1, 0)] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample(&spec, &"u".into(), 5, &mut rng),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn joint_is_positive_semidefinite() {
        let spec = toy_scm([("u", -3.0), ("v", 1.0)]);
        let m = population_moments(&spec, &"u".into()).unwrap();
        let eig = m.joint().symmetric_eigenvalues();
        assert!(eig.iter().all(|&l| l > -1e-10));
    }
}
