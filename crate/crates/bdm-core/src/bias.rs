//! Measurement-bias process model.
//!
//! Each measurement dimension `i` carries a latent indicator `I_i` and a
//! bias value. Between steps the bias either restarts from the fresh-bias
//! prior `N(0, sigma_tilde_i)` (indicator off, probability `1 - omega_i`)
//! or persists with a random-walk increment `N(0, sigma_breve_i)`
//! (indicator on, probability `omega_i`). The posterior over the bias
//! vector is kept Gaussian by matching the first two moments of the
//! resulting 2^m-component mixture in closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Indicator probabilities are clamped to this interior range inside the
/// moment-matched prediction and the posterior-covariance combination, so
/// exactly-saturated probabilities cannot zero out entire variance terms.
const OMEGA_CLAMP: f64 = 1e-12;

pub(crate) fn clamp_omega(w: f64) -> f64 {
    w.clamp(OMEGA_CLAMP, 1.0 - OMEGA_CLAMP)
}

/// Gaussian bias belief with per-dimension indicator probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasBelief {
    /// Posterior bias mean (length m).
    pub theta_hat: DVector<f64>,
    /// Posterior bias covariance (m x m).
    pub sigma: DMatrix<f64>,
    /// Posterior indicator probabilities, each in `[0, 1]`.
    pub omega: DVector<f64>,
}

impl BiasBelief {
    pub fn new(theta_hat: DVector<f64>, sigma: DMatrix<f64>, omega: DVector<f64>) -> Result<Self> {
        let m = theta_hat.len();
        if sigma.nrows() != m || sigma.ncols() != m {
            return Err(Error::DimensionMismatch {
                what: "bias covariance",
                expected: m,
                actual: sigma.nrows().max(sigma.ncols()),
            });
        }
        if omega.len() != m {
            return Err(Error::DimensionMismatch {
                what: "indicator probabilities",
                expected: m,
                actual: omega.len(),
            });
        }
        if omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument {
                what: "indicator probabilities",
                details: "entries must lie in [0, 1]".to_string(),
            });
        }
        Ok(Self {
            theta_hat,
            sigma: symmetrize(&sigma),
            omega,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }
}

/// Static hyper-parameters of the bias process (all diagonal, length m).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasHyperParams {
    /// Fresh-bias prior variances (diagonal of the restart covariance).
    pub sigma_tilde: DVector<f64>,
    /// Random-walk increment variances for a persisting bias.
    pub sigma_breve: DVector<f64>,
    /// Prior indicator probabilities, each in `[0, 1]`.
    pub theta_prior: DVector<f64>,
}

impl BiasHyperParams {
    pub fn new(
        sigma_tilde: DVector<f64>,
        sigma_breve: DVector<f64>,
        theta_prior: DVector<f64>,
    ) -> Result<Self> {
        let m = sigma_tilde.len();
        crate::linalg::check_len(&sigma_breve, m, "sigma_breve")?;
        crate::linalg::check_len(&theta_prior, m, "theta_prior")?;
        if sigma_tilde.iter().chain(sigma_breve.iter()).any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument {
                what: "bias variances",
                details: "variances must be nonnegative".to_string(),
            });
        }
        if theta_prior.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument {
                what: "theta_prior",
                details: "entries must lie in [0, 1]".to_string(),
            });
        }
        Ok(Self {
            sigma_tilde,
            sigma_breve,
            theta_prior,
        })
    }

    /// Uniform hyper-parameters across `m` dimensions.
    pub fn uniform(m: usize, sigma_tilde: f64, sigma_breve: f64, theta_prior: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(m, sigma_tilde),
            DVector::from_element(m, sigma_breve),
            DVector::from_element(m, theta_prior),
        )
    }
}

/// Moment-matched one-step bias prediction.
///
/// Marginalizing the restart-or-persist transition over the previous
/// posterior gives, with `w = omega` and `W = diag(w)`:
///
/// ```text
/// theta- = W theta+
/// Sigma- = (I - W) Sigma~ + W Sigma^ + Sigma+ .* (w w^T + W (I - W))
///          + W (I - W) diag(theta+)^2
/// ```
///
/// (`.*` is the elementwise product; the last two terms are the
/// indicator-mixing spread of the mean.) These are the exact first two
/// moments of the 2^m-component transition mixture.
pub fn predict_bias(
    prev: &BiasBelief,
    hp: &BiasHyperParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = prev.dim();
    crate::linalg::check_len(&hp.sigma_tilde, m, "sigma_tilde")?;

    let theta_minus = prev.omega.component_mul(&prev.theta_hat);

    let w: Vec<f64> = prev.omega.iter().map(|&v| clamp_omega(v)).collect();
    let mut sigma_minus = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut v = prev.sigma[(i, j)] * w[i] * w[j];
            if i == j {
                let mix = w[i] * (1.0 - w[i]);
                v += (1.0 - w[i]) * hp.sigma_tilde[i]
                    + w[i] * hp.sigma_breve[i]
                    + prev.sigma[(i, i)] * mix
                    + mix * prev.theta_hat[i] * prev.theta_hat[i];
            }
            sigma_minus[(i, j)] = v;
        }
    }
    Ok((theta_minus, symmetrize(&sigma_minus)))
}

/// Samples one bias transition given the previous bias and the indicator
/// vector: dimensions with the indicator off restart from the fresh-bias
/// prior, dimensions with it on persist with a random-walk increment.
///
/// Both candidate draws are consumed for every dimension regardless of the
/// indicator, so the RNG stream advances identically for all indicator
/// patterns (bitwise reproducibility across scenario variants).
pub fn bias_transition_sample<R: Rng>(
    prev: &DVector<f64>,
    indicator: &[bool],
    hp: &BiasHyperParams,
    rng: &mut R,
) -> DVector<f64> {
    let m = prev.len();
    debug_assert_eq!(indicator.len(), m);
    let mut out = DVector::zeros(m);
    for i in 0..m {
        let fresh: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            * hp.sigma_tilde[i].sqrt();
        let walk: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            * hp.sigma_breve[i].sqrt();
        out[i] = if indicator[i] { prev[i] + walk } else { fresh };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn belief(theta: &[f64], sigma: DMatrix<f64>, omega: &[f64]) -> BiasBelief {
        BiasBelief::new(
            DVector::from_row_slice(theta),
            sigma,
            DVector::from_row_slice(omega),
        )
        .unwrap()
    }

    /// Exact mixture moments by exhaustive enumeration of the 2^m
    /// indicator patterns: the independent oracle for `predict_bias`.
    fn enumerated_moments(
        prev: &BiasBelief,
        hp: &BiasHyperParams,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let m = prev.dim();
        let mut mean = DVector::zeros(m);
        let mut second = DMatrix::zeros(m, m);
        for pattern in 0..(1usize << m) {
            let on = |i: usize| pattern >> i & 1 == 1;
            let mut p = 1.0;
            for i in 0..m {
                p *= if on(i) { prev.omega[i] } else { 1.0 - prev.omega[i] };
            }
            let mut mc = DVector::zeros(m);
            let mut cc = DMatrix::zeros(m, m);
            for i in 0..m {
                if on(i) {
                    mc[i] = prev.theta_hat[i];
                    cc[(i, i)] += hp.sigma_breve[i];
                } else {
                    cc[(i, i)] += hp.sigma_tilde[i];
                }
                for j in 0..m {
                    if on(i) && on(j) {
                        cc[(i, j)] += prev.sigma[(i, j)];
                    }
                }
            }
            mean += p * &mc;
            second += p * (&cc + &mc * mc.transpose());
        }
        let cov = &second - &mean * mean.transpose();
        (mean, cov)
    }

    #[test]
    fn full_persistence_keeps_mean_and_adds_walk_variance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]);
        let prev = belief(&[2.0, -1.0], sigma.clone(), &[1.0, 1.0]);
        let hp = BiasHyperParams::uniform(2, 100.0, 0.3, 0.5).unwrap();
        let (theta, cov) = predict_bias(&prev, &hp).unwrap();
        assert_abs_diff_eq!(theta, prev.theta_hat, epsilon = 1e-12);
        let expected = &sigma + DMatrix::from_diagonal(&hp.sigma_breve);
        assert_abs_diff_eq!(cov, expected, epsilon = 1e-8);
    }

    #[test]
    fn full_restart_resets_to_fresh_prior() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]);
        let prev = belief(&[2.0, -1.0], sigma, &[0.0, 0.0]);
        let hp = BiasHyperParams::uniform(2, 7.0, 0.3, 0.5).unwrap();
        let (theta, cov) = predict_bias(&prev, &hp).unwrap();
        assert_abs_diff_eq!(theta, DVector::zeros(2), epsilon = 1e-12);
        assert_abs_diff_eq!(
            cov,
            DMatrix::from_diagonal(&hp.sigma_tilde),
            epsilon = 1e-8
        );
    }

    #[test]
    fn prediction_matches_exhaustive_mixture_enumeration() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.2, 0.3, -0.1, 0.3, 0.9, 0.2, -0.1, 0.2, 1.7]);
        let prev = belief(&[4.0, -2.5, 0.7], sigma, &[0.3, 0.65, 0.9]);
        let hp = BiasHyperParams::new(
            DVector::from_row_slice(&[5.0, 6.0, 7.0]),
            DVector::from_row_slice(&[0.2, 0.1, 0.4]),
            DVector::from_element(3, 0.5),
        )
        .unwrap();
        let (theta, cov) = predict_bias(&prev, &hp).unwrap();
        let (em, ec) = enumerated_moments(&prev, &hp);
        assert_abs_diff_eq!(theta, em, epsilon = 1e-12);
        assert_abs_diff_eq!(cov, ec, epsilon = 1e-12);
    }

    #[test]
    fn predicted_covariance_stays_factorizable() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 1.9, 1.9, 2.0]);
        let prev = belief(&[10.0, -10.0], sigma, &[0.5, 0.01]);
        let hp = BiasHyperParams::uniform(2, 0.1, 0.1, 0.5).unwrap();
        let (_, cov) = predict_bias(&prev, &hp).unwrap();
        assert!(crate::linalg::robust_sqrt(&cov).is_ok());
    }

    #[test]
    fn transition_sample_degenerate_hyperparams_are_exact() {
        let hp = BiasHyperParams::uniform(2, 0.0, 0.0, 0.5).unwrap();
        let prev = DVector::from_row_slice(&[3.0, -4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = bias_transition_sample(&prev, &[true, false], &hp, &mut rng);
        assert_eq!(s[0], 3.0); // persisting with zero walk variance
        assert_eq!(s[1], 0.0); // restarting with zero fresh variance
    }

    #[test]
    fn transition_sample_is_reproducible_and_stream_stable() {
        let hp = BiasHyperParams::uniform(2, 2.0, 0.5, 0.5).unwrap();
        let prev = DVector::from_row_slice(&[1.0, 2.0]);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let sa = bias_transition_sample(&prev, &[true, true], &hp, &mut a);
        let sb = bias_transition_sample(&prev, &[true, true], &hp, &mut b);
        assert_eq!(sa, sb);
        // Different indicators consume the same amount of randomness.
        let mut c = ChaCha8Rng::seed_from_u64(9);
        let _ = bias_transition_sample(&prev, &[false, true], &hp, &mut c);
        assert_eq!(a.next_u64_check(), c.next_u64_check());
    }

    trait NextU64Check {
        fn next_u64_check(&mut self) -> u64;
    }
    impl NextU64Check for ChaCha8Rng {
        fn next_u64_check(&mut self) -> u64 {
            rand::RngCore::next_u64(self)
        }
    }

    #[test]
    fn constructors_validate_ranges() {
        assert!(BiasBelief::new(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[0.5, 1.5]),
        )
        .is_err());
        assert!(BiasHyperParams::uniform(2, -1.0, 0.1, 0.5).is_err());
        assert!(BiasHyperParams::uniform(2, 1.0, 0.1, 1.5).is_err());
    }
}
