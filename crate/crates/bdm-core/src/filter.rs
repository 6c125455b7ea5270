//! Bias detecting and mitigating (BDM) filter step.
//!
//! The joint posterior over state, bias value and bias indicators is
//! intractable; it is approximated by a mean-field factorization
//! `q(x) q(Theta) q(I)` refined by fixed-point iteration. Each filter
//! step runs: state and bias time updates, an initial state update with
//! the prior indicator probabilities, then the variational loop
//! (bias update, indicator update, state update) until the relative
//! state-mean change falls below `tau` and the indicator probabilities
//! have settled, or the iteration cap is hit.
//!
//! Within each sweep the bias factor is refreshed before the indicator
//! factor. The indicator log-odds contain `-tbar2 / (2 R)` with `tbar2`
//! the current bias variance; right after the time update that variance
//! is of the order of the (deliberately vague) onset covariance, which
//! would pin the indicators to zero before any evidence is weighed and
//! leave the loop at an inert fixed point. Scoring the measurement-
//! conditioned bias factor instead lets the residual decide.
//!
//! The indicator's biased-hypothesis score marginalizes the offset over
//! the *predicted* bias belief instead of plugging in the refitted
//! posterior mean. The refit centers on the very residual being judged
//! (its quadratic score vanishes whenever the onset variance dominates
//! the measurement noise), which would put the flag threshold near one
//! noise standard deviation; nominal noise would then raise flags every
//! few steps, each diverting innovation from the state update and
//! inflating the next residuals. Marginalizing keeps the vague-onset
//! normalization penalty: fresh flags need residuals well outside the
//! nominal noise, while dimensions already tracking a bias (tight
//! predicted variance) keep their flags on ordinary evidence.
//!
//! The predicted-measurement statistics (`mu`, `S`, `C`) are functions of
//! the predictive state density only; they are computed once per step and
//! reused across all variational iterations. With the prior indicator
//! probabilities pinned to zero the loop is inert and the step reproduces
//! the plain UKF exactly.

use nalgebra::{DMatrix, DVector};

use crate::bias::{clamp_omega, predict_bias, BiasBelief, BiasHyperParams};
use crate::error::{Error, Result};
use crate::gaussian::{
    correct_with_stats, gaussian_filter_predict, measurement_stats, GaussianBelief,
    MeasurementStats, SigmaPointConfig,
};
use crate::linalg::{check_len, spd_inverse, symmetrize};
use crate::model::StateSpaceModel;

/// Mean norms below this threshold switch the convergence criterion from
/// relative to absolute change.
const GAMMA_NORM_FLOOR: f64 = 1e-12;

/// Largest per-dimension indicator change still considered settled.
///
/// The state-mean change `gamma` lags the indicator iteration: when the
/// residuals are small, `K (omega - omega') theta` can fall below
/// `tau * |x|` while the indicators are still collapsing toward their
/// fixed point. Exiting there leaves a fraction of every innovation
/// permanently attributed to bias, which slowly degrades tracking on
/// clean data. The indicator map is monotone in each dimension, so its
/// iterates always settle; requiring them to do so usually costs a
/// handful of extra sweeps and restores the clean-data fixed point
/// `omega -> 0`.
const OMEGA_TOL: f64 = 1e-3;

/// Extra sweeps granted for indicator settling after `gamma <= tau`.
///
/// A flag being released moves the indicator through the watershed at a
/// rate set by the coupling with the state update, which can be far
/// slower than the cap allows while the state itself is already
/// quasi-static. Once `gamma` has held below `tau` for this many sweeps
/// the loop exits converged and the remaining indicator glide completes
/// over the following filter steps. The budget is generous enough that
/// an ordinary off-collapse (geometric, a few sweeps) always finishes
/// inside it.
const OMEGA_GRACE: usize = 15;

/// Variational-loop controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbSettings {
    /// Relative state-mean change below which the loop stops.
    pub tau: f64,
    /// Hard iteration cap.
    pub max_iters: usize,
}

impl Default for VbSettings {
    fn default() -> Self {
        Self {
            tau: 1e-4,
            max_iters: 50,
        }
    }
}

/// Convergence bookkeeping for one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbDiagnostics {
    /// Variational iterations executed (each runs all three updates).
    pub iterations: usize,
    /// Final relative state-mean change.
    pub gamma: f64,
    /// Whether `gamma <= tau` was reached before the cap.
    pub converged: bool,
}

/// Joint filter state: Gaussian state belief plus bias belief.
#[derive(Debug, Clone, PartialEq)]
pub struct BdmState {
    pub state: GaussianBelief,
    pub bias: BiasBelief,
    pub diagnostics: VbDiagnostics,
}

impl BdmState {
    pub fn new(state: GaussianBelief, bias: BiasBelief) -> Self {
        Self {
            state,
            bias,
            diagnostics: VbDiagnostics {
                iterations: 0,
                gamma: 0.0,
                converged: true,
            },
        }
    }
}

/// Intermediate and final moments of one bias measurement update.
#[derive(Debug, Clone)]
pub struct BiasUpdate {
    /// Kalman-refined bias mean, before the indicator reweighting.
    pub theta_star: DVector<f64>,
    /// Kalman-refined bias covariance.
    pub sigma_star: DMatrix<f64>,
    /// Posterior bias mean.
    pub theta_plus: DVector<f64>,
    /// Posterior bias covariance.
    pub sigma_plus: DMatrix<f64>,
}

/// State measurement update with the expected bias removed:
///
/// ```text
/// K  = C S^{-1}
/// x+ = x- + K (y - W theta_hat - mu)
/// P+ = P- - C K^T
/// ```
///
/// where `W = diag(omega)`. `stats` must come from the *predictive*
/// density (see [`measurement_stats`]); the posterior covariance does not
/// depend on `omega` or `theta_hat`.
pub fn update_state(
    pred: &GaussianBelief,
    stats: &MeasurementStats,
    y: &DVector<f64>,
    omega: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> Result<GaussianBelief> {
    check_len(y, stats.mu.len(), "measurement")?;
    check_len(omega, y.len(), "omega")?;
    check_len(theta_hat, y.len(), "theta_hat")?;
    let offset = omega.component_mul(theta_hat);
    correct_with_stats(pred, stats, y, &offset)
}

/// Expected measurement and per-dimension spread under a state belief:
/// `nu = <h(x)>` and `hbar2_i = <(h_i(x) - nu_i)^2>`, both by unscented
/// moment matching (no measurement noise folded in).
pub fn measurement_spread(
    model: &dyn StateSpaceModel,
    belief: &GaussianBelief,
    cfg: &SigmaPointConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = model.meas_dim();
    let (nu, cov, _) = crate::gaussian::unscented_transform(
        |x| model.measure(x),
        belief,
        &DMatrix::zeros(m, m),
        cfg,
    )?;
    // Non-default scalings can produce slightly negative matched spreads;
    // the spread enters both hypotheses symmetrically, so flooring at zero
    // is safe.
    let hbar2 = DVector::from_iterator(m, cov.diagonal().iter().map(|v| v.max(0.0)));
    Ok((nu, hbar2))
}

/// Per-dimension indicator posterior from precomputed measurement moments.
///
/// For each dimension the two hypotheses are scored in the log domain.
/// The bias-free score is the measurement likelihood at the expected
/// measurement `nu`; the biased score marginalizes the offset over the
/// *predicted* bias belief `(theta-, Sigma-)`:
///
/// ```text
/// log Pr(I=0) = log(1 - theta) - (y - nu)^2 / (2 R)
/// log Pr(I=1) = log(theta) - (y - nu - theta-)^2 / (2 (R + Sigma-))
///               - log((R + Sigma-) / R) / 2 - tbar2 / (2 R)
/// ```
///
/// and `omega = 1 / (1 + exp(log Pr0 - log Pr1))`; degenerate priors 0
/// and 1 saturate exactly. The shared state-spread term `<(h_i(x) -
/// nu_i)^2>` would appear in both scores and cancels in the ratio.
///
/// Judging the biased hypothesis against the predicted belief keeps the
/// comparison honest: the refitted posterior mean tracks the very
/// residual under judgement (its quadratic score vanishes whenever
/// `Sigma-` dominates `R`), so scoring with it would flag residuals
/// barely past one noise standard deviation. The marginal form charges
/// the biased hypothesis the normalization of its vague onset prior; a
/// fresh flag needs a residual far outside the nominal noise, while a
/// dimension already tracking a bias — small `Sigma-`, `theta-` near
/// the residual — keeps its flag on ordinary evidence. `tbar2`, the
/// current posterior bias variance, preserves the collapse fixed point:
/// as a dimension's indicator falls, its posterior variance reverts to
/// the onset scale and pins the indicator at zero.
pub fn indicator_from_moments(
    y: &DVector<f64>,
    nu: &DVector<f64>,
    theta_minus: &DVector<f64>,
    sigma_minus_diag: &DVector<f64>,
    tbar2: &DVector<f64>,
    theta_prior: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> DVector<f64> {
    let m = y.len();
    let mut omega = DVector::zeros(m);
    for i in 0..m {
        let r = r_diag[i];
        let resid = y[i] - nu[i];
        let marginal = r + sigma_minus_diag[i];
        let hit = resid - theta_minus[i];
        let log_pr0 = (1.0 - theta_prior[i]).ln() - resid * resid / (2.0 * r);
        let log_pr1 = theta_prior[i].ln()
            - hit * hit / (2.0 * marginal)
            - 0.5 * (marginal / r).ln()
            - tbar2[i] / (2.0 * r);
        omega[i] = 1.0 / (1.0 + (log_pr0 - log_pr1).exp());
    }
    omega
}

/// Indicator posterior computed from scratch for a given state belief.
///
/// `theta_minus` / `sigma_minus` are the predicted bias moments the
/// biased hypothesis is marginalized over; `tbar2` is the current
/// posterior bias variance (diagonal).
pub fn update_indicator(
    model: &dyn StateSpaceModel,
    belief: &GaussianBelief,
    y: &DVector<f64>,
    theta_minus: &DVector<f64>,
    sigma_minus: &DMatrix<f64>,
    tbar2: &DVector<f64>,
    theta_prior: &DVector<f64>,
    cfg: &SigmaPointConfig,
) -> Result<DVector<f64>> {
    check_len(y, model.meas_dim(), "measurement")?;
    let (nu, _) = measurement_spread(model, belief, cfg)?;
    Ok(indicator_from_moments(
        y,
        &nu,
        theta_minus,
        &sigma_minus.diagonal(),
        tbar2,
        theta_prior,
        &r_diag_of(model),
    ))
}

fn r_diag_of(model: &dyn StateSpaceModel) -> DVector<f64> {
    model.meas_noise().diagonal()
}

/// Bias measurement update for fixed indicator probabilities `W = diag(omega)`:
///
/// ```text
/// S* = W Sigma- W + R            C* = Sigma- W        K* = C* S*^{-1}
/// theta* = theta- + K* (y - nu - W theta-)
/// Sigma* = Sigma- - C* K*^T
/// Sigma+ = (W (I - W) R^{-1} + Sigma*^{-1})^{-1}
/// theta+ = Sigma+ Sigma*^{-1} theta*
/// ```
///
/// The update restarts from the *predicted* bias moments every call; the
/// variational loop re-runs it with refreshed `omega` and `nu` rather than
/// chaining onto the previous iterate.
pub fn update_bias(
    y: &DVector<f64>,
    omega: &DVector<f64>,
    nu: &DVector<f64>,
    theta_minus: &DVector<f64>,
    sigma_minus: &DMatrix<f64>,
    r_diag: &DVector<f64>,
) -> Result<BiasUpdate> {
    let m = y.len();
    check_len(omega, m, "omega")?;
    check_len(nu, m, "nu")?;
    check_len(theta_minus, m, "theta_minus")?;
    check_len(r_diag, m, "r_diag")?;

    let w = DMatrix::from_diagonal(omega);
    let mut s_star = &w * sigma_minus * &w;
    for i in 0..m {
        s_star[(i, i)] += r_diag[i];
    }
    let c_star = sigma_minus * &w;
    // K = C S^{-1}  <=>  S K^T = C^T.
    let k_t = crate::linalg::spd_solve(&s_star, &c_star.transpose(), "bias innovation covariance")?;
    let k = k_t.transpose();

    let residual = y - nu - &w * theta_minus;
    let theta_star = theta_minus + &k * residual;
    let sigma_star = symmetrize(&(sigma_minus - &c_star * &k_t));

    let star_info = spd_inverse(&sigma_star, "refined bias covariance")?;
    let mut post_info = star_info.clone();
    for i in 0..m {
        let wi = clamp_omega(omega[i]);
        post_info[(i, i)] += wi * (1.0 - wi) / r_diag[i];
    }
    let sigma_plus = spd_inverse(&post_info, "posterior bias information")?;
    let theta_plus = &sigma_plus * (&star_info * &theta_star);

    Ok(BiasUpdate {
        theta_star,
        sigma_star,
        theta_plus,
        sigma_plus,
    })
}

/// One full BDM filter step: time updates, initial state update with the
/// prior indicator probabilities, then the variational refinement loop.
pub fn step(
    model: &dyn StateSpaceModel,
    prev: &BdmState,
    y: &DVector<f64>,
    hp: &BiasHyperParams,
    vb: &VbSettings,
    cfg: &SigmaPointConfig,
) -> Result<BdmState> {
    let m = model.meas_dim();
    check_len(y, m, "measurement")?;
    check_len(&hp.theta_prior, m, "theta_prior")?;
    if vb.max_iters == 0 || !(vb.tau > 0.0) {
        return Err(Error::InvalidArgument {
            what: "vb settings",
            details: format!("tau {} / max_iters {}", vb.tau, vb.max_iters),
        });
    }

    let pred = gaussian_filter_predict(model, &prev.state, cfg)?;
    let (theta_minus, sigma_minus) = predict_bias(&prev.bias, hp)?;
    let sigma_minus_diag = sigma_minus.diagonal();
    let stats = measurement_stats(model, &pred, cfg)?;
    let r_diag = r_diag_of(model);

    // Initialization: prior indicator probabilities, predicted bias moments.
    let mut omega = hp.theta_prior.clone();
    let mut theta_plus = theta_minus.clone();
    let mut sigma_plus = sigma_minus.clone();
    let mut post = update_state(&pred, &stats, y, &omega, &theta_plus)?;

    let mut iterations = 0;
    let mut gamma = f64::INFINITY;
    let mut converged = false;
    let mut settled_sweeps = 0;
    while iterations < vb.max_iters {
        iterations += 1;
        let (nu, _) = measurement_spread(model, &post, cfg)?;
        let upd = update_bias(y, &omega, &nu, &theta_minus, &sigma_minus, &r_diag)?;
        theta_plus = upd.theta_plus;
        sigma_plus = upd.sigma_plus;
        let prev_omega = omega;
        omega = indicator_from_moments(
            y,
            &nu,
            &theta_minus,
            &sigma_minus_diag,
            &sigma_plus.diagonal(),
            &hp.theta_prior,
            &r_diag,
        );

        let prev_mean = post.mean.clone();
        post = update_state(&pred, &stats, y, &omega, &theta_plus)?;
        let denom = prev_mean.norm();
        let delta = (&post.mean - &prev_mean).norm();
        gamma = if denom < GAMMA_NORM_FLOOR {
            delta
        } else {
            delta / denom
        };
        if gamma <= vb.tau {
            settled_sweeps += 1;
            if (&omega - prev_omega).amax() <= OMEGA_TOL || settled_sweeps > OMEGA_GRACE {
                converged = true;
                break;
            }
        }
    }

    let bias = BiasBelief::new(theta_plus, sigma_plus, omega)?;
    Ok(BdmState {
        state: post,
        bias,
        diagnostics: VbDiagnostics {
            iterations,
            gamma,
            converged,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearStateSpaceModel;
    use approx::assert_abs_diff_eq;

    fn scalar_model(q: f64, r: f64) -> LinearStateSpaceModel {
        LinearStateSpaceModel {
            f_mat: DMatrix::identity(1, 1),
            h_mat: DMatrix::identity(1, 1),
            q: DMatrix::from_vec(1, 1, vec![q]),
            r: DMatrix::from_vec(1, 1, vec![r]),
        }
    }

    fn vec1(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    // ── state update ────────────────────────────────────────────────────

    #[test]
    fn debiased_scalar_update_matches_hand_computation() {
        // Predictive N(0, 1), identity h, R = 1, y = 2, omega = 1,
        // theta_hat = 1: innovation 1, gain 0.5, posterior N(0.5, 0.5).
        let model = scalar_model(0.0, 1.0);
        let pred = GaussianBelief::new(vec1(0.0), DMatrix::identity(1, 1)).unwrap();
        let stats = measurement_stats(&model, &pred, &SigmaPointConfig::default()).unwrap();
        let post = update_state(&pred, &stats, &vec1(2.0), &vec1(1.0), &vec1(1.0)).unwrap();
        assert_abs_diff_eq!(post.mean[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.cov[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn posterior_covariance_ignores_debias_terms() {
        let model = scalar_model(0.0, 1.0);
        let pred = GaussianBelief::new(vec1(0.3), DMatrix::from_vec(1, 1, vec![2.0])).unwrap();
        let stats = measurement_stats(&model, &pred, &SigmaPointConfig::default()).unwrap();
        let a = update_state(&pred, &stats, &vec1(5.0), &vec1(0.0), &vec1(0.0)).unwrap();
        let b = update_state(&pred, &stats, &vec1(5.0), &vec1(0.9), &vec1(40.0)).unwrap();
        assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn measurement_stats_depend_only_on_the_predictive_density() {
        let model = scalar_model(0.5, 1.0);
        let pred = GaussianBelief::new(vec1(1.0), DMatrix::from_vec(1, 1, vec![3.0])).unwrap();
        let a = measurement_stats(&model, &pred, &SigmaPointConfig::default()).unwrap();
        let b = measurement_stats(&model, &pred, &SigmaPointConfig::default()).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.s, b.s);
        assert_eq!(a.c, b.c);
    }

    // ── indicator update ────────────────────────────────────────────────

    #[test]
    fn degenerate_priors_saturate_exactly() {
        let y = vec1(10.0);
        let nu = vec1(0.0);
        let theta_minus = vec1(9.0);
        let sigma_minus = vec1(2.0);
        let tbar2 = vec1(0.2);
        let r = vec1(4.0);
        let w0 =
            indicator_from_moments(&y, &nu, &theta_minus, &sigma_minus, &tbar2, &vec1(0.0), &r);
        assert_eq!(w0[0], 0.0);
        let w1 =
            indicator_from_moments(&y, &nu, &theta_minus, &sigma_minus, &tbar2, &vec1(1.0), &r);
        assert_eq!(w1[0], 1.0);
    }

    #[test]
    fn huge_residual_with_matching_bias_mean_saturates_on() {
        // Residual 50 with a precisely tracked bias of 50 and R = 4: the
        // biased hypothesis explains the measurement, log-odds 2500 / 8.
        let w = indicator_from_moments(
            &vec1(50.0),
            &vec1(0.0),
            &vec1(50.0),
            &vec1(0.0),
            &vec1(0.0),
            &vec1(0.5),
            &vec1(4.0),
        );
        let expected = 1.0 / (1.0 + (-312.5f64).exp());
        assert_abs_diff_eq!(w[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn balanced_hypotheses_give_half() {
        // theta- = 2 (y - nu) with a sharp onset prior and zero posterior
        // variance mirrors the two quadratic scores, so a flat prior stays
        // at 1/2.
        let w = indicator_from_moments(
            &vec1(3.0),
            &vec1(2.0),
            &vec1(2.0),
            &vec1(0.0),
            &vec1(0.0),
            &vec1(0.5),
            &vec1(4.0),
        );
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn indicator_matches_linear_space_evaluation() {
        // Moderate exponents: evaluate the bias-free likelihood and the
        // offset-marginalized likelihood directly in linear space as an
        // independent oracle.
        let (y, nu, theta_minus, sigma_minus, tbar2, prior, r): (f64, f64, f64, f64, f64, f64, f64) =
            (3.0, 1.0, 1.5, 2.0, 0.5, 0.3, 4.0);
        let resid = y - nu;
        let marginal = r + sigma_minus;
        let pr0 = (1.0 - prior) * (-resid * resid / (2.0 * r)).exp();
        let pr1 = prior
            * (r / marginal).sqrt()
            * (-(resid - theta_minus) * (resid - theta_minus) / (2.0 * marginal)).exp()
            * (-tbar2 / (2.0 * r)).exp();
        let expected = pr1 / (pr0 + pr1);
        let w = indicator_from_moments(
            &vec1(y),
            &vec1(nu),
            &vec1(theta_minus),
            &vec1(sigma_minus),
            &vec1(tbar2),
            &vec1(prior),
            &vec1(r),
        );
        assert_abs_diff_eq!(w[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn vague_onset_prior_suppresses_moderate_residuals() {
        // Fresh dimension (onset-scale predicted variance): a two-sigma
        // residual stays quiet, a four-sigma residual flags.
        let fresh = |resid: f64| {
            indicator_from_moments(
                &vec1(resid),
                &vec1(0.0),
                &vec1(0.0),
                &vec1(4000.0),
                &vec1(8.0),
                &vec1(0.5),
                &vec1(4.0),
            )[0]
        };
        assert!(fresh(4.0) < 0.1, "two sigma: {}", fresh(4.0));
        assert!(fresh(8.0) > 0.9, "four sigma: {}", fresh(8.0));
    }

    #[test]
    fn tracked_bias_keeps_its_flag_on_ordinary_evidence() {
        // The same residual that barely moves a fresh dimension keeps an
        // already-tracked one flagged: hysteresis from the tight
        // predicted variance.
        let resid = vec1(5.0);
        let nu = vec1(0.0);
        let r = vec1(4.0);
        let fresh = indicator_from_moments(
            &resid,
            &nu,
            &vec1(0.0),
            &vec1(4000.0),
            &vec1(8.0),
            &vec1(0.5),
            &r,
        )[0];
        let tracked = indicator_from_moments(
            &resid,
            &nu,
            &vec1(5.0),
            &vec1(4.4),
            &vec1(2.0),
            &vec1(0.5),
            &r,
        )[0];
        assert!(fresh < 0.3, "fresh: {fresh}");
        assert!(tracked > 0.9, "tracked: {tracked}");
    }

    // ── bias update ─────────────────────────────────────────────────────

    #[test]
    fn scalar_bias_update_matches_hand_computation() {
        // omega = 0.5, Sigma- = 1, R = 1, y - nu = 1, theta- = 0:
        // S* = 1.25, K* = 0.4, theta* = 0.4, Sigma* = 0.8,
        // Sigma+ = (0.25 + 1.25)^{-1} = 2/3, theta+ = (2/3)(1/0.8)(0.4) = 1/3.
        let upd = update_bias(
            &vec1(1.0),
            &vec1(0.5),
            &vec1(0.0),
            &vec1(0.0),
            &DMatrix::identity(1, 1),
            &vec1(1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(upd.theta_star[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(upd.sigma_star[(0, 0)], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(upd.sigma_plus[(0, 0)], 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(upd.theta_plus[0], 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_omega_keeps_predicted_bias() {
        let sigma_minus = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let upd = update_bias(
            &DVector::from_row_slice(&[4.0, -1.0]),
            &DVector::zeros(2),
            &DVector::zeros(2),
            &DVector::from_row_slice(&[0.7, -0.2]),
            &sigma_minus,
            &DVector::from_element(2, 4.0),
        )
        .unwrap();
        assert_abs_diff_eq!(
            upd.theta_star,
            DVector::from_row_slice(&[0.7, -0.2]),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(upd.sigma_star, sigma_minus, epsilon = 1e-12);
        // The interior clamp perturbs the combination only at the 1e-12 level.
        assert_abs_diff_eq!(upd.theta_plus, upd.theta_star, epsilon = 1e-9);
        assert_abs_diff_eq!(upd.sigma_plus, sigma_minus, epsilon = 1e-9);
    }

    #[test]
    fn saturated_omega_shrinks_posterior_covariance() {
        // With omega = 1 the reweighting term vanishes: Sigma+ = Sigma*.
        let upd = update_bias(
            &vec1(5.0),
            &vec1(1.0),
            &vec1(0.0),
            &vec1(0.0),
            &DMatrix::from_vec(1, 1, vec![10.0]),
            &vec1(1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(
            upd.sigma_plus[(0, 0)],
            upd.sigma_star[(0, 0)],
            epsilon = 1e-9
        );
        // theta* = 10/11 * 5; full confidence keeps it unchanged.
        assert_abs_diff_eq!(upd.theta_plus[0], upd.theta_star[0], epsilon = 1e-9);
    }

    // ── full step ───────────────────────────────────────────────────────

    fn init_state(m: usize) -> BdmState {
        let state = GaussianBelief::new(vec1(0.0), DMatrix::identity(1, 1)).unwrap();
        let bias = BiasBelief::new(
            DVector::zeros(m),
            DMatrix::identity(m, m) * 1e-3,
            DVector::from_element(m, 0.5),
        )
        .unwrap();
        BdmState::new(state, bias)
    }

    #[test]
    fn large_offset_is_detected_and_absorbed() {
        let model = scalar_model(0.1, 1.0);
        let hp = BiasHyperParams::uniform(1, 1000.0, 0.1, 0.5).unwrap();
        let vb = VbSettings::default();
        let cfg = SigmaPointConfig::default();

        // Truth stays at 0; the measurement carries a +40 offset.
        let mut st = init_state(1);
        for _ in 0..20 {
            st = step(&model, &st, &vec1(40.0), &hp, &vb, &cfg).unwrap();
            assert!(st.diagnostics.converged);
        }
        assert!(st.bias.omega[0] > 0.99, "omega = {}", st.bias.omega[0]);
        assert!(
            (st.bias.theta_hat[0] - 40.0).abs() < 2.0,
            "theta_hat = {}",
            st.bias.theta_hat[0]
        );
        // The state no longer swallows the offset.
        assert!(st.state.mean[0].abs() < 2.0, "mean = {}", st.state.mean[0]);
    }

    #[test]
    fn zero_prior_disables_the_loop_after_one_inert_pass() {
        let model = scalar_model(0.1, 1.0);
        let hp = BiasHyperParams::uniform(1, 1000.0, 0.1, 0.0).unwrap();
        let st = step(
            &model,
            &init_state(1),
            &vec1(3.0),
            &hp,
            &VbSettings::default(),
            &SigmaPointConfig::default(),
        )
        .unwrap();
        assert_eq!(st.diagnostics.iterations, 1);
        assert_eq!(st.diagnostics.gamma, 0.0);
        assert!(st.diagnostics.converged);
        assert_eq!(st.bias.omega[0], 0.0);
    }

    #[test]
    fn absolute_gamma_branch_handles_zero_mean() {
        // y equals the predicted measurement and the prior indicator is
        // zero, so the mean stays at exactly zero through the loop.
        let model = scalar_model(0.0, 1.0);
        let hp = BiasHyperParams::uniform(1, 10.0, 0.1, 0.0).unwrap();
        let st = step(
            &model,
            &init_state(1),
            &vec1(0.0),
            &hp,
            &VbSettings::default(),
            &SigmaPointConfig::default(),
        )
        .unwrap();
        assert_eq!(st.state.mean[0], 0.0);
        assert!(st.diagnostics.converged);
    }

    #[test]
    fn step_validates_inputs() {
        let model = scalar_model(0.1, 1.0);
        let hp = BiasHyperParams::uniform(1, 10.0, 0.1, 0.5).unwrap();
        let bad_vb = VbSettings {
            tau: 0.0,
            max_iters: 50,
        };
        assert!(step(
            &model,
            &init_state(1),
            &vec1(0.0),
            &hp,
            &bad_vb,
            &SigmaPointConfig::default()
        )
        .is_err());
        let wrong_y = DVector::from_row_slice(&[1.0, 2.0]);
        assert!(step(
            &model,
            &init_state(1),
            &wrong_y,
            &hp,
            &VbSettings::default(),
            &SigmaPointConfig::default()
        )
        .is_err());
    }
}
