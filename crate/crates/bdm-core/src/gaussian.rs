//! Unscented Gaussian filtering primitives.
//!
//! A Gaussian belief is pushed through nonlinear maps by deterministic
//! sigma-point moment matching. The measurement-side statistics produced
//! here (`MeasurementStats`) are shared verbatim by the plain UKF update
//! and by the bias-mitigating update, so the two coincide exactly when
//! bias detection is switched off.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_len, robust_sqrt, spd_solve, symmetrize};
use crate::model::StateSpaceModel;

/// Relative tolerance for the symmetry check at belief construction.
const SYMMETRY_TOL: f64 = 1e-9;

/// Gaussian state belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Builds a belief, validating shape and symmetry (relative tolerance
    /// 1e-9); the stored covariance is the symmetrized input.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: n,
                actual: cov.nrows().max(cov.ncols()),
            });
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument {
                what: "covariance",
                details: format!("asymmetry {asym:.3e} exceeds tolerance"),
            });
        }
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scaled sigma-point parameters `(alpha, beta, kappa)`.
///
/// The scaling is `lambda = alpha^2 (d + kappa) - d`; mean weights are
/// `lambda/(d+lambda)` for the center and `1/(2(d+lambda))` elsewhere, and
/// the center covariance weight adds `1 - alpha^2 + beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaPointConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaPointConfig {
    /// `(1, 2, 0)`: no scaling of the symmetric set, Gaussian-optimal `beta`.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaPointConfig {
    fn lambda(&self, dim: usize) -> f64 {
        self.alpha * self.alpha * (dim as f64 + self.kappa) - dim as f64
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument {
                what: "alpha",
                details: format!("must be positive, got {}", self.alpha),
            });
        }
        if dim as f64 + self.lambda(dim) <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "kappa",
                details: format!("alpha^2 (d + kappa) = {} must be positive", dim as f64 + self.lambda(dim)),
            });
        }
        Ok(())
    }
}

/// A weighted sigma-point set: `2d + 1` points with mean and covariance
/// weights. Mean weights sum to one; covariance weights need not.
#[derive(Debug, Clone)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

/// Builds the scaled symmetric sigma-point set for a belief.
///
/// Point `0` is the mean; points `1..=d` add `sqrt(d+lambda) L_i` per
/// column of the covariance square root, points `d+1..=2d` subtract it.
/// A semi-definite covariance is accepted (zero spread along null
/// directions); an indefinite one fails after jitter retries.
pub fn make_sigma_points(belief: &GaussianBelief, cfg: &SigmaPointConfig) -> Result<SigmaPointSet> {
    let d = belief.dim();
    cfg.validate(d)?;
    let lambda = cfg.lambda(d);
    let scale = (d as f64 + lambda).sqrt();
    let l = robust_sqrt(&belief.cov)?;

    let mut points = Vec::with_capacity(2 * d + 1);
    points.push(belief.mean.clone());
    for i in 0..d {
        points.push(&belief.mean + scale * l.column(i));
    }
    for i in 0..d {
        points.push(&belief.mean - scale * l.column(i));
    }

    let wc = 1.0 / (2.0 * (d as f64 + lambda));
    let w0_mean = lambda / (d as f64 + lambda);
    let w0_cov = w0_mean + 1.0 - cfg.alpha * cfg.alpha + cfg.beta;
    let mut mean_weights = vec![wc; 2 * d + 1];
    let mut cov_weights = vec![wc; 2 * d + 1];
    mean_weights[0] = w0_mean;
    cov_weights[0] = w0_cov;

    Ok(SigmaPointSet {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Pushes a belief through `g`, returning the matched mean, covariance
/// (with `additive` noise folded in) and input-output cross covariance.
pub fn unscented_transform<G>(
    g: G,
    belief: &GaussianBelief,
    additive: &DMatrix<f64>,
    cfg: &SigmaPointConfig,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let set = make_sigma_points(belief, cfg)?;
    let images: Vec<DVector<f64>> = set.points.iter().map(|p| g(p)).collect();
    let out_dim = images[0].len();
    if additive.nrows() != out_dim || additive.ncols() != out_dim {
        return Err(Error::DimensionMismatch {
            what: "additive noise",
            expected: out_dim,
            actual: additive.nrows().max(additive.ncols()),
        });
    }

    let mut mean = DVector::zeros(out_dim);
    for (w, img) in set.mean_weights.iter().zip(&images) {
        mean += *w * img;
    }

    let mut cov = additive.clone();
    let mut cross = DMatrix::zeros(belief.dim(), out_dim);
    for ((w, img), point) in set.cov_weights.iter().zip(&images).zip(&set.points) {
        let dy = img - &mean;
        let dx = point - &belief.mean;
        cov += *w * &dy * dy.transpose();
        cross += *w * dx * dy.transpose();
    }

    Ok((mean, symmetrize(&cov), cross))
}

/// Measurement-side predictive statistics under `N(pred)`:
/// predicted measurement `mu`, innovation covariance `s = S + R`, and
/// state-measurement cross covariance `c`.
///
/// These are computed once per filter step from the *predictive* state
/// density and reused across variational iterations.
#[derive(Debug, Clone)]
pub struct MeasurementStats {
    pub mu: DVector<f64>,
    pub s: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Computes [`MeasurementStats`] for a model under a predictive belief.
pub fn measurement_stats(
    model: &dyn StateSpaceModel,
    pred: &GaussianBelief,
    cfg: &SigmaPointConfig,
) -> Result<MeasurementStats> {
    let (mu, s, c) = unscented_transform(
        |x| model.measure(x),
        pred,
        &model.meas_noise(),
        cfg,
    )?;
    Ok(MeasurementStats { mu, s, c })
}

/// Time update: pushes the posterior through the process map and adds `Q`.
pub fn gaussian_filter_predict(
    model: &dyn StateSpaceModel,
    posterior: &GaussianBelief,
    cfg: &SigmaPointConfig,
) -> Result<GaussianBelief> {
    check_len(&posterior.mean, model.state_dim(), "state")?;
    let (mean, cov, _) = unscented_transform(
        |x| model.process(x),
        posterior,
        &model.process_noise(),
        cfg,
    )?;
    GaussianBelief::new(mean, cov)
}

/// Linear-update correction from cached measurement statistics:
///
/// ```text
/// K  = C S^{-1}
/// m+ = m- + K (y - offset - mu)
/// P+ = P- - C K^T
/// ```
///
/// `offset` is the expected measurement bias subtracted from the
/// innovation; the plain UKF passes zero.
pub(crate) fn correct_with_stats(
    pred: &GaussianBelief,
    stats: &MeasurementStats,
    y: &DVector<f64>,
    offset: &DVector<f64>,
) -> Result<GaussianBelief> {
    // K = C S^{-1}  <=>  S K^T = C^T (S symmetric).
    let k_t = spd_solve(&stats.s, &stats.c.transpose(), "innovation covariance")?;
    let k = k_t.transpose();
    let innovation = y - offset - &stats.mu;
    let mean = &pred.mean + &k * innovation;
    let cov = symmetrize(&(&pred.cov - &stats.c * k_t));
    GaussianBelief::new(mean, cov)
}

/// One full predict-update cycle of the unscented Kalman filter.
pub fn ukf_step(
    model: &dyn StateSpaceModel,
    posterior: &GaussianBelief,
    y: &DVector<f64>,
    cfg: &SigmaPointConfig,
) -> Result<GaussianBelief> {
    check_len(y, model.meas_dim(), "measurement")?;
    let pred = gaussian_filter_predict(model, posterior, cfg)?;
    let stats = measurement_stats(model, &pred, cfg)?;
    let zero = DVector::zeros(y.len());
    correct_with_stats(&pred, &stats, y, &zero)
}

/// Moments of the normalized product of two Gaussian densities:
///
/// ```text
/// cov  = (S1^{-1} + S2^{-1})^{-1}
/// mean = cov (S1^{-1} m1 + S2^{-1} m2)
/// ```
pub fn gaussian_product(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_len(m2, m1.len(), "second mean")?;
    let info1 = crate::linalg::spd_inverse(s1, "first covariance")?;
    let info2 = crate::linalg::spd_inverse(s2, "second covariance")?;
    let cov = crate::linalg::spd_inverse(&(&info1 + &info2), "summed information")?;
    let mean = &cov * (&info1 * m1 + &info2 * m2);
    Ok((mean, symmetrize(&cov)))
}
