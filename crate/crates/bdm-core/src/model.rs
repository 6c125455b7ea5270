//! State-space model abstraction consumed by the filters and bounds.

use nalgebra::{DMatrix, DVector};

/// Relative step used by the central-difference Jacobian fallback.
const FD_STEP: f64 = 1e-6;

/// Discrete-time state-space model with additive Gaussian noise:
///
/// ```text
/// x_k = f(x_{k-1}) + q_k,    q_k ~ N(0, Q)
/// y_k = h(x_k)     + r_k,    r_k ~ N(0, R)
/// ```
///
/// `R` must be diagonal: the bias detector treats measurement dimensions
/// as conditionally independent channels.
///
/// Implementations must be pure in `f` and `h` (no interior mutability),
/// which keeps every filter routine safe to call from worker threads.
pub trait StateSpaceModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn meas_dim(&self) -> usize;

    /// Process map `f`.
    fn process(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Measurement map `h`.
    fn measure(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Process noise covariance `Q` (state_dim x state_dim).
    fn process_noise(&self) -> DMatrix<f64>;

    /// Measurement noise covariance `R` (meas_dim x meas_dim, diagonal).
    fn meas_noise(&self) -> DMatrix<f64>;

    /// Jacobian of `f` at `x`; central differences unless overridden.
    fn process_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(|v| self.process(v), x, self.state_dim())
    }

    /// Jacobian of `h` at `x`; central differences unless overridden.
    fn meas_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(|v| self.measure(v), x, self.meas_dim())
    }
}

/// Central-difference Jacobian with per-component step `FD_STEP * (1 + |x_i|)`.
pub fn fd_jacobian<F>(g: F, x: &DVector<f64>, out_dim: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut lo = x.clone();
    let mut hi = x.clone();
    for j in 0..n {
        let step = FD_STEP * (1.0 + x[j].abs());
        hi[j] = x[j] + step;
        lo[j] = x[j] - step;
        let diff = (g(&hi) - g(&lo)) / (2.0 * step);
        jac.set_column(j, &diff);
        hi[j] = x[j];
        lo[j] = x[j];
    }
    jac
}

/// Linear-Gaussian model `x' = F x`, `y = H x`: the exactness baseline for
/// unscented moment matching and the closed-form Kalman/bound oracles.
#[derive(Debug, Clone)]
pub struct LinearStateSpaceModel {
    pub f_mat: DMatrix<f64>,
    pub h_mat: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl StateSpaceModel for LinearStateSpaceModel {
    fn state_dim(&self) -> usize {
        self.f_mat.nrows()
    }

    fn meas_dim(&self) -> usize {
        self.h_mat.nrows()
    }

    fn process(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f_mat * x
    }

    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h_mat * x
    }

    fn process_noise(&self) -> DMatrix<f64> {
        self.q.clone()
    }

    fn meas_noise(&self) -> DMatrix<f64> {
        self.r.clone()
    }

    fn process_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.f_mat.clone()
    }

    fn meas_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.h_mat.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fd_jacobian_matches_analytic_on_smooth_map() {
        // g(x) = [x0^2, sin(x1), x0 * x1]
        let g = |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] * x[0], x[1].sin(), x[0] * x[1]])
        };
        let x = DVector::from_vec(vec![1.3, -0.7]);
        let jac = fd_jacobian(g, &x, 3);
        let expected = DMatrix::from_row_slice(
            3,
            2,
            &[2.0 * 1.3, 0.0, 0.0, (-0.7f64).cos(), -0.7, 1.3],
        );
        assert_abs_diff_eq!(jac, expected, epsilon = 1e-8);
    }

    #[test]
    fn linear_model_jacobians_are_the_system_matrices() {
        let model = LinearStateSpaceModel {
            f_mat: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            h_mat: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
        };
        let x = DVector::from_vec(vec![2.0, 3.0]);
        assert_eq!(model.process_jacobian(&x), model.f_mat);
        assert_eq!(model.meas_jacobian(&x), model.h_mat);
        // Default finite-difference path agrees with the analytic override.
        let fd = fd_jacobian(|v| model.process(v), &x, 2);
        assert_abs_diff_eq!(fd, model.f_mat, epsilon = 1e-8);
    }
}
