//! Maneuvering-target benchmark: coordinated-turn motion observed by a
//! grid of range sensors, with optional additive measurement biases.
//!
//! The state is `[a, a_dot, b, b_dot, omega]` (planar position, velocity
//! and turn rate). Each range measurement can carry a bias: a per-run
//! Bernoulli pattern selects the affected sensors, each affected sensor
//! gets a uniform offset magnitude, and an active bias drifts with fresh
//! Gaussian perturbations every step. Case variants differ only in when
//! the pattern is applied: always ("persistent"), inside a time window
//! ("momentary"), or never.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::robust_sqrt;
use crate::model::StateSpaceModel;

/// Turn rates below this threshold use the series expansion of the
/// transition entries instead of the `sin/omega` forms.
const OMEGA_SINGULARITY: f64 = 1e-6;

/// Range shorter than this from a sensor zeroes the measurement Jacobian
/// row (the gradient is undefined at the sensor itself).
const RANGE_FLOOR: f64 = 1e-9;

/// Coordinated-turn process parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnModelParams {
    /// Sampling interval.
    pub zeta: f64,
    /// Velocity process-noise intensity (position/velocity blocks).
    pub eta1: f64,
    /// Turn-rate process-noise intensity.
    pub eta2: f64,
    /// Initial state `[a, a_dot, b, b_dot, omega]`.
    pub x0: DVector<f64>,
}

impl Default for TurnModelParams {
    /// Benchmark configuration: unit sampling interval, gentle turn.
    fn default() -> Self {
        Self {
            zeta: 1.0,
            eta1: 0.1,
            eta2: 1.75e-4,
            x0: DVector::from_row_slice(&[
                0.0,
                10.0,
                0.0,
                -5.0,
                3.0 * std::f64::consts::PI / 180.0,
            ]),
        }
    }
}

/// Coordinated-turn transition matrix for turn rate `omega` and interval
/// `zeta`, with a second-order series expansion below the singularity
/// threshold (the two branches agree to ~1e-8 at the switch point).
pub fn turn_transition_matrix(omega: f64, zeta: f64) -> DMatrix<f64> {
    let (s_over_w, cos_u, cm1_over_w, sin_u) = if omega.abs() < OMEGA_SINGULARITY {
        let s_over_w = zeta - omega * omega * zeta.powi(3) / 6.0;
        let cm1_over_w = -omega * zeta * zeta / 2.0;
        ((s_over_w), (omega * zeta).cos(), cm1_over_w, (omega * zeta).sin())
    } else {
        let u = omega * zeta;
        (u.sin() / omega, u.cos(), (u.cos() - 1.0) / omega, u.sin())
    };
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, s_over_w, 0.0, cm1_over_w, 0.0,
            0.0, cos_u, 0.0, -sin_u, 0.0,
            0.0, -cm1_over_w, 1.0, s_over_w, 0.0,
            0.0, sin_u, 0.0, cos_u, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// Applies the coordinated-turn map: the transition matrix is built from
/// the turn-rate component of `x` itself.
pub fn turn_process(x: &DVector<f64>, zeta: f64) -> DVector<f64> {
    turn_transition_matrix(x[4], zeta) * x
}

/// Analytic Jacobian of [`turn_process`]: the transition matrix plus the
/// turn-rate sensitivity of the velocity-coupled entries in the last
/// column.
pub fn turn_process_jacobian(x: &DVector<f64>, zeta: f64) -> DMatrix<f64> {
    let omega = x[4];
    let mut jac = turn_transition_matrix(omega, zeta);
    let u = omega * zeta;
    // Entry derivatives with respect to omega; series forms near zero.
    let (d_s_over_w, d_cm1_over_w) = if omega.abs() < OMEGA_SINGULARITY {
        (
            -omega * zeta.powi(3) / 3.0,
            -zeta * zeta / 2.0 + omega * omega * zeta.powi(4) / 8.0,
        )
    } else {
        (
            (zeta * omega * u.cos() - u.sin()) / (omega * omega),
            (-zeta * omega * u.sin() - u.cos() + 1.0) / (omega * omega),
        )
    };
    let d_cos = -zeta * u.sin();
    let d_sin = zeta * u.cos();
    let (adot, bdot) = (x[1], x[3]);
    jac[(0, 4)] = d_s_over_w * adot + d_cm1_over_w * bdot;
    jac[(1, 4)] = d_cos * adot - d_sin * bdot;
    jac[(2, 4)] = -d_cm1_over_w * adot + d_s_over_w * bdot;
    jac[(3, 4)] = d_sin * adot + d_cos * bdot;
    jac[(4, 4)] = 1.0;
    jac
}

/// Process noise `Q = blkdiag(eta1 M, eta1 M, eta2)` with the white-noise
/// acceleration block `M = [[zeta^3/3, zeta^2/2], [zeta^2/2, zeta]]`.
pub fn turn_process_noise(params: &TurnModelParams) -> DMatrix<f64> {
    let z = params.zeta;
    let block = [z.powi(3) / 3.0, z * z / 2.0, z * z / 2.0, z];
    let mut q = DMatrix::zeros(5, 5);
    for (offset, scale) in [(0, params.eta1), (2, params.eta1)] {
        q[(offset, offset)] = scale * block[0];
        q[(offset, offset + 1)] = scale * block[1];
        q[(offset + 1, offset)] = scale * block[2];
        q[(offset + 1, offset + 1)] = scale * block[3];
    }
    q[(4, 4)] = params.eta2;
    q
}

/// A set of range-only sensors with a common noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    /// Sensor positions `(a, b)`.
    pub positions: Vec<(f64, f64)>,
    /// Per-sensor range noise variance.
    pub r_var: f64,
}

impl SensorArray {
    pub fn new(positions: Vec<(f64, f64)>, r_var: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument {
                what: "sensor positions",
                details: "at least one sensor required".to_string(),
            });
        }
        if !(r_var > 0.0) {
            return Err(Error::InvalidArgument {
                what: "r_var",
                details: format!("must be positive, got {r_var}"),
            });
        }
        Ok(Self { positions, r_var })
    }

    /// Benchmark layout: sensor `i` (1-based) at
    /// `(350 (i-1), 350 ((i-1) mod 2))`, a staggered line of spacing 350.
    pub fn grid_layout(count: usize, r_var: f64) -> Result<Self> {
        let positions = (0..count)
            .map(|i| (350.0 * i as f64, 350.0 * (i % 2) as f64))
            .collect();
        Self::new(positions, r_var)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Diagonal measurement noise covariance.
    pub fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(self.len(), self.len()) * self.r_var
    }
}

/// Euclidean range from the target position to every sensor.
pub fn range_measure(x: &DVector<f64>, sensors: &SensorArray) -> DVector<f64> {
    DVector::from_iterator(
        sensors.len(),
        sensors
            .positions
            .iter()
            .map(|(pa, pb)| ((x[0] - pa).powi(2) + (x[2] - pb).powi(2)).sqrt()),
    )
}

/// Analytic range Jacobian: unit line-of-sight components in the position
/// columns, zero elsewhere. Rows degenerate to zero at a sensor location.
pub fn range_jacobian(x: &DVector<f64>, sensors: &SensorArray) -> DMatrix<f64> {
    let m = sensors.len();
    let mut jac = DMatrix::zeros(m, 5);
    for (i, (pa, pb)) in sensors.positions.iter().enumerate() {
        let da = x[0] - pa;
        let db = x[2] - pb;
        let d = (da * da + db * db).sqrt();
        if d > RANGE_FLOOR {
            jac[(i, 0)] = da / d;
            jac[(i, 2)] = db / d;
        }
    }
    jac
}

/// Coordinated-turn motion observed by range sensors, as one state-space
/// model with analytic Jacobians.
#[derive(Debug, Clone)]
pub struct TurnRangeModel {
    pub params: TurnModelParams,
    pub sensors: SensorArray,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl TurnRangeModel {
    pub fn new(params: TurnModelParams, sensors: SensorArray) -> Self {
        let q = turn_process_noise(&params);
        let r = sensors.noise_cov();
        Self {
            params,
            sensors,
            q,
            r,
        }
    }
}

impl StateSpaceModel for TurnRangeModel {
    fn state_dim(&self) -> usize {
        5
    }

    fn meas_dim(&self) -> usize {
        self.sensors.len()
    }

    fn process(&self, x: &DVector<f64>) -> DVector<f64> {
        turn_process(x, self.params.zeta)
    }

    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        range_measure(x, &self.sensors)
    }

    fn process_noise(&self) -> DMatrix<f64> {
        self.q.clone()
    }

    fn meas_noise(&self) -> DMatrix<f64> {
        self.r.clone()
    }

    fn process_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        turn_process_jacobian(x, self.params.zeta)
    }

    fn meas_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        range_jacobian(x, &self.sensors)
    }
}

/// When the per-run bias pattern is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasKind {
    /// Pattern active from the first step onward.
    Persistent,
    /// Pattern active only inside `[onset, offset]` (inclusive).
    Momentary,
    /// No bias ever applied.
    None,
}

/// Measurement-bias generation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasScenario {
    pub kind: BiasKind,
    /// Probability that a given sensor is biased.
    pub lambda: f64,
    /// Offset magnitudes are uniform on `[0, magnitude_max]`.
    pub magnitude_max: f64,
    /// Variance of the per-step drift added to an active offset.
    pub drift_var: f64,
    /// First biased step (momentary case).
    pub onset: usize,
    /// Last biased step, inclusive (momentary case).
    pub offset: usize,
}

impl BiasScenario {
    pub fn new(
        kind: BiasKind,
        lambda: f64,
        magnitude_max: f64,
        drift_var: f64,
        onset: usize,
        offset: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument {
                what: "lambda",
                details: format!("must lie in [0, 1], got {lambda}"),
            });
        }
        if magnitude_max < 0.0 || drift_var < 0.0 {
            return Err(Error::InvalidArgument {
                what: "bias scenario",
                details: "magnitude_max and drift_var must be nonnegative".to_string(),
            });
        }
        if onset > offset {
            return Err(Error::InvalidArgument {
                what: "bias window",
                details: format!("onset {onset} exceeds offset {offset}"),
            });
        }
        Ok(Self {
            kind,
            lambda,
            magnitude_max,
            drift_var,
            onset,
            offset,
        })
    }

    /// Benchmark persistent-bias scenario (magnitudes up to 90, drift 0.4).
    pub fn persistent(lambda: f64) -> Result<Self> {
        Self::new(BiasKind::Persistent, lambda, 90.0, 0.4, 0, usize::MAX)
    }

    /// Benchmark momentary-bias scenario over `[onset, offset]`.
    pub fn momentary(lambda: f64, onset: usize, offset: usize) -> Result<Self> {
        Self::new(BiasKind::Momentary, lambda, 90.0, 0.4, onset, offset)
    }

    /// Bias-free scenario.
    pub fn none() -> Self {
        Self {
            kind: BiasKind::None,
            lambda: 0.0,
            magnitude_max: 0.0,
            drift_var: 0.0,
            onset: 0,
            offset: 0,
        }
    }

    /// Whether the pattern is applied at step `k`.
    pub fn active_at(&self, k: usize) -> bool {
        match self.kind {
            BiasKind::Persistent => true,
            BiasKind::Momentary => k >= self.onset && k <= self.offset,
            BiasKind::None => false,
        }
    }
}

/// One simulated run: true states, unbiased and biased measurements, the
/// applied bias vectors and the effective indicator pattern, all of
/// length `t_steps` (step 0 is the initial state; filters typically
/// process measurements from step 1 onward).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub clean: Vec<DVector<f64>>,
    pub biased: Vec<DVector<f64>>,
    pub bias: Vec<DVector<f64>>,
    pub indicators: Vec<Vec<bool>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Writes the run as CSV: `k`, state components, clean and biased
    /// measurements, bias values, indicator flags.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.clean.first().map_or(0, |v| v.len());
        let mut header = vec!["k".to_string()];
        header.extend((1..=5).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("y_clean{i}")));
        header.extend((1..=m).map(|i| format!("y_biased{i}")));
        header.extend((1..=m).map(|i| format!("bias{i}")));
        header.extend((1..=m).map(|i| format!("ind{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.states[k].iter().map(|v| v.to_string()));
            row.extend(self.clean[k].iter().map(|v| v.to_string()));
            row.extend(self.biased[k].iter().map(|v| v.to_string()));
            row.extend(self.bias[k].iter().map(|v| v.to_string()));
            row.extend(self.indicators[k].iter().map(|b| (*b as u8).to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a run back from [`Self::write_csv`] output. Values written
    /// with the shortest round-trip float formatting are restored exactly.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: usize, details: String| Error::InvalidArgument {
            what: "trajectory csv",
            details: format!("line {line}: {details}"),
        };
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".to_string()))?;
        let header = header.map_err(|e| bad(1, e.to_string()))?;
        let cols = header.split(',').count();
        if cols < 6 || (cols - 6) % 4 != 0 {
            return Err(bad(1, format!("unexpected column count {cols}")));
        }
        let m = (cols - 6) / 4;

        let mut traj = Trajectory {
            states: Vec::new(),
            clean: Vec::new(),
            biased: Vec::new(),
            bias: Vec::new(),
            indicators: Vec::new(),
        };
        for (idx, line) in lines {
            let line = line.map_err(|e| bad(idx + 1, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(bad(
                    idx + 1,
                    format!("expected {cols} fields, got {}", fields.len()),
                ));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| bad(idx + 1, format!("bad float {s:?}: {e}")))
            };
            let mut at = 1;
            let mut take = |n: usize| -> Result<DVector<f64>> {
                let v = fields[at..at + n]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<f64>>>()?;
                at += n;
                Ok(DVector::from_vec(v))
            };
            traj.states.push(take(5)?);
            traj.clean.push(take(m)?);
            traj.biased.push(take(m)?);
            traj.bias.push(take(m)?);
            let inds = fields[at..at + m]
                .iter()
                .map(|s| match *s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(bad(idx + 1, format!("bad indicator {other:?}"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            traj.indicators.push(inds);
        }
        Ok(traj)
    }
}

/// Simulates one run with the trajectory pinned at `params.x0`.
pub fn simulate(
    params: &TurnModelParams,
    sensors: &SensorArray,
    scenario: &BiasScenario,
    t_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_with_init(params, sensors, scenario, t_steps, seed, None)
}

/// Simulates one run, optionally drawing the initial state from
/// `N(params.x0, init_spread)` (used by bound-consistency checks where
/// the estimator prior must match the data-generating prior).
///
/// The RNG consumption per step is fixed (process noise, measurement
/// noise, drift) regardless of the bias pattern, so runs with the same
/// seed share noise realizations across scenario variants.
pub fn simulate_with_init(
    params: &TurnModelParams,
    sensors: &SensorArray,
    scenario: &BiasScenario,
    t_steps: usize,
    seed: u64,
    init_spread: Option<&DMatrix<f64>>,
) -> Result<Trajectory> {
    if params.x0.len() != 5 {
        return Err(Error::DimensionMismatch {
            what: "x0",
            expected: 5,
            actual: params.x0.len(),
        });
    }
    if t_steps == 0 {
        return Err(Error::InvalidArgument {
            what: "t_steps",
            details: "must be positive".to_string(),
        });
    }
    let m = sensors.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    };

    // Per-run bias pattern: affected sensors and offset magnitudes are
    // drawn up front for every scenario kind (stream stability).
    let pattern: Vec<bool> = (0..m).map(|_| rng.gen::<f64>() < scenario.lambda).collect();
    let magnitudes: Vec<f64> = (0..m)
        .map(|_| rng.gen::<f64>() * scenario.magnitude_max)
        .collect();

    let q_sqrt = robust_sqrt(&turn_process_noise(params))?;
    let r_std = sensors.r_var.sqrt();
    let drift_std = scenario.drift_var.sqrt();

    let mut x = params.x0.clone();
    if let Some(spread) = init_spread {
        let l = robust_sqrt(spread)?;
        let z = DVector::from_fn(5, |_, _| normal(&mut rng));
        x += l * z;
    }

    let mut traj = Trajectory {
        states: Vec::with_capacity(t_steps),
        clean: Vec::with_capacity(t_steps),
        biased: Vec::with_capacity(t_steps),
        bias: Vec::with_capacity(t_steps),
        indicators: Vec::with_capacity(t_steps),
    };
    for k in 0..t_steps {
        if k > 0 {
            let z = DVector::from_fn(5, |_, _| normal(&mut rng));
            x = turn_process(&x, params.zeta) + &q_sqrt * z;
        }
        let h = range_measure(&x, sensors);
        let noise = DVector::from_fn(m, |_, _| r_std * normal(&mut rng));
        let drift = DVector::from_fn(m, |_, _| drift_std * normal(&mut rng));

        let active = scenario.active_at(k);
        let mut bias = DVector::zeros(m);
        let mut inds = vec![false; m];
        if active {
            for i in 0..m {
                if pattern[i] {
                    bias[i] = magnitudes[i] + drift[i];
                    inds[i] = true;
                }
            }
        }
        let clean = &h + &noise;
        traj.biased.push(&clean + &bias);
        traj.clean.push(clean);
        traj.bias.push(bias);
        traj.indicators.push(inds);
        traj.states.push(x.clone());
    }
    Ok(traj)
}
