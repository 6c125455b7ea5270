//! Experiment configuration: one JSON document whose keys follow the
//! benchmark's symbol names, merged with command-line overrides.
//!
//! Every field has the benchmark default, so an empty document `{}` (or no
//! config file at all) reproduces the reference campaign. Unknown keys are
//! rejected with the offending name to catch typos in symbol-heavy configs.

use std::fs;
use std::path::Path;

use bdm_core::filter::{BdmState, VbSettings};
use bdm_core::sim::{BiasScenario, SensorArray, TurnModelParams, TurnRangeModel};
use bdm_core::{BiasBelief, BiasHyperParams, GaussianBelief};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which bias contamination the simulated runs carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    /// Bias pattern active from the first step (benchmark Case 1).
    Persistent,
    /// Bias pattern active on a window of steps (benchmark Case 2).
    Momentary,
    /// Clean measurements.
    None,
}

/// Which filters a campaign runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// Bias detecting and mitigating filter.
    Bdm,
    /// Plain unscented Kalman filter baseline.
    Ukf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Bdm => "bdm",
            FilterKind::Ukf => "ukf",
        }
    }
}

/// Full experiment description. Symbol-named fields mirror the benchmark
/// parameter table; scales are relative to the measurement noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Sampling period (s).
    pub zeta: f64,
    /// Positional process-noise scaling.
    pub eta1: f64,
    /// Turn-rate process-noise scaling.
    pub eta2: f64,
    /// Initial state [a, a_dot, b, b_dot, omega].
    pub x0: Vec<f64>,
    /// Number of range sensors.
    pub sensors: usize,
    /// Grid spacing between sensors (m).
    pub sensor_spacing: f64,
    /// Range-noise variance R (per sensor).
    pub r_var: f64,
    /// Bias scenario kind.
    pub case: CaseKind,
    /// Per-sensor bias probabilities to sweep.
    pub lambda: Vec<f64>,
    /// Maximum bias magnitude (uniform draw upper end).
    #[serde(rename = "Lambda")]
    pub magnitude: f64,
    /// Bias drift variance per step.
    pub sigma_o: f64,
    /// First biased step (momentary case).
    pub onset: usize,
    /// Last biased step, inclusive (momentary case).
    pub offset: usize,
    /// Prior bias-occurrence probability per sensor.
    pub theta_prior: f64,
    /// Fresh-bias prior variance as a multiple of r_var.
    pub sigma_tilde_scale: f64,
    /// Bias drift variance as a multiple of r_var.
    pub sigma_breve_scale: f64,
    /// Initial bias covariance (diagonal value).
    pub sigma0_plus: f64,
    /// Variational convergence threshold.
    pub tau: f64,
    /// Variational iteration cap.
    pub max_iters: usize,
    /// Monte-Carlo runs per (case, lambda) cell.
    pub runs: usize,
    /// Steps per run (step 0 is the initial state).
    pub steps: usize,
    /// Master seed; per-run streams are derived from it.
    pub seed: u64,
    /// Filters to run.
    pub filters: Vec<FilterKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            zeta: 1.0,
            eta1: 0.1,
            eta2: 1.75e-4,
            x0: vec![0.0, 10.0, 0.0, -5.0, 3.0 * std::f64::consts::PI / 180.0],
            sensors: 4,
            sensor_spacing: 350.0,
            r_var: 4.0,
            case: CaseKind::Persistent,
            lambda: vec![0.2, 0.4, 0.6, 0.8],
            magnitude: 90.0,
            sigma_o: 0.4,
            onset: 100,
            offset: 130,
            theta_prior: 0.5,
            sigma_tilde_scale: 1000.0,
            sigma_breve_scale: 0.1,
            sigma0_plus: 1e-3,
            tau: 1e-4,
            max_iters: 50,
            runs: 100,
            steps: 400,
            seed: 1789,
            filters: vec![FilterKind::Bdm, FilterKind::Ukf],
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            details: e.to_string(),
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            details: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<Self> {
        let bad = |details: String| -> Result<Self> {
            Err(CliError::Config {
                path: "<config>".to_string(),
                details,
            })
        };
        if self.x0.len() != 5 {
            return bad(format!("x0 must have 5 entries, got {}", self.x0.len()));
        }
        if self.sensors == 0 {
            return bad("sensors must be positive".to_string());
        }
        if self.steps < 2 {
            return bad("steps must be at least 2".to_string());
        }
        if self.runs == 0 {
            return bad("runs must be positive".to_string());
        }
        if self.lambda.is_empty() {
            return bad("lambda list must not be empty".to_string());
        }
        if self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("lambda entries must lie in [0, 1]".to_string());
        }
        if self.filters.is_empty() {
            return bad("filters list must not be empty".to_string());
        }
        if !(0.0..=1.0).contains(&self.theta_prior) {
            return bad(format!("theta_prior {} outside [0, 1]", self.theta_prior));
        }
        Ok(self.clone())
    }

    pub fn params(&self) -> TurnModelParams {
        TurnModelParams {
            zeta: self.zeta,
            eta1: self.eta1,
            eta2: self.eta2,
            x0: DVector::from_row_slice(&self.x0),
        }
    }

    pub fn sensor_array(&self) -> Result<SensorArray> {
        let positions = (0..self.sensors)
            .map(|i| {
                (
                    self.sensor_spacing * i as f64,
                    self.sensor_spacing * (i % 2) as f64,
                )
            })
            .collect();
        Ok(SensorArray::new(positions, self.r_var)?)
    }

    pub fn model(&self) -> Result<TurnRangeModel> {
        Ok(TurnRangeModel::new(self.params(), self.sensor_array()?))
    }

    pub fn scenario(&self, lambda: f64) -> Result<BiasScenario> {
        Ok(match self.case {
            CaseKind::Persistent => BiasScenario::new(
                bdm_core::sim::BiasKind::Persistent,
                lambda,
                self.magnitude,
                self.sigma_o,
                0,
                0,
            )?,
            CaseKind::Momentary => BiasScenario::new(
                bdm_core::sim::BiasKind::Momentary,
                lambda,
                self.magnitude,
                self.sigma_o,
                self.onset,
                self.offset,
            )?,
            CaseKind::None => BiasScenario::none(),
        })
    }

    pub fn hyper(&self) -> Result<BiasHyperParams> {
        Ok(BiasHyperParams::uniform(
            self.sensors,
            self.sigma_tilde_scale * self.r_var,
            self.sigma_breve_scale * self.r_var,
            self.theta_prior,
        )?)
    }

    pub fn vb(&self) -> VbSettings {
        VbSettings {
            tau: self.tau,
            max_iters: self.max_iters,
        }
    }

    /// Filter starting point: state pinned at x0 with the process noise as
    /// its covariance, bias at zero with a tight covariance and the prior
    /// occurrence probabilities.
    pub fn initial_state(&self, model: &TurnRangeModel) -> Result<BdmState> {
        let q = bdm_core::sim::turn_process_noise(&model.params);
        let state = GaussianBelief::new(model.params.x0.clone(), q)?;
        let m = self.sensors;
        let bias = BiasBelief::new(
            DVector::zeros(m),
            DMatrix::identity(m, m) * self.sigma0_plus,
            DVector::from_element(m, self.theta_prior),
        )?;
        Ok(BdmState::new(state, bias))
    }
}
