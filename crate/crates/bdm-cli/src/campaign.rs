//! Seeded Monte-Carlo campaigns over filters and bias probabilities.
//!
//! Each (lambda, run) cell derives an independent seed from the master
//! seed, simulates one trajectory, and runs every requested filter over
//! the same measurements. Runs execute on a worker pool; results are
//! keyed by run index, so every output except wall-clock timing is
//! byte-identical across worker counts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use bdm_core::filter::step;
use bdm_core::gaussian::ukf_step;
use bdm_core::sim::{simulate, Trajectory, TurnRangeModel};
use bdm_core::SigmaPointConfig;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::{CaseKind, ExperimentConfig, FilterKind};
use crate::error::{CliError, Result};
use crate::metrics::{
    aggregate_rmse, per_step_rmse, step_error_norms, FULL_STATE_COMPONENTS, POSITION_COMPONENTS,
};

/// One filter's outcome on one simulated run. Error-norm series start at
/// step 1 (step 0 is the shared initial belief).
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub filter: FilterKind,
    pub lambda: f64,
    /// Per-step position error norms, steps 1..T-1.
    pub pos_norms: Vec<f64>,
    /// Per-step full-state error norms, steps 1..T-1.
    pub state_norms: Vec<f64>,
    /// Time-averaged full-state RMSE.
    pub state_rmse: f64,
    /// Time-averaged position RMSE.
    pub pos_rmse: f64,
    /// Filter-loop wall clock, seconds.
    pub seconds: f64,
    /// Per-step indicator posteriors (empty for filters without one).
    pub omega: Vec<Vec<f64>>,
    pub vb_iter_sum: usize,
    pub vb_iter_max: usize,
    pub vb_cap_hits: usize,
    pub vb_steps: usize,
}

/// All runs of one lambda value, run-major then filter-major.
#[derive(Debug, Clone)]
pub struct LambdaCell {
    pub lambda: f64,
    pub results: Vec<RunResult>,
}

impl LambdaCell {
    pub fn of_filter(&self, filter: FilterKind) -> Vec<&RunResult> {
        self.results.iter().filter(|r| r.filter == filter).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub cells: Vec<LambdaCell>,
}

/// SplitMix64 finalizer; the standard avalanche for deriving seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-run stream seed: the master seed mixed with the case, the lambda
/// index and the run index through successive avalanche rounds.
pub fn run_seed(master: u64, case: CaseKind, lambda_idx: usize, run: usize) -> u64 {
    let case_tag = match case {
        CaseKind::Persistent => 1u64,
        CaseKind::Momentary => 2,
        CaseKind::None => 3,
    };
    let mut s = splitmix64(master ^ case_tag);
    s = splitmix64(s ^ lambda_idx as u64);
    splitmix64(s ^ run as u64)
}

/// Runs every configured filter over one simulated trajectory.
fn run_filters_on(
    cfg: &ExperimentConfig,
    model: &TurnRangeModel,
    traj: &Trajectory,
    lambda: f64,
    run: usize,
) -> Result<Vec<RunResult>> {
    let sp = SigmaPointConfig::default();
    let hp = cfg.hyper()?;
    let vb = cfg.vb();
    let truths = &traj.states[1..];
    let mut out = Vec::with_capacity(cfg.filters.len());

    for &filter in &cfg.filters {
        let mut estimates: Vec<DVector<f64>> = Vec::with_capacity(traj.len() - 1);
        let mut omega = Vec::new();
        let mut vb_iter_sum = 0;
        let mut vb_iter_max = 0;
        let mut vb_cap_hits = 0;

        let started = Instant::now();
        match filter {
            FilterKind::Bdm => {
                let mut st = cfg.initial_state(model)?;
                for y in traj.biased.iter().skip(1) {
                    st = step(model, &st, y, &hp, &vb, &sp)?;
                    estimates.push(st.state.mean.clone());
                    omega.push(st.bias.omega.iter().cloned().collect());
                    vb_iter_sum += st.diagnostics.iterations;
                    vb_iter_max = vb_iter_max.max(st.diagnostics.iterations);
                    if !st.diagnostics.converged {
                        vb_cap_hits += 1;
                    }
                }
            }
            FilterKind::Ukf => {
                let mut belief = cfg.initial_state(model)?.state;
                for y in traj.biased.iter().skip(1) {
                    belief = ukf_step(model, &belief, y, &sp)?;
                    estimates.push(belief.mean.clone());
                }
            }
        }
        let seconds = started.elapsed().as_secs_f64();

        let pos_norms = step_error_norms(&estimates, truths, &POSITION_COMPONENTS);
        let state_norms = step_error_norms(&estimates, truths, &FULL_STATE_COMPONENTS);
        out.push(RunResult {
            run,
            filter,
            lambda,
            state_rmse: aggregate_rmse(&state_norms),
            pos_rmse: aggregate_rmse(&pos_norms),
            pos_norms,
            state_norms,
            seconds,
            omega,
            vb_iter_sum,
            vb_iter_max,
            vb_cap_hits,
            vb_steps: traj.len() - 1,
        });
    }
    Ok(out)
}

/// Runs the full campaign on a pool of `workers` threads (0 = one per
/// core). Results are deterministic in everything but wall-clock fields.
pub fn run_campaign(cfg: &ExperimentConfig, workers: usize) -> Result<CampaignOutput> {
    cfg.validate()?;
    let model = cfg.model()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;

    let mut cells = Vec::with_capacity(cfg.lambda.len());
    for (li, &lambda) in cfg.lambda.iter().enumerate() {
        let scenario = cfg.scenario(lambda)?;
        let per_run: Vec<Vec<RunResult>> = pool.install(|| {
            (0..cfg.runs)
                .into_par_iter()
                .map(|run| {
                    let seed = run_seed(cfg.seed, cfg.case, li, run);
                    let traj =
                        simulate(&model.params, &model.sensors, &scenario, cfg.steps, seed)?;
                    run_filters_on(cfg, &model, &traj, lambda, run)
                })
                .collect::<Result<_>>()
        })?;
        cells.push(LambdaCell {
            lambda,
            results: per_run.into_iter().flatten().collect(),
        });
    }
    Ok(CampaignOutput { cells })
}

/// Short lambda token for file names (`0.8` -> "0.8").
pub fn lambda_token(lambda: f64) -> String {
    format!("{lambda}")
}

fn create(out_dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = out_dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

/// Writes the campaign CSV set into `out_dir` and returns the paths:
/// per (filter, lambda) a box-plot table (`run,state_rmse,pos_rmse`) and a
/// time-series table (`k,pos_rmse,state_rmse`), per lambda the mean
/// indicator series, plus one `timing.csv` across the whole campaign.
pub fn write_campaign_csvs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    output: &CampaignOutput,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    for cell in &output.cells {
        let tok = lambda_token(cell.lambda);
        for &filter in &cfg.filters {
            let rows = cell.of_filter(filter);

            let (path, mut w) = create(out_dir, &format!("rmse_box_{}_{tok}.csv", filter.name()))?;
            writeln!(w, "run,state_rmse,pos_rmse")?;
            for r in &rows {
                writeln!(w, "{},{},{}", r.run, r.state_rmse, r.pos_rmse)?;
            }
            w.flush()?;
            written.push(path);

            let pos_series: Vec<Vec<f64>> = rows.iter().map(|r| r.pos_norms.clone()).collect();
            let state_series: Vec<Vec<f64>> =
                rows.iter().map(|r| r.state_norms.clone()).collect();
            let pos = per_step_rmse(&pos_series);
            let state = per_step_rmse(&state_series);
            let (path, mut w) =
                create(out_dir, &format!("rmse_time_{}_{tok}.csv", filter.name()))?;
            writeln!(w, "k,pos_rmse,state_rmse")?;
            for (i, (p, s)) in pos.iter().zip(&state).enumerate() {
                writeln!(w, "{},{p},{s}", i + 1)?;
            }
            w.flush()?;
            written.push(path);
        }

        let bdm_rows = cell.of_filter(FilterKind::Bdm);
        if !bdm_rows.is_empty() {
            let m = cfg.sensors;
            let steps = bdm_rows[0].omega.len();
            let (path, mut w) = create(out_dir, &format!("omega_time_{tok}.csv"))?;
            let header: Vec<String> = std::iter::once("k".to_string())
                .chain((0..m).map(|i| format!("omega{i}")))
                .collect();
            writeln!(w, "{}", header.join(","))?;
            for k in 0..steps {
                let mut row = vec![(k + 1).to_string()];
                for i in 0..m {
                    let mean: f64 = bdm_rows.iter().map(|r| r.omega[k][i]).sum::<f64>()
                        / bdm_rows.len() as f64;
                    row.push(mean.to_string());
                }
                writeln!(w, "{}", row.join(","))?;
            }
            w.flush()?;
            written.push(path);
        }
    }

    let (path, mut w) = create(out_dir, "timing.csv")?;
    writeln!(
        w,
        "filter,lambda,runs,mean_seconds,mean_vb_iters,max_vb_iters,vb_cap_hits"
    )?;
    for cell in &output.cells {
        for &filter in &cfg.filters {
            let rows = cell.of_filter(filter);
            let n = rows.len().max(1) as f64;
            let mean_seconds: f64 = rows.iter().map(|r| r.seconds).sum::<f64>() / n;
            let total_steps: usize = rows.iter().map(|r| r.vb_steps).sum();
            let mean_iters: f64 = rows.iter().map(|r| r.vb_iter_sum).sum::<usize>() as f64
                / total_steps.max(1) as f64;
            let max_iters = rows.iter().map(|r| r.vb_iter_max).max().unwrap_or(0);
            let cap_hits: usize = rows.iter().map(|r| r.vb_cap_hits).sum();
            writeln!(
                w,
                "{},{},{},{mean_seconds},{mean_iters},{max_iters},{cap_hits}",
                filter.name(),
                lambda_token(cell.lambda),
                rows.len()
            )?;
        }
    }
    w.flush()?;
    written.push(path);

    Ok(written)
}

/// Computes bound series for every configured lambda and writes
/// `pcrb_{case}_{lambda}.csv` files (columns `k,bound1..boundn`).
pub fn write_pcrb_csvs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    samples: usize,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let model = cfg.model()?;
    let initial_cov = bdm_core::sim::turn_process_noise(&model.params);
    let mc = bdm_core::pcrb::PcrbConfig {
        n_mc1: samples,
        n_mc2: samples,
        n_mc3: samples,
        n_mc4: samples,
        schedule: None,
    };
    let case_name = match cfg.case {
        CaseKind::Persistent => "persistent",
        CaseKind::Momentary => "momentary",
        CaseKind::None => "none",
    };

    let mut written = Vec::new();
    for (li, &lambda) in cfg.lambda.iter().enumerate() {
        let scenario = cfg.scenario(lambda)?;
        let seed = run_seed(cfg.seed, cfg.case, li, usize::MAX);
        let bounds = bdm_core::pcrb::pcrb_series(
            &model,
            &model.params.x0,
            &initial_cov,
            &scenario,
            cfg.steps,
            &mc,
            seed,
        )?;
        let (path, mut w) = create(
            out_dir,
            &format!("pcrb_{case_name}_{}.csv", lambda_token(lambda)),
        )?;
        bdm_core::pcrb::write_bounds_csv(&bounds, &mut w)?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            runs: 3,
            steps: 30,
            lambda: vec![0.8],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn seeds_differ_across_all_indices() {
        let mut seen = std::collections::HashSet::new();
        for case in [CaseKind::Persistent, CaseKind::Momentary, CaseKind::None] {
            for li in 0..3 {
                for run in 0..50 {
                    assert!(seen.insert(run_seed(7, case, li, run)));
                }
            }
        }
    }

    #[test]
    fn campaign_is_deterministic_across_worker_counts() {
        let cfg = tiny_config();
        let a = run_campaign(&cfg, 1).unwrap();
        let b = run_campaign(&cfg, 4).unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            assert_eq!(ca.results.len(), cb.results.len());
            for (ra, rb) in ca.results.iter().zip(&cb.results) {
                assert_eq!(ra.run, rb.run);
                assert_eq!(ra.filter, rb.filter);
                assert_eq!(ra.state_norms, rb.state_norms);
                assert_eq!(ra.pos_norms, rb.pos_norms);
                assert_eq!(ra.omega, rb.omega);
            }
        }
    }

    #[test]
    fn both_filters_share_each_trajectory() {
        // With theta_prior = 0 the two filters are the same algorithm, so
        // identical trajectories force identical error series.
        let cfg = ExperimentConfig {
            theta_prior: 0.0,
            runs: 2,
            steps: 25,
            lambda: vec![0.0],
            case: CaseKind::None,
            ..ExperimentConfig::default()
        };
        let out = run_campaign(&cfg, 1).unwrap();
        let cell = &out.cells[0];
        let bdm = cell.of_filter(FilterKind::Bdm);
        let ukf = cell.of_filter(FilterKind::Ukf);
        for (b, u) in bdm.iter().zip(&ukf) {
            assert_eq!(b.state_norms, u.state_norms);
        }
    }

    #[test]
    fn csv_set_is_complete_and_well_formed() {
        let cfg = tiny_config();
        let out = run_campaign(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_campaign_csvs(dir.path(), &cfg, &out).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        for expect in [
            "rmse_box_bdm_0.8.csv",
            "rmse_box_ukf_0.8.csv",
            "rmse_time_bdm_0.8.csv",
            "rmse_time_ukf_0.8.csv",
            "omega_time_0.8.csv",
            "timing.csv",
        ] {
            assert!(names.contains(&expect.to_string()), "missing {expect}");
        }
        let box_csv = fs::read_to_string(dir.path().join("rmse_box_bdm_0.8.csv")).unwrap();
        let mut lines = box_csv.lines();
        assert_eq!(lines.next(), Some("run,state_rmse,pos_rmse"));
        assert_eq!(lines.count(), 3);
        let time_csv = fs::read_to_string(dir.path().join("rmse_time_bdm_0.8.csv")).unwrap();
        assert_eq!(time_csv.lines().count(), 30); // header + 29 steps
    }
}
