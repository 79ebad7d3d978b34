//! Simulation experiments: the scalar t random walk and the drone tracking
//! Monte Carlo comparison of Kalman and t estimators.

mod drone;
mod scalar;
mod stats;

pub use drone::{nominal_model, simulate_drone, DroneScenario, DroneTrajectory};
pub use scalar::{simulate_scalar_walk, ScalarWalk, ScalarWalkConfig};
pub use stats::{kde, median, position_rmse, sign_test, silverman_bandwidth, Kde};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::calibration::{build_scale_table, ScaleFactorTable, GAUSSIAN_DOF};
use crate::error::Result;
use crate::gaussian::{kf_run, rts_smooth, KfOptions};
use crate::model::LinearModel;
use crate::rng::derive_seed;
use crate::student::{tf_run, ts_smooth, ApproximationStrategy};

pub const FILTER_LABELS: [&str; 6] = ["kf", "kf-clairvoyant", "t", "rts", "rts-clairvoyant", "t-smoother"];

/// Strategy choice for the t estimators; the table is supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrategyKind {
    Conservative,
    #[default]
    Kld,
    Moment,
}

impl StrategyKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conservative" => Some(Self::Conservative),
            "kld" => Some(Self::Kld),
            "moment" => Some(Self::Moment),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Conservative => "conservative",
            Self::Kld => "kld",
            Self::Moment => "moment",
        }
    }

    pub fn build(&self, table: &Arc<ScaleFactorTable>) -> ApproximationStrategy {
        match self {
            Self::Conservative => ApproximationStrategy::Conservative,
            Self::Kld => ApproximationStrategy::KldScaled(table.clone()),
            Self::Moment => ApproximationStrategy::MomentMatched,
        }
    }
}

/// Table cells needed by the drone t filter: Gaussian-to-t conversion of the
/// 2-D noises and the 4-D prior, and the 4-D state returning from
/// `η = ν + 2` to `ν` in each time update.
pub fn drone_scale_table(t_dof: f64, samples: usize, seed: u64) -> Result<ScaleFactorTable> {
    build_scale_table(&[2, 4], &[GAUSSIAN_DOF, t_dof + 2.0], &[t_dof], samples, seed)
}

/// Prior covariance `25·I` of the drone filters around the known initial state.
pub fn default_drone_p0() -> DMatrix<f64> {
    DMatrix::identity(4, 4) * 25.0
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenario: DroneScenario,
    pub runs: usize,
    pub seed: u64,
    /// Prior covariance around the known initial state.
    pub p0: DMatrix<f64>,
    pub t_dof: f64,
    pub strategy: StrategyKind,
    pub table: Arc<ScaleFactorTable>,
}

impl BenchmarkConfig {
    /// Default prior `P0 = 25·I`.
    pub fn new(scenario: DroneScenario, runs: usize, seed: u64, table: Arc<ScaleFactorTable>) -> Self {
        Self {
            scenario,
            runs,
            seed,
            p0: default_drone_p0(),
            t_dof: 3.0,
            strategy: StrategyKind::Kld,
            table,
        }
    }

    /// The t filter model: Gaussian covariances converted to t scales with KLD-optimal factors.
    pub fn t_model(&self) -> Result<LinearModel> {
        let s = &self.scenario;
        let nu = self.t_dof;
        let c2 = self.table.lookup(2, GAUSSIAN_DOF, nu)?;
        let c4 = self.table.lookup(4, GAUSSIAN_DOF, nu)?;
        let prior = crate::distributions::StudentT::new(s.x0(), &self.p0 * c4, nu)?;
        LinearModel::with_input(s.f(), s.g(), s.h(), s.q_nominal() * c2, s.r_nominal() * c2, nu, nu, prior)
    }
}

/// Estimates of one run: position per filter label and step.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: DroneTrajectory,
    /// `positions[f][k]` for filter `FILTER_LABELS[f]`.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub rmse: Vec<f64>,
}

fn positions<I: Iterator<Item = DVector<f64>>>(it: I) -> Vec<[f64; 2]> {
    it.map(|x| [x[0], x[1]]).collect()
}

/// Runs every estimator on one simulated trajectory.
pub fn run_once(cfg: &BenchmarkConfig, seed: u64) -> Result<RunOutcome> {
    let s = &cfg.scenario;
    let trajectory = simulate_drone(s, seed)?;
    let ys = trajectory.filter_measurements();
    let nominal = nominal_model(s, &cfg.p0, cfg.t_dof)?;
    let clairvoyant = nominal.clone().with_schedule(s.schedule()?)?;
    let t_model = cfg.t_model()?;
    let strategy = cfg.strategy.build(&cfg.table);

    let kf = kf_run(&nominal, &ys, &KfOptions::default())?;
    let kfc = kf_run(&clairvoyant, &ys, &KfOptions::default())?;
    let tf = tf_run(&t_model, &ys, &strategy)?;
    let rts = rts_smooth(&kf, &nominal)?;
    let rtsc = rts_smooth(&kfc, &clairvoyant)?;
    let ts = ts_smooth(&tf, &t_model)?;

    let positions = vec![
        positions(kf.filtered().into_iter().map(|b| b.xhat)),
        positions(kfc.filtered().into_iter().map(|b| b.xhat)),
        positions(tf.filtered().into_iter().map(|b| b.xhat)),
        positions(rts.into_iter().map(|b| b.xhat)),
        positions(rtsc.into_iter().map(|b| b.xhat)),
        positions(ts.into_iter().map(|b| b.xhat)),
    ];
    let truth: Vec<[f64; 2]> = trajectory.states.iter().map(|x| [x[0], x[1]]).collect();
    let rmse = positions.iter().map(|p| position_rmse(&truth, p)).collect::<Result<_>>()?;
    Ok(RunOutcome { trajectory, positions, rmse })
}

/// Per-filter RMSE distribution.
#[derive(Debug, Clone)]
pub struct McErrorSummary {
    pub label: String,
    pub rmse: Vec<f64>,
    /// `None` when fewer than two runs or all values equal.
    pub kde: Option<Kde>,
}

impl McErrorSummary {
    pub fn median(&self) -> f64 {
        median(&self.rmse)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub summaries: Vec<McErrorSummary>,
    /// The first run, kept for per-step error traces.
    pub representative: RunOutcome,
}

impl BenchmarkResult {
    pub fn summary(&self, label: &str) -> Option<&McErrorSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    /// `‖p_k − p̂_k‖` of the representative run for every filter.
    pub fn per_step_errors(&self) -> Vec<(String, Vec<f64>)> {
        let truth = &self.representative.trajectory.states;
        FILTER_LABELS
            .iter()
            .zip(&self.representative.positions)
            .map(|(label, est)| {
                let e = truth.iter().zip(est).map(|(x, p)| (x[0] - p[0]).hypot(x[1] - p[1])).collect();
                (label.to_string(), e)
            })
            .collect()
    }
}

/// Monte Carlo comparison over `cfg.runs` trajectories with per-run seeds derived from `cfg.seed`.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    let outcomes: Vec<RunOutcome> = (0..cfg.runs.max(1) as u64)
        .into_par_iter()
        .map(|run| run_once(cfg, derive_seed(cfg.seed, run)))
        .collect::<Result<_>>()?;
    let summaries = FILTER_LABELS
        .iter()
        .enumerate()
        .map(|(f, label)| {
            let rmse: Vec<f64> = outcomes.iter().map(|o| o.rmse[f]).collect();
            let kde = if rmse.len() >= 2 { kde(&rmse, None).ok() } else { None };
            McErrorSummary { label: label.to_string(), rmse, kde }
        })
        .collect();
    let representative = outcomes.into_iter().next().expect("at least one run");
    Ok(BenchmarkResult { summaries, representative })
}
