use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{CovarianceSchedule, LinearModel};
use crate::rng::{rng_from_seed, SimRng};

/// Constant-velocity drone in a square yard with maneuvers and measurement outliers.
///
/// Maneuver steps scale the process noise covariance for the transition out of
/// that step; outlier steps scale the measurement noise covariance at that step.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneScenario {
    pub sample_time: f64,
    /// Standard deviation multiplier of the process noise at maneuver steps.
    pub maneuver_gain: f64,
    pub maneuver_steps: Vec<usize>,
    pub measurement_std: f64,
    pub outlier_std: f64,
    pub outlier_steps: Vec<usize>,
    pub x0: [f64; 4],
    pub yard: f64,
    pub speed_cap: f64,
    /// Number of time steps including `k = 0`.
    pub steps: usize,
    pub runs: usize,
    pub max_rejections: usize,
}

impl Default for DroneScenario {
    fn default() -> Self {
        Self {
            sample_time: 0.2,
            maneuver_gain: 20.0,
            maneuver_steps: vec![25, 75, 125],
            measurement_std: 5.0,
            outlier_std: 25.0,
            outlier_steps: vec![50, 100],
            x0: [150.0, 300.0, 0.0, -15.0],
            yard: 300.0,
            speed_cap: 30.0,
            steps: 151,
            runs: 500,
            max_rejections: 10_000,
        }
    }
}

/// An accepted trajectory; `states[k]` and `measurements[k]` for `k = 0..steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneTrajectory {
    pub states: Vec<Vector4<f64>>,
    pub measurements: Vec<Vector2<f64>>,
    pub maneuver: Vec<bool>,
    pub outlier: Vec<bool>,
    /// Trajectories discarded before this one was accepted.
    pub rejections: usize,
}

impl DroneTrajectory {
    /// `y[1..]` as filter input.
    pub fn filter_measurements(&self) -> Vec<DVector<f64>> {
        self.measurements[1..].iter().map(|y| DVector::from_column_slice(y.as_slice())).collect()
    }
}

impl DroneScenario {
    /// The same scenario without maneuvers and outliers.
    pub fn without_events(&self) -> Self {
        Self { maneuver_steps: Vec::new(), outlier_steps: Vec::new(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_time > 0.0) || self.steps < 2 || !(self.yard > 0.0) || !(self.speed_cap > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid drone scenario {self:?}")));
        }
        if !(self.measurement_std > 0.0 && self.outlier_std > 0.0 && self.maneuver_gain > 0.0) {
            return Err(Error::InvalidParameter("noise levels must be positive".into()));
        }
        Ok(())
    }

    pub fn f(&self) -> DMatrix<f64> {
        let t = self.sample_time;
        let mut f = DMatrix::identity(4, 4);
        f[(0, 2)] = t;
        f[(1, 3)] = t;
        f
    }

    /// Noise input `[T²/2·I; T·I]`.
    pub fn g(&self) -> DMatrix<f64> {
        let t = self.sample_time;
        let mut g = DMatrix::zeros(4, 2);
        for i in 0..2 {
            g[(i, i)] = 0.5 * t * t;
            g[(i + 2, i)] = t;
        }
        g
    }

    pub fn h(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 4)
    }

    pub fn q_nominal(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2) / (self.sample_time * self.sample_time)
    }

    pub fn q_maneuver(&self) -> DMatrix<f64> {
        self.q_nominal() * self.maneuver_gain.powi(2)
    }

    pub fn r_nominal(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.measurement_std.powi(2)
    }

    pub fn r_outlier(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.outlier_std.powi(2)
    }

    pub fn schedule(&self) -> Result<CovarianceSchedule> {
        let mut s = CovarianceSchedule::new();
        for &k in &self.maneuver_steps {
            s.set_q(k, self.q_maneuver())?;
        }
        for &k in &self.outlier_steps {
            s.set_r(k, self.r_outlier())?;
        }
        Ok(s)
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }

    fn accepts(&self, x: &Vector4<f64>) -> bool {
        let inside = (0.0..=self.yard).contains(&x[0]) && (0.0..=self.yard).contains(&x[1]);
        inside && x[2].hypot(x[3]) <= self.speed_cap
    }

    fn noise2(rng: &mut SimRng, std: f64) -> Vector2<f64> {
        Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng)) * std
    }

    /// Draws one trajectory; `None` if a constraint is violated.
    fn attempt(&self, rng: &mut SimRng) -> Option<(Vec<Vector4<f64>>, Vec<Vector2<f64>>)> {
        let t = self.sample_time;
        let q_std = 1.0 / t;
        let mut x = Vector4::from_column_slice(&self.x0);
        if !self.accepts(&x) {
            return None;
        }
        let mut states = Vec::with_capacity(self.steps);
        let mut ys = Vec::with_capacity(self.steps);
        for k in 0..self.steps {
            let r_std = if self.outlier_steps.contains(&k) { self.outlier_std } else { self.measurement_std };
            ys.push(Vector2::new(x[0], x[1]) + Self::noise2(rng, r_std));
            states.push(x);
            if k + 1 == self.steps {
                break;
            }
            let gain = if self.maneuver_steps.contains(&k) { self.maneuver_gain } else { 1.0 };
            let v = Self::noise2(rng, q_std * gain);
            x = Vector4::new(
                x[0] + t * x[2] + 0.5 * t * t * v[0],
                x[1] + t * x[3] + 0.5 * t * t * v[1],
                x[2] + t * v[0],
                x[3] + t * v[1],
            );
            if !self.accepts(&x) {
                return None;
            }
        }
        Some((states, ys))
    }
}

/// Rejection-samples whole trajectories until one stays in the yard and below
/// the speed cap at every step.
pub fn simulate_drone(s: &DroneScenario, seed: u64) -> Result<DroneTrajectory> {
    s.validate()?;
    let mut rng = rng_from_seed(seed);
    for rejections in 0..s.max_rejections {
        if let Some((states, measurements)) = s.attempt(&mut rng) {
            let maneuver = (0..s.steps).map(|k| s.maneuver_steps.contains(&k)).collect();
            let outlier = (0..s.steps).map(|k| s.outlier_steps.contains(&k)).collect();
            return Ok(DroneTrajectory { states, measurements, maneuver, outlier, rejections });
        }
    }
    Err(Error::ScenarioInfeasible(s.max_rejections))
}

/// Nominal model for the Gaussian filters with prior `N(x0, p0)`.
pub fn nominal_model(s: &DroneScenario, p0: &DMatrix<f64>, dof: f64) -> Result<LinearModel> {
    let prior = crate::distributions::StudentT::new(s.x0(), p0.clone(), dof)?;
    LinearModel::with_input(s.f(), s.g(), s.h(), s.q_nominal(), s.r_nominal(), dof, dof, prior)
}
