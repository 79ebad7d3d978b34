use nalgebra::DVector;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::distributions::StudentT;
use crate::error::{Error, Result};
use crate::model::LinearModel;
use crate::rng::{rng_from_seed, SimRng};

/// Scalar t random walk `x[k+1] = x[k] + v[k]`, `y[k] = x[k] + e[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarWalkConfig {
    pub steps: usize,
    pub prior_mean: f64,
    pub prior_scale: f64,
    pub prior_dof: f64,
    pub q: f64,
    pub gamma: f64,
    pub r: f64,
    pub delta: f64,
    pub seed: u64,
    /// `(k, offset)` pairs added to the measurement at step `k`.
    pub outliers: Vec<(usize, f64)>,
}

impl Default for ScalarWalkConfig {
    fn default() -> Self {
        Self {
            steps: 15,
            prior_mean: 0.0,
            prior_scale: 1.0,
            prior_dof: 3.0,
            q: 1.0,
            gamma: 3.0,
            r: 1.0,
            delta: 3.0,
            seed: 0,
            outliers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarWalk {
    /// `x[0..=steps]`.
    pub states: Vec<f64>,
    /// `y[1..=steps]`; `measurements[i]` is taken at `k = i + 1`.
    pub measurements: Vec<f64>,
}

impl ScalarWalk {
    pub fn measurement_vectors(&self) -> Vec<DVector<f64>> {
        self.measurements.iter().map(|&y| DVector::from_element(1, y)).collect()
    }
}

impl ScalarWalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        for (name, v) in [("prior scale", self.prior_scale), ("q", self.q), ("r", self.r)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("prior dof", self.prior_dof), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some((k, _)) = self.outliers.iter().find(|(k, _)| *k == 0 || *k > self.steps) {
            return Err(Error::InvalidParameter(format!("outlier step {k} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// The model the data are generated from.
    pub fn model(&self) -> Result<LinearModel> {
        self.validate()?;
        let prior = StudentT::scalar(self.prior_mean, self.prior_scale, self.prior_dof)?;
        LinearModel::scalar_random_walk(self.q, self.r, self.gamma, self.delta, prior)
    }
}

/// One scalar draw `scale^{1/2}·z/√λ` from `St(0, scale, nu)`.
pub(crate) fn draw_t(rng: &mut SimRng, scale: f64, nu: f64) -> f64 {
    let gamma = Gamma::new(0.5 * nu, 2.0 / nu).expect("positive dof");
    let lambda: f64 = gamma.sample(rng);
    let z: f64 = StandardNormal.sample(rng);
    scale.sqrt() * z / lambda.sqrt()
}

/// Seeded realization of the random walk and its measurements.
pub fn simulate_scalar_walk(c: &ScalarWalkConfig) -> Result<ScalarWalk> {
    c.validate()?;
    let mut rng = rng_from_seed(c.seed);
    let mut states = Vec::with_capacity(c.steps + 1);
    let mut measurements = Vec::with_capacity(c.steps);
    states.push(c.prior_mean + draw_t(&mut rng, c.prior_scale, c.prior_dof));
    for k in 1..=c.steps {
        let x = states[k - 1] + draw_t(&mut rng, c.q, c.gamma);
        let offset: f64 = c.outliers.iter().filter(|(s, _)| *s == k).map(|(_, o)| o).sum();
        measurements.push(x + draw_t(&mut rng, c.r, c.delta) + offset);
        states.push(x);
    }
    Ok(ScalarWalk { states, measurements })
}
