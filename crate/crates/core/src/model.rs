//! Linear state-space model shared by the Gaussian and Student's t estimators.
//!
//! ```text
//! x[k+1] = F x[k] + G v[k],   v[k] ~ St(0, Q_k, gamma)
//! y[k]   = H x[k] + e[k],     e[k] ~ St(0, R_k, delta)
//! x[0]   ~ St(x0, P0, eta0)
//! ```
//!
//! Gaussian estimators read `Q`, `R`, `P0` as covariances and ignore the
//! degrees of freedom. The noise input `G` defaults to the identity.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::distributions::StudentT;
use crate::error::{Error, Result};
use crate::linalg;

/// Per-step overrides of the process and measurement noise matrices.
///
/// The override for step `k` applies to `v[k]` (the transition from `k` to
/// `k+1`) and to `e[k]` (the measurement taken at `k`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovarianceSchedule {
    q: BTreeMap<usize, DMatrix<f64>>,
    r: BTreeMap<usize, DMatrix<f64>>,
}

impl CovarianceSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_q(&mut self, k: usize, q: DMatrix<f64>) -> Result<()> {
        linalg::validate_psd(&q, "scheduled Q")?;
        self.q.insert(k, q);
        Ok(())
    }

    pub fn set_r(&mut self, k: usize, r: DMatrix<f64>) -> Result<()> {
        linalg::validate_psd(&r, "scheduled R")?;
        self.r.insert(k, r);
        Ok(())
    }

    pub fn q(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.q.get(&k)
    }

    pub fn r(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.r.get(&k)
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty() && self.r.is_empty()
    }

    pub fn q_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.q.keys().copied()
    }

    pub fn r_steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.r.keys().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Noise input matrix (n × p).
    pub g: DMatrix<f64>,
    /// Process noise scale or covariance (p × p).
    pub q: DMatrix<f64>,
    /// Measurement noise scale or covariance (m × m).
    pub r: DMatrix<f64>,
    /// Process noise degrees of freedom.
    pub gamma: f64,
    /// Measurement noise degrees of freedom.
    pub delta: f64,
    pub prior: StudentT,
    pub schedule: CovarianceSchedule,
}

impl LinearModel {
    pub fn new(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        gamma: f64,
        delta: f64,
        prior: StudentT,
    ) -> Result<Self> {
        let n = f.nrows();
        Self::with_input(f, DMatrix::identity(n, n), h, q, r, gamma, delta, prior)
    }

    /// Model whose process noise enters through `g` (n × p) with `q` of size p × p.
    #[allow(clippy::too_many_arguments)]
    pub fn with_input(
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        gamma: f64,
        delta: f64,
        prior: StudentT,
    ) -> Result<Self> {
        let model = Self { f, h, g, q, r, gamma, delta, prior, schedule: CovarianceSchedule::new() };
        model.validate()?;
        Ok(model)
    }

    /// Scalar random walk `x[k+1] = x[k] + v[k]`, `y[k] = x[k] + e[k]`.
    pub fn scalar_random_walk(q: f64, r: f64, gamma: f64, delta: f64, prior: StudentT) -> Result<Self> {
        let one = DMatrix::from_element(1, 1, 1.0);
        Self::new(
            one.clone(),
            one,
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
            gamma,
            delta,
            prior,
        )
    }

    pub fn with_noise_input(mut self, g: DMatrix<f64>) -> Result<Self> {
        self.g = g;
        self.validate()?;
        Ok(self)
    }

    pub fn with_schedule(mut self, schedule: CovarianceSchedule) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.f.nrows();
        linalg::check_square(&self.f, n, "F")?;
        if self.h.ncols() != n || self.h.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "H is {}x{}, expected m x {n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        let m = self.h.nrows();
        if self.g.nrows() != n {
            return Err(Error::Dimension(format!("G has {} rows, expected {n}", self.g.nrows())));
        }
        let p = self.g.ncols();
        linalg::check_square(&self.q, p, "Q")?;
        linalg::check_square(&self.r, m, "R")?;
        linalg::validate_psd(&self.q, "Q")?;
        linalg::validate_psd(&self.r, "R")?;
        linalg::check_len(self.prior.mean(), n, "prior mean")?;
        for (name, v) in [("gamma", self.gamma), ("delta", self.delta)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for k in self.schedule.q_steps() {
            linalg::check_square(self.schedule.q(k).unwrap(), p, "scheduled Q")?;
        }
        for k in self.schedule.r_steps() {
            linalg::check_square(self.schedule.r(k).unwrap(), m, "scheduled R")?;
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn q_at(&self, k: usize) -> &DMatrix<f64> {
        self.schedule.q(k).unwrap_or(&self.q)
    }

    pub fn r_at(&self, k: usize) -> &DMatrix<f64> {
        self.schedule.r(k).unwrap_or(&self.r)
    }

    /// `G · q · Gᵀ` mapped into state space.
    pub fn process_matrix(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.g * q * self.g.transpose()))
    }

    pub(crate) fn check_measurement(&self, y: &DVector<f64>) -> Result<()> {
        linalg::check_len(y, self.measurement_dim(), "measurement")
    }
}
