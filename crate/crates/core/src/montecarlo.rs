//! Monte Carlo t filter for nonlinear models.
//!
//! Samples of the state and noise are pushed through the model functions and
//! a t density with prescribed degrees of freedom is refitted by EM. The
//! measurement update conditions the fitted joint density of state and
//! measurement on the observed value.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::distributions::{BlockPartition, StudentT};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{derive_seed, rng_from_seed};
use crate::student::TBelief;

/// `f(x, v)` or `h(x, e)`.
pub type ModelFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

pub const MIN_SAMPLES: usize = 100;
pub const EM_MAX_ITERS: usize = 200;
pub const EM_TOL: f64 = 1e-8;
/// EM also stops once the log-likelihood gain drops below this fraction of its magnitude.
pub const EM_LL_RTOL: f64 = 1e-12;

/// `x[k+1] = f(x[k], v[k])`, `y[k] = h(x[k], e[k])` with t noises.
#[derive(Clone)]
pub struct NonlinearModel {
    pub f: ModelFn,
    pub h: ModelFn,
    pub q: DMatrix<f64>,
    pub gamma: f64,
    pub r: DMatrix<f64>,
    pub delta: f64,
    pub samples: usize,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearModel")
            .field("q", &self.q)
            .field("gamma", &self.gamma)
            .field("r", &self.r)
            .field("delta", &self.delta)
            .field("samples", &self.samples)
            .finish_non_exhaustive()
    }
}

impl NonlinearModel {
    pub fn new(f: ModelFn, h: ModelFn, q: DMatrix<f64>, gamma: f64, r: DMatrix<f64>, delta: f64, samples: usize) -> Result<Self> {
        if samples < MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
        }
        linalg::validate_psd(&q, "Q")?;
        linalg::validate_psd(&r, "R")?;
        if !(gamma > 0.0 && delta > 0.0) {
            return Err(Error::InvalidParameter("noise degrees of freedom must be positive".into()));
        }
        Ok(Self { f, h, q, gamma, r, delta, samples })
    }

    /// Linear model `f = F x + v`, `h = H x + e` expressed through closures.
    pub fn linear(f: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, gamma: f64, r: DMatrix<f64>, delta: f64, samples: usize) -> Result<Self> {
        Self::new(
            Arc::new(move |x, v| &f * x + v),
            Arc::new(move |x, e| &h * x + e),
            q,
            gamma,
            r,
            delta,
            samples,
        )
    }
}

/// Equal-length finite sample vectors stored as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(samples: &[DVector<f64>]) -> Result<Self> {
        let d = samples.first().map(|s| s.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidParameter("empty sample set".into()));
        }
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension("samples have different lengths".into()));
        }
        Self::from_matrix(DMatrix::from_fn(d, samples.len(), |i, j| samples[j][i]))
    }

    /// One sample per column.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("samples contain non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub iterations: usize,
    /// Log-likelihood before the first iteration and after each one.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Set when a singular iterate had to be regularized.
    pub regularized: bool,
}

fn regularize(sigma: &mut DMatrix<f64>) -> bool {
    if sigma.clone().cholesky().is_some() {
        return false;
    }
    let d = sigma.nrows();
    let eps = 1e-9 * sigma.trace().max(1.0);
    *sigma += DMatrix::identity(d, d) * eps;
    true
}

/// Squared Mahalanobis distances of all columns and `ln det Σ`.
fn mahalanobis(data: &DMatrix<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let chol = linalg::cholesky(sigma, "EM scale iterate")?;
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= mu;
    }
    let l = chol.l();
    let solved = l
        .solve_lower_triangular(&centered)
        .ok_or(Error::Singular("EM scale iterate"))?;
    let q = solved.column_iter().map(|c| c.norm_squared()).collect();
    Ok((q, linalg::chol_log_det(&chol)))
}

/// Neumaier-compensated sum.
fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn log_likelihood(q: &[f64], log_det: f64, d: usize, nu: f64) -> f64 {
    let c = StudentT::log_normalizer(d, nu) - 0.5 * log_det;
    let kernel = compensated_sum(q.iter().map(|qi| (qi / nu).ln_1p()));
    q.len() as f64 * c - 0.5 * (nu + d as f64) * kernel
}

/// Maximum-likelihood location and scale of a t density with fixed `nu`.
///
/// Iterates until the parameters move less than `tol` or the log-likelihood
/// gain falls below [`EM_LL_RTOL`] of its magnitude.
pub fn em_fit_t(samples: &SampleSet, nu: f64, max_iters: usize, tol: f64) -> Result<EmFit> {
    let (d, n) = (samples.dim(), samples.len());
    if n <= d {
        return Err(Error::InvalidParameter(format!("EM needs more than {d} samples, got {n}")));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
    }
    let x = samples.matrix();
    let mut mu = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mu;
    }
    let mut sigma = linalg::symmetrize(&(&centered * centered.transpose() / n as f64));
    let mut regularized = regularize(&mut sigma);
    let (mut q, mut log_det) = mahalanobis(x, &mu, &sigma)?;
    let mut history = vec![log_likelihood(&q, log_det, d, nu)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let w: Vec<f64> = q.iter().map(|qi| (nu + d as f64) / (nu + qi)).collect();
        let w_sum: f64 = w.iter().sum();
        let new_mu = x * DVector::from_column_slice(&w) / w_sum;
        let mut weighted = x.clone();
        for (j, mut col) in weighted.column_iter_mut().enumerate() {
            col -= &new_mu;
            col *= w[j].sqrt();
        }
        let mut new_sigma = linalg::symmetrize(&(&weighted * weighted.transpose() / n as f64));
        regularized |= regularize(&mut new_sigma);
        let change = (&new_mu - &mu).amax().max((&new_sigma - &sigma).amax());
        mu = new_mu;
        sigma = new_sigma;
        (q, log_det) = mahalanobis(x, &mu, &sigma)?;
        let ll = log_likelihood(&q, log_det, d, nu);
        let gain = ll - history[history.len() - 1];
        history.push(ll);
        if change < tol || gain.abs() <= EM_LL_RTOL * ll.abs() {
            converged = true;
            break;
        }
    }
    Ok(EmFit { mu, sigma, iterations, log_likelihood: history, converged, regularized })
}

fn draws(d: &StudentT, seed: u64, count: usize) -> Vec<DVector<f64>> {
    d.sample_with(&mut rng_from_seed(seed), count)
}

/// Prediction `St(x̂, P, η')` refitted from propagated samples.
pub fn mc_time_update(b: &TBelief, model: &NonlinearModel, eta_prime: f64, seed: u64) -> Result<TBelief> {
    let n = model.samples;
    let xs = draws(&StudentT::new(b.xhat.clone(), b.p.clone(), b.eta)?, derive_seed(seed, 0), n);
    let vs = draws(&StudentT::new(DVector::zeros(model.q.nrows()), model.q.clone(), model.gamma)?, derive_seed(seed, 1), n);
    let propagated: Vec<DVector<f64>> = xs.iter().zip(&vs).map(|(x, v)| (model.f)(x, v)).collect();
    let fit = em_fit_t(&SampleSet::new(&propagated)?, eta_prime, EM_MAX_ITERS, EM_TOL)?;
    Ok(TBelief::new(fit.mu, fit.sigma, eta_prime))
}

/// Fitted joint of state and measurement and the resulting update.
#[derive(Debug, Clone, PartialEq)]
pub struct McMeasurementUpdate {
    pub belief: TBelief,
    pub joint: EmFit,
    pub yhat: DVector<f64>,
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub scale_factor: f64,
}

/// Measurement update from a fitted joint t density of `(x, y)` with dof `η''`.
///
/// `scale_factor` is `(η'' + (y-ŷ)ᵀS⁻¹(y-ŷ))/(η'' + m)` on the fitted blocks.
pub fn mc_measurement_update(
    pred: &TBelief,
    y: &DVector<f64>,
    model: &NonlinearModel,
    eta_dprime: f64,
    seed: u64,
) -> Result<McMeasurementUpdate> {
    let count = model.samples;
    let n = pred.xhat.len();
    let xs = draws(&StudentT::new(pred.xhat.clone(), pred.p.clone(), pred.eta)?, derive_seed(seed, 0), count);
    let es = draws(&StudentT::new(DVector::zeros(model.r.nrows()), model.r.clone(), model.delta)?, derive_seed(seed, 1), count);
    let stacked: Vec<DVector<f64>> = xs
        .iter()
        .zip(&es)
        .map(|(x, e)| {
            let yi = (model.h)(x, e);
            let mut z = DVector::zeros(n + yi.len());
            z.rows_mut(0, n).copy_from(x);
            z.rows_mut(n, yi.len()).copy_from(&yi);
            z
        })
        .collect();
    let m = stacked[0].len() - n;
    linalg::check_len(y, m, "measurement")?;
    let joint = em_fit_t(&SampleSet::new(&stacked)?, eta_dprime, EM_MAX_ITERS, EM_TOL)?;
    let dist = StudentT::new(joint.mu.clone(), joint.sigma.clone(), eta_dprime)?;
    let partition = BlockPartition::new(n, m);
    let blocks = partition.blocks(&dist).map_err(|e| match e {
        Error::Singular(_) => Error::Singular("fitted innovation scale S"),
        other => other,
    })?;
    let cond = dist.conditional(&partition, y)?;
    let scale_factor = cond.scale_factor;
    Ok(McMeasurementUpdate {
        belief: TBelief::new(cond.dist.mean().clone(), cond.dist.scale().clone(), eta_dprime + m as f64),
        yhat: blocks.mu2,
        s: blocks.sigma2,
        gain: blocks.gain,
        scale_factor,
        joint,
    })
}

/// Runs the Monte Carlo t filter over `ys` (`ys[i]` at `k = i + 1`); filtered beliefs for `k = 0..=L`.
///
/// Step `k` uses seeds derived from `seed` and `k`, with `η' = min(η, γ)` and `η'' = min(η', δ)`.
pub fn mc_run(prior: &TBelief, ys: &[DVector<f64>], model: &NonlinearModel, seed: u64) -> Result<Vec<TBelief>> {
    let mut out = vec![prior.clone()];
    for (i, y) in ys.iter().enumerate() {
        let b = out.last().expect("prior present");
        let step = derive_seed(seed, i as u64 + 1);
        let pred = mc_time_update(b, model, b.eta.min(model.gamma), derive_seed(step, 0))?;
        let eta_dprime = pred.eta.min(model.delta);
        let upd = mc_measurement_update(&pred, y, model, eta_dprime, derive_seed(step, 1))?;
        out.push(upd.belief);
    }
    Ok(out)
}
