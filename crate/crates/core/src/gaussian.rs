//! Kalman filter and Rauch–Tung–Striebel smoother.
//!
//! The model's noise matrices are read as covariances; a clairvoyant filter
//! is the same recursion run on a model carrying a [`CovarianceSchedule`].
//!
//! [`CovarianceSchedule`]: crate::model::CovarianceSchedule

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg;
use crate::model::LinearModel;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(xhat: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { xhat, p }
    }

    /// Mean and scale matrix of the model prior, read as a Gaussian.
    pub fn from_prior(model: &LinearModel) -> Self {
        Self::new(model.prior.mean().clone(), model.prior.scale().clone())
    }
}

/// Quantities produced by a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct KfDiagnostics {
    pub yhat: DVector<f64>,
    pub innovation: DVector<f64>,
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// Normalized innovation squared `(y-ŷ)ᵀ S⁻¹ (y-ŷ)`.
    pub nis: f64,
}

/// `x̂ ← F x̂`, `P ← F P Fᵀ + G Q_k Gᵀ`.
pub fn kf_time_update(b: &GaussianBelief, model: &LinearModel, k: usize) -> Result<GaussianBelief> {
    linalg::check_len(&b.xhat, model.state_dim(), "xhat")?;
    linalg::check_square(&b.p, model.state_dim(), "P")?;
    let f = &model.f;
    let p = f * &b.p * f.transpose() + model.process_matrix(model.q_at(k));
    Ok(GaussianBelief::new(f * &b.xhat, linalg::symmetrize(&p)))
}

/// Gain, innovation and covariance `S` for a Gaussian-shaped update.
pub(crate) fn innovation_terms(
    xhat: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<KfDiagnostics> {
    let yhat = h * xhat;
    let innovation = y - &yhat;
    let s = linalg::symmetrize(&(h * p * h.transpose() + r));
    let chol = linalg::cholesky(&s, "innovation covariance S")?;
    let gain = chol.solve(&(h * p)).transpose();
    let nis = linalg::chol_quad_form(&chol, &innovation);
    Ok(KfDiagnostics { yhat, innovation, s, gain, nis })
}

/// Standard KF measurement update with `R_k`.
pub fn kf_measurement_update(
    b: &GaussianBelief,
    y: &DVector<f64>,
    model: &LinearModel,
    k: usize,
) -> Result<(GaussianBelief, KfDiagnostics)> {
    model.check_measurement(y)?;
    let d = innovation_terms(&b.xhat, &b.p, &model.h, model.r_at(k), y)?;
    let xhat = &b.xhat + &d.gain * &d.innovation;
    let p = &b.p - &d.gain * &d.s * d.gain.transpose();
    Ok((GaussianBelief::new(xhat, linalg::project_psd(&p)), d))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KfOptions {
    /// Skip measurements whose normalized innovation squared exceeds this threshold.
    pub gate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfStep {
    pub predicted: GaussianBelief,
    pub filtered: GaussianBelief,
    pub diagnostics: KfDiagnostics,
    pub gated: bool,
}

/// Forward pass: prior at `k = 0`, `steps[i]` holds time `k = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct KfHistory {
    pub prior: GaussianBelief,
    pub steps: Vec<KfStep>,
}

impl KfHistory {
    /// Filtered beliefs for `k = 0..=L`.
    pub fn filtered(&self) -> Vec<GaussianBelief> {
        std::iter::once(self.prior.clone())
            .chain(self.steps.iter().map(|s| s.filtered.clone()))
            .collect()
    }
}

/// Runs the KF over `ys`, where `ys[i]` is the measurement at `k = i + 1`.
pub fn kf_run(model: &LinearModel, ys: &[DVector<f64>], options: &KfOptions) -> Result<KfHistory> {
    kf_run_from(GaussianBelief::from_prior(model), model, ys, options)
}

pub fn kf_run_from(
    prior: GaussianBelief,
    model: &LinearModel,
    ys: &[DVector<f64>],
    options: &KfOptions,
) -> Result<KfHistory> {
    let mut steps = Vec::with_capacity(ys.len());
    let mut current = prior.clone();
    for (i, y) in ys.iter().enumerate() {
        let k = i + 1;
        let predicted = kf_time_update(&current, model, k - 1)?;
        let (updated, diagnostics) = kf_measurement_update(&predicted, y, model, k)?;
        let gated = options.gate.is_some_and(|g| diagnostics.nis > g);
        let filtered = if gated { predicted.clone() } else { updated };
        current = filtered.clone();
        steps.push(KfStep { predicted, filtered, diagnostics, gated });
    }
    Ok(KfHistory { prior, steps })
}

/// RTS backward pass with `G_k = P_k|k Fᵀ P_{k+1|k}⁻¹`, initialized at `(x̂_L|L, P_L|L)`.
///
/// Returns smoothed beliefs for `k = 0..=L`.
pub fn rts_smooth(history: &KfHistory, model: &LinearModel) -> Result<Vec<GaussianBelief>> {
    let filtered = history.filtered();
    let mut smoothed = filtered.clone();
    for k in (0..history.steps.len()).rev() {
        let predicted = &history.steps[k].predicted;
        let current = &filtered[k];
        let gain = linalg::right_divide_spd(
            &(&current.p * model.f.transpose()),
            &predicted.p,
            "predicted covariance P_{k+1|k}",
        )?;
        let next = &smoothed[k + 1];
        let xhat = &current.xhat + &gain * (&next.xhat - &predicted.xhat);
        let p = &current.p + &gain * (&next.p - &predicted.p) * gain.transpose();
        smoothed[k] = GaussianBelief::new(xhat, linalg::project_psd(&p));
    }
    Ok(smoothed)
}
