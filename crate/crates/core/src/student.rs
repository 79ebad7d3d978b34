//! Student's t filter and smoother.
//!
//! Every step replaces the joint density of state and noise by a joint t
//! density with a single degree of freedom, which keeps the heaviest tails of
//! the parts. How the scale matrices are adjusted to compensate for the
//! reduced degrees of freedom is chosen by an [`ApproximationStrategy`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::calibration::{moment_matching_factor, ScaleFactorTable};
use crate::error::Result;
use crate::gaussian::{self, GaussianBelief};
use crate::linalg;
use crate::model::LinearModel;

/// Filter state `St(x̂, P, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TBelief {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub eta: f64,
}

impl TBelief {
    pub fn new(xhat: DVector<f64>, p: DMatrix<f64>, eta: f64) -> Self {
        Self { xhat, p, eta }
    }

    pub fn from_prior(model: &LinearModel) -> Self {
        Self::new(model.prior.mean().clone(), model.prior.scale().clone(), model.prior.dof())
    }

    /// `η/(η-2)·P`, or `None` when `η ≤ 2`.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.eta > 2.0).then(|| &self.p * (self.eta / (self.eta - 2.0)))
    }
}

/// Scale adjustment applied when a block's degrees of freedom are reduced.
#[derive(Debug, Clone, Default)]
pub enum ApproximationStrategy {
    /// Keep scale matrices; the implied covariance can only grow.
    #[default]
    Conservative,
    /// KLD-optimal marginal factors read from a precomputed table.
    KldScaled(Arc<ScaleFactorTable>),
    /// Preserve the covariance of each block.
    MomentMatched,
}

impl ApproximationStrategy {
    /// Factor for a `dim`-dimensional block going from `from` to `to` degrees of freedom.
    pub fn factor(&self, dim: usize, from: f64, to: f64) -> Result<f64> {
        if to >= from {
            return Ok(1.0);
        }
        match self {
            Self::Conservative => Ok(1.0),
            Self::KldScaled(table) => table.lookup(dim, from, to),
            Self::MomentMatched => moment_matching_factor(from, to),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Conservative => "conservative",
            Self::KldScaled(_) => "kld",
            Self::MomentMatched => "moment",
        }
    }
}

/// Quantities produced by a t measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct TDiagnostics {
    pub yhat: DVector<f64>,
    pub innovation: DVector<f64>,
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// Predicted scale matrix after the strategy's adjustment.
    pub p_scaled: DMatrix<f64>,
    /// Degrees of freedom of the prediction.
    pub eta_prime: f64,
    /// Joint degrees of freedom used for the update, `min(η', δ)`.
    pub eta_dprime: f64,
    pub nis: f64,
    /// Factor multiplying `P''`.
    pub scale_factor: f64,
}

impl TDiagnostics {
    pub fn d_factor(&self) -> f64 {
        self.scale_factor
    }
}

/// `d = (ε + η)/(m + η)` for a normalized innovation squared `ε`.
pub fn innovation_factor(nis: f64, m: usize, eta: f64) -> f64 {
    (nis + eta) / (m as f64 + eta)
}

/// Output of a time update together with the scaled filter matrix it used.
#[derive(Debug, Clone, PartialEq)]
pub struct TPrediction {
    pub belief: TBelief,
    /// `P'_k|k`, needed by the smoother.
    pub p_prime: DMatrix<f64>,
}

/// `η' = min(η, γ)`, `x̂ ← F x̂`, `P ← F P' Fᵀ + G Q' Gᵀ`.
pub fn tf_time_update(
    b: &TBelief,
    model: &LinearModel,
    strategy: &ApproximationStrategy,
    k: usize,
) -> Result<TPrediction> {
    linalg::check_len(&b.xhat, model.state_dim(), "xhat")?;
    linalg::check_square(&b.p, model.state_dim(), "P")?;
    let eta_prime = b.eta.min(model.gamma);
    let p_prime = &b.p * strategy.factor(model.state_dim(), b.eta, eta_prime)?;
    let q_prime = model.q_at(k) * strategy.factor(model.noise_dim(), model.gamma, eta_prime)?;
    let f = &model.f;
    let p = f * &p_prime * f.transpose() + model.process_matrix(&q_prime);
    Ok(TPrediction {
        belief: TBelief::new(f * &b.xhat, linalg::symmetrize(&p), eta_prime),
        p_prime,
    })
}

/// t measurement update at time `k`.
pub fn tf_measurement_update(
    b: &TBelief,
    y: &DVector<f64>,
    model: &LinearModel,
    strategy: &ApproximationStrategy,
    k: usize,
) -> Result<(TBelief, TDiagnostics)> {
    model.check_measurement(y)?;
    let m = model.measurement_dim();
    let eta_dprime = b.eta.min(model.delta);
    let p_scaled = &b.p * strategy.factor(model.state_dim(), b.eta, eta_dprime)?;
    let r_scaled = model.r_at(k) * strategy.factor(m, model.delta, eta_dprime)?;
    let kf = gaussian::innovation_terms(&b.xhat, &p_scaled, &model.h, &r_scaled, y)?;
    let xhat = &b.xhat + &kf.gain * &kf.innovation;
    let p_dprime = &p_scaled - &kf.gain * &kf.s * kf.gain.transpose();
    let scale_factor = innovation_factor(kf.nis, m, eta_dprime);
    let p = linalg::project_psd(&(p_dprime * scale_factor));
    let diagnostics = TDiagnostics {
        yhat: kf.yhat,
        innovation: kf.innovation,
        s: kf.s,
        gain: kf.gain,
        p_scaled,
        eta_prime: b.eta,
        eta_dprime,
        nis: kf.nis,
        scale_factor,
    };
    Ok((TBelief::new(xhat, p, eta_dprime + m as f64), diagnostics))
}

/// One processed measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TFilterRecord {
    /// `P'_{k-1|k-1}` used by the time update into this step.
    pub p_prime_prev: DMatrix<f64>,
    pub predicted: TBelief,
    pub filtered: TBelief,
    pub diagnostics: TDiagnostics,
}

/// Forward pass: prior at `k = 0`, `records[i]` holds time `k = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TFilterRun {
    pub prior: TBelief,
    pub records: Vec<TFilterRecord>,
}

impl TFilterRun {
    /// Filtered beliefs for `k = 0..=L`.
    pub fn filtered(&self) -> Vec<TBelief> {
        std::iter::once(self.prior.clone())
            .chain(self.records.iter().map(|r| r.filtered.clone()))
            .collect()
    }
}

/// Runs the t filter over `ys`, where `ys[i]` is the measurement at `k = i + 1`.
pub fn tf_run(model: &LinearModel, ys: &[DVector<f64>], strategy: &ApproximationStrategy) -> Result<TFilterRun> {
    tf_run_from(TBelief::from_prior(model), model, ys, strategy)
}

pub fn tf_run_from(
    prior: TBelief,
    model: &LinearModel,
    ys: &[DVector<f64>],
    strategy: &ApproximationStrategy,
) -> Result<TFilterRun> {
    let mut records = Vec::with_capacity(ys.len());
    let mut current = prior.clone();
    for (i, y) in ys.iter().enumerate() {
        let k = i + 1;
        let pred = tf_time_update(&current, model, strategy, k - 1)?;
        let (filtered, diagnostics) = tf_measurement_update(&pred.belief, y, model, strategy, k)?;
        current = filtered.clone();
        records.push(TFilterRecord {
            p_prime_prev: pred.p_prime,
            predicted: pred.belief,
            filtered,
            diagnostics,
        });
    }
    Ok(TFilterRun { prior, records })
}

/// KF time and measurement update on `(x̂, P)` carrying `η` unchanged.
pub fn simplistic_update(b: &TBelief, y: &DVector<f64>, model: &LinearModel, k: usize) -> Result<TBelief> {
    let g = GaussianBelief::new(b.xhat.clone(), b.p.clone());
    let pred = gaussian::kf_time_update(&g, model, k - 1)?;
    let (post, _) = gaussian::kf_measurement_update(&pred, y, model, k)?;
    Ok(TBelief::new(post.xhat, post.p, b.eta))
}

/// Filtered beliefs for `k = 0..=L` of the simplistic filter.
pub fn simplistic_run(model: &LinearModel, ys: &[DVector<f64>]) -> Result<Vec<TBelief>> {
    let mut out = vec![TBelief::from_prior(model)];
    for (i, y) in ys.iter().enumerate() {
        let next = simplistic_update(&out[i], y, model, i + 1)?;
        out.push(next);
    }
    Ok(out)
}

/// Backward pass with `G_k = P'_k|k Fᵀ P_{k+1|k}⁻¹`.
///
/// The smoothed scale at `k` is built around `P'_k|k` and carries the
/// prediction's degrees of freedom `η'_{k+1}`. Returns `k = 0..=L`.
pub fn ts_smooth(run: &TFilterRun, model: &LinearModel) -> Result<Vec<TBelief>> {
    let filtered = run.filtered();
    let mut smoothed = filtered.clone();
    for k in (0..run.records.len()).rev() {
        let rec = &run.records[k];
        let current = &filtered[k];
        let p_prime = &rec.p_prime_prev;
        let predicted = &rec.predicted;
        let gain = linalg::right_divide_spd(
            &(p_prime * model.f.transpose()),
            &predicted.p,
            "predicted scale matrix P_{k+1|k}",
        )?;
        let next = &smoothed[k + 1];
        let xhat = &current.xhat + &gain * (&next.xhat - &predicted.xhat);
        let p = p_prime + &gain * (&next.p - &predicted.p) * gain.transpose();
        smoothed[k] = TBelief::new(xhat, linalg::project_psd(&p), predicted.eta);
    }
    Ok(smoothed)
}
