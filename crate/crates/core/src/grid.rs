//! Point-mass filter and smoother for scalar models.
//!
//! Densities live on a fixed uniform grid and the Bayesian recursions are
//! evaluated by Riemann sums. This is exact up to discretization and serves as
//! the reference for the approximate filters.

use log::warn;

use crate::distributions::{Density, Gaussian, StudentT};
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// Ratios below this floor are treated as zero in the backward pass.
pub const SMOOTH_FLOOR: f64 = 1e-300;
/// Largest tolerated prediction mass loss through the grid boundary.
pub const MAX_LEAKAGE: f64 = 1e-3;
/// Mass in the two end cells above which the oracle widens its grid.
pub const BOUNDARY_MASS: f64 = 1e-6;

/// Uniform grid `x_i = x_min + i·dx`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, count: usize) -> Result<Self> {
        if count < 3 || !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::DegenerateGrid(format!("[{x_min}, {x_max}] with {count} points")));
        }
        Ok(Self { x_min, x_max, count })
    }

    /// The default oracle grid: 2001 points on `[-40, 40]`.
    pub fn oracle_default() -> Self {
        Self { x_min: -40.0, x_max: 40.0, count: 2001 }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.count - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.x(i)).collect()
    }

    /// Same point count, `factor` times the extent around the same center.
    pub fn widened(&self, factor: f64) -> Self {
        let c = 0.5 * (self.x_min + self.x_max);
        let h = 0.5 * (self.x_max - self.x_min) * factor;
        Self { x_min: c - h, x_max: c + h, count: self.count }
    }
}

/// Density values on a [`GridSpec`], normalized so that `Σ pdf·dx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    spec: GridSpec,
    pdf: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `pdf` on `spec`.
    pub fn new(spec: GridSpec, pdf: Vec<f64>) -> Result<Self> {
        if pdf.len() != spec.count {
            return Err(Error::DegenerateGrid(format!("{} values for {} points", pdf.len(), spec.count)));
        }
        if pdf.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::DegenerateGrid("density values must be finite and nonnegative".into()));
        }
        let mut d = Self { spec, pdf };
        let mass = d.mass();
        if !(mass > 0.0) {
            return Err(Error::DegenerateGrid("density has no mass on the grid".into()));
        }
        d.pdf.iter_mut().for_each(|v| *v /= mass);
        Ok(d)
    }

    pub fn from_fn<F: Fn(f64) -> f64>(spec: GridSpec, f: F) -> Result<Self> {
        Self::new(spec, spec.points().into_iter().map(f).collect())
    }

    /// Discretized density of a scalar `d`.
    pub fn from_density<D: Density + ?Sized>(spec: GridSpec, d: &D) -> Result<Self> {
        let mut x = nalgebra::DVector::zeros(1);
        let mut values = Vec::with_capacity(spec.count);
        for p in spec.points() {
            x[0] = p;
            values.push(d.logpdf(&x)?.exp());
        }
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn mass(&self) -> f64 {
        self.pdf.iter().sum::<f64>() * self.spec.dx()
    }

    /// Probability mass in the first and last cell.
    pub fn boundary_mass(&self) -> f64 {
        (self.pdf[0] + self.pdf[self.spec.count - 1]) * self.spec.dx()
    }

    /// Smallest grid point with cumulative mass at least `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let dx = self.spec.dx();
        let mut acc = 0.0;
        for (i, v) in self.pdf.iter().enumerate() {
            acc += v * dx;
            if acc >= q {
                return self.spec.x(i);
            }
        }
        self.spec.x_max
    }

    /// Locations of local maxima whose height is at least `rel_height` times the global maximum.
    pub fn modes(&self, rel_height: f64) -> Vec<f64> {
        let top = self.pdf.iter().copied().fold(0.0, f64::max);
        let p = &self.pdf;
        let n = p.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            // Treat runs of equal values as a single plateau.
            let mut j = i;
            while j + 1 < n && p[j + 1] == p[i] {
                j += 1;
            }
            let left = i == 0 || p[i - 1] < p[i];
            let right = j == n - 1 || p[j + 1] < p[i];
            if left && right && p[i] >= rel_height * top && p[i] > 0.0 {
                out.push(0.5 * (self.spec.x(i) + self.spec.x(j)));
            }
            i = j + 1;
        }
        out
    }
}

/// Riemann-sum mean and variance.
pub fn grid_moments(d: &GridDensity) -> (f64, f64) {
    let dx = d.spec.dx();
    let xs = d.spec.points();
    let mean: f64 = xs.iter().zip(&d.pdf).map(|(x, p)| x * p).sum::<f64>() * dx;
    let var: f64 = xs.iter().zip(&d.pdf).map(|(x, p)| (x - mean).powi(2) * p).sum::<f64>() * dx;
    (mean, var)
}

/// Transition density `p(x'|x)` tabulated on a grid; `values[j·count + i] = p(x_j | x_i)`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    spec: GridSpec,
    values: Vec<f64>,
    /// `Σ_j p(x_j | x_i)·dx`, the mass each source cell keeps on the grid.
    retained: Vec<f64>,
}

impl TransitionKernel {
    pub fn new<F: FnMut(f64, f64) -> f64>(spec: GridSpec, mut transition: F) -> Self {
        let n = spec.count;
        let xs = spec.points();
        let mut values = vec![0.0; n * n];
        for (j, &xn) in xs.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                values[j * n + i] = transition(xn, x);
            }
        }
        let dx = spec.dx();
        let retained = (0..n).map(|i| (0..n).map(|j| values[j * n + i]).sum::<f64>() * dx).collect();
        Self { spec, values, retained }
    }

    /// Kernel of `x' = a·x + w` with `w` distributed as the scalar density `noise`.
    pub fn additive<D: Density + ?Sized>(spec: GridSpec, a: f64, noise: &D) -> Result<Self> {
        // Tabulate the noise density on all grid differences once.
        let n = spec.count as i64;
        let dx = spec.dx();
        let mut z = nalgebra::DVector::zeros(1);
        if a == 1.0 {
            let mut table = Vec::with_capacity((2 * n - 1) as usize);
            for d in -(n - 1)..n {
                z[0] = d as f64 * dx;
                table.push(noise.logpdf(&z)?.exp());
            }
            return Ok(Self::new(spec, |xn, x| table[(((xn - x) / dx).round() as i64 + n - 1) as usize]));
        }
        let mut err = None;
        let k = Self::new(spec, |xn, x| {
            z[0] = xn - a * x;
            noise.logpdf(&z).map(f64::exp).unwrap_or_else(|e| {
                err.get_or_insert(e);
                0.0
            })
        });
        match err {
            Some(e) => Err(e),
            None => Ok(k),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn at(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.spec.count + i]
    }
}

/// Chapman–Kolmogorov prediction.
pub fn grid_predict(d: &GridDensity, kernel: &TransitionKernel) -> Result<GridDensity> {
    if d.spec != kernel.spec {
        return Err(Error::DegenerateGrid("density and kernel use different grids".into()));
    }
    let n = d.spec.count;
    let dx = d.spec.dx();
    let kept: f64 = d.pdf.iter().zip(&kernel.retained).map(|(p, r)| p * r).sum::<f64>() * dx;
    let leakage = 1.0 - kept;
    if leakage > MAX_LEAKAGE {
        return Err(Error::GridTooSmall(leakage));
    }
    let pdf = (0..n)
        .map(|j| {
            let row = &kernel.values[j * n..(j + 1) * n];
            row.iter().zip(&d.pdf).map(|(k, p)| k * p).sum::<f64>() * dx
        })
        .collect();
    GridDensity::new(d.spec, pdf)
}

/// Bayes update with `likelihood(x) = p(y|x)`; returns the posterior and the evidence `p(y)`.
pub fn grid_update<F: FnMut(f64) -> f64>(d: &GridDensity, mut likelihood: F) -> Result<(GridDensity, f64)> {
    let dx = d.spec.dx();
    let pdf: Vec<f64> = d.spec.points().into_iter().zip(&d.pdf).map(|(x, p)| p * likelihood(x)).collect();
    let evidence = pdf.iter().sum::<f64>() * dx;
    if !(evidence > 0.0) {
        return Err(Error::ZeroEvidence);
    }
    Ok((GridDensity::new(d.spec, pdf)?, evidence))
}

/// Backward recursion over filtering densities `k = 0..=L` and predictions `k = 1..=L`.
///
/// `predicted[i]` is `p(x_{i+1} | y_{1:i})`. Returns smoothing densities for `k = 0..=L`.
pub fn grid_smooth(
    filtered: &[GridDensity],
    predicted: &[GridDensity],
    kernel: &TransitionKernel,
) -> Result<Vec<GridDensity>> {
    if filtered.len() != predicted.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} filtering densities need {} predictions, got {}",
            filtered.len(),
            filtered.len().saturating_sub(1),
            predicted.len()
        )));
    }
    let spec = kernel.spec;
    let n = spec.count;
    let dx = spec.dx();
    let mut smoothed = filtered.to_vec();
    for k in (0..predicted.len()).rev() {
        let next = &smoothed[k + 1];
        let pred = &predicted[k];
        let mut floored = 0usize;
        let ratio: Vec<f64> = next
            .pdf
            .iter()
            .zip(&pred.pdf)
            .map(|(&s, &p)| {
                if p < SMOOTH_FLOOR {
                    if s > 0.0 {
                        floored += 1;
                    }
                    s / SMOOTH_FLOOR
                } else {
                    s / p
                }
            })
            .collect();
        if floored * 100 > n {
            warn!("smoother ill-conditioned: ratio floor hit on {floored} of {n} cells at k = {k}");
        }
        let pdf = (0..n)
            .map(|i| {
                let back: f64 = (0..n).map(|j| kernel.at(j, i) * ratio[j]).sum::<f64>() * dx;
                filtered[k].pdf[i] * back
            })
            .collect();
        smoothed[k] = GridDensity::new(spec, pdf)?;
    }
    Ok(smoothed)
}

/// Noise laws used by the oracle for a scalar [`LinearModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleNoise {
    /// Student's t with the model's degrees of freedom.
    #[default]
    StudentT,
    /// Gaussian with the model's matrices read as covariances.
    Gaussian,
}

/// Prediction, filtering and smoothing densities of one oracle run.
#[derive(Debug, Clone)]
pub struct OracleRun {
    pub spec: GridSpec,
    /// `p(x_k | y_{1:k-1})` for `k = 1..=L`.
    pub predicted: Vec<GridDensity>,
    /// `p(x_k | y_{1:k})` for `k = 0..=L`.
    pub filtered: Vec<GridDensity>,
    /// `p(x_k | y_{1:L})` for `k = 0..=L`.
    pub smoothed: Vec<GridDensity>,
    /// `ln p(y_{1:L})`.
    pub log_evidence: f64,
}

fn scalar_law(noise: OracleNoise, mean: f64, scale: f64, dof: f64) -> Result<Box<dyn Density>> {
    Ok(match noise {
        OracleNoise::StudentT => Box::new(StudentT::scalar(mean, scale, dof)?),
        OracleNoise::Gaussian => Box::new(Gaussian::scalar(mean, scale)?),
    })
}

fn run_on(model: &LinearModel, ys: &[f64], spec: GridSpec, noise: OracleNoise) -> Result<OracleRun> {
    let a = model.f[(0, 0)];
    let h = model.h[(0, 0)];
    let g = model.g[(0, 0)];
    if !model.schedule.is_empty() {
        return Err(Error::InvalidParameter("the grid oracle does not support covariance schedules".into()));
    }
    let prior = scalar_law(noise, model.prior.mean()[0], model.prior.scale()[(0, 0)], model.prior.dof())?;
    let process = scalar_law(noise, 0.0, g * g * model.q[(0, 0)], model.gamma)?;
    let meas = scalar_law(noise, 0.0, model.r[(0, 0)], model.delta)?;
    let kernel = TransitionKernel::additive(spec, a, process.as_ref())?;
    let mut filtered = vec![GridDensity::from_density(spec, prior.as_ref())?];
    let mut predicted = Vec::with_capacity(ys.len());
    let mut log_evidence = 0.0;
    let mut z = nalgebra::DVector::zeros(1);
    for &y in ys {
        let pred = grid_predict(filtered.last().expect("prior present"), &kernel)?;
        let (post, evidence) = grid_update(&pred, |x| {
            z[0] = y - h * x;
            meas.logpdf(&z).map(f64::exp).unwrap_or(0.0)
        })?;
        log_evidence += evidence.ln();
        predicted.push(pred);
        filtered.push(post);
    }
    let smoothed = grid_smooth(&filtered, &predicted, &kernel)?;
    Ok(OracleRun { spec, predicted, filtered, smoothed, log_evidence })
}

/// Runs the point-mass filter and smoother on a scalar model.
///
/// The grid is doubled in extent, up to `max_widenings` times, whenever
/// probability mass reaches its boundary cells or leaks out of it.
pub fn run_oracle(
    model: &LinearModel,
    ys: &[f64],
    spec: GridSpec,
    noise: OracleNoise,
    max_widenings: usize,
) -> Result<OracleRun> {
    if model.state_dim() != 1 || model.measurement_dim() != 1 || model.noise_dim() != 1 {
        return Err(Error::Dimension("the grid oracle handles scalar models only".into()));
    }
    let mut spec = spec;
    for attempt in 0..=max_widenings {
        let last = attempt == max_widenings;
        match run_on(model, ys, spec, noise) {
            Ok(run) => {
                let worst = run
                    .predicted
                    .iter()
                    .chain(&run.filtered)
                    .map(GridDensity::boundary_mass)
                    .fold(0.0, f64::max);
                if worst <= BOUNDARY_MASS || last {
                    if worst > BOUNDARY_MASS {
                        warn!("boundary mass {worst:.2e} remains after {attempt} widenings");
                    }
                    return Ok(run);
                }
            }
            Err(Error::GridTooSmall(_)) if !last => {}
            Err(e) => return Err(e),
        }
        spec = spec.widened(2.0);
        log::info!("widening oracle grid to [{}, {}]", spec.x_min, spec.x_max);
    }
    unreachable!("the final attempt always returns")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new(-20.0, 20.0, 801).unwrap()
    }

    #[test]
    fn normalization_after_construction() {
        let d = GridDensity::from_fn(spec(), |x| (-x * x).exp()).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_input_predicts_kernel_shape() {
        let s = spec();
        let mut pdf = vec![0.0; s.count];
        pdf[500] = 1.0;
        let d = GridDensity::new(s, pdf).unwrap();
        let kernel = TransitionKernel::additive(s, 1.0, &Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let p = grid_predict(&d, &kernel).unwrap();
        let (m, v) = grid_moments(&p);
        assert!((m - s.x(500)).abs() < 1e-10);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_convolution_adds_variances() {
        let s = spec();
        let d = GridDensity::from_density(s, &Gaussian::scalar(1.0, 2.0).unwrap()).unwrap();
        let kernel = TransitionKernel::additive(s, 1.0, &Gaussian::scalar(0.0, 1.5).unwrap()).unwrap();
        let (m, v) = grid_moments(&grid_predict(&d, &kernel).unwrap());
        assert!((m - 1.0).abs() < 1e-6);
        assert!((v - 3.5).abs() < 1e-4);
    }

    #[test]
    fn t_prediction_is_normalized() {
        let s = GridSpec::new(-40.0, 40.0, 801).unwrap();
        let d = GridDensity::from_density(s, &StudentT::scalar(0.0, 1.0, 3.0).unwrap()).unwrap();
        let kernel = TransitionKernel::additive(s, 1.0, &StudentT::scalar(0.0, 1.0, 3.0).unwrap()).unwrap();
        let p = grid_predict(&d, &kernel).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn leakage_is_reported() {
        let s = GridSpec::new(-3.0, 3.0, 61).unwrap();
        let d = GridDensity::from_density(s, &Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let kernel = TransitionKernel::additive(s, 1.0, &Gaussian::scalar(0.0, 4.0).unwrap()).unwrap();
        assert!(matches!(grid_predict(&d, &kernel), Err(Error::GridTooSmall(_))));
    }

    #[test]
    fn flat_likelihood_keeps_density() {
        let d = GridDensity::from_density(spec(), &Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let (post, evidence) = grid_update(&d, |_| 0.25).unwrap();
        assert!((evidence - 0.25).abs() < 1e-12);
        for (a, b) in post.pdf().iter().zip(d.pdf()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(grid_update(&d, |_| 0.0), Err(Error::ZeroEvidence)));
    }

    #[test]
    fn moments_of_known_densities() {
        let s = GridSpec::new(-10.0, 10.0, 2001).unwrap();
        let g = GridDensity::from_density(s, &Gaussian::scalar(0.0, 1.7).unwrap()).unwrap();
        let (m, v) = grid_moments(&g);
        assert!(m.abs() < s.dx());
        assert!((v - 1.7).abs() < 1e-4);
        let wide = GridSpec::new(-2000.0, 2000.0, 400_001).unwrap();
        let t = GridDensity::from_density(wide, &StudentT::scalar(0.0, 1.0, 3.0).unwrap()).unwrap();
        assert!((grid_moments(&t).1 - 3.0).abs() < 0.06);
    }

    #[test]
    fn mode_detection() {
        let d = GridDensity::from_fn(spec(), |x| (-(x - 3.0).powi(2)).exp() + 0.5 * (-(x + 3.0).powi(2)).exp()).unwrap();
        let modes = d.modes(0.01);
        assert_eq!(modes.len(), 2);
        assert!((modes[0] + 3.0).abs() < 0.1 && (modes[1] - 3.0).abs() < 0.1);
        assert_eq!(d.modes(0.9).len(), 1);
    }

    #[test]
    fn smoothed_equals_filtered_at_the_end() {
        let prior = StudentT::scalar(0.0, 1.0, 3.0).unwrap();
        let m = LinearModel::scalar_random_walk(1.0, 1.0, 3.0, 3.0, prior).unwrap();
        let run = run_oracle(&m, &[0.5, 1.0, -0.3], GridSpec::new(-30.0, 30.0, 601).unwrap(), OracleNoise::StudentT, 0)
            .unwrap();
        assert_eq!(run.smoothed.last(), run.filtered.last());
        assert_eq!(run.smoothed.len(), 4);
        assert_eq!(run.predicted.len(), 3);
    }

    #[test]
    fn widening_triggers_on_boundary_mass() {
        let prior = StudentT::scalar(0.0, 1.0, 3.0).unwrap();
        let m = LinearModel::scalar_random_walk(1.0, 1.0, 3.0, 3.0, prior).unwrap();
        let run = run_oracle(&m, &[0.5], GridSpec::new(-4.0, 4.0, 201).unwrap(), OracleNoise::StudentT, 6).unwrap();
        assert!(run.spec.x_max > 4.0);
        assert!(run.filtered.iter().all(|d| d.boundary_mass() <= BOUNDARY_MASS));
    }
}
