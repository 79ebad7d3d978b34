//! Kullback–Leibler calibration of t approximations.
//!
//! A `St(0, Σ, ν)` density is approximated by `St(0, c·Σ, ν')` with fewer
//! degrees of freedom. The optimal `c` does not depend on `Σ`, so it is
//! computed once per `(n, ν, ν')` by Monte Carlo and stored in a
//! [`ScaleFactorTable`].

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{Density, StudentT};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Degrees of freedom standing in for a Gaussian source.
pub const GAUSSIAN_DOF: f64 = 1e6;

/// Density values on a regular grid, stored in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDensity {
    pub shape: Vec<usize>,
    pub cell_volume: f64,
    pub values: Vec<f64>,
}

impl SampledDensity {
    pub fn new(shape: Vec<usize>, cell_volume: f64, values: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::DegenerateGrid(format!(
                "shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        if !(cell_volume > 0.0) {
            return Err(Error::DegenerateGrid(format!("cell volume {cell_volume}")));
        }
        Ok(Self { shape, cell_volume, values })
    }

    /// Evaluates `f` on the tensor grid spanned by `axes`.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(axes: &[Vec<f64>], f: F) -> Result<Self> {
        if axes.iter().any(|a| a.len() < 2) {
            return Err(Error::DegenerateGrid("every axis needs at least two points".into()));
        }
        let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
        let cell_volume = axes.iter().map(|a| a[1] - a[0]).product();
        let total: usize = shape.iter().product();
        let mut point = vec![0.0; axes.len()];
        let values = (0..total)
            .map(|mut idx| {
                for d in (0..axes.len()).rev() {
                    point[d] = axes[d][idx % shape[d]];
                    idx /= shape[d];
                }
                f(&point)
            })
            .collect();
        Self::new(shape, cell_volume, values)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume
    }

    pub fn normalized(mut self) -> Result<Self> {
        let mass = self.mass();
        if !(mass > 0.0) {
            return Err(Error::DegenerateGrid("density has no mass on the grid".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= mass);
        Ok(self)
    }
}

/// Riemann sum of `p·ln(p/q)` with `0·ln 0 = 0` and `q` floored at `1e-300`.
pub fn kld_numeric(p: &SampledDensity, q: &SampledDensity) -> Result<f64> {
    if p.shape != q.shape || (p.cell_volume - q.cell_volume).abs() > 1e-12 * p.cell_volume {
        return Err(Error::DegenerateGrid("densities are sampled on different grids".into()));
    }
    let sum: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv.ln() - qv.max(1e-300).ln()))
        .sum();
    Ok(sum * p.cell_volume)
}

/// Monte Carlo KLD between `St(0, I, ν)` and `St(0, c·I, ν')` as a function of `c`.
///
/// Both densities depend on `ξ` only through `r² = ξᵀξ`, so the draws are
/// stored as `r²` and reused for every `c` and `ν'`.
#[derive(Debug, Clone)]
pub struct ScaleObjective {
    n: usize,
    nu: f64,
    r2: Vec<f64>,
    mean_lp: f64,
}

impl ScaleObjective {
    pub fn new(n: usize, nu: f64, samples: usize, seed: u64) -> Result<Self> {
        if n == 0 || !(nu > 0.0) || samples == 0 {
            return Err(Error::InvalidParameter(format!(
                "scale objective needs n > 0, nu > 0 and samples > 0 (n = {n}, nu = {nu})"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let chi = ChiSquared::new(n as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let gamma = Gamma::new(0.5 * nu, 2.0 / nu).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let r2: Vec<f64> = (0..samples)
            .map(|_| {
                let lambda: f64 = gamma.sample(&mut rng);
                chi.sample(&mut rng) / lambda
            })
            .collect();
        let mean_lp = mean(r2.iter().map(|&r| log_radial_t(r, n, nu, 1.0)));
        Ok(Self { n, nu, r2, mean_lp })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn source_dof(&self) -> f64 {
        self.nu
    }

    pub fn eval(&self, nu_prime: f64, c: f64) -> f64 {
        self.mean_lp - mean(self.r2.iter().map(|&r| log_radial_t(r, self.n, nu_prime, c)))
    }

    /// Standard error of the Monte Carlo estimate at `(ν', c)`.
    pub fn std_error(&self, nu_prime: f64, c: f64) -> f64 {
        let terms: Vec<f64> = self
            .r2
            .iter()
            .map(|&r| log_radial_t(r, self.n, self.nu, 1.0) - log_radial_t(r, self.n, nu_prime, c))
            .collect();
        let m = mean(terms.iter().copied());
        let var = terms.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (terms.len() as f64 - 1.0).max(1.0);
        (var / terms.len() as f64).sqrt()
    }
}

/// `ln St(ξ; 0, c·I, ν)` at `ξᵀξ = r2`.
fn log_radial_t(r2: f64, n: usize, nu: f64, c: f64) -> f64 {
    StudentT::log_normalizer(n, nu) - 0.5 * n as f64 * c.ln() - 0.5 * (nu + n as f64) * (r2 / (c * nu)).ln_1p()
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, k) = it.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    s / k as f64
}

/// `KL(St(0, I, ν) ‖ St(0, c·I, ν'))` from `samples` draws.
pub fn kld_scale_objective(n: usize, nu: f64, nu_prime: f64, c: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(c > 0.0) || !(nu_prime > 0.0) {
        return Err(Error::InvalidParameter(format!("c = {c}, nu' = {nu_prime}")));
    }
    Ok(ScaleObjective::new(n, nu, samples, seed)?.eval(nu_prime, c))
}

/// The same divergence evaluated with an arbitrary scale matrix `Σ`.
///
/// Returns the estimate and its standard error.
pub fn kld_scale_objective_full(
    sigma: &DMatrix<f64>,
    nu: f64,
    nu_prime: f64,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = sigma.nrows();
    let p = StudentT::new(DVector::zeros(n), sigma.clone(), nu)?;
    let q = StudentT::new(DVector::zeros(n), sigma * c, nu_prime)?;
    let terms = p
        .sample(seed, samples)
        .iter()
        .map(|x| Ok(p.logpdf(x)? - q.logpdf(x)?))
        .collect::<Result<Vec<f64>>>()?;
    let m = mean(terms.iter().copied());
    let var = terms.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (samples as f64 - 1.0).max(1.0);
    Ok((m, (var / samples as f64).sqrt()))
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

pub const SCALE_BRACKET: (f64, f64) = (0.05, 3.0);
pub const SCALE_TOL: f64 = 1e-3;

/// Minimizer of [`ScaleObjective::eval`] over `c` for fixed `ν'`.
pub fn optimal_scale_for(objective: &ScaleObjective, nu_prime: f64) -> Result<f64> {
    let (lo, hi) = SCALE_BRACKET;
    let c = golden_section(|c| objective.eval(nu_prime, c), lo, hi, SCALE_TOL);
    if c - lo < 2.0 * SCALE_TOL || hi - c < 2.0 * SCALE_TOL {
        return Err(Error::Bracket(format!(
            "optimal c for n = {}, nu = {}, nu' = {nu_prime} lies on the search boundary ({c:.4})",
            objective.dim(),
            objective.source_dof()
        )));
    }
    Ok(c)
}

/// KLD-optimal factor `c(n, ν, ν')` for `ν' ≤ ν`.
pub fn optimal_scale_factor(n: usize, nu: f64, nu_prime: f64, samples: usize, seed: u64) -> Result<f64> {
    if nu_prime > nu {
        return Err(Error::InvalidParameter(format!(
            "target dof {nu_prime} exceeds source dof {nu}; only reductions are calibrated"
        )));
    }
    if nu_prime == nu {
        return Ok(1.0);
    }
    optimal_scale_for(&ScaleObjective::new(n, nu, samples, seed)?, nu_prime)
}

/// `c = (ν'-2)ν / (ν'(ν-2))`, with limit `(ν'-2)/ν'` for an infinite `ν`.
pub fn moment_matching_factor(nu: f64, nu_prime: f64) -> Result<f64> {
    if !(nu > 2.0) || !(nu_prime > 2.0) {
        return Err(Error::MomentsUndefined { nu, nu_prime });
    }
    if nu.is_infinite() {
        return Ok((nu_prime - 2.0) / nu_prime);
    }
    Ok((nu_prime - 2.0) * nu / (nu_prime * (nu - 2.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactorEntry {
    pub n: usize,
    pub nu: f64,
    pub nu_prime: f64,
    pub c: f64,
}

/// Precomputed factors `c(n, ν, ν')`.
///
/// Lookups between tabulated degrees of freedom interpolate bilinearly in
/// `(1/ν, 1/ν')`; corners with `ν' ≥ ν` count as `c = 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScaleFactorTable {
    entries: Vec<ScaleFactorEntry>,
}

fn same_dof(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

impl ScaleFactorTable {
    pub fn new(mut entries: Vec<ScaleFactorEntry>) -> Result<Self> {
        for e in &entries {
            if !(e.c > 0.0) || !(e.nu > 0.0) || !(e.nu_prime > 0.0) || e.n == 0 {
                return Err(Error::InvalidParameter(format!("invalid table entry {e:?}")));
            }
            if same_dof(e.nu, e.nu_prime) && e.c != 1.0 {
                return Err(Error::InvalidParameter(format!("entry {e:?} must have c = 1")));
            }
        }
        entries.sort_by(|a, b| {
            (a.n, b.nu, b.nu_prime)
                .partial_cmp(&(b.n, a.nu, a.nu_prime))
                .expect("finite dofs")
        });
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ScaleFactorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn exact(&self, n: usize, nu: f64, nu_prime: f64) -> Option<f64> {
        if nu_prime >= nu || same_dof(nu, nu_prime) {
            return Some(1.0);
        }
        self.entries
            .iter()
            .find(|e| e.n == n && same_dof(e.nu, nu) && same_dof(e.nu_prime, nu_prime))
            .map(|e| e.c)
    }

    /// Tabulated dofs for dimension `n`, sorted by `1/ν`.
    fn axis(&self, n: usize) -> Vec<f64> {
        let mut inv: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.n == n)
            .flat_map(|e| [1.0 / e.nu, 1.0 / e.nu_prime])
            .collect();
        inv.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        inv.dedup_by(|a, b| same_dof(*a, *b));
        inv
    }

    fn bracket(axis: &[f64], v: f64) -> Option<(f64, f64, f64)> {
        if let Some(&x) = axis.iter().find(|&&x| same_dof(x, v)) {
            return Some((x, x, 0.0));
        }
        let hi = axis.iter().position(|&x| x > v)?;
        if hi == 0 {
            return None;
        }
        let (a, b) = (axis[hi - 1], axis[hi]);
        Some((a, b, (v - a) / (b - a)))
    }

    /// `c(n, ν, ν')`, exact or interpolated.
    pub fn lookup(&self, n: usize, nu: f64, nu_prime: f64) -> Result<f64> {
        if let Some(c) = self.exact(n, nu, nu_prime) {
            return Ok(c);
        }
        let missing = || Error::MissingTableEntry { n, nu, nu_prime };
        let axis = self.axis(n);
        let (u0, u1, tu) = Self::bracket(&axis, 1.0 / nu).ok_or_else(missing)?;
        let (v0, v1, tv) = Self::bracket(&axis, 1.0 / nu_prime).ok_or_else(missing)?;
        let corner = |u: f64, v: f64| self.exact(n, 1.0 / u, 1.0 / v).ok_or_else(missing);
        let c00 = corner(u0, v0)?;
        let c10 = corner(u1, v0)?;
        let c01 = corner(u0, v1)?;
        let c11 = corner(u1, v1)?;
        Ok((1.0 - tu) * (1.0 - tv) * c00 + tu * (1.0 - tv) * c10 + (1.0 - tu) * tv * c01 + tu * tv * c11)
    }

    /// CSV with header `n,nu,nu_prime,c`; floats use their shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "nu", "nu_prime", "c"])?;
        for e in &self.entries {
            out.write_record([e.n.to_string(), e.nu.to_string(), e.nu_prime.to_string(), e.c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV format of [`write_csv`](Self::write_csv); `#` lines are comments.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut text = String::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            if !line.trim_start().starts_with('#') {
                text.push_str(&line);
                text.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["n", "nu", "nu_prime", "c"] {
            return Err(Error::Parse(format!("unexpected scale table header {headers:?}")));
        }
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ScaleFactorEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}

/// Optimal factors over `dims × dofs × targets`, skipping cells with `ν' > ν`.
///
/// Cells are independent and use seeds derived from `seed` and their position
/// in the product, so the result does not depend on evaluation order.
pub fn build_scale_table(
    dims: &[usize],
    dofs: &[f64],
    targets: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ScaleFactorTable> {
    let max_source = dofs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(t) = targets.iter().find(|&&t| t > max_source) {
        return Err(Error::InvalidParameter(format!(
            "target dof {t} exceeds every source dof; only reductions are calibrated"
        )));
    }
    let mut cells = Vec::new();
    for (i, &n) in dims.iter().enumerate() {
        for (j, &nu) in dofs.iter().enumerate() {
            let stream = ((i * dofs.len() + j) * targets.len()) as u64;
            let cell_targets: Vec<(u64, f64)> = targets
                .iter()
                .enumerate()
                .filter(|(_, &t)| t <= nu)
                .map(|(k, &t)| (stream + k as u64, t))
                .collect();
            if !cell_targets.is_empty() {
                cells.push((n, nu, cell_targets));
            }
        }
    }
    let entries: Vec<Vec<ScaleFactorEntry>> = cells
        .par_iter()
        .map(|(n, nu, cell_targets)| {
            cell_targets
                .iter()
                .map(|&(stream, nu_prime)| {
                    let c = optimal_scale_factor(*n, *nu, nu_prime, samples, derive_seed(seed, stream))?;
                    Ok(ScaleFactorEntry { n: *n, nu: *nu, nu_prime, c })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    ScaleFactorTable::new(entries.into_iter().flatten().collect())
}

/// Discretization of the bivariate product experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointGridConfig {
    /// The grid spans `[-half_width, half_width]` on both axes.
    pub half_width: f64,
    /// Points per axis; must be odd so that zero is a grid point.
    pub points: usize,
}

impl Default for JointGridConfig {
    fn default() -> Self {
        Self { half_width: 10.0, points: 2001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub nu_prime: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub kld: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: SurfacePoint,
    /// Best point for every candidate `ν'`, in the order searched.
    pub best_per_dof: Vec<SurfacePoint>,
    /// Every evaluated lattice point.
    pub surface: Vec<SurfacePoint>,
}

impl GridSearchResult {
    pub fn best_for(&self, nu_prime: f64) -> Option<&SurfacePoint> {
        self.best_per_dof.iter().find(|p| p.nu_prime == nu_prime)
    }
}

/// KLD from a product of scalar t densities to an uncorrelated bivariate t.
///
/// Both densities are even in each coordinate, so sums run over one quadrant
/// with symmetry weights.
#[derive(Debug, Clone)]
pub struct ProductKld {
    x2: Vec<f64>,
    /// `p·w·dx²` on the quadrant, row-major.
    weights: Vec<f64>,
    entropy: f64,
}

impl ProductKld {
    pub fn new(sigma1: f64, nu1: f64, sigma2: f64, nu2: f64, grid: JointGridConfig) -> Result<Self> {
        if grid.points < 3 || grid.points.is_multiple_of(2) || !(grid.half_width > 0.0) {
            return Err(Error::DegenerateGrid(format!(
                "need an odd number of at least 3 points and a positive extent, got {grid:?}"
            )));
        }
        if !(sigma1 > 0.0 && sigma2 > 0.0) {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
        let dx = 2.0 * grid.half_width / (grid.points - 1) as f64;
        let half = grid.points / 2;
        let x: Vec<f64> = (0..=half).map(|i| i as f64 * dx).collect();
        let w: Vec<f64> = (0..=half).map(|i| if i == 0 { 1.0 } else { 2.0 }).collect();
        let p1: Vec<f64> = x.iter().map(|&v| scalar_t_pdf(v * v, sigma1, nu1)).collect();
        let p2: Vec<f64> = x.iter().map(|&v| scalar_t_pdf(v * v, sigma2, nu2)).collect();
        let mut weights = Vec::with_capacity(x.len() * x.len());
        for i in 0..x.len() {
            for j in 0..x.len() {
                weights.push(p1[i] * p2[j] * w[i] * w[j] * dx * dx);
            }
        }
        let mass: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= mass);
        let mut entropy = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                let wij = weights[i * x.len() + j];
                if wij > 0.0 {
                    entropy += wij * ((p1[i] * p2[j]) / mass).ln();
                }
            }
        }
        Ok(Self { x2: x.iter().map(|v| v * v).collect(), weights, entropy })
    }

    /// KLD to `St(0, diag(s1, s2), ν')`.
    pub fn eval(&self, nu_prime: f64, s1: f64, s2: f64) -> f64 {
        let k = self.x2.len();
        let norm = StudentT::log_normalizer(2, nu_prime) - 0.5 * (s1 * s2).ln();
        let expo = -0.5 * (nu_prime + 2.0);
        let b: Vec<f64> = self.x2.iter().map(|v| v / (s2 * nu_prime)).collect();
        let mut cross = 0.0;
        for i in 0..k {
            let a = self.x2[i] / (s1 * nu_prime);
            let row = &self.weights[i * k..(i + 1) * k];
            cross += row.iter().zip(&b).map(|(w, bj)| w * (a + bj).ln_1p()).sum::<f64>();
        }
        self.entropy - (norm + expo * cross)
    }
}

fn scalar_t_pdf(x2: f64, sigma: f64, nu: f64) -> f64 {
    (StudentT::log_normalizer(1, nu) - 0.5 * sigma.ln() - 0.5 * (nu + 1.0) * (x2 / (sigma * nu)).ln_1p()).exp()
}

/// Best uncorrelated bivariate t approximation of `St(ξ1; 0, Σ1, ν1)·St(ξ2; 0, Σ2, ν2)`.
///
/// For each `ν'` the scales move on the lattice `step·ℕ` by steepest descent
/// over the eight neighbours, starting from `(Σ1, Σ2)` rounded to the lattice,
/// until no neighbour improves.
pub fn joint_product_grid_search(
    sigma1: f64,
    nu1: f64,
    sigma2: f64,
    nu2: f64,
    nu_prime_set: &[f64],
    sigma_step: f64,
    grid: JointGridConfig,
) -> Result<GridSearchResult> {
    if !(sigma_step > 0.0) || nu_prime_set.is_empty() {
        return Err(Error::DegenerateGrid("need a positive step and at least one nu'".into()));
    }
    let kld = ProductKld::new(sigma1, nu1, sigma2, nu2, grid)?;
    let mut surface = Vec::new();
    let mut best_per_dof = Vec::new();
    for &nu_prime in nu_prime_set {
        let mut seen: HashMap<(i64, i64), f64> = HashMap::new();
        let mut eval = |i: i64, j: i64, surface: &mut Vec<SurfacePoint>| -> f64 {
            *seen.entry((i, j)).or_insert_with(|| {
                let (s1, s2) = (i as f64 * sigma_step, j as f64 * sigma_step);
                let v = kld.eval(nu_prime, s1, s2);
                surface.push(SurfacePoint { nu_prime, sigma1: s1, sigma2: s2, kld: v });
                v
            })
        };
        let mut cur = (
            ((sigma1 / sigma_step).round() as i64).max(1),
            ((sigma2 / sigma_step).round() as i64).max(1),
        );
        let mut cur_val = eval(cur.0, cur.1, &mut surface);
        loop {
            let mut next = None;
            for di in -1..=1 {
                for dj in -1..=1 {
                    let cand = (cur.0 + di, cur.1 + dj);
                    if (di, dj) == (0, 0) || cand.0 < 1 || cand.1 < 1 {
                        continue;
                    }
                    let v = eval(cand.0, cand.1, &mut surface);
                    if v < cur_val && next.is_none_or(|(_, nv)| v < nv) {
                        next = Some((cand, v));
                    }
                }
            }
            match next {
                Some((c, v)) => {
                    cur = c;
                    cur_val = v;
                }
                None => break,
            }
        }
        best_per_dof.push(SurfacePoint {
            nu_prime,
            sigma1: cur.0 as f64 * sigma_step,
            sigma2: cur.1 as f64 * sigma_step,
            kld: cur_val,
        });
    }
    let best = *best_per_dof
        .iter()
        .min_by(|a, b| a.kld.partial_cmp(&b.kld).expect("finite KLD"))
        .expect("non-empty dof set");
    Ok(GridSearchResult { best, best_per_dof, surface })
}

/// Cells `(n, ν, ν')` with `ν' < ν` that the t filter looks up when run on `model`.
pub fn model_scale_cells(model: &crate::model::LinearModel) -> Vec<(usize, f64, f64)> {
    let (n, p, m) = (model.state_dim(), model.noise_dim(), model.measurement_dim());
    let mut seen = BTreeSet::new();
    let mut cells = Vec::new();
    let mut push = |dim: usize, from: f64, to: f64| {
        if to < from && seen.insert((dim, from.to_bits(), to.to_bits())) {
            cells.push((dim, from, to));
        }
    };
    // The dof recursion settles after a couple of steps.
    let mut eta = model.prior.dof();
    for _ in 0..4 {
        let eta_prime = eta.min(model.gamma);
        push(n, eta, eta_prime);
        push(p, model.gamma, eta_prime);
        let eta_dprime = eta_prime.min(model.delta);
        push(n, eta_prime, eta_dprime);
        push(m, model.delta, eta_dprime);
        eta = eta_dprime + m as f64;
    }
    cells
}

/// KLD-optimal factors for every cell in [`model_scale_cells`].
pub fn scale_table_for_model(model: &crate::model::LinearModel, samples: usize, seed: u64) -> Result<ScaleFactorTable> {
    let entries = model_scale_cells(model)
        .par_iter()
        .enumerate()
        .map(|(i, &(n, nu, nu_prime))| {
            let c = optimal_scale_factor(n, nu, nu_prime, samples, derive_seed(seed, i as u64))?;
            Ok(ScaleFactorEntry { n, nu, nu_prime, c })
        })
        .collect::<Result<Vec<_>>>()?;
    ScaleFactorTable::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn gauss(x: f64, var: f64) -> f64 {
        (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn kld_of_identical_densities_is_zero() {
        let ax = [axis(-10.0, 10.0, 2001)];
        let p = SampledDensity::from_fn(&ax, |x| gauss(x[0], 1.0)).unwrap();
        assert!(kld_numeric(&p, &p).unwrap().abs() < 1e-8);
    }

    #[test]
    fn gaussian_kld_closed_form() {
        let ax = [axis(-15.0, 15.0, 3001)];
        let p = SampledDensity::from_fn(&ax, |x| gauss(x[0], 1.0)).unwrap();
        let q = SampledDensity::from_fn(&ax, |x| gauss(x[0], 2.0)).unwrap();
        let expected = 0.5 * (0.5 - 1.0 + 2f64.ln());
        assert!((kld_numeric(&p, &q).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn kld_rejects_grid_mismatch() {
        let p = SampledDensity::new(vec![3], 1.0, vec![0.2, 0.6, 0.2]).unwrap();
        let q = SampledDensity::new(vec![2], 1.0, vec![0.5, 0.5]).unwrap();
        assert!(kld_numeric(&p, &q).is_err());
    }

    #[test]
    fn zero_mass_cells_contribute_nothing() {
        let p = SampledDensity::new(vec![3], 1.0, vec![0.0, 1.0, 0.0]).unwrap();
        let q = SampledDensity::new(vec![3], 1.0, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(kld_numeric(&p, &q).unwrap(), 0.0);
    }

    #[test]
    fn moment_matching_values() {
        assert!((moment_matching_factor(f64::INFINITY, 3.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(moment_matching_factor(7.0, 7.0).unwrap(), 1.0);
        assert!((moment_matching_factor(10.0, 3.0).unwrap() - 10.0 / 24.0).abs() < 1e-15);
        assert!(moment_matching_factor(2.0, 3.0).is_err());
        assert!(moment_matching_factor(5.0, 1.5).is_err());
    }

    #[test]
    fn objective_zero_for_identical_densities() {
        let obj = ScaleObjective::new(2, 4.0, 20_000, 3).unwrap();
        assert_eq!(obj.eval(4.0, 1.0), 0.0);
    }

    #[test]
    fn objective_is_deterministic() {
        let a = kld_scale_objective(1, 10.0, 3.0, 0.8, 5_000, 11).unwrap();
        let b = kld_scale_objective(1, 10.0, 3.0, 0.8, 5_000, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(|x| (x - 1.234).powi(2), 0.0, 3.0, 1e-6);
        assert!((x - 1.234).abs() < 1e-5);
    }

    #[test]
    fn optimal_factor_rejects_increase() {
        assert!(optimal_scale_factor(1, 3.0, 5.0, 100, 0).is_err());
        assert_eq!(optimal_scale_factor(1, 5.0, 5.0, 100, 0).unwrap(), 1.0);
    }

    fn sample_table() -> ScaleFactorTable {
        ScaleFactorTable::new(vec![
            ScaleFactorEntry { n: 1, nu: 10.0, nu_prime: 3.0, c: 0.7 },
            ScaleFactorEntry { n: 1, nu: 10.0, nu_prime: 5.0, c: 0.9 },
            ScaleFactorEntry { n: 1, nu: 5.0, nu_prime: 3.0, c: 0.8 },
        ])
        .unwrap()
    }

    #[test]
    fn table_exact_and_diagonal() {
        let t = sample_table();
        assert_eq!(t.lookup(1, 10.0, 3.0).unwrap(), 0.7);
        assert_eq!(t.lookup(1, 5.0, 5.0).unwrap(), 1.0);
        assert_eq!(t.lookup(7, 3.0, 3.0).unwrap(), 1.0);
        assert!(matches!(t.lookup(2, 10.0, 3.0), Err(Error::MissingTableEntry { .. })));
    }

    #[test]
    fn table_interpolates_in_inverse_dof() {
        let t = sample_table();
        // 1/ν' halfway between 1/5 and 1/3.
        let nu_prime = 1.0 / (0.5 * (0.2 + 1.0 / 3.0));
        let c = t.lookup(1, 10.0, nu_prime).unwrap();
        assert!((c - 0.8).abs() < 1e-12);
        // Between ν = 10 and ν = 5 at ν' = 5 the ν = 5 corner is the diagonal.
        let nu = 1.0 / 0.15;
        assert!((t.lookup(1, nu, 5.0).unwrap() - 0.95).abs() < 1e-12);
        assert!(t.lookup(1, 20.0, 3.0).is_err());
    }

    #[test]
    fn table_csv_round_trip_is_bitwise() {
        let t = ScaleFactorTable::new(vec![
            ScaleFactorEntry { n: 1, nu: 1e6, nu_prime: 3.0, c: 0.630_517_234_987_123_4 },
            ScaleFactorEntry { n: 2, nu: 10.0, nu_prime: 3.0, c: 1.0 / 3.0 },
        ])
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("n,nu,nu_prime,c\n"));
        let back = ScaleFactorTable::read_csv(buf.as_slice()).unwrap();
        for (a, b) in t.entries().iter().zip(back.entries()) {
            assert_eq!(a.c.to_bits(), b.c.to_bits());
            assert_eq!(a.nu.to_bits(), b.nu.to_bits());
        }
    }

    #[test]
    fn table_rejects_non_unit_diagonal() {
        assert!(ScaleFactorTable::new(vec![ScaleFactorEntry { n: 1, nu: 3.0, nu_prime: 3.0, c: 0.9 }]).is_err());
    }

    #[test]
    fn product_kld_matches_full_grid() {
        let grid = JointGridConfig { half_width: 6.0, points: 61 };
        let fast = ProductKld::new(1.0, 10.0, 1.0, 3.0, grid).unwrap();
        let ax = axis(-6.0, 6.0, 61);
        let p = SampledDensity::from_fn(&[ax.clone(), ax.clone()], |x| {
            scalar_t_pdf(x[0] * x[0], 1.0, 10.0) * scalar_t_pdf(x[1] * x[1], 1.0, 3.0)
        })
        .unwrap()
        .normalized()
        .unwrap();
        let q = StudentT::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 1.2])), 4.0).unwrap();
        let qd = SampledDensity::from_fn(&[ax.clone(), ax], |x| q.pdf(&DVector::from_row_slice(x)).unwrap()).unwrap();
        let full = kld_numeric(&p, &qd).unwrap();
        assert!((fast.eval(4.0, 0.8, 1.2) - full).abs() < 1e-12);
    }

    #[test]
    fn equal_dofs_stay_next_to_the_product_scales() {
        // Independent t factors are not jointly t, so the optimum sits one
        // lattice step away from the marginal scales.
        let grid = JointGridConfig { half_width: 10.0, points: 401 };
        let r = joint_product_grid_search(1.0, 5.0, 1.0, 5.0, &[5.0], 0.05, grid).unwrap();
        assert!((r.best.sigma1 - 1.0).abs() <= 0.05 + 1e-12);
        assert_eq!(r.best.sigma1, r.best.sigma2);
        assert!(r.best.kld < 0.02);
        assert!(r.surface.iter().all(|p| p.kld >= r.best.kld));
    }

    #[test]
    fn gaussian_product_is_recovered_exactly() {
        let grid = JointGridConfig { half_width: 10.0, points: 401 };
        let r = joint_product_grid_search(1.0, 1e6, 1.0, 1e6, &[1e6], 0.05, grid).unwrap();
        assert_eq!((r.best.sigma1, r.best.sigma2), (1.0, 1.0));
        assert!(r.best.kld.abs() < 1e-6);
    }
}
