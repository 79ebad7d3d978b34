//! Multivariate Student's t, Gaussian and elliptically contoured densities.
//!
//! Densities are evaluated in the log domain. The t distribution is
//! parameterized by location `mu`, scale matrix `sigma` and degrees of freedom
//! `nu`; its covariance `nu/(nu-2)·sigma` exists only for `nu > 2`. The
//! `nu → ∞` limit is the separate [`Gaussian`] type.

mod elliptical;
mod partition;

pub use elliptical::{DensityGenerator, EllipticalDensity};
pub use partition::{Block, BlockPartition, ConditionalT, PartitionBlocks};

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature;
use crate::rng::rng_from_seed;

/// Pointwise log-density evaluation shared by all density types.
pub trait Density {
    fn dim(&self) -> usize;
    fn location(&self) -> &DVector<f64>;
    fn logpdf(&self, x: &DVector<f64>) -> Result<f64>;
}

/// Multivariate Student's t distribution `St(mu, sigma, nu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StudentTRepr", into = "StudentTRepr")]
pub struct StudentT {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    nu: f64,
}

/// Serialized form: `{mu: [..], sigma: [row-major ..], nu: ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentTRepr {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub nu: f64,
}

impl TryFrom<StudentTRepr> for StudentT {
    type Error = Error;

    fn try_from(r: StudentTRepr) -> Result<Self> {
        let n = r.mu.len();
        if r.sigma.len() != n * n {
            return Err(Error::Dimension(format!(
                "sigma has {} entries, expected {}",
                r.sigma.len(),
                n * n
            )));
        }
        StudentT::new(
            DVector::from_vec(r.mu),
            DMatrix::from_row_slice(n, n, &r.sigma),
            r.nu,
        )
    }
}

impl From<StudentT> for StudentTRepr {
    fn from(d: StudentT) -> Self {
        let n = d.dim();
        let sigma = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| d.sigma[(i, j)])
            .collect();
        StudentTRepr { mu: d.mu.iter().copied().collect(), sigma, nu: d.nu }
    }
}

impl StudentT {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, nu: f64) -> Result<Self> {
        linalg::check_square(&sigma, mu.len(), "sigma")?;
        if !(nu > 0.0) || nu.is_infinite() {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom must be positive and finite, got {nu}"
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mu has non-finite entries".into()));
        }
        linalg::validate_psd(&sigma, "sigma")?;
        Ok(Self { mu, sigma, nu })
    }

    pub fn scalar(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, sigma), nu)
    }

    /// `St(0, I_n, nu)`.
    pub fn standard(n: usize, nu: f64) -> Result<Self> {
        Self::new(DVector::zeros(n), DMatrix::identity(n, n), nu)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dof(&self) -> f64 {
        self.nu
    }

    pub fn log_normalizer(n: usize, nu: f64) -> f64 {
        let n = n as f64;
        ln_gamma(0.5 * (nu + n)) - ln_gamma(0.5 * nu) - 0.5 * n * (nu * PI).ln()
    }

    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.logpdf(x)?.exp())
    }

    /// Covariance `nu/(nu-2)·sigma`; an error for `nu <= 2`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.nu <= 2.0 {
            return Err(Error::CovarianceUndefined(self.nu));
        }
        Ok(&self.sigma * (self.nu / (self.nu - 2.0)))
    }

    /// Draws one vector `mu + lambda^{-1/2}·L·z` with a precomputed `L`.
    fn draw<R: Rng + ?Sized>(&self, root: &DMatrix<f64>, gamma: &Gamma<f64>, rng: &mut R) -> DVector<f64> {
        let lambda: f64 = gamma.sample(rng);
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mu + root * z / lambda.sqrt()
    }

    /// Draws `count` samples from `rng` via the Gamma–Gaussian mixture.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<DVector<f64>> {
        let root = linalg::psd_sqrt(&self.sigma);
        let gamma = Gamma::new(0.5 * self.nu, 2.0 / self.nu).expect("nu > 0 by construction");
        (0..count).map(|_| self.draw(&root, &gamma, rng)).collect()
    }

    /// Draws `count` samples from a generator seeded with `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<DVector<f64>> {
        self.sample_with(&mut rng_from_seed(seed), count)
    }

    /// `St(A mu + b, A sigma Aᵀ, nu)`.
    pub fn linear_transform(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<StudentT> {
        if a.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "transform has {} columns, distribution has dimension {}",
                a.ncols(),
                self.dim()
            )));
        }
        linalg::check_len(b, a.nrows(), "offset")?;
        let sigma = linalg::symmetrize(&(a * &self.sigma * a.transpose()));
        StudentT::new(a * &self.mu + b, linalg::project_psd(&sigma), self.nu)
    }

    /// Marginal of one block: `St(mu_b, sigma_b, nu)`.
    pub fn marginal(&self, partition: &BlockPartition, block: Block) -> Result<StudentT> {
        partition.check(self.dim())?;
        let (start, len) = partition.range(block);
        StudentT::new(
            self.mu.rows(start, len).into_owned(),
            self.sigma.view((start, start), (len, len)).into_owned(),
            self.nu,
        )
    }

    /// Conditional of block 1 given block 2 equal to `x2`.
    pub fn conditional(&self, partition: &BlockPartition, x2: &DVector<f64>) -> Result<ConditionalT> {
        partition.conditional(self, x2)
    }

    /// The two terms of `(x-mu)ᵀ sigma⁻¹ (x-mu) = (x1-mu1|2)ᵀ sigma1|2⁻¹ (x1-mu1|2) + (x2-mu2)ᵀ sigma2⁻¹ (x2-mu2)`.
    pub fn quadratic_form_split(&self, partition: &BlockPartition, x: &DVector<f64>) -> Result<(f64, f64)> {
        partition.quadratic_form_split(self, x)
    }
}

impl Density for StudentT {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn location(&self) -> &DVector<f64> {
        &self.mu
    }

    fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        linalg::check_len(x, self.dim(), "x")?;
        let chol = self.sigma.clone().cholesky().ok_or(Error::SingularScale)?;
        let r2 = linalg::chol_quad_form(&chol, &(x - &self.mu));
        let n = self.dim() as f64;
        Ok(Self::log_normalizer(self.dim(), self.nu) - 0.5 * linalg::chol_log_det(&chol)
            - 0.5 * (self.nu + n) * (r2 / self.nu).ln_1p())
    }
}

/// Multivariate Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        linalg::check_square(&cov, mean.len(), "cov")?;
        linalg::validate_psd(&cov, "cov")?;
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<DVector<f64>> {
        let root = linalg::psd_sqrt(&self.cov);
        (0..count)
            .map(|_| {
                let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
                &self.mean + &root * z
            })
            .collect()
    }
}

impl Density for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn location(&self) -> &DVector<f64> {
        &self.mean
    }

    fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        linalg::check_len(x, self.dim(), "x")?;
        let chol = self.cov.clone().cholesky().ok_or(Error::SingularScale)?;
        let r2 = linalg::chol_quad_form(&chol, &(x - &self.mean));
        let n = self.dim() as f64;
        Ok(-0.5 * (n * (2.0 * PI).ln() + linalg::chol_log_det(&chol) + r2))
    }
}

/// `P(|x - mu| > threshold)` for a scalar density, by adaptive quadrature of
/// the central interval.
pub fn tail_probability<D: Density>(d: &D, threshold: f64) -> Result<f64> {
    if d.dim() != 1 {
        return Err(Error::Dimension(format!(
            "tail probability needs a scalar density, got dimension {}",
            d.dim()
        )));
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be nonnegative, got {threshold}")));
    }
    let mu = d.location()[0];
    let failure = RefCell::new(None);
    let pdf = |x: f64| match d.logpdf(&DVector::from_element(1, x)) {
        Ok(v) => v.exp(),
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let central = quadrature::integrate(pdf, mu - threshold, mu + threshold, 1e-10);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok((1.0 - central).max(0.0))
}
