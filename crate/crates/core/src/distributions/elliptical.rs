use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use super::{Density, StudentT};
use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature;

/// Density generator `g(r²)` of an elliptically contoured distribution.
///
/// The built-in generators are normalized for the dimension of the density
/// they are attached to. A custom generator is taken as given and must
/// integrate to one for the dimension it is used with.
#[derive(Clone)]
pub enum DensityGenerator {
    Gaussian,
    StudentT { nu: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for DensityGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian => write!(f, "Gaussian"),
            Self::StudentT { nu } => write!(f, "StudentT {{ nu: {nu} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl DensityGenerator {
    /// `ln g(r²)` in dimension `n`.
    pub fn ln_g(&self, r2: f64, n: usize) -> f64 {
        match self {
            Self::Gaussian => -0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * r2,
            Self::StudentT { nu } => {
                StudentT::log_normalizer(n, *nu) - 0.5 * (nu + n as f64) * (r2 / nu).ln_1p()
            }
            Self::Custom(g) => g(r2).ln(),
        }
    }

    /// Log of the radial density `p(r) = 2π^{n/2}/Γ(n/2) · r^{n-1} g(r²)`.
    fn ln_radial(&self, r: f64, n: usize) -> f64 {
        let half_n = 0.5 * n as f64;
        (2.0f64).ln() + half_n * PI.ln() - ln_gamma(half_n) + (n as f64 - 1.0) * r.ln()
            + self.ln_g(r * r, n)
    }

    /// `∫ g(uᵀu) du` over ℝⁿ, via the radial density.
    pub fn mass(&self, n: usize) -> Result<f64> {
        quadrature::integrate_to_infinity(|r| self.ln_radial(r, n).exp(), 0.0, 1.0, 1e-10)
    }

    /// `E(r²) = ∫ r² p(r) dr`; an error when the integral diverges.
    pub fn radial_second_moment(&self, n: usize) -> Result<f64> {
        quadrature::integrate_to_infinity(
            |r| if r == 0.0 { 0.0 } else { (2.0 * r.ln() + self.ln_radial(r, n)).exp() },
            0.0,
            1.0,
            1e-10,
        )
        .map_err(|_| Error::SecondMomentUndefined)
    }
}

/// `p(x) = det(Σ)^{-1/2} g((x-μ)ᵀ Σ⁻¹ (x-μ))`.
#[derive(Debug, Clone)]
pub struct EllipticalDensity {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    generator: DensityGenerator,
}

impl EllipticalDensity {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, generator: DensityGenerator) -> Result<Self> {
        linalg::check_square(&sigma, mu.len(), "sigma")?;
        linalg::validate_psd(&sigma, "sigma")?;
        if sigma.clone().cholesky().is_none() {
            return Err(Error::SingularScale);
        }
        Ok(Self { mu, sigma, generator })
    }

    pub fn generator(&self) -> &DensityGenerator {
        &self.generator
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `(E(r²)/n)·Σ` with `E(r²)` from 1-D quadrature of the radial density.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let second = self.generator.radial_second_moment(n)?;
        Ok(&self.sigma * (second / n as f64))
    }
}

impl Density for EllipticalDensity {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn location(&self) -> &DVector<f64> {
        &self.mu
    }

    fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        linalg::check_len(x, self.dim(), "x")?;
        let chol = linalg::cholesky(&self.sigma, "Σ").map_err(|_| Error::SingularScale)?;
        let r2 = linalg::chol_quad_form(&chol, &(x - &self.mu));
        Ok(-0.5 * linalg::chol_log_det(&chol) + self.generator.ln_g(r2, self.dim()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Gaussian;

    fn spd() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0])
    }

    #[test]
    fn gaussian_generator_matches_gaussian() {
        let mu = DVector::from_vec(vec![1.0, -1.0]);
        let e = EllipticalDensity::new(mu.clone(), spd(), DensityGenerator::Gaussian).unwrap();
        let g = Gaussian::new(mu, spd()).unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-1.5, 4.0]] {
            let x = DVector::from_row_slice(&x);
            assert!((e.logpdf(&x).unwrap() - g.logpdf(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn t_generator_matches_t() {
        let mu = DVector::from_vec(vec![0.5, 0.0]);
        let e = EllipticalDensity::new(mu.clone(), spd(), DensityGenerator::StudentT { nu: 3.5 }).unwrap();
        let t = StudentT::new(mu, spd(), 3.5).unwrap();
        for x in [[0.0, 0.0], [10.0, -2.0], [-1.5, 4.0]] {
            let x = DVector::from_row_slice(&x);
            assert!((e.logpdf(&x).unwrap() - t.logpdf(&x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_on_ellipsoids() {
        let e = EllipticalDensity::new(DVector::zeros(2), spd(), DensityGenerator::StudentT { nu: 4.0 }).unwrap();
        let root = linalg::psd_sqrt(&spd());
        let values: Vec<f64> = (0..8)
            .map(|i| {
                let a = i as f64 * 0.7;
                let u = DVector::from_vec(vec![2.0 * a.cos(), 2.0 * a.sin()]);
                e.logpdf(&(&root * u)).unwrap()
            })
            .collect();
        assert!(values.iter().all(|v| (v - values[0]).abs() < 1e-12));
    }

    #[test]
    fn generators_are_normalized() {
        for n in 1..=2 {
            assert!((DensityGenerator::Gaussian.mass(n).unwrap() - 1.0).abs() < 1e-4);
            assert!((DensityGenerator::StudentT { nu: 3.0 }.mass(n).unwrap() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn covariance_from_radial_moment() {
        let s = DMatrix::from_element(1, 1, 1.3);
        let g = EllipticalDensity::new(DVector::zeros(1), s.clone(), DensityGenerator::Gaussian).unwrap();
        assert!((g.covariance().unwrap()[(0, 0)] - 1.3).abs() < 1e-6);
        let t = EllipticalDensity::new(DVector::zeros(1), s.clone(), DensityGenerator::StudentT { nu: 5.0 }).unwrap();
        assert!((t.covariance().unwrap()[(0, 0)] - 1.3 * 5.0 / 3.0).abs() < 1e-4);
        let t2 = EllipticalDensity::new(DVector::zeros(1), s, DensityGenerator::StudentT { nu: 2.0 }).unwrap();
        assert!(matches!(t2.covariance(), Err(Error::SecondMomentUndefined)));
    }

    #[test]
    fn custom_generator_is_used_as_given() {
        // Uniform on the unit disc: g = 1/π inside.
        let g = DensityGenerator::Custom(Arc::new(|r2| if r2 <= 1.0 { 1.0 / PI } else { 0.0 }));
        assert!((g.mass(2).unwrap() - 1.0).abs() < 1e-6);
        let e = EllipticalDensity::new(DVector::zeros(2), DMatrix::identity(2, 2), g).unwrap();
        // E(r²) = 1/2 for the uniform disc, so cov = I/4.
        assert!((e.covariance().unwrap()[(0, 0)] - 0.25).abs() < 1e-6);
    }
}
