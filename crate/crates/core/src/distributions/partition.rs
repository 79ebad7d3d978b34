use nalgebra::{DMatrix, DVector};

use super::{Density, StudentT};
use crate::error::{Error, Result};
use crate::linalg;

/// Which block of a partitioned vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    First,
    Second,
}

/// Splits an `n`-vector into a leading block of `n1` and a trailing block of `n2` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPartition {
    pub n1: usize,
    pub n2: usize,
}

/// Blocks of a partitioned t distribution together with the conditioning gain
/// `Υ = Σ12 Σ2⁻¹` and the Schur complement `Σ1|2 = Σ1 - Υ Σ2 Υᵀ`.
#[derive(Debug, Clone)]
pub struct PartitionBlocks {
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigma12: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub schur: DMatrix<f64>,
}

/// Result of conditioning block 1 on an observed block 2.
#[derive(Debug, Clone)]
pub struct ConditionalT {
    /// `St(mu1|2, c·Σ1|2, nu + n2)`.
    pub dist: StudentT,
    pub gain: DMatrix<f64>,
    /// Unscaled Schur complement `Σ1|2`.
    pub schur: DMatrix<f64>,
    /// `c = (nu + (x2-mu2)ᵀ Σ2⁻¹ (x2-mu2)) / (nu + n2)`.
    pub scale_factor: f64,
}

impl BlockPartition {
    pub fn new(n1: usize, n2: usize) -> Self {
        Self { n1, n2 }
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        if self.n1 + self.n2 != n {
            return Err(Error::Dimension(format!(
                "block sizes {} + {} do not add up to dimension {n}",
                self.n1, self.n2
            )));
        }
        Ok(())
    }

    pub(crate) fn range(&self, block: Block) -> (usize, usize) {
        match block {
            Block::First => (0, self.n1),
            Block::Second => (self.n1, self.n2),
        }
    }

    /// Extracts the blocks of `d` and forms the gain and Schur complement.
    pub fn blocks(&self, d: &StudentT) -> Result<PartitionBlocks> {
        self.check(d.dim())?;
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::Dimension("both blocks must be non-empty".into()));
        }
        let (n1, n2) = (self.n1, self.n2);
        let sigma = d.scale();
        let sigma1 = sigma.view((0, 0), (n1, n1)).into_owned();
        let sigma12 = sigma.view((0, n1), (n1, n2)).into_owned();
        let sigma2 = sigma.view((n1, n1), (n2, n2)).into_owned();
        let gain = linalg::right_divide_spd(&sigma12, &sigma2, "Σ2")?;
        let schur = linalg::symmetrize(&(&sigma1 - &gain * sigma12.transpose()));
        Ok(PartitionBlocks {
            mu1: d.mean().rows(0, n1).into_owned(),
            mu2: d.mean().rows(n1, n2).into_owned(),
            sigma1,
            sigma12,
            sigma2,
            gain,
            schur,
        })
    }

    pub(crate) fn conditional(&self, d: &StudentT, x2: &DVector<f64>) -> Result<ConditionalT> {
        let b = self.blocks(d)?;
        linalg::check_len(x2, self.n2, "x2")?;
        let residual = x2 - &b.mu2;
        let chol2 = linalg::cholesky(&b.sigma2, "Σ2")?;
        let q2 = linalg::chol_quad_form(&chol2, &residual);
        let nu = d.dof();
        let scale_factor = (nu + q2) / (nu + self.n2 as f64);
        let mean = &b.mu1 + &b.gain * residual;
        let scale = linalg::project_psd(&(&b.schur * scale_factor));
        Ok(ConditionalT {
            dist: StudentT::new(mean, scale, nu + self.n2 as f64)?,
            gain: b.gain,
            schur: b.schur,
            scale_factor,
        })
    }

    pub(crate) fn quadratic_form_split(&self, d: &StudentT, x: &DVector<f64>) -> Result<(f64, f64)> {
        linalg::check_len(x, d.dim(), "x")?;
        let b = self.blocks(d)?;
        let x1 = x.rows(0, self.n1).into_owned();
        let x2 = x.rows(self.n1, self.n2).into_owned();
        let residual2 = &x2 - &b.mu2;
        let mu_cond = &b.mu1 + &b.gain * &residual2;
        let chol_schur = linalg::cholesky(&b.schur, "Σ1|2")?;
        let chol2 = linalg::cholesky(&b.sigma2, "Σ2")?;
        Ok((
            linalg::chol_quad_form(&chol_schur, &(x1 - mu_cond)),
            linalg::chol_quad_form(&chol2, &residual2),
        ))
    }
}
