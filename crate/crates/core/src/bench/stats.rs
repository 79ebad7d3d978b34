use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// `sqrt(Σ_{k=5}^{150} ‖p_k - p̂_k‖² / 145)` over 2-D positions.
///
/// The normalizer stays at 145 although the sum has 146 terms.
pub fn position_rmse(truth: &[[f64; 2]], estimates: &[[f64; 2]]) -> Result<f64> {
    const FIRST: usize = 5;
    const LAST: usize = 150;
    if truth.len() != estimates.len() {
        return Err(Error::Dimension(format!(
            "{} true positions but {} estimates",
            truth.len(),
            estimates.len()
        )));
    }
    if truth.len() <= LAST {
        return Err(Error::Dimension(format!("need positions for k = 0..={LAST}, got {}", truth.len())));
    }
    let sum: f64 = (FIRST..=LAST)
        .map(|k| (truth[k][0] - estimates[k][0]).powi(2) + (truth[k][1] - estimates[k][1]).powi(2))
        .sum();
    Ok((sum / 145.0).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gaussian kernel density estimate on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl Kde {
    /// Trapezoidal integral of the estimate over its grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// Silverman's rule `1.06·σ̂·N^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidParameter("KDE needs at least two values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::InvalidParameter("KDE input has zero variance".into()));
    }
    Ok(1.06 * var.sqrt() * (n as f64).powf(-0.2))
}

/// KDE on `[min - 5h, max + 5h]` with a spacing of at most `h/4`.
pub fn kde(values: &[f64], bandwidth: Option<f64>) -> Result<Kde> {
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(values)?,
    };
    if values.len() < 2 {
        return Err(Error::InvalidParameter("KDE needs at least two values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 5.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
    let count = (((hi - lo) / (0.25 * h)).ceil() as usize + 1).clamp(512, 20_000);
    let step = (hi - lo) / (count - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..count).map(|i| lo + i as f64 * step).collect();
    let density = grid
        .iter()
        .map(|&x| values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(Kde { bandwidth: h, grid, density })
}

/// One-sided sign test of "first < second" over paired samples.
///
/// Ties are dropped. Returns the number of wins, the number of untied pairs,
/// and `P(Binomial(n, 1/2) ≥ wins)`.
pub fn sign_test(first: &[f64], second: &[f64]) -> Result<(usize, usize, f64)> {
    if first.len() != second.len() {
        return Err(Error::Dimension("sign test needs paired samples".into()));
    }
    let (mut wins, mut n) = (0u64, 0u64);
    for (a, b) in first.iter().zip(second) {
        if a != b {
            n += 1;
            if a < b {
                wins += 1;
            }
        }
    }
    let ln_half = (0.5f64).ln() * n as f64;
    let p = (wins..=n).map(|k| (ln_binomial(n, k) + ln_half).exp()).sum::<f64>().min(1.0);
    Ok((wins as usize, n as usize, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rmse_of_perfect_and_offset_estimates() {
        let truth: Vec<[f64; 2]> = (0..151).map(|k| [k as f64, 2.0 * k as f64]).collect();
        assert_eq!(position_rmse(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<[f64; 2]> = truth.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        assert!((position_rmse(&truth, &shifted).unwrap() - (146.0f64 / 145.0).sqrt()).abs() < 1e-15);
        assert!(position_rmse(&truth, &truth[1..]).is_err());
    }

    #[test]
    fn kde_recovers_standard_normal_peak() {
        let mut rng = crate::rng::rng_from_seed(1);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k = kde(&xs, None).unwrap();
        let i = k.grid.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        assert!((k.density[i] / 0.398_942_28 - 1.0).abs() < 0.1);
        assert!((k.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kde_rejects_constant_input() {
        assert!(kde(&[1.0, 1.0, 1.0], None).is_err());
        assert!(kde(&[1.0], Some(0.1)).is_err());
    }

    #[test]
    fn sign_test_values() {
        let (w, n, p) = sign_test(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((w, n), (3, 3));
        assert!((p - 0.125).abs() < 1e-12);
        let (_, n, p) = sign_test(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(n, 1);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
