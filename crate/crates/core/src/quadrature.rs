//! Adaptive 1-D quadrature.
//!
//! A 7/15-point Gauss–Kronrod pair with recursive bisection on finite
//! intervals, and a dyadic-shell scheme for `[a, ∞)` that detects
//! divergent integrals instead of returning a truncated value.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 50;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, err: f64, tol: f64, depth: u32) -> f64 {
    if err <= tol || depth >= MAX_DEPTH || (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
        return whole;
    }
    let mid = 0.5 * (a + b);
    let (left, left_err) = gk15(f, a, mid);
    let (right, right_err) = gk15(f, mid, b);
    adapt(f, a, mid, left, left_err, 0.5 * tol, depth + 1)
        + adapt(f, mid, b, right, right_err, 0.5 * tol, depth + 1)
}

/// Integrates `f` over `[a, b]` to an absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (whole, err) = gk15(&f, a, b);
    adapt(&f, a, b, whole, err, tol, 0)
}

/// Integrates a nonnegative `f` over `[a, ∞)`.
///
/// The half-line is split into shells `[a + 2ᵏ⁻¹s, a + 2ᵏs]`. Summation stops
/// once the geometric tail bound of the remaining shells falls below `tol`
/// relative to the running total. Shells that stop shrinking indicate a
/// divergent integral, reported as `Err`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, scale: f64, tol: f64) -> Result<f64> {
    let mut total = integrate(&f, a, a + scale, tol * 1e-2);
    let mut lo = scale;
    let mut prev_piece = f64::NAN;
    let mut stalled = 0;
    for _ in 0..1000 {
        let hi = 2.0 * lo;
        if !hi.is_finite() {
            break;
        }
        let piece = integrate(&f, a + lo, a + hi, tol * 1e-2 * total.abs().max(1e-300));
        total += piece;
        if piece == 0.0 {
            return Ok(total);
        }
        let ratio = piece / prev_piece;
        if ratio.is_finite() && ratio < 0.999 {
            stalled = 0;
            let tail = piece * ratio / (1.0 - ratio);
            if tail <= tol * total.abs() {
                return Ok(total + tail);
            }
        } else if ratio.is_finite() {
            stalled += 1;
            if stalled >= 40 {
                return Err(Error::Bracket("integral over [a, inf) diverges".into()));
            }
        }
        prev_piece = piece;
        lo = hi;
    }
    Err(Error::Bracket("integral over [a, inf) did not converge".into()))
}
