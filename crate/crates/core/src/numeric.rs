//! Small numerical kernels shared by the link and stability modules:
//! the Gaussian tail function, adaptive Gauss-Kronrod quadrature and
//! monotone bisection.

use statrs::function::erf::erfc;

use crate::error::NumericError;

/// Gaussian tail probability `Q(x) = P[N(0,1) > x]`, evaluated through the
/// complementary error function so that large positive arguments keep their
/// relative accuracy.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
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
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        // Gauss nodes are the odd-indexed Kronrod nodes.
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadTolerance {
    pub relative: f64,
    pub absolute: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadTolerance {
    fn default() -> Self {
        Self {
            relative: 1e-6,
            absolute: 1e-13,
            max_subdivisions: 4000,
        }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
}

/// Globally adaptive Gauss-Kronrod (7/15) integration of `f` over the
/// consecutive intervals delimited by `breakpoints`.
///
/// The interval with the largest error estimate is bisected until the total
/// estimate falls below `max(absolute, relative * |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    breakpoints: &[f64],
    tol: QuadTolerance,
) -> Result<Quadrature, NumericError> {
    assert!(breakpoints.len() >= 2, "need at least one interval");
    let mut pieces: Vec<(f64, f64, f64, f64)> = breakpoints
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    let mut subdivisions = 0;
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).sum();
        let error: f64 = pieces.iter().map(|p| p.3).sum();
        if !value.is_finite() {
            return Err(NumericError::NonFinite { context: "quadrature" });
        }
        if error <= tol.absolute.max(tol.relative * value.abs()) {
            return Ok(Quadrature {
                value,
                error_estimate: error,
                subdivisions,
            });
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(NumericError::QuadratureDiverged {
                value,
                error_estimate: error,
                subdivisions,
            });
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .3.total_cmp(&b.1 .3))
            .expect("non-empty");
        let (a, b, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (a + b);
        let (v1, e1) = gk15(&f, a, mid);
        let (v2, e2) = gk15(&f, mid, b);
        pieces.push((a, mid, v1, e1));
        pieces.push((mid, b, v2, e2));
        subdivisions += 1;
    }
}

/// Root of a monotone function on `[lo, hi]` by bisection.
///
/// `f(lo)` and `f(hi)` must bracket zero; the search stops once the bracket is
/// narrower than `x_tol` or 200 halvings have been made.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    x_tol: f64,
) -> Result<f64, NumericError> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(NumericError::NoBracket { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= x_tol * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_function_symmetry_and_tail() {
        assert_eq!(gaussian_q(0.0), 0.5);
        assert!((gaussian_q(1.0) + gaussian_q(-1.0) - 1.0).abs() < 1e-15);
        // Q(10) = 7.619853024160527e-24
        let q10 = gaussian_q(10.0);
        assert!(((q10 - 7.619_853_024_160_527e-24) / q10).abs() < 1e-10);
    }

    #[test]
    fn integrates_smooth_and_kinked_functions() {
        let r = integrate(|x| x.sin(), &[0.0, std::f64::consts::PI], QuadTolerance::default())
            .unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        let tight = QuadTolerance { relative: 1e-12, ..QuadTolerance::default() };
        let r = integrate(|x| (x - 0.3).abs(), &[0.0, 1.0], tight).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-9);
    }

    #[test]
    fn bisection_finds_root() {
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x + 10.0, 0.0, 1.0, 1e-9).is_err());
    }
}
