//! Gaussian tail function `Q`, its inverse, and the derivative of the inverse.
//!
//! `Q(x) = ½·erfc(x/√2)`. The complementary error function is a generic port
//! of the FreeBSD `s_erf.c` rational approximations (SunPro, 1993): five
//! argument ranges, each with a fixed minimax rational form, and the
//! `exp(-x²)` factor evaluated with a split argument so that `x²` is exact.
//! No table lookups or platform `erfc` are involved, so a given scalar type
//! produces the same bits on every IEEE-754 target.
//!
//! `Q⁻¹` is a safeguarded Newton iteration on `ln Q(x) − ln p`, seeded with
//! Acklam's rational approximation of the normal quantile and bracketed so
//! that a rejected step falls back to bisection.
//!
//! The derivative of `Q⁻¹` follows from the inverse-function rule:
//! `d/dp Q⁻¹(p) = 1/Q'(x) = −√(2π)·exp(+x²/2)` with `x = Q⁻¹(p)`. Some
//! published derivations print the exponent as `−x²/2`; that form does not
//! agree with finite differences and is not used here.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Probability<S>(S);

impl<S: Scalar> Probability<S> {
    pub fn new(value: S) -> Result<Self> {
        if value >= S::zero() && value <= S::one() {
            Ok(Self(value))
        } else {
            Err(Error::Domain {
                function: "Probability::new",
                value: value.as_f64(),
                domain: "[0, 1]",
            })
        }
    }

    #[inline]
    pub fn get(self) -> S {
        self.0
    }

    /// `1 − p`.
    #[inline]
    pub fn complement(self) -> Self {
        Self(S::one() - self.0)
    }
}

const ERX: f64 = 8.45062911510467529297e-01;
// erf on [0, 0.84375]
const PP0: f64 = 1.28379167095512558561e-01;
const PP1: f64 = -3.25042107247001499370e-01;
const PP2: f64 = -2.84817495755985104766e-02;
const PP3: f64 = -5.77027029648944159157e-03;
const PP4: f64 = -2.37630166566501626084e-05;
const QQ1: f64 = 3.97917223959155352819e-01;
const QQ2: f64 = 6.50222499887672944485e-02;
const QQ3: f64 = 5.08130628187576562776e-03;
const QQ4: f64 = 1.32494738004321644526e-04;
const QQ5: f64 = -3.96022827877536812320e-06;
// erf on [0.84375, 1.25]
const PA0: f64 = -2.36211856075265944077e-03;
const PA1: f64 = 4.14856118683748331666e-01;
const PA2: f64 = -3.72207876035701323847e-01;
const PA3: f64 = 3.18346619901161753674e-01;
const PA4: f64 = -1.10894694282396677476e-01;
const PA5: f64 = 3.54783043256182359371e-02;
const PA6: f64 = -2.16637559486879084300e-03;
const QA1: f64 = 1.06420880400844228286e-01;
const QA2: f64 = 5.40397917702171048937e-01;
const QA3: f64 = 7.18286544141962662868e-02;
const QA4: f64 = 1.26171219808761642112e-01;
const QA5: f64 = 1.36370839120290507362e-02;
const QA6: f64 = 1.19844998467991074170e-02;
// erfc on [1.25, 1/0.35]
const RA0: f64 = -9.86494403484714822705e-03;
const RA1: f64 = -6.93858572707181764372e-01;
const RA2: f64 = -1.05586262253232909814e+01;
const RA3: f64 = -6.23753324503260060396e+01;
const RA4: f64 = -1.62396669462573470355e+02;
const RA5: f64 = -1.84605092906711035994e+02;
const RA6: f64 = -8.12874355063065934246e+01;
const RA7: f64 = -9.81432934416914548592e+00;
const SA1: f64 = 1.96512716674392571292e+01;
const SA2: f64 = 1.37657754143519042600e+02;
const SA3: f64 = 4.34565877475229228821e+02;
const SA4: f64 = 6.45387271733267880336e+02;
const SA5: f64 = 4.29008140027567833386e+02;
const SA6: f64 = 1.08635005541779435134e+02;
const SA7: f64 = 6.57024977031928170135e+00;
const SA8: f64 = -6.04244152148580987438e-02;
// erfc on [1/0.35, 28]
const RB0: f64 = -9.86494292470009928597e-03;
const RB1: f64 = -7.99283237680523006574e-01;
const RB2: f64 = -1.77579549177547519889e+01;
const RB3: f64 = -1.60636384855821916062e+02;
const RB4: f64 = -6.37566443368389627722e+02;
const RB5: f64 = -1.02509513161107724954e+03;
const RB6: f64 = -4.83519191608651397019e+02;
const SB1: f64 = 3.03380607434824582924e+01;
const SB2: f64 = 3.25792512996573918826e+02;
const SB3: f64 = 1.53672958608443695994e+03;
const SB4: f64 = 3.19985821950859553908e+03;
const SB5: f64 = 2.55305040643316442583e+03;
const SB6: f64 = 4.74528541206955367215e+02;
const SB7: f64 = -2.24409524465858183362e+01;

#[inline(always)]
fn k<S: Scalar>(v: f64) -> S {
    S::lit(v)
}

/// Horner evaluation, coefficients in increasing degree.
#[inline(always)]
fn poly<S: Scalar>(x: S, coeffs: &[f64]) -> S {
    coeffs
        .iter()
        .rev()
        .fold(S::zero(), |acc, &c| acc * x + k::<S>(c))
}

/// `ln(erfc(y)·y)` for `y ≥ 1.25`, without the final division.
///
/// Valid past the `erfc` underflow point, which is what the log-space
/// paths need.
#[inline]
fn ln_erfc_scaled_tail<S: Scalar>(y: S) -> S {
    let s = S::one() / (y * y);
    let (r, q) = if y < k(1.0 / 0.35) {
        (
            poly(s, &[RA0, RA1, RA2, RA3, RA4, RA5, RA6, RA7]),
            poly(s, &[1.0, SA1, SA2, SA3, SA4, SA5, SA6, SA7, SA8]),
        )
    } else {
        (
            poly(s, &[RB0, RB1, RB2, RB3, RB4, RB5, RB6]),
            poly(s, &[1.0, SB1, SB2, SB3, SB4, SB5, SB6, SB7]),
        )
    };
    // z carries the leading 24 bits of y so that z·z is exact
    let z = y.to_f32().map(|v| S::from_f32(v).unwrap()).unwrap_or(y);
    -z * z - k(0.5625) + (z - y) * (z + y) + r / q
}

/// Complementary error function.
pub fn erfc<S: Scalar>(x: S) -> S {
    if x.is_nan() {
        return x;
    }
    if x == S::infinity() {
        return S::zero();
    }
    if x == S::neg_infinity() {
        return k(2.0);
    }
    let negative = x < S::zero();
    let y = x.abs();
    let one = S::one();
    if y < k(0.84375) {
        let t = if y < k(1.3877787807814457e-17) {
            y
        } else {
            let z = y * y;
            let r = poly(z, &[PP0, PP1, PP2, PP3, PP4]);
            let s = poly(z, &[1.0, QQ1, QQ2, QQ3, QQ4, QQ5]);
            let ratio = r / s;
            if y < k(0.25) {
                y + y * ratio
            } else {
                k::<S>(0.5) + (y * ratio + (y - k(0.5)))
            }
        };
        return if negative { one + t } else { one - t };
    }
    if y < k(1.25) {
        let s = y - one;
        let p = poly(s, &[PA0, PA1, PA2, PA3, PA4, PA5, PA6]);
        let q = poly(s, &[1.0, QA1, QA2, QA3, QA4, QA5, QA6]);
        return if negative {
            one + k(ERX) + p / q
        } else {
            one - k(ERX) - p / q
        };
    }
    if negative && y > k(6.0) {
        return k(2.0);
    }
    if y >= k(28.0) {
        return if negative { k(2.0) } else { S::zero() };
    }
    let r = ln_erfc_scaled_tail(y).exp() / y;
    if negative {
        k::<S>(2.0) - r
    } else {
        r
    }
}

/// `Q(x)` for any `x`, including `±∞`; NaN propagates.
#[inline]
pub(crate) fn q_tail<S: Scalar>(x: S) -> S {
    k::<S>(0.5) * erfc(x * S::FRAC_1_SQRT_2())
}

/// `ln Q(x)`, accurate far past the point where `Q(x)` underflows.
pub(crate) fn ln_q<S: Scalar>(x: S) -> S {
    if x < k(5.0) {
        return q_tail(x).ln();
    }
    if x == S::infinity() {
        return S::neg_infinity();
    }
    let y = x * S::FRAC_1_SQRT_2();
    ln_erfc_scaled_tail(y) - y.ln() - S::LN_2()
}

/// Upper-tail probability of the standard normal distribution.
///
/// Relative accuracy is a few ulps for `|x| ≤ 8` in `f64`; far in the upper
/// tail the result underflows gracefully to zero.
pub fn q_function<S: Scalar>(x: S) -> Result<Probability<S>> {
    if !x.is_finite() {
        return Err(Error::Domain {
            function: "q_function",
            value: x.as_f64(),
            domain: "finite reals",
        });
    }
    Ok(Probability(q_tail(x)))
}

/// Acklam's rational approximation of `Φ⁻¹(p)` (relative error ~1e-9).
fn acklam_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// `Q⁻¹(p)` for `p ≤ ½`, returning a value `≥ 0`.
fn q_inverse_lower_half<S: Scalar>(p: S) -> S {
    if p == k(0.5) {
        return S::zero();
    }
    let ln_p = p.ln();
    let half_ln_2pi = k::<S>(0.5) * (S::PI() + S::PI()).ln();
    let mut lo = S::zero();
    let mut hi = k::<S>(40.0);
    let seed = -acklam_normal_quantile(p.as_f64());
    let mut x = if seed.is_finite() && seed > 0.0 {
        S::lit(seed).min(hi)
    } else {
        k(1.0)
    };
    let tol = S::epsilon() * k(4.0);
    for _ in 0..100 {
        let ln_qx = ln_q(x);
        let residual = ln_qx - ln_p;
        if residual > S::zero() {
            lo = x;
        } else if residual < S::zero() {
            hi = x;
        } else {
            return x;
        }
        // h(x) = ln Q(x) − ln p, h'(x) = −φ(x)/Q(x)
        let ln_phi = -x * x * k(0.5) - half_ln_2pi;
        let step = residual * (ln_qx - ln_phi).exp();
        let mut next = x + step;
        if !(next > lo && next < hi) {
            next = (lo + hi) * k(0.5);
        }
        if (next - x).abs() <= tol * x.abs().max(S::one()) {
            return next;
        }
        x = next;
    }
    x
}

/// Inverse of [`q_function`] on the open interval `(0, 1)`.
///
/// `ε = 0` and `ε = 1` map to `±∞` symbolically and must be handled by the
/// caller; they are rejected here.
pub fn q_inverse<S: Scalar>(p: S) -> Result<S> {
    if !(p > S::zero() && p < S::one()) {
        return Err(Error::Domain {
            function: "q_inverse",
            value: p.as_f64(),
            domain: "(0, 1)",
        });
    }
    if p <= k(0.5) {
        Ok(q_inverse_lower_half(p))
    } else {
        // 1 − p is exact for p in [½, 1)
        Ok(-q_inverse_lower_half(S::one() - p))
    }
}

/// `d/dp Q⁻¹(p) = −√(2π)·exp(x²/2)`, `x = Q⁻¹(p)`. Always negative.
pub fn q_inverse_deriv<S: Scalar>(p: S) -> Result<S> {
    let x = q_inverse(p).map_err(|_| Error::Domain {
        function: "q_inverse_deriv",
        value: p.as_f64(),
        domain: "(0, 1)",
    })?;
    let sqrt_2pi = (S::PI() + S::PI()).sqrt();
    Ok(-sqrt_2pi * (x * x * k(0.5)).exp())
}
