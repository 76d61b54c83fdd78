//! Special functions: log-scaled modified Bessel functions of the first
//! kind, the regularized incomplete beta function, and the normal CDF.

use std::f64::consts::PI;

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Below this argument `log I_0` uses the power series, above it the
/// asymptotic expansion.
const I0_SERIES_LIMIT: f64 = 20.0;

/// `log I_0(x)` for `x >= 0`.
pub fn log_bessel_i0(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("log_bessel_i0 needs x >= 0, got {x}")));
    }
    Ok(log_bessel_i0_unchecked(x))
}

pub(crate) fn log_bessel_i0_unchecked(x: f64) -> f64 {
    if x < I0_SERIES_LIMIT {
        // sum_k (x^2/4)^k / (k!)^2
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum.ln()
    } else {
        x - 0.5 * (2.0 * PI * x).ln() + asymptotic_tail(0.0, x).ln()
    }
}

/// `1 - (m-1)/(8x) + (m-1)(m-9)/(2!(8x)^2) - ...` with `m = 4 nu^2`,
/// truncated at its smallest term.
fn asymptotic_tail(nu: f64, x: f64) -> f64 {
    let m = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (m - odd * odd) / (k * 8.0 * x);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        sum += next;
        term = next;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum
}

/// `log I_nu(x)` for `nu >= 0`, `x >= 0`.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    if !(nu >= 0.0) || !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "log_bessel_i needs nu >= 0 and x >= 0, got nu={nu}, x={x}"
        )));
    }
    if nu == 0.0 {
        return Ok(log_bessel_i0_unchecked(x));
    }
    if x == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if x > 50.0 + 2.0 * nu * nu {
        return Ok(x - 0.5 * (2.0 * PI * x).ln() + asymptotic_tail(nu, x).ln());
    }
    // Power series sum_k (x/2)^{2k+nu} / (k! Gamma(k+nu+1)), accumulated
    // relative to the first term with periodic rescaling.
    let log_first = nu * (0.5 * x).ln() - ln_gamma(nu + 1.0);
    let q = 0.25 * x * x;
    let mut log_scale = 0.0;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + nu));
        sum += term;
        if sum > 1e250 {
            log_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        if k > 0.5 * x && term < 1e-17 * sum {
            break;
        }
        k += 1.0;
    }
    Ok(log_first + log_scale + sum.ln())
}

/// `log B(a, a)`; Stirling-corrected form for large `a` avoids the
/// cancellation in `2 lnG(a) - lnG(2a)`.
pub fn ln_beta_symmetric(a: f64) -> f64 {
    if a < 10.0 {
        return 2.0 * ln_gamma(a) - ln_gamma(2.0 * a);
    }
    // B(a,a) = sqrt(2 pi) 2^{1/2 - 2a} a^{-1/2} exp(2 mu(a) - mu(2a))
    fn stirling_correction(x: f64) -> f64 {
        let x2 = x * x;
        (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x
    }
    0.5 * (2.0 * PI).ln() + (0.5 - 2.0 * a) * std::f64::consts::LN_2 - 0.5 * a.ln()
        + 2.0 * stirling_correction(a)
        - stirling_correction(2.0 * a)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    if a == b {
        ln_beta_symmetric(a)
    } else {
        ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
/// Converges fast for `u < (a+1)/(a+b+2)`.
fn beta_continued_fraction(a: f64, b: f64, u: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 100_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * u / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * u / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * u / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `log` of the lower tail `I_u(a, b)` evaluated directly by the continued
/// fraction; caller guarantees `u` is on the fast-converging side.
fn ln_lower_tail(a: f64, b: f64, u: f64, ln_b: f64) -> f64 {
    a * u.ln() + b * (-u).ln_1p() - ln_b + beta_continued_fraction(a, b, u).ln() - a.ln()
}

/// `(log I_u(a,b), log(1 - I_u(a,b)))`, each computed on the side where
/// it does not suffer cancellation. `ln_b` is `log B(a, b)`.
pub fn ln_inc_beta_pair(a: f64, b: f64, u: f64, ln_b: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if u >= 1.0 {
        return (0.0, f64::NEG_INFINITY);
    }
    if a == b && u == 0.5 {
        let h = 0.5f64.ln();
        return (h, h);
    }
    if u < (a + 1.0) / (a + b + 2.0) {
        let lo = ln_lower_tail(a, b, u, ln_b);
        (lo, ln_one_minus_exp(lo))
    } else {
        let hi = ln_lower_tail(b, a, 1.0 - u, ln_b);
        (ln_one_minus_exp(hi), hi)
    }
}

/// Regularized incomplete beta `I_u(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, u: f64) -> f64 {
    ln_inc_beta_pair(a, b, u, ln_beta(a, b)).0.exp()
}

/// `log(1 - exp(v))` for `v <= 0`.
#[inline]
pub fn ln_one_minus_exp(v: f64) -> f64 {
    if v > -std::f64::consts::LN_2 {
        (-v.exp_m1()).ln()
    } else {
        (-v.exp()).ln_1p()
    }
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal log density.
#[inline]
pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}
