//! Standard normal density, CDF and their logarithms, accurate far into
//! the tails.

use libm::erfc;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// ln(sqrt(2 pi))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// Below this the CDF is evaluated through the Mills ratio continued fraction.
const MILLS_CUTOFF: f64 = -8.0;

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Mills ratio (1 - Phi(z)) / phi(z) for z >= 8, by backward evaluation of
/// the Laplace continued fraction.
fn mills_ratio_upper(z: f64) -> f64 {
    let mut acc = z;
    for k in (1..=60).rev() {
        acc = z + k as f64 / acc;
    }
    1.0 / acc
}

/// Phi(x).
pub fn cdf(x: f64) -> f64 {
    if x < MILLS_CUTOFF {
        log_cdf(x).exp()
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// ln Phi(x), finite for every finite x.
pub fn log_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < MILLS_CUTOFF {
        log_pdf(x) + mills_ratio_upper(-x).ln()
    } else if x > 5.0 {
        (-0.5 * erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        (0.5 * erfc(-x * FRAC_1_SQRT_2)).ln()
    }
}

/// phi(x) / Phi(x), the hazard of the lower tail.
pub fn inverse_mills(x: f64) -> f64 {
    if x < MILLS_CUTOFF {
        1.0 / mills_ratio_upper(-x)
    } else {
        (log_pdf(x) - log_cdf(x)).exp()
    }
}

/// ln(Phi(b) - Phi(a)) for a < b, without cancellation in either tail.
pub fn log_cdf_diff(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        // both in the upper tail: use symmetry
        let hi = log_cdf(-a);
        let lo = log_cdf(-b);
        hi + log1m_exp(lo - hi)
    } else {
        let hi = log_cdf(b);
        let lo = log_cdf(a);
        hi + log1m_exp(lo - hi)
    }
}

/// ln(1 - e^x) for x <= 0.
pub fn log1m_exp(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Standard normal quantile.
pub fn quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Stable ln(sum exp(v)).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}
