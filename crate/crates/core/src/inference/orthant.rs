//! Selection probabilities of one split, as Gaussian orthant and box
//! integrals in the randomization.
//!
//! With i.i.d. N(0, tau^2) draws the vector (W(s*) - W(s_k))_k has covariance
//! tau^2 (I + 11^T). Conditioning on the shared draw W(s*) makes the
//! coordinates independent, so every orthant integral collapses to one
//! dimension: P = int phi(z) prod_k Phi(z - beta_k / tau) dz, with
//! beta_k = G(s_k) - G(s*). The integrand is log-concave, which the
//! integrator below relies on to locate its mass.
//!
//! All functions come in a `log_` form; the plain forms exponentiate.

use crate::normal::{log_cdf, log_cdf_diff, log_pdf, LN_SQRT_2PI};
use crate::quadrature::gl16;

// log Phi(x) > -5e-17 beyond this, so the factor is dropped.
const NEGLIGIBLE_Z: f64 = 8.3;
const WINDOW_DROP: f64 = 46.0;
const PANELS_PER_SIDE: usize = 4;

/// log of the integral of exp(h) over [lo, inf) for log-concave h.
/// `scale` is an upper bound on the width of the integrand's peak.
pub(crate) fn log_integral_logconcave<H: Fn(f64) -> f64>(h: H, lo: f64, scale: f64) -> f64 {
    log_integral_panels(h, lo, scale, PANELS_PER_SIDE)
}

fn log_integral_panels<H: Fn(f64) -> f64>(h: H, lo: f64, scale: f64, panels: usize) -> f64 {
    let hv = |x: f64| {
        if x < lo {
            f64::NEG_INFINITY
        } else {
            h(x)
        }
    };
    let peak = argmax_logconcave(&hv, lo, scale);
    let h_peak = hv(peak);
    if !h_peak.is_finite() {
        return h_peak;
    }
    let target = h_peak - WINDOW_DROP;
    let left = if lo.is_finite() && hv(lo) >= target {
        lo
    } else {
        crossing(&hv, peak, -scale, target, lo)
    };
    let right = crossing(&hv, peak, scale, target, f64::NEG_INFINITY);

    let mut terms = Vec::with_capacity(2 * panels * 16);
    graded_panels(&hv, peak, left, h_peak, panels, &mut terms);
    graded_panels(&hv, peak, right, h_peak, panels, &mut terms);
    crate::normal::log_sum_exp(&terms)
}

/// Golden-section search for the maximizer after bracketing by doubling.
fn argmax_logconcave<H: Fn(f64) -> f64>(h: &H, lo: f64, scale: f64) -> f64 {
    let start = if lo.is_finite() { lo.max(0.0) } else { 0.0 };
    let probe = scale * 1e-3;
    let f0 = h(start);
    let rising = h(start + probe) > f0;
    let falling_left = lo.is_finite() && start == lo && !rising;
    if falling_left {
        return lo;
    }
    // walk uphill with doubling steps
    let dir = if rising || h(start - probe) <= f0 {
        1.0
    } else {
        -1.0
    };
    let mut a = start;
    let mut b = start;
    let mut fb = f0;
    let mut step = scale;
    loop {
        let c = b + dir * step;
        let fc = h(c);
        if !(fc > fb) {
            let (x0, x1) = if dir > 0.0 { (a, c) } else { (c, a) };
            return golden(h, x0.max(lo), x1);
        }
        a = b;
        b = c;
        fb = fc;
        step *= 2.0;
        if step > 1e12 * scale {
            return b;
        }
    }
}

fn golden<H: Fn(f64) -> f64>(h: &H, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = h(c);
    let mut fd = h(d);
    for _ in 0..80 {
        if (b - a).abs() <= 1e-4 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = h(d);
        }
    }
    0.5 * (a + b)
}

/// Point on the `step` side of `peak` where h falls to `target`, clamped at
/// `lo` when walking left.
fn crossing<H: Fn(f64) -> f64>(h: &H, peak: f64, step: f64, target: f64, lo: f64) -> f64 {
    let mut inner = peak;
    let mut s = step;
    let mut outer = peak + s;
    loop {
        if step < 0.0 && outer <= lo {
            outer = lo;
            if h(outer) >= target {
                return lo;
            }
            break;
        }
        if h(outer) < target {
            break;
        }
        inner = outer;
        s *= 2.0;
        outer = peak + s;
    }
    for _ in 0..60 {
        let mid = 0.5 * (inner + outer);
        if h(mid) >= target {
            inner = mid;
        } else {
            outer = mid;
        }
        if (outer - inner).abs() < 1e-2 * step.abs() {
            break;
        }
    }
    outer
}

/// Gauss–Legendre panels between `peak` and `end`, narrow near the peak and
/// growing geometrically outward.
fn graded_panels<H: Fn(f64) -> f64>(
    h: &H,
    peak: f64,
    end: f64,
    h_peak: f64,
    panels: usize,
    out: &mut Vec<f64>,
) {
    let span = end - peak;
    if span == 0.0 {
        return;
    }
    // local width from where h drops by 2
    let local = {
        let t = h_peak - 2.0;
        let mut inner = 0.0_f64;
        let mut outer = 1.0_f64;
        if h(peak + span) >= t {
            1.0
        } else {
            for _ in 0..10 {
                let mid = 0.5 * (inner + outer);
                if h(peak + mid * span) >= t {
                    inner = mid;
                } else {
                    outer = mid;
                }
            }
            outer.max(1e-6)
        }
    };
    // widths w, w g, w g^2, ... summing to 1 with the first ~ local/2
    let first = (0.5 * local).min(1.0 / panels as f64);
    let ratio = growth_ratio(first, panels);
    let rule = gl16();
    let mut a = 0.0;
    let mut w = first;
    for p in 0..panels {
        let b = if p + 1 == panels {
            1.0
        } else {
            (a + w).min(1.0)
        };
        let (xa, xb) = (peak + a * span, peak + b * span);
        let half = 0.5 * (xb - xa);
        let mid = 0.5 * (xa + xb);
        let log_half = half.abs().ln();
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            out.push(h(mid + half * x) + wt.ln() + log_half);
        }
        a = b;
        w *= ratio;
        if a >= 1.0 {
            break;
        }
    }
}

/// g with first * (g^n - 1) / (g - 1) = 1.
fn growth_ratio(first: f64, n: usize) -> f64 {
    if first * n as f64 >= 1.0 {
        return 1.0;
    }
    let f = |g: f64| first * (g.powi(n as i32) - 1.0) / (g - 1.0) - 1.0;
    let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// log of int_{lo}^{inf} phi(z) prod_k Phi(z + a_k) dz.
/// `a` must be sorted ascending.
fn log_shared_draw_integral(a_sorted: &[f64], lo: f64) -> f64 {
    if a_sorted.is_empty() {
        return log_cdf(-lo);
    }
    let h = |z: f64| {
        let mut acc = log_pdf(z);
        let cut = NEGLIGIBLE_Z - z;
        for &ak in a_sorted {
            if ak >= cut {
                break;
            }
            acc += log_cdf(z + ak);
        }
        acc
    };
    log_integral_logconcave(h, lo, 1.0).min(0.0)
}

fn standardized_gaps(beta: &[f64], tau: f64) -> Vec<f64> {
    let mut a: Vec<f64> = beta.iter().map(|b| -b / tau).collect();
    a.sort_by(f64::total_cmp);
    a
}

/// log P(Z >= 0), Z ~ N(-beta, tau^2 (I + 11^T)): the probability that the
/// winner keeps its place given gain differences beta_k = G(s_k) - G(s*).
pub fn log_level_prob_full(beta: &[f64], tau: f64) -> f64 {
    match beta {
        [] => return 0.0,
        // W* - W ~ N(0, 2 tau^2)
        [b] => return log_cdf(-b / (tau * std::f64::consts::SQRT_2)),
        _ => {}
    }
    log_shared_draw_integral(&standardized_gaps(beta, tau), f64::NEG_INFINITY)
}

pub fn level_prob_full(beta: &[f64], tau: f64) -> f64 {
    log_level_prob_full(beta, tau).exp()
}

/// Adds the requirement that the winner's randomized gain clears `lambda`:
/// int_{(lambda - G*)/tau}^{inf} phi(z) prod_k Phi(z - beta_k/tau) dz.
pub fn log_level_prob_threshold(beta: &[f64], gain_star: f64, lambda: f64, tau: f64) -> f64 {
    let lo = (lambda - gain_star) / tau;
    if lo == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    log_shared_draw_integral(&standardized_gaps(beta, tau), lo)
}

pub fn level_prob_threshold(beta: &[f64], gain_star: f64, lambda: f64, tau: f64) -> f64 {
    log_level_prob_threshold(beta, gain_star, lambda, tau).exp()
}

/// The GM threshold draw is independent of the split draws, so the joint
/// probability is Phi((gm - lambda)/tau) times the plain level probability.
pub fn log_level_prob_cc(beta: &[f64], gm: f64, lambda: f64, tau: f64) -> f64 {
    log_cdf((gm - lambda) / tau) + log_level_prob_full(beta, tau)
}

pub fn level_prob_cc(beta: &[f64], gm: f64, lambda: f64, tau: f64) -> f64 {
    log_level_prob_cc(beta, gm, lambda, tau).exp()
}

/// Density of the fixed D coordinates times the box probability of the
/// free ones, for D ~ N(-beta, tau^2 (I + 11^T)).
///
/// `beta_free` and `beta_fixed` use the G(s_k) - G(s*) convention;
/// `d_fixed` are the observed D values being conditioned on and `bound` the
/// upper edge of the box (0, bound)^r. With nothing fixed the density factor
/// is 1, the bound is infinite and the result is the plain level probability.
pub fn log_level_prob_conditioned(
    beta_free: &[f64],
    beta_fixed: &[f64],
    d_fixed: &[f64],
    bound: f64,
    tau: f64,
) -> f64 {
    assert_eq!(beta_fixed.len(), d_fixed.len());
    let q = beta_fixed.len();
    if q == 0 {
        return log_level_prob_full(beta_free, tau);
    }
    let x: Vec<f64> = d_fixed.iter().zip(beta_fixed).map(|(d, b)| d + b).collect();
    let sum_x: f64 = x.iter().sum();
    let sum_x2: f64 = x.iter().map(|v| v * v).sum();
    let log_density = fixed_log_density(q, sum_x, sum_x2, tau);
    let shift = sum_x / (1.0 + q as f64);
    let means: Vec<f64> = beta_free.iter().map(|b| -b + shift).collect();
    log_density + log_box_prob(&means, bound, tau, q)
}

pub fn level_prob_conditioned(
    beta_free: &[f64],
    beta_fixed: &[f64],
    d_fixed: &[f64],
    bound: f64,
    tau: f64,
) -> f64 {
    log_level_prob_conditioned(beta_free, beta_fixed, d_fixed, bound, tau).exp()
}

/// log phi_q(x; 0, tau^2 (I + 11^T)) from sum(x) and sum(x^2).
pub(crate) fn fixed_log_density(q: usize, sum_x: f64, sum_x2: f64, tau: f64) -> f64 {
    let qf = q as f64;
    let quad = (sum_x2 - sum_x * sum_x / (1.0 + qf)).max(0.0) / (tau * tau);
    -qf * LN_SQRT_2PI - qf * tau.ln() - 0.5 * (1.0 + qf).ln() - 0.5 * quad
}

/// log P(0 < U_k < bound for all k), U ~ N(means, tau^2 (I + 11^T / (1+q))).
pub(crate) fn log_box_prob(means: &[f64], bound: f64, tau: f64, q: usize) -> f64 {
    let shared_var = tau * tau / (1.0 + q as f64);
    match means.len() {
        0 => 0.0,
        1 => {
            let sd = (tau * tau + shared_var).sqrt();
            let m = means[0];
            log_cdf_diff(-m / sd, (bound - m) / sd)
        }
        _ => {
            // shared component V ~ N(0, shared_var); given V the coordinates
            // are independent N(m_k + V, tau^2)
            let sv = shared_var.sqrt();
            let h = |v: f64| {
                let mut acc = log_pdf(v);
                let shared = v * sv;
                for m in means {
                    let c = m + shared;
                    acc += log_cdf_diff(-c / tau, (bound - c) / tau);
                }
                acc
            };
            log_integral_logconcave(h, f64::NEG_INFINITY, 1.0)
        }
    }
}
