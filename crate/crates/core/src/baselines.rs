//! Comparison methods: naive Wald intervals on a CART tree, and the UV
//! (data fission) decomposition that fits on one noisy copy of y and
//! infers on an independent one.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RrtError};
use crate::grow::{grow, GrowConfig};
use crate::model::{Dataset, FittedTree};
use crate::normal::quantile;

fn check_level(sigma: f64, alpha: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(RrtError::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(RrtError::InvalidInput(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Wald interval ybar_R +- z sigma / sqrt(n_R), ignoring selection.
pub fn naive_ci(
    tree: &FittedTree,
    dataset: &Dataset,
    terminal: usize,
    sigma: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    check_level(sigma, alpha)?;
    let term = tree.terminal(terminal)?;
    let n_r = term.region.len();
    if n_r == 0 {
        return Err(RrtError::Precondition("empty terminal region".into()));
    }
    let mean = term.region.mean(dataset.y());
    let half = wald_half_width(sigma, n_r, alpha);
    Ok((mean - half, mean + half))
}

fn wald_half_width(sd: f64, n: usize, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 0.0;
    }
    quantile(1.0 - alpha / 2.0) * sd / (n as f64).sqrt()
}

/// U = y + W and V = y - W / gamma with W ~ N(0, sigma^2 gamma I).
#[derive(Debug, Clone, PartialEq)]
pub struct UVPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub gamma: f64,
}

impl UVPair {
    /// max_i |u_i + gamma v_i - (1 + gamma) y_i|
    pub fn reconstruction_error(&self, y: &[f64]) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .zip(y)
            .map(|((u, v), y)| (u + self.gamma * v - (1.0 + self.gamma) * y).abs())
            .fold(0.0, f64::max)
    }
}

pub fn uv_decompose<R: Rng + ?Sized>(
    y: &[f64],
    sigma: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<UVPair> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(RrtError::InvalidInput(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(RrtError::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let sd = sigma * gamma.sqrt();
    let mut u = Vec::with_capacity(y.len());
    let mut v = Vec::with_capacity(y.len());
    for &yi in y {
        let w = sd * rng.sample::<f64, _>(StandardNormal);
        u.push(yi + w);
        v.push(yi - w / gamma);
    }
    Ok(UVPair { u, v, gamma })
}

#[derive(Debug, Clone)]
pub struct UvFit {
    /// Deterministic CART grown on U.
    pub tree: FittedTree,
    pub pair: UVPair,
    /// Mean of V over each terminal.
    pub v_means: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    /// Terminals with fewer than two rows, flagged for diagnostics.
    pub small_leaves: Vec<usize>,
}

/// Grow deterministic CART on U (size limits from `config`), then report
/// V-mean Wald intervals with variance sigma^2 (1 + 1/gamma) / n_R.
pub fn uv_pipeline<R: Rng + ?Sized>(
    dataset: &Dataset,
    gamma: f64,
    config: &GrowConfig,
    sigma: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<UvFit> {
    check_level(sigma, alpha)?;
    let pair = uv_decompose(dataset.y(), sigma, gamma, rng)?;
    let on_u = dataset.with_response(pair.u.clone())?;
    let tree = grow(&on_u, &config.clone().deterministic())?;
    let sd = sigma * (1.0 + 1.0 / gamma).sqrt();
    let mut v_means = Vec::with_capacity(tree.n_terminals());
    let mut intervals = Vec::with_capacity(tree.n_terminals());
    let mut small_leaves = Vec::new();
    for (k, term) in tree.terminals.iter().enumerate() {
        let n_r = term.region.len();
        if n_r < 2 {
            small_leaves.push(k);
        }
        let m = term.region.mean(&pair.v);
        let half = wald_half_width(sd, n_r, alpha);
        v_means.push(m);
        intervals.push((m - half, m + half));
    }
    Ok(UvFit {
        tree,
        pair,
        v_means,
        intervals,
        small_leaves,
    })
}
