//! Conditional pivots for a terminal mean, p-values and interval inversion.
//!
//! The statistic is T = nu^T Y with nu the unit contrast of the target leaf.
//! Given the selection record, T has density proportional to
//! phi(t; nu^T mu, sigma^2) F(t), where F is the product of per-level
//! selection factors evaluated at y(t). log F is tabulated once on a fixed
//! grid; each pivot evaluation is then a tilted trapezoid sum.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::levels::{
    choose_conditioning, gains_along_path_brute, path_levels, verify_candidates, LevelData,
};
use super::orthant::{
    fixed_log_density, log_box_prob, log_level_prob_full, log_level_prob_threshold,
};
use crate::error::{Result, RrtError};
use crate::grow::{fit_cart, gm, ProbeParams};
use crate::model::{build_target, Dataset, FittedTree, StoppingRule, TargetSpec, TreeHyperparams};
use crate::normal::{log_cdf, quantile};
use crate::quadrature::CompensatedSum;

/// Which selection event the pivot conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    /// Every split on the path, all D entries free.
    Full,
    /// Additionally condition on all but the `r` smallest D entries per level.
    Conditioned { r: usize },
    /// Thresholded-gain stopping; lambda comes from the tree.
    Threshold,
    /// Cost-complexity stopping; lambda and probe depth come from the tree.
    CostComplexity,
}

/// Variant name without its parameter, for configs and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Full,
    #[default]
    Conditioned,
    Threshold,
    Cc,
}

impl VariantKind {
    pub fn with_r(self, r: usize) -> Variant {
        match self {
            VariantKind::Full => Variant::Full,
            VariantKind::Conditioned => Variant::Conditioned { r },
            VariantKind::Threshold => Variant::Threshold,
            VariantKind::Cc => Variant::CostComplexity,
        }
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::Conditioned { r: 1 }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::Conditioned { r } => write!(f, "conditioned(r={r})"),
            Variant::Threshold => write!(f, "threshold"),
            Variant::CostComplexity => write!(f, "cc"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    /// Grid half-width in units of sigma.
    pub half_width: f64,
    /// Number of grid points (odd, so the observed value is a node).
    pub points: usize,
    /// Recompute gains from scratch at a few grid points and compare.
    pub verify_gains: bool,
    /// Evaluate log F exactly at every `factor_stride`-th grid point and
    /// fill the rest by cubic interpolation. 1 means exact everywhere.
    #[serde(default = "one")]
    pub factor_stride: usize,
}

fn one() -> usize {
    1
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            half_width: 15.0,
            points: 4001,
            verify_gains: false,
            factor_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureDiagnostics {
    pub half_width: f64,
    pub points: usize,
    pub widened: bool,
    pub log_f_min: f64,
    pub log_f_max: f64,
    pub log_f_observed: f64,
}

/// Cubic Hermite fill between equally spaced nodes, slopes from central
/// differences (one-sided at the ends). Nodes are reproduced exactly.
fn interpolate_nodes(nodes: &[f64], stride: usize) -> Vec<f64> {
    let k = nodes.len();
    let slope = |j: usize| match j {
        0 => nodes[1] - nodes[0],
        j if j == k - 1 => nodes[k - 1] - nodes[k - 2],
        j => 0.5 * (nodes[j + 1] - nodes[j - 1]),
    };
    let mut out = Vec::with_capacity((k - 1) * stride + 1);
    for j in 0..k - 1 {
        let (y0, y1, m0, m1) = (nodes[j], nodes[j + 1], slope(j), slope(j + 1));
        if !(y0.is_finite() && y1.is_finite() && m0.is_finite() && m1.is_finite()) {
            // fall back to linear so -inf stays -inf
            for i in 0..stride {
                let u = i as f64 / stride as f64;
                out.push(if i == 0 { y0 } else { (1.0 - u) * y0 + u * y1 });
            }
            continue;
        }
        for i in 0..stride {
            let u = i as f64 / stride as f64;
            let (u2, u3) = (u * u, u * u * u);
            out.push(
                (2.0 * u3 - 3.0 * u2 + 1.0) * y0
                    + (u3 - 2.0 * u2 + u) * m0
                    + (-2.0 * u3 + 3.0 * u2) * y1
                    + (u3 - u2) * m1,
            );
        }
    }
    out.push(nodes[k - 1]);
    out
}

/// Per-level data for the conditioned factor, reduced to running sums so
/// that each grid point costs O(r).
#[derive(Debug, Clone)]
struct CondLevel {
    tau: f64,
    q: usize,
    bound: f64,
    free: Vec<usize>,
    // winner increments
    u_star: f64,
    v_star: f64,
    // sums over fixed k of e, u, v and their products
    e1: f64,
    u1: f64,
    v1: f64,
    ee: f64,
    uu: f64,
    vv: f64,
    eu: f64,
    ev: f64,
    uv: f64,
}

impl CondLevel {
    fn new(level: &LevelData, r: usize) -> Self {
        let losers: Vec<usize> = level.loser_positions().collect();
        let cond = choose_conditioning(&level.d_vector, r);
        let winner = level.polys[level.chosen];
        let (u_star, v_star) = winner.increment_coeffs();
        let g0 = winner.at(0.0);
        let mut c = CondLevel {
            tau: level.tau,
            q: cond.fixed.len(),
            bound: cond.bound,
            free: cond.free.iter().map(|&i| losers[i]).collect(),
            u_star,
            v_star,
            e1: 0.0,
            u1: 0.0,
            v1: 0.0,
            ee: 0.0,
            uu: 0.0,
            vv: 0.0,
            eu: 0.0,
            ev: 0.0,
            uv: 0.0,
        };
        for (&pos, &d) in cond.fixed.iter().zip(&cond.fixed_values) {
            let p = level.polys[losers[pos]];
            let e = d - (g0 - p.at(0.0));
            let (u, v) = p.increment_coeffs();
            c.e1 += e;
            c.u1 += u;
            c.v1 += v;
            c.ee += e * e;
            c.uu += u * u;
            c.vv += v * v;
            c.eu += e * u;
            c.ev += e * v;
            c.uv += u * v;
        }
        c
    }

    fn log_factor(&self, level: &LevelData, delta: f64) -> f64 {
        let g_star = level.winner_gain(delta);
        if self.q == 0 {
            let beta: Vec<f64> = self
                .free
                .iter()
                .map(|&k| level.polys[k].at(delta) - g_star)
                .collect();
            return log_level_prob_full(&beta, self.tau);
        }
        let qf = self.q as f64;
        let d2 = delta * delta;
        let c = -(self.u_star * delta + self.v_star * d2);
        let sy = self.e1 + self.u1 * delta + self.v1 * d2;
        let syy = self.ee
            + 2.0 * delta * self.eu
            + d2 * (self.uu + 2.0 * self.ev)
            + 2.0 * d2 * delta * self.uv
            + d2 * d2 * self.vv;
        let sx = qf * c + sy;
        let sxx = qf * c * c + 2.0 * c * sy + syy;
        let shift = sx / (1.0 + qf);
        let means: Vec<f64> = self
            .free
            .iter()
            .map(|&k| g_star - level.polys[k].at(delta) + shift)
            .collect();
        fixed_log_density(self.q, sx, sxx, self.tau)
            + log_box_prob(&means, self.bound, self.tau, self.q)
    }
}

#[derive(Debug, Clone)]
struct CcContext {
    dataset: Dataset,
    probe: ProbeParams,
    lambda: f64,
}

#[derive(Debug, Clone)]
enum Factor {
    Full,
    Conditioned(Vec<CondLevel>),
    Threshold { lambda: f64 },
    CostComplexity(Box<CcContext>),
}

/// Frozen conditioning data for one terminal; maps a hypothesized
/// nu^T mu to a pivot value.
#[derive(Debug, Clone)]
pub struct PivotEvaluator {
    target: TargetSpec,
    levels: Vec<LevelData>,
    sigma: f64,
    variant: Variant,
    factor: Factor,
    settings: QuadratureSettings,
    grid: Vec<f64>,
    log_f: Vec<f64>,
    observed_index: usize,
    widened: bool,
}

impl PivotEvaluator {
    pub fn new(
        tree: &FittedTree,
        dataset: &Dataset,
        terminal: usize,
        sigma: f64,
        variant: Variant,
        settings: QuadratureSettings,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(RrtError::InvalidInput(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if settings.points < 3 || settings.points.is_multiple_of(2) || !(settings.half_width > 0.0)
        {
            return Err(RrtError::InvalidInput(
                "quadrature needs an odd number of points >= 3 and a positive half-width".into(),
            ));
        }
        let stride = settings.factor_stride;
        if stride == 0
            || !(settings.points / 2).is_multiple_of(stride)
            || settings.points / 2 < 2 * stride
        {
            return Err(RrtError::InvalidInput(format!(
                "factor_stride {stride} must divide (points - 1) / 2 = {} at least twice",
                settings.points / 2
            )));
        }
        let covered: usize = tree.terminals.iter().map(|t| t.region.len()).sum();
        if covered != dataset.n() {
            return Err(RrtError::Integrity(format!(
                "tree covers {covered} rows but the dataset has {}",
                dataset.n()
            )));
        }
        let target = build_target(tree, dataset, terminal)?;
        let levels = path_levels(tree, dataset, &target)?;
        verify_candidates(tree, dataset, &levels)?;
        if levels.iter().any(|l| !(l.tau > 0.0)) {
            return Err(RrtError::Precondition(
                "selective inference needs tau > 0 at every node on the path".into(),
            ));
        }
        let factor = select_factor(tree, dataset, &levels, variant)?;
        if settings.verify_gains {
            verify_gain_polys(
                &levels,
                dataset,
                &target,
                tree.hyperparams.min_leaf_size,
                sigma,
            )?;
        }
        let mut ev = PivotEvaluator {
            target,
            levels,
            sigma,
            variant,
            factor,
            settings,
            grid: Vec::new(),
            log_f: Vec::new(),
            observed_index: settings.points / 2,
            widened: false,
        };
        ev.tabulate(settings.half_width);
        if !ev.grid_ok() {
            ev.widened = true;
            ev.tabulate(2.0 * settings.half_width);
            if !ev.grid_ok() {
                return Err(RrtError::Numerical(format!(
                    "selection factor is not finite on the grid (log F at observed = {})",
                    ev.log_f[ev.observed_index]
                )));
            }
        }
        Ok(ev)
    }

    fn tabulate(&mut self, half_width: f64) {
        let m = self.settings.points;
        let mid = m / 2;
        let h = half_width * self.sigma / mid as f64;
        let t_obs = self.target.observed_stat;
        self.grid = (0..m)
            .map(|i| t_obs + (i as f64 - mid as f64) * h)
            .collect();
        self.grid[mid] = t_obs;
        let this = &*self;
        let stride = self.settings.factor_stride;
        let nodes = (m - 1) / stride + 1;
        let exact = crate::par::map_range(nodes, |j| {
            this.log_factor_delta((j as f64 * stride as f64 - mid as f64) * h)
        });
        self.log_f = if stride == 1 {
            exact
        } else {
            interpolate_nodes(&exact, stride)
        };
        self.settings.half_width = half_width;
    }

    fn grid_ok(&self) -> bool {
        let at_obs = self.log_f[self.observed_index];
        at_obs.is_finite()
            && self
                .log_f
                .iter()
                .all(|v| !v.is_nan() && *v != f64::INFINITY)
    }

    fn log_factor_delta(&self, delta: f64) -> f64 {
        self.level_factors_delta(delta).iter().sum()
    }

    fn level_factors_delta(&self, delta: f64) -> Vec<f64> {
        match &self.factor {
            Factor::Full => self
                .levels
                .iter()
                .map(|l| log_level_prob_full(&l.beta(delta), l.tau))
                .collect(),
            Factor::Conditioned(cl) => self
                .levels
                .iter()
                .zip(cl)
                .map(|(l, c)| c.log_factor(l, delta))
                .collect(),
            Factor::Threshold { lambda } => self
                .levels
                .iter()
                .map(|l| {
                    log_level_prob_threshold(&l.beta(delta), l.winner_gain(delta), *lambda, l.tau)
                })
                .collect(),
            Factor::CostComplexity(ctx) => {
                let y_t = (ctx.lambda != f64::NEG_INFINITY)
                    .then(|| self.target.response_at(self.target.observed_stat + delta));
                self.levels
                    .iter()
                    .map(|l| {
                        let stop = match &y_t {
                            Some(y) => {
                                let g = gm(&ctx.dataset, y, &l.region, &ctx.probe).value;
                                log_cdf((g - ctx.lambda) / l.tau)
                            }
                            None => 0.0,
                        };
                        stop + log_level_prob_full(&l.beta(delta), l.tau)
                    })
                    .collect()
            }
        }
    }

    /// log F(t): the log selection factor at statistic value `t`.
    pub fn selection_log_factor(&self, t: f64) -> f64 {
        self.log_factor_delta(t - self.target.observed_stat)
    }

    /// Per-level log factors at `t`, root first.
    pub fn level_log_factors(&self, t: f64) -> Vec<f64> {
        self.level_factors_delta(t - self.target.observed_stat)
    }

    /// P(T <= t_obs | selection) under nu^T mu = mu0.
    pub fn pivot(&self, mu0: f64) -> f64 {
        let (lower, upper) = self.tail_masses(mu0);
        lower / (lower + upper)
    }

    /// Unnormalized trapezoid masses left and right of the observed value,
    /// after a common max shift.
    fn tail_masses(&self, mu0: f64) -> (f64, f64) {
        let m = self.grid.len();
        let mid = self.observed_index;
        let inv = 0.5 / (self.sigma * self.sigma);
        let log_term = |i: usize| {
            let z = self.grid[i] - mu0;
            self.log_f[i] - z * z * inv
        };
        let shift = (0..m).map(log_term).fold(f64::NEG_INFINITY, f64::max);
        let mut lower = CompensatedSum::default();
        let mut upper = CompensatedSum::default();
        for i in 0..m {
            let mut w = (log_term(i) - shift).exp();
            if i == 0 || i == m - 1 {
                w *= 0.5;
            }
            if i < mid {
                lower.add(w);
            } else if i > mid {
                upper.add(w);
            } else {
                lower.add(0.5 * w);
                upper.add(0.5 * w);
            }
        }
        // Euler-Maclaurin end correction at the split: -h^2/12 f'(t_obs),
        // with f' from a central difference (the common factor h dropped)
        let slope = (log_term(mid + 1) - shift).exp() - (log_term(mid - 1) - shift).exp();
        let total = lower.value() + upper.value();
        let lower = (lower.value() - slope / 24.0).clamp(0.0, total);
        (lower, total - lower)
    }

    /// Two-sided p-value for nu^T mu = 0.
    pub fn p_value(&self) -> f64 {
        let (lower, upper) = self.tail_masses(0.0);
        let total = lower + upper;
        (2.0 * lower.min(upper) / total).min(1.0)
    }

    /// Equal-tailed interval for the leaf mean mu_R at level 1 - alpha.
    pub fn invert_ci(&self, alpha: f64) -> Result<(f64, f64)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RrtError::InvalidInput(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let z = quantile(1.0 - alpha / 2.0);
        let t = self.target.observed_stat;
        let s = self.sigma;
        let lo = self.solve(1.0 - alpha / 2.0, t - z * s);
        let hi = self.solve(alpha / 2.0, t + z * s);
        let scale = self.target.sqrt_n();
        match (lo, hi) {
            (Some(l), Some(u)) => Ok((l / scale, u / scale)),
            (l, u) => Err(RrtError::UnboundedInterval {
                lower: l.map(|v| v / scale),
                upper: u.map(|v| v / scale),
            }),
        }
    }

    /// Root of pivot(mu) = level, starting near `start`. Pivot is decreasing.
    fn solve(&self, level: f64, start: f64) -> Option<f64> {
        let s = self.sigma;
        let t = self.target.observed_stat;
        let limit = 50.0 * s;
        let f = |mu: f64| self.pivot(mu) - level;
        let f0 = f(start);
        if f0 == 0.0 {
            return Some(start);
        }
        // f decreasing: f0 > 0 means the root is to the right
        let dir = if f0 > 0.0 { 1.0 } else { -1.0 };
        let mut inner = start;
        let mut step = s;
        let mut outer;
        loop {
            outer = inner + dir * step;
            if (outer - t).abs() > limit {
                outer = t + dir * limit;
                if f(outer) * dir > 0.0 {
                    return None;
                }
                break;
            }
            if f(outer) * dir <= 0.0 {
                break;
            }
            inner = outer;
            step *= 2.0;
        }
        let (mut a, mut b) = if dir > 0.0 {
            (inner, outer)
        } else {
            (outer, inner)
        };
        let tol = 1e-4 * s;
        while b - a > tol {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn levels(&self) -> &[LevelData] {
        &self.levels
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn log_factors(&self) -> &[f64] {
        &self.log_f
    }

    pub fn diagnostics(&self) -> QuadratureDiagnostics {
        let finite = self.log_f.iter().copied().filter(|v| v.is_finite());
        QuadratureDiagnostics {
            half_width: self.settings.half_width,
            points: self.settings.points,
            widened: self.widened,
            log_f_min: finite.clone().fold(f64::INFINITY, f64::min),
            log_f_max: finite.fold(f64::NEG_INFINITY, f64::max),
            log_f_observed: self.log_f[self.observed_index],
        }
    }
}

fn select_factor(
    tree: &FittedTree,
    dataset: &Dataset,
    levels: &[LevelData],
    variant: Variant,
) -> Result<Factor> {
    let free_rule = match tree.stopping_rule {
        StoppingRule::FixedDepth => true,
        StoppingRule::ThresholdGain { lambda } | StoppingRule::CostComplexity { lambda, .. } => {
            lambda == f64::NEG_INFINITY
        }
    };
    let mismatch = |name: &str| {
        RrtError::Precondition(format!(
            "variant {name} does not match the tree's stopping rule {:?}",
            tree.stopping_rule
        ))
    };
    Ok(match variant {
        Variant::Full => {
            if !free_rule {
                return Err(mismatch("full"));
            }
            Factor::Full
        }
        Variant::Conditioned { r } => {
            if r == 0 {
                return Err(RrtError::InvalidInput("r must be at least 1".into()));
            }
            if !free_rule {
                return Err(mismatch("conditioned"));
            }
            Factor::Conditioned(levels.iter().map(|l| CondLevel::new(l, r)).collect())
        }
        Variant::Threshold => match tree.stopping_rule {
            StoppingRule::ThresholdGain { lambda } => Factor::Threshold { lambda },
            StoppingRule::FixedDepth => Factor::Threshold {
                lambda: f64::NEG_INFINITY,
            },
            _ => return Err(mismatch("threshold")),
        },
        Variant::CostComplexity => match tree.stopping_rule {
            StoppingRule::CostComplexity {
                lambda,
                probe_depth,
            } => Factor::CostComplexity(Box::new(CcContext {
                dataset: dataset.clone(),
                probe: ProbeParams {
                    depth: probe_depth,
                    min_split_size: tree.hyperparams.min_split_size,
                    min_leaf_size: tree.hyperparams.min_leaf_size,
                },
                lambda,
            })),
            _ => return Err(mismatch("cc")),
        },
    })
}

fn verify_gain_polys(
    levels: &[LevelData],
    dataset: &Dataset,
    target: &TargetSpec,
    min_leaf: usize,
    sigma: f64,
) -> Result<()> {
    for k in [-10.0, -1.0, 0.0, 2.5, 10.0] {
        let t = target.observed_stat + k * sigma;
        let fast = super::levels::gains_along_path(levels, target, t);
        let slow = gains_along_path_brute(levels, dataset, target, min_leaf, t)?;
        for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
            if (a - b).abs() > 1e-7 * (1.0 + a.abs().max(b.abs())) {
                return Err(RrtError::Integrity(format!(
                    "gain polynomial disagrees with direct recomputation at t = {t}: {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

/// Residual SD from a deep deterministic CART fit. Plug-in only: the
/// pivots are exact for known sigma.
pub fn estimate_sigma(dataset: &Dataset) -> Result<f64> {
    let tree = fit_cart(
        dataset,
        TreeHyperparams {
            max_depth: 10,
            min_split_size: 10,
            min_leaf_size: 5,
        },
    )?;
    let n = dataset.n();
    let m = tree.n_terminals();
    if n <= m {
        return Err(RrtError::Precondition(format!(
            "cannot estimate sigma: {n} rows for {m} leaves"
        )));
    }
    let y = dataset.y();
    let sse: f64 = tree.terminals.iter().map(|t| t.region.sse(y)).sum();
    let s = (sse / (n - m) as f64).sqrt();
    if !(s > 0.0) {
        return Err(RrtError::Numerical("estimated sigma is zero".into()));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grow::{grow, GrowConfig};
    use crate::normal::cdf;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let y = (0..n)
            .map(|i| {
                let mu = if cols[0][i] <= 0.0 { 2.0 } else { 0.0 };
                mu + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Dataset::new(cols, y, None).unwrap()
    }

    fn cfg(depth: usize, tau: f64, seed: u64) -> GrowConfig {
        GrowConfig {
            max_depth: depth,
            min_split_size: 10,
            min_leaf_size: 5,
            ..GrowConfig::simulation_preset(tau, seed)
        }
    }

    #[test]
    fn root_only_tree_gives_wald() {
        let ds = data(40, 2, 1);
        let mut c = cfg(1, 1.0, 1);
        c.min_split_size = 1000;
        let tree = grow(&ds, &c).unwrap();
        assert_eq!(tree.n_terminals(), 1);
        let ev =
            PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::Full, Default::default()).unwrap();
        let t = ev.target().observed_stat;
        for mu0 in [t - 1.0, t, t + 0.3] {
            assert_relative_eq!(ev.pivot(mu0), cdf(t - mu0), epsilon = 1e-6);
        }
        let (l, u) = ev.invert_ci(0.1).unwrap();
        let ybar = t / 40f64.sqrt();
        let half = 1.6448536269514722 / 40f64.sqrt();
        assert!((l - (ybar - half)).abs() < 1e-3);
        assert!((u - (ybar + half)).abs() < 1e-3);
    }

    #[test]
    fn strided_factor_matches_exact() {
        let ds = data(40, 2, 11);
        let tree = grow(&ds, &cfg(2, 1.0, 3)).unwrap();
        let coarse = QuadratureSettings {
            factor_stride: 20,
            ..Default::default()
        };
        for k in 0..tree.n_terminals() {
            let a =
                PivotEvaluator::new(&tree, &ds, k, 1.0, Variant::Full, Default::default()).unwrap();
            let b = PivotEvaluator::new(&tree, &ds, k, 1.0, Variant::Full, coarse).unwrap();
            let (la, ua) = a.invert_ci(0.1).unwrap();
            let (lb, ub) = b.invert_ci(0.1).unwrap();
            assert!(
                (la - lb).abs() < 1e-3 && (ua - ub).abs() < 1e-3,
                "{la} {lb} {ua} {ub}"
            );
            for (i, (x, y)) in a.log_factors().iter().zip(b.log_factors()).enumerate() {
                if i % 20 == 0 {
                    assert_eq!(x, y);
                }
            }
        }
        let bad = QuadratureSettings {
            factor_stride: 7,
            ..Default::default()
        };
        assert!(PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::Full, bad).is_err());
    }

    #[test]
    fn pivot_decreasing_and_in_unit_interval() {
        let ds = data(80, 3, 2);
        let tree = grow(&ds, &cfg(2, 1.0, 7)).unwrap();
        let ev = PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::default(), Default::default())
            .unwrap();
        let t = ev.target().observed_stat;
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let mu = t - 5.0 + 0.1 * i as f64;
            let p = ev.pivot(mu);
            assert!((0.0..=1.0).contains(&p));
            assert!(p < prev, "not decreasing at {mu}");
            prev = p;
        }
    }

    #[test]
    fn ci_endpoints_hit_their_levels() {
        let ds = data(80, 3, 3);
        let tree = grow(&ds, &cfg(2, 1.0, 3)).unwrap();
        for leaf in 0..tree.n_terminals() {
            let ev = PivotEvaluator::new(
                &tree,
                &ds,
                leaf,
                1.0,
                Variant::default(),
                Default::default(),
            )
            .unwrap();
            let (l, u) = ev.invert_ci(0.1).unwrap();
            let s = ev.target().sqrt_n();
            assert!((ev.pivot(l * s) - 0.95).abs() < 1e-3);
            assert!((ev.pivot(u * s) - 0.05).abs() < 1e-3);
        }
    }

    #[test]
    fn conditioned_with_large_r_matches_full() {
        let ds = data(60, 2, 4);
        let tree = grow(&ds, &cfg(2, 1.0, 4)).unwrap();
        let full =
            PivotEvaluator::new(&tree, &ds, 1, 1.0, Variant::Full, Default::default()).unwrap();
        let cond = PivotEvaluator::new(
            &tree,
            &ds,
            1,
            1.0,
            Variant::Conditioned { r: 10_000 },
            Default::default(),
        )
        .unwrap();
        for (a, b) in full.log_factors().iter().zip(cond.log_factors()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn conditioned_factor_matches_direct_formula() {
        let ds = data(60, 2, 5);
        let tree = grow(&ds, &cfg(2, 1.0, 5)).unwrap();
        let ev = PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::default(), Default::default())
            .unwrap();
        let t0 = ev.target().observed_stat;
        for dt in [-3.0, 0.0, 1.7] {
            let got = ev.level_log_factors(t0 + dt);
            for (l, g) in ev.levels().iter().zip(got) {
                let beta = l.beta(dt);
                let c = choose_conditioning(&l.d_vector, 1);
                let bf: Vec<f64> = c.free.iter().map(|&i| beta[i]).collect();
                let bx: Vec<f64> = c.fixed.iter().map(|&i| beta[i]).collect();
                let want = super::super::orthant::log_level_prob_conditioned(
                    &bf,
                    &bx,
                    &c.fixed_values,
                    c.bound,
                    l.tau,
                );
                assert_relative_eq!(g, want, max_relative = 1e-8, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn verify_flag_accepts_consistent_data() {
        let ds = data(60, 2, 6);
        let tree = grow(&ds, &cfg(2, 1.0, 6)).unwrap();
        let settings = QuadratureSettings {
            verify_gains: true,
            ..Default::default()
        };
        PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::Full, settings).unwrap();
    }

    #[test]
    fn positive_factor_at_observed() {
        let ds = data(100, 3, 8);
        let tree = grow(&ds, &cfg(3, 0.5, 8)).unwrap();
        for leaf in 0..tree.n_terminals() {
            let ev = PivotEvaluator::new(
                &tree,
                &ds,
                leaf,
                1.0,
                Variant::default(),
                Default::default(),
            )
            .unwrap();
            assert!(ev
                .selection_log_factor(ev.target().observed_stat)
                .is_finite());
        }
    }

    #[test]
    fn p_value_definition() {
        let ds = data(60, 2, 9);
        let tree = grow(&ds, &cfg(2, 1.0, 9)).unwrap();
        let ev = PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::default(), Default::default())
            .unwrap();
        let p = ev.pivot(0.0);
        assert_relative_eq!(ev.p_value(), 2.0 * p.min(1.0 - p), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = data(60, 2, 10);
        let tree = grow(&ds, &cfg(2, 1.0, 10)).unwrap();
        assert!(
            PivotEvaluator::new(&tree, &ds, 0, 0.0, Variant::Full, Default::default()).is_err()
        );
        assert!(
            PivotEvaluator::new(&tree, &ds, 99, 1.0, Variant::Full, Default::default()).is_err()
        );
        assert!(PivotEvaluator::new(
            &tree,
            &ds,
            0,
            1.0,
            Variant::CostComplexity,
            Default::default()
        )
        .is_err());
        let ev =
            PivotEvaluator::new(&tree, &ds, 0, 1.0, Variant::Full, Default::default()).unwrap();
        assert!(ev.invert_ci(1.5).is_err());
    }

    #[test]
    fn sigma_estimate_reasonable() {
        let ds = data(400, 2, 11);
        let s = estimate_sigma(&ds).unwrap();
        assert!(s > 0.7 && s < 1.3, "{s}");
    }
}
