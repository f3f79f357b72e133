//! Simulation harness: the three-level tree DGP, per-replicate metrics and
//! a replicated experiment runner over a grid of noise levels and
//! dimensions.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{naive_ci, uv_pipeline};
use crate::error::{Result, RrtError};
use crate::grow::{fit_cart, grow, GrowConfig, TauRule};
use crate::inference::{PivotEvaluator, QuadratureSettings, VariantKind};
use crate::model::{Dataset, FittedTree, Region, StoppingRule, TreeHyperparams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Noise {
    Gaussian {
        sigma: f64,
    },
    /// Laplace with scale sigma / sqrt 2, so its SD is sigma.
    Laplace {
        sigma: f64,
    },
}

impl Noise {
    pub fn sd(&self) -> f64 {
        match *self {
            Noise::Gaussian { sigma } | Noise::Laplace { sigma } => sigma,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Noise::Gaussian { .. } => "gaussian",
            Noise::Laplace { .. } => "laplace",
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Noise::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            Noise::Laplace { sigma } => {
                let scale = sigma / std::f64::consts::SQRT_2;
                // inverse CDF on u in (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DGPConfig {
    pub n: usize,
    pub p: usize,
    pub a: f64,
    pub b: f64,
    pub noise: Noise,
    pub seed: u64,
}

/// b * 1(x1 <= 0) * (1 + a 1(x2 > 0) + 1(x2 x3 > 0))
pub fn mean_function(x: &[f64], a: f64, b: f64) -> f64 {
    if x[0] > 0.0 {
        return 0.0;
    }
    let mut m = 1.0;
    if x[1] > 0.0 {
        m += a;
    }
    if x[1] * x[2] > 0.0 {
        m += 1.0;
    }
    b * m
}

/// Draw X (i.i.d. N(0, 1)), mu and y = mu + noise.
pub fn generate<R: Rng + ?Sized>(config: &DGPConfig, rng: &mut R) -> Result<(Dataset, Vec<f64>)> {
    if config.n == 0 || config.p < 3 {
        return Err(RrtError::InvalidInput(
            "the DGP needs n >= 1 and p >= 3".into(),
        ));
    }
    if !(config.noise.sd() > 0.0) {
        return Err(RrtError::InvalidInput("noise SD must be positive".into()));
    }
    let (n, p) = (config.n, config.p);
    let mut columns = vec![Vec::with_capacity(n); p];
    for _ in 0..n {
        for col in columns.iter_mut() {
            col.push(rng.sample::<f64, _>(StandardNormal));
        }
    }
    let mu: Vec<f64> = (0..n)
        .map(|i| {
            mean_function(
                &[columns[0][i], columns[1][i], columns[2][i]],
                config.a,
                config.b,
            )
        })
        .collect();
    let y = mu.iter().map(|m| m + config.noise.sample(rng)).collect();
    Ok((Dataset::new(columns, y, None)?, mu))
}

/// `generate` with an RNG seeded from `config.seed`.
pub fn generate_seeded(config: &DGPConfig) -> Result<(Dataset, Vec<f64>)> {
    generate(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// Fresh response at the same X: mu + new noise.
pub fn test_response<R: Rng + ?Sized>(mu: &[f64], noise: &Noise, rng: &mut R) -> Vec<f64> {
    mu.iter().map(|m| m + noise.sample(rng)).collect()
}

/// Mean of mu over the region: nu_R^T mu / sqrt(n_R).
pub fn true_leaf_mean(mu: &[f64], region: &Region) -> Result<f64> {
    if region.is_empty() {
        return Err(RrtError::Precondition("empty region".into()));
    }
    if let Some(&i) = region.members.iter().find(|&&i| i >= mu.len()) {
        return Err(RrtError::OutOfRange {
            index: i,
            len: mu.len(),
        });
    }
    Ok(region.mean(mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub coverage: f64,
    /// Mean length over bounded intervals; NaN if none is bounded.
    pub avg_ci_length: f64,
    pub test_mse: f64,
    pub n_terminals: usize,
    pub miscovered_count: usize,
    pub unbounded_count: usize,
}

/// Score one fitted tree. `leaf_values[k]` is the prediction for terminal
/// k and `cis[k]` its interval (sides may be infinite). The test response
/// shares the training X.
pub fn evaluate(
    tree: &FittedTree,
    leaf_values: &[f64],
    cis: &[(f64, f64)],
    mu: &[f64],
    test_y: &[f64],
) -> Result<Evaluation> {
    let m = tree.n_terminals();
    if cis.len() != m || leaf_values.len() != m {
        return Err(RrtError::Schema(format!(
            "{} intervals and {} predictions for {m} terminals",
            cis.len(),
            leaf_values.len()
        )));
    }
    if test_y.len() != mu.len() {
        return Err(RrtError::InvalidInput(
            "test response length differs from mu".into(),
        ));
    }
    let mut miscovered = 0;
    let mut unbounded = 0;
    let mut length = 0.0;
    for (term, &(l, u)) in tree.terminals.iter().zip(cis) {
        let target = true_leaf_mean(mu, &term.region)?;
        if !(l <= target && target <= u) {
            miscovered += 1;
        }
        if l.is_finite() && u.is_finite() {
            length += u - l;
        } else {
            unbounded += 1;
        }
    }
    let assign = tree.leaf_assignment(mu.len());
    let sse: f64 = test_y
        .iter()
        .zip(&assign)
        .map(|(y, &k)| (y - leaf_values[k]).powi(2))
        .sum();
    let bounded = m - unbounded;
    Ok(Evaluation {
        coverage: (m - miscovered) as f64 / m as f64,
        avg_ci_length: if bounded > 0 {
            length / bounded as f64
        } else {
            f64::NAN
        },
        test_mse: sse / mu.len() as f64,
        n_terminals: m,
        miscovered_count: miscovered,
        unbounded_count: unbounded,
    })
}

fn default_r() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    /// Randomized tree with tau = c * sigma and selective intervals.
    Rrt {
        c: f64,
        #[serde(default)]
        variant: VariantKind,
        #[serde(default = "default_r")]
        r: usize,
    },
    /// Deterministic CART with Wald intervals; its MSE is plain CART's.
    Naive,
    Uv {
        gamma: f64,
    },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Rrt { c, variant, r } => match variant {
                VariantKind::Conditioned => format!("rrt(c={c},conditioned,r={r})"),
                v => format!("rrt(c={c},{})", format!("{v:?}").to_lowercase()),
            },
            Method::Naive => "naive".into(),
            Method::Uv { gamma } => format!("uv(gamma={gamma})"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Method::Rrt { c, variant, r } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(RrtError::Config(format!("rrt needs c > 0, got {c}")));
                }
                if !matches!(variant, VariantKind::Full | VariantKind::Conditioned) {
                    return Err(RrtError::Config(
                        "simulations grow fixed-depth trees; use variant full or conditioned"
                            .into(),
                    ));
                }
                if r == 0 {
                    return Err(RrtError::Config("r must be >= 1".into()));
                }
                Ok(())
            }
            Method::Naive => Ok(()),
            Method::Uv { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(RrtError::Config(format!("uv needs gamma > 0, got {gamma}")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub p: Vec<usize>,
    pub a: f64,
    pub b: f64,
    pub noise: String,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub tree: TreeHyperparams,
    pub dgp: GridSpec,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub quadrature: Option<QuadratureSettings>,
}

/// One point of the DGP grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub p: usize,
    pub a: f64,
    pub b: f64,
    pub noise: Noise,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "{}/p={}/sigma={}",
            self.noise.family(),
            self.p,
            self.noise.sd()
        )
    }

    pub fn dgp(&self, seed: u64) -> DGPConfig {
        DGPConfig {
            n: self.n,
            p: self.p,
            a: self.a,
            b: self.b,
            noise: self.noise,
            seed,
        }
    }
}

const INTRO_TREE: TreeHyperparams = TreeHyperparams {
    max_depth: 3,
    min_split_size: 25,
    min_leaf_size: 10,
};

const SIMULATION_TREE: TreeHyperparams = TreeHyperparams {
    max_depth: 3,
    min_split_size: 50,
    min_leaf_size: 20,
};

const RRT1: Method = Method::Rrt {
    c: 1.0,
    variant: VariantKind::Conditioned,
    r: 1,
};

impl ExperimentConfig {
    pub const PRESETS: [&'static str; 7] = [
        "smoke",
        "fig1",
        "fig2",
        "sigma-grid",
        "p-grid",
        "laplace",
        "pivot-check",
    ];

    /// Named experiment settings.
    pub fn preset(name: &str) -> Option<Self> {
        let grid = |p: Vec<usize>, noise: &str, sigma: Vec<f64>| GridSpec {
            n: 200,
            p,
            a: 1.0,
            b: 2.0,
            noise: noise.into(),
            sigma,
        };
        let base = |name: &str, reps, tree, dgp, methods| ExperimentConfig {
            name: name.into(),
            reps,
            seed: 20_240_601,
            alpha: 0.1,
            tree,
            dgp,
            methods,
            quadrature: None,
        };
        let three = vec![RRT1, Method::Naive, Method::Uv { gamma: 0.1 }];
        Some(match name {
            "smoke" => base(
                name,
                50,
                INTRO_TREE,
                grid(vec![5], "gaussian", vec![2.0]),
                three,
            ),
            "fig1" => base(
                name,
                500,
                INTRO_TREE,
                grid(vec![5], "gaussian", vec![2.0]),
                three,
            ),
            "fig2" => {
                let mut m = vec![RRT1];
                m.extend([0.1, 0.2, 0.3, 0.4, 0.5].map(|gamma| Method::Uv { gamma }));
                base(
                    name,
                    500,
                    INTRO_TREE,
                    grid(vec![5], "gaussian", vec![2.0]),
                    m,
                )
            }
            "sigma-grid" => base(
                name,
                500,
                SIMULATION_TREE,
                grid(vec![10], "gaussian", vec![1.0, 2.0, 5.0, 10.0]),
                three,
            ),
            "p-grid" => base(
                name,
                500,
                SIMULATION_TREE,
                grid(vec![5, 10, 20], "gaussian", vec![2.0]),
                three,
            ),
            "laplace" => base(
                name,
                500,
                SIMULATION_TREE,
                grid(vec![10], "laplace", vec![1.0, 2.0, 5.0, 10.0]),
                three,
            ),
            "pivot-check" => base(
                name,
                100,
                INTRO_TREE,
                grid(vec![5], "gaussian", vec![2.0]),
                vec![RRT1],
            ),
            _ => return None,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RrtError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RrtError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(RrtError::Config("reps must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RrtError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.methods.is_empty() {
            return Err(RrtError::Config("no methods listed".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        GrowConfig {
            max_depth: self.tree.max_depth,
            min_split_size: self.tree.min_split_size,
            min_leaf_size: self.tree.min_leaf_size,
            tau_rule: TauRule::Constant(1.0),
            stopping: StoppingRule::FixedDepth,
            seed: 0,
        }
        .validate()?;
        let g = &self.dgp;
        if g.n == 0 || g.p.is_empty() || g.p.iter().any(|&p| p < 3) {
            return Err(RrtError::Config("dgp needs n >= 1 and every p >= 3".into()));
        }
        if g.sigma.is_empty() || g.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(RrtError::Config("dgp sigma values must be positive".into()));
        }
        if !matches!(g.noise.as_str(), "gaussian" | "laplace") {
            return Err(RrtError::Config(format!(
                "unknown noise family {:?} (expected gaussian or laplace)",
                g.noise
            )));
        }
        Ok(())
    }

    /// Grid cells, p outer and sigma inner.
    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.dgp;
        let mut out = Vec::new();
        for &p in &g.p {
            for &sigma in &g.sigma {
                let noise = if g.noise == "laplace" {
                    Noise::Laplace { sigma }
                } else {
                    Noise::Gaussian { sigma }
                };
                out.push(Cell {
                    index: out.len(),
                    n: g.n,
                    p,
                    a: g.a,
                    b: g.b,
                    noise,
                });
            }
        }
        out
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for (cell, replicate, stream tag) under a master seed.
pub fn derive_seed(master: u64, cell: usize, rep: usize, tag: u64) -> u64 {
    mix(mix(mix(mix(master) ^ cell as u64) ^ rep as u64) ^ tag)
}

const TAG_DATA: u64 = 0;
const TAG_TEST: u64 = 1;
const TAG_METHOD: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: String,
    pub replicate: usize,
    pub method: String,
    pub coverage: f64,
    pub avg_ci_length: f64,
    pub test_mse: f64,
    pub n_terminals: usize,
    pub miscovered_count: usize,
    pub unbounded_count: usize,
    pub status: String,
}

impl MetricsRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub p: usize,
    pub noise: String,
    pub sigma: f64,
    pub method: String,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub mean_coverage: f64,
    pub coverage_se: f64,
    pub mean_ci_length: f64,
    pub mean_test_mse: f64,
    pub total_terminals: usize,
    pub total_miscovered: usize,
    pub unbounded_intervals: usize,
    pub fcr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub seed: u64,
    pub alpha: f64,
    pub cells: Vec<Cell>,
    pub rows: Vec<MetricsRow>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricsReport {
    /// Per (cell, method) means over successful replicates, in grid then
    /// method order.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut order: Vec<(String, String)> = Vec::new();
        let mut groups: BTreeMap<(String, String), Vec<&MetricsRow>> = BTreeMap::new();
        for row in &self.rows {
            let key = (row.cell.clone(), row.method.clone());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(row);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let ok: Vec<&&MetricsRow> = rows.iter().filter(|r| r.ok()).collect();
                let cov: Vec<f64> = ok.iter().map(|r| r.coverage).collect();
                let len: Vec<f64> = ok
                    .iter()
                    .map(|r| r.avg_ci_length)
                    .filter(|v| v.is_finite())
                    .collect();
                let mse: Vec<f64> = ok.iter().map(|r| r.test_mse).collect();
                let m = mean(&cov);
                let se = if cov.len() > 1 {
                    let var =
                        cov.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (cov.len() - 1) as f64;
                    (var / cov.len() as f64).sqrt()
                } else {
                    f64::NAN
                };
                let terms: usize = ok.iter().map(|r| r.n_terminals).sum();
                let missed: usize = ok.iter().map(|r| r.miscovered_count).sum();
                let cell = self.cells.iter().find(|c| c.label() == key.0);
                CellSummary {
                    cell: key.0.clone(),
                    p: cell.map_or(0, |c| c.p),
                    noise: cell.map_or(String::new(), |c| c.noise.family().to_string()),
                    sigma: cell.map_or(f64::NAN, |c| c.noise.sd()),
                    method: key.1.clone(),
                    reps_ok: ok.len(),
                    reps_failed: rows.len() - ok.len(),
                    mean_coverage: m,
                    coverage_se: se,
                    mean_ci_length: mean(&len),
                    mean_test_mse: mean(&mse),
                    total_terminals: terms,
                    total_miscovered: missed,
                    unbounded_intervals: ok.iter().map(|r| r.unbounded_count).sum(),
                    fcr: if terms > 0 {
                        missed as f64 / terms as f64
                    } else {
                        f64::NAN
                    },
                }
            })
            .collect()
    }

    /// Pooled FCR of one method over every cell.
    pub fn fcr(&self, method: &str) -> f64 {
        let (mut t, mut m) = (0usize, 0usize);
        for r in self.rows.iter().filter(|r| r.ok() && r.method == method) {
            t += r.n_terminals;
            m += r.miscovered_count;
        }
        m as f64 / t as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aggregate JSON: per-cell summaries plus pooled FCR per method.
    pub fn summary_json(&self) -> serde_json::Value {
        let summary = self.summary();
        let mut methods: Vec<String> = Vec::new();
        for s in &summary {
            if !methods.contains(&s.method) {
                methods.push(s.method.clone());
            }
        }
        let fcr: BTreeMap<String, f64> = methods.iter().map(|m| (m.clone(), self.fcr(m))).collect();
        serde_json::json!({
            "schema": "rrt.simulation-summary/1",
            "experiment": self.experiment,
            "seed": self.seed,
            "alpha": self.alpha,
            "cells": summary,
            "fcr": fcr,
        })
    }

    /// One row per (cell, method) with the three plotted metrics.
    pub fn write_figure_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cell",
            "noise",
            "p",
            "sigma",
            "method",
            "coverage",
            "ci_length",
            "test_mse",
        ])?;
        for s in self.summary() {
            out.write_record([
                s.cell,
                s.noise,
                s.p.to_string(),
                s.sigma.to_string(),
                s.method,
                s.mean_coverage.to_string(),
                s.mean_ci_length.to_string(),
                s.mean_test_mse.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Everything one replicate shares across methods.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub dataset: Dataset,
    pub mu: Vec<f64>,
    pub test_y: Vec<f64>,
}

pub fn make_replicate(cell: &Cell, master: u64, rep: usize) -> Result<Replicate> {
    let dgp = cell.dgp(derive_seed(master, cell.index, rep, TAG_DATA));
    let (dataset, mu) = generate_seeded(&dgp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, cell.index, rep, TAG_TEST));
    let test_y = test_response(&mu, &cell.noise, &mut rng);
    Ok(Replicate {
        dataset,
        mu,
        test_y,
    })
}

fn grow_config(tree: TreeHyperparams, tau: f64, seed: u64) -> GrowConfig {
    GrowConfig {
        max_depth: tree.max_depth,
        min_split_size: tree.min_split_size,
        min_leaf_size: tree.min_leaf_size,
        tau_rule: TauRule::Constant(tau),
        stopping: StoppingRule::FixedDepth,
        seed,
    }
}

/// Fit and score one method on one replicate.
pub fn run_method(
    method: &Method,
    rep: &Replicate,
    sigma: f64,
    alpha: f64,
    tree: TreeHyperparams,
    quadrature: QuadratureSettings,
    seed: u64,
) -> Result<Evaluation> {
    let ds = &rep.dataset;
    match *method {
        Method::Rrt { c, variant, r } => {
            let fitted = grow(ds, &grow_config(tree, c * sigma, seed))?;
            let mut cis = Vec::with_capacity(fitted.n_terminals());
            for k in 0..fitted.n_terminals() {
                let ev = PivotEvaluator::new(&fitted, ds, k, sigma, variant.with_r(r), quadrature)?;
                cis.push(match ev.invert_ci(alpha) {
                    Ok(ci) => ci,
                    Err(RrtError::UnboundedInterval { lower, upper }) => (
                        lower.unwrap_or(f64::NEG_INFINITY),
                        upper.unwrap_or(f64::INFINITY),
                    ),
                    Err(e) => return Err(e),
                });
            }
            let means: Vec<f64> = fitted.terminals.iter().map(|t| t.mean).collect();
            evaluate(&fitted, &means, &cis, &rep.mu, &rep.test_y)
        }
        Method::Naive => {
            let fitted = fit_cart(ds, tree)?;
            let cis = (0..fitted.n_terminals())
                .map(|k| naive_ci(&fitted, ds, k, sigma, alpha))
                .collect::<Result<Vec<_>>>()?;
            let means: Vec<f64> = fitted.terminals.iter().map(|t| t.mean).collect();
            evaluate(&fitted, &means, &cis, &rep.mu, &rep.test_y)
        }
        Method::Uv { gamma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fit = uv_pipeline(
                ds,
                gamma,
                &grow_config(tree, 1.0, 0),
                sigma,
                alpha,
                &mut rng,
            )?;
            // predictions use the full-data mean of each region
            let means: Vec<f64> = fit
                .tree
                .terminals
                .iter()
                .map(|t| t.region.mean(ds.y()))
                .collect();
            evaluate(&fit.tree, &means, &fit.intervals, &rep.mu, &rep.test_y)
        }
    }
}

fn replicate_rows(cfg: &ExperimentConfig, cell: &Cell, rep: usize) -> Vec<MetricsRow> {
    let quad = cfg.quadrature.unwrap_or_default();
    let label = cell.label();
    let data = make_replicate(cell, cfg.seed, rep);
    cfg.methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let seed = derive_seed(cfg.seed, cell.index, rep, TAG_METHOD + mi as u64);
            let result = match &data {
                Ok(d) => run_method(method, d, cell.noise.sd(), cfg.alpha, cfg.tree, quad, seed),
                Err(e) => Err(RrtError::InvalidInput(e.to_string())),
            };
            match result {
                Ok(e) => MetricsRow {
                    cell: label.clone(),
                    replicate: rep,
                    method: method.label(),
                    coverage: e.coverage,
                    avg_ci_length: e.avg_ci_length,
                    test_mse: e.test_mse,
                    n_terminals: e.n_terminals,
                    miscovered_count: e.miscovered_count,
                    unbounded_count: e.unbounded_count,
                    status: "ok".into(),
                },
                Err(e) => MetricsRow {
                    cell: label.clone(),
                    replicate: rep,
                    method: method.label(),
                    coverage: f64::NAN,
                    avg_ci_length: f64::NAN,
                    test_mse: f64::NAN,
                    n_terminals: 0,
                    miscovered_count: 0,
                    unbounded_count: 0,
                    status: format!("error: {e}"),
                },
            }
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    run_experiment_with_progress(cfg, &|_, _| {})
}

/// As `run_experiment`, calling `progress(done, total)` after each
/// replicate (from worker threads, in completion order).
pub fn run_experiment_with_progress(
    cfg: &ExperimentConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<MetricsReport> {
    cfg.validate()?;
    let cells = cfg.cells();
    let total = cells.len() * cfg.reps;
    let done = AtomicUsize::new(0);
    let per_job = crate::par::map_range(total, |job| {
        let cell = &cells[job / cfg.reps];
        let rows = replicate_rows(cfg, cell, job % cfg.reps);
        progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
        rows
    });
    Ok(MetricsReport {
        experiment: cfg.name.clone(),
        seed: cfg.seed,
        alpha: cfg.alpha,
        cells,
        rows: per_job.into_iter().flatten().collect(),
    })
}
