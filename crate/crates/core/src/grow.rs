//! Split enumeration, the CART gain, and the randomized growing algorithms
//! (fixed depth, thresholded randomized gain, randomized cost complexity).
//!
//! Every node draws its randomization from its own ChaCha stream, keyed by
//! the tree seed and the node's heap position. Draw order inside a node is
//! one standard normal per candidate in enumeration order, then the
//! threshold draw when the cost-complexity rule is active.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RrtError};
use crate::model::{
    argmax_first, Dataset, FittedTree, NodeKind, NodeTrace, Region, Side, SplitCandidate,
    StopReason, StoppingRule, Terminal, TreeHyperparams, TreeNode,
};

/// Randomization scale per region.
#[derive(Clone)]
pub enum TauRule {
    Constant(f64),
    PerRegion(Arc<dyn Fn(&Region) -> f64 + Send + Sync>),
    /// No randomization: plain CART. Only meant for baselines and tests.
    Deterministic,
}

impl TauRule {
    pub fn tau_for(&self, region: &Region) -> f64 {
        match self {
            TauRule::Constant(t) => *t,
            TauRule::PerRegion(f) => f(region),
            TauRule::Deterministic => 0.0,
        }
    }
}

impl fmt::Debug for TauRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauRule::Constant(t) => write!(f, "Constant({t})"),
            TauRule::PerRegion(_) => write!(f, "PerRegion(..)"),
            TauRule::Deterministic => write!(f, "Deterministic"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrowConfig {
    pub max_depth: usize,
    pub min_split_size: usize,
    pub min_leaf_size: usize,
    pub tau_rule: TauRule,
    pub stopping: StoppingRule,
    pub seed: u64,
}

impl GrowConfig {
    /// Simulation preset: depth 3, min split 50, min leaf 20.
    pub fn simulation_preset(tau: f64, seed: u64) -> Self {
        Self {
            max_depth: 3,
            min_split_size: 50,
            min_leaf_size: 20,
            tau_rule: TauRule::Constant(tau),
            stopping: StoppingRule::FixedDepth,
            seed,
        }
    }

    /// Introductory-example preset: depth 3, min split 25, min leaf 10.
    pub fn intro_preset(tau: f64, seed: u64) -> Self {
        Self {
            min_split_size: 25,
            min_leaf_size: 10,
            ..Self::simulation_preset(tau, seed)
        }
    }

    pub fn deterministic(mut self) -> Self {
        self.tau_rule = TauRule::Deterministic;
        self
    }

    pub fn hyperparams(&self) -> TreeHyperparams {
        TreeHyperparams {
            max_depth: self.max_depth,
            min_split_size: self.min_split_size,
            min_leaf_size: self.min_leaf_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(RrtError::Config("max_depth must be >= 1".into()));
        }
        if self.max_depth > 60 {
            return Err(RrtError::Config("max_depth must be <= 60".into()));
        }
        if self.min_leaf_size < 1 {
            return Err(RrtError::Config("min_leaf_size must be >= 1".into()));
        }
        if self.min_split_size < 2 || self.min_split_size < 2 * self.min_leaf_size {
            return Err(RrtError::Config(
                "min_split_size must be >= max(2, 2 * min_leaf_size)".into(),
            ));
        }
        if let TauRule::Constant(t) = self.tau_rule {
            if !(t > 0.0 && t.is_finite()) {
                return Err(RrtError::Config(format!(
                    "tau must be positive and finite, got {t}"
                )));
            }
        }
        match self.stopping {
            StoppingRule::ThresholdGain { lambda } if lambda.is_nan() => {
                Err(RrtError::Config("lambda is NaN".into()))
            }
            StoppingRule::CostComplexity {
                lambda,
                probe_depth,
            } if lambda.is_nan() || probe_depth < 1 => Err(RrtError::Config(
                "cost-complexity needs a non-NaN lambda and probe_depth >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Members of `region` ordered by feature `j` (ties by row index).
fn sorted_by_feature(dataset: &Dataset, region: &Region, j: usize) -> Vec<usize> {
    let col = dataset.column(j);
    let mut idx = region.members.clone();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
    idx
}

/// Order positions `o` (1-based) that give a valid split of a sorted column:
/// a strict gap after position `o` and at least `min_leaf` rows each side.
fn valid_orders<'a>(
    col: &'a [f64],
    sorted: &'a [usize],
    min_leaf: usize,
) -> impl Iterator<Item = usize> + 'a {
    let n = sorted.len();
    let lo = min_leaf.max(1);
    let hi = n.saturating_sub(min_leaf.max(1));
    (lo..=hi).filter(move |&o| o < n && col[sorted[o - 1]] < col[sorted[o]])
}

/// All admissible splits of `region`, ordered by (feature, order index).
pub fn enumerate_candidates(
    dataset: &Dataset,
    region: &Region,
    min_leaf: usize,
) -> Vec<SplitCandidate> {
    let mut out = Vec::new();
    if region.len() < 2 {
        return out;
    }
    for j in 0..dataset.p() {
        let col = dataset.column(j);
        let sorted = sorted_by_feature(dataset, region, j);
        for o in valid_orders(col, &sorted, min_leaf) {
            out.push(SplitCandidate {
                feature: j,
                order_index: o,
                threshold: col[sorted[o - 1]],
            });
        }
    }
    out
}

/// Candidates together with their gains under response `y`, computed in one
/// sorted pass per feature.
pub fn candidates_with_gains(
    dataset: &Dataset,
    y: &[f64],
    region: &Region,
    min_leaf: usize,
) -> (Vec<SplitCandidate>, Vec<f64>) {
    let mut cands = Vec::new();
    let mut gains = Vec::new();
    let n = region.len();
    if n < 2 {
        return (cands, gains);
    }
    let mean = region.mean(y);
    let sqrt_n = (n as f64).sqrt();
    for j in 0..dataset.p() {
        let col = dataset.column(j);
        let sorted = sorted_by_feature(dataset, region, j);
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &i in &sorted {
            acc += y[i] - mean;
            prefix.push(acc);
        }
        for o in valid_orders(col, &sorted, min_leaf) {
            cands.push(SplitCandidate {
                feature: j,
                order_index: o,
                threshold: col[sorted[o - 1]],
            });
            gains.push(centered_gain(prefix[o], o, n - o, sqrt_n));
        }
    }
    (cands, gains)
}

/// SSE reduction / sqrt(n_P) written through the left sum of deviations
/// from the parent mean: s^2 sqrt(n_P) / (n_l n_r).
#[inline]
pub(crate) fn centered_gain(s_left: f64, n_left: usize, n_right: usize, sqrt_n: f64) -> f64 {
    s_left * s_left * sqrt_n / (n_left as f64 * n_right as f64)
}

/// G(y; P, s) = [SSE(P) - SSE(P_l) - SSE(P_r)] / sqrt(n_P).
pub fn gain(y: &[f64], dataset: &Dataset, region: &Region, split: &SplitCandidate) -> Result<f64> {
    let col = dataset.column(split.feature);
    let (left, right): (Vec<usize>, Vec<usize>) = region
        .members
        .iter()
        .partition(|&&i| col[i] <= split.threshold);
    if left.is_empty() || right.is_empty() {
        return Err(RrtError::Precondition(format!(
            "split on feature {} at {} leaves an empty child",
            split.feature, split.threshold
        )));
    }
    let sse = |idx: &[usize]| crate::model::sse_of(idx.iter().map(|&i| y[i]));
    let reduction = region.sse(y) - sse(&left) - sse(&right);
    Ok(reduction / (region.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub depth: usize,
    pub min_split_size: usize,
    pub min_leaf_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmValue {
    pub value: f64,
    pub n_terminals: usize,
    /// Probe tree never split; value is reported as 0.
    pub degenerate: bool,
}

/// Average SSE reduction per added terminal of a deterministic CART probe
/// tree grown from `region`.
pub fn gm(dataset: &Dataset, y: &[f64], region: &Region, probe: &ProbeParams) -> GmValue {
    let (sse_terms, count) = probe_terminal_sse(dataset, y, region, probe.depth, probe);
    if count < 2 {
        return GmValue {
            value: 0.0,
            n_terminals: count,
            degenerate: true,
        };
    }
    GmValue {
        value: (region.sse(y) - sse_terms) / (count as f64 - 1.0),
        n_terminals: count,
        degenerate: false,
    }
}

fn probe_terminal_sse(
    dataset: &Dataset,
    y: &[f64],
    region: &Region,
    depth_left: usize,
    probe: &ProbeParams,
) -> (f64, usize) {
    if depth_left == 0 || region.len() < probe.min_split_size {
        return (region.sse(y), 1);
    }
    let (cands, gains) = candidates_with_gains(dataset, y, region, probe.min_leaf_size);
    if cands.is_empty() {
        return (region.sse(y), 1);
    }
    let s = cands[argmax_first(&gains)];
    let l = region.child(dataset, &s, Side::Le);
    let r = region.child(dataset, &s, Side::Gt);
    let (a, na) = probe_terminal_sse(dataset, y, &l, depth_left - 1, probe);
    let (b, nb) = probe_terminal_sse(dataset, y, &r, depth_left - 1, probe);
    (a + b, na + nb)
}

fn node_rng(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

struct Grower<'a> {
    dataset: &'a Dataset,
    config: &'a GrowConfig,
    nodes: Vec<TreeNode>,
    terminals: Vec<Terminal>,
}

impl Grower<'_> {
    fn grow(&mut self, region: Region, depth: usize, key: u64, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            depth,
            key,
            parent,
            kind: NodeKind::Terminal {
                terminal: usize::MAX,
            },
        });
        match self.try_split(&region, key) {
            Ok(trace) => {
                let s = *trace.chosen();
                let l = region.child(self.dataset, &s, Side::Le);
                let r = region.child(self.dataset, &s, Side::Gt);
                let left = self.grow(l, depth + 1, 2 * key, Some(id));
                let right = self.grow(r, depth + 1, 2 * key + 1, Some(id));
                self.nodes[id].kind = NodeKind::Internal { trace, left, right };
            }
            Err(stop) => {
                let t = self.terminals.len();
                self.terminals.push(Terminal {
                    node: id,
                    mean: region.mean(self.dataset.y()),
                    region,
                    stop,
                });
                self.nodes[id].kind = NodeKind::Terminal { terminal: t };
            }
        }
        id
    }

    fn try_split(&self, region: &Region, key: u64) -> std::result::Result<NodeTrace, StopReason> {
        let cfg = self.config;
        let depth = 63 - key.leading_zeros() as usize;
        if depth >= cfg.max_depth {
            return Err(StopReason::MaxDepth);
        }
        if region.len() < cfg.min_split_size {
            return Err(StopReason::TooSmall);
        }
        let y = self.dataset.y();
        let (candidates, gains) = candidates_with_gains(self.dataset, y, region, cfg.min_leaf_size);
        if candidates.is_empty() {
            return Err(StopReason::NoCandidates);
        }
        let tau = cfg.tau_rule.tau_for(region);
        let mut rng = node_rng(cfg.seed, key);
        let rand_draws: Vec<f64> = (0..candidates.len())
            .map(|_| tau * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let randomized: Vec<f64> = gains.iter().zip(&rand_draws).map(|(g, w)| g + w).collect();
        let chosen_index = argmax_first(&randomized);

        let mut threshold_draw = None;
        let mut gm_value = None;
        match cfg.stopping {
            StoppingRule::FixedDepth => {}
            StoppingRule::ThresholdGain { lambda } => {
                if randomized[chosen_index] < lambda {
                    return Err(StopReason::Threshold);
                }
            }
            StoppingRule::CostComplexity {
                lambda,
                probe_depth,
            } => {
                let w_tilde = tau * rng.sample::<f64, _>(StandardNormal);
                let probe = ProbeParams {
                    depth: probe_depth,
                    min_split_size: cfg.min_split_size,
                    min_leaf_size: cfg.min_leaf_size,
                };
                let g = gm(self.dataset, y, region, &probe).value;
                threshold_draw = Some(w_tilde);
                gm_value = Some(g);
                if g + w_tilde < lambda {
                    return Err(StopReason::Threshold);
                }
            }
        }

        let best = randomized[chosen_index];
        let d_vector = (0..candidates.len())
            .filter(|&k| k != chosen_index)
            .map(|k| best - randomized[k])
            .collect();
        Ok(NodeTrace {
            region: region.clone(),
            candidates,
            gains,
            rand_draws,
            chosen_index,
            d_vector,
            tau,
            threshold_draw,
            gm_value,
        })
    }
}

/// Grow a tree with whichever stopping rule the config carries.
pub fn grow(dataset: &Dataset, config: &GrowConfig) -> Result<FittedTree> {
    config.validate()?;
    if dataset.n() == 0 {
        return Err(RrtError::EmptyInput("dataset has no rows".into()));
    }
    let mut g = Grower {
        dataset,
        config,
        nodes: Vec::new(),
        terminals: Vec::new(),
    };
    g.grow(Region::root(dataset.n()), 0, 1, None);
    Ok(FittedTree {
        nodes: g.nodes,
        terminals: g.terminals,
        stopping_rule: config.stopping,
        hyperparams: config.hyperparams(),
        seed: config.seed,
        dataset_hash: dataset.content_hash(),
    })
}

fn require_rule(config: &GrowConfig, ok: bool, name: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(RrtError::Config(format!(
            "{name} called with stopping rule {:?}",
            config.stopping
        )))
    }
}

pub fn grow_fixed_depth(dataset: &Dataset, config: &GrowConfig) -> Result<FittedTree> {
    require_rule(
        config,
        matches!(config.stopping, StoppingRule::FixedDepth),
        "grow_fixed_depth",
    )?;
    grow(dataset, config)
}

pub fn grow_threshold(dataset: &Dataset, config: &GrowConfig) -> Result<FittedTree> {
    require_rule(
        config,
        matches!(config.stopping, StoppingRule::ThresholdGain { .. }),
        "grow_threshold",
    )?;
    grow(dataset, config)
}

pub fn grow_cost_complexity(dataset: &Dataset, config: &GrowConfig) -> Result<FittedTree> {
    require_rule(
        config,
        matches!(config.stopping, StoppingRule::CostComplexity { .. }),
        "grow_cost_complexity",
    )?;
    grow(dataset, config)
}

/// Plain CART with the same size limits, no randomization.
pub fn fit_cart(dataset: &Dataset, hyper: TreeHyperparams) -> Result<FittedTree> {
    let cfg = GrowConfig {
        max_depth: hyper.max_depth,
        min_split_size: hyper.min_split_size,
        min_leaf_size: hyper.min_leaf_size,
        tau_rule: TauRule::Deterministic,
        stopping: StoppingRule::FixedDepth,
        seed: 0,
    };
    grow(dataset, &cfg)
}

/// Terminal mean of the region containing `x`.
pub fn predict(tree: &FittedTree, x: &[f64]) -> f64 {
    tree.terminals[tree.locate(x)].mean
}
