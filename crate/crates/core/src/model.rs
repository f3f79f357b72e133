//! Domain types: datasets, regions, splits, fitted trees and the selection
//! traces that inference replays.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RrtError};

/// Predictor matrix (stored by column) and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = y.len();
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(RrtError::InvalidInput(format!(
                    "column {j} has {} rows, response has {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(RrtError::InvalidInput(format!(
                    "non-finite predictor at row {i}, column {j}"
                )));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(RrtError::InvalidInput(format!(
                "non-finite response at row {i}"
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != columns.len() {
                return Err(RrtError::InvalidInput(
                    "feature name count does not match column count".into(),
                ));
            }
        }
        Ok(Self {
            columns,
            y,
            feature_names,
        })
    }

    /// Build from row-major predictors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(RrtError::InvalidInput("ragged predictor rows".into()));
        }
        if rows.len() != y.len() {
            return Err(RrtError::InvalidInput(format!(
                "{} predictor rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self::new(columns, y, None)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn feature_name(&self, j: usize) -> String {
        self.feature_names
            .as_ref()
            .and_then(|names| names.get(j).cloned())
            .unwrap_or_else(|| format!("X{}", j + 1))
    }

    /// Same predictors, different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.columns.clone(), y, self.feature_names.clone())
    }

    /// SHA-256 over shape and the exact bit patterns of every entry.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.p() as u64).to_le_bytes());
        for col in &self.columns {
            for v in col {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for v in &self.y {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// x_j <= threshold
    Le,
    /// x_j > threshold
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub feature: usize,
    pub threshold: f64,
    pub side: Side,
}

impl Constraint {
    pub fn admits(&self, x: &[f64]) -> bool {
        match self.side {
            Side::Le => x[self.feature] <= self.threshold,
            Side::Gt => x[self.feature] > self.threshold,
        }
    }
}

/// A cell of the predictor space together with the training rows in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub constraints: Vec<Constraint>,
    pub members: Vec<usize>,
}

impl Region {
    pub fn root(n: usize) -> Self {
        Self {
            constraints: Vec::new(),
            members: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.admits(x))
    }

    /// Child region on one side of `split`.
    pub fn child(&self, dataset: &Dataset, split: &SplitCandidate, side: Side) -> Region {
        let c = Constraint {
            feature: split.feature,
            threshold: split.threshold,
            side,
        };
        let col = dataset.column(split.feature);
        let members = self
            .members
            .iter()
            .copied()
            .filter(|&i| match side {
                Side::Le => col[i] <= split.threshold,
                Side::Gt => col[i] > split.threshold,
            })
            .collect();
        let mut constraints = self.constraints.clone();
        constraints.push(c);
        Region {
            constraints,
            members,
        }
    }

    pub fn mean(&self, y: &[f64]) -> f64 {
        self.members.iter().map(|&i| y[i]).sum::<f64>() / self.len() as f64
    }

    /// Within-region sum of squared deviations.
    pub fn sse(&self, y: &[f64]) -> f64 {
        sse_of(self.members.iter().map(|&i| y[i]))
    }

    pub fn describe(&self, dataset: &Dataset) -> String {
        if self.constraints.is_empty() {
            return "root".into();
        }
        self.constraints
            .iter()
            .map(|c| {
                let op = match c.side {
                    Side::Le => "<=",
                    Side::Gt => ">",
                };
                format!(
                    "{} {op} {:.4}",
                    dataset.feature_name(c.feature),
                    c.threshold
                )
            })
            .collect::<Vec<_>>()
            .join(" & ")
    }
}

pub(crate) fn sse_of<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let (n, s) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let m = s / n as f64;
    values.map(|v| (v - m) * (v - m)).sum()
}

/// Split `x_feature <= threshold`, where `threshold` is the
/// `order_index`-th smallest (1-based) feature value inside the region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub order_index: usize,
    pub threshold: f64,
}

/// Everything recorded when a region was split: enough to replay the
/// randomized argmax and to rebuild the selection event at other responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub region: Region,
    pub candidates: Vec<SplitCandidate>,
    pub gains: Vec<f64>,
    pub rand_draws: Vec<f64>,
    pub chosen_index: usize,
    /// Winner's randomized gain minus each loser's, losers in candidate
    /// order (ascending feature, then order index) with the winner skipped.
    pub d_vector: Vec<f64>,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_draw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gm_value: Option<f64>,
}

impl NodeTrace {
    pub fn chosen(&self) -> &SplitCandidate {
        &self.candidates[self.chosen_index]
    }

    pub fn randomized_gains(&self) -> Vec<f64> {
        self.gains
            .iter()
            .zip(&self.rand_draws)
            .map(|(g, w)| g + w)
            .collect()
    }

    /// Indices of losing candidates in d_vector order.
    pub fn loser_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.candidates.len()).filter(move |&k| k != self.chosen_index)
    }

    /// First index attaining the maximum randomized gain.
    pub fn replay_argmax(&self) -> usize {
        argmax_first(&self.randomized_gains())
    }
}

/// Index of the first maximal entry, so ties go to the earliest candidate.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxDepth,
    TooSmall,
    NoCandidates,
    /// Randomized gain (or randomized GM) fell below the threshold.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Internal {
        trace: NodeTrace,
        left: usize,
        right: usize,
    },
    Terminal {
        terminal: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub depth: usize,
    /// Heap position: root 1, children 2k and 2k+1. Keys the node's RNG stream.
    pub key: u64,
    pub parent: Option<usize>,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub node: usize,
    pub region: Region,
    pub mean: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StoppingRule {
    FixedDepth,
    ThresholdGain {
        #[serde(with = "ext_f64")]
        lambda: f64,
    },
    CostComplexity {
        #[serde(with = "ext_f64")]
        lambda: f64,
        probe_depth: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    pub min_split_size: usize,
    pub min_leaf_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTree {
    pub nodes: Vec<TreeNode>,
    pub terminals: Vec<Terminal>,
    pub stopping_rule: StoppingRule,
    pub hyperparams: TreeHyperparams,
    pub seed: u64,
    pub dataset_hash: String,
}

impl FittedTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn n_terminals(&self) -> usize {
        self.terminals.len()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Internal { .. }))
            .count()
    }

    pub fn traces(&self) -> impl Iterator<Item = &NodeTrace> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Internal { trace, .. } => Some(trace),
            NodeKind::Terminal { .. } => None,
        })
    }

    pub fn terminal(&self, index: usize) -> Result<&Terminal> {
        self.terminals.get(index).ok_or(RrtError::OutOfRange {
            index,
            len: self.terminals.len(),
        })
    }

    /// Internal node ids from the root down to the terminal's parent.
    pub fn path_to_terminal(&self, index: usize) -> Result<Vec<usize>> {
        let term = self.terminal(index)?;
        let mut path = Vec::new();
        let mut cur = self.nodes[term.node].parent;
        while let Some(id) = cur {
            path.push(id);
            cur = self.nodes[id].parent;
        }
        path.reverse();
        Ok(path)
    }

    /// Terminal index of the region containing `x` (`<=` goes left).
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Terminal { terminal } => return *terminal,
                NodeKind::Internal { trace, left, right } => {
                    let s = trace.chosen();
                    id = if x[s.feature] <= s.threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Terminal index for every training row.
    pub fn leaf_assignment(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (t, term) in self.terminals.iter().enumerate() {
            for &i in &term.region.members {
                out[i] = t;
            }
        }
        out
    }
}

/// Contrast for one terminal mean and the matching decomposition of y.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub terminal_index: usize,
    pub nu: Vec<f64>,
    pub nu_sq_norm: f64,
    pub n_r: usize,
    pub observed_stat: f64,
    pub residual: Vec<f64>,
}

impl TargetSpec {
    /// y(t) = t nu / |nu|^2 + residual
    pub fn response_at(&self, t: f64) -> Vec<f64> {
        self.nu
            .iter()
            .zip(&self.residual)
            .map(|(v, r)| t * v / self.nu_sq_norm + r)
            .collect()
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n_r as f64).sqrt()
    }
}

pub fn build_target(
    tree: &FittedTree,
    dataset: &Dataset,
    terminal_index: usize,
) -> Result<TargetSpec> {
    let term = tree.terminal(terminal_index)?;
    let n_r = term.region.len();
    if n_r == 0 {
        return Err(RrtError::Precondition("empty terminal region".into()));
    }
    let n = dataset.n();
    let w = 1.0 / (n_r as f64).sqrt();
    let mut nu = vec![0.0; n];
    for &i in &term.region.members {
        if i >= n {
            return Err(RrtError::OutOfRange { index: i, len: n });
        }
        nu[i] = w;
    }
    let y = dataset.y();
    let nu_sq_norm: f64 = nu.iter().map(|v| v * v).sum();
    let observed_stat: f64 = term.region.members.iter().map(|&i| y[i]).sum::<f64>() * w;
    let residual = y
        .iter()
        .zip(&nu)
        .map(|(yi, v)| yi - observed_stat * v / nu_sq_norm)
        .collect();
    Ok(TargetSpec {
        terminal_index,
        nu,
        nu_sq_norm,
        n_r,
        observed_stat,
        residual,
    })
}

/// Serde adapter for f64 fields that may be infinite (JSON has no inf).
pub mod ext_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => other
                    .parse()
                    .map_err(|_| serde::de::Error::custom(format!("bad number {t:?}"))),
            },
        }
    }
}
