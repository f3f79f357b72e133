#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rrt::model::NodeKind;
use rrt::{Dataset, FittedTree, GrowConfig};

/// x ~ N(0, 1), y = 2 * 1[x1 <= 0] + N(0, sigma^2).
pub fn step_data(n: usize, p: usize, sigma: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let y = (0..n)
        .map(|i| {
            let mu = if cols[0][i] <= 0.0 { 2.0 } else { 0.0 };
            mu + sigma * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Dataset::new(cols, y, None).unwrap()
}

pub fn small_config(depth: usize, tau: f64, seed: u64) -> GrowConfig {
    GrowConfig {
        max_depth: depth,
        min_split_size: 10,
        min_leaf_size: 5,
        ..GrowConfig::simulation_preset(tau, seed)
    }
}

/// (feature, order index, goes left) along the root-to-leaf path.
pub fn path_signature(tree: &FittedTree, terminal: usize) -> Vec<(usize, usize, bool)> {
    let path = tree.path_to_terminal(terminal).unwrap();
    let leaf_node = tree.terminals[terminal].node;
    let mut sig = Vec::new();
    for (i, &node) in path.iter().enumerate() {
        if let NodeKind::Internal { trace, left, .. } = &tree.nodes[node].kind {
            let next = path.get(i + 1).copied().unwrap_or(leaf_node);
            let s = trace.chosen();
            sig.push((s.feature, s.order_index, next == *left));
        }
    }
    sig
}

/// Does `tree` contain a leaf reached by exactly this sequence of splits?
pub fn has_path(tree: &FittedTree, sig: &[(usize, usize, bool)]) -> bool {
    let mut node = 0;
    for &(f, o, go_left) in sig {
        match &tree.nodes[node].kind {
            NodeKind::Internal { trace, left, right } => {
                let s = trace.chosen();
                if s.feature != f || s.order_index != o {
                    return false;
                }
                node = if go_left { *left } else { *right };
            }
            NodeKind::Terminal { .. } => return false,
        }
    }
    matches!(tree.nodes[node].kind, NodeKind::Terminal { .. })
}

/// Kolmogorov-Smirnov statistic against Unif(0, 1) and its asymptotic p-value.
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// Estimate of p from `hits` successes in `n` trials and its standard error.
pub fn proportion(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Monte Carlo P(D >= 0) for D_k = -beta_k + tau (W* - W_k).
pub fn mc_orthant(beta: &[f64], tau: f64, draws: usize, rng: &mut impl Rng) -> (f64, f64) {
    let mut hits = 0;
    for _ in 0..draws {
        let w_star: f64 = rng.sample(StandardNormal);
        if beta
            .iter()
            .all(|b| -b + tau * (w_star - rng.sample::<f64, _>(StandardNormal)) >= 0.0)
        {
            hits += 1;
        }
    }
    proportion(hits, draws)
}
