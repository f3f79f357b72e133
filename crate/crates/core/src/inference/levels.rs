//! Per-level selection data along the root-to-leaf path of a target leaf,
//! and the gains of every candidate as functions of the target statistic.

use crate::error::{Result, RrtError};
use crate::grow::{candidates_with_gains, enumerate_candidates};
use crate::model::{Dataset, FittedTree, NodeKind, NodeTrace, Region, TargetSpec};

/// Gain of one candidate at y(t) with t = observed + delta:
/// `kappa * (s + h * delta)^2`. Exact, because region means are affine in t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPoly {
    pub kappa: f64,
    pub s: f64,
    pub h: f64,
}

impl GainPoly {
    #[inline]
    pub fn at(&self, delta: f64) -> f64 {
        let v = self.s + self.h * delta;
        self.kappa * v * v
    }

    /// G(delta) - G(0) = u delta + v delta^2
    #[inline]
    pub fn increment_coeffs(&self) -> (f64, f64) {
        (
            2.0 * self.kappa * self.s * self.h,
            self.kappa * self.h * self.h,
        )
    }
}

/// Which losers stay free and which are fixed at their observed D values.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// Positions in the loser list of the min(r, d-1) smallest D entries.
    pub free: Vec<usize>,
    /// Remaining positions; their D values are conditioned on.
    pub fixed: Vec<usize>,
    pub fixed_values: Vec<f64>,
    /// Upper limit for the free coordinates: the (r+1)-th smallest D, or +inf.
    pub bound: f64,
}

/// Split the loser positions by the order statistics of `d_vector`. Ties
/// fall back to position order.
pub fn choose_conditioning(d_vector: &[f64], r: usize) -> Conditioning {
    let m = d_vector.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| d_vector[a].total_cmp(&d_vector[b]).then(a.cmp(&b)));
    let k = r.min(m);
    let mut free = order[..k].to_vec();
    let mut fixed = order[k..].to_vec();
    free.sort_unstable();
    fixed.sort_unstable();
    let bound = if k < m {
        d_vector[order[k]]
    } else {
        f64::INFINITY
    };
    let fixed_values = fixed.iter().map(|&i| d_vector[i]).collect();
    Conditioning {
        free,
        fixed,
        fixed_values,
        bound,
    }
}

/// One internal node on the path to the target leaf.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub level: usize,
    pub node: usize,
    pub region: Region,
    pub chosen: usize,
    pub tau: f64,
    /// Observed D entries, loser order.
    pub d_vector: Vec<f64>,
    /// Gain polynomial for every candidate, candidate order.
    pub polys: Vec<GainPoly>,
    /// Observed GM value and threshold draw, when grown by cost complexity.
    pub gm_value: Option<f64>,
    pub threshold_draw: Option<f64>,
}

impl LevelData {
    pub fn n_candidates(&self) -> usize {
        self.polys.len()
    }

    pub fn n_losers(&self) -> usize {
        self.polys.len().saturating_sub(1)
    }

    pub fn loser_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.polys.len()).filter(move |&k| k != self.chosen)
    }

    pub fn winner_gain(&self, delta: f64) -> f64 {
        self.polys[self.chosen].at(delta)
    }

    /// beta_k = G(s_k) - G(s*) at y(t), loser order.
    pub fn beta(&self, delta: f64) -> Vec<f64> {
        let g_star = self.winner_gain(delta);
        self.loser_positions()
            .map(|k| self.polys[k].at(delta) - g_star)
            .collect()
    }
}

/// Extract path levels for terminal `terminal` and fit the gain
/// polynomials of every candidate against the target contrast.
pub fn path_levels(
    tree: &FittedTree,
    dataset: &Dataset,
    target: &TargetSpec,
) -> Result<Vec<LevelData>> {
    let path = tree.path_to_terminal(target.terminal_index)?;
    let in_target: Vec<bool> = target.nu.iter().map(|v| *v != 0.0).collect();
    let y = dataset.y();
    let mut levels = Vec::with_capacity(path.len());
    for (level, &node) in path.iter().enumerate() {
        let trace = match &tree.nodes[node].kind {
            NodeKind::Internal { trace, .. } => trace,
            NodeKind::Terminal { .. } => {
                return Err(RrtError::Integrity("path contains a terminal node".into()))
            }
        };
        let polys = gain_polys(dataset, y, trace, &in_target, target.n_r)?;
        levels.push(LevelData {
            level,
            node,
            region: trace.region.clone(),
            chosen: trace.chosen_index,
            tau: trace.tau,
            d_vector: trace.d_vector.clone(),
            polys,
            gm_value: trace.gm_value,
            threshold_draw: trace.threshold_draw,
        });
    }
    Ok(levels)
}

fn gain_polys(
    dataset: &Dataset,
    y: &[f64],
    trace: &NodeTrace,
    in_target: &[bool],
    n_r: usize,
) -> Result<Vec<GainPoly>> {
    let region = &trace.region;
    let n = region.len();
    let n_f = n as f64;
    let mean = region.mean(y);
    let sqrt_nr = (n_r as f64).sqrt();
    let c_p = region.members.iter().filter(|&&i| in_target[i]).count();
    if c_p != n_r {
        return Err(RrtError::Integrity(
            "ancestor region does not contain the target leaf".into(),
        ));
    }
    let mut polys = Vec::with_capacity(trace.candidates.len());
    for cand in &trace.candidates {
        let col = dataset.column(cand.feature);
        let mut s = 0.0;
        let mut n_left = 0usize;
        let mut c_left = 0usize;
        for &i in &region.members {
            if col[i] <= cand.threshold {
                s += y[i] - mean;
                n_left += 1;
                if in_target[i] {
                    c_left += 1;
                }
            }
        }
        if n_left != cand.order_index || n_left == 0 || n_left == n {
            return Err(RrtError::Integrity(format!(
                "candidate ({}, {}) does not match the dataset",
                cand.feature, cand.order_index
            )));
        }
        let n_right = n - n_left;
        polys.push(GainPoly {
            kappa: n_f.sqrt() / (n_left as f64 * n_right as f64),
            s,
            h: (c_left as f64 - n_left as f64 * n_r as f64 / n_f) / sqrt_nr,
        });
    }
    Ok(polys)
}

/// beta vectors of every level at statistic value `t`.
pub fn gains_along_path(levels: &[LevelData], target: &TargetSpec, t: f64) -> Vec<Vec<f64>> {
    let delta = t - target.observed_stat;
    levels.iter().map(|l| l.beta(delta)).collect()
}

/// Recompute beta at `t` from scratch (rebuild y(t), rescan every split).
/// Slow; used to verify the polynomial path.
pub fn gains_along_path_brute(
    levels: &[LevelData],
    dataset: &Dataset,
    target: &TargetSpec,
    min_leaf: usize,
    t: f64,
) -> Result<Vec<Vec<f64>>> {
    let y_t = target.response_at(t);
    levels
        .iter()
        .map(|l| {
            let (cands, gains) = candidates_with_gains(dataset, &y_t, &l.region, min_leaf);
            if cands.len() != l.polys.len() {
                return Err(RrtError::Integrity(
                    "candidate set changed between fit and inference".into(),
                ));
            }
            let g_star = gains[l.chosen];
            Ok((0..gains.len())
                .filter(|&k| k != l.chosen)
                .map(|k| gains[k] - g_star)
                .collect())
        })
        .collect()
}

/// Check that every path level's candidate set can be re-enumerated from
/// the predictors alone.
pub fn verify_candidates(tree: &FittedTree, dataset: &Dataset, levels: &[LevelData]) -> Result<()> {
    for l in levels {
        let NodeKind::Internal { trace, .. } = &tree.nodes[l.node].kind else {
            continue;
        };
        let again = enumerate_candidates(dataset, &l.region, tree.hyperparams.min_leaf_size);
        if again != trace.candidates {
            return Err(RrtError::Integrity(format!(
                "candidate set at node {} differs from the fitted trace",
                l.node
            )));
        }
    }
    Ok(())
}
