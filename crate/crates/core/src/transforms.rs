//! Strategy-to-strategy maps: wash sales, immediate realization, stopping,
//! the loss bound and normalized one-period weights.

use serde::Serialize;

use crate::cone::{Decomposer, LocalMarket};
use crate::engine::evaluate;
use crate::error::{Error, Result};
use crate::par;
use crate::polytope::dot;
use crate::strategy::{validate_strategy, LotMatrix, StoppingTime, Strategy};
use crate::tree::ScenarioTree;

/// For u = 1..T-1 in order: every lot bought before u whose price at u is
/// strictly below its basis is sold at u and repurchased into lot u.
pub fn wash_sale_transform(tree: &ScenarioTree, n: &Strategy) -> Result<Strategy> {
    n.check_tree(tree)?;
    let mut m = n.dense(tree);
    let d = tree.dim();
    for u in 1..tree.horizon() {
        for t in u..tree.horizon() {
            for node in tree.layer(t) {
                let su = tree.prices(tree.ancestor(node, u)).to_vec();
                for i in 0..u {
                    let basis = tree.prices(tree.ancestor(node, i));
                    for j in 0..d {
                        if su[j] < basis[j] {
                            let q = m.get(node, i, j);
                            if q != 0.0 {
                                m.set(node, u, j, m.get(node, u, j) + q);
                                m.set(node, i, j, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }
    validate_strategy(tree, &m)
}

/// {S_i > S_t} ⊆ {N_{i,t} = 0} at every node and lot.
pub fn realizes_losses(tree: &ScenarioTree, n: &Strategy) -> bool {
    (0..tree.len()).all(|node| {
        let s = tree.prices(node);
        n.lots(node).iter().all(|l| l.i == tree.time(node) || tree.prices(tree.ancestor(node, l.i))[l.j] <= s[l.j])
    })
}

fn node_decomposers(tree: &ScenarioTree) -> Result<Vec<Option<Decomposer>>> {
    par::try_map_range(tree.len(), |n| {
        if tree.is_leaf(n) {
            Ok(None)
        } else {
            Decomposer::new(&LocalMarket::at(tree, n)).map(Some)
        }
    })
}

/// q_t(Σ_i N_{i,t}) at each interior node (empty at leaves).
pub fn aggregate_projections(tree: &ScenarioTree, m: &LotMatrix) -> Result<Vec<Vec<f64>>> {
    let dz = node_decomposers(tree)?;
    par::try_map_range(tree.len(), |n| match &dz[n] {
        None => Ok(vec![]),
        Some(dec) => Ok(dec.decompose(&m.aggregate(n))?.q),
    })
}

/// Sell everything each period and buy back only q_t of the aggregate.
pub fn immediate_realization(tree: &ScenarioTree, n: &Strategy) -> Result<Strategy> {
    n.check_tree(tree)?;
    let proj = aggregate_projections(tree, &n.dense(tree))?;
    let mut out = LotMatrix::zeros(tree);
    for (node, q) in proj.iter().enumerate() {
        let t = tree.time(node);
        for (j, v) in q.iter().enumerate() {
            out.set(node, t, j, *v);
        }
    }
    validate_strategy(tree, &out)
}

/// N_{i,t} 1{τ > t}.
pub fn stop_strategy(tree: &ScenarioTree, n: &Strategy, tau: &StoppingTime) -> Result<Strategy> {
    n.check_tree(tree)?;
    let mut m = n.dense(tree);
    for node in 0..tree.len() {
        if !tau.running(tree, node) {
            m.block_mut(node).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    validate_strategy(tree, &m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBound {
    pub rbar: f64,
    /// L_t at each node
    pub values: Vec<f64>,
}

impl LossBound {
    pub fn terminal(&self, tree: &ScenarioTree) -> Vec<f64> {
        tree.leaves().map(|l| self.values[l]).collect()
    }
}

/// L_t = ((−x)∨0 + Σ_{s<t} ⟨q_s(Σ_i N_{i,s}), S_s⟩)(1+r̄)^T along each path.
pub fn loss_bound(tree: &ScenarioTree, n: &Strategy, x: f64, rbar: f64) -> Result<LossBound> {
    n.check_tree(tree)?;
    for (k, node) in tree.nodes().iter().enumerate() {
        if node.prices.iter().any(|&s| s < 0.0) {
            return Err(Error::NegativePriceForbidden { node: node.id });
        }
        if k > 0 && node.rate > rbar {
            return Err(Error::RateBoundViolated { node: node.id, rate: node.rate, bound: rbar });
        }
    }
    let proj = aggregate_projections(tree, &n.dense(tree))?;
    let growth = (1.0 + rbar).powi(tree.horizon() as i32);
    let mut values = vec![0.0; tree.len()];
    values[0] = (-x).max(0.0) * growth;
    for node in 1..tree.len() {
        let p = tree.node(node).parent.unwrap();
        values[node] = values[p] + dot(&proj[p], tree.prices(p)) * growth;
    }
    Ok(LossBound { rbar, values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedStrategy {
    /// β_t per interior node (empty at leaves)
    pub weights: Vec<Vec<f64>>,
    /// V0_t per node
    pub frictionless: Vec<f64>,
    /// V0_t rebuilt from x·Π(1 + r + ⟨β, ΔS⟩)
    pub product: Vec<f64>,
    pub max_rel_error: f64,
}

pub const ZERO_WEALTH_TOL: f64 = 1e-12;

/// β_t = q_t(Σ_i N_{i,t}) / V0_t, with the product representation of V0 checked.
pub fn normalized_strategy(tree: &ScenarioTree, n: &Strategy, x: f64) -> Result<NormalizedStrategy> {
    let ledger = evaluate(tree, n, x, 0.0)?;
    let v0 = ledger.frictionless;
    for (k, v) in v0.iter().enumerate() {
        if *v < -ZERO_WEALTH_TOL {
            return Err(Error::NegativeWealthEncountered { node: tree.label(k), wealth: *v });
        }
    }
    let proj = aggregate_projections(tree, &n.dense(tree))?;
    let weights: Vec<Vec<f64>> = proj
        .iter()
        .enumerate()
        .map(|(k, q)| if v0[k].abs() <= ZERO_WEALTH_TOL { vec![0.0; q.len()] } else { q.iter().map(|v| v / v0[k]).collect() })
        .collect();
    let mut product = vec![0.0; tree.len()];
    product[0] = x;
    let mut max_rel_error = 0.0f64;
    for k in 1..tree.len() {
        let p = tree.node(k).parent.unwrap();
        product[k] = product[p] * (1.0 + tree.rate(k) + dot(&weights[p], &tree.excess(p, k)));
    }
    for k in 0..tree.len() {
        // wealth that hit zero stays there; the product then carries no information
        if v0[k].abs() > ZERO_WEALTH_TOL {
            let scale = v0[k].abs().max(x.abs()).max(1e-300);
            max_rel_error = max_rel_error.max((product[k] - v0[k]).abs() / scale);
        }
    }
    Ok(NormalizedStrategy { weights, frictionless: v0, product, max_rel_error })
}
