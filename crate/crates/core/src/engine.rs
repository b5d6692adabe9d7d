//! Wealth and tax processes: realized gains G, the LUL tax stream Π, the
//! bank account η and the frictionless wealth V0, plus the linear tax rule
//! device and the min-over-rules oracle.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::strategy::{LotMatrix, Strategy};
use crate::tree::ScenarioTree;

pub const ENGINE_TOL: f64 = 1e-10;
pub const DEFAULT_RULE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxLedger {
    pub x: f64,
    pub alpha: f64,
    pub gains: Vec<f64>,
    pub running_max: Vec<f64>,
    pub taxes: Vec<f64>,
    pub bank: Vec<f64>,
    pub frictionless: Vec<f64>,
}

impl TaxLedger {
    /// V^α at each leaf, in leaf order.
    pub fn terminal_wealth(&self, tree: &ScenarioTree) -> Vec<f64> {
        tree.leaves().map(|l| self.bank[l]).collect()
    }

    /// V^0 at each leaf, in leaf order.
    pub fn terminal_frictionless(&self, tree: &ScenarioTree) -> Vec<f64> {
        tree.leaves().map(|l| self.frictionless[l]).collect()
    }
}

fn check_inputs(x: f64, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidTaxRate(alpha));
    }
    if !x.is_finite() {
        return Err(Error::NonFiniteCapital(x));
    }
    Ok(())
}

pub fn evaluate(tree: &ScenarioTree, n: &Strategy, x: f64, alpha: f64) -> Result<TaxLedger> {
    n.check_tree(tree)?;
    evaluate_dense(tree, &n.dense(tree), x, alpha)
}

/// Same as [`evaluate`] on raw lot blocks; the caller is responsible for the
/// strategy constraints.
pub fn evaluate_dense(tree: &ScenarioTree, m: &LotMatrix, x: f64, alpha: f64) -> Result<TaxLedger> {
    check_inputs(x, alpha)?;
    run(tree, m, x, alpha, None)
}

pub fn evaluate_many(tree: &ScenarioTree, strategies: &[Strategy], x: f64, alpha: f64) -> Vec<Result<TaxLedger>> {
    par::map(strategies, |s| evaluate(tree, s, x, alpha))
}

/// Per-node G. Needs α because the bank interest feeding G is after-tax.
pub fn realized_gains(tree: &ScenarioTree, n: &Strategy, x: f64, alpha: f64) -> Result<Vec<f64>> {
    Ok(evaluate(tree, n, x, alpha)?.gains)
}

/// Π = α · running max of G along each path.
pub fn lul_tax_stream(tree: &ScenarioTree, gains: &[f64], alpha: f64) -> Vec<f64> {
    let mut run_max = vec![0.0; tree.len()];
    for n in 0..tree.len() {
        run_max[n] = match tree.node(n).parent {
            None => gains[n].max(0.0),
            Some(p) => run_max[p].max(gains[n]),
        };
    }
    run_max.iter().map(|g| alpha * g).collect()
}

#[derive(Clone, Copy)]
struct NodeFlows {
    /// realized lot gains Σ_i <N_{i,t-1} - N_{i,t}, S_t - S_i>
    lot_gain: f64,
    /// Σ_i <N_{i,t-1} - N_{i,t}, S_t>
    proceeds: f64,
    /// <N_{t,t}, S_t>
    purchase: f64,
    /// Σ_{i<t} <N_{i,t-1}, S_t - (1+r) S_{t-1}>
    frictionless_gain: f64,
    /// Σ_{i<=t} |<N_{i,t}, S_i>| and the signed value
    cost_basis: f64,
    cost_basis_abs: f64,
}

fn flows(tree: &ScenarioTree, m: &LotMatrix, n: usize) -> NodeFlows {
    let node = tree.node(n);
    let t = node.time;
    let s = &node.prices;
    let mut f = NodeFlows { lot_gain: 0.0, proceeds: 0.0, purchase: 0.0, frictionless_gain: 0.0, cost_basis: 0.0, cost_basis_abs: 0.0 };
    if let Some(p) = node.parent {
        let g = 1.0 + node.rate;
        let sp = tree.prices(p);
        for i in 0..t {
            let basis = tree.prices(tree.ancestor(n, i));
            let (old, new) = (m.lot(p, i), m.lot(n, i));
            for j in 0..s.len() {
                let sold = old[j] - new[j];
                f.lot_gain += sold * (s[j] - basis[j]);
                f.proceeds += sold * s[j];
                f.frictionless_gain += old[j] * (s[j] - g * sp[j]);
            }
        }
    }
    for i in 0..=t {
        let basis = tree.prices(tree.ancestor(n, i));
        for (q, b) in m.lot(n, i).iter().zip(basis) {
            f.cost_basis += q * b;
            f.cost_basis_abs += (q * b).abs();
        }
    }
    f.purchase = m.lot(n, t).iter().zip(s).map(|(q, s)| q * s).sum();
    f
}

/// Forward pass. With `rule = Some(labels)` taxes are αG at the rule's date
/// instead of the LUL running max.
fn run(tree: &ScenarioTree, m: &LotMatrix, x: f64, alpha: f64, rule: Option<&[usize]>) -> Result<TaxLedger> {
    let len = tree.len();
    let mut l = TaxLedger {
        x,
        alpha,
        gains: vec![0.0; len],
        running_max: vec![0.0; len],
        taxes: vec![0.0; len],
        bank: vec![0.0; len],
        frictionless: vec![0.0; len],
    };
    let f0 = flows(tree, m, 0);
    l.bank[0] = x - f0.purchase;
    l.frictionless[0] = x;
    let mut scales = vec![0.0; len];
    scales[0] = [1.0, x, f0.purchase, f0.cost_basis_abs].iter().fold(0f64, |a, v| a.max(v.abs()));
    for t in 1..=tree.horizon() {
        let layer = tree.layer(t);
        let big = layer.len() >= 4096;
        let compute = |n: usize| -> Result<(f64, f64, f64, f64, f64, f64)> {
            let node = tree.node(n);
            let p = node.parent.expect("non-root");
            let r = node.rate;
            let f = flows(tree, m, n);
            let g = l.gains[p] + l.bank[p] * r + f.lot_gain;
            let rmax = l.running_max[p].max(g);
            let tax = match rule {
                None => alpha * rmax,
                Some(labels) => {
                    let tau = labels[n];
                    if tau == t {
                        alpha * g
                    } else {
                        alpha * l.gains[tree.ancestor(n, tau)]
                    }
                }
            };
            let bank = l.bank[p] * (1.0 + r) + f.proceeds - f.purchase - (tax - l.taxes[p]);
            let v0 = (1.0 + r) * l.frictionless[p] + f.frictionless_gain;
            let closed = x + g - tax - f.cost_basis;
            // roundoff in G and the bank accumulates along the path
            let scale = [x, g, tax, f.cost_basis_abs, l.bank[p], f.proceeds, f.purchase].iter().fold(scales[p], |a, v| a.max(v.abs()));
            if (bank - closed).abs() > ENGINE_TOL * scale {
                return Err(Error::EngineInconsistency { node: node.id, recursion: bank, closed_form: closed });
            }
            Ok((g, rmax, tax, bank, v0, scale))
        };
        let vals: Vec<_> = if big {
            par::try_map_range(layer.len(), |k| compute(layer.start + k))?
        } else {
            par::sequential(|| layer.clone().map(compute).collect::<Result<Vec<_>>>())?
        };
        for (k, (g, rmax, tax, bank, v0, scale)) in vals.into_iter().enumerate() {
            let n = layer.start + k;
            scales[n] = scale;
            l.gains[n] = g;
            l.running_max[n] = rmax;
            l.taxes[n] = tax;
            l.bank[n] = bank;
            l.frictionless[n] = v0;
        }
    }
    Ok(l)
}

/// Adapted tax settlement schedule: label τ(n) ∈ {0..time(n)} is the last
/// date at or before n at which taxes αG were settled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaxRule {
    labels: Vec<usize>,
}

impl TaxRule {
    pub fn from_labels(tree: &ScenarioTree, labels: Vec<usize>) -> Result<TaxRule> {
        if labels.len() != tree.len() {
            return Err(Error::DimensionMismatch("tax rule labels".into()));
        }
        for (n, node) in tree.nodes().iter().enumerate() {
            let tau = labels[n];
            let bad = |reason: &str| Err(Error::InvalidTaxRule { node: node.id, reason: reason.into() });
            if tau > node.time {
                return bad("label exceeds node time");
            }
            if let Some(p) = node.parent {
                if tau < labels[p] {
                    return bad("labels decrease along the path");
                }
            }
            if tau >= 1 && labels[tree.ancestor(n, tau)] != tau {
                return bad("label inconsistent with the node at that date");
            }
        }
        Ok(TaxRule { labels })
    }

    /// Settle at every node where `tax_now` holds (root excluded).
    pub fn from_tax_dates(tree: &ScenarioTree, tax_now: impl Fn(usize) -> bool) -> TaxRule {
        let mut labels = vec![0; tree.len()];
        for n in 1..tree.len() {
            let p = tree.node(n).parent.unwrap();
            labels[n] = if tax_now(n) { tree.time(n) } else { labels[p] };
        }
        TaxRule { labels }
    }

    pub fn never(tree: &ScenarioTree) -> TaxRule {
        TaxRule { labels: vec![0; tree.len()] }
    }

    pub fn every_period(tree: &ScenarioTree) -> TaxRule {
        TaxRule { labels: tree.nodes().iter().map(|n| n.time).collect() }
    }

    /// τ*: earliest date attaining the running max of G. Reproduces LUL taxes.
    pub fn lul_equivalent(tree: &ScenarioTree, ledger: &TaxLedger) -> TaxRule {
        let mut labels = vec![0; tree.len()];
        for n in 1..tree.len() {
            let p = tree.node(n).parent.unwrap();
            labels[n] = if ledger.gains[n] > ledger.running_max[p] { tree.time(n) } else { labels[p] };
        }
        TaxRule { labels }
    }

    pub fn label(&self, n: usize) -> usize {
        self.labels[n]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Terminal η under a linear tax rule, per leaf.
pub fn linear_rule_wealth(tree: &ScenarioTree, n: &Strategy, x: f64, alpha: f64, rule: &TaxRule) -> Result<Vec<f64>> {
    n.check_tree(tree)?;
    Ok(linear_rule_ledger(tree, &n.dense(tree), x, alpha, rule)?.terminal_wealth(tree))
}

pub fn linear_rule_ledger(tree: &ScenarioTree, m: &LotMatrix, x: f64, alpha: f64, rule: &TaxRule) -> Result<TaxLedger> {
    check_inputs(x, alpha)?;
    if rule.labels.len() != tree.len() {
        return Err(Error::DimensionMismatch("tax rule does not fit tree".into()));
    }
    run(tree, m, x, alpha, Some(&rule.labels))
}

/// Number of (leaf, path rule) pairs: each leaf has 2^T settlement patterns.
pub fn rule_path_count(tree: &ScenarioTree) -> u128 {
    (tree.num_leaves() as u128) << tree.horizon()
}

/// Terminal η for every leaf and settlement pattern. Entry
/// `leaf * 2^T + pattern`, where bit t-1 of `pattern` means "settle at t".
pub fn rule_path_values(tree: &ScenarioTree, m: &LotMatrix, x: f64, alpha: f64) -> Vec<f64> {
    let big_t = tree.horizon();
    let width = 1usize << big_t;
    let leaves = tree.leaves();
    let root = tree.root();
    let f0 = flows(tree, m, root);
    let bank0 = x - f0.purchase;
    let kids = &tree.node(root).children;
    let chunks = par::map(kids, |&c| {
        let (lo, hi) = leaf_span(tree, c);
        let mut out = vec![0.0; (hi - lo) * width];
        let mut g_hist = vec![0.0; big_t + 1];
        dfs(tree, m, alpha, c, &mut g_hist, 0, bank0, 0.0, 0, lo, width, &mut out);
        out
    });
    let mut all = Vec::with_capacity(leaves.len() * width);
    for c in chunks {
        all.extend(c);
    }
    all
}

/// Leaf index range (relative to the first leaf) below `n`.
fn leaf_span(tree: &ScenarioTree, n: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (n, n);
    while !tree.is_leaf(lo) {
        lo = tree.node(lo).children[0];
        hi = *tree.node(hi).children.last().unwrap();
    }
    let first = tree.leaves().start;
    (lo - first, hi + 1 - first)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    tree: &ScenarioTree,
    m: &LotMatrix,
    alpha: f64,
    n: usize,
    g_hist: &mut [f64],
    tau_prev: usize,
    bank_prev: f64,
    tax_prev: f64,
    pattern: usize,
    leaf_base: usize,
    width: usize,
    out: &mut [f64],
) {
    let node = tree.node(n);
    let t = node.time;
    let r = node.rate;
    let f = flows(tree, m, n);
    let g = g_hist[t - 1] + bank_prev * r + f.lot_gain;
    g_hist[t] = g;
    for settle in [false, true] {
        let tau = if settle { t } else { tau_prev };
        let tax = alpha * g_hist[tau];
        let bank = bank_prev * (1.0 + r) + f.proceeds - f.purchase - (tax - tax_prev);
        let pat = if settle { pattern | (1 << (t - 1)) } else { pattern };
        if node.children.is_empty() {
            let leaf = n - tree.leaves().start - leaf_base;
            out[leaf * width + pat] = bank;
        } else {
            for &c in &node.children {
                dfs(tree, m, alpha, c, g_hist, tau, bank, tax, pat, leaf_base, width, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleMinimum {
    /// min over rules of terminal η, per leaf
    pub per_leaf: Vec<f64>,
    /// minimizing τ path (τ_0..τ_T) per leaf; earliest pattern on ties
    pub argmin: Vec<Vec<usize>>,
    pub paths_enumerated: u64,
}

pub fn min_over_tax_rules(tree: &ScenarioTree, n: &Strategy, x: f64, alpha: f64, cap: u64) -> Result<RuleMinimum> {
    n.check_tree(tree)?;
    check_inputs(x, alpha)?;
    let count = rule_path_count(tree);
    if count > cap as u128 {
        return Err(Error::EnumerationCapExceeded { count, cap });
    }
    let vals = rule_path_values(tree, &n.dense(tree), x, alpha);
    let width = 1usize << tree.horizon();
    let mut per_leaf = vec![];
    let mut argmin = vec![];
    for row in vals.chunks(width) {
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v < row[best] {
                best = k;
            }
        }
        per_leaf.push(row[best]);
        argmin.push(pattern_to_path(best, tree.horizon()));
    }
    Ok(RuleMinimum { per_leaf, argmin, paths_enumerated: count as u64 })
}

/// τ_0..τ_T along a path from a settlement pattern.
pub fn pattern_to_path(pattern: usize, horizon: usize) -> Vec<usize> {
    let mut tau = vec![0; horizon + 1];
    for t in 1..=horizon {
        tau[t] = if pattern & (1 << (t - 1)) != 0 { t } else { tau[t - 1] };
    }
    tau
}
