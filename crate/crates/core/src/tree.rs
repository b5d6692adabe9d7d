//! Finite scenario trees: nodes carry prices, the interest rate earned over
//! the period ending at the node, and the transition probability from the
//! parent.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub id: u64,
    pub time: usize,
    #[serde(default)]
    pub parent: Option<u64>,
    #[serde(default = "one")]
    pub prob: f64,
    #[serde(rename = "S")]
    pub prices: Vec<f64>,
    #[serde(default)]
    pub r: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTree {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub d: usize,
    pub nodes: Vec<RawNode>,
}

const TREE_KEYS: &[&str] = &["T", "d", "nodes"];
const NODE_KEYS: &[&str] = &["id", "time", "parent", "prob", "S", "r"];

impl RawTree {
    /// Parse the JSON interchange format. Unknown keys are rejected unless `lax`.
    pub fn from_json(text: &str, lax: bool) -> Result<RawTree> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if !lax {
            check_keys(&value, TREE_KEYS, "tree")?;
            if let Some(nodes) = value.get("nodes").and_then(|v| v.as_array()) {
                for n in nodes {
                    check_keys(n, NODE_KEYS, "node")?;
                }
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }
}

pub(crate) fn check_keys(v: &serde_json::Value, allowed: &[&str], what: &str) -> Result<()> {
    if let Some(obj) = v.as_object() {
        for k in obj.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse(format!("unknown {what} field `{k}`")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TreeOptions {
    /// Reject negative prices (needed by the loss bound machinery).
    pub require_nonneg_prices: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Id from the input file.
    pub id: u64,
    pub time: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Transition probability from the parent (1 at the root).
    pub prob: f64,
    pub prices: Vec<f64>,
    /// Interest over the period ending here; unused at the root.
    pub rate: f64,
}

/// A validated tree. Node indices are canonical: breadth-first, children in
/// input order, so each time layer is a contiguous index range.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    dim: usize,
    nodes: Vec<Node>,
    layer_start: Vec<usize>,
    ancestors: Vec<Vec<usize>>,
    path_prob: Vec<f64>,
    index: HashMap<u64, usize>,
    fingerprint: u64,
}

pub fn validate_tree(raw: &RawTree) -> Result<ScenarioTree> {
    validate_tree_with(raw, TreeOptions::default())
}

pub fn validate_tree_with(raw: &RawTree, opts: TreeOptions) -> Result<ScenarioTree> {
    if raw.horizon == 0 {
        return Err(Error::InvalidHorizon);
    }
    let n = raw.nodes.len();
    let mut by_id: HashMap<u64, usize> = HashMap::with_capacity(n);
    for (k, node) in raw.nodes.iter().enumerate() {
        if by_id.insert(node.id, k).is_some() {
            return Err(Error::DuplicateNode { node: node.id });
        }
    }
    let mut parent = vec![None; n];
    let mut roots = vec![];
    for (k, node) in raw.nodes.iter().enumerate() {
        match node.parent {
            None => roots.push(k),
            Some(p) => match by_id.get(&p) {
                Some(&pk) => parent[k] = Some(pk),
                None => return Err(Error::UnknownParent { node: node.id, parent: p }),
            },
        }
    }

    // cycles first: a cycle never reaches a root
    let mut state = vec![0u8; n]; // 0 new, 1 on stack, 2 done
    for start in 0..n {
        let mut chain = vec![];
        let mut k = start;
        loop {
            match state[k] {
                2 => break,
                1 => return Err(Error::CycleDetected { node: raw.nodes[k].id }),
                _ => {}
            }
            state[k] = 1;
            chain.push(k);
            match parent[k] {
                Some(p) => k = p,
                None => break,
            }
        }
        for c in chain {
            state[c] = 2;
        }
    }

    if roots.len() != 1 {
        return Err(Error::RootCount { count: roots.len() });
    }
    let root = roots[0];
    if raw.nodes[root].time != 0 {
        return Err(Error::RootCount { count: 0 });
    }

    let mut children = vec![vec![]; n];
    for k in 0..n {
        if let Some(p) = parent[k] {
            let (t, pt) = (raw.nodes[k].time, raw.nodes[p].time);
            if t != pt + 1 {
                return Err(Error::TimeGap { node: raw.nodes[k].id, time: t, parent_time: pt });
            }
            children[p].push(k);
        }
    }

    for (k, node) in raw.nodes.iter().enumerate() {
        if node.time > raw.horizon {
            return Err(Error::BeyondHorizon { node: node.id, time: node.time });
        }
        if node.time < raw.horizon && children[k].is_empty() {
            return Err(Error::MissingChildren { node: node.id, time: node.time });
        }
        if node.prices.len() != raw.d {
            return Err(Error::DimensionMismatch(format!(
                "node {} has {} prices, d = {}",
                node.id,
                node.prices.len(),
                raw.d
            )));
        }
        if node.prices.iter().any(|s| !s.is_finite()) || !node.r.is_finite() || !node.prob.is_finite() {
            return Err(Error::NonFinite { node: node.id });
        }
        if opts.require_nonneg_prices && node.prices.iter().any(|&s| s < 0.0) {
            return Err(Error::NegativePrice { node: node.id });
        }
        if node.time >= 1 && node.r < 0.0 {
            return Err(Error::NegativeRate { node: node.id, rate: node.r });
        }
        if node.time >= 1 && node.prob <= 0.0 {
            return Err(Error::NonPositiveProbability { node: node.id, prob: node.prob });
        }
    }

    let mut probs: Vec<f64> = raw.nodes.iter().map(|n| n.prob).collect();
    probs[root] = 1.0;
    for k in 0..n {
        if children[k].is_empty() {
            continue;
        }
        let sum: f64 = children[k].iter().map(|&c| raw.nodes[c].prob).sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::ProbabilityNotNormalized { node: raw.nodes[k].id, sum });
        }
        for &c in &children[k] {
            probs[c] = raw.nodes[c].prob / sum;
        }
    }

    // breadth-first canonical order
    let mut order = Vec::with_capacity(n);
    order.push(root);
    let mut head = 0;
    while head < order.len() {
        let k = order[head];
        head += 1;
        order.extend(children[k].iter().copied());
    }
    let mut new_index = vec![usize::MAX; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let nodes: Vec<Node> = order
        .iter()
        .map(|&old| {
            let r = &raw.nodes[old];
            Node {
                id: r.id,
                time: r.time,
                parent: parent[old].map(|p| new_index[p]),
                children: children[old].iter().map(|&c| new_index[c]).collect(),
                prob: probs[old],
                prices: r.prices.clone(),
                rate: if r.time == 0 { 0.0 } else { r.r },
            }
        })
        .collect();
    Ok(ScenarioTree::from_canonical(raw.horizon, raw.d, nodes))
}

impl ScenarioTree {
    fn from_canonical(horizon: usize, dim: usize, nodes: Vec<Node>) -> ScenarioTree {
        let n = nodes.len();
        let mut layer_start = vec![n; horizon + 2];
        for (k, node) in nodes.iter().enumerate().rev() {
            layer_start[node.time] = k;
        }
        let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut path_prob = Vec::with_capacity(n);
        for (k, node) in nodes.iter().enumerate() {
            match node.parent {
                None => {
                    ancestors.push(vec![k]);
                    path_prob.push(1.0);
                }
                Some(p) => {
                    let mut a = ancestors[p].clone();
                    a.push(k);
                    ancestors.push(a);
                    path_prob.push(path_prob[p] * node.prob);
                }
            }
        }
        let index = nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        let mut h = DefaultHasher::new();
        horizon.hash(&mut h);
        dim.hash(&mut h);
        for node in &nodes {
            node.id.hash(&mut h);
            node.parent.hash(&mut h);
            node.prob.to_bits().hash(&mut h);
            node.rate.to_bits().hash(&mut h);
            for s in &node.prices {
                s.to_bits().hash(&mut h);
            }
        }
        ScenarioTree {
            horizon,
            dim,
            nodes,
            layer_start,
            ancestors,
            path_prob,
            index,
            fingerprint: h.finish(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, n: usize) -> &Node {
        &self.nodes[n]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn time(&self, n: usize) -> usize {
        self.nodes[n].time
    }

    pub fn prices(&self, n: usize) -> &[f64] {
        &self.nodes[n].prices
    }

    pub fn rate(&self, n: usize) -> f64 {
        self.nodes[n].rate
    }

    pub fn label(&self, n: usize) -> u64 {
        self.nodes[n].id
    }

    /// Canonical indices of all nodes at time `t`.
    pub fn layer(&self, t: usize) -> Range<usize> {
        self.layer_start[t]..self.layer_start[t + 1]
    }

    pub fn leaves(&self) -> Range<usize> {
        self.layer(self.horizon)
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn is_leaf(&self, n: usize) -> bool {
        self.nodes[n].time == self.horizon
    }

    /// Ancestor of `n` at time `i <= time(n)`.
    pub fn ancestor(&self, n: usize, i: usize) -> usize {
        self.ancestors[n][i]
    }

    /// Root..=n, length time(n)+1.
    pub fn path_prefix(&self, n: usize) -> &[usize] {
        &self.ancestors[n]
    }

    pub fn index_of(&self, id: u64) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode { node: id })
    }

    /// Path prefix looked up by input id.
    pub fn path_prefix_by_id(&self, id: u64) -> Result<Vec<u64>> {
        let n = self.index_of(id)?;
        Ok(self.ancestors[n].iter().map(|&a| self.nodes[a].id).collect())
    }

    /// Unconditional probability of reaching `n`.
    pub fn path_prob(&self, n: usize) -> f64 {
        self.path_prob[n]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Child excess return S_c − (1+r_c)S_n.
    pub fn excess(&self, n: usize, c: usize) -> Vec<f64> {
        let g = 1.0 + self.nodes[c].rate;
        self.nodes[c]
            .prices
            .iter()
            .zip(&self.nodes[n].prices)
            .map(|(sc, sn)| sc - g * sn)
            .collect()
    }

    pub fn max_rate(&self) -> f64 {
        self.nodes.iter().skip(1).map(|n| n.rate).fold(0.0, f64::max)
    }

    pub fn to_raw(&self) -> RawTree {
        RawTree {
            horizon: self.horizon,
            d: self.dim,
            nodes: self
                .nodes
                .iter()
                .map(|n| RawNode {
                    id: n.id,
                    time: n.time,
                    parent: n.parent.map(|p| self.nodes[p].id),
                    prob: n.prob,
                    prices: n.prices.clone(),
                    r: n.rate,
                })
                .collect(),
        }
    }

    /// Expand an i.i.d. multiplicative lattice into a (non-recombining) tree.
    /// Each outcome is `(probability, gross price factors per asset)`.
    pub fn iid_lattice(horizon: usize, s0: &[f64], rate: f64, outcomes: &[(f64, Vec<f64>)]) -> Result<ScenarioTree> {
        let mut nodes = vec![RawNode { id: 0, time: 0, parent: None, prob: 1.0, prices: s0.to_vec(), r: 0.0 }];
        let mut frontier = vec![0usize];
        for t in 1..=horizon {
            let mut next = vec![];
            for &p in &frontier {
                for (prob, growth) in outcomes {
                    let prices = nodes[p].prices.iter().zip(growth).map(|(s, g)| s * g).collect();
                    let id = nodes.len() as u64;
                    nodes.push(RawNode { id, time: t, parent: Some(p as u64), prob: *prob, prices, r: rate });
                    next.push(id as usize);
                }
            }
            frontier = next;
        }
        validate_tree(&RawTree { horizon, d: s0.len(), nodes })
    }
}

/// Small builder used by tests, fixtures and the example constructions.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    raw: RawTree,
}

impl TreeBuilder {
    pub fn new(horizon: usize, d: usize, s0: Vec<f64>) -> TreeBuilder {
        TreeBuilder {
            raw: RawTree {
                horizon,
                d,
                nodes: vec![RawNode { id: 0, time: 0, parent: None, prob: 1.0, prices: s0, r: 0.0 }],
            },
        }
    }

    /// Add a child of builder node `parent`, returning its id.
    pub fn child(&mut self, parent: u64, prob: f64, prices: Vec<f64>, r: f64) -> u64 {
        let id = self.raw.nodes.len() as u64;
        let time = self.raw.nodes[parent as usize].time + 1;
        self.raw.nodes.push(RawNode { id, time, parent: Some(parent), prob, prices, r });
        id
    }

    pub fn raw(&self) -> &RawTree {
        &self.raw
    }

    pub fn build(&self) -> Result<ScenarioTree> {
        validate_tree(&self.raw)
    }
}
