//! Lot-level strategies. `N[i,j]` at a node at time t is the number of shares
//! of asset j bought at time i <= t still held after trading at t.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lot {
    pub i: usize,
    pub j: usize,
    pub qty: f64,
}

/// Dense lot blocks, one `(t+1) x d` row-major block per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LotMatrix {
    d: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl LotMatrix {
    pub fn zeros(tree: &ScenarioTree) -> LotMatrix {
        let d = tree.dim();
        let mut offsets = Vec::with_capacity(tree.len() + 1);
        let mut off = 0;
        for node in tree.nodes() {
            offsets.push(off);
            off += (node.time + 1) * d;
        }
        offsets.push(off);
        LotMatrix { d, offsets, data: vec![0.0; off] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Position of entry (n, i, j) in [`LotMatrix::as_slice`].
    pub fn index(&self, n: usize, i: usize, j: usize) -> usize {
        self.offsets[n] + i * self.d + j
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> f64 {
        self.data[self.offsets[n] + i * self.d + j]
    }

    pub fn set(&mut self, n: usize, i: usize, j: usize, v: f64) {
        self.data[self.offsets[n] + i * self.d + j] = v;
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[self.offsets[n]..self.offsets[n + 1]]
    }

    pub fn block_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[self.offsets[n]..self.offsets[n + 1]]
    }

    /// Lot `i` at node `n` as a d-vector.
    pub fn lot(&self, n: usize, i: usize) -> &[f64] {
        let s = self.offsets[n] + i * self.d;
        &self.data[s..s + self.d]
    }

    pub fn lot_mut(&mut self, n: usize, i: usize) -> &mut [f64] {
        let s = self.offsets[n] + i * self.d;
        &mut self.data[s..s + self.d]
    }

    /// Aggregate holding Σ_i N[i,·] at node `n`.
    pub fn aggregate(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for chunk in self.block(n).chunks(self.d) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scaled(&self, c: f64) -> LotMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// a·self + b·other, same layout.
    pub fn combine(&self, a: f64, other: &LotMatrix, b: f64) -> LotMatrix {
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o = a * *o + b * v;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &LotMatrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// A validated strategy, stored sparsely (nonzero lots only).
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    fingerprint: u64,
    lots: Vec<Vec<Lot>>,
}

impl Strategy {
    pub fn zero(tree: &ScenarioTree) -> Strategy {
        Strategy { fingerprint: tree.fingerprint(), lots: vec![vec![]; tree.len()] }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn lots(&self, n: usize) -> &[Lot] {
        &self.lots[n]
    }

    pub fn is_zero(&self) -> bool {
        self.lots.iter().all(|l| l.is_empty())
    }

    pub fn check_tree(&self, tree: &ScenarioTree) -> Result<()> {
        if self.fingerprint != tree.fingerprint() {
            return Err(Error::TreeMismatch);
        }
        Ok(())
    }

    pub fn dense(&self, tree: &ScenarioTree) -> LotMatrix {
        let mut m = LotMatrix::zeros(tree);
        for (n, lots) in self.lots.iter().enumerate() {
            for l in lots {
                m.set(n, l.i, l.j, l.qty);
            }
        }
        m
    }

    pub fn to_file(&self, tree: &ScenarioTree) -> StrategyFile {
        self.lots
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| NodeLots { node: tree.label(n), lots: l.clone() })
            .collect()
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> String {
        serde_json::to_string_pretty(&self.to_file(tree)).expect("strategy serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeLots {
    pub node: u64,
    pub lots: Vec<Lot>,
}

pub type StrategyFile = Vec<NodeLots>;

/// Parse the JSON strategy format and validate it against `tree`.
/// Lots are keyed by the tree file's node ids; missing nodes hold nothing.
pub fn strategy_from_json(tree: &ScenarioTree, text: &str) -> Result<Strategy> {
    let file: StrategyFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut m = LotMatrix::zeros(tree);
    for entry in &file {
        let n = tree.index_of(entry.node)?;
        let t = tree.time(n);
        for l in &entry.lots {
            if l.i > t || l.j >= tree.dim() {
                return Err(Error::LotOutOfRange { node: entry.node, i: l.i, j: l.j });
            }
            if !l.qty.is_finite() {
                return Err(Error::NonFinite { node: entry.node });
            }
            m.set(n, l.i, l.j, m.get(n, l.i, l.j) + l.qty);
        }
    }
    validate_strategy(tree, &m)
}

pub fn validate_strategy(tree: &ScenarioTree, m: &LotMatrix) -> Result<Strategy> {
    let d = tree.dim();
    if m.dim() != d || m.as_slice().len() != LotMatrix::zeros(tree).as_slice().len() {
        return Err(Error::DimensionMismatch("lot matrix does not fit tree".into()));
    }
    let mut lots = vec![vec![]; tree.len()];
    for (n, node) in tree.nodes().iter().enumerate() {
        let t = node.time;
        for i in 0..=t {
            for j in 0..d {
                let q = m.get(n, i, j);
                if !q.is_finite() {
                    return Err(Error::NonFinite { node: node.id });
                }
                if q < 0.0 {
                    return Err(Error::NegativeLot { node: node.id, i, j, qty: q });
                }
                if q == 0.0 {
                    continue;
                }
                if t == tree.horizon() {
                    return Err(Error::NotLiquidatedAtT { node: node.id, i, j, qty: q });
                }
                if let (Some(p), true) = (node.parent, i < t) {
                    let pq = m.get(p, i, j);
                    if q > pq {
                        return Err(Error::SellDownViolated { node: node.id, i, j, qty: q, parent_qty: pq });
                    }
                }
                lots[n].push(Lot { i, j, qty: q });
            }
        }
    }
    Ok(Strategy { fingerprint: tree.fingerprint(), lots })
}

/// Random admissible strategy: purchases U[0,scale] per node and asset,
/// each lot keeps an independent U[0,1] fraction per child.
pub fn sample_strategy(tree: &ScenarioTree, seed: u64, scale: f64) -> Strategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sample_lots(tree, &mut rng, scale);
    validate_strategy(tree, &m).expect("sampled strategy is admissible")
}

pub fn sample_lots<R: Rng>(tree: &ScenarioTree, rng: &mut R, scale: f64) -> LotMatrix {
    let d = tree.dim();
    let mut m = LotMatrix::zeros(tree);
    for (n, node) in tree.nodes().iter().enumerate() {
        let t = node.time;
        if t == tree.horizon() {
            continue;
        }
        if let Some(p) = node.parent {
            for i in 0..t {
                for j in 0..d {
                    let f: f64 = rng.gen();
                    m.set(n, i, j, f * m.get(p, i, j));
                }
            }
        }
        for j in 0..d {
            let b: f64 = rng.gen::<f64>() * scale;
            m.set(n, t, j, b);
        }
    }
    m
}

pub fn convex_combine(tree: &ScenarioTree, n1: &Strategy, n2: &Strategy, lambda: f64) -> Result<Strategy> {
    if n1.fingerprint != n2.fingerprint {
        return Err(Error::TreeMismatch);
    }
    n1.check_tree(tree)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0,1]")));
    }
    let m = n1.dense(tree).combine(lambda, &n2.dense(tree), 1.0 - lambda);
    validate_strategy(tree, &m)
}

pub fn scale_strategy(tree: &ScenarioTree, n: &Strategy, c: f64) -> Result<Strategy> {
    n.check_tree(tree)?;
    validate_strategy(tree, &n.dense(tree).scaled(c))
}

/// Stopping time stored as a label per node. A label `<= time(n)` means the
/// path stopped at that time (inherited by all descendants); a label
/// `> time(n)` means still running at n. Leaves carry τ itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTime {
    labels: Vec<usize>,
}

impl StoppingTime {
    pub fn constant(tree: &ScenarioTree, k: usize) -> StoppingTime {
        StoppingTime { labels: vec![k.min(tree.horizon()); tree.len()] }
    }

    /// First time the predicate holds along the path, T if never.
    pub fn first_hit(tree: &ScenarioTree, hit: impl Fn(usize) -> bool) -> StoppingTime {
        let mut labels = vec![0; tree.len()];
        for (n, node) in tree.nodes().iter().enumerate() {
            let stopped_before = node.parent.map(|p| labels[p] <= tree.time(p)).unwrap_or(false);
            labels[n] = if stopped_before {
                labels[node.parent.unwrap()]
            } else if hit(n) || node.time == tree.horizon() {
                node.time
            } else {
                tree.horizon()
            };
        }
        StoppingTime { labels }
    }

    /// Build from τ on each leaf (in leaf order); checks that {τ > t} is
    /// decided at time t.
    pub fn from_leaf_values(tree: &ScenarioTree, values: &[usize]) -> Result<StoppingTime> {
        let leaves = tree.leaves();
        if values.len() != leaves.len() {
            return Err(Error::DimensionMismatch(format!("{} leaf values for {} leaves", values.len(), leaves.len())));
        }
        let mut lo = vec![usize::MAX; tree.len()];
        let mut hi = vec![0usize; tree.len()];
        for (k, l) in leaves.clone().enumerate() {
            if values[k] > tree.horizon() {
                return Err(Error::InvalidStoppingTime { node: tree.label(l), reason: format!("value {} > T", values[k]) });
            }
            for &a in tree.path_prefix(l) {
                lo[a] = lo[a].min(values[k]);
                hi[a] = hi[a].max(values[k]);
            }
        }
        let mut labels = vec![0; tree.len()];
        for n in 0..tree.len() {
            let t = tree.time(n);
            labels[n] = if hi[n] <= t {
                if lo[n] != hi[n] {
                    return Err(Error::InvalidStoppingTime { node: tree.label(n), reason: "stop time not determined by history".into() });
                }
                lo[n]
            } else if lo[n] > t {
                lo[n]
            } else {
                return Err(Error::InvalidStoppingTime { node: tree.label(n), reason: "stopping decision not adapted".into() });
            };
        }
        StoppingTime::from_labels(tree, labels)
    }

    pub fn from_labels(tree: &ScenarioTree, labels: Vec<usize>) -> Result<StoppingTime> {
        if labels.len() != tree.len() {
            return Err(Error::DimensionMismatch("stopping time labels".into()));
        }
        for (n, node) in tree.nodes().iter().enumerate() {
            let l = labels[n];
            if l > tree.horizon() {
                return Err(Error::InvalidStoppingTime { node: node.id, reason: format!("label {l} > T") });
            }
            if node.time == tree.horizon() && l > node.time {
                return Err(Error::InvalidStoppingTime { node: node.id, reason: "leaf label beyond T".into() });
            }
            if let Some(p) = node.parent {
                let (pl, pt) = (labels[p], tree.time(p));
                if pl <= pt && l != pl {
                    return Err(Error::InvalidStoppingTime { node: node.id, reason: "stopped parent, child differs".into() });
                }
                if pl > pt && l <= pt {
                    return Err(Error::InvalidStoppingTime { node: node.id, reason: "stops before parent's time".into() });
                }
            }
        }
        Ok(StoppingTime { labels })
    }

    /// τ > time(n), i.e. the strategy is still active after trading at n.
    pub fn running(&self, tree: &ScenarioTree, n: usize) -> bool {
        self.labels[n] > tree.time(n)
    }

    pub fn label(&self, n: usize) -> usize {
        self.labels[n]
    }

    /// τ evaluated on each leaf.
    pub fn leaf_values(&self, tree: &ScenarioTree) -> Vec<usize> {
        tree.leaves().map(|l| self.labels[l]).collect()
    }
}
