//! Expected-utility maximization over lot strategies, a grid-search oracle
//! and the α-versus-frictionless comparison.
//!
//! V^α at a leaf is the minimum over settlement patterns of functions that
//! are affine in (x, lots). The optimizer works on the epigraph form
//!
//!   max Σ p_l U(w_l)  s.t.  w_l ≤ aff_{l,k}(N) ∀k,  N ≥ 0,  sell-down,  N ≤ cap,  w ≥ 0,
//!
//! which is smooth and concave, and follows the central path of a log
//! barrier with damped Newton steps.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cone::{admissible_polytope, check_na, dominating_strategy, LocalMarket};
use crate::engine::{self, rule_path_count, rule_path_values, TaxRule, DEFAULT_RULE_CAP};
use crate::error::{Error, Result};
use crate::par;
use crate::strategy::{validate_strategy, LotMatrix, Strategy};
use crate::tree::ScenarioTree;
use crate::utility::UtilitySpec;

/// The free lot entries (n, i, j): interior nodes, i ≤ time(n).
#[derive(Debug, Clone, PartialEq)]
pub struct LotVars {
    entries: Vec<(usize, usize, usize)>,
    slots: Vec<usize>,
    /// for i < t: variable index of the same lot at the parent
    parent_var: Vec<Option<usize>>,
}

impl LotVars {
    pub fn new(tree: &ScenarioTree) -> LotVars {
        let proto = LotMatrix::zeros(tree);
        let d = tree.dim();
        let mut entries = vec![];
        let mut slots = vec![];
        let mut parent_var = vec![];
        let mut var_of = std::collections::HashMap::new();
        for (n, node) in tree.nodes().iter().enumerate() {
            if node.children.is_empty() {
                continue;
            }
            for i in 0..=node.time {
                for j in 0..d {
                    let k = entries.len();
                    var_of.insert((n, i, j), k);
                    entries.push((n, i, j));
                    slots.push(proto.index(n, i, j));
                    parent_var.push(if i < node.time { node.parent.map(|p| var_of[&(p, i, j)]) } else { None });
                }
            }
        }
        LotVars { entries, slots, parent_var }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (node, lot date, asset) per variable.
    pub fn entries(&self) -> &[(usize, usize, usize)] {
        &self.entries
    }

    pub fn to_matrix(&self, tree: &ScenarioTree, z: &[f64]) -> LotMatrix {
        let mut m = LotMatrix::zeros(tree);
        let data = m.as_mut_slice();
        for (&s, &v) in self.slots.iter().zip(z) {
            data[s] = v;
        }
        m
    }

    pub fn from_matrix(&self, m: &LotMatrix) -> Vec<f64> {
        self.slots.iter().map(|&s| m.as_slice()[s]).collect()
    }

    fn unit(&self, tree: &ScenarioTree, k: usize) -> LotMatrix {
        let mut m = LotMatrix::zeros(tree);
        m.as_mut_slice()[self.slots[k]] = 1.0;
        m
    }
}

/// Terminal bank value for every (leaf, settlement pattern) as
/// `capital[row]·x + slopes[row]·z`, rows ordered `leaf * 2^T + pattern`.
#[derive(Debug, Clone)]
pub struct PathAffine {
    pub width: usize,
    pub capital: Vec<f64>,
    pub slopes: DMatrix<f64>,
}

impl PathAffine {
    pub fn new(tree: &ScenarioTree, vars: &LotVars, alpha: f64, rule_cap: u64) -> Result<PathAffine> {
        let count = rule_path_count(tree);
        if count > rule_cap as u128 {
            return Err(Error::EnumerationCapExceeded { count, cap: rule_cap });
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidTaxRate(alpha));
        }
        let capital = rule_path_values(tree, &LotMatrix::zeros(tree), 1.0, alpha);
        let cols = par::map_range(vars.len(), |k| rule_path_values(tree, &vars.unit(tree, k), 0.0, alpha));
        let rows = capital.len();
        let slopes = DMatrix::from_fn(rows, vars.len(), |r, k| cols[k][r]);
        Ok(PathAffine { width: 1 << tree.horizon(), capital, slopes })
    }

    pub fn values(&self, x: f64, z: &[f64]) -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        let s = &self.slopes * zv;
        self.capital.iter().zip(s.iter()).map(|(c, v)| c * x + v).collect()
    }

    /// V^α per leaf: the minimum over patterns.
    pub fn leaf_wealth(&self, x: f64, z: &[f64]) -> Vec<f64> {
        self.values(x, z).chunks(self.width).map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerConfig {
    /// total Newton iterations across all barrier rounds
    pub max_iters: usize,
    /// seeds the interior starting point
    pub seed: u64,
    /// stop once the barrier gap m·μ is below this (relative to max(1, |value|))
    pub gap_tol: f64,
    /// per-variable share cap; derived from the tree when None
    pub cap: Option<f64>,
    pub rule_cap: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { max_iters: 5000, seed: 0, gap_tol: 1e-9, cap: None, rule_cap: DEFAULT_RULE_CAP }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub value: f64,
    #[serde(skip)]
    pub strategy: Strategy,
    /// V^α per leaf under the returned strategy
    pub leaf_wealth: Vec<f64>,
    pub min_leaf_wealth: f64,
    pub iterations: usize,
    /// length of the last Newton step taken
    pub final_step: f64,
    /// |Σ p_l U'(V_l) ∂V_l/∂N| with the earliest-max tax rule
    pub supergradient_norm: f64,
    /// m·μ at termination; bounds the suboptimality on the central path
    pub barrier_gap: f64,
    pub cap: f64,
}

/// Share cap large enough not to bind at optimal purely nonreversible
/// positions: every admissible position is at most radius(A_n)·V̂_n.
pub fn default_cap(tree: &ScenarioTree, x: f64) -> f64 {
    let minp = tree
        .nodes()
        .iter()
        .filter(|n| !n.children.is_empty())
        .flat_map(|n| n.prices.iter().copied())
        .filter(|&p| p > 0.0)
        .fold(f64::INFINITY, f64::min);
    let minp = if minp.is_finite() { minp } else { 1.0 };
    let growth = (1.0 + tree.max_rate()).powi(tree.horizon() as i32);
    let mut cap = 1e3 * x.abs().max(1e-12) * growth / minp;
    if let Ok(bounds) = purchase_bounds(tree, x) {
        cap = cap.max(4.0 * bounds.iter().copied().fold(0.0, f64::max));
    }
    cap
}

/// Per node, radius(A_n)·V̂_n: a bound on shares of any admissible purely
/// nonreversible position at n. Zero at leaves.
pub fn purchase_bounds(tree: &ScenarioTree, x: f64) -> Result<Vec<f64>> {
    let dom = dominating_strategy(tree, x)?;
    let radii = par::try_map_range(tree.len(), |n| -> Result<f64> {
        if tree.is_leaf(n) {
            Ok(0.0)
        } else {
            Ok(admissible_polytope(&LocalMarket::at(tree, n))?.radius)
        }
    })?;
    Ok(radii.iter().zip(&dom.wealth).map(|(r, w)| r * w).collect())
}

/// Constraint rows `a·v + b ≥ 0` over v = (z, w).
struct Barrier {
    a: DMatrix<f64>,
    b: DVector<f64>,
    nz: usize,
    probs: Vec<f64>,
    u: UtilitySpec,
}

impl Barrier {
    fn slacks(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.a * v + &self.b
    }

    fn utility(&self, v: &DVector<f64>) -> f64 {
        self.probs.iter().enumerate().map(|(l, p)| p * self.u.value(v[self.nz + l])).sum()
    }

    fn phi(&self, v: &DVector<f64>, mu: f64) -> f64 {
        let s = self.slacks(v);
        if s.iter().any(|&x| !(x > 0.0)) {
            return f64::NEG_INFINITY;
        }
        self.utility(v) + mu * s.iter().map(|x| x.ln()).sum::<f64>()
    }

    fn gradient_hessian(&self, v: &DVector<f64>, mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let s = self.slacks(v);
        let inv: DVector<f64> = s.map(|x| 1.0 / x);
        let mut g = self.a.tr_mul(&inv) * mu;
        let mut scaled = self.a.clone();
        for (r, mut row) in scaled.row_iter_mut().enumerate() {
            row *= mu.sqrt() * inv[r];
        }
        let mut h = -scaled.tr_mul(&scaled);
        for (l, p) in self.probs.iter().enumerate() {
            let k = self.nz + l;
            g[k] += p * self.u.derivative(v[k]);
            h[(k, k)] += p * self.u.second_derivative(v[k]);
        }
        (g, h)
    }
}

struct NewtonOutcome {
    v: DVector<f64>,
    iterations: usize,
    final_step: f64,
    gap: f64,
}

fn solve_negdef(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let neg = -h;
    let n = neg.nrows();
    let scale = (0..n).map(|i| neg[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..25 {
        let mut m = neg.clone();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(g);
            if d.iter().all(|x| x.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 10.0 };
    }
    None
}

fn central_path(bar: &Barrier, mut v: DVector<f64>, cfg: &OptimizerConfig) -> Result<NewtonOutcome> {
    let m = bar.a.nrows() as f64;
    let mut mu = 0.1;
    let mut iterations = 0;
    let mut final_step = 0.0;
    loop {
        let mut stalled = false;
        let mut inner = 0;
        loop {
            let (g, h) = bar.gradient_hessian(&v, mu);
            let Some(dv) = solve_negdef(&h, &g) else {
                stalled = true;
                break;
            };
            let dec = g.dot(&dv);
            if !dec.is_finite() {
                return Err(Error::Diverged { iterations, reason: "non-finite Newton decrement".into() });
            }
            let floor = 1e-14 * bar.utility(&v).abs().max(1.0);
            if dec <= (2e-6 * mu).max(floor) || inner >= 200 {
                break;
            }
            inner += 1;
            let s = bar.slacks(&v);
            let ad = &bar.a * &dv;
            let mut t: f64 = 1.0;
            for (si, ai) in s.iter().zip(ad.iter()) {
                if *ai < 0.0 {
                    t = t.min(-0.99 * si / ai);
                }
            }
            let phi0 = bar.phi(&v, mu);
            loop {
                let cand = &v + &dv * t;
                if bar.phi(&cand, mu) >= phi0 + 0.01 * t * dec {
                    if (&cand - &v).norm() <= 1e-15 * (1.0 + v.norm()) {
                        stalled = true;
                    }
                    v = cand;
                    break;
                }
                t *= 0.5;
                if t < 1e-14 {
                    stalled = true;
                    break;
                }
            }
            iterations += 1;
            if iterations >= cfg.max_iters {
                return Err(Error::Diverged { iterations, reason: format!("iteration budget exhausted at μ = {mu:e}") });
            }
            if stalled {
                break;
            }
            final_step = t * dv.norm();
        }
        let gap = m * mu;
        let scale = bar.utility(&v).abs().max(1.0);
        if gap <= cfg.gap_tol * scale || (stalled && mu < 1e-10) {
            return Ok(NewtonOutcome { v, iterations, final_step, gap });
        }
        mu /= 10.0;
    }
}

/// Strictly interior start: small purchases, each lot keeps a random
/// fraction in [0.3, 0.7] per child.
fn interior_start(tree: &ScenarioTree, vars: &LotVars, aff: &PathAffine, x: f64, cap: f64, seed: u64) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..vars.len()).map(|_| rng.gen_range(0.3..0.7)).collect();
    let mut eps = 1e-2;
    for _ in 0..80 {
        let mut z = vec![0.0; vars.len()];
        for (k, &(n, i, j)) in vars.entries.iter().enumerate() {
            z[k] = match vars.parent_var[k] {
                Some(p) => z[p] * draws[k],
                None => {
                    debug_assert_eq!(i, tree.time(n));
                    (eps * x * (draws[k] + 0.3) / tree.prices(n)[j].max(1e-2)).min(0.5 * cap)
                }
            };
        }
        if aff.values(x, &z).iter().all(|&v| v > 0.0) {
            return Some(z);
        }
        eps *= 0.5;
    }
    None
}

pub fn maximize_utility(tree: &ScenarioTree, x: f64, alpha: f64, u: &UtilitySpec, cfg: &OptimizerConfig) -> Result<OptimizationResult> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::NonPositiveCapital(x));
    }
    let na = check_na(tree);
    if let Some(node) = na.node {
        return Err(Error::ArbitrageDetected { node });
    }
    let vars = LotVars::new(tree);
    let aff = PathAffine::new(tree, &vars, alpha, cfg.rule_cap)?;
    let cap = cfg.cap.unwrap_or_else(|| default_cap(tree, x));
    let nz = vars.len();
    let nl = tree.num_leaves();
    let nv = nz + nl;

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = vec![];
    for k in 0..nz {
        rows.push((vec![(k, 1.0)], 0.0));
        match vars.parent_var[k] {
            Some(p) => rows.push((vec![(p, 1.0), (k, -1.0)], 0.0)),
            None => rows.push((vec![(k, -1.0)], cap)),
        }
    }
    for l in 0..nl {
        rows.push((vec![(nz + l, 1.0)], 0.0));
    }
    let npath = aff.capital.len();
    let m = npath + rows.len();
    let mut a = DMatrix::zeros(m, nv);
    let mut b = DVector::zeros(m);
    for r in 0..npath {
        for k in 0..nz {
            a[(r, k)] = aff.slopes[(r, k)];
        }
        a[(r, nz + r / aff.width)] = -1.0;
        b[r] = aff.capital[r] * x;
    }
    for (q, (entries, rhs)) in rows.iter().enumerate() {
        for &(k, c) in entries {
            a[(npath + q, k)] = c;
        }
        b[npath + q] = *rhs;
    }
    let leaves = tree.leaves();
    let probs: Vec<f64> = leaves.clone().map(|l| tree.path_prob(l)).collect();

    let z0 = interior_start(tree, &vars, &aff, x, cap, cfg.seed)
        .ok_or_else(|| Error::Diverged { iterations: 0, reason: "no strictly feasible start".into() })?;
    let lw = aff.leaf_wealth(x, &z0);
    let mut v0 = DVector::zeros(nv);
    for k in 0..nz {
        v0[k] = z0[k];
    }
    for l in 0..nl {
        v0[nz + l] = 0.5 * lw[l];
    }
    let bar = Barrier { a, b, nz, probs: probs.clone(), u: *u };
    let out = central_path(&bar, v0, cfg)?;

    let mut z: Vec<f64> = out.v.iter().take(nz).copied().collect();
    for k in 0..nz {
        z[k] = z[k].max(0.0);
        if let Some(p) = vars.parent_var[k] {
            z[k] = z[k].min(z[p]);
        }
    }
    let lots = vars.to_matrix(tree, &z);
    let strategy = validate_strategy(tree, &lots)?;
    let ledger = engine::evaluate_dense(tree, &lots, x, alpha)?;
    let leaf_wealth = ledger.terminal_wealth(tree);
    let value = u.expected(&probs, &leaf_wealth);
    if !value.is_finite() {
        return Err(Error::Diverged { iterations: out.iterations, reason: "optimal value is not finite".into() });
    }
    let sg = wealth_supergradient(tree, &lots, x, alpha)?;
    let mut grad = vec![0.0; nz];
    for (l, row) in sg.lots.iter().enumerate() {
        let c = probs[l] * u.derivative(leaf_wealth[l]);
        for (gk, rk) in grad.iter_mut().zip(row) {
            *gk += c * rk;
        }
    }
    let supergradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let min_leaf_wealth = leaf_wealth.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OptimizationResult {
        value,
        strategy,
        leaf_wealth,
        min_leaf_wealth,
        iterations: out.iterations,
        final_step: out.final_step,
        supergradient_norm,
        barrier_gap: out.gap,
        cap,
    })
}

/// Supergradient of N ↦ V^α(x, N) per leaf, taken through the earliest-max
/// tax rule τ*. Since V^α is the minimum of the linear rule wealths and τ*
/// attains it, V^α(x', N') ≤ capital·x' + ⟨lots, N'⟩ at every leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthSupergradient {
    pub vars: LotVars,
    /// ∂V/∂x per leaf
    pub capital: Vec<f64>,
    /// ∂V/∂z per leaf, indexed like `vars`
    pub lots: Vec<Vec<f64>>,
}

pub fn wealth_supergradient(tree: &ScenarioTree, m: &LotMatrix, x: f64, alpha: f64) -> Result<WealthSupergradient> {
    let ledger = engine::evaluate_dense(tree, m, x, alpha)?;
    let rule = TaxRule::lul_equivalent(tree, &ledger);
    let vars = LotVars::new(tree);
    let capital = engine::linear_rule_ledger(tree, &LotMatrix::zeros(tree), 1.0, alpha, &rule)?.terminal_wealth(tree);
    let cols = par::try_map_range(vars.len(), |k| {
        Ok::<_, Error>(engine::linear_rule_ledger(tree, &vars.unit(tree, k), 0.0, alpha, &rule)?.terminal_wealth(tree))
    })?;
    let lots = (0..tree.num_leaves()).map(|l| cols.iter().map(|c| c[l]).collect()).collect();
    Ok(WealthSupergradient { vars, capital, lots })
}

pub const BRUTE_MAX_VARS: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceConfig {
    /// stop refining once every cell is below h times the coordinate (or h² times its range near 0)
    pub h: f64,
    /// coarse grid size
    pub budget: usize,
    /// coarse points carried into refinement
    pub keep: usize,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        BruteForceConfig { h: 1e-3, budget: 200_000, keep: 4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    pub value: f64,
    /// decision variables at the best point: per interior node, surviving
    /// fractions of older lots, then purchases
    pub params: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub evaluations: usize,
    #[serde(skip)]
    pub lots: LotMatrix,
}

/// Decision variables of the grid oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Param {
    Fraction { node: usize, i: usize, j: usize },
    Purchase { node: usize, j: usize },
}

fn brute_params(tree: &ScenarioTree) -> Vec<Param> {
    let d = tree.dim();
    let mut out = vec![];
    for (n, node) in tree.nodes().iter().enumerate() {
        if node.children.is_empty() {
            continue;
        }
        for i in 0..node.time {
            for j in 0..d {
                out.push(Param::Fraction { node: n, i, j });
            }
        }
        for j in 0..d {
            out.push(Param::Purchase { node: n, j });
        }
    }
    out
}

fn brute_lots(tree: &ScenarioTree, params: &[Param], vals: &[f64]) -> LotMatrix {
    let mut m = LotMatrix::zeros(tree);
    for (p, &v) in params.iter().zip(vals) {
        match *p {
            Param::Fraction { node, i, j } => {
                let parent = tree.node(node).parent.expect("fractions live below the root");
                let q = m.get(parent, i, j) * v;
                m.set(node, i, j, q);
            }
            Param::Purchase { node, j } => m.set(node, tree.time(node), j, v),
        }
    }
    m
}

/// Exhaustive grid search over per-node surviving fractions in [0, 1] and
/// purchases in [0, radius(A_n)·V̂_n], followed by local refinement of the
/// best coarse points.
pub fn brute_force_utility(tree: &ScenarioTree, x: f64, alpha: f64, u: &UtilitySpec, cfg: &BruteForceConfig) -> Result<BruteForceResult> {
    let params = brute_params(tree);
    if params.len() > BRUTE_MAX_VARS {
        return Err(Error::TooManyVariables { count: params.len(), max: BRUTE_MAX_VARS });
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidTaxRate(alpha));
    }
    let probs: Vec<f64> = tree.leaves().map(|l| tree.path_prob(l)).collect();
    let eval = |vals: &[f64]| -> f64 {
        let m = brute_lots(tree, &params, vals);
        match engine::evaluate_dense(tree, &m, x, alpha) {
            Ok(l) => u.expected(&probs, &l.terminal_wealth(tree)),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let pb = if x > 0.0 { purchase_bounds(tree, x)? } else { vec![0.0; tree.len()] };
    let bounds: Vec<(f64, f64)> = params
        .iter()
        .map(|p| match *p {
            Param::Fraction { .. } => (0.0, 1.0),
            Param::Purchase { node, .. } => (0.0, pb[node]),
        })
        .collect();
    let k = params.len();
    if k == 0 {
        let value = eval(&[]);
        if value == f64::NEG_INFINITY {
            return Err(Error::Infeasible);
        }
        return Ok(BruteForceResult { value, params: vec![], bounds, evaluations: 1, lots: LotMatrix::zeros(tree) });
    }
    let n0 = ((cfg.budget as f64).powf(1.0 / k as f64).floor() as usize).clamp(3, 2001);
    let total = n0.pow(k as u32);
    // fractions on a uniform grid; purchases on 0 plus a geometric grid down
    // to 1e-6 of the bound, since optimal positions sit far below loose bounds
    let ratio = 1e6f64.powf(1.0 / (n0 - 2).max(1) as f64);
    let coord = |j: usize, c: usize| -> f64 {
        let (lo, hi) = bounds[j];
        match params[j] {
            Param::Fraction { .. } => lo + (hi - lo) * c as f64 / (n0 - 1) as f64,
            Param::Purchase { .. } if c == 0 => lo,
            Param::Purchase { .. } => lo + (hi - lo) * ratio.powi(c as i32 - (n0 - 1) as i32),
        }
    };
    let point = |idx: usize| -> Vec<f64> {
        let mut rem = idx;
        (0..k)
            .map(|j| {
                let c = rem % n0;
                rem /= n0;
                coord(j, c)
            })
            .collect()
    };
    let coarse = par::map_range(total, |idx| eval(&point(idx)));
    let mut evaluations = total;
    let mut order: Vec<usize> = (0..total).filter(|&i| coarse[i] > f64::NEG_INFINITY).collect();
    if order.is_empty() {
        return Err(Error::Infeasible);
    }
    order.sort_by(|&a, &b| coarse[b].partial_cmp(&coarse[a]).unwrap().then(a.cmp(&b)));
    let mut best_val = f64::NEG_INFINITY;
    let mut best_pt = vec![];
    for &start in order.iter().take(cfg.keep) {
        let mut pt = point(start);
        let mut val = coarse[start];
        let floor: Vec<f64> = bounds.iter().map(|&(lo, hi)| 1e-6 * (hi - lo)).collect();
        let mut cell: Vec<f64> = (0..k)
            .map(|j| match params[j] {
                Param::Fraction { .. } => (bounds[j].1 - bounds[j].0) / (n0 - 1) as f64,
                Param::Purchase { .. } => (pt[j] * (1.0 - 1.0 / ratio)).max(floor[j]),
            })
            .collect();
        // pattern search: expand the stencil after a success, halve after a failure
        for _ in 0..10_000 {
            let local = 5usize.pow(k as u32);
            let center = pt.clone();
            let cand = |idx: usize| -> Vec<f64> {
                let mut rem = idx;
                center
                    .iter()
                    .zip(&cell)
                    .zip(&bounds)
                    .map(|((&c, &h), &(lo, hi))| {
                        let s = (rem % 5) as f64 - 2.0;
                        rem /= 5;
                        (c + 0.5 * s * h).clamp(lo, hi)
                    })
                    .collect()
            };
            let vals = par::map_range(local, |idx| eval(&cand(idx)));
            evaluations += local;
            let mut moved = false;
            for (idx, v) in vals.iter().enumerate() {
                if *v > val {
                    val = *v;
                    pt = cand(idx);
                    moved = true;
                }
            }
            if moved {
                for (j, c) in cell.iter_mut().enumerate() {
                    *c = (*c * 2.0).min(bounds[j].1 - bounds[j].0);
                }
                continue;
            }
            for c in cell.iter_mut() {
                *c *= 0.5;
            }
            let done = (0..k).all(|j| {
                let (lo, hi) = bounds[j];
                hi <= lo || cell[j] <= cfg.h * pt[j].abs().max(cfg.h * (hi - lo))
            });
            if done {
                break;
            }
        }
        if val > best_val {
            best_val = val;
            best_pt = pt;
        }
    }
    let lots = brute_lots(tree, &params, &best_pt);
    Ok(BruteForceResult { value: best_val, params: best_pt, bounds, evaluations, lots })
}

#[derive(Debug, Clone, Serialize)]
pub struct FinitenessReport {
    pub u_alpha: f64,
    pub u_zero: f64,
    /// E[U((1−α)^T V^0(x, N*/2))] with N* the α-optimizer
    pub chain: f64,
    pub both_finite: bool,
    /// u^α ≤ u^0 up to tolerance
    pub ordering_holds: bool,
    /// chain ≤ u^α up to tolerance
    pub chain_holds: bool,
}

pub fn finiteness_transfer_check(tree: &ScenarioTree, x: f64, alpha: f64, u: &UtilitySpec, cfg: &OptimizerConfig) -> Result<FinitenessReport> {
    const TOL: f64 = 1e-6;
    let ua = maximize_utility(tree, x, alpha, u, cfg)?;
    let u0 = if alpha == 0.0 { ua.clone() } else { maximize_utility(tree, x, 0.0, u, cfg)? };
    let half = ua.strategy.dense(tree).scaled(0.5);
    let v0 = engine::evaluate_dense(tree, &half, x, 0.0)?.terminal_frictionless(tree);
    let drag = (1.0 - alpha).powi(tree.horizon() as i32);
    let probs: Vec<f64> = tree.leaves().map(|l| tree.path_prob(l)).collect();
    let shrunk: Vec<f64> = v0.iter().map(|v| drag * v).collect();
    let chain = u.expected(&probs, &shrunk);
    let scale = ua.value.abs().max(u0.value.abs()).max(1.0);
    Ok(FinitenessReport {
        u_alpha: ua.value,
        u_zero: u0.value,
        chain,
        both_finite: ua.value.is_finite() && u0.value.is_finite(),
        ordering_holds: ua.value <= u0.value + TOL * scale,
        chain_holds: chain <= ua.value + TOL * scale,
    })
}
