//! Builders for two worked examples: a three-period tree with a flat face of
//! optimal strategies, and truncations of a tree on which the supremum of
//! expected log utility is not attained.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine;
use crate::error::{Error, Result};
use crate::optimizer::{maximize_utility, OptimizerConfig};
use crate::strategy::{validate_strategy, LotMatrix, Strategy};
use crate::tree::{ScenarioTree, TreeBuilder};
use crate::utility::UtilitySpec;

/// Break-even third-period return: the b at which deferring taxes over the
/// last period exactly matches paying them at time 2.
pub fn break_even_rate(alpha: f64, r: f64) -> f64 {
    let lhs = (1.0 + (1.0 - alpha) * 4.0 * r) * (1.0 + (1.0 - alpha) * r) - alpha;
    lhs / ((1.0 + 4.0 * r) * (1.0 - alpha)) - 1.0
}

/// Shares of the time-0 lot traded against one share of the time-1 lot so
/// that wealth in the down state is unchanged.
pub fn exchange_ratio(r: f64, a: f64) -> f64 {
    let down = (1.0 + a) * (1.0 - r);
    (down - (1.0 + r).powi(2)) / (down - (1.0 + a) * (1.0 + r))
}

/// Extra realized loss per extra time-0 share, after the compensating
/// reduction of the time-1 lot.
pub fn loss_gain(r: f64, a: f64) -> f64 {
    2.0 * r + r * r - (1.0 + a) * r * exchange_ratio(r, a)
}

/// Slope of the up-state wealth difference in the number of extra time-0
/// shares, comparing gains over (0,3), (1,2) and (1,3).
pub fn wealth_slope(alpha: f64, r: f64, a: f64, b: f64) -> f64 {
    let g = exchange_ratio(r, a);
    let k = loss_gain(r, a) / ((1.0 + a) * 4.0 * r);
    let q = 1.0 - alpha;
    let big_a = q * ((1.0 + a) * (1.0 + 4.0 * r) * (1.0 + b) - (1.0 + r).powi(3));
    let big_b = q * (1.0 + a) * ((1.0 + 4.0 * r) * (1.0 + r) - (1.0 + r).powi(2));
    let big_c = q * (1.0 + a) * ((1.0 + 4.0 * r) * (1.0 + b) - (1.0 + r).powi(2));
    big_a + k * big_b - (g + k) * big_c
}

#[derive(Debug, Clone, Serialize)]
pub struct NonUniquenessInstance {
    pub alpha: f64,
    pub r: f64,
    pub r_low: f64,
    pub a: f64,
    pub b: f64,
    pub slope: f64,
    pub exchange_ratio: f64,
    pub loss_gain: f64,
    #[serde(skip)]
    pub tree: ScenarioTree,
    /// λ checked at build time
    pub lambdas: Vec<f64>,
    /// max over λ and both states of |V^α(1,N^λ) − V^α(1,Ñ^λ)|
    pub max_wealth_gap: f64,
}

impl NonUniquenessInstance {
    /// Leveraged buy-and-hold N^λ: λ − 1 extra shares bought at time 1 and
    /// ¾(λ − 1) of them kept in the up state.
    pub fn leveraged(&self, lambda: f64) -> Result<Strategy> {
        let t = &self.tree;
        let mut m = LotMatrix::zeros(t);
        m.set(0, 0, 0, 1.0);
        m.set(1, 0, 0, 1.0);
        m.set(1, 1, 0, lambda - 1.0);
        m.set(2, 0, 0, 1.0);
        m.set(2, 1, 0, 0.75 * (lambda - 1.0));
        validate_strategy(t, &m)
    }

    /// Ñ^λ: more time-0 shares, fewer time-1 shares; the time-1 lot is
    /// fully sold at time 2.
    pub fn shifted(&self, lambda: f64) -> Result<Strategy> {
        let t = &self.tree;
        let g = self.exchange_ratio;
        let k = self.loss_gain / ((1.0 + self.a) * 4.0 * self.r);
        let extra = 0.75 * (lambda - 1.0) / (g + k);
        let n00 = 1.0 + extra;
        let n11 = (lambda - 1.0) - extra * g;
        let mut m = LotMatrix::zeros(t);
        m.set(0, 0, 0, n00);
        m.set(1, 0, 0, n00);
        m.set(1, 1, 0, n11);
        m.set(2, 0, 0, n00);
        validate_strategy(t, &m)
    }

    /// V^α(1, ·) at (up, down).
    pub fn wealth(&self, n: &Strategy) -> Result<Vec<f64>> {
        Ok(engine::evaluate(&self.tree, n, 1.0, self.alpha)?.terminal_wealth(&self.tree))
    }
}

fn example_tree(r: f64, a: f64, b: f64) -> Result<ScenarioTree> {
    let mut tb = TreeBuilder::new(3, 1, vec![1.0]);
    let s1 = 1.0 + a;
    let n1 = tb.child(0, 1.0, vec![s1], r);
    let up = tb.child(n1, 0.5, vec![s1 * (1.0 + 4.0 * r)], r);
    let down = tb.child(n1, 0.5, vec![s1 * (1.0 - r)], r);
    tb.child(up, 1.0, vec![s1 * (1.0 + 4.0 * r) * (1.0 + b)], r);
    tb.child(down, 1.0, vec![0.0], r);
    tb.build()
}

/// Solves for (a, b) by bisection on a ∈ (r_low, r) with b = r_low + r − a
/// until the wealth slope vanishes within `tol`.
pub fn build_nonuniqueness(alpha: f64, r: f64, tol: f64) -> Result<NonUniquenessInstance> {
    if !(alpha > 0.0 && alpha < 1.0 / 9.0) {
        return Err(Error::InvalidParameter(format!("α must lie in (0, 1/9), got {alpha}")));
    }
    if !(r > 0.0 && r < 1.0 / 3.0) {
        return Err(Error::InvalidParameter(format!("r must lie in (0, 1/3), got {r}")));
    }
    let r_low = break_even_rate(alpha, r);
    let f = |a: f64| wealth_slope(alpha, r, a, r_low + r - a);
    let (mut lo, mut hi) = (r_low, r);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::NoRootInBracket { lo, hi });
    }
    let mut a = 0.5 * (lo + hi);
    for _ in 0..200 {
        a = 0.5 * (lo + hi);
        let fa = f(a);
        if fa.abs() <= tol || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if fa < 0.0 {
            lo = a;
        } else {
            hi = a;
        }
    }
    let b = r_low + r - a;
    let tree = example_tree(r, a, b)?;
    let mut inst = NonUniquenessInstance {
        alpha,
        r,
        r_low,
        a,
        b,
        slope: f(a),
        exchange_ratio: exchange_ratio(r, a),
        loss_gain: loss_gain(r, a),
        tree,
        lambdas: vec![1.0, 2.0, 5.0],
        max_wealth_gap: 0.0,
    };
    let mut gap = 0.0f64;
    for &lam in &inst.lambdas {
        let v1 = inst.wealth(&inst.leveraged(lam)?)?;
        let v2 = inst.wealth(&inst.shifted(lam)?)?;
        for (x, y) in v1.iter().zip(&v2) {
            gap = gap.max((x - y).abs());
        }
    }
    inst.max_wealth_gap = gap;
    Ok(inst)
}

#[derive(Debug, Clone, Serialize)]
pub struct NonUniquenessReport {
    pub utility: UtilitySpec,
    /// V^α(1, N²) at (up, down)
    pub wealth: Vec<f64>,
    /// d/dλ V^α(1, N^λ) at λ = 2
    pub derivative: Vec<f64>,
    pub optimum: f64,
    pub value_leveraged: f64,
    pub value_shifted: f64,
    pub value_midpoint: f64,
    /// max |N² − Ñ²| over lot entries
    pub strategy_distance: f64,
    /// max leafwise V^α spread along the segment between N² and Ñ²
    pub segment_spread: f64,
    /// max |V^α(optimizer) − V^α(N²)| over leaves
    pub terminal_distance: f64,
    pub iterations: usize,
    pub barrier_gap: f64,
}

impl NonUniquenessReport {
    pub fn confirmed(&self, tol: f64) -> bool {
        self.strategy_distance > 1e-3
            && (self.optimum - self.value_leveraged).abs() <= tol
            && (self.optimum - self.value_shifted).abs() <= tol
            && (self.optimum - self.value_midpoint).abs() <= tol
    }
}

/// a·w + κ·ln w with κ chosen so that the first-order condition in λ holds
/// at λ = 2: ½y₁U′(V₁) + ½y₂U′(V₂) = 0.
pub fn calibrated_utility(inst: &NonUniquenessInstance) -> Result<(UtilitySpec, Vec<f64>, Vec<f64>)> {
    let h = 1e-3;
    let v = inst.wealth(&inst.leveraged(2.0)?)?;
    let vp = inst.wealth(&inst.leveraged(2.0 + h)?)?;
    let vm = inst.wealth(&inst.leveraged(2.0 - h)?)?;
    let y: Vec<f64> = vp.iter().zip(&vm).map(|(p, m)| (p - m) / (2.0 * h)).collect();
    let denom = y[0] / v[0] + y[1] / v[1];
    let kappa = -(y[0] + y[1]) / denom;
    Ok((UtilitySpec::linear_log(1.0, kappa)?, v, y))
}

/// Runs the optimizer with `u` (the calibrated blend when None) and compares
/// its value with N², Ñ² and their midpoint.
pub fn verify_nonuniqueness(inst: &NonUniquenessInstance, u: Option<UtilitySpec>, cfg: &OptimizerConfig) -> Result<NonUniquenessReport> {
    let (calibrated, wealth, derivative) = calibrated_utility(inst)?;
    let u = u.unwrap_or(calibrated);
    let t = &inst.tree;
    let probs: Vec<f64> = t.leaves().map(|l| t.path_prob(l)).collect();
    let n2 = inst.leveraged(2.0)?;
    let m2 = inst.shifted(2.0)?;
    let (d2, dm2) = (n2.dense(t), m2.dense(t));
    let mut segment_spread = 0.0f64;
    let mut mid = None;
    for s in 0..=8 {
        let beta = s as f64 / 8.0;
        let m = validate_strategy(t, &d2.combine(1.0 - beta, &dm2, beta))?;
        let v = inst.wealth(&m)?;
        for (x, y) in v.iter().zip(&wealth) {
            segment_spread = segment_spread.max((x - y).abs());
        }
        if s == 4 {
            mid = Some(v);
        }
    }
    let opt = maximize_utility(t, 1.0, inst.alpha, &u, cfg)?;
    let terminal_distance = opt.leaf_wealth.iter().zip(&wealth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(NonUniquenessReport {
        utility: u,
        value_leveraged: u.expected(&probs, &wealth),
        value_shifted: u.expected(&probs, &inst.wealth(&m2)?),
        value_midpoint: u.expected(&probs, &mid.expect("midpoint evaluated")),
        wealth,
        derivative,
        optimum: opt.value,
        strategy_distance: d2.max_abs_diff(&dm2),
        segment_spread,
        terminal_distance,
        iterations: opt.iterations,
        barrier_gap: opt.barrier_gap,
    })
}

/// Branch probabilities (p₁, p₂) per k; `default` where no override is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchProbs {
    pub default: (f64, f64),
    pub per_k: BTreeMap<usize, (f64, f64)>,
}

impl Default for BranchProbs {
    fn default() -> Self {
        BranchProbs { default: (0.5, 0.5), per_k: BTreeMap::new() }
    }
}

impl BranchProbs {
    pub fn get(&self, k: usize) -> (f64, f64) {
        self.per_k.get(&k).copied().unwrap_or(self.default)
    }
}

/// c_k = (k−2)(2r+r²)/(k(1+r)).
pub fn up_move(r: f64, k: usize) -> f64 {
    let k = k as f64;
    (k - 2.0) * (2.0 * r + r * r) / (k * (1.0 + r))
}

/// |(k−1)(2r+r²) − (k/2)(2r + c_k + r² + r c_k)|.
pub fn loss_pool_residual(r: f64, k: usize) -> f64 {
    let c = up_move(r, k);
    let kf = k as f64;
    ((kf - 1.0) * (2.0 * r + r * r) - 0.5 * kf * (2.0 * r + c + r * r + r * c)).abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct NonClosednessInstance {
    pub r: f64,
    pub alpha: f64,
    pub n: usize,
    pub probs: BranchProbs,
    /// c_k for k = 3..=n
    pub up_moves: Vec<f64>,
    #[serde(skip)]
    pub tree: ScenarioTree,
    #[serde(skip)]
    pub strategy: Strategy,
    /// Y per leaf
    pub leaf_k: Vec<usize>,
    /// max_k of the loss pool identity residual
    pub identity_residual: f64,
    /// max over leaves of |V^α − ((1−α)V^0 + α)|
    pub wealth_residual: f64,
    /// E[ln(V^α(1,N^n) − α)] under the truncated law
    pub expected_log: f64,
}

/// Truncates Y at n with P(Y = k) ∝ 2^{2−k} renormalized over 3..=n.
pub fn build_nonclosedness(r: f64, alpha: f64, n: usize, probs: &BranchProbs) -> Result<NonClosednessInstance> {
    if n < 3 {
        return Err(Error::InvalidTruncation { n });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("r must be positive, got {r}")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidTaxRate(alpha));
    }
    let ks: Vec<usize> = (3..=n).collect();
    for &k in &ks {
        let (p1, p2) = probs.get(k);
        if !(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0) {
            return Err(Error::InvalidParameter(format!("branch probabilities for k = {k} must lie in (0, 1)")));
        }
    }
    let weights: Vec<f64> = ks.iter().map(|&k| 2f64.powi(2 - k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut tb = TreeBuilder::new(3, 1, vec![1.0]);
    let s1 = 1.0 + r;
    for (&k, w) in ks.iter().zip(&weights) {
        let c = up_move(r, k);
        let (p1, p2) = probs.get(k);
        let y = tb.child(0, w / total, vec![s1], r);
        let s_up = s1 * (1.0 + r + c);
        let s_dn = s1 * (1.0 + r - r / k as f64);
        let up = tb.child(y, p1, vec![s_up], r);
        let dn = tb.child(y, 1.0 - p1, vec![s_dn], r);
        tb.child(up, p2, vec![s_up * (1.0 + r + c)], r);
        tb.child(up, 1.0 - p2, vec![s_up * (1.0 + r - r / k as f64)], r);
        tb.child(dn, 1.0, vec![0.0], 0.0);
    }
    let tree = tb.build()?;
    let leaf_k: Vec<usize> = tree.leaves().map(|l| ks[tree.ancestor(l, 1) - 1]).collect();
    let mut m = LotMatrix::zeros(&tree);
    m.set(0, 0, 0, n as f64);
    for y in tree.layer(1) {
        let k = ks[y - 1] as f64;
        m.set(y, 0, 0, k);
        for &z in &tree.node(y).children {
            if tree.prices(z)[0] > tree.prices(y)[0] * (1.0 + r) {
                m.set(z, 0, 0, k / 2.0);
            }
        }
    }
    let strategy = validate_strategy(&tree, &m)?;
    let ledger = engine::evaluate(&tree, &strategy, 1.0, alpha)?;
    let va = ledger.terminal_wealth(&tree);
    let v0 = ledger.terminal_frictionless(&tree);
    let wealth_residual = va.iter().zip(&v0).map(|(a, z)| (a - ((1.0 - alpha) * z + alpha)).abs()).fold(0.0, f64::max);
    let identity_residual = ks.iter().map(|&k| loss_pool_residual(r, k)).fold(0.0, f64::max);
    let expected_log = tree.leaves().zip(&va).map(|(l, v)| tree.path_prob(l) * UtilitySpec::Log.value(v - alpha)).sum();
    Ok(NonClosednessInstance {
        r,
        alpha,
        n,
        probs: probs.clone(),
        up_moves: ks.iter().map(|&k| up_move(r, k)).collect(),
        tree,
        strategy,
        leaf_k,
        identity_residual,
        wealth_residual,
        expected_log,
    })
}
