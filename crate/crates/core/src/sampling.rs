//! Random instances for property sweeps, acceptance runs and benches.

use rand::Rng;

use crate::cone::LocalMarket;
use crate::polytope::{dot, norm};
use crate::tree::{validate_tree, RawNode, RawTree, ScenarioTree};

#[derive(Debug, Clone)]
pub struct TreeSpec {
    pub horizon: usize,
    pub dim: usize,
    pub min_branch: usize,
    pub max_branch: usize,
    pub max_rate: f64,
    /// half-width of raw excess returns before centering
    pub spread: f64,
    /// center excess returns under a random martingale measure
    pub no_arbitrage: bool,
}

impl TreeSpec {
    pub fn small(horizon: usize, dim: usize, max_branch: usize) -> TreeSpec {
        TreeSpec { horizon, dim, min_branch: 2.min(max_branch), max_branch, max_rate: 0.05, spread: 0.4, no_arbitrage: true }
    }
}

/// Random tree. Under `no_arbitrage`, child excess returns are centered under
/// random strictly positive weights, which rules out one-period arbitrage.
pub fn random_tree<R: Rng>(spec: &TreeSpec, rng: &mut R) -> ScenarioTree {
    let d = spec.dim;
    let s0: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut nodes = vec![RawNode { id: 0, time: 0, parent: None, prob: 1.0, prices: s0, r: 0.0 }];
    let mut frontier = vec![0usize];
    for t in 1..=spec.horizon {
        let mut next = vec![];
        for &p in &frontier {
            let m = rng.gen_range(spec.min_branch..=spec.max_branch);
            let probs = random_weights(rng, m);
            let q = random_weights(rng, m);
            let mut ex: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-spec.spread..spec.spread)).collect()).collect();
            if spec.no_arbitrage {
                for j in 0..d {
                    let mean: f64 = (0..m).map(|c| q[c] * ex[c][j]).sum();
                    for row in ex.iter_mut() {
                        row[j] -= mean;
                    }
                }
            }
            for c in 0..m {
                let r = rng.gen_range(0.0..=spec.max_rate);
                let prices = (0..d).map(|j| nodes[p].prices[j] * (1.0 + r + ex[c][j]).max(0.05)).collect();
                let id = nodes.len() as u64;
                nodes.push(RawNode { id, time: t, parent: Some(p as u64), prob: probs[c], prices, r });
                next.push(id as usize);
            }
        }
        frontier = next;
    }
    validate_tree(&RawTree { horizon: spec.horizon, d, nodes }).expect("generated tree is valid")
}

/// Strictly positive weights summing to 1.
pub fn random_weights<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    let mut out: Vec<f64> = w.iter().map(|v| v / s).collect();
    // make the sum exact so validation never renormalizes
    let head: f64 = out[..m - 1].iter().sum();
    out[m - 1] = 1.0 - head;
    out
}

/// Random one-period market with `planted` nonnegative reversible directions
/// built in (other reversible directions may appear by accident).
pub fn random_market<R: Rng>(rng: &mut R, d: usize, children: usize, planted: usize) -> LocalMarket {
    let mut basis: Vec<Vec<f64>> = vec![];
    for _ in 0..planted {
        let mut v: Vec<f64> = (0..d).map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.1..1.0) } else { 0.0 }).collect();
        if v.iter().all(|&x| x == 0.0) {
            v[rng.gen_range(0..d)] = 1.0;
        }
        let mut u = v.clone();
        for b in &basis {
            let f = dot(&u, b);
            for (x, y) in u.iter_mut().zip(b) {
                *x -= f * y;
            }
        }
        let nu = norm(&u);
        if nu > 1e-8 {
            basis.push(u.iter().map(|x| x / nu).collect());
        }
    }
    let excess = (0..children)
        .map(|_| {
            let mut e: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for b in &basis {
                let f = dot(&e, b);
                for (x, y) in e.iter_mut().zip(b) {
                    *x -= f * y;
                }
            }
            e
        })
        .collect();
    let gross = (0..children).map(|_| 1.0 + rng.gen_range(0.0..0.05)).collect();
    LocalMarket::new(excess, gross)
}

/// Random β ≥ 0 with some exact zeros.
pub fn random_beta<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{check_na, reversible_cone};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_trees_satisfy_na() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = random_tree(&TreeSpec::small(3, 2, 3), &mut rng);
            assert!(check_na(&t).holds);
            let total: f64 = t.leaves().map(|l| t.path_prob(l)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_directions_are_reversible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = 0;
        for _ in 0..50 {
            let m = random_market(&mut rng, 3, 2, 1);
            if !reversible_cone(&m).unwrap().is_empty() {
                hits += 1;
            }
        }
        assert_eq!(hits, 50);
    }
}
