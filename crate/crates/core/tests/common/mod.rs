//! Instance generators shared by the property and acceptance tests.
#![allow(dead_code)]

use lultax::engine::evaluate;
use lultax::sampling::{random_tree, TreeSpec};
use lultax::strategy::{sample_lots, validate_strategy, Strategy};
use lultax::tree::{ScenarioTree, TreeBuilder};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree with T ≤ 3, d ≤ 2, branching 2..=3.
pub fn small_tree<R: Rng>(rng: &mut R, no_arbitrage: bool) -> ScenarioTree {
    let horizon = rng.gen_range(1..=3);
    let dim = rng.gen_range(1..=2);
    let mut spec = TreeSpec::small(horizon, dim, 3);
    spec.no_arbitrage = no_arbitrage;
    random_tree(&spec, rng)
}

pub fn random_strategy<R: Rng>(tree: &ScenarioTree, rng: &mut R) -> Strategy {
    let scale = rng.gen_range(0.1..2.0);
    validate_strategy(tree, &sample_lots(tree, rng, scale)).unwrap()
}

/// A random (tree, N, x, α) with α drawn from a few levels.
pub struct Instance {
    pub tree: ScenarioTree,
    pub n: Strategy,
    pub x: f64,
    pub alpha: f64,
}

pub fn instance<R: Rng>(rng: &mut R) -> Instance {
    let tree = small_tree(rng, true);
    let n = random_strategy(&tree, rng);
    let x = rng.gen_range(0.5..3.0);
    let alpha = [0.0, 0.25, 0.5][rng.gen_range(0..3)];
    Instance { tree, n, x, alpha }
}

/// Largest c in [0, 1] with V^0(x, cN) ≥ 0 at every leaf; V^0 is affine in c.
pub fn frictionless_scale(tree: &ScenarioTree, n: &Strategy, x: f64) -> f64 {
    let base = evaluate(tree, &Strategy::zero(tree), x, 0.0).unwrap().terminal_frictionless(tree);
    let full = evaluate(tree, n, x, 0.0).unwrap().terminal_frictionless(tree);
    let mut c = 1.0f64;
    for (b, f) in base.iter().zip(&full) {
        let slope = f - b;
        if slope < 0.0 {
            c = c.min(b / -slope);
        }
    }
    c.max(0.0)
}

/// d = 2 chain: asset 0 rises to 1.5, asset 1 falls to 0.5 and stays.
pub fn wash_chain() -> ScenarioTree {
    let mut b = TreeBuilder::new(2, 2, vec![1.0, 1.0]);
    let a = b.child(0, 1.0, vec![1.5, 0.5], 0.0);
    b.child(a, 1.0, vec![1.5, 0.5], 0.0);
    b.build().unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
