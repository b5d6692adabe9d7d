use criterion::{criterion_group, criterion_main, Criterion};
use lultax::cone::check_na;
use lultax::engine::{evaluate_many, rule_path_values};
use lultax::optimizer::{brute_force_utility, BruteForceConfig};
use lultax::par;
use lultax::sampling::{random_tree, TreeSpec};
use lultax::strategy::sample_strategy;
use lultax::tree::ScenarioTree;
use lultax::utility::UtilitySpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tree(horizon: usize, dim: usize, branch: usize, seed: u64) -> ScenarioTree {
    let spec = TreeSpec { min_branch: branch, max_branch: branch, ..TreeSpec::small(horizon, dim, branch) };
    random_tree(&spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn both(c: &mut Criterion, group: &str, f: &dyn Fn()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function("par", |b| b.iter(f));
    g.bench_function("seq", |b| b.iter(|| par::sequential(f)));
    g.finish();
}

fn benches(c: &mut Criterion) {
    let deep = tree(10, 1, 2, 1);
    let n = sample_strategy(&deep, 7, 0.5).dense(&deep);
    both(c, "rule_paths_T10", &|| {
        std::hint::black_box(rule_path_values(&deep, &n, 1.0, 0.3));
    });

    let wide = tree(4, 2, 3, 2);
    let strategies: Vec<_> = (0..2000).map(|s| sample_strategy(&wide, s, 0.5)).collect();
    both(c, "evaluate_2000", &|| {
        std::hint::black_box(evaluate_many(&wide, &strategies, 1.0, 0.3));
    });

    let na = tree(5, 3, 3, 3);
    both(c, "check_na_T5_d3", &|| {
        std::hint::black_box(check_na(&na));
    });

    let small = tree(1, 3, 4, 4);
    let cfg = BruteForceConfig { budget: 50_000, ..BruteForceConfig::default() };
    both(c, "brute_force_d3", &|| {
        std::hint::black_box(brute_force_utility(&small, 1.0, 0.2, &UtilitySpec::Log, &cfg).unwrap());
    });
}

criterion_group!(par_vs_seq, benches);
criterion_main!(par_vs_seq);
