mod input;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lultax::cone::{check_na, cone_report, dominating_strategy, Decomposer, LocalMarket};
use lultax::engine::{evaluate, min_over_tax_rules, DEFAULT_RULE_CAP};
use lultax::optimizer::{maximize_utility, OptimizerConfig};
use lultax::repro::{build_nonclosedness, build_nonuniqueness, verify_nonuniqueness, BranchProbs};
use lultax::strategy::Strategy;
use lultax::transforms::{immediate_realization, realizes_losses, stop_strategy, wash_sale_transform};
use lultax::tree::ScenarioTree;
use lultax::utility::UtilitySpec;
use serde_json::json;

use report::{num, nums, Report};

#[derive(Parser)]
#[command(name = "lultax", version, about = "After-tax wealth on scenario trees with limited use of losses")]
struct Cli {
    /// print the JSON report on stdout instead of the text summary
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TreeArg {
    #[arg(long)]
    tree: PathBuf,
    /// accept unknown fields in the tree file
    #[arg(long)]
    lax: bool,
}

#[derive(Args)]
struct Money {
    #[arg(long, default_value_t = 1.0)]
    x: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Tax ledger and terminal wealth of a strategy
    Evaluate {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long)]
        strategy: PathBuf,
        #[command(flatten)]
        money: Money,
        /// write the JSON report here
        #[arg(long, short = 'o', alias = "output")]
        report: Option<PathBuf>,
    },
    /// Terminal wealth minimized over linear tax rules
    MinRules {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long)]
        strategy: PathBuf,
        #[command(flatten)]
        money: Money,
        #[arg(long, default_value_t = DEFAULT_RULE_CAP)]
        cap: u64,
        #[arg(long, short = 'o', alias = "report")]
        output: Option<PathBuf>,
    },
    /// Rewrite a strategy; the new strategy goes to -o
    Transform {
        #[arg(long, value_enum)]
        kind: TransformKind,
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long)]
        strategy: PathBuf,
        /// stopping time per leaf, required for --kind stop
        #[arg(long)]
        tau: Option<PathBuf>,
        #[command(flatten)]
        money: Money,
        #[arg(long, short = 'o')]
        output: PathBuf,
    },
    /// No-arbitrage check of every one-period market; exit 1 with a certificate on failure
    CheckNa {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Reversible cone, admissible set and norm-max basis per node, or the
    /// decomposition of one weight vector with --node and --beta
    Decompose {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long)]
        node: Option<u64>,
        /// comma-separated weights, one per asset
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "node")]
        beta: Option<Vec<f64>>,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Dominating strategy with capital (2^(d+1) - 1)^T x; the strategy goes to -o
    Dominate {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Maximize expected utility of terminal after-tax wealth
    Optimize {
        #[command(flatten)]
        tree: TreeArg,
        #[command(flatten)]
        money: Money,
        /// log, linear, pow:GAMMA or linlog:A,B
        #[arg(long, default_value = "log")]
        utility: String,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Rebuild the worked examples
    Repro {
        #[command(subcommand)]
        which: Repro,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformKind {
    Wash,
    Realize,
    Stop,
}

#[derive(Subcommand)]
enum Repro {
    /// Two distinct maximizers with equal value
    Nonuniqueness {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.2)]
        r: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Truncated tree with pathwise identities of the non-closed example
    Nonclosedness {
        #[arg(long, default_value_t = 0.1)]
        r: f64,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
}

/// A finished command. `failure` is set when the run completed but found a
/// domain problem (exit 1 after the report is printed).
struct Outcome {
    report: Report,
    output: Option<PathBuf>,
    failure: Option<lultax::Error>,
}

impl Outcome {
    fn ok(report: Report, output: Option<PathBuf>) -> Outcome {
        Outcome { report, output, failure: None }
    }
}

fn parse_utility(s: &str) -> Result<UtilitySpec> {
    let bad = || lultax::Error::InvalidParameter(format!("unknown utility `{s}`"));
    let u = match s.split_once(':') {
        None if s == "log" => UtilitySpec::Log,
        None if s == "linear" => UtilitySpec::Linear,
        Some(("pow", g)) => UtilitySpec::power(g.parse().map_err(|_| bad())?)?,
        Some(("linlog", ab)) => {
            let (a, b) = ab.split_once(',').ok_or_else(bad)?;
            UtilitySpec::linear_log(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)?
        }
        _ => return Err(bad().into()),
    };
    Ok(u)
}

fn utility_name(u: &UtilitySpec) -> String {
    match u {
        UtilitySpec::Log => "log".into(),
        UtilitySpec::Linear => "linear".into(),
        UtilitySpec::Power { gamma } => format!("pow:{}", num(*gamma)),
        UtilitySpec::LinearLog { a, b } => format!("linlog:{},{}", num(*a), num(*b)),
    }
}

fn leaf_ids(tree: &ScenarioTree) -> Vec<u64> {
    tree.leaves().map(|l| tree.label(l)).collect()
}

fn expected(tree: &ScenarioTree, leaf_values: &[f64]) -> f64 {
    tree.leaves().zip(leaf_values).map(|(l, v)| tree.path_prob(l) * v).sum()
}

fn run_evaluate(t: &TreeArg, s: &Path, m: &Money, out: Option<PathBuf>) -> Result<Outcome> {
    let mut rep = Report::new("evaluate", json!({"x": m.x, "alpha": m.alpha}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    let n = input::strategy(s, &tree, &mut rep)?;
    let ledger = evaluate(&tree, &n, m.x, m.alpha)?;
    let v = ledger.terminal_wealth(&tree);
    let v0 = ledger.terminal_frictionless(&tree);
    for ((id, a), b) in leaf_ids(&tree).iter().zip(&v).zip(&v0) {
        rep.line(format!("leaf {id}: V^alpha = {}  V^0 = {}", num(*a), num(*b)));
    }
    rep.line(format!("E[V^alpha] = {}", num(expected(&tree, &v))));
    let nodes: Vec<_> = (0..tree.len())
        .map(|k| {
            json!({
                "node": tree.label(k),
                "gain": ledger.gains[k],
                "running_max": ledger.running_max[k],
                "tax": ledger.taxes[k],
                "bank": ledger.bank[k],
                "frictionless": ledger.frictionless[k],
            })
        })
        .collect();
    rep.result(&json!({
        "leaves": leaf_ids(&tree),
        "terminal_wealth": v,
        "terminal_frictionless": v0,
        "expected_wealth": expected(&tree, &v),
        "nodes": nodes,
    }));
    Ok(Outcome::ok(rep, out))
}

fn run_min_rules(t: &TreeArg, s: &Path, m: &Money, cap: u64, out: Option<PathBuf>) -> Result<Outcome> {
    let mut rep = Report::new("min-rules", json!({"x": m.x, "alpha": m.alpha, "cap": cap}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    let n = input::strategy(s, &tree, &mut rep)?;
    let v = evaluate(&tree, &n, m.x, m.alpha)?.terminal_wealth(&tree);
    let min = min_over_tax_rules(&tree, &n, m.x, m.alpha, cap)?;
    let gap = v.iter().zip(&min.per_leaf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    for ((id, a), p) in leaf_ids(&tree).iter().zip(&min.per_leaf).zip(&min.argmin) {
        rep.line(format!("leaf {id}: min over rules = {}  tau = {p:?}", num(*a)));
    }
    rep.line(format!("{} rule paths, max |V^alpha - min| = {}", min.paths_enumerated, num(gap)));
    rep.result(&json!({
        "leaves": leaf_ids(&tree),
        "min_over_rules": min.per_leaf,
        "argmin": min.argmin,
        "terminal_wealth": v,
        "max_gap": gap,
        "paths_enumerated": min.paths_enumerated,
    }));
    Ok(Outcome::ok(rep, out))
}

fn run_transform(
    kind: TransformKind,
    t: &TreeArg,
    s: &Path,
    tau: Option<&Path>,
    m: &Money,
    out: &Path,
) -> Result<Outcome> {
    let name = match kind {
        TransformKind::Wash => "wash",
        TransformKind::Realize => "realize",
        TransformKind::Stop => "stop",
    };
    let mut rep = Report::new("transform", json!({"kind": name, "x": m.x, "alpha": m.alpha}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    let n = input::strategy(s, &tree, &mut rep)?;
    let new: Strategy = match kind {
        TransformKind::Wash => wash_sale_transform(&tree, &n)?,
        TransformKind::Realize => immediate_realization(&tree, &n)?,
        TransformKind::Stop => {
            let Some(tau) = tau else { bail!(lultax::Error::InvalidParameter("--kind stop needs --tau".into())) };
            let tau = input::stopping_time(tau, &tree, &mut rep)?;
            stop_strategy(&tree, &n, &tau)?
        }
    };
    let before = evaluate(&tree, &n, m.x, m.alpha)?.terminal_wealth(&tree);
    let after = evaluate(&tree, &new, m.x, m.alpha)?.terminal_wealth(&tree);
    report::write_json(out, &new.to_file(&tree))?;
    rep.line(format!("V^alpha before: {}", nums(&before)));
    rep.line(format!("V^alpha after:  {}", nums(&after)));
    rep.line(format!("realizes losses: {}", realizes_losses(&tree, &new)));
    rep.result(&json!({
        "leaves": leaf_ids(&tree),
        "wealth_before": before,
        "wealth_after": after,
        "realizes_losses": realizes_losses(&tree, &new),
        "strategy": new.to_file(&tree),
    }));
    Ok(Outcome::ok(rep, None))
}

fn run_check_na(t: &TreeArg, out: Option<PathBuf>) -> Result<Outcome> {
    let mut rep = Report::new("check-na", json!({}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    let v = check_na(&tree);
    let failure = match (&v.node, &v.certificate, &v.returns) {
        (Some(node), Some(c), Some(r)) => {
            rep.line(format!("arbitrage at node {node}"));
            rep.line(format!("  weights {}", nums(c)));
            rep.line(format!("  child excess returns {}", nums(r)));
            Some(lultax::Error::ArbitrageDetected { node: *node })
        }
        _ => {
            rep.line("no arbitrage");
            None
        }
    };
    rep.result(&v);
    Ok(Outcome { report: rep, output: out, failure })
}

fn run_decompose(t: &TreeArg, node: Option<u64>, beta: Option<&[f64]>, out: Option<PathBuf>) -> Result<Outcome> {
    let mut rep = Report::new("decompose", json!({"node": node, "beta": beta}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    if let (Some(id), Some(beta)) = (node, beta) {
        let k = tree.index_of(id)?;
        if tree.is_leaf(k) {
            bail!(lultax::Error::InvalidParameter(format!("node {id} is a leaf")));
        }
        let dec = Decomposer::new(&LocalMarket::at(&tree, k))?.decompose(beta)?;
        rep.line(format!("node {id}: p = {}  q = {}", nums(&dec.p), nums(&dec.q)));
        rep.result(&dec);
        return Ok(Outcome::ok(rep, out));
    }
    let mut nodes = cone_report(&tree)?;
    if let Some(id) = node {
        tree.index_of(id)?;
        nodes.retain(|r| r.node == id);
        if nodes.is_empty() {
            bail!(lultax::Error::InvalidParameter(format!("node {id} is a leaf")));
        }
    }
    for r in &nodes {
        rep.line(format!("node {} (t = {}): {} reversible generators, NA {}", r.node, r.time, r.generators.len(), r.na));
        if let Some(a) = &r.admissible {
            rep.line(format!("  admissible set: {} vertices, radius {}", a.vertices.len(), num(a.radius)));
        }
        if let Some(b) = &r.basis {
            for (i, y) in b.vectors.iter().enumerate() {
                rep.line(format!("  Y{} = {}", i + 1, nums(y)));
            }
        }
    }
    rep.result(&nodes);
    Ok(Outcome::ok(rep, out))
}

fn run_dominate(t: &TreeArg, x: f64, out: Option<PathBuf>) -> Result<Outcome> {
    let mut rep = Report::new("dominate", json!({"x": x}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    let dom = dominating_strategy(&tree, x)?;
    rep.line(format!("x_hat = {}", num(dom.x_hat)));
    let mut nodes = vec![];
    for k in 0..tree.len() {
        if tree.is_leaf(k) {
            continue;
        }
        rep.line(format!("node {}: beta_hat = {}", tree.label(k), nums(&dom.weights[k])));
        nodes.push(json!({
            "node": tree.label(k),
            "beta_hat": dom.weights[k],
            "invest": dom.invest[k],
            "wealth": dom.wealth[k],
        }));
    }
    if let Some(path) = &out {
        report::write_json(path, &dom.strategy.to_file(&tree))?;
    }
    rep.result(&json!({
        "x_hat": dom.x_hat,
        "nodes": nodes,
        "leaves": leaf_ids(&tree),
        "terminal_wealth": tree.leaves().map(|l| dom.wealth[l]).collect::<Vec<_>>(),
        "strategy": dom.strategy.to_file(&tree),
    }));
    Ok(Outcome::ok(rep, None))
}

fn run_optimize(t: &TreeArg, m: &Money, utility: &str, iters: usize, seed: u64, out: Option<PathBuf>) -> Result<Outcome> {
    let u = parse_utility(utility)?;
    let mut rep = Report::new("optimize", json!({"x": m.x, "alpha": m.alpha, "utility": u, "iters": iters, "seed": seed}));
    let tree = input::tree(&t.tree, t.lax, &mut rep)?;
    let cfg = OptimizerConfig { max_iters: iters, seed, ..OptimizerConfig::default() };
    let res = maximize_utility(&tree, m.x, m.alpha, &u, &cfg)?;
    rep.line(format!("value = {}", num(res.value)));
    rep.line(format!("iterations = {}  barrier gap = {}", res.iterations, num(res.barrier_gap)));
    rep.line(format!("V^alpha per leaf: {}", nums(&res.leaf_wealth)));
    let mut v = report::to_value(&res);
    v["leaves"] = json!(leaf_ids(&tree));
    v["strategy"] = report::to_value(&res.strategy.to_file(&tree));
    rep.result(&v);
    Ok(Outcome::ok(rep, out))
}

fn run_repro(which: &Repro) -> Result<Outcome> {
    match which {
        Repro::Nonuniqueness { alpha, r, tol, output } => {
            let mut rep = Report::new("repro nonuniqueness", json!({"alpha": alpha, "r": r, "tol": tol}));
            let inst = build_nonuniqueness(*alpha, *r, *tol)?;
            let check = verify_nonuniqueness(&inst, None, &OptimizerConfig::default())?;
            rep.line(format!("a = {}  b = {}  r_low = {}", num(inst.a), num(inst.b), num(inst.r_low)));
            rep.line(format!("slope at (a, b) = {}", num(inst.slope)));
            rep.line(format!("max wealth gap between N^lambda and its twin = {}", num(inst.max_wealth_gap)));
            rep.line(format!("utility: {}", utility_name(&check.utility)));
            rep.line(format!(
                "optimum = {}  leveraged = {}  shifted = {}  midpoint = {}",
                num(check.optimum),
                num(check.value_leveraged),
                num(check.value_shifted),
                num(check.value_midpoint)
            ));
            rep.line(format!("strategy distance = {}", num(check.strategy_distance)));
            rep.line(format!("two maximizers confirmed: {}", check.confirmed(1e-6)));
            rep.result(&json!({"instance": inst, "verification": check, "confirmed": check.confirmed(1e-6)}));
            Ok(Outcome::ok(rep, output.clone()))
        }
        Repro::Nonclosedness { r, alpha, n, output } => {
            let mut rep = Report::new("repro nonclosedness", json!({"r": r, "alpha": alpha, "n": n}));
            let inst = build_nonclosedness(*r, *alpha, *n, &BranchProbs::default())?;
            for (k, c) in (3..).zip(&inst.up_moves) {
                rep.line(format!("c_{k} = {}", num(*c)));
            }
            rep.line(format!("loss pool identity residual = {}", num(inst.identity_residual)));
            rep.line(format!("wealth relation residual = {}", num(inst.wealth_residual)));
            rep.line(format!("E[ln(V^alpha - alpha)] = {}", num(inst.expected_log)));
            rep.result(&inst);
            Ok(Outcome::ok(rep, output.clone()))
        }
    }
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Evaluate { tree, strategy, money, report } => run_evaluate(tree, strategy, money, report.clone()),
        Command::MinRules { tree, strategy, money, cap, output } => {
            run_min_rules(tree, strategy, money, *cap, output.clone())
        }
        Command::Transform { kind, tree, strategy, tau, money, output } => {
            run_transform(*kind, tree, strategy, tau.as_deref(), money, output)
        }
        Command::CheckNa { tree, output } => run_check_na(tree, output.clone()),
        Command::Decompose { tree, node, beta, output } => run_decompose(tree, *node, beta.as_deref(), output.clone()),
        Command::Dominate { tree, x, output } => run_dominate(tree, *x, output.clone()),
        Command::Optimize { tree, money, utility, iters, seed, output } => {
            run_optimize(tree, money, utility, *iters, *seed, output.clone())
        }
        Command::Repro { which } => run_repro(which),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("LULTAX_THREADS") else { return Ok(()) };
    let n: usize = match v.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => bail!("LULTAX_THREADS must be a positive integer, got `{v}`"),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// 1 for domain errors from the library, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<lultax::Error>() {
        Some(le) if le.is_domain() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| dispatch(&cli.command)).and_then(|o| {
        if let Some(path) = &o.output {
            report::write_json(path, &o.report.json())?;
        }
        Ok(o)
    });
    match outcome {
        Ok(o) => {
            if cli.json {
                print!("{}", report::to_pretty(&o.report.json()));
            } else {
                print!("{}", o.report.text());
            }
            match o.failure {
                None => ExitCode::SUCCESS,
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(if e.is_domain() { 1 } else { 2 })
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
