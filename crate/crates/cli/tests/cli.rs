use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BANK: &str = r#"{"T":2,"d":1,"nodes":[
 {"id":0,"time":0,"parent":null,"prob":1,"S":[1.0],"r":0},
 {"id":1,"time":1,"parent":0,"prob":1,"S":[1.0],"r":0.1},
 {"id":2,"time":2,"parent":1,"prob":1,"S":[1.0],"r":0.1}]}"#;

const BINARY: &str = r#"{"T":2,"d":1,"nodes":[
 {"id":1,"time":0,"prob":1,"S":[1.0]},
 {"id":2,"time":1,"parent":1,"prob":0.5,"S":[1.5],"r":0.0},
 {"id":3,"time":1,"parent":1,"prob":0.5,"S":[0.5],"r":0.0},
 {"id":4,"time":2,"parent":2,"prob":0.5,"S":[2.0],"r":0.0},
 {"id":5,"time":2,"parent":2,"prob":0.5,"S":[1.0],"r":0.0},
 {"id":6,"time":2,"parent":3,"prob":0.5,"S":[1.0],"r":0.0},
 {"id":7,"time":2,"parent":3,"prob":0.5,"S":[0.25],"r":0.0}]}"#;

const HOLD: &str = r#"[{"node":1,"lots":[{"i":0,"j":0,"qty":1}]},
 {"node":2,"lots":[{"i":0,"j":0,"qty":1}]},
 {"node":3,"lots":[{"i":0,"j":0,"qty":1}]}]"#;

// both children beat the bank
const ARBITRAGE: &str = r#"{"T":1,"d":1,"nodes":[
 {"id":0,"time":0,"S":[1.0]},
 {"id":1,"time":1,"parent":0,"prob":0.5,"S":[1.5],"r":0},
 {"id":2,"time":1,"parent":0,"prob":0.5,"S":[1.1],"r":0}]}"#;

struct Dir(TempDir);

impl Dir {
    fn new() -> Dir {
        Dir(tempfile::tempdir().unwrap())
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.0.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
}

fn lultax(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lultax"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("LULTAX_THREADS", t),
        None => cmd.env_remove("LULTAX_THREADS"),
    };
    cmd.output().unwrap()
}

fn run(args: &[&str]) -> Output {
    lultax(args, None)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn evaluate_bank_only() {
    let d = Dir::new();
    let tree = d.file("t.json", BANK);
    let strat = d.file("n.json", "[]");
    let rep = d.path("ledger.json");
    let o = run(&["evaluate", "--tree", s(&tree), "--strategy", s(&strat), "--x", "1", "--alpha", "0.2", "--report", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("V^alpha = 1.1664"), "{}", stdout(&o));
    let j = read_json(&rep);
    assert_eq!(j["command"], "evaluate");
    assert_eq!(j["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(floats(&j["result"]["terminal_wealth"]), vec![1.1664]);
    let taxes: Vec<f64> = j["result"]["nodes"].as_array().unwrap().iter().map(|n| n["tax"].as_f64().unwrap()).collect();
    assert_eq!(taxes, vec![0.0, 0.02, 0.0416]);
    for key in ["tree", "strategy"] {
        let h = j["inputs"][key].as_str().unwrap();
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }
}

#[test]
fn input_hash_tracks_file_bytes() {
    let d = Dir::new();
    let a = d.file("a.json", BANK);
    let b = d.file("b.json", &format!("{BANK}\n"));
    let hash = |p: &Path| {
        let o = run(&["--json", "check-na", "--tree", s(p)]);
        let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
        j["inputs"]["tree"].as_str().unwrap().to_string()
    };
    assert_eq!(hash(&a), hash(&a));
    assert_ne!(hash(&a), hash(&b));
}

#[test]
fn check_na_reports_certificate_and_exits_1() {
    let d = Dir::new();
    let tree = d.file("arb.json", ARBITRAGE);
    let o = run(&["check-na", "--tree", s(&tree)]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("arbitrage at node 0"), "{out}");
    assert!(out.contains("child excess returns [0.5, 0.1]"), "{out}");

    let ok = d.file("bin.json", BINARY);
    let o = run(&["check-na", "--tree", s(&ok)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("no arbitrage"));
}

#[test]
fn input_errors_exit_2() {
    let d = Dir::new();
    let bad = d.file("bad.json", "{\"T\": 1,");
    assert_eq!(code(&run(&["check-na", "--tree", s(&bad)])), 2);
    assert_eq!(code(&run(&["check-na", "--tree", s(&d.path("missing.json"))])), 2);

    let extra = d.file("extra.json", &BANK.replacen("\"d\":1", "\"d\":1,\"note\":\"x\"", 1));
    assert_eq!(code(&run(&["check-na", "--tree", s(&extra)])), 2);
    assert_eq!(code(&run(&["check-na", "--tree", s(&extra), "--lax"])), 0);

    let tree = d.file("t.json", BINARY);
    let strat = d.file("n.json", HOLD);
    let out = d.path("o.json");
    let stop = run(&["transform", "--kind", "stop", "--tree", s(&tree), "--strategy", s(&strat), "-o", s(&out)]);
    assert_eq!(code(&stop), 2);
    let alpha = run(&["evaluate", "--tree", s(&tree), "--strategy", s(&strat), "--alpha", "1.5"]);
    assert_eq!(code(&alpha), 2);
    assert_eq!(code(&run(&["optimize", "--tree", s(&tree), "--utility", "cubic"])), 2);
    // sells more than it holds
    let oversold = d.file("over.json", r#"[{"node":1,"lots":[{"i":0,"j":0,"qty":1}]},{"node":2,"lots":[{"i":0,"j":0,"qty":2}]}]"#);
    assert_eq!(code(&run(&["evaluate", "--tree", s(&tree), "--strategy", s(&oversold)])), 2);
}

#[test]
fn domain_errors_exit_1() {
    let d = Dir::new();
    let tree = d.file("arb.json", ARBITRAGE);
    let o = run(&["dominate", "--tree", s(&tree)]);
    assert_eq!(code(&o), 1);
    let small = d.file("t.json", BINARY);
    let strat = d.file("n.json", HOLD);
    let o = run(&["min-rules", "--tree", s(&small), "--strategy", s(&strat), "--cap", "3"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn min_rules_matches_engine() {
    let d = Dir::new();
    let tree = d.file("t.json", BINARY);
    let strat = d.file("n.json", HOLD);
    let rep = d.path("m.json");
    let o = run(&["min-rules", "--tree", s(&tree), "--strategy", s(&strat), "--alpha", "0.25", "-o", s(&rep)]);
    assert_eq!(code(&o), 0);
    let j = read_json(&rep);
    assert_eq!(floats(&j["result"]["min_over_rules"]), vec![1.75, 1.0, 1.0, 0.25]);
    assert_eq!(j["result"]["max_gap"].as_f64().unwrap(), 0.0);
    assert_eq!(j["result"]["paths_enumerated"], 16);
}

#[test]
fn wash_transform_round_trips_and_dominates() {
    let d = Dir::new();
    let tree = d.file("t.json", BINARY);
    let strat = d.file("n.json", HOLD);
    let washed = d.path("w.json");
    let o = run(&["transform", "--kind", "wash", "--tree", s(&tree), "--strategy", s(&strat), "--alpha", "0.25", "-o", s(&washed)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("realizes losses: true"));
    let wealth = |p: &Path| {
        let o = run(&["--json", "evaluate", "--tree", s(&tree), "--strategy", s(p), "--alpha", "0.25"]);
        assert_eq!(code(&o), 0);
        let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
        floats(&j["result"]["terminal_wealth"])
    };
    let before = wealth(&strat);
    let after = wealth(&washed);
    for (a, b) in after.iter().zip(&before) {
        assert!(a >= b);
    }
}

#[test]
fn stop_transform_uses_leaf_tau() {
    let d = Dir::new();
    let tree = d.file("t.json", BINARY);
    let strat = d.file("n.json", HOLD);
    let tau = d.file("tau.json", r#"[{"node":4,"tau":1},{"node":5,"tau":1},{"node":6,"tau":2},{"node":7,"tau":2}]"#);
    let out = d.path("s.json");
    let o = run(&["--json", "transform", "--kind", "stop", "--tree", s(&tree), "--strategy", s(&strat), "--tau", s(&tau), "-o", s(&out)]);
    assert_eq!(code(&o), 0);
    let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // sold at 1.5 on the up branch, held on the down branch
    assert_eq!(floats(&j["result"]["wealth_after"]), vec![1.5, 1.5, 1.0, 0.25]);
    assert!(j["inputs"]["tau"].is_string());

    let bad = d.file("bad.json", r#"[{"node":4,"tau":1},{"node":5,"tau":2},{"node":6,"tau":2},{"node":7,"tau":2}]"#);
    let o = run(&["transform", "--kind", "stop", "--tree", s(&tree), "--strategy", s(&strat), "--tau", s(&bad), "-o", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn dominate_writes_strategy() {
    let d = Dir::new();
    let tree = d.file("t.json", BINARY);
    let nhat = d.path("nhat.json");
    let o = run(&["dominate", "--tree", s(&tree), "--x", "1.3", "-o", s(&nhat)]);
    assert_eq!(code(&o), 0);
    // (2^2 - 1)^2 · 1.3
    assert!(stdout(&o).contains("x_hat = 11.7"), "{}", stdout(&o));
    let o = run(&["evaluate", "--tree", s(&tree), "--strategy", s(&nhat), "--x", "11.7"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn decompose_single_vector() {
    let d = Dir::new();
    // two identical assets: buying one and shorting the other is reversible
    let tree = d.file("t.json", r#"{"T":1,"d":2,"nodes":[
 {"id":0,"time":0,"S":[1.0,1.0]},
 {"id":1,"time":1,"parent":0,"prob":0.5,"S":[1.5,1.5],"r":0},
 {"id":2,"time":1,"parent":0,"prob":0.5,"S":[0.5,0.5],"r":0}]}"#);
    let o = run(&["--json", "decompose", "--tree", s(&tree), "--node", "0", "--beta", "0.5,0.2"]);
    assert_eq!(code(&o), 0);
    let j: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(floats(&j["result"]["p"]), vec![0.0, 0.0]);
    assert_eq!(floats(&j["result"]["q"]), vec![0.5, 0.2]);
    let o = run(&["decompose", "--tree", s(&tree)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("radius 2"));
}

#[test]
fn optimize_is_byte_identical_across_runs_and_threads() {
    let d = Dir::new();
    let tree = d.file("t.json", BINARY);
    let args = |out: &Path| -> Vec<String> {
        ["--json", "optimize", "--tree", s(&tree), "--alpha", "0.25", "--utility", "pow:0.5", "--seed", "7", "-o", s(out)]
            .iter()
            .map(|a| a.to_string())
            .collect()
    };
    let mut outputs = vec![];
    for (k, threads) in [None, Some("1"), Some("2")].into_iter().enumerate() {
        let out = d.path(&format!("r{k}.json"));
        let a = args(&out);
        let o = lultax(&a.iter().map(String::as_str).collect::<Vec<_>>(), threads);
        assert_eq!(code(&o), 0);
        outputs.push((o.stdout, std::fs::read(&out).unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let j: Value = serde_json::from_slice(&outputs[0].1).unwrap();
    assert!(j["result"]["value"].as_f64().unwrap().is_finite());
    assert!(j["result"]["strategy"].is_array());
}

#[test]
fn bad_thread_count_exits_2() {
    let d = Dir::new();
    let tree = d.file("t.json", BINARY);
    assert_eq!(code(&lultax(&["check-na", "--tree", s(&tree)], Some("zero"))), 2);
}

#[test]
fn repro_reports() {
    let d = Dir::new();
    let out = d.path("nu.json");
    let o = run(&["repro", "nonuniqueness", "--alpha", "0.05", "--r", "0.2", "-o", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("two maximizers confirmed: true"));
    assert_eq!(read_json(&out)["result"]["confirmed"], true);

    let o = run(&["repro", "nonclosedness", "--r", "0.1", "--n", "6"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("c_3 = 0.0636363636364"), "{}", stdout(&o));
    assert_eq!(code(&run(&["repro", "nonclosedness", "--n", "2"])), 2);
    // α outside (0, 1/9)
    assert_eq!(code(&run(&["repro", "nonuniqueness", "--alpha", "0.5"])), 2);
}
