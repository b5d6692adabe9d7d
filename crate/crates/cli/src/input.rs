use std::path::Path;

use anyhow::{Context, Result};
use lultax::strategy::{strategy_from_json, StoppingTime, Strategy};
use lultax::tree::{validate_tree, RawTree, ScenarioTree};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::report::Report;

/// Failure to read an input file. Always an input error.
#[derive(Debug, thiserror::Error)]
#[error("cannot read {path}")]
pub struct ReadError {
    path: String,
    source: std::io::Error,
}

fn read(path: &Path) -> Result<(String, String)> {
    let bytes = std::fs::read(path).map_err(|source| ReadError { path: path.display().to_string(), source })?;
    let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    Ok((text, hash))
}

pub fn tree(path: &Path, lax: bool, report: &mut Report) -> Result<ScenarioTree> {
    let (text, hash) = read(path)?;
    report.input("tree", &hash);
    let raw = RawTree::from_json(&text, lax)?;
    Ok(validate_tree(&raw)?)
}

pub fn strategy(path: &Path, tree: &ScenarioTree, report: &mut Report) -> Result<Strategy> {
    let (text, hash) = read(path)?;
    report.input("strategy", &hash);
    Ok(strategy_from_json(tree, &text)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafStop {
    node: u64,
    tau: usize,
}

/// Stopping time file: `[{"node": leaf id, "tau": k}, ...]` covering every leaf.
pub fn stopping_time(path: &Path, tree: &ScenarioTree, report: &mut Report) -> Result<StoppingTime> {
    let (text, hash) = read(path)?;
    report.input("tau", &hash);
    let entries: Vec<LeafStop> =
        serde_json::from_str(&text).map_err(|e| lultax::Error::Parse(format!("{}: {e}", path.display())))?;
    let leaves = tree.leaves();
    let mut values = vec![None; leaves.len()];
    for e in &entries {
        let n = tree.index_of(e.node)?;
        if !tree.is_leaf(n) {
            return Err(lultax::Error::InvalidStoppingTime { node: e.node, reason: "not a leaf".into() }.into());
        }
        values[n - leaves.start] = Some(e.tau);
    }
    let values: Vec<usize> = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            v.ok_or_else(|| lultax::Error::InvalidStoppingTime {
                node: tree.label(leaves.start + k),
                reason: "missing leaf".into(),
            })
        })
        .collect::<std::result::Result<_, _>>()?;
    Ok(StoppingTime::from_leaf_values(tree, &values)?)
}
