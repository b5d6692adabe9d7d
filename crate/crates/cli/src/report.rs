use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

pub const SIG_DIGITS: usize = 12;

/// Round to 12 significant digits. Formatting the rounded value with `{}`
/// then gives the shortest representation, so output never carries noise
/// digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIG_DIGITS - 1, v).parse().expect("formatted float parses")
}

pub fn num(v: f64) -> String {
    let r = round_sig(v);
    if r == 0.0 {
        // drop the sign of -0
        return "0".into();
    }
    if r.abs() < 1e-4 || r.abs() >= 1e15 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

pub fn nums(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_sig(x) + 0.0).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Serialize with every float rounded to 12 significant digits. Non-finite
/// floats become null.
pub fn to_value<T: Serialize>(x: &T) -> Value {
    let mut v = serde_json::to_value(x).expect("report serializes");
    round_value(&mut v);
    v
}

pub fn to_pretty<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(&to_value(x)).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, x: &T) -> Result<()> {
    std::fs::write(path, to_pretty(x)).with_context(|| format!("writing {}", path.display()))
}

/// A command's output: a JSON document plus a short text rendering.
pub struct Report {
    command: &'static str,
    inputs: Map<String, Value>,
    params: Value,
    result: Value,
    text: Vec<String>,
}

impl Report {
    pub fn new(command: &'static str, params: Value) -> Report {
        Report { command, inputs: Map::new(), params, result: Value::Null, text: vec![] }
    }

    pub fn input(&mut self, name: &str, sha256: &str) {
        self.inputs.insert(name.into(), Value::String(sha256.into()));
    }

    pub fn result<T: Serialize>(&mut self, r: &T) {
        self.result = to_value(r);
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.text.push(s.into());
    }

    pub fn json(&self) -> Value {
        to_value(&json!({
            "tool": "lultax",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "inputs": self.inputs,
            "params": self.params,
            "result": self.result,
        }))
    }

    pub fn text(&self) -> String {
        let mut s = format!("lultax {} {}\n", env!("CARGO_PKG_VERSION"), self.command);
        for (k, v) in &self.inputs {
            s.push_str(&format!("  {k} sha256 {}\n", v.as_str().unwrap_or_default()));
        }
        for l in &self.text {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}
