use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{EvalError, Episode};
use crate::envs::EnvSpec;

/// What was evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// `reactive`, `dropout`, `open_loop`, `pgd_obs`, ...
    pub mode: String,
    pub env: String,
    pub dropout_p: f64,
    pub epsilon: f64,
    pub mass_scale: f64,
    pub friction_scale: f64,
}

impl Condition {
    pub fn clean(spec: &EnvSpec) -> Self {
        Self {
            mode: "reactive".into(),
            env: spec.kind.name().into(),
            dropout_p: 0.0,
            epsilon: 0.0,
            mass_scale: spec.mass_scale,
            friction_scale: spec.friction_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub episodes: usize,
    pub mean_return: f64,
    /// Population standard deviation over episodes.
    pub return_std: f64,
    pub mean_info_bits: f64,
    pub crash_rate: f64,
    /// Probe-specific statistics, e.g. `mean_gap` on lanedrive.
    pub extra: BTreeMap<String, f64>,
}

impl EvalReport {
    pub(crate) fn from_episodes(condition: Condition, eps: &[Episode]) -> Self {
        let n = eps.len() as f64;
        let mean = eps.iter().map(|e| e.ret).sum::<f64>() / n;
        let var = eps.iter().map(|e| (e.ret - mean).powi(2)).sum::<f64>() / n;
        let steps: usize = eps.iter().map(|e| e.steps).sum();
        let bits: f64 = eps.iter().map(|e| e.bits).sum();
        let mut extra = BTreeMap::new();
        let gaps: Vec<f64> = eps.iter().flat_map(|e| e.gaps.iter().map(|g| g.0)).collect();
        if !gaps.is_empty() {
            extra.insert("mean_gap".into(), gaps.iter().sum::<f64>() / gaps.len() as f64);
        }
        Self {
            condition,
            episodes: eps.len(),
            mean_return: mean,
            return_std: var.sqrt(),
            mean_info_bits: bits / steps.max(1) as f64,
            crash_rate: eps.iter().filter(|e| e.crashed).count() as f64 / n,
            extra,
        }
    }
}

/// Inline nested objects so every row is one flat record; arrays become
/// JSON text.
fn flatten(v: Value, out: &mut Map<String, Value>) {
    if let Value::Object(m) = v {
        for (k, v) in m {
            match v {
                Value::Object(_) => flatten(v, out),
                other => {
                    out.insert(k, other);
                }
            }
        }
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Write `<dir>/<name>.jsonl` and `<dir>/<name>.csv`. CSV columns are the
/// union of flattened keys in first-seen order.
pub fn write_report<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let values: Vec<Value> = rows
        .iter()
        .map(|r| serde_json::to_value(r).map_err(|e| EvalError::Io(e.to_string())))
        .collect::<Result<_, _>>()?;

    let mut jsonl = std::io::BufWriter::new(
        std::fs::File::create(dir.join(format!("{name}.jsonl"))).map_err(io)?,
    );
    for v in &values {
        writeln!(jsonl, "{v}").map_err(io)?;
    }
    jsonl.flush().map_err(io)?;

    let flat: Vec<Map<String, Value>> = values
        .into_iter()
        .map(|v| {
            let mut m = Map::new();
            flatten(v, &mut m);
            m
        })
        .collect();
    let mut header: Vec<String> = Vec::new();
    for m in &flat {
        for k in m.keys() {
            if !header.contains(k) {
                header.push(k.clone());
            }
        }
    }
    let csv_err = |e: csv::Error| EvalError::Io(e.to_string());
    let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv"))).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for m in &flat {
        let rec: Vec<String> = header
            .iter()
            .map(|k| m.get(k).map(cell).unwrap_or_default())
            .collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}
