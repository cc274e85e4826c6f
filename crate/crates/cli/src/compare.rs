//! Distances between two artifacts of the same kind.

use std::path::Path;

use cqdyn::state::HybridState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    Linf,
}

fn reduce(diffs: impl Iterator<Item = f64>, metric: Metric) -> f64 {
    match metric {
        Metric::L1 => diffs.map(f64::abs).sum(),
        Metric::Linf => diffs.map(f64::abs).fold(0.0, f64::max),
    }
}

fn numeric_leaves(v: &serde_json::Value, out: &mut Vec<f64>) {
    match v {
        serde_json::Value::Number(n) => out.extend(n.as_f64()),
        serde_json::Value::Array(a) => a.iter().for_each(|x| numeric_leaves(x, out)),
        serde_json::Value::Object(o) => {
            for (k, x) in o {
                if k != "scenario" {
                    numeric_leaves(x, out);
                }
            }
        }
        _ => {}
    }
}

fn table(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        for cell in line.split(',').filter(|c| !c.trim().is_empty()) {
            out.push(cell.trim().parse::<f64>().map_err(|e| format!("{e} in {line:?}"))?);
        }
    }
    Ok(out)
}

/// Distance between two texts. Grid state dumps are compared through their
/// classical densities (L1 weighted by cell volume), JSON reports through
/// their numeric leaves outside the embedded scenario, other CSV tables
/// cell by cell.
pub fn compare_texts(a: &str, b: &str, metric: Metric) -> Result<f64, String> {
    let is_state = |t: &str| t.lines().any(|l| l.starts_with("# grid "));
    if is_state(a) && is_state(b) {
        let sa = HybridState::from_columnar(a).map_err(|e| e.to_string())?;
        let sb = HybridState::from_columnar(b).map_err(|e| e.to_string())?;
        if sa.grid() != sb.grid() {
            return Err("states live on different grids".into());
        }
        let (ma, mb) = (sa.classical_marginal(), sb.classical_marginal());
        let d = reduce(ma.iter().zip(&mb).map(|(x, y)| x - y), metric);
        return Ok(match metric {
            Metric::L1 => d * sa.grid().cell_volume(),
            Metric::Linf => d,
        });
    }
    let (xa, xb) = if a.trim_start().starts_with('{') && b.trim_start().starts_with('{') {
        let parse = |t: &str| serde_json::from_str::<serde_json::Value>(t).map_err(|e| e.to_string());
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        numeric_leaves(&parse(a)?, &mut xa);
        numeric_leaves(&parse(b)?, &mut xb);
        (xa, xb)
    } else {
        (table(a)?, table(b)?)
    };
    if xa.len() != xb.len() {
        return Err(format!("artifacts have {} and {} numbers", xa.len(), xb.len()));
    }
    Ok(reduce(xa.iter().zip(&xb).map(|(x, y)| x - y), metric))
}

pub fn compare_files(a: &Path, b: &Path, metric: Metric) -> Result<f64, String> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()));
    compare_texts(&read(a)?, &read(b)?, metric)
}
