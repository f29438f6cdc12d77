//! Report plumbing: JSON writing with sorted keys, CSV emitters in full
//! double precision, and the refinement-drift comparison between two runs of
//! the same experiment.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::caloric::{CmeTable, PackingReport};
use crate::error::{Error, Result};

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// CME table CSV: one row per (center, r); the shortest round-trip decimal
/// form keeps full double precision.
pub fn write_csv_cme(path: &Path, table: &CmeTable) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    let dim = table.rows.first().map(|r| r.center_x.len()).unwrap_or(1);
    let xcols: Vec<String> = (1..=dim).map(|i| format!("center_x{i}")).collect();
    writeln!(
        f,
        "center_t,{},r,value,value_with_time_term",
        xcols.join(",")
    )?;
    for r in &table.rows {
        let xs: Vec<String> = r.center_x.iter().map(|v| format!("{v}")).collect();
        writeln!(
            f,
            "{},{},{},{},{}",
            r.center_t,
            xs.join(","),
            r.r,
            r.value,
            r.value_with_time_term
        )?;
    }
    Ok(())
}

/// Region-energy CSV keyed by cube id.
pub fn write_csv_beta(path: &Path, rep: &PackingReport) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "k,it,ix,beta,cells,skipped_sliver")?;
    for b in &rep.per_cube {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            b.q.k, b.q.it, b.q.ix, b.value, b.cells, b.skipped_sliver
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftRow {
    pub path: String,
    pub a: f64,
    pub b: f64,
    pub rel_drift: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftTable {
    pub rows: Vec<DriftRow>,
    pub max_rel_drift: f64,
}

fn walk(prefix: &str, a: &Value, b: &Value, rows: &mut Vec<DriftRow>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if let (Some(x), Some(y)) = (x.as_f64(), y.as_f64()) {
                let denom = y.abs().max(x.abs());
                let drift = if denom == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / denom
                };
                rows.push(DriftRow {
                    path: prefix.to_string(),
                    a: x,
                    b: y,
                    rel_drift: drift,
                });
            }
        }
        (Value::Object(ma), Value::Object(mb)) => {
            for (k, va) in ma {
                if let Some(vb) = mb.get(k) {
                    walk(&format!("{prefix}/{k}"), va, vb, rows);
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) => {
            for (i, (va, vb)) in xa.iter().zip(xb).enumerate() {
                walk(&format!("{prefix}/{i}"), va, vb, rows);
            }
        }
        _ => {}
    }
}

/// Per-quantity relative drift between two reports of one experiment. The
/// reports must agree on the experiment identity (`name` and the graph kind);
/// fields listed in `skip` (e.g. the resolution itself) are left out.
pub fn compare_reports(a: &Value, b: &Value, skip: &[&str]) -> Result<DriftTable> {
    let ident = |v: &Value| -> Option<(String, String)> {
        Some((
            v.get("config")?.get("name")?.as_str()?.to_string(),
            serde_json::to_string(v.get("config")?.get("graph")?.get("kind")?).ok()?,
        ))
    };
    match (ident(a), ident(b)) {
        (Some(ia), Some(ib)) if ia == ib => {}
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "reports belong to different experiments".into(),
            ))
        }
        _ => {
            return Err(Error::Config(
                "reports lack the experiment identity fields".into(),
            ))
        }
    }
    let mut rows = Vec::new();
    if let (Some(ra), Some(rb)) = (a.get("results"), b.get("results")) {
        walk("results", ra, rb, &mut rows);
    } else {
        walk("", a, b, &mut rows);
    }
    rows.retain(|r| !skip.iter().any(|s| r.path.contains(s)));
    let max = rows.iter().map(|r| r.rel_drift).fold(0.0f64, f64::max);
    Ok(DriftTable {
        rows,
        max_rel_drift: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn identical_reports_have_zero_drift() {
        let a = json!({
            "config": {"name": "demo", "graph": {"kind": {"flat": {"level": 0.0}}}},
            "results": {"sup": 1.25, "rows": [0.5, 0.25]}
        });
        let t = compare_reports(&a, &a, &[]).unwrap();
        assert_eq!(t.max_rel_drift, 0.0);
        assert_eq!(t.rows.len(), 3);
    }

    #[test]
    fn drift_is_relative_and_identity_checked() {
        let a = json!({
            "config": {"name": "demo", "graph": {"kind": {"flat": {"level": 0.0}}}},
            "results": {"sup": 1.0}
        });
        let b = json!({
            "config": {"name": "demo", "graph": {"kind": {"flat": {"level": 0.0}}}},
            "results": {"sup": 1.2}
        });
        let t = compare_reports(&a, &b, &[]).unwrap();
        assert!((t.max_rel_drift - 0.2 / 1.2).abs() < 1e-12);
        let c = json!({
            "config": {"name": "other", "graph": {"kind": {"flat": {"level": 0.0}}}},
            "results": {"sup": 1.0}
        });
        assert!(compare_reports(&a, &c, &[]).is_err());
    }
}
