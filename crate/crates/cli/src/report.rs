//! Report files: a fixed-order JSON summary, CSV payloads and their
//! read-back.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use selfdual::{DiscretePath, Element};

/// Number formatting used in every report: 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), num)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub problem: String,
    pub solver: String,
    pub seed: u64,
    pub status: String,
    pub certificate: f64,
    pub scale: f64,
    pub inclusion_residual: Option<f64>,
    pub iterations: usize,
    pub dimension: usize,
    pub steps: Option<usize>,
    pub defect_skew: f64,
    pub defect_boundary: f64,
    pub defect_conservativity: f64,
    pub oracle: String,
    pub oracle_error: Option<f64>,
    pub warnings: Vec<String>,
}

impl Summary {
    /// JSON with a fixed field order, one field per line.
    pub fn to_json(&self) -> String {
        let q = |s: &str| serde_json::to_string(s).expect("strings serialize");
        let fields = [
            ("problem", q(&self.problem)),
            ("solver", q(&self.solver)),
            ("seed", self.seed.to_string()),
            ("status", q(&self.status)),
            ("certificate", num(self.certificate)),
            ("scale", num(self.scale)),
            ("inclusion_residual", opt_num(self.inclusion_residual)),
            ("iterations", self.iterations.to_string()),
            ("dimension", self.dimension.to_string()),
            (
                "steps",
                self.steps.map_or_else(|| "null".to_string(), |s| s.to_string()),
            ),
            ("defect_skew", num(self.defect_skew)),
            ("defect_boundary", num(self.defect_boundary)),
            ("defect_conservativity", num(self.defect_conservativity)),
            ("oracle", q(&self.oracle)),
            ("oracle_error", opt_num(self.oracle_error)),
            (
                "warnings",
                format!(
                    "[{}]",
                    self.warnings.iter().map(|w| q(w)).collect::<Vec<_>>().join(", ")
                ),
            ),
        ];
        let mut out = String::from("{\n");
        for (i, (k, v)) in fields.iter().enumerate() {
            let sep = if i + 1 < fields.len() { "," } else { "" };
            let _ = writeln!(out, "  \"{k}\": {v}{sep}");
        }
        out.push_str("}\n");
        out
    }
}

/// Reads the certificate back from a written summary.
pub fn read_certificate(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    v["certificate"].as_f64().context("summary has no numeric certificate")
}

pub fn write_vector_csv(path: &Path, x: &Element) -> Result<()> {
    let mut out = String::from("index,value\n");
    for (i, v) in x.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", num(*v));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_vector_csv(path: &Path) -> Result<Element> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        let (_, v) = line
            .split_once(',')
            .with_context(|| format!("row {} malformed", i + 1))?;
        values.push(v.parse::<f64>().with_context(|| format!("row {} value", i + 1))?);
    }
    Ok(Element::from_vec(values))
}

/// Per-node rows `t, coords…, gap`; the gap of node 0 is `‖u₀ − v₀‖²`.
pub fn write_path_csv(path: &Path, p: &DiscretePath, gaps: &[f64]) -> Result<()> {
    let dim = p.nodes[0].len();
    let mut out = String::from("t");
    for i in 0..dim {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",gap\n");
    for (k, u) in p.nodes.iter().enumerate() {
        out.push_str(&num(p.time(k)));
        for v in u.iter() {
            out.push(',');
            out.push_str(&num(*v));
        }
        let _ = writeln!(out, ",{}", num(gaps.get(k).copied().unwrap_or(f64::NAN)));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_path_csv(path: &Path, h: f64) -> Result<DiscretePath> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut nodes = Vec::new();
    for (k, line) in text.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 {
            bail!("path row {} has too few columns", k + 1);
        }
        let coords = cells[1..cells.len() - 1]
            .iter()
            .map(|c| c.parse::<f64>().with_context(|| format!("path row {}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        nodes.push(Element::from_vec(coords));
    }
    Ok(DiscretePath { nodes, h })
}

pub fn write_history_csv(path: &Path, history: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("iteration,value,step_measure\n");
    for (i, (v, g)) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", num(*v), num(*g));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), "null");
    }

    #[test]
    fn summary_is_valid_json_in_fixed_order() {
        let s = Summary {
            problem: "heat_1d".into(),
            solver: "path_minimize".into(),
            seed: 3,
            status: "converged".into(),
            certificate: 1e-17,
            scale: 1.5,
            inclusion_residual: None,
            iterations: 4,
            dimension: 7,
            steps: Some(2),
            defect_skew: 0.0,
            defect_boundary: 0.0,
            defect_conservativity: 0.0,
            oracle: "exact".into(),
            oracle_error: Some(0.01),
            warnings: vec!["say \"hi\"".into()],
        };
        let text = s.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["certificate"].as_f64(), Some(1e-17));
        assert_eq!(v["warnings"][0].as_str(), Some("say \"hi\""));
        let order: Vec<usize> = ["\"problem\"", "\"certificate\"", "\"warnings\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }
}
