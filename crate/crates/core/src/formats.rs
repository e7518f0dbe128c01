//! File formats: space definitions (JSON), trajectories (CSV), run manifests, candidate
//! catalogs (JSON lines) and coefficient strings.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::{HomogeneousSpaceSpec, LieAlgebraSpec};
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::linalg::Mat;

/// Largest Lie algebra dimension accepted from files.
pub const MAX_DIM: usize = 64;
/// Longest coefficient list accepted from strings.
pub const MAX_COEFFICIENTS: usize = 4096;

pub const DIAGNOSTIC_COLUMNS: [&str; 5] = ["scal", "norm", "min_eig_t", "fiber_diameter", "rho"];

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

/// On-disk space definition. Field names are fixed.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub dim: usize,
    /// Sparse `[i, j, k, value]` entries; antisymmetric partners may be omitted.
    pub structure_constants: Vec<(usize, usize, usize, f64)>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub h_basis: Vec<Vec<f64>>,
    #[serde(default)]
    pub isotropy_generators: Vec<Vec<Vec<f64>>>,
    pub modules: Vec<Vec<usize>>,
    #[serde(default)]
    pub toral_split: Option<usize>,
}

fn square(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<Mat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return format_err(format!("{what} must be a {dim}x{dim} array"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return format_err(format!("{what} has non-finite entries"));
    }
    Ok(Mat::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl SpaceFile {
    pub fn into_spec(self) -> Result<HomogeneousSpaceSpec> {
        let n = self.dim;
        if n == 0 || n > MAX_DIM {
            return format_err(format!("dim must lie in 1..={MAX_DIM}"));
        }
        if self.structure_constants.len() > n * n * n {
            return format_err("more structure constants than entries of the tensor");
        }
        let q = square(&self.q, n, "Q")?;
        if self.h_basis.len() > n || self.h_basis.iter().any(|v| v.len() != n) {
            return format_err(format!("h_basis must hold at most {n} vectors of length {n}"));
        }
        if self.isotropy_generators.len() > 64 {
            return format_err("too many isotropy generators");
        }
        let generators = self.isotropy_generators.iter().enumerate().map(|(a, g)| square(g, n, &format!("isotropy generator {a}"))).collect::<Result<Vec<_>>>()?;
        if self.modules.len() > n || self.modules.iter().map(|m| m.len()).sum::<usize>() > n {
            return format_err("modules cover more than dim indices");
        }
        let algebra = LieAlgebraSpec::from_sparse(n, &self.structure_constants, q)?;
        Ok(HomogeneousSpaceSpec {
            algebra,
            h_basis: self.h_basis,
            isotropy_generators: generators,
            modules: self.modules,
            toral_split: self.toral_split,
        })
    }

    pub fn from_spec(spec: &HomogeneousSpaceSpec) -> Self {
        let alg = &spec.algebra;
        let n = alg.dim();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..n {
                    let v = alg.c(i, j, k);
                    if v != 0.0 {
                        entries.push((i, j, k, v));
                    }
                }
            }
        }
        Self {
            dim: n,
            structure_constants: entries,
            q: rows_of(alg.q()),
            h_basis: spec.h_basis.clone(),
            isotropy_generators: spec.isotropy_generators.iter().map(rows_of).collect(),
            modules: spec.modules.clone(),
            toral_split: spec.toral_split,
        }
    }
}

/// Parse a space definition. Never panics on malformed input.
pub fn parse_space_json(text: &str) -> Result<HomogeneousSpaceSpec> {
    let file: SpaceFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    file.into_spec()
}

pub fn space_to_json(spec: &HomogeneousSpaceSpec) -> String {
    serde_json::to_string_pretty(&SpaceFile::from_spec(spec)).expect("space files always serialize")
}

/// CSV header: `t`, one column per state coefficient, then the diagnostics.
pub fn trajectory_header(coefficients: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..coefficients).map(|i| format!("x{i}")));
    cols.extend(DIAGNOSTIC_COLUMNS.iter().map(|s| s.to_string()));
    cols
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a trajectory as CSV with 17 significant digits and `\n` line endings.
pub fn write_trajectory_csv<W: Write>(traj: &FlowTrajectory, mut out: W) -> std::io::Result<()> {
    let width = traj.states.first().map(|s| s.len()).unwrap_or(0);
    writeln!(out, "{}", trajectory_header(width).join(","))?;
    for ((t, x), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        let mut fields = Vec::with_capacity(width + 6);
        fields.push(fmt_value(*t));
        fields.extend(x.iter().map(|v| fmt_value(*v)));
        fields.extend([d.scal, d.norm, d.min_eig_t, d.fiber_diameter, d.rho].iter().map(|v| fmt_value(*v)));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// A trajectory table read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn state_width(&self) -> usize {
        self.columns.len() - 1 - DIAGNOSTIC_COLUMNS.len()
    }
}

/// Parse a trajectory CSV. The header must match [`trajectory_header`] exactly.
pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryTable> {
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h.trim_end_matches('\r'),
        None => return format_err("empty trajectory file"),
    };
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    if columns.len() < 1 + DIAGNOSTIC_COLUMNS.len() {
        return format_err("trajectory header is too short");
    }
    let width = columns.len() - 1 - DIAGNOSTIC_COLUMNS.len();
    if columns != trajectory_header(width) {
        return format_err("unexpected trajectory header");
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Format(format!("row {}: cannot parse {f:?}", n + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != columns.len() {
            return format_err(format!("row {} has {} fields, expected {}", n + 1, row.len(), columns.len()));
        }
        rows.push(row);
    }
    Ok(TrajectoryTable { columns, rows })
}

/// Provenance record written next to every output.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub catalog_id: String,
    pub config_hash: String,
    pub tool_version: String,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub context: serde_json::Value,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(records: &[T], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_jsonl(text: &str) -> Result<Vec<serde_json::Value>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", n + 1))))
        .collect()
}

fn parse_number(tok: &str) -> Result<f64> {
    let value = match tok.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| Error::Format(format!("bad numerator in {tok:?}")))?;
            let q: f64 = q.trim().parse().map_err(|_| Error::Format(format!("bad denominator in {tok:?}")))?;
            if q == 0.0 {
                return format_err(format!("zero denominator in {tok:?}"));
            }
            p / q
        }
        None => tok.parse().map_err(|_| Error::Format(format!("cannot parse {tok:?} as a number")))?,
    };
    if !value.is_finite() {
        return format_err(format!("{tok:?} is not finite"));
    }
    Ok(value)
}

/// Parse a coefficient list such as `1,1,2`, `[0.5 1.5]` or `1/3, 2/3`.
pub fn parse_coefficients(text: &str) -> Result<Vec<f64>> {
    let body = text.trim();
    let body = body.strip_prefix('[').map(|b| b.strip_suffix(']').unwrap_or(b)).unwrap_or(body);
    let body = body.strip_prefix('(').map(|b| b.strip_suffix(')').unwrap_or(b)).unwrap_or(body);
    let tokens: Vec<&str> = body.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return format_err("no coefficients given");
    }
    if tokens.len() > MAX_COEFFICIENTS {
        return format_err(format!("more than {MAX_COEFFICIENTS} coefficients"));
    }
    tokens.into_iter().map(parse_number).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::lookup;

    #[test]
    fn catalog_spaces_roundtrip_through_json() {
        let spec = lookup("su3_group").unwrap().space_spec().unwrap().clone();
        let text = space_to_json(&spec);
        let back = parse_space_json(&text).unwrap();
        assert_eq!(SpaceFile::from_spec(&back), SpaceFile::from_spec(&spec));
    }

    #[test]
    fn unknown_fields_and_bad_shapes_are_rejected() {
        assert!(parse_space_json(r#"{"dim": 1, "structure_constants": [], "Q": [[1]], "h_basis": [], "modules": [[0]], "extra": 1}"#).is_err());
        assert!(parse_space_json(r#"{"dim": 2, "structure_constants": [], "Q": [[1]], "h_basis": [], "modules": [[0]]}"#).is_err());
        assert!(parse_space_json(r#"{"dim": 100000, "structure_constants": [], "Q": [], "h_basis": [], "modules": []}"#).is_err());
        assert!(parse_space_json(r#"{"dim": 2, "structure_constants": [[0,5,1,1.0]], "Q": [[1,0],[0,1]], "h_basis": [], "modules": [[0,1]]}"#).is_err());
        assert!(parse_space_json("not json").is_err());
    }

    #[test]
    fn coefficient_strings() {
        assert_eq!(parse_coefficients("1,1,2").unwrap(), vec![1.0, 1.0, 2.0]);
        assert_eq!(parse_coefficients("[0.5 1.5]").unwrap(), vec![0.5, 1.5]);
        assert_eq!(parse_coefficients("(1/4, 3/4)").unwrap(), vec![0.25, 0.75]);
        for bad in ["", "[]", "1,,x", "1/0", "nan", "inf", "1/2/3"] {
            assert!(parse_coefficients(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn csv_header_is_checked() {
        assert!(parse_trajectory_csv("").is_err());
        assert!(parse_trajectory_csv("t,x0,scal,norm,min_eig_t,rho,fiber_diameter\n").is_err());
        let ok = parse_trajectory_csv("t,x0,scal,norm,min_eig_t,fiber_diameter,rho\n0,1,2,3,4,5,6\n").unwrap();
        assert_eq!(ok.state_width(), 1);
        assert_eq!(ok.column("rho").unwrap(), vec![6.0]);
        assert!(parse_trajectory_csv("t,x0,scal,norm,min_eig_t,fiber_diameter,rho\n0,1,2\n").is_err());
    }
}
