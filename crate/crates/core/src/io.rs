//! Field checkpoints, CSV tables and run manifests.
//!
//! Binary field layout, all little-endian:
//!
//! ```text
//! b"SEFIELD1" | dim: u32 | n: u32 | components: u32 | f64 × components·n^dim
//! ```
//!
//! Values are component-major; within a component the flat index is
//! `i·n + j` for the point `(i/n, j/n)`, so the last axis varies fastest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::euler::PathFlag;
use crate::field::{RealField, TorusGrid};

pub const FIELD_MAGIC: &[u8; 8] = b"SEFIELD1";

pub fn encode_field(f: &RealField) -> Vec<u8> {
    let grid = f.grid();
    let mut out = Vec::with_capacity(20 + 8 * f.data().len());
    out.extend_from_slice(FIELD_MAGIC);
    for v in [grid.dim(), grid.n(), f.components()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for x in f.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<RealField> {
    if bytes.len() < 20 || &bytes[..8] != FIELD_MAGIC {
        return Err(Error::Format("missing field header".into()));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let grid = TorusGrid::new(word(0), word(1))?;
    let components = word(2);
    let body = &bytes[20..];
    if body.len() != 8 * components * grid.len() {
        return Err(Error::Format(format!(
            "expected {} values, found {} bytes",
            components * grid.len(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RealField::new(grid, components, data)
}

pub fn write_field(path: &Path, f: &RealField) -> Result<String> {
    let bytes = encode_field(f);
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_field(path: &Path) -> Result<RealField> {
    decode_field(&fs::read(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-trip form: integers as written, everything else in
/// scientific notation.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:e}")
    }
}

/// Numeric table with a fixed header. Identical numbers give identical
/// bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| format_number(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty table".into()))?
            .split(',')
            .map(str::to_string)
            .collect::<Vec<_>>();
        let rows = lines
            .map(|l| {
                let row = l
                    .split(',')
                    .map(|c| {
                        c.parse::<f64>()
                            .map_err(|e| Error::Format(format!("cell '{c}': {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if row.len() != header.len() {
                    return Err(Error::Format(format!(
                        "row has {} cells, header {}",
                        row.len(),
                        header.len()
                    )));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(CsvTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Writes the table and returns the SHA-256 of its bytes.
    pub fn write(&self, path: &Path) -> Result<String> {
        let text = self.render();
        fs::write(path, text.as_bytes())?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Field as a CSV table: `x[,y]` then one column per component.
pub fn field_table(f: &RealField) -> CsvTable {
    let grid = f.grid();
    let mut header: Vec<String> = ["x", "y"][..grid.dim()]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..f.components()).map(|c| format!("c{c}")));
    let mut table = CsvTable {
        header,
        rows: Vec::with_capacity(grid.len()),
    };
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let mut row = x[..grid.dim()].to_vec();
        row.extend((0..f.components()).map(|c| f.component(c)[idx]));
        table.rows.push(row);
    }
    table
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// A stored state of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub time: f64,
    /// File name relative to the manifest directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub index: u64,
    pub flag: Option<PathFlag>,
    pub checkpoints: Vec<Checkpoint>,
    /// Variable-density runs only.
    #[serde(default)]
    pub mass_drift: Option<f64>,
    #[serde(default)]
    pub min_rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Record written next to every set of outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub experiment: String,
    pub config_hash: String,
    pub config: RunConfig,
    #[serde(default)]
    pub paths: Vec<PathEntry>,
    #[serde(default)]
    pub flagged: usize,
    #[serde(default)]
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn new(experiment: &str, config: &RunConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            paths: Vec::new(),
            flagged: 0,
            outputs: Vec::new(),
        }
    }

    /// Loads a manifest and checks that the embedded config still hashes to
    /// the recorded value.
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.config.hash() != m.config_hash {
            return Err(Error::Format(format!(
                "{}: config hash mismatch",
                path.display()
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_exact() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = RealField::from_fn(g, 3, |c, x| (c as f64 + 1.0) * x[0] - x[1].powi(3) + 1e-300);
        let bytes = encode_field(&f);
        assert_eq!(bytes.len(), 20 + 8 * 3 * 64);
        assert_eq!(decode_field(&bytes).unwrap(), f);
        assert!(decode_field(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_field(b"NOTAFIELD___________").is_err());
    }

    #[test]
    fn layout_is_component_major_last_axis_fastest() {
        let g = TorusGrid::new(2, 8).unwrap();
        let f = RealField::from_fn(g, 1, |_, x| 10.0 * x[0] + x[1]);
        let bytes = encode_field(&f);
        let at = |k: usize| f64::from_le_bytes(bytes[20 + 8 * k..28 + 8 * k].try_into().unwrap());
        assert_eq!(at(1), 0.125);
        assert_eq!(at(8), 1.25);
    }

    #[test]
    fn number_format() {
        assert_eq!(format_number(3.0), "3");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(0.001), "1e-3");
        assert_eq!(
            format_number(1.308619581393591e-18),
            "1.308619581393591e-18"
        );
        for x in [0.1, 1.0 / 3.0, -2.5e300, f64::MIN_POSITIVE, 1e15] {
            assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_round_trip_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = TorusGrid::new(1, 8).unwrap();
        let f = RealField::from_fn(g, 2, |c, x| (c as f64 - 0.1) * (x[0] * 7.0).sin());
        let table = field_table(&f);
        assert_eq!(table.header, ["x", "c0", "c1"]);
        let path = dir.path().join("f.csv");
        let h1 = table.write(&path).unwrap();
        let back = CsvTable::parse(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.column("c1").unwrap(), f.component(1));
        assert_eq!(h1, table.write(&path).unwrap());
        let bin = dir.path().join("f.bin");
        write_field(&bin, &f).unwrap();
        assert_eq!(read_field(&bin).unwrap(), f);
    }

    #[test]
    fn manifest_detects_edited_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = Manifest::new("simulate", &RunConfig::default());
        write_json(&path, &m).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), m);
        m.config.ensemble.seed = 5;
        write_json(&path, &m).unwrap();
        assert!(matches!(Manifest::load(&path), Err(Error::Format(_))));
    }
}
