//! Result documents, trace tables, and gridded field dumps.
//!
//! The result document is `key = value` lines in a stable order; traces are
//! comma-separated tables with a header row. Field dumps are per-species
//! flat binary files of little-endian doubles, row-major, behind a 32-byte
//! header (8-byte magic, u32 cells per side, u32 species index, f64
//! half-width, f64 target mass) plus a small text sidecar, so regression
//! tests can reload them bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use multiks::field::DensityField;
use multiks::minimizer::MinimizeReport;

pub const FIELD_MAGIC: &[u8; 8] = b"MKSFLD01";

/// Ordered `key = value` document.
#[derive(Default)]
pub struct ResultDoc {
    entries: Vec<(String, String)>,
}

impl ResultDoc {
    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.entries.push((key.to_string(), format!("{value:.17e}")));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(v);
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Comma-separated table with a fixed header.
pub struct TraceTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TraceTable {
    pub fn new(columns: &[&str]) -> Self {
        TraceTable {
            header: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.header.join(",");
        text.push('\n');
        for row in &self.rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn cell(v: f64) -> String {
    format!("{v:.17e}")
}

/// Standard minimize/evolve trace columns.
pub fn minimize_trace(report: &MinimizeReport) -> TraceTable {
    let species = report.final_field.species();
    let mut columns = vec!["iter".to_string(), "f_v".to_string(), "entropy_total".to_string()];
    for i in 0..species {
        columns.push(format!("second_moment_{i}"));
    }
    columns.push("residual".to_string());
    columns.push("max_density".to_string());
    let refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut table = TraceTable::new(&refs);
    for d in &report.diagnostics {
        let mut row = vec![d.iter.to_string(), cell(d.free_energy), cell(d.entropy_total)];
        row.extend(d.second_moments.iter().map(|m| cell(*m)));
        row.push(cell(d.residual));
        row.push(cell(d.max_density));
        table.push_row(row);
    }
    table
}

/// Dump every species of `field` under `dir/species_<i>.bin` with text
/// sidecars.
pub fn dump_fields(field: &DensityField, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let grid = field.grid();
    let n = grid.cells_per_side();
    for s in 0..field.species() {
        let bin_path = dir.join(format!("species_{s}.bin"));
        let mut file = fs::File::create(&bin_path)
            .with_context(|| format!("creating {}", bin_path.display()))?;
        file.write_all(FIELD_MAGIC)?;
        file.write_all(&(n as u32).to_le_bytes())?;
        file.write_all(&(s as u32).to_le_bytes())?;
        file.write_all(&grid.half_width().to_le_bytes())?;
        file.write_all(&field.target_mass()[s].to_le_bytes())?;
        let view = field.species_view(s);
        let mut buf = Vec::with_capacity(n * n * 8);
        for ix in 0..n {
            for iy in 0..n {
                buf.extend_from_slice(&view[(ix, iy)].to_le_bytes());
            }
        }
        file.write_all(&buf)?;

        let mut doc = ResultDoc::default();
        doc.push("format", "multiks field dump v1");
        doc.push("binary", bin_path.file_name().unwrap().to_string_lossy());
        doc.push("species", s);
        doc.push("cells_per_side", n);
        doc.push_f64("half_width", grid.half_width());
        doc.push_f64("target_mass", field.target_mass()[s]);
        doc.push_f64("mass", field.mass(s));
        doc.push_f64("max_density", field.max_density(s));
        doc.write(&dir.join(format!("species_{s}.txt")))?;
    }
    Ok(())
}

/// Reload a dump written by [`dump_fields`]; the test suite uses this for
/// bit-exact regression checks.
pub fn load_field_dump(path: &Path) -> Result<(u32, u32, f64, f64, Vec<f64>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    anyhow::ensure!(bytes.len() >= 32, "dump too short");
    anyhow::ensure!(&bytes[0..8] == FIELD_MAGIC, "bad magic");
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let species = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let half_width = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let mass = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let body = &bytes[32..];
    anyhow::ensure!(body.len() == (n as usize * n as usize) * 8, "bad payload size");
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, species, half_width, mass, values))
}
