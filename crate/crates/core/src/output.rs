//! CSV and PGM artifacts. Every CSV starts with a `# config_sha256=` line,
//! then a header row. Floats use the shortest representation that round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::mesh::Mesh;

/// Hex SHA-256 of the echoed configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Shortest round-trip decimal form, `.` separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// An in-memory CSV table.
#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(hash: &str, header: &[String]) -> Self {
        let mut text = format!("# config_sha256={hash}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text, columns: header.len() }
    }

    pub fn with_columns(hash: &str, header: &[&str]) -> Self {
        Self::new(hash, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    /// Appends a row, padding short rows with empty cells.
    pub fn row(&mut self, cells: &[String]) {
        let pad = self.columns.saturating_sub(cells.len());
        self.text.push_str(&cells.join(","));
        for _ in 0..pad {
            self.text.push(',');
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Header `prefix_1 .. prefix_n`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Grid rows from the top (largest y) down, stacking z layers from the bottom.
fn grid_rows(mesh: &Mesh) -> Vec<(usize, usize, Vec<usize>)> {
    let [nx, ny, nz] = mesh.cells();
    let mut rows = Vec::with_capacity(ny * nz);
    for k in 0..nz.max(1) {
        for j in (0..ny).rev() {
            rows.push((k, j, (0..nx).map(|i| mesh.element_at([i, j, k])).collect()));
        }
    }
    rows
}

/// Element densities as one grid row per line: `channel, k, j, x_0 .. x_{nx-1}`.
pub fn density_csv(hash: &str, mesh: &Mesh, densities: &[Vec<f64>]) -> CsvTable {
    let nx = mesh.cells()[0];
    let mut header = vec!["channel".to_string(), "k".into(), "j".into()];
    header.extend((0..nx).map(|i| format!("x_{i}")));
    let mut t = CsvTable::new(hash, &header);
    for (c, rho) in densities.iter().enumerate() {
        for (k, j, elems) in grid_rows(mesh) {
            let mut cells = vec![c.to_string(), k.to_string(), j.to_string()];
            cells.extend(elems.iter().map(|&e| fmt_f64(rho[e])));
            t.row(&cells);
        }
    }
    t
}

/// Binary 8-bit PGM, 0 = void and 255 = solid; with `threshold`, values
/// at or above it become 255 and the rest 0.
pub fn density_pgm(mesh: &Mesh, rho: &[f64], threshold: Option<f64>) -> Vec<u8> {
    let rows = grid_rows(mesh);
    let nx = mesh.cells()[0];
    let mut out = format!("P5\n{} {}\n255\n", nx, rows.len()).into_bytes();
    for (_, _, elems) in rows {
        for e in elems {
            let v = rho[e].clamp(0.0, 1.0);
            out.push(match threshold {
                Some(t) => {
                    if v >= t {
                        255
                    } else {
                        0
                    }
                }
                None => (v * 255.0).round() as u8,
            });
        }
    }
    out
}

/// Output directory handle that records the configuration hash.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    hash: String,
}

impl OutputDir {
    /// Creates `root` and writes the echoed configuration as `config.json`.
    pub fn create(root: &Path, echoed_config: &str) -> Result<Self> {
        fs::create_dir_all(root)?;
        fs::write(root.join("config.json"), echoed_config)?;
        Ok(Self { root: root.to_path_buf(), hash: config_hash(echoed_config) })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn table(&self, header: &[String]) -> CsvTable {
        CsvTable::new(&self.hash, header)
    }

    /// `density_<iter>.csv` plus grayscale and binarized PGMs per channel.
    pub fn write_density(&self, mesh: &Mesh, iteration: usize, densities: &[Vec<f64>]) -> Result<()> {
        density_csv(&self.hash, mesh, densities).write(&self.path(&format!("density_{iteration}.csv")))?;
        for (c, rho) in densities.iter().enumerate() {
            let stem = if densities.len() == 1 { format!("density_{iteration}") } else { format!("density_{iteration}_c{c}") };
            fs::write(self.path(&format!("{stem}.pgm")), density_pgm(mesh, rho, None))?;
            fs::write(self.path(&format!("{stem}_bin.pgm")), density_pgm(mesh, rho, Some(0.5)))?;
        }
        Ok(())
    }
}

/// Appends one cell per value.
pub fn push_values(cells: &mut Vec<String>, values: &[f64]) {
    cells.extend(values.iter().map(|&v| fmt_f64(v)));
}

/// Renders a slice as a `;`-separated cell.
pub fn joined(values: &[usize]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(s, "{v}");
    }
    s
}
