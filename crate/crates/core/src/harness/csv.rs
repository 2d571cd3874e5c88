//! CSV rows with round-trip float formatting and atomic file writes.

use std::io::Write;
use std::path::Path;

use super::HarnessError;

/// Formats `x` with 17 significant digits, enough to round-trip any f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvRow(pub Vec<String>);

impl CsvRow {
    pub fn float(&mut self, x: f64) {
        self.0.push(fmt_float(x));
    }

    pub fn opt(&mut self, x: Option<f64>) {
        self.0.push(x.map(fmt_float).unwrap_or_default());
    }

    pub fn int(&mut self, x: usize) {
        self.0.push(x.to_string());
    }

    pub fn text(&mut self, s: &str) {
        debug_assert!(!s.contains([',', '\n', '"']));
        self.0.push(s.to_string());
    }

    pub fn join(&self) -> String {
        self.0.join(",")
    }
}

pub fn render<I: IntoIterator<Item = CsvRow>>(header: &[&str], rows: I) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join());
        out.push('\n');
    }
    out
}

/// Writes to a temporary file in the target directory, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic<I: IntoIterator<Item = CsvRow>>(
    path: &Path,
    header: &[&str],
    rows: I,
) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(render(header, rows).as_bytes()).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
