//! CSV and JSON emission. Every file is written to a temporary sibling and
//! renamed into place, so readers never observe a partial file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DVector;

/// 17 significant digits, enough to round-trip an f64.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Csv {
    body: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        let mut body = header.join(",");
        body.push('\n');
        Self { body }
    }

    pub fn with_header(header: &[&str]) -> Self {
        Self::new(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    /// One row of numbers; `None` leaves the field empty.
    pub fn row(&mut self, fields: impl IntoIterator<Item = Option<f64>>) {
        self.fields(true, fields);
    }

    /// A row led by an integer column such as an iteration number.
    pub fn indexed_row(&mut self, index: usize, fields: impl IntoIterator<Item = Option<f64>>) {
        self.body.push_str(&index.to_string());
        self.fields(false, fields);
    }

    fn fields(&mut self, mut first: bool, fields: impl IntoIterator<Item = Option<f64>>) {
        for f in fields {
            if !first {
                self.body.push(',');
            }
            first = false;
            if let Some(v) = f {
                self.body.push_str(&num(v));
            }
        }
        self.body.push('\n');
    }

    #[cfg(test)]
    pub fn as_str(&self) -> &str {
        &self.body
    }
}

pub fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

pub fn vec_fields(v: &DVector<f64>) -> impl Iterator<Item = Option<f64>> + '_ {
    v.iter().map(|x| Some(*x))
}

/// Collects files and writes them together once the run has finished.
#[derive(Debug)]
pub struct Bundle {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Bundle {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, contents: impl Into<String>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn add_csv(&mut self, name: &str, csv: Csv) {
        self.add(name, csv.body);
    }

    pub fn add_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("cannot create output directory {}", self.dir.display()))?;
        for (name, contents) in &self.files {
            write_atomic(&self.dir.join(name), contents)?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

/// Reads a `t,c1,..` CSV produced by this tool.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| if f.is_empty() { Ok(f64::NAN) } else { f.parse::<f64>() })
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: bad number on line {}", path.display(), k + 2))?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.trim_start_matches('-').split('e').next().unwrap().replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn empty_fields_and_atomic_write() {
        let mut c = Csv::with_header(&["a", "b"]);
        c.row([Some(1.0), None]);
        c.indexed_row(7, [Some(0.5)]);
        assert_eq!(c.as_str(), "a,b\n1.0000000000000000e0,\n7,5.0000000000000000e-1\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, c.as_str()).unwrap();
        let (h, rows) = read_table(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows[0][0], 1.0);
        assert!(rows[0][1].is_nan());
        assert!(!dir.path().join("x.csv.tmp").exists());
    }
}
