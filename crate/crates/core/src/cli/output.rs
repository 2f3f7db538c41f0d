use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
}

pub(crate) fn csv_io(e: csv::Error) -> io::Error {
    if !e.is_io_error() {
        return io::Error::other(e);
    }
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        _ => unreachable!(),
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

/// Six significant digits, switching to exponent form for very large or
/// small magnitudes.
pub fn six_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        format!("{x:.5e}")
    } else {
        format!("{x:.*}", (5 - mag).max(0) as usize)
    }
}

const RATE_SUFFIX: &str = "_bits_per_s";

/// A CSV table. Columns ending in `_bits_per_s` are shown in kbit/s when
/// pretty-printed.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Comment lines written after the rows.
    pub trailer: Vec<String>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, out: &mut W, comment: &str, pretty: bool) -> Result<()> {
        writeln!(out, "# {comment}")?;
        let mut w = csv::Writer::from_writer(&mut *out);
        let rate_cols: Vec<bool> = self.headers.iter().map(|h| h.ends_with(RATE_SUFFIX)).collect();
        let headers: Vec<String> = self
            .headers
            .iter()
            .zip(&rate_cols)
            .map(|(h, &r)| {
                if pretty && r {
                    format!("{}_kbit_per_s", h.trim_end_matches(RATE_SUFFIX))
                } else {
                    h.clone()
                }
            })
            .collect();
        w.write_record(&headers).map_err(csv_io)?;
        for row in &self.rows {
            let fields: Vec<String> = row
                .iter()
                .zip(&rate_cols)
                .map(|(v, &rate)| match v {
                    Value::Num(x) if pretty => six_significant(if rate { x / 1e3 } else { *x }),
                    Value::Num(x) => format!("{x}"),
                    Value::Int(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    Value::Text(s) => s.clone(),
                })
                .collect();
            w.write_record(&fields).map_err(csv_io)?;
        }
        w.flush()?;
        drop(w);
        for line in &self.trailer {
            writeln!(out, "# {line}")?;
        }
        Ok(())
    }
}

/// Resolves where a command writes: `--out` if given (relative paths are
/// placed under `out_dir` when set), otherwise `<out_dir>/<default_name>`
/// or stdout.
pub fn destination(out: Option<&Path>, out_dir: Option<&Path>, default_name: &str) -> Option<PathBuf> {
    match (out, out_dir) {
        (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(dir)) => Some(dir.join(default_name)),
        (None, None) => None,
    }
}

pub fn open(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(six_significant(6308.123456), "6308.12");
        assert_eq!(six_significant(0.0432), "0.0432000");
        assert_eq!(six_significant(1.0), "1.00000");
        assert_eq!(six_significant(1.23456789e9), "1.23457e9");
        assert_eq!(six_significant(0.0), "0");
    }

    #[test]
    fn pretty_rates_in_kbit() {
        let mut t = Table::new(&["loss_db", "r_sk_bits_per_s"]);
        t.push(vec![5.8.into(), 6308000.0.into()]);
        let mut buf = Vec::new();
        t.write(&mut buf, "x", true).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "# x\nloss_db,r_sk_kbit_per_s\n5.80000,6308.00\n");
    }

    #[test]
    fn destinations() {
        let dir = Path::new("/tmp/o");
        assert_eq!(destination(Some(Path::new("a.csv")), Some(dir), "d.csv"), Some(dir.join("a.csv")));
        assert_eq!(destination(None, Some(dir), "d.csv"), Some(dir.join("d.csv")));
        assert_eq!(destination(None, None, "d.csv"), None);
    }
}
