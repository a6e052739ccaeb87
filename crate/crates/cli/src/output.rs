use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use dichotomy_core::dichotomy::DichotomyReport;
use serde::Serialize;
use serde_json::Value;

/// Float text with 17 significant digits, so reports round-trip exactly and
/// compare byte for byte across runs.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "Infinity".into()
    } else {
        "-Infinity".into()
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |out: &mut String, k: usize| out.extend(std::iter::repeat_n(' ', 2 * k));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            let flat = items.iter().all(|x| x.is_number());
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                if flat {
                    if i > 0 {
                        out.push(' ');
                    }
                } else {
                    out.push('\n');
                    pad(out, indent + 1);
                }
                write_value(out, item, indent + 1);
            }
            if !flat {
                out.push('\n');
                pad(out, indent);
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                pad(out, indent + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 1);
            }
            out.push('\n');
            pad(out, indent);
            out.push('}');
        }
    }
}

/// Pretty JSON with fixed-precision floats. Non-finite floats become `null`.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

/// Failure to write an artifact.
#[derive(Debug, thiserror::Error)]
#[error("cannot write {}: {source}", path.display())]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// Output directory that records every file written to it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, OutputError> {
        fs::create_dir_all(root).map_err(|source| OutputError {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, OutputError> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|source| OutputError {
            path: path.clone(),
            source,
        })?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, OutputError> {
        let text = to_json(value).map_err(|e| OutputError {
            path: self.root.join(name),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })?;
        self.write(name, &text)
    }
}

fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV write");
    for row in rows {
        w.write_record(&row).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

/// `ts,norm,envelope,component` rows for every sampled decay curve, with the
/// envelope recomputed from the fit constants.
pub fn decay_csv(report: &DichotomyReport) -> String {
    let header: Vec<String> = ["ts", "norm", "envelope", "component"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for base in &report.base_times {
        for (fit, tag) in [(&base.forward, "P"), (&base.backward, "Q")] {
            if let Some(fit) = fit {
                for s in &fit.samples {
                    rows.push(vec![
                        format_float(s.ts),
                        format_float(s.norm),
                        format_float(fit.envelope(s.ts)),
                        tag.to_string(),
                    ]);
                }
            }
        }
    }
    csv_text(&header, rows)
}

/// Generic numeric table: a header and rows of floats.
pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    csv_text(&header, rows.into_iter().map(|r| r.into_iter().map(format_float).collect()))
}
