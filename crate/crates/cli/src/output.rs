//! Report persistence.
//!
//! Report payloads depend only on the inputs and the seed. Anything that
//! varies between runs (wall-clock time, argv) goes into a `.run.json`
//! sidecar next to them so payloads can be compared byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// One line of the headline CSV. `kind` is `exact` or `monte_carlo`.
#[derive(Debug, Clone, Serialize)]
pub struct HeadlineRow {
    pub quantity: String,
    pub kind: &'static str,
    pub value: f64,
    pub se: Option<f64>,
}

impl HeadlineRow {
    pub fn exact(quantity: &str, value: f64) -> Self {
        Self {
            quantity: quantity.to_string(),
            kind: "exact",
            value,
            se: None,
        }
    }

    pub fn estimate(quantity: &str, value: f64, se: f64) -> Self {
        Self {
            quantity: quantity.to_string(),
            kind: "monte_carlo",
            value,
            se: Some(se),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Where a command sends its artifacts: files under a directory, or stdout.
pub struct Sink {
    dir: Option<PathBuf>,
    format: Format,
}

impl Sink {
    pub fn new(dir: Option<&Path>, format: Format) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            format,
        })
    }

    /// Writes `stem.{ext}` under the output directory, or prints it when it
    /// is the format selected for stdout.
    pub fn emit(&self, stem: &str, ext: &str, body: &str) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                let path = dir.join(format!("{stem}.{ext}"));
                fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
                eprintln!("wrote {}", path.display());
            }
            None => {
                let selected = match self.format {
                    Format::Json => "json",
                    Format::Csv => "csv",
                };
                if ext == selected {
                    std::io::stdout().write_all(body.as_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Writes the non-deterministic run metadata, only when writing files.
    pub fn sidecar(&self, stem: &str) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let meta = serde_json::json!({
            "argv": std::env::args().collect::<Vec<_>>(),
            "unix_time": unix_time,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let path = dir.join(format!("{stem}.run.json"));
        fs::write(&path, to_json(&meta)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
