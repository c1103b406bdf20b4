//! Result files: pretty JSON summaries, CSV tables with an in-file schema
//! line, and a timestamp sidecar kept apart from the data.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "POLYMER_OUT";
pub const DEFAULT_OUT: &str = "polymer-out";
pub const CSV_SCHEMA: u32 = 1;

/// `explicit`, else `$POLYMER_OUT`, else `polymer-out`.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `rows` under `header`, preceded by `# schema=<v> config=<hash>`.
pub fn write_csv(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut file = File::create(path)?;
    writeln!(file, "# schema={CSV_SCHEMA} config={config_hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::invalid(format!(
                "CSV row has {} fields, header {}",
                r.len(),
                header.len()
            )));
        }
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a file written by [`write_csv`], header first.
pub fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    r.records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Wall-clock record of one command, stored next to (never inside) its data.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar {
    pub command: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Writes `<stem>.timestamp.json` in `dir`.
pub fn write_sidecar(dir: &Path, stem: &str, command: &str, started_unix: f64) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.timestamp.json"));
    write_json(
        &path,
        &Sidecar {
            command: command.to_string(),
            started_unix,
            finished_unix: unix_now(),
        },
    )?;
    Ok(path)
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
