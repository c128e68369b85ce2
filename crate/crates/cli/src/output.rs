//! In-memory collection of a command's files, written in one go once the
//! command has finished. A failed command therefore leaves nothing behind.

use std::collections::BTreeMap;
use std::path::Path;

use mfg_core::{MfgError, Result};
use serde::Serialize;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
    /// Set when the command ran to completion but its checks did not pass.
    /// The files are still written.
    pub failure: Option<String>,
}

pub fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

impl Outputs {
    pub fn insert(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| MfgError::Numerical(e.to_string()))?;
        bytes.push(b'\n');
        self.insert(name, bytes);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| MfgError::Io(e.into_error()))?;
        self.insert(name, bytes);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(|v| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(|k| k.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Fails unless `dir` exists as a writable directory or could be created.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    let mut probe = Some(dir);
    while let Some(p) = probe {
        if p.as_os_str().is_empty() {
            return Ok(());
        }
        if p.exists() {
            let meta = std::fs::metadata(p)?;
            if !meta.is_dir() {
                return Err(MfgError::Config(format!(
                    "{} is not a directory",
                    p.display()
                )));
            }
            if meta.permissions().readonly() {
                return Err(MfgError::Config(format!("{} is not writable", p.display())));
            }
            return Ok(());
        }
        probe = p.parent();
    }
    Ok(())
}
