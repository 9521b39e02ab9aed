use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Run settings that change outputs but live outside the config file.
#[derive(Clone, Debug, Serialize)]
pub struct RunFlags {
    pub seed: u64,
    pub delta: f64,
    pub no_interaction: bool,
}

#[derive(Serialize)]
struct Hashed<'a> {
    config: &'a Config,
    flags: &'a RunFlags,
}

/// SHA-256 of the canonical JSON form of the effective configuration.
pub fn config_hash(cfg: &Config, flags: &RunFlags) -> String {
    let json = serde_json::to_string(&Hashed { config: cfg, flags }).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory plus the stamp written into every artifact.
pub struct Sink {
    dir: PathBuf,
    hash: String,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    version: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

impl Sink {
    pub fn new(dir: &Path, hash: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Sink { dir: dir.to_path_buf(), hash })
    }

    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let stamped = Stamped { version: VERSION, config_hash: &self.hash, body };
        let mut text = serde_json::to_string_pretty(&stamped).map_err(|e| io_err(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    /// Writes numeric rows; each row gains `config_hash` and `version` columns.
    pub fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        let mut head: Vec<&str> = header.to_vec();
        head.extend(["config_hash", "version"]);
        w.write_record(&head).map_err(|e| io_err(&path, e))?;
        for row in rows {
            let mut rec: Vec<String> = row.into_iter().map(num).collect();
            rec.push(self.hash.clone());
            rec.push(VERSION.to_string());
            w.write_record(&rec).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
