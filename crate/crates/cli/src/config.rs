use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mtgan::train::{parse_kv, TrainConfig};
use mtgan::{Error, Result};

/// Name of the echoed configuration inside a run directory.
pub const RESOLVED_FILE: &str = "run_config.resolved";

/// Training hyperparameters plus the paths a run reads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    /// Training dataset directory.
    pub data: Option<PathBuf>,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses `key=value` lines. Relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v, base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        if key == "data" {
            self.data = Some(base.join(value));
            return Ok(());
        }
        if self.train.set(key, value)? {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key `{key}`")))
        }
    }

    /// Makes every path absolute and checks that it exists.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(p) = &self.data {
            self.data = Some(std::fs::canonicalize(p).map_err(|e| Error::io(p, e))?);
        }
        self.train.validate()
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no training data: set `data` in the config or pass --data".into()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data={}", d.display());
        }
        s + &self.train.to_text()
    }
}
