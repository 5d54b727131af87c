use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use cropseg::manifest::Manifest;
use cropseg::Error;

use crate::Failure;

/// Name of the resolved-settings file written into every output directory.
pub const RUN_CONFIG: &str = "run.config";

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// key=value settings file; command-line flags take precedence
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the command
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flag, then config file, then default; every resolved value is recorded.
pub struct Settings {
    file: Manifest,
    used: Vec<String>,
    resolved: Manifest,
}

impl Settings {
    pub fn load(common: &CommonArgs, command: &str) -> Result<Self, Failure> {
        let file = match &common.config {
            Some(path) => {
                if !path.is_file() {
                    return Err(Failure::Usage(format!("config file {} does not exist", path.display())));
                }
                Manifest::read(path)
                    .map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))?
            }
            None => Manifest::new(),
        };
        let mut settings = Settings {
            file,
            used: Vec::new(),
            resolved: Manifest::new(),
        };
        settings.resolved.set("command", command);
        let seed = settings.pick("seed", common.seed, 0u64)?;
        settings.resolved.set("seed", seed);
        Ok(settings)
    }

    pub fn pick<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure> {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key).or_else(|| self.file.get(&key.replace('-', "_"))) {
                Some(text) => text.parse().map_err(|_| {
                    Failure::Usage(format!("config key `{key}`: cannot parse `{text}`"))
                })?,
                None => default,
            },
        };
        self.used.push(key.to_string());
        self.resolved.set(key, &value);
        Ok(value)
    }

    /// Like [`Settings::pick`] without a default.
    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T, Failure> {
        let present = flag.is_some() || self.file.get(key).is_some() || self.file.get(&key.replace('-', "_")).is_some();
        if !present {
            return Err(Failure::Usage(format!("missing required setting --{key}")));
        }
        let value = match flag {
            Some(v) => v,
            None => {
                let text = self.file.get(key).or_else(|| self.file.get(&key.replace('-', "_"))).unwrap_or_default();
                text.parse()
                    .map_err(|_| Failure::Usage(format!("config key `{key}`: cannot parse `{text}`")))?
            }
        };
        self.used.push(key.to_string());
        self.resolved.set(key, &value);
        Ok(value)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
        Ok(PathBuf::from(self.require::<String>(key, flag.map(|p| p.display().to_string()))?))
    }

    /// Comma-separated list; empty when unset.
    pub fn list(&mut self, key: &str, flag: Option<String>) -> Result<Vec<String>, Failure> {
        self.list_or(key, flag, "")
    }

    pub fn list_or(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<String>, Failure> {
        let text = self.pick(key, flag, default.to_string())?;
        Ok(text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect())
    }

    pub fn seed(&self) -> u64 {
        self.resolved.parse_value("seed").unwrap_or(0)
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.set(key, value);
    }

    pub fn warn_unused(&self) {
        for (key, _) in self.file.entries() {
            let norm = key.replace('_', "-");
            if !self.used.iter().any(|u| *u == norm || *u == key) {
                eprintln!("warning: config key `{key}` is not used by this command");
            }
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        self.resolved.write(&dir.join(RUN_CONFIG))?;
        Ok(())
    }
}

pub fn ensure_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::Run(Error::io(path, e)))
}

pub fn ensure_input(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}
