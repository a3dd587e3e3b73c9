//! Output directories, locks, sidecar model configs and run records.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use nastar::models::{save_checkpoint, ParamSet};
use nastar::rng::file_sha256;

pub const OUTPUT_ROOT_ENV: &str = "NASTAR_OUTPUT_ROOT";
const LOCK_NAME: &str = ".nastar.lock";

/// Default location for a subcommand's output when `--out` is omitted.
pub fn default_out(subcommand: &str, file: Option<&str>) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(subcommand);
    match file {
        Some(f) => dir.join(f),
        None => dir,
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "{} is locked by another run (remove {} if no run is active)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Parent directory of an output file, created if needed.
pub fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `model.ckpt` keeps its architecture in `model.json`.
pub fn sidecar(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes the checkpoint through a temporary file so a failed run leaves none.
pub fn save_model<C: Serialize>(params: &ParamSet, config: &C, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.partial");
    save_checkpoint(params, &tmp)?;
    write_json(&sidecar(path), config)?;
    fs::rename(&tmp, path).with_context(|| format!("moving checkpoint to {}", path.display()))
}

pub fn load_model<C: DeserializeOwned>(path: &Path) -> Result<(ParamSet, C)> {
    let params = nastar::models::load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    let cfg = read_json(&sidecar(path))
        .with_context(|| format!("model config for {}", path.display()))?;
    Ok((params, cfg))
}

/// What every subcommand leaves behind: the effective configuration, the
/// seed, and the hash of every input and output file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub subcommand: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new<C: Serialize>(subcommand: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            ..Self::default()
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Run record path for a single-file output: `cohort.json` -> `cohort.json.run.json`.
pub fn record_for_file(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn paths() {
        assert_eq!(sidecar(Path::new("a/se.ckpt")), PathBuf::from("a/se.json"));
        assert_eq!(
            record_for_file(Path::new("x/cohort.json")),
            PathBuf::from("x/cohort.json.run.json")
        );
        assert_eq!(parent_dir(Path::new("file.idx")), PathBuf::from("."));
    }
}
