use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::TestItem;
use crate::audio::{load_wav, save_wav};
use crate::error::{Error, Result};

/// One line of a test-set manifest. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSetEntry {
    pub id: String,
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub condition: String,
    pub snr_db: f64,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<dir>/<name>/*.wav` and the manifest `<dir>/<name>.jsonl`.
pub fn write_test_set(dir: impl AsRef<Path>, name: &str, items: &[TestItem]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let sub = dir.join(name);
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let stem = format!("{i:04}_{}", file_stem(&item.id));
        let noisy = PathBuf::from(name).join(format!("{stem}.noisy.wav"));
        let clean = PathBuf::from(name).join(format!("{stem}.clean.wav"));
        save_wav(&item.noisy, dir.join(&noisy))?;
        save_wav(&item.clean, dir.join(&clean))?;
        let entry = TestSetEntry {
            id: item.id.clone(),
            noisy,
            clean,
            condition: item.condition.clone(),
            snr_db: item.snr_db,
        };
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n").expect("write to vec");
    }
    let path = dir.join(format!("{name}.jsonl"));
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_test_set(path: impl AsRef<Path>) -> Result<Vec<TestItem>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: TestSetEntry = serde_json::from_str(line)
            .map_err(|err| Error::Manifest(format!("line {}: {err}", lineno + 1)))?;
        let noisy = load_wav(base.join(&e.noisy))?;
        let clean = load_wav(base.join(&e.clean))?;
        if noisy.len() != clean.len() {
            return Err(Error::LengthMismatch(noisy.len(), clean.len()));
        }
        items.push(TestItem {
            id: e.id,
            noisy,
            clean,
            condition: e.condition,
            snr_db: e.snr_db,
        });
    }
    if items.is_empty() {
        return Err(Error::Manifest(format!("{} has no entries", path.display())));
    }
    Ok(items)
}
