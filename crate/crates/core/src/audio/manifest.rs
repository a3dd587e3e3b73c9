use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Noise,
    Speech,
}

/// One line of a JSONL manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub kind: SignalKind,
    pub duration_s: f64,
    /// Provenance label for synthetic data. Only tests look at it.
    #[serde(default)]
    pub family: Option<String>,
}

fn validate(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Manifest(format!("duplicate id {:?}", e.id)));
        }
        if !(e.duration_s > 0.0) {
            return Err(Error::Manifest(format!(
                "entry {:?} has non-positive duration",
                e.id
            )));
        }
    }
    Ok(())
}

/// Reads a manifest. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        entries.push(entry);
    }
    validate(&entries)?;
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    validate(entries)?;
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            path: format!("{id}.wav").into(),
            kind: SignalKind::Noise,
            duration_s: 1.5,
            family: Some("tonal_hum".into()),
        }
    }

    #[test]
    fn jsonl_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("noise.jsonl");
        write_manifest(&p, &[entry("a"), entry("b")]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"kind\":\"noise\""));
        let back = read_manifest(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].path, dir.path().join("a.wav"));
        assert_eq!(back[1].family.as_deref(), Some("tonal_hum"));
    }

    #[test]
    fn rejects_duplicates_and_bad_durations() {
        assert!(matches!(
            validate(&[entry("a"), entry("a")]),
            Err(Error::Manifest(_))
        ));
        let mut bad = entry("z");
        bad.duration_s = 0.0;
        assert!(validate(&[bad]).is_err());
    }
}
