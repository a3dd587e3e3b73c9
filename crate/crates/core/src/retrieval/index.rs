use std::fs;
use std::path::Path;

use crate::audio::{load_wav, read_manifest, Waveform};
use crate::error::{Error, Result};
use crate::models::{
    encoder_forward, Embedding, EncoderConfig, FeatureExtractor, ParamSet, UNIT_NORM_TOLERANCE,
};
use crate::rng::sha256_hex;

const MAGIC: &[u8; 8] = b"NSTRINDX";
const VERSION: u32 = 1;

/// Signals longer than this are embedded chunk by chunk.
pub const CHUNK_LEN: usize = 80_000;

/// Hex SHA-256 of the checkpoint bytes of `params`. Equal to the hash of the
/// checkpoint file written by `save_checkpoint`.
pub fn encoder_fingerprint(params: &ParamSet) -> String {
    sha256_hex(&params.to_bytes())
}

/// Row-per-id matrix of unit-norm embeddings, stored at single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    matrix: Vec<f64>,
    encoder_fingerprint: String,
}

impl EmbeddingIndex {
    pub fn new(
        ids: Vec<String>,
        rows: Vec<Embedding>,
        encoder_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::LengthMismatch(ids.len(), rows.len()));
        }
        let dim = rows.first().map_or(0, |r| r.dim());
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::CorruptIndex(format!("duplicate id {id:?}")));
            }
        }
        let mut matrix = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.dim() != dim {
                return Err(Error::LengthMismatch(r.dim(), dim));
            }
            matrix.extend(r.as_slice().iter().map(|v| *v as f32 as f64));
        }
        let index = Self {
            ids,
            dim,
            matrix,
            encoder_fingerprint: encoder_fingerprint.into(),
        };
        index.check_rows()?;
        Ok(index)
    }

    fn check_rows(&self) -> Result<()> {
        for i in 0..self.len() {
            let n = self.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::CorruptIndex(format!(
                    "row {} has norm {n}",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    pub(crate) fn row_slice(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, i: usize) -> Result<Embedding> {
        Embedding::new(self.row_slice(i).to_vec())
    }

    /// Fails with [`Error::StaleIndex`] if the index was built by another encoder.
    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.encoder_fingerprint != expected {
            return Err(Error::StaleIndex {
                expected: expected.to_string(),
                found: self.encoder_fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.matrix.len() * 4);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.dim as u32, self.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in std::iter::once(&self.encoder_fingerprint).chain(&self.ids) {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for v in &self.matrix {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::CorruptIndex("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptIndex(format!("unknown version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let fingerprint = r.string()?;
        let ids = (0..count).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let n = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptIndex("matrix size overflow".into()))?;
        let matrix: Vec<f64> = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if r.pos != bytes.len() {
            return Err(Error::CorruptIndex("trailing bytes".into()));
        }
        let index = Self {
            ids,
            dim,
            matrix,
            encoder_fingerprint: fingerprint,
        };
        index.check_rows()?;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptIndex("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptIndex("non-UTF-8 string".into()))
    }
}

/// Whole-signal embedding. Signals up to [`CHUNK_LEN`] samples are embedded
/// directly; longer ones as the re-normalized mean of their non-overlapping
/// full chunks; a trailing partial chunk is dropped.
pub fn embed_long(
    params: &ParamSet,
    cfg: &EncoderConfig,
    features: &FeatureExtractor,
    w: &Waveform,
) -> Result<Embedding> {
    let x = w.samples();
    if x.len() <= CHUNK_LEN {
        return encoder_forward(params, cfg, &features.features(x)?);
    }
    let mut acc = vec![0.0; cfg.embed_dim];
    for chunk in x.chunks_exact(CHUNK_LEN) {
        let e = encoder_forward(params, cfg, &features.features(chunk)?)?;
        for (a, v) in acc.iter_mut().zip(e.as_slice()) {
            *a += v;
        }
    }
    Embedding::normalize(acc)
}

/// Embeds every `(id, waveform)` into an index tagged with the encoder fingerprint.
pub fn build_index(
    entries: &[(String, Waveform)],
    params: &ParamSet,
    cfg: &EncoderConfig,
) -> Result<EmbeddingIndex> {
    let features = FeatureExtractor::new(cfg)?;
    let rows = entries
        .iter()
        .map(|(_, w)| embed_long(params, cfg, &features, w))
        .collect::<Result<Vec<_>>>()?;
    let ids = entries.iter().map(|(id, _)| id.clone()).collect();
    EmbeddingIndex::new(ids, rows, encoder_fingerprint(params))
}

pub fn build_index_from_manifest(
    manifest: impl AsRef<Path>,
    params: &ParamSet,
    cfg: &EncoderConfig,
) -> Result<EmbeddingIndex> {
    let entries = read_manifest(manifest)?
        .into_iter()
        .map(|e| Ok((e.id, load_wav(&e.path)?)))
        .collect::<Result<Vec<_>>>()?;
    build_index(&entries, params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{save_wav, write_manifest, ManifestEntry, SignalKind};
    use crate::models::{init_encoder_params, retrieval_embed};
    use crate::rng::seeded;
    use rand::Rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            hidden: 4,
            embed_dim: 8,
            ..EncoderConfig::small()
        }
    }

    fn wave(seed: u64, n: usize) -> Waveform {
        let mut r = seeded(seed);
        Waveform::from_samples((0..n).map(|_| r.gen_range(-0.2..0.2)).collect()).unwrap()
    }

    #[test]
    fn single_entry_and_short_signal() {
        let c = cfg();
        let p = init_encoder_params(&c, &mut seeded(0)).unwrap();
        let w = wave(1, 5000);
        let idx = build_index(&[("a".into(), w.clone())], &p, &c).unwrap();
        assert_eq!(idx.len(), 1);
        let direct = retrieval_embed(&p, &c, &w).unwrap();
        for (a, b) in idx.row(0).unwrap().as_slice().iter().zip(direct.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(idx.encoder_fingerprint(), encoder_fingerprint(&p));
    }

    #[test]
    fn long_signal_is_chunk_mean() {
        let c = cfg();
        let p = init_encoder_params(&c, &mut seeded(0)).unwrap();
        let w = wave(2, 2 * CHUNK_LEN + 500);
        let fe = FeatureExtractor::new(&c).unwrap();
        let e = embed_long(&p, &c, &fe, &w).unwrap();
        let a = retrieval_embed(&p, &c, &w.slice(0, CHUNK_LEN)).unwrap();
        let b = retrieval_embed(&p, &c, &w.slice(CHUNK_LEN, 2 * CHUNK_LEN)).unwrap();
        let mean = Embedding::normalize(
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x + y)
                .collect(),
        )
        .unwrap();
        assert_eq!(e, mean);
    }

    #[test]
    fn file_round_trip_and_rebuild_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..3 {
            let rel = format!("n{i}.wav");
            let w = wave(10 + i, 4000 + 1000 * i as usize);
            save_wav(&w, dir.path().join(&rel)).unwrap();
            entries.push(ManifestEntry {
                id: format!("n{i}"),
                path: rel.into(),
                kind: SignalKind::Noise,
                duration_s: w.duration_s(),
                family: None,
            });
        }
        let m = dir.path().join("noise.jsonl");
        write_manifest(&m, &entries).unwrap();
        let c = cfg();
        let p = init_encoder_params(&c, &mut seeded(4)).unwrap();
        let a = build_index_from_manifest(&m, &p, &c).unwrap();
        let b = build_index_from_manifest(&m, &p, &c).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let path = dir.path().join("noise.idx");
        a.save(&path).unwrap();
        let loaded = EmbeddingIndex::load(&path).unwrap();
        assert_eq!(loaded, a);
        let bytes = a.to_bytes();
        assert!(matches!(
            EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptIndex(_))
        ));
        assert!(matches!(
            a.check_fingerprint("deadbeef"),
            Err(Error::StaleIndex { .. })
        ));
        a.check_fingerprint(&encoder_fingerprint(&p)).unwrap();
    }
}
