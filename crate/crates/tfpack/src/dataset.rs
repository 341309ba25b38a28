//! Sample ingestion and the immutable, index-aligned dataset.
//!
//! Samples arrive as JSONL (one object per line). Embeddings are either
//! inline under the `"embedding"` key or in a binary sidecar file; the two
//! sources are mutually exclusive per dataset. After construction a
//! [`Dataset`] never changes, so it can be shared freely across threads.
//!
//! Sidecar layout (little-endian): magic `TFPE`, `u32` version (= 1),
//! `u64` row count, `u32` dimension, then row-major IEEE-754 `f32` values.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SIDECAR_MAGIC: &[u8; 4] = b"TFPE";
pub const SIDECAR_VERSION: u32 = 1;

/// Which text segment the embeddings were computed from.
///
/// Instruction-segment embeddings are the recommended default: grouping by
/// instruction similarity avoids clustering near-identical outputs, which
/// a trainer would otherwise be encouraged to parrot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSegment {
    Instruction,
    Output,
    Full,
}

impl fmt::Display for EmbedSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbedSegment::Instruction => write!(f, "instruction"),
            EmbedSegment::Output => write!(f, "output"),
            EmbedSegment::Full => write!(f, "full"),
        }
    }
}

impl std::str::FromStr for EmbedSegment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "instruction" => Ok(EmbedSegment::Instruction),
            "output" => Ok(EmbedSegment::Output),
            "full" => Ok(EmbedSegment::Full),
            other => Err(format!("unknown segment {other:?} (expected instruction, output or full)")),
        }
    }
}

/// One fine-tuning example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    #[serde(default)]
    pub output: String,
    /// Precomputed token count of the full formatted sample. Always >= 1;
    /// which tokenizer produced it is the caller's concern.
    pub token_length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

impl Sample {
    /// Text of the given segment. `Full` joins instruction, input and
    /// output with single spaces.
    pub fn segment_text(&self, segment: EmbedSegment) -> String {
        match segment {
            EmbedSegment::Instruction => self.instruction.clone(),
            EmbedSegment::Output => self.output.clone(),
            EmbedSegment::Full => {
                format!("{} {} {}", self.instruction, self.input, self.output)
            }
        }
    }
}

/// Dense row-major matrix of sample embeddings.
///
/// Values are held as `f64` so distance computations run in 64-bit
/// arithmetic; the sidecar file stores `f32` and converts on the way in/out.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (line, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: line + 1,
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEmbedding { line: line + 1 });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % dim.max(1), 0);
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Copy of the matrix restricted to `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            dim: self.dim,
            data,
        }
    }
}

/// Immutable, index-aligned collection of samples and their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    embeddings: EmbeddingMatrix,
    embed_segment: EmbedSegment,
    checksum: String,
    id_to_index: HashMap<String, usize>,
}

impl Dataset {
    /// Build a dataset from already-validated parts. The checksum is
    /// derived from a canonical serialization of the contents, so two
    /// equal in-memory datasets hash identically.
    pub fn from_parts(
        samples: Vec<Sample>,
        embeddings: EmbeddingMatrix,
        embed_segment: EmbedSegment,
    ) -> Result<Self> {
        if embeddings.rows() != samples.len() {
            return Err(Error::RowCountMismatch {
                rows: embeddings.rows(),
                samples: samples.len(),
            });
        }
        let mut id_to_index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.token_length == 0 {
                return Err(Error::NonPositiveTokenLength {
                    line: i + 1,
                    value: 0,
                });
            }
            if id_to_index.insert(s.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    id: s.id.clone(),
                    line: i + 1,
                });
            }
        }
        let checksum = content_checksum(&samples, &embeddings);
        Ok(Self {
            samples,
            embeddings,
            embed_segment,
            checksum,
            id_to_index,
        })
    }

    /// Load samples (and embeddings, inline or sidecar) from disk.
    ///
    /// The checksum binds manifests to the exact file bytes that were read.
    pub fn load(
        samples_path: &Path,
        embeddings_path: Option<&Path>,
        embed_segment: EmbedSegment,
    ) -> Result<Self> {
        let sample_bytes = fs::read(samples_path).map_err(|source| Error::Read {
            path: samples_path.to_path_buf(),
            source,
        })?;
        let (samples, inline) = parse_samples(&sample_bytes)?;

        let embeddings = match embeddings_path {
            Some(path) => {
                if let Some(id) = samples
                    .iter()
                    .zip(&inline)
                    .find(|(_, e)| e.is_some())
                    .map(|(s, _)| s.id.clone())
                {
                    return Err(Error::ConflictingEmbeddings { id });
                }
                read_embeddings(path)?
            }
            None => {
                let mut rows = Vec::with_capacity(samples.len());
                for (i, e) in inline.into_iter().enumerate() {
                    match e {
                        Some(row) => rows.push(row),
                        None => {
                            return Err(Error::MissingEmbedding {
                                id: samples[i].id.clone(),
                                line: i + 1,
                            })
                        }
                    }
                }
                embeddings_from_inline(rows)?
            }
        };

        if embeddings.rows() != samples.len() {
            return Err(Error::RowCountMismatch {
                rows: embeddings.rows(),
                samples: samples.len(),
            });
        }

        let checksum = file_checksum(&sample_bytes, embeddings_path)?;
        let mut id_to_index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            // duplicate ids were rejected during parsing
            id_to_index.insert(s.id.clone(), i);
        }
        Ok(Self {
            samples,
            embeddings,
            embed_segment,
            checksum,
            id_to_index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn embed_segment(&self) -> EmbedSegment {
        self.embed_segment
    }

    /// Hex SHA-256 binding this dataset's content, prefixed `sha256:`.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.id_to_index.get(id).copied()
    }

    /// Serialize samples back to JSONL, optionally with inline embeddings.
    /// Field order matches what the loader reads, so write-then-read is an
    /// identity on bytes.
    pub fn write_samples_jsonl(&self, w: &mut impl Write, inline_embeddings: bool) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct SampleOut<'a> {
            #[serde(flatten)]
            sample: &'a Sample,
            #[serde(skip_serializing_if = "Option::is_none")]
            embedding: Option<Vec<f32>>,
        }

        for (i, sample) in self.samples.iter().enumerate() {
            let out = SampleOut {
                sample,
                embedding: inline_embeddings
                    .then(|| self.embeddings.row(i).iter().map(|&v| v as f32).collect()),
            };
            serde_json::to_writer(&mut *w, &out)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawSample {
    id: String,
    #[serde(default)]
    instruction: String,
    #[serde(default)]
    input: String,
    #[serde(default)]
    output: String,
    token_length: i64,
    #[serde(default)]
    group: Option<String>,
    #[serde(default)]
    label: Option<i64>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
}

fn parse_samples(bytes: &[u8]) -> Result<(Vec<Sample>, Vec<Option<Vec<f64>>>)> {
    let reader = BufReader::new(bytes);
    let mut samples = Vec::new();
    let mut inline = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Read {
            path: "<samples>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample =
            serde_json::from_str(&line).map_err(|source| Error::Json { line: line_no, source })?;
        if raw.token_length < 1 {
            return Err(Error::NonPositiveTokenLength {
                line: line_no,
                value: raw.token_length,
            });
        }
        let label = match raw.label {
            None => None,
            Some(v @ (0 | 1)) => Some(v as u8),
            Some(v) => return Err(Error::InvalidLabel { line: line_no, value: v }),
        };
        if let Some(prev) = seen.insert(raw.id.clone(), line_no) {
            let _ = prev;
            return Err(Error::DuplicateId {
                id: raw.id,
                line: line_no,
            });
        }
        if let Some(row) = &raw.embedding {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEmbedding { line: line_no });
            }
        }
        samples.push(Sample {
            id: raw.id,
            instruction: raw.instruction,
            input: raw.input,
            output: raw.output,
            token_length: raw.token_length as u64,
            group: raw.group,
            label,
        });
        inline.push(raw.embedding);
    }
    Ok((samples, inline))
}

fn embeddings_from_inline(rows: Vec<Vec<f64>>) -> Result<EmbeddingMatrix> {
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(rows.len() * dim);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                line: i + 1,
                expected: dim,
                got: row.len(),
            });
        }
        data.extend_from_slice(row);
    }
    Ok(EmbeddingMatrix::from_raw(dim, data))
}

/// Read a binary embedding sidecar.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let file = fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::BadSidecar {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let read_err = |source: std::io::Error| Error::Read {
        path: path.to_path_buf(),
        source,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(read_err)?;
    if &magic != SIDECAR_MAGIC {
        return Err(bad("bad magic bytes (expected \"TFPE\")"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(read_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SIDECAR_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(read_err)?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf).map_err(read_err)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim == 0 {
        return Err(bad("dimension must be >= 1"));
    }

    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(read_err)?;
    let expected = rows * dim * 4;
    if body.len() != expected {
        return Err(bad(&format!(
            "body is {} bytes, expected {expected} ({rows} rows x {dim} dims x 4)",
            body.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFiniteEmbedding { line: i / dim + 1 });
        }
        data.push(v as f64);
    }
    Ok(EmbeddingMatrix::from_raw(dim, data))
}

/// Write a binary embedding sidecar (values narrowed to `f32`).
pub fn write_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let write_err = |source: std::io::Error| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    w.write_all(SIDECAR_MAGIC).map_err(write_err)?;
    w.write_all(&SIDECAR_VERSION.to_le_bytes()).map_err(write_err)?;
    w.write_all(&(matrix.rows() as u64).to_le_bytes()).map_err(write_err)?;
    w.write_all(&(matrix.dim() as u32).to_le_bytes()).map_err(write_err)?;
    for row in matrix.iter_rows() {
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes()).map_err(write_err)?;
        }
    }
    w.flush().map_err(write_err)
}

fn file_checksum(sample_bytes: &[u8], embeddings_path: Option<&Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(sample_bytes);
    if let Some(path) = embeddings_path {
        let bytes = fs::read(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        hasher.update(&bytes);
    }
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

fn content_checksum(samples: &[Sample], embeddings: &EmbeddingMatrix) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update(serde_json::to_vec(s).expect("sample serializes"));
        hasher.update(b"\n");
    }
    hasher.update((embeddings.dim() as u32).to_le_bytes());
    for row in embeddings.iter_rows() {
        for &v in row {
            hasher.update((v as f32).to_le_bytes());
        }
    }
    format!("sha256:{:x}", hasher.finalize())
}

// 64-bit FNV-1a; pinned here so toy embeddings never depend on the
// platform or standard-library hasher.
fn fnv1a64(seed: u64, token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic feature-hashing embedder, intended as test plumbing.
///
/// Whitespace-delimited tokens of the selected segment are lowercased and
/// hashed (FNV-1a over seed bytes then token bytes) into `dim` buckets;
/// each bucket counts its tokens and the row is scaled to unit Euclidean
/// norm. A sample whose segment has no tokens is embedded as the single
/// pseudo-token `""` so every produced row still has norm 1; if the
/// segment is empty for *every* sample the call is rejected instead.
pub fn toy_embed(
    samples: &[Sample],
    segment: EmbedSegment,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::InvalidDim(dim));
    }
    let mut any_nonempty = false;
    let mut data = vec![0.0f64; samples.len() * dim];
    for (i, sample) in samples.iter().enumerate() {
        let text = sample.segment_text(segment).to_lowercase();
        let row = &mut data[i * dim..(i + 1) * dim];
        let mut tokens = text.split_whitespace().peekable();
        if tokens.peek().is_some() {
            any_nonempty = true;
            for token in tokens {
                row[(fnv1a64(seed, token) % dim as u64) as usize] += 1.0;
            }
        } else {
            row[(fnv1a64(seed, "") % dim as u64) as usize] += 1.0;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    if !any_nonempty && !samples.is_empty() {
        return Err(Error::NothingToEmbed);
    }
    Ok(EmbeddingMatrix::from_raw(dim, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn sample(id: &str, instruction: &str, tokens: u64) -> Sample {
        Sample {
            id: id.to_string(),
            instruction: instruction.to_string(),
            input: String::new(),
            output: String::new(),
            token_length: tokens,
            group: None,
            label: None,
        }
    }

    #[test]
    fn loads_inline_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","instruction":"add numbers","token_length":10,"embedding":[1.0,0.0,0.0,0.0]}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","instruction":"sort list","token_length":20,"embedding":[0.0,1.0,0.0,0.0]}}"#).unwrap();
        writeln!(f, r#"{{"id":"c","instruction":"reverse str","token_length":30,"embedding":[0.0,0.0,1.0,0.0]}}"#).unwrap();
        let ds = Dataset::load(&path, None, EmbedSegment::Instruction).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.embeddings().dim(), 4);
        assert_eq!(ds.sample(1).id, "b");
        assert_eq!(ds.index_of("c"), Some(2));
    }

    #[test]
    fn rejects_zero_token_length_naming_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","instruction":"x","token_length":5,"embedding":[1.0,0.0]}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","instruction":"y","token_length":0,"embedding":[0.0,1.0]}}"#).unwrap();
        let err = Dataset::load(&path, None, EmbedSegment::Instruction).unwrap_err();
        match err {
            Error::NonPositiveTokenLength { line, value } => {
                assert_eq!(line, 2);
                assert_eq!(value, 0);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_duplicate_id_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","instruction":"x","token_length":5,"embedding":[1.0]}}"#).unwrap();
        writeln!(f, r#"{{"id":"a","instruction":"y","token_length":5,"embedding":[2.0]}}"#).unwrap();
        match Dataset::load(&path, None, EmbedSegment::Instruction).unwrap_err() {
            Error::DuplicateId { id, line } => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_dimension_mismatch_naming_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","instruction":"x","token_length":5,"embedding":[1.0,2.0]}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","instruction":"y","token_length":5,"embedding":[1.0]}}"#).unwrap();
        match Dataset::load(&path, None, EmbedSegment::Instruction).unwrap_err() {
            Error::DimensionMismatch { line, expected, got } => {
                assert_eq!((line, expected, got), (2, 2, 1));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_missing_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","instruction":"x","token_length":5,"embedding":[1.0]}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","instruction":"y","token_length":5}}"#).unwrap();
        match Dataset::load(&path, None, EmbedSegment::Instruction).unwrap_err() {
            Error::MissingEmbedding { id, line } => {
                assert_eq!(id, "b");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    // Write-then-read identity: loading a 1000-sample file plus sidecar and
    // re-serializing both reproduces the original bytes.
    #[test]
    fn sidecar_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let samples_path = dir.path().join("samples.jsonl");
        let sidecar_path = dir.path().join("emb.tfpe");

        let n = 1000;
        let dim = 16;
        let samples: Vec<Sample> = (0..n)
            .map(|i| sample(&format!("s{i:04}"), &format!("instruction {i}"), (i % 97 + 1) as u64))
            .collect();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            // f32-representable values so the f64 detour is lossless
            let row: Vec<f64> = (0..dim)
                .map(|q| f32::from_bits(0x3f80_0000 + ((i * dim + q) as u32 % 1000)) as f64)
                .collect();
            rows.push(row);
        }
        let matrix = EmbeddingMatrix::from_rows(rows).unwrap();

        let mut f = fs::File::create(&samples_path).unwrap();
        for s in &samples {
            serde_json::to_writer(&mut f, s).unwrap();
            f.write_all(b"\n").unwrap();
        }
        drop(f);
        write_embeddings(&sidecar_path, &matrix).unwrap();

        let original_samples = fs::read(&samples_path).unwrap();
        let original_sidecar = fs::read(&sidecar_path).unwrap();

        let ds = Dataset::load(&samples_path, Some(&sidecar_path), EmbedSegment::Instruction).unwrap();
        assert_eq!(ds.len(), n);

        let rewritten_samples_path = dir.path().join("samples2.jsonl");
        let mut out = fs::File::create(&rewritten_samples_path).unwrap();
        ds.write_samples_jsonl(&mut out, false).unwrap();
        drop(out);
        let rewritten_sidecar_path = dir.path().join("emb2.tfpe");
        write_embeddings(&rewritten_sidecar_path, ds.embeddings()).unwrap();

        assert_eq!(fs::read(&rewritten_samples_path).unwrap(), original_samples);
        assert_eq!(fs::read(&rewritten_sidecar_path).unwrap(), original_sidecar);

        // loading is a pure function of file bytes
        let again = Dataset::load(&samples_path, Some(&sidecar_path), EmbedSegment::Instruction).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn toy_embed_is_deterministic() {
        let samples = vec![sample("a", "pack the bins", 5), sample("b", "pack the bins", 5)];
        let m = toy_embed(&samples, EmbedSegment::Instruction, 32, 7).unwrap();
        assert_eq!(m.row(0), m.row(1));
        let again = toy_embed(&samples, EmbedSegment::Instruction, 32, 7).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn toy_embed_rows_have_unit_norm() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| sample(&format!("s{i}"), &format!("token{} and token{}", i, i * 3), 5))
            .collect();
        let m = toy_embed(&samples, EmbedSegment::Instruction, 16, 3).unwrap();
        for row in m.iter_rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm = {norm}");
        }
    }

    // Independent re-implementation of the hashing scheme, used as the
    // oracle for the distance between two disjoint-vocabulary texts.
    fn oracle_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
        let mut counts = vec![0.0f64; dim];
        for token in text.to_lowercase().split_whitespace() {
            let mut h: u64 = 0xcbf29ce484222325;
            let mut bytes: Vec<u8> = seed.to_le_bytes().to_vec();
            bytes.extend_from_slice(token.as_bytes());
            for b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            counts[(h % dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        counts.iter().map(|v| v / norm).collect()
    }

    #[test]
    fn toy_embed_matches_rehash_oracle() {
        let a = "alpha beta gamma delta epsilon";
        let b = "zeta eta theta iota kappa lambda";
        let samples = vec![sample("a", a, 5), sample("b", b, 6)];
        let m = toy_embed(&samples, EmbedSegment::Instruction, 64, 7).unwrap();

        let ea = oracle_embed(a, 64, 7);
        let eb = oracle_embed(b, 64, 7);
        let expected: f64 = ea
            .iter()
            .zip(&eb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let got = crate::geometry::distance(m.row(0), m.row(1)).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn toy_embed_rejects_all_empty_segments() {
        let samples = vec![sample("a", "", 5), sample("b", "", 5)];
        assert!(matches!(
            toy_embed(&samples, EmbedSegment::Instruction, 8, 1),
            Err(Error::NothingToEmbed)
        ));
        // a single empty segment among nonempty ones is embedded, not rejected
        let mixed = vec![sample("a", "", 5), sample("b", "text here", 5)];
        let m = toy_embed(&mixed, EmbedSegment::Instruction, 8, 1).unwrap();
        let norm = m.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}
