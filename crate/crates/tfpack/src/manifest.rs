//! The manifest: packing output as language-neutral JSONL.
//!
//! Line 1 is a header object carrying the strategy, the fully resolved
//! configuration, a checksum binding the manifest to the exact dataset
//! bytes it was built from, and summary statistics. Every following line
//! is one pack: `{"pack_id", "member_ids", "total_tokens",
//! "loss_weights"?, "flags"?}`. Manifests reference samples by id only;
//! the trainer owns the text.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EmbedSegment};
use crate::error::{Error, Result};
use crate::strategies::{StrategyKind, StrategySpec};
use crate::tfp::Pack;

pub const MANIFEST_FORMAT: &str = "tfpack/manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub pack_count: usize,
    /// Total pack memberships; exceeds the sample count when a strategy
    /// duplicates samples.
    pub total_members: usize,
    pub total_tokens: u64,
    /// Fraction of the token budget occupied, for concatenation
    /// strategies only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_ratio: Option<f64>,
    /// Padding waste, for padding strategies only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padded_tokens: Option<u64>,
    /// Threshold fallbacks taken during path construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_count: Option<usize>,
    pub oversize_packs: usize,
    /// Largest per-sample pack membership, for duplicating strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_repetition: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub strategy: StrategyKind,
    /// Fully resolved configuration; re-running it reproduces this
    /// manifest byte for byte.
    pub config: StrategySpec,
    pub embed_segment: EmbedSegment,
    pub dataset_checksum: String,
    pub sample_count: usize,
    /// Signals that the trainer should mask attention across sequence
    /// boundaries; the manifest content is unaffected.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mask_boundaries: bool,
    pub summary: ManifestSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub packs: Vec<Pack>,
}

impl Manifest {
    /// Serialize to the JSONL wire form.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for pack in &self.packs {
            out.push_str(&serde_json::to_string(pack).expect("pack serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|source| Error::Write {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn read_from(path: &Path) -> Result<Manifest> {
        let file = fs::File::open(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = BufReader::new(file).lines();
        let header_line = match lines.next() {
            Some(Ok(line)) => line,
            Some(Err(source)) => {
                return Err(Error::Read {
                    path: path.to_path_buf(),
                    source,
                })
            }
            None => {
                return Err(Error::BadManifest {
                    path: path.to_path_buf(),
                    reason: "file is empty".to_string(),
                })
            }
        };
        let header: ManifestHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::BadManifest {
                path: path.to_path_buf(),
                reason: format!("bad header: {e}"),
            })?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::BadManifest {
                path: path.to_path_buf(),
                reason: format!("unknown format {:?}", header.format),
            });
        }
        let mut packs = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|source| Error::Read {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let pack: Pack = serde_json::from_str(&line).map_err(|e| Error::BadManifest {
                path: path.to_path_buf(),
                reason: format!("bad pack on line {}: {e}", i + 2),
            })?;
            packs.push(pack);
        }
        Ok(Manifest { header, packs })
    }

    /// Check that this manifest was built from exactly `dataset`.
    pub fn verify_checksum(&self, dataset: &Dataset) -> Result<()> {
        if self.header.dataset_checksum != dataset.checksum() {
            return Err(Error::ChecksumMismatch {
                manifest: self.header.dataset_checksum.clone(),
                dataset: dataset.checksum().to_string(),
            });
        }
        Ok(())
    }

    /// Rebuild `member_indices` from ids after reading a manifest back.
    /// Ids written with a repetition suffix (`"id#2"`) resolve to their
    /// base sample.
    pub fn resolve_indices(&mut self, dataset: &Dataset) -> Result<()> {
        for pack in &mut self.packs {
            pack.member_indices.clear();
            for id in &pack.member_ids {
                let idx = dataset
                    .index_of(id)
                    .or_else(|| {
                        id.rsplit_once('#')
                            .and_then(|(base, occ)| {
                                occ.parse::<usize>().ok().map(|_| base)
                            })
                            .and_then(|base| dataset.index_of(base))
                    })
                    .ok_or_else(|| Error::UnknownSampleId { id: id.clone() })?;
                pack.member_indices.push(idx);
            }
        }
        Ok(())
    }
}

/// Summary statistics derived from a list of packs.
pub fn summarize(
    packs: &[Pack],
    kind: StrategyKind,
    pack_budget: Option<u64>,
    padded_tokens: Option<u64>,
    fallback_count: Option<usize>,
    max_repetition: Option<usize>,
) -> ManifestSummary {
    let pack_count = packs.len();
    let total_members: usize = packs.iter().map(|p| p.len()).sum();
    let total_tokens: u64 = packs.iter().map(|p| p.total_tokens).sum();
    let oversize_packs = packs.iter().filter(|p| p.is_oversize()).count();
    let fill_ratio = if kind.is_concatenation() {
        pack_budget.map(|budget| total_tokens as f64 / (pack_count as u64 * budget) as f64)
    } else {
        None
    };
    ManifestSummary {
        pack_count,
        total_members,
        total_tokens,
        fill_ratio,
        padded_tokens,
        fallback_count,
        oversize_packs,
        max_repetition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EmbeddingMatrix, Sample};

    fn tiny_dataset() -> Dataset {
        let samples: Vec<Sample> = (0..3)
            .map(|i| Sample {
                id: format!("s{i}"),
                instruction: format!("p{i}"),
                input: String::new(),
                output: String::new(),
                token_length: 100,
                group: None,
                label: None,
            })
            .collect();
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        Dataset::from_parts(
            samples,
            EmbeddingMatrix::from_rows(rows).unwrap(),
            EmbedSegment::Instruction,
        )
        .unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = tiny_dataset();
        let spec = StrategySpec::random_packing(7, 256);
        let manifest = crate::strategies::run_strategy(&ds, &spec).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        manifest.write_to(&path).unwrap();

        let mut back = Manifest::read_from(&path).unwrap();
        assert_eq!(back.header, manifest.header);
        back.resolve_indices(&ds).unwrap();
        assert_eq!(back.packs, manifest.packs);
        back.verify_checksum(&ds).unwrap();
    }

    #[test]
    fn checksum_mismatch_detected() {
        let ds = tiny_dataset();
        let spec = StrategySpec::random_packing(7, 256);
        let mut manifest = crate::strategies::run_strategy(&ds, &spec).unwrap();
        manifest.header.dataset_checksum = "sha256:0000".to_string();
        assert!(matches!(
            manifest.verify_checksum(&ds),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn suffixed_ids_resolve_to_base_sample() {
        let ds = tiny_dataset();
        let spec = StrategySpec::random_packing(7, 256);
        let mut manifest = crate::strategies::run_strategy(&ds, &spec).unwrap();
        manifest.packs[0].member_ids[0] = format!("{}#2", manifest.packs[0].member_ids[0]);
        manifest.resolve_indices(&ds).unwrap();

        manifest.packs[0].member_ids[0] = "nobody".to_string();
        assert!(matches!(
            manifest.resolve_indices(&ds),
            Err(Error::UnknownSampleId { .. })
        ));
    }
}
