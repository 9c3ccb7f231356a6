//! Directory store: `manifest.json` plus one raw little-endian `f32` file per segment.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::montage::{SOURCE_NAMES, TARGET_NAMES};
use super::segment::Segment;
use crate::error::{FavcError, Result};

pub const STORE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub fs: f64,
    pub samples: usize,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub subjects: Vec<String>,
    pub segments: Vec<SegmentEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub file: String,
    pub subject: String,
    pub has_targets: bool,
    pub bytes: u64,
}

fn format_err(msg: impl Into<String>) -> FavcError {
    FavcError::Format(msg.into())
}

/// Writes `segments` under `dir` (created if needed). All segments must share `fs` and length.
pub fn save_segments(dir: &Path, segments: &[Segment]) -> Result<Manifest> {
    let first = segments.first().ok_or_else(|| format_err("no segments to save"))?;
    let (fs_hz, samples) = (first.fs, first.len());
    fs::create_dir_all(dir)?;
    let mut subjects: Vec<String> = Vec::new();
    let mut entries = Vec::with_capacity(segments.len());
    for (k, seg) in segments.iter().enumerate() {
        seg.validate()?;
        if seg.fs != fs_hz || seg.len() != samples {
            return Err(format_err(format!(
                "segment {k} has fs={} T={} but the store uses fs={fs_hz} T={samples}",
                seg.fs,
                seg.len()
            )));
        }
        if !subjects.contains(&seg.subject) {
            subjects.push(seg.subject.clone());
        }
        let rows = 4 + seg.targets.as_ref().map_or(0, |t| t.nrows());
        let mut buf = Vec::with_capacity(rows * samples * 4);
        let mut put = |a: &Array2<f32>| {
            for v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&seg.sources);
        if let Some(t) = &seg.targets {
            put(t);
        }
        let file = format!("segment_{k:06}.f32");
        fs::write(dir.join(&file), &buf)?;
        entries.push(SegmentEntry {
            file,
            subject: seg.subject.clone(),
            has_targets: seg.targets.is_some(),
            bytes: buf.len() as u64,
        });
    }
    let manifest = Manifest {
        version: STORE_VERSION,
        fs: fs_hz,
        samples,
        sources: SOURCE_NAMES.iter().map(|s| s.to_string()).collect(),
        targets: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
        subjects,
        segments: entries,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| format_err(format!("malformed manifest: {e}")))?;
    if m.version != STORE_VERSION {
        return Err(format_err(format!(
            "store version {} is not supported (expected {STORE_VERSION})",
            m.version
        )));
    }
    if m.sources != SOURCE_NAMES || m.targets != TARGET_NAMES {
        return Err(format_err("channel order in manifest does not match the fixed row order"));
    }
    Ok(m)
}

pub fn load_segments(dir: &Path) -> Result<Vec<Segment>> {
    let m = read_manifest(dir)?;
    m.segments
        .iter()
        .map(|e| {
            let rows = if e.has_targets { 17 } else { 4 };
            let expected = (rows * m.samples * 4) as u64;
            if e.bytes != expected {
                return Err(format_err(format!(
                    "{}: manifest length {} disagrees with {rows} rows x {} samples",
                    e.file, e.bytes, m.samples
                )));
            }
            let raw = fs::read(dir.join(&e.file))?;
            if raw.len() as u64 != expected {
                return Err(format_err(format!(
                    "{}: payload has {} bytes, expected {expected}",
                    e.file,
                    raw.len()
                )));
            }
            let vals: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let split = 4 * m.samples;
            let sources = Array2::from_shape_vec((4, m.samples), vals[..split].to_vec())
                .map_err(|e| format_err(e.to_string()))?;
            let targets = if e.has_targets {
                Some(
                    Array2::from_shape_vec((13, m.samples), vals[split..].to_vec())
                        .map_err(|e| format_err(e.to_string()))?,
                )
            } else {
                None
            };
            Segment::new(e.subject.clone(), m.fs, sources, targets)
        })
        .collect()
}
