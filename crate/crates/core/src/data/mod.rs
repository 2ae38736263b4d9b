//! Clip records, the on-disk clip store, MRNet ingestion and the synthetic
//! dataset generator.
//!
//! Store layout:
//!
//! ```text
//! <store>/manifest.json
//! <store>/labels.csv                      clip_id,label
//! <store>/<split>/<clip_id>/frame_0000.png 8-bit grayscale
//! ```

mod mrnet;
mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, Gray};
use crate::par::{self, ExecMode};
use crate::seed::{self, Rng};

pub use mrnet::{ingest_mrnet, read_npy, IngestOptions, NpyArray, Plane};
pub use synthetic::{generate_synthetic, render_clip, render_synthetic, ArtifactSpec, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Valid];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" => Ok(Split::Valid),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One exam: an ordered frame stack with a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub label: u8,
    pub split: Split,
    pub frames: Vec<Gray>,
}

impl ClipRecord {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self, frame_size: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("clip {} has no frames", self.clip_id)));
        }
        if self.label > 1 {
            return Err(Error::invalid(format!(
                "clip {} has non-binary label {}",
                self.clip_id, self.label
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.height != frame_size || f.width != frame_size {
                return Err(Error::invalid(format!(
                    "clip {} frame {i} is {}x{}, expected {frame_size}x{frame_size}",
                    self.clip_id, f.height, f.width
                )));
            }
            if f.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "clip {} frame {i} has values outside [0, 1]",
                    self.clip_id
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the 8-bit quantized frames, as stored.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.frames.iter().map(|f| f.data.len()).sum());
        for f in &self.frames {
            bytes.extend(f.data.iter().map(|&v| quantize_u8(v)));
        }
        seed::sha256_hex(&bytes)
    }
}

#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every pixel to the nearest 8-bit level so a store round trip is
/// exact.
pub fn quantize(img: &mut Gray) {
    for v in &mut img.data {
        *v = quantize_u8(*v) as f32 / 255.0;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestClip {
    pub clip_id: String,
    pub split: Split,
    pub label: u8,
    pub n_frames: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub frame_size: usize,
    pub counts: BTreeMap<Split, ClassCounts>,
    /// How intensities were mapped to `[0, 1]`.
    pub normalization: String,
    pub clips: Vec<ManifestClip>,
    /// Digests of source artifacts (input files or generator spec).
    #[serde(default)]
    pub source_digests: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, frame_size: usize, records: &[ClipRecord]) -> Self {
        let mut counts: BTreeMap<Split, ClassCounts> = BTreeMap::new();
        for r in records {
            let c = counts.entry(r.split).or_default();
            c.total += 1;
            if r.label == 1 {
                c.positive += 1;
            } else {
                c.negative += 1;
            }
        }
        Self {
            name: name.into(),
            frame_size,
            counts,
            normalization: "per-clip min-max".into(),
            clips: records
                .iter()
                .map(|r| ManifestClip {
                    clip_id: r.clip_id.clone(),
                    split: r.split,
                    label: r.label,
                    n_frames: r.n_frames(),
                    digest: r.digest(),
                })
                .collect(),
            source_digests: BTreeMap::new(),
            notes: Vec::new(),
            synthetic: None,
        }
    }

    pub fn count(&self, split: Split) -> ClassCounts {
        self.counts.get(&split).copied().unwrap_or_default()
    }

    /// Counts must agree with the clip list.
    pub fn validate(&self) -> Result<()> {
        let again = Self::new(
            "",
            self.frame_size,
            &self
                .clips
                .iter()
                .map(|c| ClipRecord {
                    clip_id: c.clip_id.clone(),
                    label: c.label,
                    split: c.split,
                    frames: Vec::new(),
                })
                .collect::<Vec<_>>(),
        );
        if again.counts != self.counts {
            return Err(Error::Invariant(format!(
                "manifest counts {:?} disagree with clip list {:?}",
                self.counts, again.counts
            )));
        }
        let mut ids: Vec<&str> = self.clips.iter().map(|c| c.clip_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invariant("duplicate clip ids in manifest".into()));
        }
        Ok(())
    }
}

const MANIFEST: &str = "manifest.json";
const LABELS: &str = "labels.csv";

fn frame_path(root: &Path, split: Split, clip_id: &str, i: usize) -> std::path::PathBuf {
    root.join(split.as_str())
        .join(clip_id)
        .join(format!("frame_{i:04}.png"))
}

fn check_clip_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && id != "."
        && id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("clip id `{id}` is not a safe directory name")))
    }
}

/// Writes `records` under `root` and returns the manifest. Existing frame
/// files of the same clips are overwritten.
pub fn write_store(
    root: &Path,
    manifest: &DatasetManifest,
    records: &[ClipRecord],
    mode: ExecMode,
) -> Result<()> {
    manifest.validate()?;
    for r in records {
        check_clip_id(&r.clip_id)?;
        r.validate(manifest.frame_size)?;
    }
    let results = par::map_slice(mode, records, |r| -> Result<()> {
        let dir = root.join(r.split.as_str()).join(&r.clip_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, f) in r.frames.iter().enumerate() {
            imaging::save_png8(f, &frame_path(root, r.split, &r.clip_id, i))?;
        }
        Ok(())
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["clip_id", "label"]).expect("in-memory write");
    for r in records {
        w.write_record([r.clip_id.as_str(), &r.label.to_string()])
            .expect("in-memory write");
    }
    let labels = w.into_inner().expect("in-memory flush");
    let labels_path = root.join(LABELS);
    fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    let manifest_path = root.join(MANIFEST);
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::json(&manifest_path, e))?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
    m.validate()?;
    Ok(m)
}

/// Loads the clips of one split (or all when `split` is `None`), verifying
/// frame counts and digests against the manifest.
pub fn load_store(root: &Path, split: Option<Split>) -> Result<(DatasetManifest, Vec<ClipRecord>)> {
    let manifest = read_manifest(root)?;
    let wanted: Vec<&ManifestClip> = manifest
        .clips
        .iter()
        .filter(|c| split.map_or(true, |s| c.split == s))
        .collect();
    let loaded = par::map_slice(par::global_mode(), &wanted, |c| -> Result<ClipRecord> {
        let frames = (0..c.n_frames)
            .map(|i| imaging::load_gray(&frame_path(root, c.split, &c.clip_id, i)))
            .collect::<Result<Vec<_>>>()?;
        let rec = ClipRecord {
            clip_id: c.clip_id.clone(),
            label: c.label,
            split: c.split,
            frames,
        };
        rec.validate(manifest.frame_size)?;
        if rec.digest() != c.digest {
            return Err(Error::format(
                root.join(c.split.as_str()).join(&c.clip_id),
                "frame digest does not match manifest",
            ));
        }
        Ok(rec)
    });
    let records = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}

/// One epoch of the pretext stream: `(clip, frame)` index pairs with one
/// uniformly drawn frame per clip, in shuffled clip order.
pub fn pretext_frame_stream(n_frames: &[usize], rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    if n_frames.is_empty() {
        return Err(Error::invalid("pretext stream needs at least one clip"));
    }
    if let Some(i) = n_frames.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("clip {i} has no frames")));
    }
    let mut order: Vec<usize> = (0..n_frames.len()).collect();
    order.shuffle(rng);
    Ok(order
        .into_iter()
        .map(|c| (c, rng.random_range(0..n_frames[c])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_has_one_frame_per_clip_and_is_uniform() {
        let n = [5usize, 3, 7, 1];
        let mut rng = seed::rng(4);
        let epochs = 4000;
        let mut hist = vec![0usize; 5];
        for _ in 0..epochs {
            let s = pretext_frame_stream(&n, &mut rng).unwrap();
            let mut clips: Vec<usize> = s.iter().map(|p| p.0).collect();
            clips.sort_unstable();
            assert_eq!(clips, vec![0, 1, 2, 3]);
            for &(c, f) in &s {
                assert!(f < n[c]);
                if c == 0 {
                    hist[f] += 1;
                }
            }
        }
        let e = epochs as f64 / 5.0;
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - e).powi(2) / e).sum();
        // 99.9% quantile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 18.47, "chi2 {chi2}");
        let a = pretext_frame_stream(&n, &mut seed::rng(9)).unwrap();
        let b = pretext_frame_stream(&n, &mut seed::rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(pretext_frame_stream(&[], &mut rng).is_err());
    }

    #[test]
    fn store_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = Gray::new(4, 4);
        f.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 / 15.0);
        quantize(&mut f);
        let recs = vec![
            ClipRecord {
                clip_id: "a".into(),
                label: 1,
                split: Split::Train,
                frames: vec![f.clone(), f.clone()],
            },
            ClipRecord {
                clip_id: "b".into(),
                label: 0,
                split: Split::Valid,
                frames: vec![f.clone()],
            },
        ];
        let m = DatasetManifest::new("t", 4, &recs);
        write_store(dir.path(), &m, &recs, ExecMode::Sequential).unwrap();
        let (m2, back) = load_store(dir.path(), None).unwrap();
        assert_eq!(m2, m);
        assert_eq!(back, recs);
        let (_, train) = load_store(dir.path(), Some(Split::Train)).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(m.count(Split::Train).positive, 1);
        let labels = fs::read_to_string(dir.path().join(LABELS)).unwrap();
        assert_eq!(labels, "clip_id,label\na,1\nb,0\n");
        imaging::save_png8(&Gray::new(4, 4), &frame_path(dir.path(), Split::Valid, "b", 0))
            .unwrap();
        assert!(load_store(dir.path(), None).is_err());
    }

    #[test]
    fn unsafe_ids_and_bad_counts_are_rejected() {
        let recs = vec![ClipRecord {
            clip_id: "../x".into(),
            label: 0,
            split: Split::Train,
            frames: vec![Gray::new(2, 2)],
        }];
        let m = DatasetManifest::new("t", 2, &recs);
        let dir = tempfile::tempdir().unwrap();
        assert!(write_store(dir.path(), &m, &recs, ExecMode::Sequential).is_err());
        let mut bad = m.clone();
        bad.counts.get_mut(&Split::Train).unwrap().positive = 3;
        assert!(bad.validate().is_err());
    }
}
