use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{quantize, write_store, ClipRecord, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::imaging::Gray;
use crate::par::{self, ExecMode};
use crate::patchgen::{GRID, N_TILES};
use crate::seed;

/// Dark band planted in one tile of the 3x3 grid on positive clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArtifactSpec {
    /// Row-major tile index in `0..9`.
    pub tile: usize,
    /// Band height as a fraction of the tile side.
    pub band_frac: f64,
    /// Multiplicative darkening inside the band, in `(0, 1]`.
    pub contrast: f64,
    /// Fraction of the clip's frames (one contiguous span) carrying the band.
    pub span_frac: f64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        Self {
            tile: 5,
            band_frac: 0.4,
            contrast: 0.6,
            span_frac: 0.5,
        }
    }
}

impl ArtifactSpec {
    /// `(row, col, side)` of the artifact tile.
    pub fn tile_rect(&self, frame_size: usize) -> (usize, usize, usize) {
        let t = frame_size / GRID;
        ((self.tile / GRID) * t, (self.tile % GRID) * t, t)
    }

    /// `(row0, row1, col0, col1)` of the band, half-open.
    pub fn band_rect(&self, frame_size: usize) -> (usize, usize, usize, usize) {
        let (r, c, t) = self.tile_rect(frame_size);
        let h = ((self.band_frac * t as f64).round() as usize).clamp(1, t);
        let top = r + (t - h) / 2;
        let margin = t / 8;
        (top, top + h, c + margin, c + t - margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub name: String,
    pub frame_size: usize,
    pub train_per_class: usize,
    pub valid_per_class: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub artifact: ArtifactSpec,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            frame_size: 64,
            train_per_class: 80,
            valid_per_class: 20,
            frames_min: 9,
            frames_max: 12,
            artifact: ArtifactSpec::default(),
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let a = &self.artifact;
        let problems = [
            (self.frame_size < 2 * GRID * GRID, "frame_size must be at least 18"),
            (a.tile >= N_TILES, "artifact tile must be in 0..9 (artifact outside frame)"),
            (!(a.band_frac > 0.0 && a.band_frac <= 1.0), "artifact band_frac must be in (0, 1]"),
            (!(a.contrast > 0.0 && a.contrast <= 1.0), "artifact contrast must be in (0, 1]"),
            (!(a.span_frac > 0.0 && a.span_frac <= 1.0), "artifact span_frac must be in (0, 1]"),
            (self.frames_min == 0, "frames_min must be at least 1"),
            (self.frames_min > self.frames_max, "frames_min exceeds frames_max"),
            (!(self.noise >= 0.0 && self.noise.is_finite()), "noise must be finite and >= 0"),
            (self.train_per_class == 0, "train_per_class must be at least 1"),
        ];
        match problems.iter().find(|p| p.0) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }

    /// `(clip_id, split, label)` for every clip, labels alternating.
    pub fn clip_plan(&self) -> Vec<(String, Split, u8)> {
        let mut plan = Vec::new();
        for (split, per_class, tag) in [
            (Split::Train, self.train_per_class, "t"),
            (Split::Valid, self.valid_per_class, "v"),
        ] {
            for i in 0..2 * per_class {
                plan.push((format!("syn{tag}{i:04}"), split, (i % 2) as u8));
            }
        }
        plan
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    amp: f64,
}

struct Blob {
    cy: f64,
    cx: f64,
    vy: f64,
    vx: f64,
    sigma: f64,
    amp: f64,
}

fn soft_ellipse(e: &Ellipse, y: f64, x: f64, scale: f64, edge: f64) -> f64 {
    let d = (((y - e.cy) / (e.ry * scale)).powi(2) + ((x - e.cx) / (e.rx * scale)).powi(2)).sqrt();
    e.amp / (1.0 + ((d - 1.0) / edge).exp())
}

/// Renders one clip. The base anatomy and noise depend only on
/// `clip_seed`, so a positive clip equals its negative twin outside the
/// artifact band.
pub fn render_clip(spec: &SyntheticSpec, clip_seed: u64, positive: bool) -> Result<Vec<Gray>> {
    spec.validate()?;
    let l = spec.frame_size as f64;
    let mut rng = seed::rng_for(clip_seed, "synthetic.anatomy");
    let n = rng.random_range(spec.frames_min..=spec.frames_max);
    let jitter = |rng: &mut seed::Rng, s: f64| rng.random_range(-s..=s) * l;
    // Two bright condyles keep a consistent layout so tile position is
    // recoverable from content.
    let bones = [
        Ellipse {
            cy: 0.28 * l + jitter(&mut rng, 0.03),
            cx: 0.50 * l + jitter(&mut rng, 0.03),
            ry: 0.22 * l,
            rx: 0.30 * l,
            amp: 0.35,
        },
        Ellipse {
            cy: 0.76 * l + jitter(&mut rng, 0.03),
            cx: 0.50 * l + jitter(&mut rng, 0.03),
            ry: 0.20 * l,
            rx: 0.26 * l,
            amp: 0.22,
        },
    ];
    let blobs: Vec<Blob> = (0..6)
        .map(|_| Blob {
            cy: rng.random_range(0.0..l),
            cx: rng.random_range(0.0..l),
            vy: rng.random_range(-0.01..0.01) * l,
            vx: rng.random_range(-0.01..0.01) * l,
            sigma: rng.random_range(0.05..0.12) * l,
            amp: rng.random_range(-0.12..0.12),
        })
        .collect();
    let mut noise_rng = seed::rng_for(clip_seed, "synthetic.noise");
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let phase = if n > 1 { t as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
        let scale = 1.0 - 0.3 * phase * phase;
        let mut img = Gray::new(spec.frame_size, spec.frame_size);
        for r in 0..spec.frame_size {
            let y = r as f64 + 0.5;
            for c in 0..spec.frame_size {
                let x = c as f64 + 0.5;
                let mut v = 0.30 + 0.10 * y / l;
                for e in &bones {
                    v += soft_ellipse(e, y, x, scale, 0.04);
                }
                for b in &blobs {
                    let dy = y - (b.cy + b.vy * t as f64);
                    let dx = x - (b.cx + b.vx * t as f64);
                    v += b.amp * (-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma)).exp();
                }
                if spec.noise > 0.0 {
                    v += normal.sample(&mut noise_rng);
                }
                img.set(r, c, v.clamp(0.0, 1.0) as f32);
            }
        }
        frames.push(img);
    }
    if positive {
        let mut arng = seed::rng_for(clip_seed, "synthetic.artifact");
        let span = ((spec.artifact.span_frac * n as f64).round() as usize).clamp(1, n);
        let start = arng.random_range(0..=n - span);
        let (r0, r1, c0, c1) = spec.artifact.band_rect(spec.frame_size);
        let keep = (1.0 - spec.artifact.contrast) as f32;
        for f in &mut frames[start..start + span] {
            for r in r0..r1 {
                for c in c0..c1 {
                    let v = f.get(r, c);
                    f.set(r, c, v * keep);
                }
            }
        }
    }
    for f in &mut frames {
        quantize(f);
    }
    Ok(frames)
}

fn clip_seed(spec: &SyntheticSpec, clip_id: &str) -> u64 {
    seed::derive_seed(spec.seed, &format!("synthetic.clip.{clip_id}"))
}

/// Renders every clip of the spec in memory.
pub fn render_synthetic(spec: &SyntheticSpec, mode: ExecMode) -> Result<Vec<ClipRecord>> {
    spec.validate()?;
    let plan = spec.clip_plan();
    par::map_slice(mode, &plan, |(id, split, label)| {
        Ok(ClipRecord {
            clip_id: id.clone(),
            label: *label,
            split: *split,
            frames: render_clip(spec, clip_seed(spec, id), *label == 1)?,
        })
    })
    .into_iter()
    .collect()
}

/// Renders the dataset and writes it as a clip store under `out`.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path, mode: ExecMode) -> Result<DatasetManifest> {
    let records = render_synthetic(spec, mode)?;
    let mut manifest = DatasetManifest::new(spec.name.clone(), spec.frame_size, &records);
    manifest.normalization = "synthetic render in [0, 1], 8-bit quantized".into();
    let spec_json = serde_json::to_vec(spec).expect("spec serializes");
    manifest
        .source_digests
        .insert("spec".into(), seed::sha256_hex(&spec_json));
    manifest.synthetic = Some(spec.clone());
    write_store(out, &manifest, &records, mode)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            frame_size: 30,
            train_per_class: 3,
            valid_per_class: 2,
            frames_min: 2,
            frames_max: 4,
            ..Default::default()
        }
    }

    #[test]
    fn balanced_and_deterministic() {
        let spec = small();
        let a = render_synthetic(&spec, ExecMode::Parallel).unwrap();
        let b = render_synthetic(&spec, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let m = DatasetManifest::new("x", 30, &a);
        assert_eq!(m.count(Split::Train).positive, 3);
        assert_eq!(m.count(Split::Train).negative, 3);
        assert_eq!(m.count(Split::Valid).total, 4);
        for r in &a {
            r.validate(30).unwrap();
            assert!((2..=4).contains(&r.n_frames()));
        }
    }

    #[test]
    fn positive_differs_from_negative_twin_only_in_band() {
        let spec = small();
        let neg = render_clip(&spec, 77, false).unwrap();
        let pos = render_clip(&spec, 77, true).unwrap();
        let (r0, r1, c0, c1) = spec.artifact.band_rect(30);
        let (tr, tc, t) = spec.artifact.tile_rect(30);
        assert!(r0 >= tr && r1 <= tr + t && c0 >= tc && c1 <= tc + t);
        let mut changed = 0;
        for (p, n) in pos.iter().zip(&neg) {
            for r in 0..30 {
                for c in 0..30 {
                    let d = (p.get(r, c) - n.get(r, c)).abs();
                    let inside = (r0..r1).contains(&r) && (c0..c1).contains(&c);
                    if !inside {
                        assert_eq!(d, 0.0, "pixel ({r},{c}) changed outside the band");
                    } else if d > 0.0 {
                        changed += 1;
                    }
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let mut s = small();
        s.artifact.tile = 9;
        assert!(matches!(s.validate(), Err(Error::InvalidArgument(_))));
        let mut s = small();
        s.frames_min = 5;
        s.frames_max = 4;
        assert!(s.validate().is_err());
        let mut s = small();
        s.artifact.contrast = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn store_digest_is_reproducible() {
        let spec = small();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate_synthetic(&spec, d1.path(), ExecMode::Parallel).unwrap();
        let m2 = generate_synthetic(&spec, d2.path(), ExecMode::Sequential).unwrap();
        assert_eq!(m1, m2);
        let (_, back) = super::super::load_store(d1.path(), None).unwrap();
        assert_eq!(back, render_synthetic(&spec, ExecMode::Sequential).unwrap());
    }
}
