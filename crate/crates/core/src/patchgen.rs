//! Jumbled-patch sample generation.
//!
//! A square frame of side `L` is cut into a 3x3 grid of tiles of side
//! `floor(L / 3)` (85 for 256-pixel frames; the last row and column are
//! unused). Each tile is independently augmented with an element of the
//! 54-element group `rotation x tx x ty x scale`, a `P`x`P` patch is cropped at
//! a uniformly drawn reference point, and the nine patches are reordered by an
//! arrangement drawn from the class set.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, Affine, Gray};
use crate::permset::PermutationSet;
use crate::seed::{self, Rng};

pub const GRID: usize = 3;
pub const N_TILES: usize = GRID * GRID;
pub const ROTATIONS_DEG: [i32; 3] = [-15, 0, 15];
pub const SCALES: [f64; 2] = [1.0, 1.2];

/// A frame of one clip; intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Gray,
    pub clip_id: String,
    pub frame_index: usize,
}

impl Frame {
    pub fn new(pixels: Gray, clip_id: impl Into<String>, frame_index: usize) -> Self {
        Self {
            pixels,
            clip_id: clip_id.into(),
            frame_index,
        }
    }
}

/// Frame, tile and patch sizes for one geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGeometry {
    pub frame_size: usize,
    pub patch_size: usize,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        Self {
            frame_size: 256,
            patch_size: 64,
        }
    }
}

impl PatchGeometry {
    pub fn new(frame_size: usize, patch_size: usize) -> Result<Self> {
        let g = Self {
            frame_size,
            patch_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.tile_size() < self.patch_size {
            return Err(Error::invalid(format!(
                "patch size {} does not fit in tiles of side {} (frame {})",
                self.patch_size,
                self.tile_size(),
                self.frame_size
            )));
        }
        Ok(())
    }

    pub fn tile_size(&self) -> usize {
        self.frame_size / GRID
    }

    /// Largest crop reference coordinate.
    pub fn crop_range(&self) -> usize {
        self.tile_size() - self.patch_size
    }

    /// Translation magnitude `floor(0.1 * patch_size)`.
    pub fn translate_px(&self) -> i32 {
        (self.patch_size / 10) as i32
    }

    pub fn center_ref(&self) -> usize {
        self.crop_range() / 2
    }
}

/// One element of the augmentation group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub rotation_deg: i32,
    pub tx_px: i32,
    pub ty_px: i32,
    pub scale: f64,
}

impl AugmentationParams {
    pub const IDENTITY: AugmentationParams = AugmentationParams {
        rotation_deg: 0,
        tx_px: 0,
        ty_px: 0,
        scale: 1.0,
    };

    /// All 54 group elements for translation magnitude `t`.
    pub fn group(translate_px: i32) -> Vec<AugmentationParams> {
        let shifts = [-translate_px, 0, translate_px];
        let mut out = Vec::with_capacity(54);
        for &rotation_deg in &ROTATIONS_DEG {
            for &tx_px in &shifts {
                for &ty_px in &shifts {
                    for &scale in &SCALES {
                        out.push(AugmentationParams {
                            rotation_deg,
                            tx_px,
                            ty_px,
                            scale,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn is_member(&self, translate_px: i32) -> bool {
        ROTATIONS_DEG.contains(&self.rotation_deg)
            && [-translate_px, 0, translate_px].contains(&self.tx_px)
            && [-translate_px, 0, translate_px].contains(&self.ty_px)
            && SCALES.contains(&self.scale)
    }

    pub fn affine(&self) -> Affine {
        Affine {
            rotation_deg: self.rotation_deg as f64,
            tx: self.tx_px as f64,
            ty: self.ty_px as f64,
            scale: self.scale,
        }
    }
}

/// Nine patches in slot order plus the arrangement class.
#[derive(Debug, Clone, PartialEq)]
pub struct JumbledSample {
    pub patches: Vec<Gray>,
    pub label: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub clip_id: String,
    pub frame_index: usize,
    pub rng_seed: Option<u64>,
}

/// Contiguous 3x3 tiles in row-major order.
pub fn partition_frame(frame: &Frame, geometry: &PatchGeometry) -> Result<Vec<Gray>> {
    let px = &frame.pixels;
    if !px.is_square() {
        return Err(Error::invalid(format!(
            "frame {}x{} is not square",
            px.height, px.width
        )));
    }
    if px.height != geometry.frame_size {
        return Err(Error::invalid(format!(
            "frame side {} does not match geometry frame size {}",
            px.height, geometry.frame_size
        )));
    }
    geometry.validate()?;
    let t = geometry.tile_size();
    (0..N_TILES)
        .map(|i| px.crop((i / GRID) * t, (i % GRID) * t, t, t))
        .collect()
}

pub fn apply_augmentation(
    partition: &Gray,
    params: &AugmentationParams,
    geometry: &PatchGeometry,
) -> Result<Gray> {
    if !params.is_member(geometry.translate_px()) {
        return Err(Error::invalid(format!(
            "{params:?} is not in the augmentation group"
        )));
    }
    Ok(imaging::warp(partition, &params.affine()))
}

/// Crop with reference point `(ref_row, ref_col)`.
pub fn crop_at(partition: &Gray, ref_row: usize, ref_col: usize, patch: usize) -> Result<Gray> {
    partition.crop(ref_row, ref_col, patch, patch)
}

/// Uniform reference point in `[0, tile - patch]^2`; returns the patch and the point.
pub fn random_crop(
    partition: &Gray,
    geometry: &PatchGeometry,
    rng: &mut Rng,
) -> Result<(Gray, (usize, usize))> {
    let range = geometry.crop_range();
    let rx = rng.random_range(0..=range);
    let ry = rng.random_range(0..=range);
    Ok((crop_at(partition, rx, ry, geometry.patch_size)?, (rx, ry)))
}

pub fn make_jumbled_sample(
    frame: &Frame,
    pset: &PermutationSet,
    geometry: &PatchGeometry,
    rng: &mut Rng,
) -> Result<JumbledSample> {
    check_pset(pset)?;
    let group = AugmentationParams::group(geometry.translate_px());
    let tiles = partition_frame(frame, geometry)?;
    let mut patches = Vec::with_capacity(N_TILES);
    for tile in &tiles {
        let g = group[rng.random_range(0..group.len())];
        let augmented = imaging::warp(tile, &g.affine());
        let (patch, _) = random_crop(&augmented, geometry, rng)?;
        patches.push(patch);
    }
    let label = rng.random_range(0..pset.class_count());
    let patches = pset.perms[label].apply(&patches);
    Ok(JumbledSample {
        patches,
        label,
        provenance: Provenance {
            clip_id: frame.clip_id.clone(),
            frame_index: frame.frame_index,
            rng_seed: None,
        },
    })
}

/// Seeded convenience wrapper recording the seed in the provenance.
pub fn make_jumbled_sample_seeded(
    frame: &Frame,
    pset: &PermutationSet,
    geometry: &PatchGeometry,
    seed: u64,
) -> Result<JumbledSample> {
    let mut rng = seed::rng(seed);
    let mut s = make_jumbled_sample(frame, pset, geometry, &mut rng)?;
    s.provenance.rng_seed = Some(seed);
    Ok(s)
}

/// Un-augmented, centre-cropped sample with an explicit arrangement.
pub fn make_eval_sample(
    frame: &Frame,
    pset: &PermutationSet,
    geometry: &PatchGeometry,
    arrangement_index: usize,
) -> Result<JumbledSample> {
    check_pset(pset)?;
    if arrangement_index >= pset.class_count() {
        return Err(Error::invalid(format!(
            "arrangement index {arrangement_index} >= class count {}",
            pset.class_count()
        )));
    }
    let c = geometry.center_ref();
    let patches: Vec<Gray> = partition_frame(frame, geometry)?
        .iter()
        .map(|t| crop_at(t, c, c, geometry.patch_size))
        .collect::<Result<_>>()?;
    Ok(JumbledSample {
        patches: pset.perms[arrangement_index].apply(&patches),
        label: arrangement_index,
        provenance: Provenance {
            clip_id: frame.clip_id.clone(),
            frame_index: frame.frame_index,
            rng_seed: None,
        },
    })
}

fn check_pset(pset: &PermutationSet) -> Result<()> {
    if pset.n_patches != N_TILES || pset.class_count() == 0 {
        return Err(Error::invalid(format!(
            "permutation set must arrange {N_TILES} patches, got {}",
            pset.n_patches
        )));
    }
    Ok(())
}

/// Writes one cached sample: `<stem>.bin` holds 9xPxP little-endian `f32`
/// followed by a little-endian `u16` label; `<stem>.json` holds provenance.
pub fn write_cached_sample(sample: &JumbledSample, dir: &Path, stem: &str) -> Result<()> {
    let bin = dir.join(format!("{stem}.bin"));
    let mut bytes = Vec::new();
    for p in &sample.patches {
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let label = u16::try_from(sample.label)
        .map_err(|_| Error::invalid(format!("label {} exceeds u16", sample.label)))?;
    bytes.extend_from_slice(&label.to_le_bytes());
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string(&sample.provenance).map_err(|e| Error::json(&json, e))?;
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn read_cached_sample(dir: &Path, stem: &str, patch_size: usize) -> Result<JumbledSample> {
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let per = patch_size * patch_size;
    if bytes.len() != N_TILES * per * 4 + 2 {
        return Err(Error::format(&bin, format!("unexpected record length {}", bytes.len())));
    }
    let floats: Vec<f32> = bytes[..N_TILES * per * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let patches = floats
        .chunks_exact(per)
        .map(|c| Gray::from_vec(patch_size, patch_size, c.to_vec()))
        .collect::<Result<_>>()?;
    let n = bytes.len();
    let label = u16::from_le_bytes([bytes[n - 2], bytes[n - 1]]) as usize;
    let json = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let provenance = serde_json::from_str(&text).map_err(|e| Error::json(&json, e))?;
    Ok(JumbledSample {
        patches,
        label,
        provenance,
    })
}

/// 3x3 mosaic of the patches in slot order, separated by `gap` white pixels.
pub fn mosaic(sample: &JumbledSample, gap: usize) -> Gray {
    let p = sample.patches[0].height;
    let side = GRID * p + (GRID - 1) * gap;
    let mut out = Gray::filled(side, side, 1.0);
    for (slot, patch) in sample.patches.iter().enumerate() {
        let r0 = (slot / GRID) * (p + gap);
        let c0 = (slot % GRID) * (p + gap);
        for r in 0..p {
            for c in 0..p {
                out.set(r0 + r, c0 + c, patch.get(r, c));
            }
        }
    }
    out
}
