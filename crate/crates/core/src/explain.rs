//! Grad-CAM heatmaps for the pretext and downstream networks.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::imaging::{self, Gray};
use crate::models::{DownstreamModel, PretextModel, Stop};
use crate::nn::{self, Scalar, Tensor};
use crate::patchgen::JumbledSample;
use crate::seed;
use crate::training::{DivideRule, FramePlan};

/// Maps whose maximum falls below this are reported as all-zero.
pub const DEGENERATE_MAX: f64 = 1e-12;

/// A heatmap normalized to `[0, 1]` by its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub map: Gray,
    /// Maximum before normalization.
    pub raw_max: f64,
    /// True when the raw map was (numerically) all zero.
    pub degenerate: bool,
}

/// Divides by the maximum; near-zero maps become all-zero with a flag.
pub fn normalize_heatmap(raw: Gray) -> Heatmap {
    let max = raw.data.iter().fold(0.0f64, |m, &v| m.max(v as f64));
    if max < DEGENERATE_MAX {
        return Heatmap {
            map: Gray::new(raw.height, raw.width),
            raw_max: max,
            degenerate: true,
        };
    }
    let mut map = raw;
    map.data.iter_mut().for_each(|v| *v = (*v as f64 / max).max(0.0) as f32);
    Heatmap {
        map,
        raw_max: max,
        degenerate: false,
    }
}

/// Raw Grad-CAM for item `i`: ReLU of the activation channels weighted by
/// the spatial mean of their gradients.
pub fn grad_cam_raw<T: Scalar>(acts: &Tensor<T>, grads: &Tensor<T>, i: usize) -> Gray {
    assert_eq!(acts.shape, grads.shape, "activation and gradient shapes differ");
    let (h, w) = (acts.h(), acts.w());
    let mut out = vec![0.0f64; h * w];
    for c in 0..acts.c() {
        let g = grads.plane(i, c);
        let alpha = g.iter().map(|v| v.f64()).sum::<f64>() / (h * w) as f64;
        if alpha == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(acts.plane(i, c)) {
            *o += alpha * a.f64();
        }
    }
    Gray::from_vec(h, w, out.into_iter().map(|v| v.max(0.0) as f32).collect())
        .expect("sized buffer")
}

/// Upsamples a raw map to `size x size` and normalizes it.
pub fn finish_cam(raw: &Gray, size: usize) -> Heatmap {
    normalize_heatmap(imaging::resize_bilinear(raw, size, size))
}

/// Blends a jet-coloured heatmap over a grayscale frame. `alpha = 0` gives
/// the frame, `alpha = 1` the colormap alone.
pub fn overlay(heatmap: &Gray, frame: &Gray, alpha: f32) -> Result<RgbImage> {
    if heatmap.height != frame.height || heatmap.width != frame.width {
        return Err(Error::invalid(format!(
            "heatmap {}x{} does not match frame {}x{}",
            heatmap.height, heatmap.width, frame.height, frame.width
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("overlay alpha must be in [0, 1]"));
    }
    let rgb: Vec<[f32; 3]> = heatmap
        .data
        .iter()
        .zip(&frame.data)
        .map(|(&h, &g)| {
            let c = imaging::jet(h);
            let g = g.clamp(0.0, 1.0);
            [0, 1, 2].map(|k| (1.0 - alpha) * g + alpha * c[k])
        })
        .collect();
    Ok(imaging::rgb_from_floats(frame.width, frame.height, &rgb))
}

/// Mean of a border strip against the mean of the interior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorderCheck {
    pub strip: usize,
    pub border_mean: f64,
    pub interior_mean: f64,
    /// `border_mean < 2 * interior_mean`; false for all-zero maps.
    pub pass: bool,
}

pub fn border_check(map: &Gray, strip: usize) -> Result<BorderCheck> {
    if strip == 0 || 2 * strip >= map.height.min(map.width) {
        return Err(Error::invalid(format!(
            "border strip {strip} leaves no interior in a {}x{} map",
            map.height, map.width
        )));
    }
    let (mut b, mut nb, mut i, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..map.height {
        for c in 0..map.width {
            let v = map.get(r, c) as f64;
            let edge = r < strip || c < strip || r >= map.height - strip || c >= map.width - strip;
            if edge {
                b += v;
                nb += 1;
            } else {
                i += v;
                ni += 1;
            }
        }
    }
    let (border_mean, interior_mean) = (b / nb as f64, i / ni as f64);
    Ok(BorderCheck {
        strip,
        border_mean,
        interior_mean,
        pass: interior_mean > 0.0 && border_mean < 2.0 * interior_mean,
    })
}

/// Border strip width for a patch of `patch` pixels: 4 px at 64, scaled.
pub fn border_strip_for(patch: usize) -> usize {
    ((4 * patch + 32) / 64).max(1)
}

/// Which downstream class score the map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamTarget {
    /// The tear logit.
    #[default]
    Positive,
    /// The negated logit.
    Negative,
}

impl CamTarget {
    fn sign(self) -> f64 {
        match self {
            CamTarget::Positive => 1.0,
            CamTarget::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamCamConfig {
    /// Discriminator convolution name; the last one when unset.
    pub layer: Option<String>,
    pub target: CamTarget,
    pub frame_cap: usize,
    pub divide_rule: DivideRule,
    /// Seeds frame sampling for clips longer than `frame_cap`.
    pub seed: u64,
}

impl Default for DownstreamCamConfig {
    fn default() -> Self {
        Self {
            layer: None,
            target: CamTarget::Positive,
            frame_cap: 36,
            divide_rule: DivideRule::Remaining,
            seed: 0,
        }
    }
}

/// Per-frame heatmaps for one clip.
#[derive(Debug, Clone)]
pub struct DownstreamCam {
    pub clip_id: String,
    pub label: u8,
    pub probability: f64,
    pub layer: String,
    pub target: CamTarget,
    /// Clip frame index of each map.
    pub frame_indices: Vec<usize>,
    pub frames: Vec<Heatmap>,
    /// Mean of the raw per-frame maps, normalized.
    pub summary: Heatmap,
}

fn layer_point<T: Scalar>(model: &DownstreamModel<T>, layer: Option<&str>) -> Result<(String, usize)> {
    let convs: Vec<&str> = model
        .disc
        .ops
        .iter()
        .filter_map(|op| match op {
            nn::Op::Conv { name, .. } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    match layer {
        None => Ok((convs.last().expect("disc has convs").to_string(), model.default_cam_point())),
        Some(name) => model
            .disc_point(name)
            .map(|p| (name.to_string(), p))
            .ok_or_else(|| Error::invalid(format!("unknown layer `{name}`; choose one of {}", convs.join(", ")))),
    }
}

/// Raw per-batch-item maps at disc point `point` for the objective
/// `scale * logit`, plus the forward probability.
pub fn downstream_cam_raw<T: Scalar>(
    model: &DownstreamModel<T>,
    groups: &[Tensor<T>],
    point: usize,
    scale: f64,
) -> (Vec<Gray>, f64) {
    let trace = model.forward(groups);
    let back = model.backward(&trace, scale, None, Stop::Disc(point));
    let g = back.at_stop.expect("disc stop returns a gradient");
    let acts = &trace.disc.acts[point];
    ((0..acts.n()).map(|i| grad_cam_raw(acts, &g, i)).collect(), trace.probability())
}

/// Grad-CAM over every frame the classifier sees for `clip`.
pub fn explain_downstream<T: Scalar>(
    model: &DownstreamModel<T>,
    clip: &ClipRecord,
    cfg: &DownstreamCamConfig,
) -> Result<DownstreamCam> {
    let (layer, point) = layer_point(model, cfg.layer.as_deref())?;
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, &format!("explain.frames.{}", clip.clip_id)));
    let plan = FramePlan::new(clip.n_frames(), cfg.frame_cap, model.config.n_branches, cfg.divide_rule, &mut rng)?;
    let groups: Vec<Vec<&Gray>> = plan
        .groups
        .iter()
        .map(|g| g.iter().map(|&p| &clip.frames[plan.sampled[p]]).collect())
        .collect();
    let tensors = model.group_tensors(&groups)?;
    let (raw, probability) = downstream_cam_raw(model, &tensors, point, cfg.target.sign());
    let size = model.config.frame_size;
    // Padded short clips repeat frames; keep the first map per frame.
    let mut frame_indices = Vec::new();
    let mut maps = Vec::new();
    for (f, r) in plan.batch_frames().into_iter().zip(&raw) {
        if !frame_indices.contains(&f) {
            frame_indices.push(f);
            maps.push(r);
        }
    }
    let mut mean = Gray::new(raw[0].height, raw[0].width);
    for r in &maps {
        mean.data.iter_mut().zip(&r.data).for_each(|(m, &v)| *m += v / maps.len() as f32);
    }
    Ok(DownstreamCam {
        clip_id: clip.clip_id.clone(),
        label: clip.label,
        probability,
        layer,
        target: cfg.target,
        frame_indices,
        frames: maps.into_iter().map(|r| finish_cam(r, size)).collect(),
        summary: finish_cam(&mean, size),
    })
}

/// Pretext heatmaps for one jumbled sample.
#[derive(Debug, Clone)]
pub struct PretextCam {
    pub target: usize,
    pub label: usize,
    pub probability: f64,
    pub layer: String,
    /// Map at the fusion convolution, patch resolution.
    pub fusion: Heatmap,
    /// Per-slot maps at the branch outputs, patch resolution.
    pub patches: Vec<Heatmap>,
    pub border: Vec<BorderCheck>,
}

/// Raw maps at the fusion output and each branch output for
/// `scale * logit[target]`, plus the softmax probabilities.
pub fn pretext_cam_raw<T: Scalar>(
    model: &PretextModel<T>,
    sample: &JumbledSample,
    target: Option<usize>,
    scale: f64,
) -> Result<(usize, Gray, Vec<Gray>, Vec<f64>)> {
    let x = model.input_tensor(&[sample]);
    let trace = model.forward(&x);
    let probs = nn::softmax_rows(trace.logits());
    let probs: Vec<f64> = probs.data.iter().map(|v| v.f64()).collect();
    let k = match target {
        Some(k) if k >= probs.len() => {
            return Err(Error::invalid(format!("target class {k} out of range 0..{}", probs.len())))
        }
        Some(k) => k,
        None => (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b }),
    };
    let mut d = vec![T::zero(); probs.len()];
    d[k] = T::of(scale);
    let back = model.backward(&trace, Tensor::from_vec([1, probs.len(), 1, 1], d), None, false);
    let fusion = grad_cam_raw(trace.fusion_output(), &back.fusion_output, 0);
    let patches = trace
        .branches
        .iter()
        .zip(&back.branch_outputs)
        .map(|(t, g)| grad_cam_raw(t.output(), g, 0))
        .collect();
    Ok((k, fusion, patches, probs))
}

/// Grad-CAM for the pretext network. `target` defaults to the predicted class.
pub fn explain_pretext<T: Scalar>(
    model: &PretextModel<T>,
    sample: &JumbledSample,
    target: Option<usize>,
) -> Result<PretextCam> {
    let p = model.config.patch_size;
    let (k, fusion, patches, probs) = pretext_cam_raw(model, sample, target, 1.0)?;
    let patches: Vec<Heatmap> = patches.iter().map(|r| finish_cam(r, p)).collect();
    let strip = border_strip_for(p);
    let border = patches
        .iter()
        .map(|h| border_check(&h.map, strip))
        .collect::<Result<Vec<_>>>()?;
    Ok(PretextCam {
        target: k,
        label: sample.label,
        probability: probs[k],
        layer: "fusion.conv".into(),
        fusion: finish_cam(&fusion, p),
        patches,
        border,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub frame_index: usize,
    pub heatmap: String,
    pub overlay: String,
    pub raw_max: f64,
    pub all_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamCamReport {
    pub clip_id: String,
    pub label: u8,
    pub probability: f64,
    pub layer: String,
    pub target: CamTarget,
    pub alpha: f32,
    pub summary_heatmap: String,
    pub summary_all_zero: bool,
    pub frames: Vec<MapRecord>,
}

fn safe_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes 16-bit heatmaps, overlays and a JSON report into `dir`.
pub fn write_downstream_cam(cam: &DownstreamCam, clip: &ClipRecord, dir: &Path, alpha: f32) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = safe_stem(&cam.clip_id);
    let mut frames = Vec::new();
    for (&f, h) in cam.frame_indices.iter().zip(&cam.frames) {
        let heatmap = format!("{stem}_f{f:03}_cam.png");
        let over = format!("{stem}_f{f:03}_overlay.png");
        imaging::save_png16(&h.map, &dir.join(&heatmap))?;
        imaging::save_rgb(&overlay(&h.map, &clip.frames[f], alpha)?, &dir.join(&over))?;
        frames.push(MapRecord {
            frame_index: f,
            heatmap,
            overlay: over,
            raw_max: h.raw_max,
            all_zero: h.degenerate,
        });
    }
    let summary_heatmap = format!("{stem}_summary_cam.png");
    imaging::save_png16(&cam.summary.map, &dir.join(&summary_heatmap))?;
    let report = DownstreamCamReport {
        clip_id: cam.clip_id.clone(),
        label: cam.label,
        probability: cam.probability,
        layer: cam.layer.clone(),
        target: cam.target,
        alpha,
        summary_heatmap,
        summary_all_zero: cam.summary.degenerate,
        frames,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &report)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextCamReport {
    pub clip_id: String,
    pub frame_index: usize,
    pub label: usize,
    pub target: usize,
    pub probability: f64,
    pub layer: String,
    pub fusion_heatmap: String,
    pub fusion_all_zero: bool,
    pub patch_heatmaps: Vec<String>,
    pub patch_all_zero: Vec<bool>,
    pub border: Vec<BorderCheck>,
}

pub fn write_pretext_cam(cam: &PretextCam, sample: &JumbledSample, dir: &Path, alpha: f32) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prov = &sample.provenance;
    let stem = format!("{}_f{:03}", safe_stem(&prov.clip_id), prov.frame_index);
    let fusion_heatmap = format!("{stem}_fusion_cam.png");
    imaging::save_png16(&cam.fusion.map, &dir.join(&fusion_heatmap))?;
    let mut patch_heatmaps = Vec::new();
    for (k, (h, patch)) in cam.patches.iter().zip(&sample.patches).enumerate() {
        let name = format!("{stem}_slot{k}_cam.png");
        imaging::save_png16(&h.map, &dir.join(&name))?;
        imaging::save_rgb(&overlay(&h.map, patch, alpha)?, &dir.join(format!("{stem}_slot{k}_overlay.png")))?;
        patch_heatmaps.push(name);
    }
    let report = PretextCamReport {
        clip_id: prov.clip_id.clone(),
        frame_index: prov.frame_index,
        label: cam.label,
        target: cam.target,
        probability: cam.probability,
        layer: cam.layer.clone(),
        fusion_heatmap,
        fusion_all_zero: cam.fusion.degenerate,
        patch_heatmaps,
        patch_all_zero: cam.patches.iter().map(|h| h.degenerate).collect(),
        border: cam.border.clone(),
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &report)?;
    Ok(path)
}
