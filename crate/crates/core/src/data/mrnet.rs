use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{quantize, write_store, ClipRecord, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::imaging::Gray;
use crate::par::{self, ExecMode};
use crate::seed;

/// Published MRNet composition used by the optional count check.
const MRNET_TRAIN: usize = 1130;
const MRNET_VALID: usize = 120;
const MRNET_TRAIN_POS: usize = 208;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    #[default]
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
            Plane::Axial => "axial",
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            "axial" => Ok(Plane::Axial),
            other => Err(Error::invalid(format!("unknown plane `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestOptions {
    pub plane: Plane,
    pub frame_size: usize,
    /// Treat a mismatch with the published split sizes as an error.
    pub expect_mrnet_counts: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            plane: Plane::Sagittal,
            frame_size: 256,
            expect_mrnet_counts: false,
        }
    }
}

/// Dense array read from a `.npy` file, converted to `f64`, C order.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    Some(rest)
}

/// Reads a NumPy `.npy` file (format versions 1 to 3, C order, little
/// endian or byte-sized integer and float types).
pub fn read_npy(path: &Path) -> Result<NpyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |r: String| Error::format(path, r);
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(bad("missing .npy magic".into()));
    }
    let (hlen, hstart) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize,
            12,
        ),
        v => return Err(bad(format!("unsupported .npy version {v}"))),
    };
    let header = bytes
        .get(hstart..hstart + hlen)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header = std::str::from_utf8(header).map_err(|_| bad("header is not UTF-8".into()))?;
    let descr = header_field(header, "descr")
        .and_then(|r| r.strip_prefix('\''))
        .and_then(|r| r.split('\'').next())
        .ok_or_else(|| bad("header lacks descr".into()))?;
    let fortran = header_field(header, "fortran_order")
        .ok_or_else(|| bad("header lacks fortran_order".into()))?;
    if fortran.starts_with("True") {
        return Err(bad("Fortran-ordered arrays are not supported".into()));
    }
    let shape_text = header_field(header, "shape")
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.split(')').next())
        .ok_or_else(|| bad("header lacks shape".into()))?;
    let shape = shape_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad shape entry `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[hstart + hlen..];
    let (width, conv): (usize, fn(&[u8]) -> f64) = match descr {
        "|u1" | "u1" => (1, |b| b[0] as f64),
        "|i1" | "i1" => (1, |b| b[0] as i8 as f64),
        "<u2" => (2, |b| u16::from_le_bytes([b[0], b[1]]) as f64),
        "<i2" => (2, |b| i16::from_le_bytes([b[0], b[1]]) as f64),
        "<u4" => (4, |b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as f64),
        "<i4" => (4, |b| i32::from_le_bytes(b.try_into().expect("4 bytes")) as f64),
        "<f4" => (4, |b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64),
        "<f8" => (8, |b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
        other => return Err(bad(format!("unsupported dtype `{other}`"))),
    };
    if body.len() != count * width {
        return Err(bad(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            count * width,
            body.len()
        )));
    }
    let data = body.chunks_exact(width).map(conv).collect();
    Ok(NpyArray { shape, data })
}

/// Centre crop or zero pad to `size x size`.
fn fit_square(src: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let (sy, dy) = if h >= size { ((h - size) / 2, 0) } else { (0, (size - h) / 2) };
    let (sx, dx) = if w >= size { ((w - size) / 2, 0) } else { (0, (size - w) / 2) };
    for r in 0..h.min(size) {
        for c in 0..w.min(size) {
            out[(r + dy) * size + c + dx] = src[(r + sy) * w + c + sx];
        }
    }
    out
}

/// Converts a `slices x H x W` stack into normalized frames.
fn stack_to_frames(arr: &NpyArray, size: usize) -> std::result::Result<(Vec<Gray>, bool), String> {
    let &[s, h, w] = arr.shape.as_slice() else {
        return Err(format!("expected a 3-D stack, got shape {:?}", arr.shape));
    };
    if s == 0 || h == 0 || w == 0 {
        return Err(format!("empty stack {:?}", arr.shape));
    }
    if arr.data.iter().any(|v| !v.is_finite()) {
        return Err("stack contains non-finite values".into());
    }
    let (lo, hi) = arr
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let frames = arr
        .data
        .chunks_exact(h * w)
        .map(|plane| {
            let norm: Vec<f64> = plane.iter().map(|v| (v - lo) / span).collect();
            let fitted = fit_square(&norm, h, w, size);
            let mut g = Gray::from_vec(size, size, fitted.iter().map(|&v| v as f32).collect())
                .expect("sized buffer");
            quantize(&mut g);
            g
        })
        .collect();
    Ok((frames, h != size || w != size))
}

fn read_labels(path: &Path, problems: &mut Vec<String>) -> Vec<(String, u8)> {
    let mut reader = match csv::ReaderBuilder::new().has_headers(false).from_path(path) {
        Ok(r) => r,
        Err(e) => {
            problems.push(format!("{}: cannot read label table: {e}", path.display()));
            return Vec::new();
        }
    };
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        match rec {
            Ok(r) if r.len() == 2 => {
                let id = r[0].trim().to_string();
                match r[1].trim() {
                    "0" => out.push((id, 0)),
                    "1" => out.push((id, 1)),
                    v => problems.push(format!(
                        "{}:{}: label `{v}` is not 0 or 1",
                        path.display(),
                        line + 1
                    )),
                }
            }
            Ok(r) => problems.push(format!(
                "{}:{}: expected 2 columns, got {}",
                path.display(),
                line + 1,
                r.len()
            )),
            Err(e) => problems.push(format!("{}:{}: {e}", path.display(), line + 1)),
        }
    }
    out
}

/// Ingests an MRNet-layout directory (`<split>/<plane>/<id>.npy` stacks and
/// `<split>-acl.csv` label tables) into a clip store. Any problem aborts the
/// ingestion with an itemized report and nothing is written.
pub fn ingest_mrnet(
    src: &Path,
    out: &Path,
    opts: &IngestOptions,
    mode: ExecMode,
) -> Result<DatasetManifest> {
    if opts.frame_size == 0 {
        return Err(Error::invalid("frame_size must be positive"));
    }
    let mut problems = Vec::new();
    let mut jobs: Vec<(String, Split, u8, PathBuf)> = Vec::new();
    let mut source_digests = BTreeMap::new();
    for split in Split::ALL {
        let table = src.join(format!("{}-acl.csv", split.as_str()));
        if let Ok(bytes) = fs::read(&table) {
            source_digests.insert(
                format!("{}-acl.csv", split.as_str()),
                seed::sha256_hex(&bytes),
            );
        }
        for (id, label) in read_labels(&table, &mut problems) {
            let path = src
                .join(split.as_str())
                .join(opts.plane.as_str())
                .join(format!("{id}.npy"));
            jobs.push((id, split, label, path));
        }
    }
    let results = par::map_slice(mode, &jobs, |(id, split, label, path)| {
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let digest = seed::sha256_hex(&bytes);
        let arr = read_npy(path).map_err(|e| e.to_string())?;
        let (frames, refit) =
            stack_to_frames(&arr, opts.frame_size).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok::<_, String>((
            ClipRecord {
                clip_id: id.clone(),
                label: *label,
                split: *split,
                frames,
            },
            digest,
            refit,
        ))
    });
    let mut records = Vec::new();
    let mut refitted = 0;
    for ((id, split, _, _), r) in jobs.iter().zip(results) {
        match r {
            Ok((rec, digest, refit)) => {
                source_digests.insert(
                    format!("{}/{}/{id}.npy", split.as_str(), opts.plane.as_str()),
                    digest,
                );
                refitted += refit as usize;
                records.push(rec);
            }
            Err(e) => problems.push(e),
        }
    }
    let mut manifest = DatasetManifest::new("mrnet", opts.frame_size, &records);
    manifest.normalization = "per-clip min-max to [0, 1], 8-bit quantized".into();
    manifest.source_digests = source_digests;
    manifest.notes.push(format!("plane: {}", opts.plane.as_str()));
    if refitted > 0 {
        manifest.notes.push(format!(
            "{refitted} clip(s) centre-cropped or padded to {0}x{0}",
            opts.frame_size
        ));
    }
    if opts.expect_mrnet_counts {
        let train = manifest.count(Split::Train);
        let valid = manifest.count(Split::Valid);
        if train.total != MRNET_TRAIN || valid.total != MRNET_VALID || train.positive != MRNET_TRAIN_POS {
            problems.push(format!(
                "split sizes train {} (positive {}) / valid {} differ from the published {MRNET_TRAIN} ({MRNET_TRAIN_POS}) / {MRNET_VALID}",
                train.total, train.positive, valid.total
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Ingestion { problems });
    }
    write_store(out, &manifest, &records, mode)?;
    Ok(manifest)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn write_npy_u8(path: &Path, shape: &[usize], data: &[u8]) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let shape = if dims.len() == 1 {
            format!("({},)", dims[0])
        } else {
            format!("({})", dims.join(", "))
        };
        let mut header = format!("{{'descr': '|u1', 'fortran_order': False, 'shape': {shape}, }}");
        while (10 + header.len() + 1) % 64 != 0 {
            header.push(' ');
        }
        header.push('\n');
        let mut bytes = b"\x93NUMPY\x01\x00".to_vec();
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(data);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, bytes).unwrap();
    }

    fn fake_mrnet(root: &Path) {
        fs::write(root.join("train-acl.csv"), "0000,0\n0001,1\n").unwrap();
        fs::write(root.join("valid-acl.csv"), "0002,1\n").unwrap();
        let big: Vec<u8> = (0..2 * 20 * 20).map(|i| (i % 200) as u8 + 10).collect();
        write_npy_u8(&root.join("train/sagittal/0000.npy"), &[2, 20, 20], &big);
        let small: Vec<u8> = (0..3 * 12 * 12).map(|i| (i % 97) as u8).collect();
        write_npy_u8(&root.join("train/sagittal/0001.npy"), &[3, 12, 12], &small);
        write_npy_u8(&root.join("valid/sagittal/0002.npy"), &[1, 16, 16], &[5; 256]);
    }

    #[test]
    fn npy_reader_parses_header_and_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.npy");
        write_npy_u8(&p, &[2, 3], &[0, 1, 2, 3, 4, 255]);
        let a = read_npy(&p).unwrap();
        assert_eq!(a.shape, vec![2, 3]);
        assert_eq!(a.data, vec![0.0, 1.0, 2.0, 3.0, 4.0, 255.0]);
        fs::write(&p, b"nope").unwrap();
        assert!(matches!(read_npy(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn ingestion_normalizes_fits_and_is_idempotent() {
        let src = tempfile::tempdir().unwrap();
        fake_mrnet(src.path());
        let opts = IngestOptions {
            frame_size: 16,
            ..Default::default()
        };
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let m1 = ingest_mrnet(src.path(), out1.path(), &opts, ExecMode::Parallel).unwrap();
        let m2 = ingest_mrnet(src.path(), out2.path(), &opts, ExecMode::Sequential).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.count(Split::Train).total, 2);
        assert_eq!(m1.count(Split::Train).positive, 1);
        assert_eq!(m1.count(Split::Valid).total, 1);
        assert!(m1.notes.iter().any(|n| n.contains("centre-cropped or padded")));
        let (_, recs) = super::super::load_store(out1.path(), None).unwrap();
        // The padded clip keeps every source pixel, so its maximum is 1.
        let padded = &recs[1];
        let all: Vec<f32> = padded.frames.iter().flat_map(|f| f.data.clone()).collect();
        let hi = all.iter().cloned().fold(0.0f32, f32::max);
        assert!((hi - 1.0).abs() < 1e-6);
        assert_eq!(recs[1].frames[0].get(0, 0), 0.0);
        // Constant stack normalizes to zeros rather than dividing by zero.
        assert!(recs[2].frames[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn problems_are_itemized() {
        let src = tempfile::tempdir().unwrap();
        fake_mrnet(src.path());
        fs::remove_file(src.path().join("valid/sagittal/0002.npy")).unwrap();
        fs::write(src.path().join("train-acl.csv"), "0000,0\n0001,7\n").unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = ingest_mrnet(
            src.path(),
            out.path(),
            &IngestOptions {
                frame_size: 16,
                expect_mrnet_counts: true,
                ..Default::default()
            },
            ExecMode::Sequential,
        )
        .unwrap_err();
        let Error::Ingestion { problems } = err else {
            panic!("expected ingestion error")
        };
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(!out.path().join("manifest.json").exists());
    }
}
