use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, ParamStore, Scalar};

const MAGIC: &[u8; 8] = b"JPOPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pretext,
    Downstream,
}

/// Sidecar metadata written next to the weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub git_rev: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Checkpoint {
    /// Copies the stored weights into `store`, which must have the same
    /// parameter names and shapes in the same order.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let mut bad = Vec::new();
        if store.params.len() != self.params.params.len() {
            bad.push(format!(
                "parameter count {} vs {}",
                self.params.params.len(),
                store.params.len()
            ));
        }
        for (dst, src) in store.params.iter().zip(&self.params.params) {
            if dst.name != src.name || dst.shape != src.shape {
                bad.push(format!("{} {:?} vs {} {:?}", src.name, src.shape, dst.name, dst.shape));
            }
        }
        if !bad.is_empty() {
            return Err(Error::Transfer { layers: bad });
        }
        for (dst, src) in store.params.iter_mut().zip(&self.params.params) {
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d = T::of(s as f64);
            }
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes weights (as f32) to `path` and metadata to its `.json` sidecar.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let header = Header {
        names: store.params.iter().map(|p| p.name.clone()).collect(),
        shapes: store.params.iter().map(|p| p.shape.clone()).collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let mut buf = Vec::with_capacity(16 + header.len() + store.total() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for p in &store.params {
        for v in &p.data {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    write_atomic(path, &buf)?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::json(&side, e))?;
    write_atomic(&side, &json)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |r: &str| Error::format(path, r.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
    if header.names.len() != header.shapes.len() {
        return Err(bad("header names and shapes differ in length"));
    }
    let mut off = 16 + hlen;
    let mut params = Vec::with_capacity(header.names.len());
    for (name, shape) in header.names.into_iter().zip(header.shapes) {
        let len: usize = shape.iter().product();
        let raw = bytes
            .get(off..off + len * 4)
            .ok_or_else(|| bad("truncated weights"))?;
        off += len * 4;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(Param { name, shape, data });
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes after weights"));
    }
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta = serde_json::from_slice(&text).map_err(|e| Error::json(&side, e))?;
    Ok(Checkpoint {
        meta,
        params: ParamStore { params },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatch() {
        let mut store = ParamStore::<f32>::new();
        store.push("a.weight", vec![2, 3]);
        store.push("a.bias", vec![2]);
        store.init_he(&mut crate::seed::rng(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let meta = CheckpointMeta {
            kind: ModelKind::Pretext,
            config: serde_json::json!({"x": 1}),
            seed: 7,
            epoch: 3,
            metrics: BTreeMap::from([("val_acc".to_string(), 0.5)]),
            git_rev: None,
        };
        save_checkpoint(&path, &store, &meta).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta, meta);
        let mut other = ParamStore::<f32>::new();
        other.push("a.weight", vec![2, 3]);
        other.push("a.bias", vec![2]);
        ck.load_into(&mut other).unwrap();
        assert_eq!(other, store);
        let mut wrong = ParamStore::<f32>::new();
        wrong.push("a.weight", vec![3, 2]);
        wrong.push("a.bias", vec![2]);
        assert!(matches!(ck.load_into(&mut wrong), Err(Error::Transfer { .. })));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
