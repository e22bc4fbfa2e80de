//! Named-tensor container: a directory with `manifest.json` (metadata plus
//! name, shape and offset of each tensor) and `tensors.bin` (raw
//! little-endian `f64` payload).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "tensors.bin";
const FORMAT: &str = "sqltree-tensors/1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: [usize; 2],
    /// Offset into the payload, in `f64` units.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    metadata: serde_json::Value,
    tensors: Vec<Entry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io { path: path.display().to_string(), source }
}

pub fn write_archive<'a>(
    dir: &Path,
    metadata: serde_json::Value,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in tensors {
        entries.push(Entry { name: name.to_string(), shape: t.shape(), offset: payload.len() / 8 });
        for x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest { format: FORMAT.to_string(), metadata, tensors: entries };
    let bin = dir.join(PAYLOAD_FILE);
    fs::write(&bin, payload).map_err(io_err(&bin))?;
    let man = dir.join(MANIFEST_FILE);
    fs::write(&man, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&man))?;
    Ok(())
}

pub fn read_archive(dir: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>), ArchiveError> {
    let man = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&man).map_err(io_err(&man))?)?;
    if manifest.format != FORMAT {
        return Err(ArchiveError::Corrupt(format!("unknown format `{}`", manifest.format)));
    }
    let bin = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&bin).map_err(io_err(&bin))?;
    if payload.len() % 8 != 0 {
        return Err(ArchiveError::Corrupt("payload length is not a multiple of 8".into()));
    }
    let floats: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n = e.shape[0] * e.shape[1];
        let data = floats
            .get(e.offset..e.offset + n)
            .ok_or_else(|| ArchiveError::Corrupt(format!("tensor `{}` exceeds the payload", e.name)))?;
        out.push((e.name, Tensor::new(e.shape[0], e.shape[1], data.to_vec())));
    }
    Ok((manifest.metadata, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]);
        let b = Tensor::new(1, 3, vec![std::f64::consts::PI, -1.0 / 3.0, 7.0]);
        write_archive(dir.path(), serde_json::json!({"step": 3}), [("a", &a), ("b", &b)]).unwrap();
        let (meta, got) = read_archive(dir.path()).unwrap();
        assert_eq!(meta["step"], 3);
        assert_eq!(got.len(), 2);
        for ((name, t), (want_name, want)) in got.iter().zip([("a", &a), ("b", &b)]) {
            assert_eq!(name, want_name);
            assert_eq!(t.shape(), want.shape());
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t), bits(want));
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::zeros(3, 3);
        write_archive(dir.path(), serde_json::Value::Null, [("a", &a)]).unwrap();
        fs::write(dir.path().join(PAYLOAD_FILE), [0u8; 16]).unwrap();
        assert!(matches!(read_archive(dir.path()), Err(ArchiveError::Corrupt(_))));
    }
}
