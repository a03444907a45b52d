//! `.opnf` files: `b"OPNF"`, a little-endian u32 version, a little-endian u64
//! metadata length, the UTF-8 JSON metadata, then the payload as row-major
//! little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::snapshot::SnapshotMatrix;

pub const MAGIC: &[u8; 4] = b"OPNF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerMeta {
    /// `[rows, cols]` of the payload.
    pub shape: [usize; 2],
    pub dt: f64,
    pub t0: f64,
    pub system: String,
    /// `sha256:<hex>` of the payload bytes.
    pub content_hash: String,
    /// What the payload holds: `snapshots`, `basis`, `operators`, ...
    #[serde(default)]
    pub kind: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotContainer {
    pub meta: ContainerMeta,
    /// Row-major, `shape[0] * shape[1]` values.
    pub payload: Vec<f64>,
}

pub fn payload_hash(payload: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in payload {
        h.update(v.to_le_bytes());
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}

impl SnapshotContainer {
    pub fn new(kind: &str, system: &str, shape: [usize; 2], t0: f64, dt: f64, payload: Vec<f64>) -> Result<Self> {
        if payload.len() != shape[0] * shape[1] {
            return Err(Error::Dimension {
                context: "container payload",
                expected: shape[0] * shape[1],
                actual: payload.len(),
            });
        }
        Ok(Self {
            meta: ContainerMeta {
                shape,
                dt,
                t0,
                system: system.to_string(),
                content_hash: payload_hash(&payload),
                kind: kind.to_string(),
                extra: serde_json::Value::Null,
            },
            payload,
        })
    }

    pub fn from_snapshots(kind: &str, system: &str, s: &SnapshotMatrix) -> Result<Self> {
        Self::new(kind, system, [s.nrows(), s.ncols()], s.t0(), s.dt(), s.to_row_major())
    }

    pub fn with_extra(mut self, extra: serde_json::Value) -> Self {
        self.meta.extra = extra;
        self
    }

    pub fn to_snapshots(&self) -> Result<SnapshotMatrix> {
        let [n, k] = self.meta.shape;
        SnapshotMatrix::from_row_major(&self.payload, n, k, self.meta.t0, self.meta.dt)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = header_bytes(&self.meta)?;
        out.reserve(8 * self.payload.len());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let meta = read_header(&mut r, path)?;
        let [n, k] = meta.shape;
        let mut payload = Vec::with_capacity(n * k);
        let mut h = Sha256::new();
        read_rows(&mut r, path, &meta, &mut h, |_, row| payload.extend_from_slice(row))?;
        finish_read(&mut r, path, &meta, h)?;
        Ok(Self { meta, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        w.write_all(&header_bytes(&self.meta)?).map_err(|e| Error::io(path, e))?;
        for v in &self.payload {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = open(path)?;
        let meta = read_header(&mut r, path)?;
        let [n, k] = meta.shape;
        let mut payload = Vec::with_capacity(n * k);
        let mut h = Sha256::new();
        read_rows(&mut r, path, &meta, &mut h, |_, row| payload.extend_from_slice(row))?;
        finish_read(&mut r, path, &meta, h)?;
        Ok(Self { meta, payload })
    }
}

/// Writes a snapshot matrix without building a row-major copy. Large
/// trajectories go through here so only one copy of the data is ever held.
pub fn write_snapshots(
    path: &Path,
    kind: &str,
    system: &str,
    s: &SnapshotMatrix,
    extra: serde_json::Value,
) -> Result<()> {
    let (n, k) = (s.nrows(), s.ncols());
    let data = s.data();
    let mut row = vec![0.0; k];
    let fill = |i: usize, row: &mut [f64]| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = data[(i, j)];
        }
    };
    let mut h = Sha256::new();
    for i in 0..n {
        fill(i, &mut row);
        for v in &row {
            h.update(v.to_le_bytes());
        }
    }
    let meta = ContainerMeta {
        shape: [n, k],
        dt: s.dt(),
        t0: s.t0(),
        system: system.to_string(),
        content_hash: format!("sha256:{}", hex::encode(h.finalize())),
        kind: kind.to_string(),
        extra,
    };
    let mut w = create(path)?;
    w.write_all(&header_bytes(&meta)?).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(8 * k);
    for i in 0..n {
        fill(i, &mut row);
        bytes.clear();
        for v in &row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a container straight into a snapshot matrix.
pub fn read_snapshots(path: &Path) -> Result<(ContainerMeta, SnapshotMatrix)> {
    let mut r = open(path)?;
    let meta = read_header(&mut r, path)?;
    let [n, k] = meta.shape;
    let mut data = Mat::<f64>::zeros(n, k);
    let mut h = Sha256::new();
    read_rows(&mut r, path, &meta, &mut h, |i, row| {
        for (j, v) in row.iter().enumerate() {
            data[(i, j)] = *v;
        }
    })?;
    finish_read(&mut r, path, &meta, h)?;
    let s = SnapshotMatrix::new(data, meta.t0, meta.dt)?;
    Ok((meta, s))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn header_bytes(meta: &ContainerMeta) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut head = Vec::with_capacity(16 + json.len());
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    head.extend_from_slice(&(json.len() as u64).to_le_bytes());
    head.extend_from_slice(&json);
    Ok(head)
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<ContainerMeta> {
    let mut fixed = [0u8; 16];
    r.read_exact(&mut fixed).map_err(|_| bad(path, "missing OPNF magic"))?;
    if &fixed[..4] != MAGIC {
        return Err(bad(path, "missing OPNF magic"));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    let meta_len = u64::from_le_bytes(fixed[8..16].try_into().unwrap());
    // metadata is small; anything huge is a corrupt length field
    if meta_len > 1 << 30 {
        return Err(bad(path, "metadata length runs past the end of the file"));
    }
    let mut json = Vec::new();
    r.take(meta_len).read_to_end(&mut json).map_err(|e| Error::io(path, e))?;
    if json.len() as u64 != meta_len {
        return Err(bad(path, "metadata length runs past the end of the file"));
    }
    let meta: ContainerMeta = serde_json::from_slice(&json).map_err(|e| bad(path, format!("metadata: {e}")))?;
    meta.shape[0]
        .checked_mul(meta.shape[1])
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| bad(path, "shape overflows"))?;
    Ok(meta)
}

fn read_rows<R: Read>(
    r: &mut R,
    path: &Path,
    meta: &ContainerMeta,
    h: &mut Sha256,
    mut sink: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let [n, k] = meta.shape;
    let mut bytes = vec![0u8; 8 * k];
    let mut row = vec![0.0; k];
    for i in 0..n {
        r.read_exact(&mut bytes)
            .map_err(|_| bad(path, format!("payload is shorter than shape {:?} needs", meta.shape)))?;
        h.update(&bytes);
        for (v, c) in row.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
        sink(i, &row);
    }
    Ok(())
}

fn finish_read<R: Read>(r: &mut R, path: &Path, meta: &ContainerMeta, h: Sha256) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad(path, format!("payload is longer than shape {:?} needs", meta.shape)));
    }
    let hash = format!("sha256:{}", hex::encode(h.finalize()));
    if hash != meta.content_hash {
        return Err(bad(path, format!("content hash {hash} does not match {}", meta.content_hash)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SnapshotContainer {
        let payload = vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, 0.1, -2.5];
        SnapshotContainer::new("snapshots", "ks", [2, 3], 10.0, 0.125, payload)
            .unwrap()
            .with_extra(serde_json::json!({"seed": 7}))
    }

    #[test]
    fn layout() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"OPNF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + meta_len + 6 * 8);
        let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();
        assert_eq!(meta["shape"], serde_json::json!([2, 3]));
        assert_eq!(meta["system"], "ks");
        // row-major: second value of the payload is row 0, column 1
        let second = f64::from_le_bytes(bytes[16 + meta_len + 8..16 + meta_len + 16].try_into().unwrap());
        assert_eq!(second.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn file_round_trip_and_snapshot_view() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.opnf");
        let c = sample();
        c.write(&path).unwrap();
        let back = SnapshotContainer::read(&path).unwrap();
        assert_eq!(back, c);
        let s = back.to_snapshots().unwrap();
        assert_eq!(s.column(1), &[-0.0, 0.1]);
        assert_eq!(s.t0(), 10.0);
    }

    #[test]
    fn corruption_is_detected() {
        let c = sample();
        let p = Path::new("x.opnf");
        let mut bytes = c.to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(SnapshotContainer::from_bytes(&bytes, p), Err(Error::Format { .. })));
        let good = c.to_bytes().unwrap();
        assert!(SnapshotContainer::from_bytes(&good[..good.len() - 8], p).is_err());
        let mut wrong_magic = good.clone();
        wrong_magic[0] = b'X';
        assert!(SnapshotContainer::from_bytes(&wrong_magic, p).is_err());
        assert!(SnapshotContainer::new("x", "y", [2, 2], 0.0, 1.0, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_round_trip_bit_exactly(bits in prop::collection::vec(any::<u64>(), 0..40), rows in 1usize..4) {
            let k = bits.len() / rows;
            let payload: Vec<f64> = bits[..rows * k].iter().map(|b| f64::from_bits(*b)).collect();
            let c = SnapshotContainer::new("snapshots", "synthetic", [rows, k], 0.0, 1.0, payload).unwrap();
            let back = SnapshotContainer::from_bytes(&c.to_bytes().unwrap(), Path::new("p")).unwrap();
            let same = back.payload.iter().zip(&c.payload).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(back.meta.shape, [rows, k]);
        }
    }
}
