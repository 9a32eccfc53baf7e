//! Binary core files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"TTE1"  u32 d
//! d x { u32 m_k, u32 n_k, u32 R_{k-1}, u32 R_k }
//! d x core data, f64, row-major over (R_{k-1}, m_k, n_k, R_k)
//! ```
//!
//! The header does not carry the served table size; a JSON sidecar
//! (`<file>.json`) holds the full [`TtConfig`]. Without a sidecar the table
//! is assumed unpadded.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;

use super::{TtConfig, TtEmbedding};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTE1";

pub fn encode(emb: &TtEmbedding) -> Vec<u8> {
    let config = emb.config();
    let d = config.num_cores();
    let mut out = Vec::with_capacity(8 + 16 * d + 8 * config.count_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for k in 0..d {
        let [rp, m, n, rn] = config.core_shape(k);
        for v in [m, n, rp, rn] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for core in emb.cores() {
        for x in core.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::ShapeMismatch(format!(
                "core file truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Decode core data. `config` supplies the served size; when `None` the
/// table is taken to be exactly `prod(m) x prod(n)`.
pub fn decode(bytes: &[u8], config: Option<TtConfig>) -> Result<TtEmbedding> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ShapeMismatch("bad magic, expected TTE1".into()));
    }
    let d = r.u32()?;
    let mut shapes = Vec::with_capacity(d);
    for _ in 0..d {
        let m = r.u32()?;
        let n = r.u32()?;
        let rp = r.u32()?;
        let rn = r.u32()?;
        shapes.push([rp, m, n, rn]);
    }
    let config = match config {
        Some(c) => c,
        None => {
            let m: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
            let n: Vec<usize> = shapes.iter().map(|s| s[2]).collect();
            let mut ranks: Vec<usize> = shapes.iter().map(|s| s[0]).collect();
            ranks.push(shapes.last().map(|s| s[3]).unwrap_or(1));
            TtConfig::new(m.iter().product(), n.iter().product(), m, n, ranks)?
        }
    };
    if config.num_cores() != d {
        return Err(Error::ShapeMismatch(format!(
            "header has {d} cores, config has {}",
            config.num_cores()
        )));
    }
    let mut cores = Vec::with_capacity(d);
    for (k, shape) in shapes.iter().enumerate() {
        if *shape != config.core_shape(k) {
            return Err(Error::ShapeMismatch(format!(
                "header core {k} shape {shape:?} disagrees with config {:?}",
                config.core_shape(k)
            )));
        }
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let core = Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), data)
            .expect("length matches shape");
        cores.push(core);
    }
    if r.pos != bytes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after core data",
            bytes.len() - r.pos
        )));
    }
    TtEmbedding::new(config, cores)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the core file and its JSON sidecar.
pub fn save(emb: &TtEmbedding, path: &Path) -> Result<()> {
    fs::write(path, encode(emb))?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(emb.config())?,
    )?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TtEmbedding> {
    let bytes = fs::read(path)?;
    let side = sidecar_path(path);
    let config = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(side)?)?)
    } else {
        None
    };
    decode(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::uniform_ranks;

    fn sample() -> TtEmbedding {
        let c = TtConfig::new(5, 3, vec![2, 3], vec![2, 2], uniform_ranks(2, 2)).unwrap();
        let mut e = TtEmbedding::zeros(c);
        for core in e.cores_mut() {
            for (t, x) in core.iter_mut().enumerate() {
                *x = t as f64 * 0.5 - 1.25;
            }
        }
        e
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"TTE1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        // core 0: m=2, n=2, R0=1, R1=2
        let h: Vec<u32> = bytes[8..24]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(h, vec![2, 2, 1, 2]);
        // first value of core 0 follows the two core headers
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), -1.25);
        assert_eq!(bytes.len(), 8 + 32 + 8 * (8 + 12));
    }

    #[test]
    fn file_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tte");
        let e = sample();
        save(&e, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.config().num_rows(), 5);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1], None).is_err());
        bytes.push(0);
        assert!(decode(&bytes, None).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes, None).is_err());
    }
}
