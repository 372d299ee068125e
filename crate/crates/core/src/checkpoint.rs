//! Self-describing model files.
//!
//! Layout:
//!
//! ```text
//! b"VAEC"  version:u8 = 1  header_len:u32 LE  header: UTF-8 JSON
//! W1 b1 W_mu b_mu W_logvar b_logvar V1 c1 V_out c_out   (f32 LE, row-major)
//! ```
//!
//! The payload length must match the dimensions declared in the header
//! exactly; anything else is a [`Error::Format`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MusicModel;
use crate::roll::PitchBand;
use crate::vae::{ModelDims, ModelParameters, TENSOR_NAMES};
use crate::window::{WindowSpec, FLATTEN_ORDER};

pub const MAGIC: &[u8; 4] = b"VAEC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MusicModel,
    pub beta: f64,
    pub threshold: Option<f64>,
    /// Free-form provenance (seed, steps, split settings, creation time).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    window_spec: WindowSpec,
    pitch_lo: u8,
    pitch_hi: u8,
    beta: f64,
    threshold: Option<f64>,
    flatten_order: String,
    tensors: Vec<String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: MusicModel, beta: f64) -> Self {
        Self {
            model,
            beta,
            threshold: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dims: self.model.dims(),
            window_spec: self.model.window,
            pitch_lo: self.model.band.lo,
            pitch_hi: self.model.band.hi,
            beta: self.beta,
            threshold: self.threshold,
            flatten_order: FLATTEN_ORDER.to_owned(),
            tensors: TENSOR_NAMES.iter().map(|s| s.to_string()).collect(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let n_params = self.model.params.len();
        let mut out = Vec::with_capacity(9 + header.len() + 4 * n_params);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for tensor in self.model.params.tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |msg: String| Error::Format(msg);
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(fmt("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(fmt(format!("unsupported version {}", bytes[4])));
        }
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let header_end = 9usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt("header runs past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[9..header_end])
            .map_err(|e| fmt(format!("bad header: {e}")))?;
        if header.flatten_order != FLATTEN_ORDER {
            return Err(fmt(format!("unsupported flatten order {}", header.flatten_order)));
        }
        if header.tensors != TENSOR_NAMES {
            return Err(fmt(format!("unexpected tensor order {:?}", header.tensors)));
        }
        header.dims.validate().map_err(|e| fmt(e.to_string()))?;

        let payload = &bytes[header_end..];
        let expected = header.dims.num_params() * 4;
        if payload.len() != expected {
            return Err(fmt(format!(
                "payload has {} bytes, header dimensions need {expected}",
                payload.len()
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let tensors = header
            .dims
            .shapes()
            .iter()
            .map(|(r, c)| floats.by_ref().take(r * c).collect())
            .collect();
        let params = ModelParameters::from_tensors(header.dims, tensors)?;
        if !params.is_finite() {
            return Err(fmt("non-finite parameter".into()));
        }
        let band = PitchBand::new(header.pitch_lo, header.pitch_hi).map_err(|e| fmt(e.to_string()))?;
        let model = MusicModel::new(params, header.window_spec, band).map_err(|e| fmt(e.to_string()))?;
        Ok(Self {
            model,
            beta: header.beta,
            threshold: header.threshold,
            metadata: header.metadata,
        })
    }
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path`.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&checkpoint.to_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let band = PitchBand::new(60, 61).unwrap();
        let spec = WindowSpec::new(1).unwrap();
        let params = ModelParameters::init(ModelDims::new(20, 4, 2).unwrap(), 3);
        let mut ckpt = Checkpoint::new(MusicModel::new(params, spec, band).unwrap(), 0.5);
        ckpt.threshold = Some(0.41);
        ckpt.metadata.insert("seed".into(), "3".into());
        ckpt
    }

    #[test]
    fn bytes_round_trip() {
        let ckpt = small();
        let bytes = ckpt.to_bytes();
        assert_eq!(&bytes[..5], b"VAEC\x01");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = small().to_bytes();
        for len in 0..bytes.len() {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..len]), Err(Error::Format(_))));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format(_))));
    }

    #[test]
    fn corrupt_headers() {
        let mut bytes = small().to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut bytes = small().to_bytes();
        bytes[4] = 2;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vaec");
        let ckpt = small();
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io(_))));
    }
}
