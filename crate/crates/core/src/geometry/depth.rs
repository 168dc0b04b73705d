use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel metric depth (camera-space `z`) with a validity flag.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

/// JSON sidecar for the raw `f32` depth file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthHeader {
    pub width: usize,
    pub height: usize,
    pub units: String,
}

impl DepthMap {
    /// Pixels with value `<= 0` are marked invalid. Non-finite values are
    /// rejected.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|&v| v > 0.0).collect();
        Self::with_validity(width, height, values, valid)
    }

    pub fn with_validity(
        width: usize,
        height: usize,
        mut values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::shape(width * height, (values.len(), valid.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite depth at pixel {i}")));
        }
        for (v, ok) in values.iter_mut().zip(&valid) {
            if *ok && *v <= 0.0 {
                return Err(Error::invalid("valid depth must be positive"));
            }
            if !*ok {
                *v = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, p: usize) -> Option<f64> {
        self.valid[p].then_some(self.values[p])
    }

    /// Multiplies every valid depth by `factor` (a global scale error).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_validity(
            self.width,
            self.height,
            self.values.iter().map(|v| v * factor).collect(),
            self.valid.clone(),
        )
    }

    /// Writes little-endian `f32` values (invalid pixels as 0) and a JSON header.
    pub fn write(&self, raw_path: impl AsRef<Path>, header_path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for (v, ok) in self.values.iter().zip(&self.valid) {
            let v = if *ok { *v as f32 } else { 0.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let raw_path = raw_path.as_ref();
        fs::write(raw_path, bytes).map_err(|e| Error::file(raw_path, e))?;
        let header = DepthHeader {
            width: self.width,
            height: self.height,
            units: "scene".into(),
        };
        let header_path = header_path.as_ref();
        fs::write(header_path, serde_json::to_vec_pretty(&header)?)
            .map_err(|e| Error::file(header_path, e))?;
        Ok(())
    }

    pub fn read(raw_path: impl AsRef<Path>, header_path: impl AsRef<Path>) -> Result<Self> {
        let header_path = header_path.as_ref();
        let header: DepthHeader = serde_json::from_slice(
            &fs::read(header_path).map_err(|e| Error::file(header_path, e))?,
        )?;
        let raw_path = raw_path.as_ref();
        let bytes = fs::read(raw_path).map_err(|e| Error::file(raw_path, e))?;
        if bytes.len() != header.width * header.height * 4 {
            return Err(Error::invalid(format!(
                "{}: expected {} bytes, found {}",
                raw_path.display(),
                header.width * header.height * 4,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(header.width, header.height, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_rejected() {
        assert!(DepthMap::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn non_positive_marked_invalid() {
        let d = DepthMap::new(3, 1, vec![1.0, 0.0, -2.0]).unwrap();
        assert_eq!(d.validity(), &[true, false, false]);
        assert_eq!(d.values()[2], 0.0);
    }

    #[test]
    fn raw_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap::new(2, 2, vec![1.5, 0.0, 2.25, 3.0]).unwrap();
        let (raw, hdr) = (dir.path().join("d.f32"), dir.path().join("d.json"));
        d.write(&raw, &hdr).unwrap();
        assert_eq!(std::fs::read(&raw).unwrap().len(), 16);
        assert_eq!(DepthMap::read(&raw, &hdr).unwrap(), d);
        let header: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&hdr).unwrap()).unwrap();
        assert_eq!(header["units"], "scene");
    }
}
