use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::SolveReport;
use crate::error::{Error, Result};
use crate::image::ImageGrid;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrameChecksum {
    pub frame: usize,
    /// SHA-256 of the frame's `f64` values, little-endian.
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn grid_sha256(g: &ImageGrid) -> String {
    let mut h = Sha256::new();
    for v in g.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl SolveReport {
    pub fn frame_checksums(&self) -> Vec<FrameChecksum> {
        self.output
            .frames()
            .iter()
            .enumerate()
            .map(|(frame, g)| FrameChecksum {
                frame,
                sha256: grid_sha256(g),
            })
            .collect()
    }

    /// Everything except wall-clock timings, which vary run to run.
    pub fn summary_json(&self, config_echo: &serde_json::Value) -> serde_json::Value {
        let shape = self.output.frame_shape();
        json!({
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": config_echo,
            "frames": self.output.len(),
            "frame_shape": [shape.height, shape.width, shape.channels],
            "poses": self.poses,
            "coverage": self.coverage,
            "source_indices": self.source_indices,
            "pose_distances": self.pose_distances,
            "denoiser_calls": self.denoiser_calls,
            "clamped_lambda_records": self.lambda_trace.clamped().count(),
            "frame_checksums": self.frame_checksums(),
            "stages": self.stages,
        })
    }

    /// Writes `frames/frame_NNN.png`, `lambda_trace.csv`, `report.json` and
    /// `timings.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, config_echo: &serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).map_err(|e| Error::file(&frames, e))?;
        for (i, g) in self.output.frames().iter().enumerate() {
            g.write_png(frames.join(format!("frame_{i:03}.png")))?;
        }
        self.lambda_trace.save_csv(dir.join("lambda_trace.csv"))?;
        write_json(&dir.join("report.json"), &self.summary_json(config_echo))?;
        let timings = json!({
            "step_seconds": self.step_seconds,
            "total_seconds": self.step_seconds.iter().sum::<f64>(),
        });
        write_json(&dir.join("timings.json"), &timings)
    }
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::file(path, e))
}
