use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(step, frame)` weight evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub step: usize,
    pub frame: usize,
    pub sigma: f64,
    pub pose_dist: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    /// Empty when the closed form has no real value.
    pub lambda_raw: Option<f64>,
    pub lambda_clamped: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrace {
    pub records: Vec<LambdaRecord>,
}

impl LambdaTrace {
    pub fn push(&mut self, record: LambdaRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose raw value was replaced by a clamp bound.
    pub fn clamped(&self) -> impl Iterator<Item = &LambdaRecord> {
        self.records.iter().filter(|r| r.lambda_raw != Some(r.lambda_clamped))
    }

    pub fn frame(&self, frame: usize) -> impl Iterator<Item = &LambdaRecord> {
        self.records.iter().filter(move |r| r.frame == frame)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["step", "frame", "sigma", "pose_dist", "Q", "lambda_raw", "lambda_clamped", "ratio"])
                .map_err(csv_error)?;
        }
        for r in &self.records {
            w.serialize(r).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let records = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<std::result::Result<Vec<LambdaRecord>, _>>()
            .map_err(csv_error)?;
        Ok(Self { records })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("lambda trace csv: {e}"))
}
