//! Dense `H x W x C` rasters used both as pixel images and as per-frame latents.
//!
//! Storage is row-major with interleaved channels: index `(y * W + x) * C + c`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.channels == 0 {
            return Err(Error::invalid("image needs at least one channel"));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry at flat index {bad}")));
        }
        Ok(Self { shape, data })
    }

    /// Builds a grid by evaluating `f(y, x, c)` for every entry.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let idx = (y * self.shape.width + x) * self.shape.channels + c;
        self.data[idx] = value;
    }

    /// All channels of the pixel at row-major index `p`.
    pub fn pixel(&self, p: usize) -> &[f64] {
        let c = self.shape.channels;
        &self.data[p * c..(p + 1) * c]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.shape.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.ensure_same_shape(other)?;
        Ok(ImageGrid {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn mse(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// 8-bit PNG. Values are clamped to `[0, 1]`. Supports 1 (gray), 2 (gray +
    /// alpha), 3 (RGB) and 4 (RGBA) channels.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = match self.shape.channels {
            1 => png::ColorType::Grayscale,
            2 => png::ColorType::GrayscaleAlpha,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::invalid(format!("cannot write {c}-channel image as PNG"))),
        };
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut encoder = png::Encoder::new(
            BufWriter::new(file),
            self.shape.width as u32,
            self.shape.height as u32,
        );
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&self.to_u8())
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }

    /// Reads an 8-bit PNG into `[0, 1]` values.
    pub fn read_png(path: impl AsRef<Path>) -> Result<ImageGrid> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        let channels = info.color_type.samples();
        let shape = Shape::new(info.height as usize, info.width as usize, channels);
        let data = buf[..info.buffer_size()]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        ImageGrid::from_vec(shape, data)
    }

    /// ASCII PPM (P3). Gray images are expanded to RGB; images with more than
    /// three channels keep the first three.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut out = BufWriter::new(file);
        self.encode_ppm(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn encode_ppm(&self, out: &mut impl Write) -> Result<()> {
        let bytes = self.to_u8();
        let c = self.shape.channels;
        writeln!(out, "P3")?;
        writeln!(out, "{} {}", self.shape.width, self.shape.height)?;
        writeln!(out, "255")?;
        for y in 0..self.shape.height {
            let row: Vec<String> = (0..self.shape.width)
                .map(|x| {
                    let p = &bytes[(y * self.shape.width + x) * c..][..c];
                    let rgb = if c >= 3 { [p[0], p[1], p[2]] } else { [p[0]; 3] };
                    format!("{} {} {}", rgb[0], rgb[1], rgb[2])
                })
                .collect();
            writeln!(out, "{}", row.join("  "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = ImageGrid::from_vec(Shape::new(1, 1, 1), vec![f64::NAN]);
        assert!(err.is_err());
    }

    #[test]
    fn png_roundtrip_quantises() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageGrid::from_fn(Shape::new(4, 5, 3), |y, x, c| {
            ((y * 5 + x) * 3 + c) as f64 / 60.0
        });
        let path = dir.path().join("a.png");
        img.write_png(&path).unwrap();
        let back = ImageGrid::read_png(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn ppm_header_and_clamping() {
        let img = ImageGrid::from_vec(Shape::new(1, 2, 1), vec![-1.0, 2.0]).unwrap();
        let mut out = Vec::new();
        img.encode_ppm(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "P3\n2 1\n255\n0 0 0  255 255 255\n");
    }
}
