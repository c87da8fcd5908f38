//! Dense row-major images with 1 (intensity) or 3 (RGB) channels.
//!
//! Two on-disk encodings: 8-bit PNG for inspection and a raw little-endian
//! `f32` dump that tests reload without quantization.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

const DUMP_MAGIC: &[u8; 8] = b"EVSPF32\0";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_rgb(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height, 3);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what}: shape {}x{}x{} does not match {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds every value through `f32`, matching what a float dump stores.
    pub fn round_to_f32(&self) -> Image {
        self.map(|v| v as f32 as f64)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes)
                .ok_or_else(|| Error::invalid("png buffer size"))?
                .save(path.as_ref())?,
            3 => image::RgbImage::from_raw(w, h, bytes)
                .ok_or_else(|| Error::invalid("png buffer size"))?
                .save(path.as_ref())?,
            c => return Err(Error::invalid(format!("cannot encode {c}-channel image as png"))),
        }
        Ok(())
    }

    /// Loads an 8-bit PNG as an RGB image with values in `[0, 1]`.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let rgb = image::open(path)?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
        Image::from_vec(w as usize, h as usize, 3, data)
    }

    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
        out.write_all(DUMP_MAGIC)?;
        for v in [DUMP_VERSION, self.width as u32, self.height as u32, self.channels as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        for &v in &self.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_dump(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: msg.to_string(),
        };
        if bytes.len() < 24 || &bytes[..8] != DUMP_MAGIC {
            return Err(bad("not a float image dump"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != DUMP_VERSION {
            return Err(bad("unsupported float dump version"));
        }
        let (w, h, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let body = &bytes[24..];
        if body.len() != w * h * c * 4 {
            return Err(bad("float dump truncated"));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Image::from_vec(w, h, c, data)
    }

    /// Loads either encoding, chosen by file extension (`.png` or anything else as a dump).
    pub fn read_any(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") => Image::read_png(path),
            _ => Image::read_dump(path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip_is_exact_for_f32_values() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 7 + y * 3 + c) as f64 / 17.0).round_to_f32();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.f32");
        img.write_dump(&path).unwrap();
        assert_eq!(Image::read_dump(&path).unwrap(), img);
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let img = Image::from_fn(4, 4, 3, |x, y, _| (x + 4 * y) as f64 / 15.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        img.write_png(&path).unwrap();
        let back = Image::read_png(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn missing_dump_is_reported() {
        let err = Image::read_dump("/nonexistent/x.f32").unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
