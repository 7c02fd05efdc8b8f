//! RGB image and depth-map buffers shared across the crate, plus their
//! on-disk formats: 16-bit PNG for images, headered flat f64 binaries for
//! depth/height data.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Row-major RGB image with channels in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    /// len = width * height * 3
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuf {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len());
        for v in &self.data {
            buf.push((v.clamp(0.0, 1.0) * 65535.0).round() as u16);
        }
        let img = image::ImageBuffer::<image::Rgb<u16>, _>::from_vec(
            self.width as u32,
            self.height as u32,
            buf,
        )
        .ok_or_else(|| Error::Contract("image buffer size mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Config(format!("png save {}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Config(format!("png load {}: {e}", path.display())))?
            .into_rgb16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
        Ok(ImageBuf {
            width: w,
            height: h,
            data,
        })
    }
}

/// Per-pixel scalar map (ray depth or altitude). Negative values mean
/// "no surface hit".
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

pub const MISS: f64 = -1.0;

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        ScalarMap {
            width,
            height,
            data: vec![MISS; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_hit(&self, x: usize, y: usize) -> bool {
        self.at(x, y) >= 0.0
    }

    /// Grayscale PNG for quick inspection; values mapped to the map's
    /// finite range.
    pub fn save_png_normalized(&self, path: &Path) -> Result<()> {
        let hits: Vec<f64> = self.data.iter().copied().filter(|v| *v >= 0.0).collect();
        let lo = hits.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = hits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let buf: Vec<u8> = self
            .data
            .iter()
            .map(|&v| {
                if v < 0.0 {
                    0
                } else {
                    (((v - lo) / span) * 255.0).round() as u8
                }
            })
            .collect();
        let img = image::ImageBuffer::<image::Luma<u8>, _>::from_vec(
            self.width as u32,
            self.height as u32,
            buf,
        )
        .ok_or_else(|| Error::Contract("scalar map size mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Config(format!("png save {}: {e}", path.display())))
    }
}

/// Write a flat f64 array with a one-line text header:
/// `f64 <rows> <cols> <channels>\n` followed by little-endian payload.
pub fn write_f64_bin(path: &Path, rows: usize, cols: usize, channels: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols * channels {
        return Err(Error::Dim("f64 bin payload size mismatch".into()));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "f64 {rows} {cols} {channels}\n")?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_f64_bin(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut f = std::fs::File::open(path)?;
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    let nl = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("f64 bin: missing header".into()))?;
    let header = std::str::from_utf8(&raw[..nl])
        .map_err(|_| Error::Config("f64 bin: bad header".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "f64" {
        return Err(Error::Config(format!("f64 bin: bad header '{header}'")));
    }
    let rows: usize = parts[1].parse().map_err(|_| Error::Config("f64 bin: rows".into()))?;
    let cols: usize = parts[2].parse().map_err(|_| Error::Config("f64 bin: cols".into()))?;
    let channels: usize = parts[3].parse().map_err(|_| Error::Config("f64 bin: channels".into()))?;
    let payload = &raw[nl + 1..];
    let n = rows * cols * channels;
    if payload.len() != n * 8 {
        return Err(Error::Config("f64 bin: payload length mismatch".into()));
    }
    let mut data = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((rows, cols, channels, data))
}
