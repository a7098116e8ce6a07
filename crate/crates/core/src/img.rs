//! Image buffers and on-disk formats.
//!
//! Colors live in linear `[0, 1]` as `f64` triples; quantization happens
//! only at write-out. Depth maps use a small raw little-endian format:
//!
//! ```text
//! magic  b"DMAP"        4 bytes
//! version u32           currently 1
//! width  u32
//! height u32
//! near   f32
//! far    f32
//! depth  f32 * width*height   row-major, scene units
//! valid  u8  * width*height   0 = invalid, 1 = valid
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::geometry::DepthMap;

pub type Rgb = [f64; 3];

/// Row-major RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![[0.0; 3]; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Mean over channels, used for grayscale conversion.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let c = self.get(x, y);
        (c[0] + c[1] + c[2]) / 3.0
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            for ch in p {
                buf.push((ch.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        buf
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = self.to_rgb8();
        image::save_buffer(
            path,
            &buf,
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.to_rgb8())?;
        Ok(())
    }

    /// Load a PNG, alpha-compositing onto a white background when the
    /// file carries an alpha channel.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgba8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(w, h);
        for (i, px) in img.pixels().enumerate() {
            let a = f64::from(px.0[3]) / 255.0;
            let c = [
                f64::from(px.0[0]) / 255.0,
                f64::from(px.0[1]) / 255.0,
                f64::from(px.0[2]) / 255.0,
            ];
            out.pixels[i] = [
                c[0] * a + (1.0 - a),
                c[1] * a + (1.0 - a),
                c[2] * a + (1.0 - a),
            ];
        }
        Ok(out)
    }
}

/// Save a boolean mask as an 8-bit grayscale PNG (255 = valid).
pub fn save_mask_png(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    let buf: Vec<u8> = mask.iter().map(|&v| if v { 255 } else { 0 }).collect();
    image::save_buffer(path, &buf, width as u32, height as u32, image::ColorType::L8)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)?.to_luma8();
    Ok(img.pixels().map(|p| p.0[0] >= 128).collect())
}

const DEPTH_MAGIC: &[u8; 4] = b"DMAP";
const DEPTH_VERSION: u32 = 1;

pub fn save_depth(depth: &DepthMap, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(DEPTH_MAGIC)?;
    f.write_all(&DEPTH_VERSION.to_le_bytes())?;
    f.write_all(&(depth.width as u32).to_le_bytes())?;
    f.write_all(&(depth.height as u32).to_le_bytes())?;
    f.write_all(&(depth.near as f32).to_le_bytes())?;
    f.write_all(&(depth.far as f32).to_le_bytes())?;
    for d in &depth.depth {
        f.write_all(&(*d as f32).to_le_bytes())?;
    }
    for v in &depth.valid {
        f.write_all(&[u8::from(*v)])?;
    }
    Ok(())
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| CoreError::Parse { file: path.to_path_buf(), message: m.to_string() };
    if bytes.len() < 24 || &bytes[0..4] != DEPTH_MAGIC {
        return Err(bad("not a DMAP depth file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != DEPTH_VERSION {
        return Err(bad("unsupported DMAP version"));
    }
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    let near = f64::from(f32_at(16));
    let far = f64::from(f32_at(20));
    let n = width * height;
    let expect = 24 + 4 * n + n;
    if bytes.len() != expect {
        return Err(bad("truncated DMAP payload"));
    }
    let mut depth = Vec::with_capacity(n);
    for i in 0..n {
        depth.push(f64::from(f32_at(24 + 4 * i)));
    }
    let valid = bytes[24 + 4 * n..].iter().map(|&b| b != 0).collect();
    Ok(DepthMap { width, height, near, far, depth, valid })
}
