//! Raster image types and their on-disk formats.
//!
//! [`GrayImage`] is the single-channel currency of the enhancement pipeline;
//! [`MultiFeatureImage`] is the three-channel composition it produces.
//! Grayscale input is accepted as 8/16-bit PNG or plain/raw PGM. Enhanced
//! output is stored losslessly in an `MFI1` sidecar (little-endian f64
//! planes) next to an RGB preview PNG.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Magic bytes of the multi-feature sidecar format.
pub const MFI_MAGIC: &[u8; 4] = b"MFI1";

/// A real-valued single-channel raster image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major pixel data, validating finiteness.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// An all-`value` image.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Loads a grayscale image from 8/16-bit PNG or plain/raw PGM.
    ///
    /// 8-bit sources are scaled to [0,1] by 255, 16-bit by 65535, so both
    /// depths land on the same physical scale.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let decoded = image::load_from_memory(&bytes)?;
        Ok(Self::from_dynamic(&decoded))
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        // to_luma16 widens 8-bit samples by 257, so one divisor covers both depths.
        let gray = img.to_luma16();
        let pixels = gray.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
        Self {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Writes the image as 16-bit grayscale PNG, clamping to [0,1].
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(
            self.width as u32,
            self.height as u32,
            |x, y| {
                let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
                Luma([(v * 65535.0).round() as u16])
            },
        );
        buf.save(path)?;
        Ok(())
    }
}

/// A three-channel real-valued image: channel 0 = LwPA, channel 1 = LPE
/// rescaled to [0,1], channel 2 = ELEA.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFeatureImage {
    width: usize,
    height: usize,
    channels: [Vec<f64>; 3],
}

impl MultiFeatureImage {
    /// Builds the image from three channel planes, validating shape and the
    /// [0,1] range invariant.
    pub fn from_planes(
        width: usize,
        height: usize,
        channels: [Vec<f64>; 3],
    ) -> Result<Self> {
        for (i, c) in channels.iter().enumerate() {
            if c.len() != width * height {
                return Err(Error::InvalidImage(format!(
                    "channel {i} has {} values, expected {}",
                    c.len(),
                    width * height
                )));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidImage(format!(
                    "channel {i} has values outside [0,1]"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            channels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Borrows one channel plane (0 = LwPA, 1 = LPE, 2 = ELEA).
    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    /// Returns the exact planes used at composition.
    pub fn into_planes(self) -> [Vec<f64>; 3] {
        self.channels
    }

    /// Serializes to the lossless sidecar: magic `MFI1`, u32 width, u32
    /// height, then 3 planes row-major as little-endian f64.
    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(12 + self.width * self.height * 3 * 8);
        out.extend_from_slice(MFI_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for plane in &self.channels {
            for v in plane {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads an `MFI1` sidecar written by [`save_sidecar`](Self::save_sidecar).
    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[0..4] != MFI_MAGIC {
            return Err(Error::InvalidImage(format!(
                "{} is not an MFI1 sidecar",
                path.display()
            )));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let plane_len = width * height;
        if bytes.len() != 12 + plane_len * 3 * 8 {
            return Err(Error::InvalidImage(format!(
                "sidecar payload length {} does not match {width}x{height}x3",
                bytes.len() - 12
            )));
        }
        let mut channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let mut offset = 12;
        for plane in channels.iter_mut() {
            plane.reserve_exact(plane_len);
            for _ in 0..plane_len {
                plane.push(f64::from_le_bytes(
                    bytes[offset..offset + 8].try_into().unwrap(),
                ));
                offset += 8;
            }
        }
        Self::from_planes(width, height, channels)
    }

    /// Writes the three channels mapped to RGB, for visual inspection.
    pub fn save_rgb_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(
            self.width as u32,
            self.height as u32,
            |x, y| {
                let i = y as usize * self.width + x as usize;
                let q = |c: usize| (self.channels[c][i].clamp(0.0, 1.0) * 255.0).round() as u8;
                Rgb([q(0), q(1), q(2)])
            },
        );
        buf.save(path)?;
        Ok(())
    }

    /// Renders a horizontal triptych (LwPA | LPE | ELEA), each panel
    /// min-max scaled for display.
    pub fn save_preview_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width, self.height);
        let mut buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::new((w * 3) as u32, h as u32);
        for (c, plane) in self.channels.iter().enumerate() {
            let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            for y in 0..h {
                for x in 0..w {
                    let v = (plane[y * w + x] - lo) / span;
                    buf.put_pixel(
                        (c * w + x) as u32,
                        y as u32,
                        Luma([(v * 255.0).round() as u8]),
                    );
                }
            }
        }
        buf.save(path)?;
        Ok(())
    }
}
