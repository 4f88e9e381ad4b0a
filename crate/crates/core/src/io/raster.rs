//! In-memory rasters and the float raster file format.
//!
//! Depth, normal and confidence maps are stored on disk as little-endian f32
//! with a fixed 16-byte header: the magic bytes `MCGS`, then width, height and
//! channel count as little-endian u32. Data is row-major with interleaved
//! channels. Color images destined for humans go through PNG instead.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const RASTER_MAGIC: [u8; 4] = *b"MCGS";

/// Row-major raster with `channels` interleaved f32 samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u32) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn filled(width: u32, height: u32, channels: u32, value: f32) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value; (width * height * channels) as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        ((y * self.width + x) * self.channels) as usize
    }

    #[inline]
    pub fn px(&self, x: u32, y: u32) -> &[f32] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    #[inline]
    pub fn px_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let o = self.offset(x, y);
        let c = self.channels as usize;
        &mut self.data[o..o + c]
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> f32 {
        self.data[self.offset(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u32, v: f32) {
        let o = self.offset(x, y);
        self.data[o + c as usize] = v;
    }

    /// Bilinear sample of one channel at a continuous pixel position.
    /// Positions are clamped to the valid interpolation domain.
    pub fn bilinear(&self, x: f64, y: f64, c: u32) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (xc.floor() as u32).min(self.width - 1);
        let y0 = (yc.floor() as u32).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = xc - x0 as f64;
        let ay = yc - y0 as f64;
        let v00 = self.get(x0, y0, c) as f64;
        let v10 = self.get(x1, y0, c) as f64;
        let v01 = self.get(x0, y1, c) as f64;
        let v11 = self.get(x1, y1, c) as f64;
        (v00 * (1.0 - ax) + v10 * ax) * (1.0 - ay) + (v01 * (1.0 - ax) + v11 * ax) * ay
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&RASTER_MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&self.channels.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if header[0..4] != RASTER_MAGIC {
            return Err(Error::Parse(format!(
                "bad raster magic {:?}, expected {:?}",
                &header[0..4],
                RASTER_MAGIC
            )));
        }
        let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let channels = u32::from_le_bytes(header[12..16].try_into().unwrap());
        let count = (width as usize) * (height as usize) * (channels as usize);
        if count > (1 << 30) {
            return Err(Error::Parse(format!(
                "raster dimensions {width}x{height}x{channels} unreasonably large"
            )));
        }
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Raster::read_from(&mut f)
    }

    /// Encode a 1- or 3-channel raster as 8-bit PNG, values clamped to [0, 1].
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                let img = image::GrayImage::from_raw(self.width, self.height, buf)
                    .expect("buffer size matches dimensions");
                img.save(path)
                    .map_err(|e| Error::Parse(format!("png encode: {e}")))
            }
            3 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                let img = image::RgbImage::from_raw(self.width, self.height, buf)
                    .expect("buffer size matches dimensions");
                img.save(path)
                    .map_err(|e| Error::Parse(format!("png encode: {e}")))
            }
            c => Err(Error::invalid(format!("cannot encode {c}-channel raster as png"))),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Parse(format!("png decode: {e}")))?;
        let rgb = img.to_rgb8();
        let (width, height) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Raster {
            width,
            height,
            channels: 3,
            data,
        })
    }
}
