//! Interleaved HWC images with values in `[−1, 1]`, plus PPM/PNG export.
//!
//! Pixel quantisation is `round((x + 1) / 2 · 255)` after clamping, so a
//! PPM written from an image is a bit-specified function of its values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "image buffer has {} values, expected {height}×{width}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn clamp_unit(&mut self) {
        for x in &mut self.data {
            *x = x.max(-T::one()).min(T::one());
        }
    }

    /// 8-bit quantisation of `[−1, 1]` values.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|x| {
                let v = ((x.as_f64().clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round();
                v as u8
            })
            .collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| T::of(b as f64 / 255.0 * 2.0 - 1.0)).collect();
        Self::from_vec(height, width, channels, data)
    }

    /// Binary PPM (P6, maxval 255). Requires three channels.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::shape("PPM export needs 3 channels"));
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.to_u8())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut header = Vec::new();
        // magic, width, height, maxval separated by whitespace/comments
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Dataset(format!("{}: truncated PPM header", path.display())));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_string));
        }
        if header[0] != "P6" || header[3] != "255" {
            return Err(Error::Dataset(format!("{}: only 8-bit P6 PPM is supported", path.display())));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Dataset(format!("{}: bad PPM dimension {s:?}", path.display())))
        };
        let (w, h) = (parse(&header[1])?, parse(&header[2])?);
        let mut bytes = vec![0u8; w * h * 3];
        r.read_exact(&mut bytes)?;
        Self::from_u8(h, w, 3, &bytes)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::shape(format!("PNG export does not support {c} channels"))),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&self.to_u8())
            .map_err(|e| Error::Png(e.to_string()))?;
        writer.finish().map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }
}
