//! In-memory image, depth and mask planes plus lossless PNG IO.
//!
//! Pixel values are `f64` in `[0,1]` at rest; intermediate arithmetic (gain,
//! unclipped flare sums) may leave that range and is brought back by
//! [`clip01`]. All types are immutable after construction.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Whether a plane holds linear-light or display-encoded values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Encoding {
    Linear,
    GammaEncoded,
}

/// Output bit depth for [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Row-major, channel-interleaved real-valued raster (1 or 3 channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<f64>,
    encoding: Encoding,
}

impl ImagePlane {
    pub fn new(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<f64>,
        encoding: Encoding,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero dimension".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            encoding,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: f64, encoding: Encoding) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len], encoding)
    }

    pub fn zeros(width: u32, height: u32, channels: u8, encoding: Encoding) -> Result<Self> {
        Self::filled(width, height, channels, 0.0, encoding)
    }

    /// Builds a plane by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: u32,
        height: u32,
        channels: u8,
        encoding: Encoding,
        mut f: impl FnMut(u32, u32, u8) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * channels as usize);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data, encoding)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> f64 {
        self.data[self.index(x, y, c)]
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Same geometry, transformed samples. The closure must keep values finite.
    pub fn map(&self, encoding: Encoding, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.width, self.height, self.channels, data, encoding)
    }

    /// Rec.601 luminance; returns a single-channel plane. A 1-channel input
    /// is returned unchanged.
    pub fn luminance(&self) -> ImagePlane {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width as usize * self.height as usize);
        for px in self.data.chunks_exact(3) {
            data.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
        }
        ImagePlane {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
            encoding: self.encoding,
        }
    }
}

/// Per-pixel positive relative depth aligned to a background (larger = farther).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDepth("zero dimension".into()));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidDepth(format!(
                "data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if !data.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidDepth(
                "depth values must be finite and strictly positive".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Rescales so the farthest pixel maps to 1.0. Depth is relative, so this
    /// leaves every downstream ratio unchanged.
    pub fn normalize_by_max(&self) -> DepthMap {
        let max = self.data.iter().cloned().fold(f64::MIN, f64::max);
        let data = self.data.iter().map(|v| v / max).collect();
        DepthMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Binary inclusion mask (1 = in region / included in evaluation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask("zero dimension".into()));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidMask(format!(
                "data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![true; width as usize * height as usize])
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, vec![false; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn count_included(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: other.width,
                got_h: other.height,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a || *b)
            .collect();
        RegionMask::new(self.width, self.height, data)
    }

    /// Row-major positions of included pixels.
    pub fn included_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }
}

/// Clamps every sample into `[0,1]`.
pub fn clip01(img: &ImagePlane) -> ImagePlane {
    img.map(img.encoding(), |v| v.clamp(0.0, 1.0))
        .expect("clamp keeps values finite")
}

const GAMMA_RANGE: (f64, f64) = (1.0, 3.0);

fn check_gamma(gamma: f64) -> Result<()> {
    if !(GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(&gamma) {
        return Err(Error::InvalidParam(format!(
            "gamma {gamma} outside [{}, {}]",
            GAMMA_RANGE.0, GAMMA_RANGE.1
        )));
    }
    Ok(())
}

fn check_unit_range(img: &ImagePlane, op: &str) -> Result<()> {
    if !img.is_unit_range() {
        return Err(Error::InvalidImage(format!(
            "{op} requires values in [0,1]"
        )));
    }
    Ok(())
}

/// Decodes with a pure power law: `v^gamma`. Gamma must lie in `[1,3]`.
pub fn to_linear(img: &ImagePlane, gamma: f64) -> Result<ImagePlane> {
    check_gamma(gamma)?;
    check_unit_range(img, "to_linear")?;
    if gamma == 1.0 {
        return img.map(Encoding::Linear, |v| v);
    }
    img.map(Encoding::Linear, |v| v.powf(gamma))
}

/// Encodes with a pure power law: `v^(1/gamma)`.
pub fn to_encoded(img: &ImagePlane, gamma: f64) -> Result<ImagePlane> {
    check_gamma(gamma)?;
    check_unit_range(img, "to_encoded")?;
    if gamma == 1.0 {
        return img.map(Encoding::GammaEncoded, |v| v);
    }
    let inv = 1.0 / gamma;
    img.map(Encoding::GammaEncoded, |v| v.powf(inv))
}

fn open_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn decode_samples(info: &png::OutputInfo, buf: &[u8], path: &Path) -> Result<(u8, u32, Vec<u64>)> {
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1u8,
        png::ColorType::Rgb => 3u8,
        other => {
            return Err(Error::UnsupportedImage(format!(
                "{}: unsupported color type {other:?} (expect grayscale or RGB)",
                path.display()
            )))
        }
    };
    let (max_code, codes): (u32, Vec<u64>) = match info.bit_depth {
        png::BitDepth::Eight => (255, buf.iter().map(|&b| b as u64).collect()),
        png::BitDepth::Sixteen => (
            65535,
            buf.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as u64)
                .collect(),
        ),
        other => {
            return Err(Error::UnsupportedImage(format!(
                "{}: unsupported bit depth {other:?} (expect 8 or 16)",
                path.display()
            )))
        }
    };
    if info.width == 0 || info.height == 0 {
        return Err(Error::UnsupportedImage(format!(
            "{}: zero-dimension image",
            path.display()
        )));
    }
    Ok((channels, max_code, codes))
}

/// Loads an 8- or 16-bit grayscale/RGB PNG; values are `code / (2^depth - 1)`.
pub fn load_image(path: impl AsRef<Path>, expected_encoding: Encoding) -> Result<ImagePlane> {
    let path = path.as_ref();
    let (info, buf) = open_png(path)?;
    let (channels, max_code, codes) = decode_samples(&info, &buf, path)?;
    // divide, never multiply by a reciprocal: `c / max` and `c * (1/max)`
    // disagree by an ulp for some codes and the roundtrip must be exact
    let max = max_code as f64;
    let data = codes.iter().map(|&c| c as f64 / max).collect();
    ImagePlane::new(info.width, info.height, channels, data, expected_encoding)
}

/// Writes a PNG with `round(v * (2^depth - 1))` codes (round half away from
/// zero). Byte output is deterministic for identical inputs.
pub fn save_image(img: &ImagePlane, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    check_unit_range(img, "save_image")?;
    let path = path.as_ref();
    let max = depth.max_code();
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width(), img.height());
    encoder.set_color(match img.channels() {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    });
    encoder.set_depth(match depth {
        BitDepth::Eight => png::BitDepth::Eight,
        BitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let mut writer = encoder.write_header()?;
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => img.data().iter().map(|&v| (v * max).round() as u8).collect(),
        BitDepth::Sixteen => img
            .data()
            .iter()
            .flat_map(|&v| ((v * max).round() as u16).to_be_bytes())
            .collect(),
    };
    writer.write_image_data(&bytes)?;
    Ok(())
}

/// Loads a 16-bit grayscale depth PNG. Code `c` maps to `c / 65535`
/// (normalized relative depth in `[1/65535, 1]`); code 0 is rejected.
pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let (info, buf) = open_png(path)?;
    let (channels, max_code, codes) = decode_samples(&info, &buf, path)?;
    if channels != 1 || max_code != 65535 {
        return Err(Error::UnsupportedImage(format!(
            "{}: depth files must be 16-bit grayscale",
            path.display()
        )));
    }
    if codes.contains(&0) {
        return Err(Error::InvalidDepth(format!(
            "{}: code value 0 is invalid in depth files",
            path.display()
        )));
    }
    let data = codes.iter().map(|&c| c as f64 / 65535.0).collect();
    DepthMap::new(info.width, info.height, data)
}

/// Writes a depth map as a 16-bit grayscale PNG. Values must already be
/// normalized so every code rounds into `1..=65535`.
pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let codes: Vec<u16> = depth
        .data()
        .iter()
        .map(|&v| {
            let code = (v * 65535.0).round();
            if !(1.0..=65535.0).contains(&code) {
                return Err(Error::InvalidDepth(format!(
                    "depth value {v} outside the storable range [1/65535, 1]"
                )));
            }
            Ok(code as u16)
        })
        .collect::<Result<_>>()?;
    let file = File::create(path.as_ref())?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), depth.width(), depth.height());
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder.write_header()?;
    let bytes: Vec<u8> = codes.iter().flat_map(|c| c.to_be_bytes()).collect();
    writer.write_image_data(&bytes)?;
    Ok(())
}

/// Loads a grayscale/RGB PNG as a binary mask: any nonzero code maps to 1.
pub fn load_mask(path: impl AsRef<Path>) -> Result<RegionMask> {
    let path = path.as_ref();
    let (info, buf) = open_png(path)?;
    let (channels, _max, codes) = decode_samples(&info, &buf, path)?;
    let data = codes
        .chunks_exact(channels as usize)
        .map(|px| px.iter().any(|&c| c != 0))
        .collect();
    RegionMask::new(info.width, info.height, data)
}

/// Writes a mask as an 8-bit grayscale PNG (0 / 255).
pub fn save_mask(mask: &RegionMask, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), mask.width(), mask.height());
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    writer.write_image_data(&bytes)?;
    Ok(())
}
