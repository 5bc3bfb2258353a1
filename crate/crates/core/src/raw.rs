//! RAW Bayer frames, gain conventions and the `.raw16` + JSON sidecar format.
//!
//! Pixels are kept as `f64` DN values with the black level still included.
//! Quantization (round half to even) happens only when a frame is written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Colour filter array layout, named by the top-left 2x2 quad in reading order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Cfa {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

impl Cfa {
    fn quad(self) -> [Channel; 4] {
        use Channel::*;
        match self {
            Cfa::Rggb => [R, G, G, B],
            Cfa::Bggr => [B, G, G, R],
            Cfa::Grbg => [G, R, B, G],
            Cfa::Gbrg => [G, B, R, G],
        }
    }

    /// Colour of the site at (`row`, `col`).
    pub fn channel_at(self, row: usize, col: usize) -> Channel {
        self.quad()[(row & 1) * 2 + (col & 1)]
    }

    /// Layout seen after flipping the mosaic left to right (even width).
    pub fn mirrored_horizontal(self) -> Cfa {
        match self {
            Cfa::Rggb => Cfa::Grbg,
            Cfa::Grbg => Cfa::Rggb,
            Cfa::Bggr => Cfa::Gbrg,
            Cfa::Gbrg => Cfa::Bggr,
        }
    }
}

/// Analog gain, stored both in decibels and as the amplitude multiplier
/// `10^(db/20)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainValue {
    pub db: f64,
    pub linear: f64,
}

impl GainValue {
    pub fn from_db(db: f64) -> Self {
        Self { db, linear: 10f64.powf(db / 20.0) }
    }

    pub fn from_linear(linear: f64) -> Result<Self> {
        if !(linear > 0.0) || !linear.is_finite() {
            return Err(Error::InvalidArgument(format!("gain must be positive, got {linear}")));
        }
        Ok(Self { db: 20.0 * linear.log10(), linear })
    }
}

/// Frame metadata. This is exactly the JSON sidecar schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub width: usize,
    pub height: usize,
    pub cfa: Cfa,
    pub bit_depth: u32,
    pub black_level: u32,
    pub white_level: u32,
    pub gain_db: f64,
    #[serde(default)]
    pub normalized: bool,
}

impl FrameMeta {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::InvalidFrame(format!(
                "dimensions must be even and nonzero, got {}x{}",
                self.width, self.height
            )));
        }
        if !(8..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidFrame(format!("bit depth {} not in 8..=16", self.bit_depth)));
        }
        if self.black_level >= self.white_level || self.white_level > self.max_code() as u32 {
            return Err(Error::InvalidFrame(format!(
                "levels must satisfy black < white <= {}, got black {} white {}",
                self.max_code(),
                self.black_level,
                self.white_level
            )));
        }
        if !self.gain_db.is_finite() {
            return Err(Error::InvalidFrame("gain_db must be finite".into()));
        }
        Ok(())
    }

    pub fn max_code(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }

    pub fn gain(&self) -> GainValue {
        GainValue::from_db(self.gain_db)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn black(&self) -> f64 {
        f64::from(self.black_level)
    }

    pub fn white(&self) -> f64 {
        f64::from(self.white_level)
    }
}

/// A single-channel Bayer mosaic. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    meta: FrameMeta,
    pixels: Vec<f64>,
}

impl RawFrame {
    pub fn new(meta: FrameMeta, pixels: Vec<f64>) -> Result<Self> {
        meta.validate()?;
        if pixels.len() != meta.len() {
            return Err(Error::SizeMismatch { expected: meta.len(), actual: pixels.len() });
        }
        Ok(Self { meta, pixels })
    }

    pub fn filled(meta: FrameMeta, value: f64) -> Result<Self> {
        Self::new(meta, vec![value; meta.len()])
    }

    /// Same metadata, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.meta, pixels)
    }

    pub fn with_meta(&self, meta: FrameMeta) -> Result<Self> {
        Self::new(meta, self.pixels.clone())
    }

    pub fn meta(&self) -> &FrameMeta {
        &self.meta
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn width(&self) -> usize {
        self.meta.width
    }

    pub fn height(&self) -> usize {
        self.meta.height
    }

    pub fn cfa(&self) -> Cfa {
        self.meta.cfa
    }

    pub fn gain(&self) -> GainValue {
        self.meta.gain()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.meta.width + col]
    }

    /// Pixel values with the black level removed.
    pub fn black_subtracted(&self) -> Vec<f64> {
        let black = self.meta.black();
        self.pixels.iter().map(|&v| v - black).collect()
    }

    /// Map `[black, white]` onto `[0, 1]`, clamping outside values.
    pub fn normalize(&self) -> RawFrame {
        if self.meta.normalized {
            return self.clone();
        }
        let black = self.meta.black();
        let span = self.meta.white() - black;
        let pixels = self.pixels.iter().map(|&v| ((v - black) / span).clamp(0.0, 1.0)).collect();
        let meta = FrameMeta { black_level: 0, white_level: 1, normalized: true, ..self.meta };
        RawFrame { meta, pixels }
    }

    pub fn channel_mask(&self, channel: Channel) -> Vec<bool> {
        let (w, h, cfa) = (self.meta.width, self.meta.height, self.meta.cfa);
        (0..h).flat_map(|r| (0..w).map(move |c| cfa.channel_at(r, c) == channel)).collect()
    }

    /// Left-right flip of the mosaic; the CFA tag is updated so every site
    /// keeps its colour.
    pub fn mirror_horizontal(&self) -> RawFrame {
        let w = self.meta.width;
        let pixels = self.pixels.chunks(w).flat_map(|row| row.iter().rev().copied()).collect();
        let meta = FrameMeta { cfa: self.meta.cfa.mirrored_horizontal(), ..self.meta };
        RawFrame { meta, pixels }
    }
}

/// Ordered frames of one static scene with shared metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    frames: Vec<RawFrame>,
}

impl Burst {
    pub fn new(frames: Vec<RawFrame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument(format!("a burst needs at least 2 frames, got {}", frames.len())));
        }
        let m0 = frames[0].meta;
        for f in &frames[1..] {
            let m = f.meta;
            if m.width != m0.width || m.height != m0.height || m.cfa != m0.cfa || m.gain_db != m0.gain_db {
                return Err(Error::InvalidArgument("burst frames have inconsistent metadata".into()));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[RawFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn meta(&self) -> &FrameMeta {
        self.frames[0].meta()
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn payload_path(path: &Path) -> PathBuf {
    path.with_extension("raw16")
}

/// Read `<name>.raw16` and `<name>.json`. `path` may name either file or the
/// bare stem.
pub fn load_frame(path: impl AsRef<Path>) -> Result<RawFrame> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingSidecar(side));
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: FrameMeta = serde_json::from_str(&text)?;
    if meta.normalized {
        return Err(Error::InvalidFrame("normalized frames cannot be stored as raw16".into()));
    }
    let payload = payload_path(path);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    if bytes.len() % 2 != 0 || bytes.len() / 2 != meta.len() {
        return Err(Error::SizeMismatch { expected: meta.len(), actual: bytes.len() / 2 });
    }
    meta.validate()?;
    let max = meta.max_code();
    let pixels = bytes
        .chunks_exact(2)
        .enumerate()
        .map(|(index, b)| {
            let v = f64::from(u16::from_le_bytes([b[0], b[1]]));
            if v > max {
                Err(Error::OutOfRange { index, value: v, max })
            } else {
                Ok(v)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    RawFrame::new(meta, pixels)
}

/// Quantize (round half to even) and write payload plus sidecar.
pub fn save_frame(frame: &RawFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let meta = frame.meta();
    if meta.normalized {
        return Err(Error::InvalidFrame("normalized frames cannot be stored as raw16".into()));
    }
    let max = meta.max_code();
    let mut bytes = Vec::with_capacity(frame.pixels.len() * 2);
    for (index, &v) in frame.pixels.iter().enumerate() {
        let q = v.round_ties_even();
        if !(v >= 0.0 && q <= max) {
            return Err(Error::OutOfRange { index, value: v, max });
        }
        bytes.extend_from_slice(&(q as u16).to_le_bytes());
    }
    let payload = payload_path(path);
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn burst_frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:04}.raw16"))
}

pub fn save_burst(burst: &Burst, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in burst.frames().iter().enumerate() {
        save_frame(f, burst_frame_path(dir, i))?;
    }
    Ok(())
}

/// Load `frame_0000`, `frame_0001`, ... until the first missing index.
pub fn load_burst(dir: impl AsRef<Path>) -> Result<Burst> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    loop {
        let p = burst_frame_path(dir, frames.len());
        if !p.exists() {
            break;
        }
        frames.push(load_frame(&p)?);
    }
    Burst::new(frames)
}
