//! Ground-truth synthetic sensor.
//!
//! Photon counts are drawn from an exact Poisson law and read noise from two
//! Gaussians, following `x = g*(alpha*u + n_d) + n_r`. This is a strictly
//! richer process than the Gaussian model the calibration fits, which makes
//! it a fair oracle for both calibration and augmentation checks.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{convolve, BlurKernel};
use crate::noise_model::NoiseModel;
use crate::raw::{Burst, Cfa, FrameMeta, GainValue, RawFrame};
use crate::rng::NoiseStream;

/// Expected photon count per site. Each value already includes the colour
/// filter attenuation of its site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMap {
    pub width: usize,
    pub height: usize,
    pub cfa: Cfa,
    pub photons: Vec<f64>,
}

impl SceneMap {
    pub fn new(width: usize, height: usize, cfa: Cfa, photons: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("scene must have even dimensions, got {width}x{height}")));
        }
        if photons.len() != width * height {
            return Err(Error::SizeMismatch { expected: width * height, actual: photons.len() });
        }
        if photons.iter().any(|u| !(*u >= 0.0) || !u.is_finite()) {
            return Err(Error::InvalidArgument("scene photon counts must be finite and >= 0".into()));
        }
        Ok(Self { width, height, cfa, photons })
    }

    pub fn uniform(width: usize, height: usize, cfa: Cfa, photons: f64) -> Result<Self> {
        Self::new(width, height, cfa, vec![photons; width * height])
    }

    /// Horizontal ramp from `lo` at the left edge to `hi` at the right edge.
    pub fn horizontal_ramp(width: usize, height: usize, cfa: Cfa, lo: f64, hi: f64) -> Result<Self> {
        let step = if width > 1 { (hi - lo) / (width - 1) as f64 } else { 0.0 };
        let photons = (0..height).flat_map(|_| (0..width).map(move |c| lo + step * c as f64)).collect();
        Self::new(width, height, cfa, photons)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) {
            return Err(Error::InvalidArgument(format!("illumination factor must be >= 0, got {factor}")));
        }
        Self::new(self.width, self.height, self.cfa, self.photons.iter().map(|u| u * factor).collect())
    }

    pub fn max_photons(&self) -> f64 {
        self.photons.iter().copied().fold(0.0, f64::max)
    }

    /// Photon-domain motion blur: every site integrates the kernel-weighted
    /// expected counts of same-colour neighbours.
    pub fn blurred(&self, kernel: &BlurKernel) -> Result<Self> {
        kernel.validate()?;
        let photons = convolve(&self.photons, self.width, self.height, kernel);
        Self::new(self.width, self.height, self.cfa, photons)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub model: NoiseModel,
    pub bit_depth: u32,
    pub black_level: u32,
    pub white_level: u32,
    /// Round to integer DN and clip to the code range.
    pub quantize: bool,
}

impl SensorSpec {
    /// 10-bit sensor with black level 64.
    pub fn ten_bit(model: NoiseModel) -> Self {
        Self { model, bit_depth: 10, black_level: 64, white_level: 1023, quantize: true }
    }

    /// 14-bit sensor with black level 1024; headroom for high gains.
    pub fn fourteen_bit(model: NoiseModel) -> Self {
        Self { model, bit_depth: 14, black_level: 1024, white_level: 16383, quantize: true }
    }

    pub fn meta(&self, scene: &SceneMap, gain: GainValue) -> FrameMeta {
        FrameMeta {
            width: scene.width,
            height: scene.height,
            cfa: scene.cfa,
            bit_depth: self.bit_depth,
            black_level: self.black_level,
            white_level: self.white_level,
            gain_db: gain.db,
            normalized: false,
        }
    }

    /// Usable signal range above black, in DN.
    pub fn signal_range(&self) -> f64 {
        f64::from(self.white_level) - f64::from(self.black_level)
    }

    /// Illumination factor that puts the scene's brightest site at
    /// `fraction` of the signal range.
    pub fn illumination_for(&self, scene: &SceneMap, gain: GainValue, fraction: f64) -> f64 {
        fraction * self.signal_range() / (gain.linear * self.model.alpha * scene.max_photons())
    }
}

/// Photon sampler that reuses the distribution for repeated rates.
struct PhotonSampler {
    cache: [(f64, Option<Poisson<f64>>); 2],
}

impl PhotonSampler {
    fn new() -> Self {
        Self { cache: [(f64::NAN, None), (f64::NAN, None)] }
    }

    fn sample<R: Rng>(&mut self, slot: usize, rate: f64, rng: &mut R) -> f64 {
        if rate <= 0.0 {
            return 0.0;
        }
        let entry = &mut self.cache[slot];
        if entry.0 != rate {
            *entry = (rate, Poisson::new(rate).ok());
        }
        entry.1.as_ref().map_or(rate, |d| d.sample(rng))
    }
}

/// One exposure of `scene` at `gain`.
pub fn capture(scene: &SceneMap, gain: GainValue, spec: &SensorSpec, stream: &NoiseStream) -> Result<RawFrame> {
    spec.model.validate()?;
    let meta = spec.meta(scene, gain);
    meta.validate()?;
    let g = gain.linear;
    let (alpha, sd, sr) = (spec.model.alpha, spec.model.sigma_d2.sqrt(), spec.model.sigma_r2.sqrt());
    let black = f64::from(spec.black_level);
    let max = meta.max_code();
    let w = scene.width;
    let mut pixels = vec![0.0; scene.photons.len()];
    pixels.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        let mut rng = stream.row_rng(r);
        let mut photons = PhotonSampler::new();
        let src = &scene.photons[r * w..(r + 1) * w];
        for (c, (out, &rate)) in row.iter_mut().zip(src).enumerate() {
            let u = photons.sample(c & 1, rate, &mut rng);
            let nd: f64 = rng.sample(StandardNormal);
            let nr: f64 = rng.sample(StandardNormal);
            let x = g * (alpha * u + sd * nd) + sr * nr + black;
            *out = if spec.quantize { x.round_ties_even().clamp(0.0, max) } else { x };
        }
    });
    RawFrame::new(meta, pixels)
}

pub fn capture_burst(
    scene: &SceneMap,
    gain: GainValue,
    spec: &SensorSpec,
    n: usize,
    stream: &NoiseStream,
) -> Result<Burst> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("a burst needs at least 2 frames, got {n}")));
    }
    let frames = (0..n).map(|i| capture(scene, gain, spec, &stream.frame(i as u64))).collect::<Result<Vec<_>>>()?;
    Burst::new(frames)
}

/// A single capture of the photon-domain blurred scene; shot noise follows
/// the blurred exposure while read noise enters once.
pub fn capture_motion_blur(
    scene: &SceneMap,
    gain: GainValue,
    spec: &SensorSpec,
    kernel: &BlurKernel,
    stream: &NoiseStream,
) -> Result<RawFrame> {
    capture(&scene.blurred(kernel)?, gain, spec, stream)
}

/// 24-patch colour chart laid out as 4 rows by 6 columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorChecker {
    /// Expected photons of each patch at unit illumination, before colour.
    pub levels: Vec<f64>,
    /// Per patch (R, G, B) transmission in [0, 1].
    pub colors: Vec<[f64; 3]>,
    /// Patch edge in pixels (even).
    pub patch_size: usize,
    pub cfa: Cfa,
}

const CHART_COLORS: [[f64; 3]; 24] = [
    [1.00, 0.70, 0.55],
    [1.00, 0.78, 0.68],
    [0.55, 0.72, 1.00],
    [0.62, 1.00, 0.45],
    [0.72, 0.70, 1.00],
    [0.50, 1.00, 0.90],
    [1.00, 0.55, 0.30],
    [0.45, 0.55, 1.00],
    [1.00, 0.45, 0.50],
    [0.70, 0.45, 1.00],
    [0.75, 1.00, 0.35],
    [1.00, 0.80, 0.30],
    [0.35, 0.45, 1.00],
    [0.45, 1.00, 0.45],
    [1.00, 0.35, 0.35],
    [1.00, 0.95, 0.35],
    [1.00, 0.45, 0.85],
    [0.35, 0.80, 1.00],
    [1.00, 1.00, 0.98],
    [0.98, 1.00, 1.00],
    [1.00, 0.99, 1.00],
    [1.00, 1.00, 0.97],
    [0.97, 1.00, 1.00],
    [1.00, 0.98, 1.00],
];

impl Default for ColorChecker {
    /// Patch levels log-spaced from 5 to 2000 photons.
    fn default() -> Self {
        let levels = (0..24).map(|k| 5.0 * 400f64.powf(k as f64 / 23.0)).collect();
        Self { levels, colors: CHART_COLORS.to_vec(), patch_size: 32, cfa: Cfa::Rggb }
    }
}

impl ColorChecker {
    pub const ROWS: usize = 4;
    pub const COLS: usize = 6;

    pub fn width(&self) -> usize {
        Self::COLS * self.patch_size
    }

    pub fn height(&self) -> usize {
        Self::ROWS * self.patch_size
    }

    /// Photon map of the chart at the given illumination factor.
    pub fn scene(&self, illumination: f64) -> Result<SceneMap> {
        if self.levels.len() != 24 || self.colors.len() != 24 {
            return Err(Error::InvalidArgument("a colour chart needs exactly 24 patches".into()));
        }
        if self.levels.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidArgument("patch levels must be >= 0".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument("patch size must be even and nonzero".into()));
        }
        if !(illumination >= 0.0) || !illumination.is_finite() {
            return Err(Error::InvalidArgument(format!("illumination must be >= 0, got {illumination}")));
        }
        let (w, h, ps) = (self.width(), self.height(), self.patch_size);
        let mut photons = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let patch = (r / ps) * Self::COLS + c / ps;
                let ch = self.cfa.channel_at(r, c).index();
                photons.push(self.levels[patch] * self.colors[patch][ch] * illumination);
            }
        }
        SceneMap::new(w, h, self.cfa, photons)
    }

    /// Centred square region of each patch, `size` pixels on a side.
    pub fn patch_regions(&self, size: usize) -> Vec<crate::calibration::PatchRegion> {
        let size = size.min(self.patch_size);
        let off = ((self.patch_size - size) / 2) & !1;
        (0..Self::ROWS)
            .flat_map(|pr| {
                (0..Self::COLS).map(move |pc| crate::calibration::PatchRegion {
                    origin: (pr * self.patch_size + off, pc * self.patch_size + off),
                    size: (size, size),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn model() -> NoiseModel {
        NoiseModel::new(1.0, 4.0, 9.0).unwrap()
    }

    #[test]
    fn zero_scene_zero_noise_is_black() {
        let m = NoiseModel { alpha: 1.0, sigma_d2: 0.0, sigma_r2: 0.0 };
        let s = SceneMap::uniform(4, 4, Cfa::Rggb, 0.0).unwrap();
        let f = capture(&s, GainValue::from_db(6.0), &SensorSpec::ten_bit(m), &NoiseStream::new(1)).unwrap();
        assert!(f.pixels().iter().all(|&v| v == 64.0));
    }

    #[test]
    fn poisson_moments() {
        let spec = SensorSpec { quantize: false, ..SensorSpec::fourteen_bit(model()) };
        let s = SceneMap::uniform(1000, 1000, Cfa::Rggb, 100.0).unwrap();
        let f = capture(&s, GainValue::from_db(0.0), &spec, &NoiseStream::new(2)).unwrap();
        let x = f.black_subtracted();
        assert!((stats::mean(&x) / 100.0 - 1.0).abs() < 0.01);
        assert!((stats::variance(&x) / 113.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn capture_is_deterministic_and_seed_sensitive() {
        let spec = SensorSpec::ten_bit(model());
        let s = SceneMap::uniform(8, 6, Cfa::Rggb, 50.0).unwrap();
        let g = GainValue::from_db(6.0);
        let a = capture(&s, g, &spec, &NoiseStream::new(5)).unwrap();
        let b = capture(&s, g, &spec, &NoiseStream::new(5)).unwrap();
        let c = capture(&s, g, &spec, &NoiseStream::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pixels(), c.pixels());
        assert_eq!(a.meta(), c.meta());
    }

    #[test]
    fn burst_mean_converges() {
        let spec = SensorSpec { quantize: false, ..SensorSpec::fourteen_bit(model()) };
        let s = SceneMap::uniform(4, 2, Cfa::Rggb, 200.0).unwrap();
        let g = GainValue::from_db(6.0);
        let b = capture_burst(&s, g, &spec, 10_000, &NoiseStream::new(8)).unwrap();
        for i in 0..8 {
            let xs: Vec<f64> = b.frames().iter().map(|f| f.pixels()[i] - 1024.0).collect();
            assert!((stats::mean(&xs) / (g.linear * 200.0) - 1.0).abs() < 0.005);
        }
        assert!(capture_burst(&s, g, &spec, 1, &NoiseStream::new(8)).is_err());
    }

    #[test]
    fn chart_scaling() {
        let chart = ColorChecker::default();
        let s0 = chart.scene(0.0).unwrap();
        assert!(s0.photons.iter().all(|&u| u == 0.0));
        let s1 = chart.scene(1.0).unwrap();
        let s2 = chart.scene(2.0).unwrap();
        assert!(s1.photons.iter().zip(&s2.photons).all(|(a, b)| *b == 2.0 * a));
        let lo = s1.photons.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(lo > 1.0 && lo < 6.0 && (s1.max_photons() - 2000.0).abs() < 1e-9);
        assert!(chart.scene(-1.0).is_err());
        assert_eq!(chart.patch_regions(24).len(), 24);
    }

    #[test]
    fn one_hot_blur_equals_shifted_capture() {
        let spec = SensorSpec::ten_bit(model());
        let s = SceneMap::horizontal_ramp(16, 8, Cfa::Rggb, 10.0, 90.0).unwrap();
        let g = GainValue::from_db(0.0);
        let k = BlurKernel::new(vec![crate::kernel::Tap { offset: (0, 1), weight: 1.0 }]).unwrap();
        let shifted = s.blurred(&k).unwrap();
        assert_eq!(shifted.photons[0], s.photons[2]);
        let a = capture_motion_blur(&s, g, &spec, &k, &NoiseStream::new(3)).unwrap();
        let b = capture(&shifted, g, &spec, &NoiseStream::new(3)).unwrap();
        assert_eq!(a, b);
        let id = capture_motion_blur(&s, g, &spec, &BlurKernel::identity(), &NoiseStream::new(3)).unwrap();
        assert_eq!(id, capture(&s, g, &spec, &NoiseStream::new(3)).unwrap());
    }

    #[test]
    fn two_tap_blur_on_constant_scene_keeps_variance() {
        let spec = SensorSpec { quantize: false, ..SensorSpec::fourteen_bit(model()) };
        let s = SceneMap::uniform(1000, 500, Cfa::Rggb, 100.0).unwrap();
        let k = BlurKernel::linear(0, crate::kernel::BlurDirection::Horizontal);
        let k2 = BlurKernel::from_pixel_offsets(&[((0, 0), 0.5), ((0, 2), 0.5)]).unwrap();
        assert!(k.is_identity());
        let g = GainValue::from_db(0.0);
        let f = capture_motion_blur(&s, g, &spec, &k2, &NoiseStream::new(4)).unwrap();
        let v = stats::variance(&f.black_subtracted());
        assert!((v / 113.0 - 1.0).abs() < 0.02, "{v}");
    }
}
