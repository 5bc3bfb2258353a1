//! Noise-accounted RAW augmentation.
//!
//! A captured frame already carries the noise of its own exposure. Scaling
//! it or blurring it changes that noise in ways a real capture would not,
//! so each operator adds exactly the Gaussian correction needed for the
//! output to follow the noise model at the new condition. Naive and
//! "without prior" variants are kept as baselines.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{shift_reflect, BlurDirection, BlurKernel};
use crate::noise_model::NoiseModel;
use crate::raw::{FrameMeta, GainValue, RawFrame};
use crate::rng::NoiseStream;

/// Sampling ranges and probabilities for `sample_spec`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub contrast: (f64, f64),
    pub hue_probability: f64,
    /// Per-channel contrast is `base * U(1 - hue_spread, 1 + hue_spread)`.
    pub hue_spread: f64,
    pub brightness: (f64, f64),
    pub blur_probability: f64,
    pub blur_max_distance: u32,
    pub geometric_probability: f64,
    /// Largest shift as a fraction of frame size.
    pub max_shift: f64,
    /// Largest relative scale change.
    pub max_scale: f64,
    /// Range of the gain factor `p_g`, sampled log-uniformly; `None` keeps
    /// the frame gain.
    pub gain_factor: Option<(f64, f64)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            contrast: (0.01, 1.0),
            hue_probability: 0.5,
            hue_spread: 0.2,
            brightness: (-0.1, 0.1),
            blur_probability: 0.5,
            blur_max_distance: 13,
            geometric_probability: 0.8,
            max_shift: 0.1,
            max_scale: 0.03,
            gain_factor: None,
        }
    }
}

impl AugmentConfig {
    /// Configuration whose every sample is the identity transform.
    pub fn identity() -> Self {
        Self {
            contrast: (1.0, 1.0),
            hue_probability: 0.0,
            brightness: (0.0, 0.0),
            blur_probability: 0.0,
            geometric_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} range ({lo}, {hi}) is invalid")))
            }
        };
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} probability {p} is outside [0, 1]")))
            }
        };
        range("contrast", self.contrast)?;
        if !(self.contrast.0 > 0.0) {
            return Err(Error::InvalidArgument("contrast must be positive".into()));
        }
        range("brightness", self.brightness)?;
        prob("hue", self.hue_probability)?;
        prob("blur", self.blur_probability)?;
        prob("geometric", self.geometric_probability)?;
        if !(0.0..1.0).contains(&self.hue_spread) {
            return Err(Error::InvalidArgument("hue spread must be in [0, 1)".into()));
        }
        if !(0.0..0.5).contains(&self.max_shift) || !(0.0..0.5).contains(&self.max_scale) {
            return Err(Error::InvalidArgument("shift and scale limits must be in [0, 0.5)".into()));
        }
        if let Some(g) = self.gain_factor {
            range("gain factor", g)?;
            if !(g.0 > 0.0) {
                return Err(Error::InvalidArgument("gain factors must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Gain factor range that keeps `frame_gain * p_g` inside a calibrated range.
pub fn gain_factor_range(frame_gain_db: f64, calibrated_db: (f64, f64)) -> (f64, f64) {
    let lo = GainValue::from_db(calibrated_db.0 - frame_gain_db).linear;
    let hi = GainValue::from_db(calibrated_db.1 - frame_gain_db).linear;
    (lo.min(hi), lo.max(hi))
}

/// One fully determined augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub p_c_base: f64,
    /// Contrast per (R, G, B).
    pub p_c: [f64; 3],
    pub hue_applied: bool,
    /// Brightness relative to the frame minimum.
    pub p_b_hat: f64,
    pub p_g: f64,
    pub blur: Option<BlurKernel>,
    /// Shift as (rows, cols) fraction of the frame size.
    pub shift: (f64, f64),
    pub scale: f64,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            p_c_base: 1.0,
            p_c: [1.0; 3],
            hue_applied: false,
            p_b_hat: 0.0,
            p_g: 1.0,
            blur: None,
            shift: (0.0, 0.0),
            scale: 1.0,
            seed,
        }
    }

    /// Uniform contrast `p_c` on every channel, nothing else.
    pub fn contrast(p_c: f64, seed: u64) -> Self {
        Self { p_c_base: p_c, p_c: [p_c; 3], ..Self::identity(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_c.iter().any(|c| !(*c > 0.0) || !c.is_finite()) || !(self.p_c_base > 0.0) {
            return Err(Error::InvalidArgument("contrast factors must be positive".into()));
        }
        if !(self.p_g > 0.0) || !self.p_g.is_finite() {
            return Err(Error::InvalidArgument(format!("gain factor must be positive, got {}", self.p_g)));
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        if let Some(k) = &self.blur {
            k.validate()?;
        }
        Ok(())
    }

    fn is_photometric_identity(&self) -> bool {
        self.p_c == [1.0; 3] && self.p_b_hat == 0.0 && self.p_g == 1.0
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

pub fn sample_spec<R: Rng>(config: &AugmentConfig, rng: &mut R) -> Result<AugmentSpec> {
    config.validate()?;
    let base = uniform(rng, config.contrast);
    let hue = rng.random_bool(config.hue_probability);
    let spread = (1.0 - config.hue_spread, 1.0 + config.hue_spread);
    let p_c = if hue {
        [base * uniform(rng, spread), base * uniform(rng, spread), base * uniform(rng, spread)]
    } else {
        [base; 3]
    };
    let p_b_hat = uniform(rng, config.brightness);
    let p_g = match config.gain_factor {
        Some((lo, hi)) => uniform(rng, (lo.ln(), hi.ln())).exp(),
        None => 1.0,
    };
    let blur = if rng.random_bool(config.blur_probability) {
        let d = rng.random_range(0..=config.blur_max_distance);
        let dir = if rng.random_bool(0.5) { BlurDirection::Horizontal } else { BlurDirection::Vertical };
        Some(BlurKernel::linear(d, dir))
    } else {
        None
    };
    let (shift, scale) = if rng.random_bool(config.geometric_probability) {
        let s = (-config.max_shift, config.max_shift);
        ((uniform(rng, s), uniform(rng, s)), 1.0 + uniform(rng, (-config.max_scale, config.max_scale)))
    } else {
        ((0.0, 0.0), 1.0)
    };
    Ok(AugmentSpec { p_c_base: base, p_c, hue_applied: hue, p_b_hat, p_g, blur, shift, scale, seed: rng.random() })
}

/// Counters reported by every operator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpStats {
    pub pixels: usize,
    /// Pixels whose correction variance was negative and clipped to zero.
    pub clipped_variance: usize,
    /// Pixels clamped at the white level.
    pub saturated: usize,
}

impl OpStats {
    pub fn merge(self, other: OpStats) -> OpStats {
        OpStats {
            pixels: self.pixels.max(other.pixels),
            clipped_variance: self.clipped_variance + other.clipped_variance,
            saturated: self.saturated + other.saturated,
        }
    }

    pub fn clipped_fraction(&self) -> f64 {
        self.clipped_variance as f64 / self.pixels.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub frame: RawFrame,
    pub stats: OpStats,
}

impl Augmented {
    fn unchanged(frame: &RawFrame) -> Self {
        Self { frame: frame.clone(), stats: OpStats { pixels: frame.pixels().len(), ..OpStats::default() } }
    }
}

/// Correction variance for moving a pixel with value `mu` from gain `g` to
/// illumination factor `p_u` and gain factor `p_g`. May be negative.
pub fn shift_variance(model: &NoiseModel, g: f64, mu: f64, p_u: f64, p_g: f64) -> f64 {
    let pg2 = p_g * p_g;
    p_u * (1.0 - p_u) * pg2 * g * model.alpha * mu.max(0.0)
        + (1.0 - p_u * p_u) * pg2 * g * g * model.sigma_d2
        + (1.0 - p_u * p_u * pg2) * model.sigma_r2
}

fn gained_meta(meta: &FrameMeta, p_g: f64) -> FrameMeta {
    FrameMeta { gain_db: meta.gain_db + 20.0 * p_g.log10(), ..*meta }
}

/// Per-pixel worker: given (row, col, black-subtracted value) return
/// (new black-subtracted mean, correction variance).
fn apply_pixelwise<F>(frame: &RawFrame, meta: FrameMeta, stream: &NoiseStream, f: F) -> Result<Augmented>
where
    F: Fn(usize, usize, f64) -> (f64, f64) + Sync,
{
    let (w, black, white) = (frame.width(), meta.black(), meta.white());
    let src = frame.pixels();
    let mut out = vec![0.0; src.len()];
    let counts: Vec<(usize, usize)> = out
        .par_chunks_mut(w)
        .enumerate()
        .map(|(r, row)| {
            let mut rng = stream.row_rng(r);
            let (mut clipped, mut saturated) = (0, 0);
            for (c, o) in row.iter_mut().enumerate() {
                let (mean, var) = f(r, c, src[r * w + c] - black);
                let z: f64 = rng.sample(StandardNormal);
                let v = if var < 0.0 {
                    clipped += 1;
                    0.0
                } else {
                    var
                };
                let y = mean + v.sqrt() * z + black;
                if y >= white {
                    saturated += 1;
                }
                *o = y.clamp(0.0, white);
            }
            (clipped, saturated)
        })
        .collect();
    let stats = OpStats {
        pixels: src.len(),
        clipped_variance: counts.iter().map(|c| c.0).sum(),
        saturated: counts.iter().map(|c| c.1).sum(),
    };
    Ok(Augmented { frame: RawFrame::new(meta, out)?, stats })
}

/// Rescale exposure by `p_u` and analog gain by `p_g`, adding the noise the
/// new condition would have had. Output gain is `gain * p_g`.
pub fn exposure_gain_shift(
    frame: &RawFrame,
    model: &NoiseModel,
    p_u: f64,
    p_g: f64,
    stream: &NoiseStream,
) -> Result<Augmented> {
    if !(p_u > 0.0) || !(p_g > 0.0) || !p_u.is_finite() || !p_g.is_finite() {
        return Err(Error::InvalidArgument(format!("factors must be positive, got p_u={p_u}, p_g={p_g}")));
    }
    model.validate()?;
    if p_u == 1.0 && p_g == 1.0 {
        return Ok(Augmented::unchanged(frame));
    }
    let g = frame.gain().linear;
    let k = p_u * p_g;
    apply_pixelwise(frame, gained_meta(frame.meta(), p_g), stream, |_, _, x| {
        (k * x, shift_variance(model, g, x, p_u, p_g))
    })
}

fn frame_min(frame: &RawFrame) -> f64 {
    let black = frame.meta().black();
    frame.pixels().iter().fold(f64::INFINITY, |m, &v| m.min(v - black))
}

/// Brightness offset in DN for a spec applied to `frame`.
pub fn brightness_offset(frame: &RawFrame, spec: &AugmentSpec) -> f64 {
    if spec.p_b_hat == 0.0 {
        0.0
    } else {
        spec.p_b_hat * frame_min(frame)
    }
}

/// Contrast, brightness and hue with noise accounting. The per-pixel factor
/// `f = (p_c*x + p_b)/x` is split as `p_u = f/p_g` with the spec's global
/// `p_g`. Pixels where the factor is undefined (`x <= 0` with a nonzero
/// offset) or the target is not positive get `max(target, 0)` and no noise.
pub fn color_jitter(
    frame: &RawFrame,
    model: &NoiseModel,
    spec: &AugmentSpec,
    stream: &NoiseStream,
) -> Result<Augmented> {
    spec.validate()?;
    model.validate()?;
    if spec.is_photometric_identity() {
        return Ok(Augmented::unchanged(frame));
    }
    let g = frame.gain().linear;
    let p_b = brightness_offset(frame, spec);
    let (cfa, p_g) = (frame.cfa(), spec.p_g);
    apply_pixelwise(frame, gained_meta(frame.meta(), p_g), stream, |r, c, x| {
        let p_c = spec.p_c[cfa.channel_at(r, c).index()];
        if p_b == 0.0 {
            return (p_c * x, shift_variance(model, g, x, p_c / p_g, p_g));
        }
        let target = p_c * x + p_b;
        if x <= 0.0 || target <= 0.0 {
            return (target.max(0.0), 0.0);
        }
        let p_u = target / x / p_g;
        (target, shift_variance(model, g, x, p_u, p_g))
    })
}

/// Target map only, no noise term.
pub fn naive_color_jitter(frame: &RawFrame, spec: &AugmentSpec) -> Result<Augmented> {
    spec.validate()?;
    if spec.is_photometric_identity() {
        return Ok(Augmented::unchanged(frame));
    }
    let p_b = brightness_offset(frame, spec);
    let cfa = frame.cfa();
    apply_pixelwise(frame, gained_meta(frame.meta(), spec.p_g), &NoiseStream::new(0), |r, c, x| {
        (spec.p_c[cfa.channel_at(r, c).index()] * x + p_b, 0.0)
    })
}

/// Treats the input as clean: scales it and adds the full model noise of
/// the target condition.
pub fn wo_prior_color_jitter(
    frame: &RawFrame,
    model: &NoiseModel,
    spec: &AugmentSpec,
    stream: &NoiseStream,
) -> Result<Augmented> {
    spec.validate()?;
    model.validate()?;
    let g_target = frame.gain().linear * spec.p_g;
    let p_b = brightness_offset(frame, spec);
    let cfa = frame.cfa();
    apply_pixelwise(frame, gained_meta(frame.meta(), spec.p_g), stream, |r, c, x| {
        let t = spec.p_c[cfa.channel_at(r, c).index()] * x + p_b;
        (t, model.variance_unchecked(g_target, t.max(0.0)))
    })
}

fn blur_pixelwise<F>(frame: &RawFrame, kernel: &BlurKernel, stream: &NoiseStream, var: F) -> Result<Augmented>
where
    F: Fn(&[(f64, f64)]) -> f64 + Sync,
{
    kernel.validate()?;
    let (w, h, black) = (frame.width(), frame.height(), frame.meta().black());
    let src = frame.pixels();
    apply_pixelwise(frame, *frame.meta(), stream, |r, c, _| {
        let taps: Vec<(f64, f64)> = kernel
            .taps
            .iter()
            .map(|t| {
                let rr = shift_reflect(r, t.offset.0, h);
                let cc = shift_reflect(c, t.offset.1, w);
                (t.weight, src[rr * w + cc] - black)
            })
            .collect();
        (taps.iter().map(|(wk, x)| wk * x).sum(), var(&taps))
    })
}

/// Same-colour blur plus the correction that restores the read-noise floor
/// and the shot-noise share a single blurred exposure would have.
pub fn noise_accounted_blur(
    frame: &RawFrame,
    model: &NoiseModel,
    kernel: &BlurKernel,
    stream: &NoiseStream,
) -> Result<Augmented> {
    model.validate()?;
    kernel.validate()?;
    if kernel.is_identity() {
        return Ok(Augmented::unchanged(frame));
    }
    let g = frame.gain().linear;
    let floor = (1.0 - kernel.sum_sq()) * model.dark_floor(g);
    let ga = g * model.alpha;
    blur_pixelwise(frame, kernel, stream, |taps| {
        ga * taps.iter().map(|(wk, x)| (1.0 - wk) * wk * x.max(0.0)).sum::<f64>() + floor
    })
}

/// Plain convolution.
pub fn naive_blur(frame: &RawFrame, kernel: &BlurKernel) -> Result<Augmented> {
    if kernel.is_identity() {
        return Ok(Augmented::unchanged(frame));
    }
    blur_pixelwise(frame, kernel, &NoiseStream::new(0), |_| 0.0)
}

/// Convolution plus full model noise at the blurred value.
pub fn wo_prior_blur(
    frame: &RawFrame,
    model: &NoiseModel,
    kernel: &BlurKernel,
    stream: &NoiseStream,
) -> Result<Augmented> {
    model.validate()?;
    let g = frame.gain().linear;
    blur_pixelwise(frame, kernel, stream, |taps| {
        let m: f64 = taps.iter().map(|(wk, x)| wk * x).sum();
        model.variance_unchecked(g, m.max(0.0))
    })
}

/// Variance-stabilizing transform `y = x/k + b/k^2`, `k = g*alpha`,
/// `b = g^2*sigma_d2 + sigma_r2`, on black-subtracted values.
pub fn ksigma_forward(frame: &RawFrame, model: &NoiseModel) -> Result<Vec<f64>> {
    let (k, b) = ksigma_coeffs(frame.meta(), model)?;
    let black = frame.meta().black();
    Ok(frame.pixels().iter().map(|v| (v - black) / k + b / (k * k)).collect())
}

pub fn ksigma_inverse(values: &[f64], meta: &FrameMeta, model: &NoiseModel) -> Result<RawFrame> {
    let (k, b) = ksigma_coeffs(meta, model)?;
    let black = meta.black();
    RawFrame::new(*meta, values.iter().map(|y| k * (y - b / (k * k)) + black).collect())
}

fn ksigma_coeffs(meta: &FrameMeta, model: &NoiseModel) -> Result<(f64, f64)> {
    let l = model.gain_line(meta.gain());
    if !(l.slope > 0.0) {
        return Err(Error::InvalidArgument("k = g*alpha must be positive".into()));
    }
    Ok((l.slope, l.intercept))
}

/// Per-pixel noise variance with the pixel value standing in for its mean.
pub fn variance_map(frame: &RawFrame, model: &NoiseModel) -> Vec<f64> {
    let g = frame.gain().linear;
    let black = frame.meta().black();
    frame.pixels().iter().map(|v| model.variance_unchecked(g, (v - black).max(0.0))).collect()
}

/// Shift and scale on the Bayer quad grid, so the CFA phase is preserved.
/// Shifts round to whole quads; borders reflect.
pub fn geometric(frame: &RawFrame, spec: &AugmentSpec) -> Result<RawFrame> {
    spec.validate()?;
    let (w, h) = (frame.width(), frame.height());
    let dq = ((spec.shift.0 * h as f64 / 2.0).round() as i64, (spec.shift.1 * w as f64 / 2.0).round() as i64);
    if dq == (0, 0) && spec.scale == 1.0 {
        return Ok(frame.clone());
    }
    let (qh, qw) = (h / 2, w / 2);
    let src_quad = |q: usize, n: usize, d: i64| -> i64 {
        let centre = (n as f64 - 1.0) / 2.0;
        ((q as f64 - centre) / spec.scale + centre).round() as i64 - d
    };
    let px = frame.pixels();
    let mut out = vec![0.0; px.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        let sq = src_quad(r / 2, qh, dq.0);
        let sr = shift_reflect(r & 1, sq as i32, h);
        for (c, o) in row.iter_mut().enumerate() {
            let sc = shift_reflect(c & 1, src_quad(c / 2, qw, dq.1) as i32, w);
            *o = px[sr * w + sc];
        }
    });
    frame.with_pixels(out)
}

/// Which noise handling the augmentation pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Naive,
    WoPrior,
}

/// Geometric transform, then colour jitter, then blur.
pub fn augment(frame: &RawFrame, model: &NoiseModel, spec: &AugmentSpec, method: Method) -> Result<Augmented> {
    let stream = NoiseStream::new(spec.seed);
    let geo = geometric(frame, spec)?;
    let jit = match method {
        Method::Ours => color_jitter(&geo, model, spec, &stream.derive_str("jitter"))?,
        Method::Naive => naive_color_jitter(&geo, spec)?,
        Method::WoPrior => wo_prior_color_jitter(&geo, model, spec, &stream.derive_str("jitter"))?,
    };
    let Some(kernel) = &spec.blur else { return Ok(jit) };
    let blur = match method {
        Method::Ours => noise_accounted_blur(&jit.frame, model, kernel, &stream.derive_str("blur"))?,
        Method::Naive => naive_blur(&jit.frame, kernel)?,
        Method::WoPrior => wo_prior_blur(&jit.frame, model, kernel, &stream.derive_str("blur"))?,
    };
    Ok(Augmented { frame: blur.frame, stats: jit.stats.merge(blur.stats) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::Cfa;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta(w: usize, h: usize, db: f64) -> FrameMeta {
        FrameMeta {
            width: w,
            height: h,
            cfa: Cfa::Rggb,
            bit_depth: 16,
            black_level: 0,
            white_level: 65535,
            gain_db: db,
            normalized: false,
        }
    }

    #[test]
    fn shift_variance_example() {
        let m = NoiseModel { alpha: 1.0, sigma_d2: 0.0, sigma_r2: 0.0 };
        assert!((shift_variance(&m, 1.0, 100.0, 0.1, 1.0) - 9.0).abs() < 1e-12);
        let m = NoiseModel::new(1.2, 6.0, 25.0).unwrap();
        assert_eq!(shift_variance(&m, 2.0, 500.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn identities_are_bit_exact() {
        let m = NoiseModel::new(1.2, 6.0, 25.0).unwrap();
        let f = RawFrame::new(meta(4, 4, 6.0), (0..16).map(|v| v as f64 * 3.0).collect()).unwrap();
        let s = NoiseStream::new(1);
        assert_eq!(exposure_gain_shift(&f, &m, 1.0, 1.0, &s).unwrap().frame, f);
        let id = AugmentSpec::identity(3);
        assert_eq!(color_jitter(&f, &m, &id, &s).unwrap().frame, f);
        assert_eq!(naive_color_jitter(&f, &id).unwrap().frame, f);
        assert_eq!(noise_accounted_blur(&f, &m, &BlurKernel::identity(), &s).unwrap().frame, f);
        assert_eq!(geometric(&f, &id).unwrap(), f);
        assert_eq!(augment(&f, &m, &id, Method::Ours).unwrap().frame, f);
        assert!(exposure_gain_shift(&f, &m, 0.0, 1.0, &s).is_err());
        assert!(exposure_gain_shift(&f, &m, 1.0, -1.0, &s).is_err());
    }

    #[test]
    fn blur_correction_example() {
        let m = NoiseModel::new(1.0, 4.0, 0.0).unwrap();
        let f = RawFrame::filled(meta(8, 2, 0.0), 100.0).unwrap();
        let k = BlurKernel::from_pixel_offsets(&[((0, 0), 0.5), ((0, 2), 0.5)]).unwrap();
        let zero = NoiseModel { alpha: 1e-12, sigma_d2: 0.0, sigma_r2: 0.0 };
        let out = noise_accounted_blur(&f, &zero, &k, &NoiseStream::new(1)).unwrap();
        assert!(out.frame.pixels().iter().all(|&v| (v - 100.0).abs() < 1e-3));
        // correction variance 0.25*100 + 0.25*100 + 0.5*4 = 52
        let mut vals = Vec::new();
        let big = RawFrame::filled(meta(400, 400, 0.0), 100.0).unwrap();
        for s in 0..3 {
            vals.extend(noise_accounted_blur(&big, &m, &k, &NoiseStream::new(s)).unwrap().frame.into_pixels());
        }
        let v = crate::stats::variance(&vals);
        assert!((v / 52.0 - 1.0).abs() < 0.01, "{v}");
        assert!((crate::stats::mean(&vals) - 100.0).abs() < 0.05);
    }

    #[test]
    fn ksigma_examples() {
        let m = NoiseModel::new(2.0, 4.0, 4.0).unwrap();
        // k = 2, b = 8 at 0 dB
        let f = RawFrame::new(meta(2, 2, 0.0), vec![10.0, 0.0, 3.5, 1000.0]).unwrap();
        let y = ksigma_forward(&f, &m).unwrap();
        assert_eq!(y[0], 7.0);
        let back = ksigma_inverse(&y, f.meta(), &m).unwrap();
        for (a, b) in back.pixels().iter().zip(f.pixels()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn variance_map_examples() {
        let m = NoiseModel::new(1.5, 2.0, 5.0).unwrap();
        let dark = RawFrame::filled(meta(4, 2, 6.0), 0.0).unwrap();
        let g = dark.gain().linear;
        assert!(variance_map(&dark, &m).iter().all(|&v| (v - m.dark_floor(g)).abs() < 1e-12));
        let ramp = RawFrame::new(meta(4, 2, 0.0), (0..8).map(|v| v as f64).collect()).unwrap();
        let vm = variance_map(&ramp, &m);
        for i in 1..8 {
            assert!((vm[i] - vm[i - 1] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_jitter_clamps() {
        let mut md = meta(2, 2, 0.0);
        md.white_level = 1000;
        md.bit_depth = 10;
        let f = RawFrame::new(md, vec![100.0, 600.0, 400.0, 0.0]).unwrap();
        let out = naive_color_jitter(&f, &AugmentSpec::contrast(2.0, 0)).unwrap();
        assert_eq!(out.frame.pixels(), &[200.0, 1000.0, 800.0, 0.0]);
        assert_eq!(out.stats.saturated, 1);
    }

    #[test]
    fn color_jitter_updates_gain() {
        let m = NoiseModel::new(1.0, 1.0, 1.0).unwrap();
        let f = RawFrame::filled(meta(2, 2, 6.0), 50.0).unwrap();
        let spec = AugmentSpec { p_g: 2.0, ..AugmentSpec::contrast(0.25, 1) };
        let out = color_jitter(&f, &m, &spec, &NoiseStream::new(1)).unwrap();
        assert!((out.frame.meta().gain_db - (6.0 + 20.0 * 2f64.log10())).abs() < 1e-12);
    }

    #[test]
    fn brightness_dead_pixels_get_no_noise() {
        let m = NoiseModel::new(1.0, 1.0, 1.0).unwrap();
        let mut md = meta(2, 2, 0.0);
        md.black_level = 10;
        let f = RawFrame::new(md, vec![5.0, 10.0, 110.0, 60.0]).unwrap();
        // min(x) = -5, p_b = -0.1 * -5 = 0.5
        let spec = AugmentSpec { p_b_hat: -0.1, ..AugmentSpec::contrast(0.5, 1) };
        let out = color_jitter(&f, &m, &spec, &NoiseStream::new(1)).unwrap();
        assert_eq!(out.frame.pixels()[0], 10.0);
        assert_eq!(out.frame.pixels()[1], 10.5);
    }

    #[test]
    fn spec_sampling() {
        let cfg = AugmentConfig::identity();
        let s = sample_spec(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s.is_photometric_identity() && s.blur.is_none() && s.scale == 1.0 && s.shift == (0.0, 0.0));
        let a = sample_spec(&AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_spec(&AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let bad = AugmentConfig { contrast: (0.0, 1.0), ..Default::default() };
        assert!(sample_spec(&bad, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        let bad = AugmentConfig { brightness: (0.2, 0.1), ..Default::default() };
        assert!(bad.validate().is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut hue = 0;
        for _ in 0..n {
            let s = sample_spec(&AugmentConfig::default(), &mut rng).unwrap();
            if s.hue_applied {
                hue += 1;
                for c in s.p_c {
                    assert!(c >= 0.8 * s.p_c_base && c <= 1.2 * s.p_c_base);
                }
            }
            if let Some(k) = &s.blur {
                assert!(k.taps.len() <= 27);
            }
            assert!((0.01..=1.0).contains(&s.p_c_base) && s.p_b_hat.abs() <= 0.1);
        }
        let rate = hue as f64 / n as f64;
        assert!((0.49..=0.51).contains(&rate), "{rate}");
    }

    #[test]
    fn gain_factor_range_maps_to_calibrated_gains() {
        let (lo, hi) = gain_factor_range(12.0, (6.0, 24.0));
        assert!((20.0 * lo.log10() + 6.0).abs() < 1e-12);
        assert!((20.0 * hi.log10() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_keeps_cfa_phase() {
        let f = RawFrame::new(meta(8, 8, 0.0), (0..64).map(|v| v as f64).collect()).unwrap();
        let spec = AugmentSpec { shift: (0.25, 0.25), ..AugmentSpec::identity(0) };
        let g = geometric(&f, &spec).unwrap();
        // shift of 2 pixels = 1 quad
        assert_eq!(g.get(2, 2), f.get(0, 0));
        assert_eq!(g.get(3, 5), f.get(1, 3));
        // odd pixel shift rounds to whole quads
        let odd = AugmentSpec { shift: (0.0, 3.0 / 8.0), ..AugmentSpec::identity(0) };
        let o = geometric(&f, &odd).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let v = o.get(r, c) as usize;
                assert_eq!((v / 8) % 2, r % 2);
                assert_eq!((v % 8) % 2, c % 2);
            }
        }
        let sc = AugmentSpec { scale: 1.03, ..AugmentSpec::identity(0) };
        let s = geometric(&f, &sc).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let v = s.get(r, c) as usize;
                assert_eq!(((v / 8) % 2, (v % 8) % 2), (r % 2, c % 2));
            }
        }
    }
}
