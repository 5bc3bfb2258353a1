//! Statistical validation against the synthetic sensor.
//!
//! An experiment converts a burst captured at a source condition, captures a
//! real burst at the target condition, and compares the two mean/variance
//! populations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentSpec, Augmented};
use crate::calibration::{
    self, calibration_ransac_for, collect_pairs, temporal_stats, CalibrationInput, PatchRegion, PixelNormality,
};
use crate::error::{Error, Result};
use crate::isp::{self, ToneCurve};
use crate::kernel::BlurKernel;
use crate::noise_model::NoiseModel;
use crate::raw::{Burst, GainValue, RawFrame};
use crate::rng::NoiseStream;
use crate::sensor_sim::{self, ColorChecker, SceneMap, SensorSpec};
use crate::stats::{self, LineFit};

pub const MIN_ALIGNMENT_FRAMES: usize = 50;

/// Chart, sensor and capture protocol shared by calibration and alignment
/// experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSetup {
    pub sensor: SensorSpec,
    pub chart: ColorChecker,
    pub gains_db: Vec<f64>,
    /// Brightest site of the bright burst as a fraction of the signal range.
    pub bright_fraction: f64,
    /// Illumination of the second burst relative to the bright one.
    pub dim_ratio: f64,
    pub n_frames: usize,
    /// Region edge in pixels, centred in each patch.
    pub region_size: usize,
}

impl ChartSetup {
    /// 14-bit sensor, gains 6/12/24 dB, 100-frame bursts at full and
    /// quarter illumination, 24x24 regions in 32-pixel patches.
    pub fn standard(model: NoiseModel) -> Self {
        Self {
            sensor: SensorSpec::fourteen_bit(model),
            chart: ColorChecker::default(),
            gains_db: vec![6.0, 12.0, 24.0],
            bright_fraction: 0.8,
            dim_ratio: 0.25,
            n_frames: 100,
            region_size: 24,
        }
    }

    pub fn regions(&self) -> Vec<PatchRegion> {
        self.chart.patch_regions(self.region_size)
    }

    /// Chart scene at `gain`, scaled so its brightest site sits at
    /// `fraction * bright_fraction` of the signal range.
    pub fn scene(&self, gain: GainValue, fraction: f64) -> Result<SceneMap> {
        let base = self.chart.scene(1.0)?;
        let ill = self.sensor.illumination_for(&base, gain, self.bright_fraction);
        base.scaled(ill * fraction)
    }

    pub fn calibration_inputs(&self, seed: u64) -> Result<Vec<CalibrationInput>> {
        let stream = NoiseStream::new(seed).derive_str("chart");
        let mut out = Vec::new();
        for (gi, &db) in self.gains_db.iter().enumerate() {
            let gain = GainValue::from_db(db);
            for (k, f) in [1.0, self.dim_ratio].into_iter().enumerate() {
                let scene = self.scene(gain, f)?;
                let s = stream.derive((gi * 2 + k) as u64);
                let burst = sensor_sim::capture_burst(&scene, gain, &self.sensor, self.n_frames, &s)?;
                out.push(CalibrationInput { burst, regions: self.regions() });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionMethod {
    Ours,
    WoPrior,
    None,
}

impl ConversionMethod {
    pub fn name(self) -> &'static str {
        match self {
            ConversionMethod::Ours => "ours",
            ConversionMethod::WoPrior => "wo_prior",
            ConversionMethod::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurMode {
    NoiseAccounted,
    Naive,
}

impl BlurMode {
    pub fn name(self) -> &'static str {
        match self {
            BlurMode::NoiseAccounted => "noise_accounted",
            BlurMode::Naive => "naive",
        }
    }
}

/// Line parameters without the inlier mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub pairs: usize,
    pub inliers: usize,
}

impl From<&LineFit> for LineSummary {
    fn from(f: &LineFit) -> Self {
        Self { slope: f.slope, intercept: f.intercept, r2: f.r2, pairs: f.inlier_mask.len(), inliers: f.inlier_count() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub method: String,
    pub conversion: String,
    pub gain_db: f64,
    pub n_frames: usize,
    pub seed: u64,
    pub real_line: LineSummary,
    pub converted_line: LineSummary,
    /// `|converted - real| / |real|`.
    pub slope_rel_err: f64,
    pub intercept_rel_err: f64,
    /// Signed `(converted - real) / |real|`.
    pub slope_signed_err: f64,
    pub intercept_signed_err: f64,
    /// Two-sample KS (D, p) on standardized residuals.
    pub ks: (f64, f64),
    /// Pixels whose correction variance was clipped during conversion.
    pub clipped_variance: usize,
}

/// Pairs behind a report, for plotting and external refits.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentData {
    pub report: AlignmentReport,
    pub real_pairs: Vec<(f64, f64)>,
    pub converted_pairs: Vec<(f64, f64)>,
}

/// Line fit used for every population in this module; a fixed seed so a
/// refit of dumped pairs reproduces it.
pub const LINE_SEED: u64 = 0x5eed;

pub fn fit_population(pairs: &[(f64, f64)], n_frames: usize) -> Result<LineFit> {
    if pairs.len() < 500 {
        return Err(Error::Degenerate(format!("line fits need at least 500 pairs, got {}", pairs.len())));
    }
    stats::ransac_line(pairs, &calibration_ransac_for(n_frames), LINE_SEED)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b) / b.abs()
}

/// Residuals `(x - mean) / sd(mean)` pooled over pixels and frames, with
/// `sd` from the reference line. Every `stride`-th pixel is used.
fn standardized_residuals(burst: &Burst, idx: &[usize], line: &LineFit, stride: usize) -> Vec<f64> {
    let st = match temporal_stats(burst) {
        Ok(s) => s,
        Err(_) => return Vec::new(),
    };
    let black = burst.meta().black();
    let mut out = Vec::new();
    for &i in idx.iter().step_by(stride.max(1)) {
        let m = st.mean[i];
        let v = line.predict(m);
        if !(v > 0.0) || st.clipped[i] {
            continue;
        }
        let sd = v.sqrt();
        out.extend(burst.frames().iter().map(|f| (f.pixels()[i] - black - m) / sd));
    }
    out
}

fn compare(
    real: &Burst,
    converted: &Burst,
    regions: &[PatchRegion],
    method: &str,
    conversion: String,
    seed: u64,
    clipped_variance: usize,
) -> Result<AlignmentData> {
    let n = real.len();
    let real_pairs = collect_pairs(&temporal_stats(real)?, regions)?;
    let converted_pairs = collect_pairs(&temporal_stats(converted)?, regions)?;
    let real_line = fit_population(&real_pairs, n)?;
    let conv_line = fit_population(&converted_pairs, converted.len())?;
    let meta = real.meta();
    let idx: Vec<usize> = regions.iter().flat_map(|r| r.indices(meta.width)).collect();
    let stride = (idx.len() * n / 20_000).max(1);
    let za = standardized_residuals(real, &idx, &real_line, stride);
    let zb = standardized_residuals(converted, &idx, &real_line, stride);
    let ks = stats::ks_two_sample(&za, &zb).map(|t| (t.statistic, t.p_value)).unwrap_or((f64::NAN, f64::NAN));
    let report = AlignmentReport {
        method: method.into(),
        conversion,
        gain_db: meta.gain_db,
        n_frames: n,
        seed,
        slope_rel_err: rel(conv_line.slope, real_line.slope).abs(),
        intercept_rel_err: rel(conv_line.intercept, real_line.intercept).abs(),
        slope_signed_err: rel(conv_line.slope, real_line.slope),
        intercept_signed_err: rel(conv_line.intercept, real_line.intercept),
        real_line: (&real_line).into(),
        converted_line: (&conv_line).into(),
        ks,
        clipped_variance,
    };
    Ok(AlignmentData { report, real_pairs, converted_pairs })
}

fn convert_burst<F>(source: &Burst, f: F) -> Result<(Burst, usize)>
where
    F: Fn(usize, &RawFrame) -> Result<Augmented>,
{
    let mut clipped = 0;
    let mut frames = Vec::with_capacity(source.len());
    for (i, fr) in source.frames().iter().enumerate() {
        let a = f(i, fr)?;
        clipped += a.stats.clipped_variance;
        frames.push(a.frame);
    }
    Ok((Burst::new(frames)?, clipped))
}

/// Contrast conversion of a source burst versus a real capture at
/// `scene * contrast`. `model` drives the conversion; the sensor's own model
/// generates the captures.
#[allow(clippy::too_many_arguments)]
pub fn alignment_experiment(
    model: &NoiseModel,
    sensor: &SensorSpec,
    scene: &SceneMap,
    regions: &[PatchRegion],
    gain: GainValue,
    contrast: f64,
    method: ConversionMethod,
    n_frames: usize,
    seed: u64,
) -> Result<AlignmentData> {
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(Error::InvalidArgument(format!("contrast must be in (0, 1], got {contrast}")));
    }
    if n_frames < MIN_ALIGNMENT_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "alignment needs at least {MIN_ALIGNMENT_FRAMES} frames, got {n_frames}"
        )));
    }
    let stream = NoiseStream::new(seed);
    let source = sensor_sim::capture_burst(scene, gain, sensor, n_frames, &stream.derive_str("source"))?;
    let real = sensor_sim::capture_burst(&scene.scaled(contrast)?, gain, sensor, n_frames, &stream.derive_str("real"))?;
    let conv = stream.derive_str("convert");
    let spec = AugmentSpec::contrast(contrast, seed);
    let (converted, clipped) = convert_burst(&source, |i, f| {
        let s = conv.frame(i as u64);
        match method {
            ConversionMethod::Ours => augment::color_jitter(f, model, &spec, &s),
            ConversionMethod::WoPrior => augment::wo_prior_color_jitter(f, model, &spec, &s),
            ConversionMethod::None => augment::naive_color_jitter(f, &spec),
        }
    })?;
    compare(&real, &converted, regions, method.name(), format!("contrast x{contrast}"), seed, clipped)
}

/// Blur conversion of a source burst versus real motion-blurred captures.
#[allow(clippy::too_many_arguments)]
pub fn blur_alignment_experiment(
    model: &NoiseModel,
    sensor: &SensorSpec,
    scene: &SceneMap,
    regions: &[PatchRegion],
    gain: GainValue,
    kernel: &BlurKernel,
    mode: BlurMode,
    n_frames: usize,
    seed: u64,
) -> Result<AlignmentData> {
    kernel.validate()?;
    if n_frames < MIN_ALIGNMENT_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "alignment needs at least {MIN_ALIGNMENT_FRAMES} frames, got {n_frames}"
        )));
    }
    let stream = NoiseStream::new(seed);
    let source = sensor_sim::capture_burst(scene, gain, sensor, n_frames, &stream.derive_str("source"))?;
    let blurred = scene.blurred(kernel)?;
    let real = sensor_sim::capture_burst(&blurred, gain, sensor, n_frames, &stream.derive_str("real"))?;
    let conv = stream.derive_str("convert");
    let (converted, clipped) = convert_burst(&source, |i, f| match mode {
        BlurMode::NoiseAccounted => augment::noise_accounted_blur(f, model, kernel, &conv.frame(i as u64)),
        BlurMode::Naive => augment::naive_blur(f, kernel),
    })?;
    let desc = format!("blur {} taps", kernel.taps.len());
    compare(&real, &converted, regions, mode.name(), desc, seed, clipped)
}

pub fn write_pairs_csv(path: impl AsRef<Path>, data: &AlignmentData) -> Result<()> {
    let mut s = String::from("mu,var,source\n");
    for (label, pairs) in [("real", &data.real_pairs), ("converted", &data.converted_pairs)] {
        for (m, v) in pairs.iter() {
            let _ = writeln!(s, "{m},{v},{label}");
        }
    }
    let path = path.as_ref();
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Read a pair dump back as (real, converted).
/// (real, converted) pairs.
pub type PairSets = (Vec<(f64, f64)>, Vec<(f64, f64)>);

pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<PairSets> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut real, mut conv) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::InvalidArgument(format!("{}:{}: malformed pair row", path.display(), n + 1));
        let mut it = line.split(',');
        let m: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let v: f64 = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        match it.next() {
            Some("real") => real.push((m, v)),
            Some("converted") => conv.push((m, v)),
            _ => return Err(bad()),
        }
    }
    Ok((real, conv))
}

/// Per-pixel normality points plus the bucket summary.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityTable {
    pub report: calibration::NormalityReport,
    pub points: Vec<PixelNormality>,
}

impl NormalityTable {
    /// Rows of `expected_value,p_value,levels`; constant pixels have an
    /// empty p-value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("expected_value,p_value,levels\n");
        for p in &self.points {
            let pv = p.p_value.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{}", p.mean, pv, p.levels);
        }
        s
    }
}

pub fn normality_report(burst: &Burst, regions: &[PatchRegion], buckets: usize) -> Result<NormalityTable> {
    let report = calibration::normality_sweep(burst, regions, buckets)?;
    let points = calibration::pixel_normality(burst, regions)?;
    Ok(NormalityTable { report, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub width: usize,
    pub height: usize,
    pub repetitions: usize,
    /// Run identity parameters instead of typical ones.
    pub identity: bool,
    pub model: NoiseModel,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 768,
            repetitions: 5,
            identity: false,
            model: NoiseModel { alpha: 1.2, sigma_d2: 6.0, sigma_r2: 25.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTiming {
    pub name: String,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub megapixels_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub operators: Vec<OpTiming>,
}

fn time_op<F: FnMut() -> Result<()>>(name: &str, reps: usize, mpix: f64, mut f: F) -> Result<OpTiming> {
    let mut ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let median = stats::quantile(&ms, 0.5);
    Ok(OpTiming {
        name: name.into(),
        median_ms: median,
        p95_ms: stats::quantile(&ms, 0.95),
        megapixels_per_s: mpix / (median.max(1e-9) / 1e3),
    })
}

/// Wall-time per operator on a synthetic frame.
pub fn bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.repetitions < 3 {
        return Err(Error::InvalidArgument(format!("bench needs at least 3 repetitions, got {}", config.repetitions)));
    }
    config.model.validate()?;
    let (w, h, reps) = (config.width, config.height, config.repetitions);
    let sensor = SensorSpec::fourteen_bit(config.model);
    let gain = GainValue::from_db(12.0);
    let scene = SceneMap::horizontal_ramp(w, h, crate::raw::Cfa::Rggb, 5.0, 400.0)?;
    let stream = NoiseStream::new(1);
    let frame = sensor_sim::capture(&scene, gain, &sensor, &stream)?;
    let model = &config.model;
    let (spec, kernel, p_u) = if config.identity {
        (AugmentSpec::identity(1), BlurKernel::identity(), 1.0)
    } else {
        let spec = AugmentSpec { p_b_hat: 0.05, ..AugmentSpec::contrast(0.5, 1) };
        (spec, BlurKernel::linear(2, crate::kernel::BlurDirection::Horizontal), 0.5)
    };
    let mpix = (w * h) as f64 / 1e6;
    let curve = ToneCurve::default();
    let ops = vec![
        time_op("capture", reps, mpix, || sensor_sim::capture(&scene, gain, &sensor, &stream).map(drop))?,
        time_op("exposure_gain_shift", reps, mpix, || {
            augment::exposure_gain_shift(&frame, model, p_u, 1.0, &stream).map(drop)
        })?,
        time_op("color_jitter", reps, mpix, || augment::color_jitter(&frame, model, &spec, &stream).map(drop))?,
        time_op("noise_accounted_blur", reps, mpix, || {
            augment::noise_accounted_blur(&frame, model, &kernel, &stream).map(drop)
        })?,
        time_op("ksigma_forward", reps, mpix, || augment::ksigma_forward(&frame, model).map(drop))?,
        time_op("develop", reps, mpix, || isp::develop(&frame, &curve).map(drop))?,
        time_op("end_to_end", reps, mpix, || {
            let s = AugmentSpec { blur: Some(kernel.clone()), ..spec.clone() };
            let a = augment::augment(&frame, model, &s, augment::Method::Ours)?;
            isp::develop(&a.frame, &curve).map(drop)
        })?,
    ];
    Ok(BenchReport { width: w, height: h, repetitions: reps, threads: rayon::current_num_threads(), operators: ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_setup() -> ChartSetup {
        let model = NoiseModel::new(1.2, 6.0, 25.0).unwrap();
        let mut s = ChartSetup::standard(model);
        s.chart.patch_size = 16;
        s.region_size = 12;
        s
    }

    #[test]
    fn alignment_rejects_bad_arguments() {
        let s = small_setup();
        let g = GainValue::from_db(6.0);
        let scene = s.scene(g, 1.0).unwrap();
        let r = s.regions();
        let m = s.sensor.model;
        assert!(alignment_experiment(&m, &s.sensor, &scene, &r, g, 0.0, ConversionMethod::Ours, 60, 1).is_err());
        assert!(alignment_experiment(&m, &s.sensor, &scene, &r, g, 1.5, ConversionMethod::Ours, 60, 1).is_err());
        assert!(alignment_experiment(&m, &s.sensor, &scene, &r, g, 0.5, ConversionMethod::Ours, 10, 1).is_err());
    }

    #[test]
    fn identity_blur_matches_real_exactly_in_distribution() {
        let s = small_setup();
        let g = GainValue::from_db(6.0);
        let scene = s.scene(g, 1.0).unwrap();
        let m = s.sensor.model;
        for mode in [BlurMode::NoiseAccounted, BlurMode::Naive] {
            let d =
                blur_alignment_experiment(&m, &s.sensor, &scene, &s.regions(), g, &BlurKernel::identity(), mode, 50, 3)
                    .unwrap();
            assert!(d.report.slope_rel_err < 0.03, "{:?}", d.report);
        }
    }

    #[test]
    fn pairs_csv_round_trip_reproduces_lines() {
        let s = small_setup();
        let g = GainValue::from_db(6.0);
        let scene = s.scene(g, 1.0).unwrap();
        let m = s.sensor.model;
        let d =
            alignment_experiment(&m, &s.sensor, &scene, &s.regions(), g, 0.5, ConversionMethod::Ours, 50, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        write_pairs_csv(&p, &d).unwrap();
        let (real, conv) = read_pairs_csv(&p).unwrap();
        assert_eq!(real, d.real_pairs);
        assert_eq!(conv, d.converted_pairs);
        let refit = fit_population(&real, 50).unwrap();
        assert!((refit.slope - d.report.real_line.slope).abs() <= 1e-9 * refit.slope.abs());
        assert!((refit.intercept - d.report.real_line.intercept).abs() <= 1e-9 * refit.intercept.abs().max(1.0));
        let again =
            alignment_experiment(&m, &s.sensor, &scene, &s.regions(), g, 0.5, ConversionMethod::Ours, 50, 2).unwrap();
        assert_eq!(again.report, d.report);
    }

    #[test]
    fn bench_schema() {
        let cfg = BenchConfig { width: 64, height: 32, repetitions: 3, identity: true, ..Default::default() };
        let r = bench(&cfg).unwrap();
        assert!(r.operators.iter().all(|o| o.median_ms > 0.0));
        let text = serde_json::to_string(&r).unwrap();
        let back: BenchReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert!(bench(&BenchConfig { repetitions: 2, ..cfg }).is_err());
    }
}
