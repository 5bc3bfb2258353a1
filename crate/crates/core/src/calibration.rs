//! Noise model calibration from bursts of a static chart.
//!
//! Per-pixel temporal mean and variance give one `(mean, variance)` pair per
//! pixel. Pairs from every region captured at one gain are pooled and fitted
//! with a robust line, and the per-gain slopes and intercepts are then solved
//! jointly for `alpha`, `sigma_d2` and `sigma_r2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_model::{GainFitSummary, ModelFile, NoiseModel, Provenance};
use crate::raw::{Burst, GainValue};
use crate::rng::NoiseStream;
use crate::stats::{self, InlierThreshold, LineFit, RansacConfig, Refit};

/// Pixels whose temporal mean reaches this fraction of the white level are
/// treated as saturated.
pub const SATURATION_FRACTION: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstStats {
    pub width: usize,
    pub height: usize,
    /// Black-subtracted temporal mean, DN.
    pub mean: Vec<f64>,
    /// Unbiased temporal variance, DN^2.
    pub variance: Vec<f64>,
    pub n_frames: usize,
    pub gain_db: f64,
    pub black_level: f64,
    pub white_level: f64,
    /// Pixels that reached the white level in at least one frame.
    pub clipped: Vec<bool>,
}

pub fn temporal_stats(burst: &Burst) -> Result<BurstStats> {
    let n = burst.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("temporal statistics need at least 2 frames, got {n}")));
    }
    let meta = burst.meta();
    let black = meta.black();
    let (w, len) = (meta.width, meta.len());
    let frames = burst.frames();
    let mut mean = vec![0.0; len];
    let mut variance = vec![0.0; len];
    let mut clipped = vec![false; len];
    let white = meta.white();
    mean.par_chunks_mut(w).zip(variance.par_chunks_mut(w)).zip(clipped.par_chunks_mut(w)).enumerate().for_each(
        |(r, ((m_row, v_row), c_row))| {
            let base = r * w;
            for f in frames {
                let px = &f.pixels()[base..base + w];
                m_row.iter_mut().zip(px).for_each(|(m, x)| *m += x);
                c_row.iter_mut().zip(px).for_each(|(c, &x)| *c |= x >= white);
            }
            m_row.iter_mut().for_each(|m| *m /= n as f64);
            for f in frames {
                let px = &f.pixels()[base..base + w];
                for ((v, m), x) in v_row.iter_mut().zip(m_row.iter()).zip(px) {
                    let d = x - m;
                    *v += d * d;
                }
            }
            v_row.iter_mut().for_each(|v| *v /= (n - 1) as f64);
            m_row.iter_mut().for_each(|m| *m -= black);
        },
    );
    Ok(BurstStats {
        width: meta.width,
        height: meta.height,
        mean,
        variance,
        n_frames: n,
        gain_db: meta.gain_db,
        black_level: black,
        white_level: white,
        clipped,
    })
}

/// Rectangular pixel region, `origin` and `size` as (row, col).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRegion {
    pub origin: (usize, usize),
    pub size: (usize, usize),
}

impl Default for PatchRegion {
    fn default() -> Self {
        Self { origin: (0, 0), size: (24, 24) }
    }
}

impl PatchRegion {
    pub fn new(origin: (usize, usize), size: (usize, usize)) -> Self {
        Self { origin, size }
    }

    pub fn len(&self) -> usize {
        self.size.0 * self.size.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        let (r, c) = self.origin;
        let (h, w) = self.size;
        if h == 0 || w == 0 || r + h > height || c + w > width {
            return Err(Error::InvalidArgument(format!(
                "region at ({r}, {c}) of size {h}x{w} does not fit a {width}x{height} frame"
            )));
        }
        Ok(())
    }

    /// Linear pixel indices, row-major.
    pub fn indices(&self, width: usize) -> impl Iterator<Item = usize> + '_ {
        let (r0, c0) = self.origin;
        let (h, w) = self.size;
        (r0..r0 + h).flat_map(move |r| (c0..c0 + w).map(move |c| r * width + c))
    }
}

fn checked_indices(regions: &[PatchRegion], width: usize, height: usize) -> Result<Vec<usize>> {
    if regions.is_empty() {
        return Err(Error::InvalidArgument("no regions given".into()));
    }
    for r in regions {
        r.check_bounds(width, height)?;
    }
    Ok(regions.iter().flat_map(|r| r.indices(width)).collect())
}

/// How the mean coordinate of each pair is estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanEstimate {
    /// The pixel's own temporal mean.
    #[default]
    Pixel,
    /// Temporal mean averaged over all sites of the same CFA phase in the
    /// pixel's region. Assumes uniform patches; removes the sampling noise
    /// of the mean, which otherwise biases weighted line fits.
    RegionPhase,
}

/// One `(mean, variance)` pair per pixel in every region, all channels
/// pooled. Saturated pixels are skipped: a temporal mean near the white
/// level, or any frame clipped at it.
pub fn collect_pairs(stats: &BurstStats, regions: &[PatchRegion]) -> Result<Vec<(f64, f64)>> {
    collect_pairs_with(stats, regions, MeanEstimate::Pixel)
}

pub fn collect_pairs_with(stats: &BurstStats, regions: &[PatchRegion], mode: MeanEstimate) -> Result<Vec<(f64, f64)>> {
    checked_indices(regions, stats.width, stats.height)?;
    let limit = SATURATION_FRACTION * stats.white_level - stats.black_level;
    let w = stats.width;
    let phase = |i: usize| ((i / w) & 1) * 2 + ((i % w) & 1);
    let mut out = Vec::new();
    for region in regions {
        let mut sums = [(0.0, 0usize); 4];
        if mode == MeanEstimate::RegionPhase {
            for i in region.indices(w) {
                let s = &mut sums[phase(i)];
                s.0 += stats.mean[i];
                s.1 += 1;
            }
        }
        for i in region.indices(w) {
            if stats.mean[i] >= limit || stats.clipped[i] {
                continue;
            }
            let x = match mode {
                MeanEstimate::Pixel => stats.mean[i],
                MeanEstimate::RegionPhase => {
                    let s = sums[phase(i)];
                    s.0 / s.1 as f64
                }
            };
            out.push((x, stats.variance[i]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainLine {
    pub gain_db: f64,
    pub fit: LineFit,
}

/// Calibration default: RANSAC with a variance-weighted refit, since the
/// scatter of a sample variance grows with its expectation.
pub fn calibration_ransac() -> RansacConfig {
    RansacConfig { refit: Refit::VarianceWeighted, ..RansacConfig::default() }
}

/// Calibration RANSAC with an inlier band matched to the sampling spread of
/// an `n_frames` variance estimate (3 standard deviations, relative).
pub fn calibration_ransac_for(n_frames: usize) -> RansacConfig {
    let rel_sd = (2.0 / (n_frames.max(2) - 1) as f64).sqrt();
    RansacConfig { threshold: InlierThreshold::Relative(3.0 * rel_sd), ..calibration_ransac() }
}

pub fn fit_gain(pairs: &[(f64, f64)], gain_db: f64, config: &RansacConfig, seed: u64) -> Result<GainLine> {
    let fit = stats::ransac_line(pairs, config, seed)?;
    if !(fit.slope > 0.0) {
        return Err(Error::Unphysical(format!(
            "mean/variance slope at {gain_db} dB is {}, must be positive",
            fit.slope
        )));
    }
    Ok(GainLine { gain_db, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityBucket {
    /// Temporal mean range (black-subtracted DN).
    pub mean_lo: f64,
    pub mean_hi: f64,
    pub tested: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    /// Average count of distinct values per pixel series; low counts mean
    /// the series is quantization-sparse.
    pub distinct_levels: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub gain_db: f64,
    pub n_frames: usize,
    pub buckets: Vec<NormalityBucket>,
    /// Pixels with zero temporal variance, excluded from testing.
    pub zero_variance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub model: NoiseModel,
    pub per_gain: Vec<GainFitSummary>,
    /// R^2 of the slope system and of the intercept system.
    pub system_r2: (f64, f64),
    /// Names of parameters clamped at zero.
    pub clamped: Vec<String>,
    /// Quantization variance removed from every intercept, DN^2.
    #[serde(default)]
    pub quantization_variance: f64,
    #[serde(default)]
    pub normality: Vec<NormalityReport>,
}

impl CalibrationReport {
    pub fn model_file(&self) -> ModelFile {
        ModelFile::new(
            self.model,
            Provenance {
                gains_db: self.per_gain.iter().map(|g| g.gain_db).collect(),
                per_gain: self.per_gain.clone(),
                system_r2: Some(self.system_r2),
                clamped: self.clamped.clone(),
            },
        )
    }
}

fn distinct_gains(lines: &[GainLine]) -> usize {
    let mut g: Vec<f64> = lines.iter().map(|l| l.gain_db).collect();
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    g.len()
}

/// Joint solve across gains: slopes give `alpha`, intercepts give
/// `(sigma_d2, sigma_r2)`, with negative variances clamped to zero and the
/// other one re-solved.
pub fn solve_noise_model(lines: &[GainLine]) -> Result<CalibrationReport> {
    if distinct_gains(lines) < 2 {
        return Err(Error::NotIdentifiable(
            "at least 2 distinct gains are needed to separate pre- and post-gain read noise".into(),
        ));
    }
    if lines.iter().all(|l| l.fit.slope == 0.0) {
        return Err(Error::Degenerate("all slopes are zero".into()));
    }
    if let Some(l) = lines.iter().find(|l| !(l.fit.slope > 0.0)) {
        return Err(Error::Unphysical(format!("slope at {} dB is not positive", l.gain_db)));
    }
    let gains: Vec<f64> = lines.iter().map(|l| GainValue::from_db(l.gain_db).linear).collect();

    let slope_rows: Vec<(Vec<f64>, f64)> = gains.iter().zip(lines).map(|(&g, l)| (vec![g], l.fit.slope)).collect();
    let slope_fit = stats::lstsq(&slope_rows)?;
    let alpha = slope_fit.coeffs[0];

    let icpt_rows: Vec<(Vec<f64>, f64)> =
        gains.iter().zip(lines).map(|(&g, l)| (vec![g * g, 1.0], l.fit.intercept)).collect();
    let icpt_fit = stats::lstsq(&icpt_rows)?;
    let (mut sd2, mut sr2) = (icpt_fit.coeffs[0], icpt_fit.coeffs[1]);
    let mut clamped = Vec::new();
    if sd2 < 0.0 && sr2 < 0.0 {
        (sd2, sr2) = (0.0, 0.0);
        clamped = vec!["sigma_d2".into(), "sigma_r2".into()];
    } else if sd2 < 0.0 {
        sd2 = 0.0;
        sr2 = (icpt_rows.iter().map(|r| r.1).sum::<f64>() / icpt_rows.len() as f64).max(0.0);
        clamped.push("sigma_d2".into());
    } else if sr2 < 0.0 {
        sr2 = 0.0;
        let num: f64 = icpt_rows.iter().map(|r| r.0[0] * r.1).sum();
        let den: f64 = icpt_rows.iter().map(|r| r.0[0] * r.0[0]).sum();
        sd2 = (num / den).max(0.0);
        clamped.push("sigma_r2".into());
    }
    let icpt_r2 = if clamped.is_empty() {
        icpt_fit.r2
    } else {
        let pairs: Vec<(f64, f64)> = icpt_rows.iter().map(|r| (r.0[0], r.1)).collect();
        stats::r_squared(&pairs, sd2, sr2)
    };
    let model = NoiseModel::new(alpha, sd2, sr2)?;
    Ok(CalibrationReport {
        model,
        per_gain: lines.iter().map(|l| GainFitSummary::from_fit(l.gain_db, &l.fit)).collect(),
        system_r2: (slope_fit.r2, icpt_r2),
        clamped,
        quantization_variance: 0.0,
        normality: Vec::new(),
    })
}

/// A burst together with the regions to sample from it.
#[derive(Debug, Clone)]
pub struct CalibrationInput {
    pub burst: Burst,
    pub regions: Vec<PatchRegion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Line fitting settings; `None` picks `calibration_ransac_for` the
    /// burst length of each gain.
    pub ransac: Option<RansacConfig>,
    pub mean_estimate: MeanEstimate,
    /// For integer-valued bursts, remove the 1/12 DN^2 rounding variance
    /// (Sheppard's correction) from the intercepts.
    pub quantization_correction: bool,
    /// Normality buckets per gain; 0 skips the sweep.
    pub normality_buckets: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { ransac: None, mean_estimate: MeanEstimate::Pixel, quantization_correction: true, normality_buckets: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainPairs {
    pub gain_db: f64,
    /// Shortest burst contributing to this gain.
    pub n_frames: usize,
    pub pairs: Vec<(f64, f64)>,
}

/// Pairs pooled per gain, in ascending gain order.
pub fn pairs_by_gain(inputs: &[CalibrationInput], mode: MeanEstimate) -> Result<Vec<GainPairs>> {
    let mut groups: Vec<GainPairs> = Vec::new();
    for input in inputs {
        let st = temporal_stats(&input.burst)?;
        let pairs = collect_pairs_with(&st, &input.regions, mode)?;
        match groups.iter_mut().find(|g| (g.gain_db - st.gain_db).abs() < 1e-9) {
            Some(g) => {
                g.pairs.extend(pairs);
                g.n_frames = g.n_frames.min(st.n_frames);
            }
            None => groups.push(GainPairs { gain_db: st.gain_db, n_frames: st.n_frames, pairs }),
        }
    }
    groups.sort_by(|a, b| a.gain_db.total_cmp(&b.gain_db));
    Ok(groups)
}

/// Full pipeline: bursts to a calibrated model.
pub fn calibrate(inputs: &[CalibrationInput], config: &CalibrationConfig, seed: u64) -> Result<CalibrationReport> {
    let groups = pairs_by_gain(inputs, config.mean_estimate)?;
    let stream = NoiseStream::new(seed).derive_str("calibrate");
    let lines = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let ransac = config.ransac.unwrap_or_else(|| calibration_ransac_for(g.n_frames));
            fit_gain(&g.pairs, g.gain_db, &ransac, stream.derive(i as u64).key())
        })
        .collect::<Result<Vec<_>>>()?;
    let integer = inputs.iter().all(|i| i.burst.frames().iter().all(|f| f.pixels().iter().all(|v| v.fract() == 0.0)));
    let q = if config.quantization_correction && integer { 1.0 / 12.0 } else { 0.0 };
    let lines: Vec<GainLine> = lines
        .into_iter()
        .map(|mut l| {
            l.fit.intercept -= q;
            l
        })
        .collect();
    let mut report = solve_noise_model(&lines)?;
    report.quantization_variance = q;
    if config.normality_buckets > 0 {
        for input in inputs.iter().filter(|i| i.burst.len() >= MIN_NORMALITY_FRAMES) {
            report.normality.push(normality_sweep(&input.burst, &input.regions, config.normality_buckets)?);
        }
    }
    Ok(report)
}

pub const MIN_NORMALITY_FRAMES: usize = 20;

/// Normality test result of one pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelNormality {
    /// Temporal mean, black-subtracted DN.
    pub mean: f64,
    /// Shapiro-Wilk p-value; `None` for a constant series.
    pub p_value: Option<f64>,
    /// Distinct values in the series.
    pub levels: usize,
}

/// Shapiro-Wilk over time at every pixel location of the regions.
pub fn pixel_normality(burst: &Burst, regions: &[PatchRegion]) -> Result<Vec<PixelNormality>> {
    let n = burst.len();
    if n < MIN_NORMALITY_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "normality sweep needs at least {MIN_NORMALITY_FRAMES} frames, got {n}"
        )));
    }
    if n > 5000 {
        return Err(Error::InvalidArgument(format!("normality sweep supports at most 5000 frames, got {n}")));
    }
    let meta = burst.meta();
    let idx = checked_indices(regions, meta.width, meta.height)?;
    let black = meta.black();
    Ok(idx
        .par_iter()
        .map(|&i| {
            let mut xs: Vec<f64> = burst.frames().iter().map(|f| f.pixels()[i]).collect();
            let mean = stats::mean(&xs) - black;
            xs.sort_by(f64::total_cmp);
            let mut levels = xs.clone();
            levels.dedup();
            let p_value = if levels.len() == 1 { None } else { stats::shapiro_wilk(&xs).ok().map(|t| t.p_value) };
            PixelNormality { mean, p_value, levels: levels.len() }
        })
        .collect())
}

/// Pixel normality summarized in equal-count buckets of temporal mean. A
/// pixel passes when p > 0.05; constant pixels are counted apart.
pub fn normality_sweep(burst: &Burst, regions: &[PatchRegion], buckets: usize) -> Result<NormalityReport> {
    if buckets == 0 {
        return Err(Error::InvalidArgument("bucket count must be positive".into()));
    }
    let tested = pixel_normality(burst, regions)?;
    let zero_variance = tested.iter().filter(|t| t.p_value.is_none()).count();
    let mut live: Vec<(f64, f64, usize)> =
        tested.into_iter().filter_map(|t| t.p_value.map(|p| (t.mean, p, t.levels))).collect();
    live.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = buckets.min(live.len());
    let out = (0..k)
        .map(|b| {
            let chunk = &live[b * live.len() / k..(b + 1) * live.len() / k];
            let passed = chunk.iter().filter(|t| t.1 > 0.05).count();
            NormalityBucket {
                mean_lo: chunk[0].0,
                mean_hi: chunk[chunk.len() - 1].0,
                tested: chunk.len(),
                passed,
                pass_fraction: passed as f64 / chunk.len() as f64,
                distinct_levels: chunk.iter().map(|t| t.2 as f64).sum::<f64>() / chunk.len() as f64,
            }
        })
        .collect();
    let meta = burst.meta();
    Ok(NormalityReport { gain_db: meta.gain_db, n_frames: burst.len(), buckets: out, zero_variance })
}
