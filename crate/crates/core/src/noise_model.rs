//! Heteroscedastic Gaussian sensor noise model.
//!
//! A black-subtracted pixel with expected value `mu` captured at analog gain
//! `g` is distributed as `N(mu, g*alpha*mu + g^2*sigma_d2 + sigma_r2)`.
//! `sigma_d2` is read noise injected before the amplifier, `sigma_r2` after.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raw::GainValue;
use crate::stats::LineFit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// DN per photon at unit gain.
    pub alpha: f64,
    /// Pre-gain read noise variance, DN^2.
    pub sigma_d2: f64,
    /// Post-gain read noise variance, DN^2.
    pub sigma_r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDistribution {
    pub mean: f64,
    pub variance: f64,
}

/// Per-gain slope and intercept of the mean/variance line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainLineCoeffs {
    pub slope: f64,
    pub intercept: f64,
}

impl NoiseModel {
    pub fn new(alpha: f64, sigma_d2: f64, sigma_r2: f64) -> Result<Self> {
        let m = Self { alpha, sigma_d2, sigma_r2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.sigma_d2 >= 0.0
            && self.sigma_r2 >= 0.0
            && self.alpha.is_finite()
            && self.sigma_d2.is_finite()
            && self.sigma_r2.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("noise model needs alpha > 0 and nonnegative variances, got {self:?}")))
        }
    }

    /// Variance of a pixel with expected (black-subtracted) value `mu`.
    pub fn variance_at(&self, gain: GainValue, mu: f64) -> Result<f64> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("expected value must be >= 0, got {mu}")));
        }
        Ok(self.variance_unchecked(gain.linear, mu))
    }

    /// `variance_at` for callers that already guarantee `mu >= 0`.
    #[inline]
    pub fn variance_unchecked(&self, g: f64, mu: f64) -> f64 {
        g * self.alpha * mu + self.dark_floor(g)
    }

    /// Signal-independent part `g^2*sigma_d2 + sigma_r2`.
    #[inline]
    pub fn dark_floor(&self, g: f64) -> f64 {
        g * g * self.sigma_d2 + self.sigma_r2
    }

    pub fn distribution(&self, gain: GainValue, mu: f64) -> Result<PixelDistribution> {
        Ok(PixelDistribution { mean: mu, variance: self.variance_at(gain, mu)? })
    }

    pub fn sample_gaussian<R: Rng + ?Sized>(&self, gain: GainValue, mu: f64, rng: &mut R) -> Result<f64> {
        let var = self.variance_at(gain, mu)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(mu + var.sqrt() * z)
    }

    pub fn gain_line(&self, gain: GainValue) -> GainLineCoeffs {
        GainLineCoeffs { slope: gain.linear * self.alpha, intercept: self.dark_floor(gain.linear) }
    }
}

/// Per-gain fit summary kept alongside a calibrated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFitSummary {
    pub gain_db: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub inlier_fraction: f64,
    pub pairs: usize,
}

impl GainFitSummary {
    pub fn from_fit(gain_db: f64, fit: &LineFit) -> Self {
        Self {
            gain_db,
            slope: fit.slope,
            intercept: fit.intercept,
            r2: fit.r2,
            inlier_fraction: fit.inlier_fraction(),
            pairs: fit.inlier_mask.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub gains_db: Vec<f64>,
    pub per_gain: Vec<GainFitSummary>,
    /// R^2 of the slope system and of the intercept system.
    pub system_r2: Option<(f64, f64)>,
    #[serde(default)]
    pub clamped: Vec<String>,
}

/// On-disk form of `noise_model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub alpha: f64,
    pub sigma_d2: f64,
    pub sigma_r2: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.alpha, self.sigma_d2, self.sigma_r2)
    }

    pub fn new(model: NoiseModel, provenance: Provenance) -> Self {
        Self { alpha: model.alpha, sigma_d2: model.sigma_d2, sigma_r2: model.sigma_r2, provenance }
    }

    /// Calibrated gain range in dB, if provenance records one.
    pub fn gain_range_db(&self) -> Option<(f64, f64)> {
        let g = &self.provenance.gains_db;
        let lo = g.iter().copied().reduce(f64::min)?;
        let hi = g.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ModelFile = serde_json::from_str(&text)?;
        f.model()?;
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
