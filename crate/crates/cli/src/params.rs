//! JSON parameter files accepted by the subcommands.

use serde::{Deserialize, Serialize};

use rawnoise::calibration::PatchRegion;
use rawnoise::kernel::{BlurDirection, BlurKernel};
use rawnoise::noise_model::NoiseModel;
use rawnoise::raw::Cfa;
use rawnoise::sensor_sim::{ColorChecker, SceneMap, SensorSpec};
use rawnoise::{Error, Result};

/// `sim.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Ground-truth noise of the simulated sensor.
    pub model: NoiseModel,
    pub bit_depth: u32,
    pub black_level: u32,
    pub white_level: u32,
    pub quantize: bool,
    pub scene: SceneParams,
    pub gains_db: Vec<f64>,
    /// Brightest site of each burst as a fraction of the signal range; one
    /// burst per entry and gain.
    pub fractions: Vec<f64>,
    pub n_frames: usize,
    /// Calibration region edge; 24 for charts, 8 for tiled scenes.
    pub region_size: Option<usize>,
    pub blur: BlurParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneParams {
    Chart {
        patch_size: usize,
    },
    Uniform {
        width: usize,
        height: usize,
    },
    /// Left-to-right ramp from `low` to 1 of the peak level.
    Ramp {
        width: usize,
        height: usize,
        low: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurParams {
    pub distance: u32,
    pub direction: BlurDirection,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self { distance: 2, direction: BlurDirection::Horizontal }
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            model: NoiseModel { alpha: 1.2, sigma_d2: 6.0, sigma_r2: 25.0 },
            bit_depth: 14,
            black_level: 1024,
            white_level: 16383,
            quantize: true,
            scene: SceneParams::Chart { patch_size: 32 },
            gains_db: vec![6.0, 12.0, 24.0],
            fractions: vec![0.8, 0.2],
            n_frames: 100,
            region_size: None,
            blur: BlurParams::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.gains_db.is_empty() || self.fractions.is_empty() {
            return Err(Error::InvalidArgument("gains_db and fractions must be nonempty".into()));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidArgument("fractions must be in (0, 1]".into()));
        }
        if let SceneParams::Ramp { low, .. } = self.scene {
            if !(0.0..=1.0).contains(&low) {
                return Err(Error::InvalidArgument(format!("ramp low {low} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn sensor(&self) -> SensorSpec {
        SensorSpec {
            model: self.model,
            bit_depth: self.bit_depth,
            black_level: self.black_level,
            white_level: self.white_level,
            quantize: self.quantize,
        }
    }

    pub fn kernel(&self) -> BlurKernel {
        BlurKernel::linear(self.blur.distance, self.blur.direction)
    }

    fn chart(patch_size: usize) -> ColorChecker {
        ColorChecker { patch_size, ..ColorChecker::default() }
    }

    /// Scene at unit illumination.
    pub fn base_scene(&self) -> Result<SceneMap> {
        match self.scene {
            SceneParams::Chart { patch_size } => Self::chart(patch_size).scene(1.0),
            SceneParams::Uniform { width, height } => SceneMap::uniform(width, height, Cfa::Rggb, 1.0),
            SceneParams::Ramp { width, height, low } => SceneMap::horizontal_ramp(width, height, Cfa::Rggb, low, 1.0),
        }
    }

    pub fn regions(&self) -> Vec<PatchRegion> {
        match self.scene {
            SceneParams::Chart { patch_size } => Self::chart(patch_size).patch_regions(self.region_size.unwrap_or(24)),
            SceneParams::Uniform { width, height } | SceneParams::Ramp { width, height, .. } => {
                let s = self.region_size.unwrap_or(8).max(1);
                (0..height / s)
                    .flat_map(|r| (0..width / s).map(move |c| PatchRegion::new((r * s, c * s), (s, s))))
                    .collect()
            }
        }
    }
}

/// `regions.json`: one list shared by all bursts, or one list per burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionsFile {
    PerBurst(Vec<Vec<PatchRegion>>),
    Shared(Vec<PatchRegion>),
}

impl RegionsFile {
    pub fn for_bursts(self, n: usize) -> Result<Vec<Vec<PatchRegion>>> {
        match self {
            RegionsFile::Shared(r) => Ok(vec![r; n]),
            RegionsFile::PerBurst(r) if r.len() == n => Ok(r),
            RegionsFile::PerBurst(r) => {
                Err(Error::InvalidArgument(format!("regions file lists {} bursts but {n} were given", r.len())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        let p: SimParams = serde_json::from_str(
            r#"{"n_frames": 10, "scene": {"kind": "ramp", "width": 64, "height": 64, "low": 0.1}}"#,
        )
        .unwrap();
        assert_eq!(p.n_frames, 10);
        assert_eq!(p.gains_db, vec![6.0, 12.0, 24.0]);
        assert_eq!(p.regions().len(), 64);
        assert!(serde_json::from_str::<SimParams>(r#"{"frames": 3}"#).is_err());
        assert_eq!(SimParams::default().regions().len(), 24);
    }

    #[test]
    fn regions_shapes() {
        let one = r#"[{"origin": [0, 0], "size": [4, 4]}]"#;
        let r: RegionsFile = serde_json::from_str(one).unwrap();
        assert_eq!(r.for_bursts(3).unwrap().len(), 3);
        let per: RegionsFile = serde_json::from_str(&format!("[{one}, {one}]")).unwrap();
        assert!(matches!(per, RegionsFile::PerBurst(_)));
        assert!(per.for_bursts(3).is_err());
    }
}
