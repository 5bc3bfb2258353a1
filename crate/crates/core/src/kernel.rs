//! Same-colour blur kernels on the Bayer quad grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted taps; offsets are in whole Bayer quads (2 pixels), so a tap
/// always lands on a site of the same colour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    pub taps: Vec<Tap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// (row, col) offset in quads.
    pub offset: (i32, i32),
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurDirection {
    Horizontal,
    Vertical,
}

impl BlurKernel {
    pub fn new(taps: Vec<Tap>) -> Result<Self> {
        let k = Self { taps };
        k.validate()?;
        Ok(k)
    }

    /// Build from pixel offsets; odd offsets would mix colours and are rejected.
    pub fn from_pixel_offsets(taps: &[((i32, i32), f64)]) -> Result<Self> {
        let mut out = Vec::with_capacity(taps.len());
        for &((dr, dc), w) in taps {
            if dr % 2 != 0 || dc % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "kernel offset ({dr}, {dc}) is not CFA aligned; taps would mix colours"
                )));
            }
            out.push(Tap { offset: (dr / 2, dc / 2), weight: w });
        }
        Self::new(out)
    }

    pub fn identity() -> Self {
        Self { taps: vec![Tap { offset: (0, 0), weight: 1.0 }] }
    }

    /// Uniform line segment of `2*distance + 1` taps, centred.
    pub fn linear(distance: u32, direction: BlurDirection) -> Self {
        let d = distance as i32;
        let w = 1.0 / f64::from(2 * distance + 1);
        let taps = (-d..=d)
            .map(|k| Tap {
                offset: match direction {
                    BlurDirection::Horizontal => (0, k),
                    BlurDirection::Vertical => (k, 0),
                },
                weight: w,
            })
            .collect();
        Self { taps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::InvalidArgument("kernel has no taps".into()));
        }
        if self.taps.iter().any(|t| !(t.weight >= 0.0) || !t.weight.is_finite()) {
            return Err(Error::InvalidArgument("kernel weights must be finite and nonnegative".into()));
        }
        let sum: f64 = self.taps.iter().map(|t| t.weight).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("kernel weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn sum_sq(&self) -> f64 {
        self.taps.iter().map(|t| t.weight * t.weight).sum()
    }

    pub fn is_identity(&self) -> bool {
        self.taps.iter().all(|t| t.weight == 0.0 || (t.offset == (0, 0) && t.weight == 1.0))
    }
}

fn reflect(q: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut r = q.rem_euclid(period);
    if r >= n {
        r = period - r;
    }
    r
}

/// Pixel coordinate reached from `p` by moving `quads` whole quads, with
/// mirror reflection on the quad grid at the borders.
pub(crate) fn shift_reflect(p: usize, quads: i32, len: usize) -> usize {
    let nq = (len / 2) as i64;
    let q = reflect((p / 2) as i64 + i64::from(quads), nq);
    (q as usize) * 2 + (p & 1)
}

/// Apply the kernel as a weighted sum over same-colour sites.
pub(crate) fn convolve(values: &[f64], width: usize, height: usize, kernel: &BlurKernel) -> Vec<f64> {
    use rayon::prelude::*;
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            *o = kernel
                .taps
                .iter()
                .map(|t| {
                    let rr = shift_reflect(r, t.offset.0, height);
                    let cc = shift_reflect(c, t.offset.1, width);
                    t.weight * values[rr * width + cc]
                })
                .sum();
        }
    });
    out
}
