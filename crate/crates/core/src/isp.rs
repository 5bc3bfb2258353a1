//! Minimal ISP: bilinear demosaic and gamma tone mapping to 8-bit RGB.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raw::RawFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ToneCurve {
    /// `y = x^(1/gamma)`.
    Simplest { gamma: f64 },
    /// `y = clamp(scale * (1+knee)*t / (1 + knee*t), 0, 1)` with
    /// `t = x^(1/gamma)`. `knee` lifts the mid-tones; `knee = 0, scale = 1`
    /// is `Simplest`.
    Parameterized { gamma: f64, knee: f64, scale: f64 },
}

impl Default for ToneCurve {
    fn default() -> Self {
        ToneCurve::Simplest { gamma: 5.0 }
    }
}

impl ToneCurve {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ToneCurve::Simplest { gamma } => gamma > 0.0 && gamma.is_finite(),
            ToneCurve::Parameterized { gamma, knee, scale } => {
                gamma > 0.0 && gamma.is_finite() && knee >= 0.0 && knee.is_finite() && scale > 0.0 && scale.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid tone curve {self:?}")))
        }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        match *self {
            ToneCurve::Simplest { gamma } => x.powf(1.0 / gamma),
            ToneCurve::Parameterized { gamma, knee, scale } => {
                let t = x.powf(1.0 / gamma);
                (scale * (1.0 + knee) * t / (1.0 + knee * t)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("tone curve input {x} is outside [0, 1]")));
        }
        Ok(self.eval(x))
    }
}

pub fn tone_map(values: &[f64], curve: &ToneCurve) -> Result<Vec<f64>> {
    curve.validate()?;
    values.iter().map(|&x| curve.apply(x)).collect()
}

/// Real-valued RGB, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbF {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// 8-bit RGB, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Each output channel takes the site's own value where the site has that
/// colour, otherwise the mean of that colour's sites in the 3x3
/// neighbourhood. Borders reflect without repeating the edge.
pub fn demosaic_bilinear(frame: &RawFrame) -> RgbF {
    let (w, h, cfa) = (frame.width(), frame.height(), frame.cfa());
    let px = frame.pixels();
    let mut data = vec![0.0; w * h * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(r, row)| {
        for c in 0..w {
            let own = cfa.channel_at(r, c).index();
            let mut sum = [0.0; 3];
            let mut cnt = [0u32; 3];
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let rr = reflect101(r as isize + dr, h);
                    let cc = reflect101(c as isize + dc, w);
                    let ch = cfa.channel_at(rr, cc).index();
                    sum[ch] += px[rr * w + cc];
                    cnt[ch] += 1;
                }
            }
            for ch in 0..3 {
                row[3 * c + ch] = if ch == own { px[r * w + c] } else { sum[ch] / f64::from(cnt[ch]) };
            }
        }
    });
    RgbF { width: w, height: h, data }
}

/// Normalize, demosaic, tone map, round half to even to 8 bits.
pub fn develop(frame: &RawFrame, curve: &ToneCurve) -> Result<RgbImage> {
    curve.validate()?;
    let rgb = demosaic_bilinear(&frame.normalize());
    let data = rgb.data.par_iter().map(|&x| (curve.eval(x.clamp(0.0, 1.0)) * 255.0).round_ties_even() as u8).collect();
    Ok(RgbImage { width: rgb.width, height: rgb.height, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::{Cfa, FrameMeta};
    use proptest::prelude::{prop_assert, proptest};

    fn meta(w: usize, h: usize) -> FrameMeta {
        FrameMeta {
            width: w,
            height: h,
            cfa: Cfa::Rggb,
            bit_depth: 10,
            black_level: 64,
            white_level: 1023,
            gain_db: 0.0,
            normalized: false,
        }
    }

    #[test]
    fn curve_examples() {
        let s = ToneCurve::default();
        assert_eq!(s.apply(0.0).unwrap(), 0.0);
        assert_eq!(s.apply(1.0).unwrap(), 1.0);
        assert!((s.apply(0.5).unwrap() - 0.870_550_563_296_124).abs() < 1e-12);
        assert!(s.apply(1.5).is_err() && s.apply(-0.1).is_err());
        let p = ToneCurve::Parameterized { gamma: 5.0, knee: 0.0, scale: 1.0 };
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert_eq!(p.apply(x).unwrap(), s.apply(x).unwrap());
        }
        assert!(ToneCurve::Parameterized { gamma: 2.2, knee: -1.0, scale: 1.0 }.validate().is_err());
        let j: ToneCurve = serde_json::from_str(r#"{"variant":"simplest","gamma":5}"#).unwrap();
        assert_eq!(j, s);
    }

    proptest! {
        #[test]
        fn curves_are_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, gamma in 0.2f64..8.0, knee in 0.0f64..5.0, scale in 0.1f64..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for c in [ToneCurve::Simplest { gamma }, ToneCurve::Parameterized { gamma, knee, scale }] {
                prop_assert!(c.apply(lo).unwrap() <= c.apply(hi).unwrap());
                prop_assert!(c.apply(0.0).unwrap() == 0.0);
            }
        }
    }

    #[test]
    fn demosaic_constant_and_impulse() {
        let f = RawFrame::filled(meta(6, 6), 0.3).unwrap();
        assert!(demosaic_bilinear(&f).data.iter().all(|&v| v == 0.3));
        let mut px = vec![0.0; 36];
        px[2 * 6 + 2] = 1.0; // R site
        let rgb = demosaic_bilinear(&RawFrame::new(meta(6, 6), px).unwrap());
        for i in 0..36 {
            assert_eq!(rgb.data[3 * i + 1], 0.0);
            assert_eq!(rgb.data[3 * i + 2], 0.0);
        }
        assert_eq!(rgb.data[3 * (2 * 6 + 2)], 1.0);
        assert_eq!(rgb.data[3 * (2 * 6 + 3)], 0.5);
        assert_eq!(rgb.data[3 * (3 * 6 + 3)], 0.25);
    }

    #[test]
    fn demosaic_reproduces_ramps() {
        let (w, h) = (16, 8);
        let px = (0..h).flat_map(|_| (0..w).map(|c| 100.0 + 10.0 * c as f64)).collect();
        let rgb = demosaic_bilinear(&RawFrame::new(meta(w, h), px).unwrap());
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                for ch in 0..3 {
                    assert!((rgb.data[3 * (r * w + c) + ch] - (100.0 + 10.0 * c as f64)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn develop_extremes_and_symmetry() {
        let c = ToneCurve::default();
        let black = develop(&RawFrame::filled(meta(4, 4), 64.0).unwrap(), &c).unwrap();
        assert!(black.data.iter().all(|&v| v == 0));
        let white = develop(&RawFrame::filled(meta(4, 4), 1023.0).unwrap(), &c).unwrap();
        assert!(white.data.iter().all(|&v| v == 255));
        assert_eq!(white.to_ppm()[..11], *b"P6\n4 4\n255\n");

        let px: Vec<f64> = (0..64).map(|i| 64.0 + ((i * 37) % 900) as f64).collect();
        let f = RawFrame::new(meta(8, 8), px).unwrap();
        let a = develop(&f, &c).unwrap();
        let b = develop(&f.mirror_horizontal(), &c).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                assert_eq!(a.pixel(r, col), b.pixel(r, 7 - col));
            }
        }
    }
}
