use proptest::prelude::*;

use rawnoise::augment::{self, AugmentSpec};
use rawnoise::calibration;
use rawnoise::kernel::{BlurDirection, BlurKernel};
use rawnoise::noise_model::NoiseModel;
use rawnoise::raw::{self, Burst, Cfa, FrameMeta, GainValue, RawFrame};
use rawnoise::rng::NoiseStream;
use rawnoise::sensor_sim::{self, SceneMap, SensorSpec};
use rawnoise::stats;

fn meta16(w: usize, h: usize, db: f64) -> FrameMeta {
    FrameMeta {
        width: w,
        height: h,
        cfa: Cfa::Rggb,
        bit_depth: 16,
        black_level: 1024,
        white_level: 65535,
        gain_db: db,
        normalized: false,
    }
}

fn model() -> impl Strategy<Value = NoiseModel> {
    (0.2f64..5.0, 0.0f64..30.0, 0.0f64..120.0).prop_map(|(a, d, r)| NoiseModel { alpha: a, sigma_d2: d, sigma_r2: r })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Adding the correction variance to the scaled prior variance lands
    // exactly on the model at the target gain and mean.
    #[test]
    fn shift_variance_matches_target(m in model(), db in 0.0f64..30.0, mu in 0.0f64..5000.0, p_u in 0.01f64..1.0, p_g in 0.25f64..4.0) {
        let g = GainValue::from_db(db).linear;
        let lhs = (p_u * p_g).powi(2) * m.variance_unchecked(g, mu) + augment::shift_variance(&m, g, mu, p_u, p_g);
        let rhs = m.variance_unchecked(g * p_g, p_u * p_g * mu);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn darkening_never_clips(m in model(), db in 0.0f64..24.0, p_g in 1.0f64..4.0, t in 0.0f64..1.0, seed in any::<u64>()) {
        let p_u = t / p_g;
        let g = GainValue::from_db(db).linear;
        for mu in [0.0, 1.0, 100.0, 10_000.0] {
            prop_assert!(augment::shift_variance(&m, g, mu, p_u, p_g) >= 0.0);
        }
        let px: Vec<f64> = (0..64).map(|i| 1024.0 + 37.0 * i as f64).collect();
        let f = RawFrame::new(meta16(8, 8, db), px).unwrap();
        let out = augment::exposure_gain_shift(&f, &m, p_u.max(1e-3), p_g, &NoiseStream::new(seed)).unwrap();
        prop_assert_eq!(out.stats.clipped_variance, 0);
    }

    #[test]
    fn temporal_stats_ignore_frame_order(seed in any::<u64>(), rot in 1usize..5) {
        let scene = SceneMap::horizontal_ramp(8, 4, Cfa::Rggb, 10.0, 500.0).unwrap();
        let spec = SensorSpec::fourteen_bit(NoiseModel::new(1.2, 6.0, 25.0).unwrap());
        let burst = sensor_sim::capture_burst(&scene, GainValue::from_db(12.0), &spec, 6, &NoiseStream::new(seed)).unwrap();
        let mut frames = burst.frames().to_vec();
        frames.rotate_left(rot);
        frames.swap(0, 3);
        let a = calibration::temporal_stats(&burst).unwrap();
        let b = calibration::temporal_stats(&Burst::new(frames).unwrap()).unwrap();
        for i in 0..a.mean.len() {
            prop_assert!((a.mean[i] - b.mean[i]).abs() <= 1e-9 * a.mean[i].abs().max(1.0));
            prop_assert!((a.variance[i] - b.variance[i]).abs() <= 1e-9 * a.variance[i].max(1.0));
        }
    }

    #[test]
    fn ksigma_round_trips(m in model(), db in 0.0f64..24.0, vals in proptest::collection::vec(1024.0f64..65535.0, 16)) {
        let f = RawFrame::new(meta16(4, 4, db), vals).unwrap();
        let y = augment::ksigma_forward(&f, &m).unwrap();
        let back = augment::ksigma_inverse(&y, f.meta(), &m).unwrap();
        for (a, b) in f.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn linear_kernels_are_normalized(d in 0u32..14, vertical in any::<bool>()) {
        let dir = if vertical { BlurDirection::Vertical } else { BlurDirection::Horizontal };
        let k = BlurKernel::linear(d, dir);
        prop_assert!(k.validate().is_ok());
        prop_assert_eq!(k.taps.len(), 2 * d as usize + 1);
        prop_assert!((k.sum_sq() - 1.0 / f64::from(2 * d + 1)).abs() < 1e-12);
    }

    #[test]
    fn raw16_round_trip(vals in proptest::collection::vec(0u16..=1023, 24)) {
        let dir = tempfile::tempdir().unwrap();
        let meta = FrameMeta { bit_depth: 10, black_level: 64, white_level: 1023, ..meta16(6, 4, 6.0) };
        let f = RawFrame::new(meta, vals.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let p = dir.path().join("f.raw16");
        raw::save_frame(&f, &p).unwrap();
        prop_assert_eq!(raw::load_frame(&p).unwrap(), f);
    }
}

/// Two successive darkenings match one darkening by the product, as
/// distributions of the output pixels.
#[test]
fn shift_composes() {
    let m = NoiseModel::new(1.2, 6.0, 25.0).unwrap();
    let spec = SensorSpec { bit_depth: 16, black_level: 1024, white_level: 65535, quantize: false, model: m };
    let scene = SceneMap::uniform(128, 128, Cfa::Rggb, 300.0).unwrap();
    let gain = GainValue::from_db(12.0);
    let root = NoiseStream::new(77);
    let a = sensor_sim::capture(&scene, gain, &spec, &root.derive(0)).unwrap();
    let b = sensor_sim::capture(&scene, gain, &spec, &root.derive(1)).unwrap();
    let two = augment::exposure_gain_shift(&a, &m, 0.5, 1.0, &root.derive(2)).unwrap().frame;
    let two = augment::exposure_gain_shift(&two, &m, 0.4, 1.0, &root.derive(3)).unwrap().frame;
    let one = augment::exposure_gain_shift(&b, &m, 0.2, 1.0, &root.derive(4)).unwrap().frame;
    let t = stats::ks_two_sample(two.pixels(), one.pixels()).unwrap();
    assert!(t.p_value > 1e-3, "D={} p={}", t.statistic, t.p_value);
    let (v2, v1) = (stats::variance(two.pixels()), stats::variance(one.pixels()));
    let target = m.variance_at(gain, 0.2 * gain.linear * 1.2 * 300.0).unwrap();
    // Relative sd of a variance from 16k samples is about 1.1%.
    assert!((v2 / target - 1.0).abs() < 0.05 && (v1 / target - 1.0).abs() < 0.05, "{v2} {v1} {target}");
}

/// An identity spec leaves pixels untouched through the full pipeline,
/// except without prior accounting, which treats the input as clean.
#[test]
fn identity_spec_passes_through() {
    let m = NoiseModel::new(1.2, 6.0, 25.0).unwrap();
    let spec = SensorSpec::fourteen_bit(m);
    let scene = SceneMap::horizontal_ramp(32, 16, Cfa::Rggb, 5.0, 900.0).unwrap();
    let f = sensor_sim::capture(&scene, GainValue::from_db(6.0), &spec, &NoiseStream::new(5)).unwrap();
    for method in [augment::Method::Ours, augment::Method::Naive] {
        let out = augment::augment(&f, &m, &AugmentSpec::identity(3), method).unwrap();
        assert_eq!(out.frame, f);
    }
    let wo = augment::augment(&f, &m, &AugmentSpec::identity(3), augment::Method::WoPrior).unwrap();
    assert_ne!(wo.frame, f);
}
