#![allow(dead_code)]

use gop_reuse::detector::{BBox, DetectorBinding};
use gop_reuse::synth::{generate, Injection, MotionModel, SynthSpec};
use gop_reuse::{GopStream, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub const GRID_TAU_CONF: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const GRID_TAU_AB: [f64; 5] = [4e-3, 8e-3, 1.2e-2, 1.6e-2, 2e-2];

pub fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/protocol").join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `I` followed by `len - 1` random P/B-frames, never ending on a B.
pub fn random_pattern(rng: &mut impl Rng, len: usize) -> String {
    let mut p = String::from("I");
    for k in 1..len {
        let last = k + 1 == len;
        p.push(if !last && rng.random_bool(0.5) { 'B' } else { 'P' });
    }
    p
}

/// Random spec with per-block random motion, Gaussian residuals and a few
/// injections.
pub fn random_spec(seed: u64, max_gop_len: usize, max_side: u32) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gop_len = rng.random_range(2..=max_gop_len);
    let h = 4 * rng.random_range(2..=max_side / 4);
    let w = 4 * rng.random_range(2..=max_side / 4);
    let gop_count = rng.random_range(1..=2);
    let frame_count = (gop_len * gop_count) as u32;
    let injections = (0..rng.random_range(0..3))
        .map(|_| {
            let bw = rng.random_range(1..=w / 2) as f32;
            let bh = rng.random_range(1..=h / 2) as f32;
            Injection {
                frame_index: rng.random_range(1..=frame_count),
                bbox: BBox {
                    x: rng.random_range(0.0..(w as f32 - bw)),
                    y: rng.random_range(0.0..(h as f32 - bh)),
                    w: bw,
                    h: bh,
                },
                intensity: rng.random_range(-20.0..20.0),
                class_id: rng.random_range(0..2),
                moving: rng.random_bool(0.5),
            }
        })
        .collect();
    SynthSpec {
        frame_size: (h, w),
        gop_pattern: random_pattern(&mut rng, gop_len),
        gop_count: gop_count as u32,
        motion_model: MotionModel::PerBlockRandom {
            seed: rng.random(),
            max_mag: rng.random_range(0.0..3.0),
        },
        residual_noise_sigma: rng.random_range(0.0..1.0),
        injections,
        seed: rng.random(),
        target_class: 0,
    }
}

/// Static 128x128 noise: about 8 of 1024 cells leave the 3-sigma band per
/// frame, so reuse ranges from rare to near-total across the default sweep grid.
pub fn rr_corpus() -> GopStream {
    generate(&SynthSpec {
        frame_size: (128, 128),
        gop_pattern: "IBBBP".into(),
        gop_count: 40,
        motion_model: MotionModel::Static,
        residual_noise_sigma: 1.0,
        injections: vec![],
        seed: 2024,
        target_class: 0,
    })
    .unwrap()
}

/// 64x64 static-noise stream with rare small objects appearing on P-frames.
pub fn trend_spec(gops: u32, seed: u64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = "IBBBP";
    let injections = (0..gops)
        .filter_map(|g| {
            rng.random_bool(0.03).then(|| Injection {
                frame_index: g * pattern.len() as u32 + 5,
                bbox: BBox {
                    x: 4.0 * rng.random_range(0..14) as f32,
                    y: 4.0 * rng.random_range(0..14) as f32,
                    w: 8.0,
                    h: 8.0,
                },
                intensity: 50.0,
                class_id: 0,
                moving: false,
            })
        })
        .collect();
    SynthSpec {
        frame_size: (64, 64),
        gop_pattern: pattern.into(),
        gop_count: gops,
        motion_model: MotionModel::Static,
        residual_noise_sigma: 1.0,
        injections,
        seed,
        target_class: 0,
    }
}

pub fn noisy_config(c_i: f64, c_pb: f64, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        i_detector: DetectorBinding::Noisy {
            capability: c_i,
            seed: 0,
            delay_ms: 0.0,
        },
        pb_detector: DetectorBinding::Noisy {
            capability: c_pb,
            seed: 0,
            delay_ms: 0.0,
        },
        ..PipelineConfig::default()
    };
    cfg.set_seed(seed);
    cfg
}

pub fn with_delays(mut cfg: PipelineConfig, i_ms: f64, pb_ms: f64) -> PipelineConfig {
    for (b, ms) in [(&mut cfg.i_detector, i_ms), (&mut cfg.pb_detector, pb_ms)] {
        match b {
            DetectorBinding::Oracle { delay_ms }
            | DetectorBinding::Noisy { delay_ms, .. }
            | DetectorBinding::Null { delay_ms } => *delay_ms = ms,
            DetectorBinding::External { .. } => {}
        }
    }
    cfg
}
