mod common;

use common::random_spec;
use gop_reuse::accumulate::{accumulate_gop, brute_force_accumulate_f64, Interpolation};
use gop_reuse::synth::{generate, MotionModel, SynthSpec};

#[test]
fn translation_chain_sums_displacements_away_from_borders() {
    let spec = SynthSpec {
        frame_size: (64, 64),
        gop_pattern: "IPPP".into(),
        gop_count: 1,
        motion_model: MotionModel::UniformTranslation { dx: 2.0, dy: 1.0 },
        residual_noise_sigma: 0.0,
        injections: vec![],
        seed: 0,
        target_class: 0,
    };
    let stream = generate(&spec).unwrap();
    let acc = accumulate_gop(&stream, Interpolation::Bilinear).unwrap();
    for (k, a) in acc.iter().enumerate().skip(1) {
        let oracle = brute_force_accumulate_f64(&stream, a.frame_index, Interpolation::Bilinear).unwrap();
        assert!(oracle.max_abs_diff(a) < 1e-5);
        // interior blocks see k steps of (-2, -1)
        let v = a.mv_acc.vector(8, 8);
        assert_eq!([v[0], v[1]], [-2.0 * k as f32, -(k as f32)], "frame {}", a.frame_index);
    }
}

#[test]
fn nearest_interpolation_matches_oracle() {
    for seed in 0..40 {
        let stream = generate(&random_spec(900 + seed, 16, 48)).unwrap();
        for gop in stream.split_gops() {
            for a in accumulate_gop(&gop, Interpolation::Nearest).unwrap() {
                let o = brute_force_accumulate_f64(&gop, a.frame_index, Interpolation::Nearest).unwrap();
                assert!(o.max_abs_diff(&a) < 1e-5, "seed {seed} frame {}", a.frame_index);
            }
        }
    }
}

#[test]
fn b_frames_blend_both_anchors() {
    let mut spec = SynthSpec {
        frame_size: (16, 16),
        gop_pattern: "IBP".into(),
        gop_count: 1,
        motion_model: MotionModel::Static,
        residual_noise_sigma: 0.0,
        injections: vec![],
        seed: 0,
        target_class: 0,
    };
    for (frame_index, intensity) in [(2, 1.0), (3, 4.0)] {
        spec.injections.push(gop_reuse::synth::Injection {
            frame_index,
            bbox: gop_reuse::detector::BBox { x: 0.0, y: 0.0, w: 16.0, h: 16.0 },
            intensity,
            class_id: 1,
            moving: false,
        });
    }
    let acc = accumulate_gop(&generate(&spec).unwrap(), Interpolation::Bilinear).unwrap();
    assert!(acc[0].r_acc.planes().is_all_zero());
    assert!(acc[1].r_acc.planes().data().iter().all(|&v| v == 1.0 + 0.5 * 4.0));
    assert!(acc[2].r_acc.planes().data().iter().all(|&v| v == 4.0));
}
