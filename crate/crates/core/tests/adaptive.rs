use proptest::prelude::*;

use uplift::bench::{adaptive_infer, AdaptiveConfig, VelocitySource};
use uplift::geometry::{Pose2D, Pose3D, Skeleton};
use uplift::network::{ModelConfig, Uplifter};
use uplift::sequencing::StrideSchedule;
use uplift::synth::{synthesize, SynthConfig};
use uplift::training::{infer_clip, ModelPredictor, TrainingSet};

fn setup(frames: usize) -> (ModelPredictor, TrainingSet, StrideSchedule) {
    let base = StrideSchedule::new(9, 4, 1).unwrap();
    let model = Uplifter::new(ModelConfig::tiny(base, 17)).unwrap();
    let params = model.init_params(5);
    let ds = synthesize(
        &SynthConfig { sequences: 1, frames, seed: 11, ..SynthConfig::default() },
        &Skeleton::h36m(),
    )
    .unwrap();
    (ModelPredictor::new(model, params), TrainingSet::from_dataset(&ds).unwrap(), base)
}

fn bits(p: &[Pose3D]) -> Vec<u64> {
    p.iter().flat_map(|q| q.0.iter().flatten().map(|v| v.to_bits())).collect()
}

fn run(
    pred: &ModelPredictor,
    set: &TrainingSet,
    base: &StrideSchedule,
    cfg: &AdaptiveConfig,
    inputs: &[Pose2D],
    velocity: VelocitySource<'_>,
) -> uplift::bench::AdaptiveOutput {
    adaptive_infer(pred, 0, inputs, base, cfg, &set.skeleton, set.frame_rate, velocity, false).unwrap()
}

#[test]
fn equal_strides_match_plain_inference() {
    let (pred, set, base) = setup(60);
    let inputs = &set.clips[0].inputs;
    let cfg = AdaptiveConfig { slow_stride: 2, fast_stride: 2, velocity_threshold: 0.01, cooldown: 3 };
    let out = run(&pred, &set, &base, &cfg, inputs, VelocitySource::Predicted);
    let plain = infer_clip(&pred, 0, inputs, &base.with_stride_in(2).unwrap(), &set.skeleton, false).unwrap();
    assert_eq!(bits(&out.poses), bits(&plain));
    assert!(out.trace.iter().all(|&s| s == 2));
}

#[test]
fn unreachable_threshold_stays_slow() {
    let (pred, set, base) = setup(60);
    let inputs = &set.clips[0].inputs;
    let cfg = AdaptiveConfig { slow_stride: 4, fast_stride: 2, velocity_threshold: f64::INFINITY, cooldown: 3 };
    let out = run(&pred, &set, &base, &cfg, inputs, VelocitySource::Predicted);
    let plain = infer_clip(&pred, 0, inputs, &base, &set.skeleton, false).unwrap();
    assert_eq!(bits(&out.poses), bits(&plain));
    assert!(out.switches.is_empty());
    assert_eq!(out.forwards, 60);
}

#[test]
fn oracle_length_mismatch_is_rejected() {
    let (pred, set, base) = setup(30);
    let v = vec![0.0; 29];
    let r = adaptive_infer(
        &pred,
        0,
        &set.clips[0].inputs,
        &base,
        &AdaptiveConfig { slow_stride: 4, fast_stride: 2, ..AdaptiveConfig::default() },
        &set.skeleton,
        set.frame_rate,
        VelocitySource::Oracle(&v),
        false,
    );
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_follows_switches(
        vel in prop::collection::vec(prop_oneof![Just(0.1f64), Just(0.9f64)], 40),
        cooldown in 1usize..8,
    ) {
        let (pred, set, base) = setup(40);
        let cfg = AdaptiveConfig { slow_stride: 4, fast_stride: 2, velocity_threshold: 0.5, cooldown };
        let out = run(&pred, &set, &base, &cfg, &set.clips[0].inputs, VelocitySource::Oracle(&vel));
        prop_assert_eq!(out.trace.len(), 40);
        prop_assert_eq!(out.poses.len(), 40);
        // switches alternate, starting from the slow stride
        let mut current = cfg.slow_stride;
        for s in &out.switches {
            prop_assert_ne!(s.stride, current);
            prop_assert_eq!(s.frame % base.stride_out, 0);
            current = s.stride;
        }
        for f in 0..40 {
            let expected = out
                .switches
                .iter()
                .rev()
                .find(|s| s.frame <= f)
                .map_or(cfg.slow_stride, |s| s.stride);
            prop_assert_eq!(out.trace[f], expected);
        }
        // any frame above threshold forces the fast stride there
        for (f, &v) in vel.iter().enumerate() {
            if v > cfg.velocity_threshold {
                prop_assert_eq!(out.trace[f], cfg.fast_stride);
            }
        }
    }

    #[test]
    fn slow_motion_never_switches(v in 0.0f64..0.5) {
        let (pred, set, base) = setup(30);
        let vel = vec![v; 30];
        let cfg = AdaptiveConfig { slow_stride: 4, fast_stride: 2, velocity_threshold: 0.5, cooldown: 5 };
        let out = run(&pred, &set, &base, &cfg, &set.clips[0].inputs, VelocitySource::Oracle(&vel));
        prop_assert!(out.switches.is_empty());
        prop_assert!(out.trace.iter().all(|&s| s == 4));
    }
}
