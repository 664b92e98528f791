use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::network::{flops_estimate, ModelConfig, Mode, ParamStore, Uplifter};
use crate::sequencing::{sliding_plan, window_plan_global};

pub const FLOPS_CONVENTION: &str = "1 multiply-accumulate = 2 FLOPs; matrix products only";
pub const PPS_PROTOCOL: &str = "single-threaded, one window per forward pass, no batching, \
warm-up forwards discarded; PPS = forward passes per second * s_out (3D poses emitted per second, \
2D detection excluded)";

/// Throughput and complexity of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub window: usize,
    pub stride_in: usize,
    pub stride_out: usize,
    pub d_temp: usize,
    pub k_temp: usize,
    pub flops_per_forward: f64,
    pub flops_convention: String,
    pub forwards: usize,
    pub forwards_per_second: f64,
    pub poses_per_second: f64,
    pub frame_rate: f64,
    /// `poses_per_second / frame_rate`; above 1 means faster than real time.
    pub realtime_factor: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub protocol: String,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

impl BenchReport {
    /// Assemble a report from per-forward wall-clock samples (seconds).
    pub fn from_timings(cfg: &ModelConfig, samples: &[f64], frame_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("no timing samples".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let total: f64 = samples.iter().sum();
        let fps = samples.len() as f64 / total.max(f64::MIN_POSITIVE);
        let pps = fps * cfg.schedule.stride_out as f64;
        Ok(BenchReport {
            window: cfg.schedule.window,
            stride_in: cfg.schedule.stride_in,
            stride_out: cfg.schedule.stride_out,
            d_temp: cfg.d_temp,
            k_temp: cfg.k_temp,
            flops_per_forward: flops_estimate(cfg).total,
            flops_convention: FLOPS_CONVENTION.into(),
            forwards: samples.len(),
            forwards_per_second: fps,
            poses_per_second: pps,
            frame_rate,
            realtime_factor: pps / frame_rate,
            median_ms: percentile(&sorted, 0.5) * 1e3,
            p95_ms: percentile(&sorted, 0.95) * 1e3,
            protocol: PPS_PROTOCOL.into(),
        })
    }
}

/// Time eval-mode forward passes over sliding windows of a random clip
/// for at least `duration` and `min_forwards` passes.
pub fn bench_throughput(
    model: &Uplifter,
    params: &ParamStore,
    duration: Duration,
    min_forwards: usize,
    frame_rate: f64,
) -> Result<BenchReport> {
    let cfg = model.config();
    let sched = cfg.schedule;
    let len = sched.window * 4;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clip: Vec<Pose2D> = (0..len)
        .map(|_| Pose2D((0..cfg.joints).map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]).collect()))
        .collect();
    let plans = sliding_plan(len, &sched)
        .into_iter()
        .map(|t| window_plan_global(t, len, &sched))
        .collect::<Result<Vec<_>>>()?;
    let run = |i: usize| -> Result<()> {
        let plan = &plans[i % plans.len()];
        let inputs: Vec<Pose2D> = plan.input_frames.iter().map(|&f| clip[f].clone()).collect();
        model.forward(params, &inputs, &plan.layout, Mode::Eval).map(|_| ())
    };
    for i in 0..3 {
        run(i)?;
    }
    let start = Instant::now();
    let mut samples = Vec::new();
    while samples.len() < min_forwards.max(1) || start.elapsed() < duration {
        let t0 = Instant::now();
        run(samples.len())?;
        samples.push(t0.elapsed().as_secs_f64());
    }
    BenchReport::from_timings(cfg, &samples, frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequencing::StrideSchedule;

    #[test]
    fn pps_scales_with_output_stride() {
        let samples = [0.010, 0.012, 0.011, 0.030];
        let a = ModelConfig::tiny(StrideSchedule::new(81, 20, 5).unwrap(), 17);
        let b = ModelConfig::tiny(StrideSchedule::new(81, 20, 10).unwrap(), 17);
        let ra = BenchReport::from_timings(&a, &samples, 50.0).unwrap();
        let rb = BenchReport::from_timings(&b, &samples, 50.0).unwrap();
        assert!((rb.poses_per_second / ra.poses_per_second - 2.0).abs() < 1e-12);
        assert_eq!(ra.median_ms, 12.0);
        assert_eq!(ra.p95_ms, 30.0);
        assert_eq!(ra.flops_per_forward, flops_estimate(&a).total);
    }

    #[test]
    fn measured_report_is_sane() {
        let cfg = ModelConfig::tiny(StrideSchedule::new(25, 4, 2).unwrap(), 17);
        let m = Uplifter::new(cfg.clone()).unwrap();
        let p = m.init_params(0);
        let r = bench_throughput(&m, &p, Duration::from_millis(20), 5, 50.0).unwrap();
        assert!(r.poses_per_second > 0.0 && r.forwards >= 5);
        assert_eq!(r.flops_per_forward, flops_estimate(&cfg).total);
        assert!(r.median_ms <= r.p95_ms);
    }
}
