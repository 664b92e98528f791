//! Index bookkeeping for sparse key-frame windows: schedule validation,
//! pose/upsampling token placement, per-window frame plans and the
//! sliding-window inference grid.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window geometry `(N, s_in, s_out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrideSchedule {
    /// Temporal receptive field `N = 2n + 1`, in frames.
    pub window: usize,
    pub stride_in: usize,
    pub stride_out: usize,
}

/// A single broken schedule invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ScheduleViolation {
    WindowNotOdd { window: usize },
    ZeroStride,
    InputNotMultipleOfOutput { stride_in: usize, stride_out: usize },
    OutputGridMisaligned { window: usize, stride_out: usize },
    CenterNotOutputSlot { half_window: usize, stride_out: usize },
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleViolation::WindowNotOdd { window } => {
                write!(f, "N must be odd (got {window})")
            }
            ScheduleViolation::ZeroStride => write!(f, "strides must be >= 1"),
            ScheduleViolation::InputNotMultipleOfOutput {
                stride_in,
                stride_out,
            } => write!(
                f,
                "s_in ({stride_in}) must be a multiple of s_out ({stride_out})"
            ),
            ScheduleViolation::OutputGridMisaligned { window, stride_out } => write!(
                f,
                "(N - 1) mod s_out must be 0 (N = {window}, s_out = {stride_out})"
            ),
            ScheduleViolation::CenterNotOutputSlot {
                half_window,
                stride_out,
            } => write!(
                f,
                "center offset n = {half_window} is not a multiple of s_out = {stride_out}"
            ),
        }
    }
}

/// Check every schedule invariant, collecting all violations.
pub fn validate_schedule(s: &StrideSchedule) -> Vec<ScheduleViolation> {
    let mut v = Vec::new();
    if s.window % 2 == 0 {
        v.push(ScheduleViolation::WindowNotOdd { window: s.window });
    }
    if s.stride_in == 0 || s.stride_out == 0 {
        v.push(ScheduleViolation::ZeroStride);
        return v;
    }
    if s.stride_in % s.stride_out != 0 {
        v.push(ScheduleViolation::InputNotMultipleOfOutput {
            stride_in: s.stride_in,
            stride_out: s.stride_out,
        });
    }
    let span = s.window.saturating_sub(1);
    if span % s.stride_out != 0 {
        v.push(ScheduleViolation::OutputGridMisaligned {
            window: s.window,
            stride_out: s.stride_out,
        });
    } else if s.window % 2 == 1 && (span / 2) % s.stride_out != 0 {
        v.push(ScheduleViolation::CenterNotOutputSlot {
            half_window: span / 2,
            stride_out: s.stride_out,
        });
    }
    v
}

impl StrideSchedule {
    pub fn new(window: usize, stride_in: usize, stride_out: usize) -> Result<Self> {
        let s = StrideSchedule {
            window,
            stride_in,
            stride_out,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_schedule(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(v))
        }
    }

    pub fn half_window(&self) -> usize {
        (self.window - 1) / 2
    }

    /// `N_out = (N - 1) / s_out + 1`.
    pub fn n_out(&self) -> usize {
        (self.window - 1) / self.stride_out + 1
    }

    /// Same window and output stride, different input stride.
    pub fn with_stride_in(&self, stride_in: usize) -> Result<Self> {
        StrideSchedule::new(self.window, stride_in, self.stride_out)
    }
}

/// Whether an output slot carries a pose token or the upsampling token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Pose,
    Upsample,
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotKind::Pose => "PT",
            SlotKind::Upsample => "UT",
        })
    }
}

/// Placement of pose tokens among the `N_out` output slots of a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub n_out: usize,
    pub pose_slots: Vec<usize>,
    pub upsample_slots: Vec<usize>,
    /// Window-relative frame offset of the first key-frame.
    pub phase: usize,
}

/// Layout with key-frames anchored at the first frame of the window.
pub fn token_layout(schedule: &StrideSchedule) -> Result<TokenLayout> {
    token_layout_with_phase(schedule, 0)
}

/// Layout whose key-frame grid starts `phase` frames into the window.
/// `phase` must be a multiple of `s_out` smaller than `s_in`.
pub fn token_layout_with_phase(schedule: &StrideSchedule, phase: usize) -> Result<TokenLayout> {
    schedule.validate()?;
    if phase >= schedule.stride_in || phase % schedule.stride_out != 0 {
        return Err(Error::Config(format!(
            "key-frame phase {phase} must be a multiple of s_out = {} below s_in = {}",
            schedule.stride_out, schedule.stride_in
        )));
    }
    let n_out = schedule.n_out();
    let pose_slots: Vec<usize> = (phase..schedule.window)
        .step_by(schedule.stride_in)
        .map(|i| i / schedule.stride_out)
        .collect();
    let mut is_pose = vec![false; n_out];
    for &s in &pose_slots {
        is_pose[s] = true;
    }
    let upsample_slots = (0..n_out).filter(|&i| !is_pose[i]).collect();
    Ok(TokenLayout {
        n_out,
        pose_slots,
        upsample_slots,
        phase,
    })
}

impl TokenLayout {
    /// Every slot a pose token.
    pub fn dense(n_out: usize) -> Self {
        TokenLayout {
            n_out,
            pose_slots: (0..n_out).collect(),
            upsample_slots: Vec::new(),
            phase: 0,
        }
    }

    /// Arbitrary layout from a pose-slot list (sorted, deduplicated).
    pub fn from_pose_slots(n_out: usize, mut pose_slots: Vec<usize>) -> Result<Self> {
        pose_slots.sort_unstable();
        pose_slots.dedup();
        if pose_slots.is_empty() {
            return Err(Error::Config("layout needs at least one pose slot".into()));
        }
        if pose_slots.last().is_some_and(|&s| s >= n_out) {
            return Err(Error::Config("pose slot out of range".into()));
        }
        let upsample_slots = (0..n_out).filter(|i| pose_slots.binary_search(i).is_err()).collect();
        Ok(TokenLayout {
            n_out,
            pose_slots,
            upsample_slots,
            phase: 0,
        })
    }

    pub fn n_in(&self) -> usize {
        self.pose_slots.len()
    }

    pub fn center_slot(&self) -> usize {
        (self.n_out - 1) / 2
    }

    pub fn kinds(&self) -> Vec<SlotKind> {
        let mut k = vec![SlotKind::Upsample; self.n_out];
        for &s in &self.pose_slots {
            k[s] = SlotKind::Pose;
        }
        k
    }

    /// Comma-separated `PT`/`UT` pattern.
    pub fn pattern(&self) -> String {
        self.kinds()
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Absolute frame indices used by one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub center: usize,
    /// All `N` window frames after clamping to the video.
    pub frames: Vec<usize>,
    /// Frames feeding pose tokens, one per pose slot.
    pub input_frames: Vec<usize>,
    /// Frames of the `N_out` output slots.
    pub output_frames: Vec<usize>,
    pub layout: TokenLayout,
    /// Number of window positions clamped at the start / end of the video.
    pub clamped_left: usize,
    pub clamped_right: usize,
}

/// Window around `t` with key-frames anchored at the window start.
pub fn window_plan(t: usize, video_len: usize, schedule: &StrideSchedule) -> Result<WindowPlan> {
    plan_with_layout(t, video_len, schedule, token_layout(schedule)?)
}

/// Window around `t` whose key-frames are the global grid `{0, s_in, 2 s_in, ...}`
/// (the only 2D poses available at inference time).
pub fn window_plan_global(
    t: usize,
    video_len: usize,
    schedule: &StrideSchedule,
) -> Result<WindowPlan> {
    let start = t as i64 - schedule.half_window() as i64;
    let phase = (-start).rem_euclid(schedule.stride_in as i64) as usize;
    plan_with_layout(
        t,
        video_len,
        schedule,
        token_layout_with_phase(schedule, phase)?,
    )
}

/// Window around `t` for an explicit layout.
pub fn plan_with_layout(
    t: usize,
    video_len: usize,
    schedule: &StrideSchedule,
    layout: TokenLayout,
) -> Result<WindowPlan> {
    schedule.validate()?;
    if t >= video_len {
        return Err(Error::Config(format!(
            "center frame {t} outside video of {video_len} frames"
        )));
    }
    let n = schedule.half_window() as i64;
    let last = video_len as i64 - 1;
    let mut clamped_left = 0;
    let mut clamped_right = 0;
    let frames: Vec<usize> = (-n..=n)
        .map(|o| {
            let f = t as i64 + o;
            if f < 0 {
                clamped_left += 1;
            } else if f > last {
                clamped_right += 1;
            }
            f.clamp(0, last) as usize
        })
        .collect();
    let input_frames = layout
        .pose_slots
        .iter()
        .map(|&s| frames[s * schedule.stride_out])
        .collect();
    let output_frames = (0..layout.n_out)
        .map(|s| frames[s * schedule.stride_out])
        .collect();
    Ok(WindowPlan {
        center: t,
        frames,
        input_frames,
        output_frames,
        layout,
        clamped_left,
        clamped_right,
    })
}

/// Window centers for sliding inference: every `s_out`-th frame.
pub fn sliding_plan(video_len: usize, schedule: &StrideSchedule) -> Vec<usize> {
    (0..video_len.max(1)).step_by(schedule.stride_out.max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_examples() {
        let l = token_layout(&StrideSchedule::new(9, 4, 1).unwrap()).unwrap();
        assert_eq!(l.n_out, 9);
        assert_eq!(l.pose_slots, vec![0, 4, 8]);
        assert_eq!(l.pattern(), "PT,UT,UT,UT,PT,UT,UT,UT,PT");

        let dense = token_layout(&StrideSchedule::new(9, 1, 1).unwrap()).unwrap();
        assert_eq!(dense.pose_slots.len(), 9);
        assert!(dense.upsample_slots.is_empty());

        let big = token_layout(&StrideSchedule::new(351, 20, 5).unwrap()).unwrap();
        assert_eq!(big.n_out, 71);
        assert_eq!(big.pose_slots, (0..=68).step_by(4).collect::<Vec<_>>());
        assert_eq!(big.pose_slots.len(), 18);
        assert_eq!(big.upsample_slots.len(), 53);
    }

    #[test]
    fn schedule_validation() {
        assert!(validate_schedule(&StrideSchedule { window: 351, stride_in: 20, stride_out: 5 }).is_empty());
        assert_eq!(
            validate_schedule(&StrideSchedule { window: 80, stride_in: 4, stride_out: 1 }),
            vec![ScheduleViolation::WindowNotOdd { window: 80 }]
        );
        // 80 is divisible by 4, so only the stride ratio is broken here
        assert_eq!(
            validate_schedule(&StrideSchedule { window: 81, stride_in: 10, stride_out: 4 }),
            vec![ScheduleViolation::InputNotMultipleOfOutput { stride_in: 10, stride_out: 4 }]
        );
        assert_eq!(
            validate_schedule(&StrideSchedule { window: 81, stride_in: 9, stride_out: 3 }),
            vec![ScheduleViolation::OutputGridMisaligned { window: 81, stride_out: 3 }]
        );
        assert_eq!(
            validate_schedule(&StrideSchedule { window: 7, stride_in: 6, stride_out: 6 }),
            vec![ScheduleViolation::CenterNotOutputSlot { half_window: 3, stride_out: 6 }]
        );
        assert_eq!(
            validate_schedule(&StrideSchedule { window: 9, stride_in: 0, stride_out: 1 }),
            vec![ScheduleViolation::ZeroStride]
        );
    }

    #[test]
    fn window_plan_examples() {
        let s = StrideSchedule::new(9, 1, 1).unwrap();
        let p = window_plan(4, 100, &s).unwrap();
        assert_eq!(p.frames, (0..9).collect::<Vec<_>>());
        assert_eq!((p.clamped_left, p.clamped_right), (0, 0));

        let p0 = window_plan(0, 100, &s).unwrap();
        assert_eq!(&p0.frames[..5], &[0, 0, 0, 0, 0]);
        assert_eq!(p0.clamped_left, 4);

        let end = window_plan(8, 10, &s).unwrap();
        assert_eq!(end.frames, vec![4, 5, 6, 7, 8, 9, 9, 9, 9]);
        assert_eq!(end.clamped_right, 3);
    }

    #[test]
    fn global_plan_uses_global_key_frames() {
        let s = StrideSchedule::new(81, 20, 2).unwrap();
        for t in (40..400).step_by(2) {
            let p = window_plan_global(t, 1000, &s).unwrap();
            assert!(p.input_frames.iter().all(|f| f % 20 == 0), "t = {t}");
            assert_eq!(p.output_frames[p.layout.center_slot()], t);
        }
    }

    #[test]
    fn sliding_examples() {
        let s5 = StrideSchedule::new(11, 5, 5).unwrap();
        assert_eq!(sliding_plan(10, &s5), vec![0, 5]);
        let s1 = StrideSchedule::new(9, 1, 1).unwrap();
        assert_eq!(sliding_plan(4, &s1), vec![0, 1, 2, 3]);
        assert_eq!(sliding_plan(1, &s5), vec![0]);
    }

    fn valid_schedule() -> impl Strategy<Value = StrideSchedule> {
        (1usize..6, 1usize..6, 1usize..30).prop_map(|(s_out, k, m)| StrideSchedule {
            window: 2 * m * s_out + 1,
            stride_in: k * s_out,
            stride_out: s_out,
        })
    }

    proptest! {
        #[test]
        fn layout_partitions_slots(s in valid_schedule()) {
            let l = token_layout(&s).unwrap();
            prop_assert_eq!(l.pose_slots.len() + l.upsample_slots.len(), l.n_out);
            prop_assert_eq!(l.pose_slots.len(), (s.window - 1) / s.stride_in + 1);
            prop_assert_eq!(l.n_out, (s.window - 1) / s.stride_out + 1);
            if s.stride_in == s.stride_out {
                prop_assert!(l.upsample_slots.is_empty());
            }
        }

        #[test]
        fn plan_contains_center(s in valid_schedule(), len in 1usize..300, t_frac in 0.0f64..1.0) {
            let t = ((len as f64 - 1.0) * t_frac) as usize;
            let p = window_plan(t, len, &s).unwrap();
            prop_assert_eq!(p.output_frames[p.layout.center_slot()], t);
            prop_assert_eq!(p.output_frames.len(), s.n_out());
            prop_assert!(p.input_frames.len() <= (s.window - 1) / s.stride_in + 1);
            let g = window_plan_global(t - t % s.stride_out, len, &s).unwrap();
            prop_assert_eq!(g.output_frames[g.layout.center_slot()], t - t % s.stride_out);
        }
    }
}
