//! C ABI over the uplift library.
//!
//! Objects are opaque heap handles created by `*_load` / `*_new` functions
//! and released with the matching `*_free`. Every fallible call returns an
//! [`UpliftStatus`]; on failure a human-readable message is available from
//! [`uplift_last_error_message`] on the same thread.
//!
//! Pose buffers are flat, row-major `f64` arrays: 2D inputs are
//! `frames * joints * 2` normalized image coordinates, 3D outputs are
//! `frames * joints * 3` camera-space millimetres.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use uplift::geometry::{Pose2D, Pose3D, Skeleton};
use uplift::network::{flops_estimate, Checkpoint, ModelConfig, Uplifter};
use uplift::sequencing::{token_layout, StrideSchedule};
use uplift::synth::Dataset;
use uplift::training::{infer_clip, ModelPredictor, TrainingSet};
use uplift::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpliftStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSchedule = 3,
    ShapeMismatch = 4,
    Io = 5,
    Format = 6,
    Checksum = 7,
    SkeletonMismatch = 8,
    Numeric = 9,
    /// A Rust panic was caught at the boundary.
    Internal = 10,
}

/// Trained or freshly initialised network.
pub struct UpliftModel {
    predictor: ModelPredictor,
    skeleton: Skeleton,
}

/// Loaded dataset file.
pub struct UpliftDataset {
    set: TrainingSet,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UpliftModelInfo {
    pub joints: usize,
    pub window: usize,
    pub stride_in: usize,
    pub stride_out: usize,
    pub n_out: usize,
    pub parameters: usize,
    pub flops_per_forward: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UpliftStatus {
    match e {
        Error::InvalidSchedule(_) => UpliftStatus::InvalidSchedule,
        Error::ShapeMismatch { .. } | Error::EmptyInput(_) => UpliftStatus::ShapeMismatch,
        Error::Io { .. } => UpliftStatus::Io,
        Error::Format(_) => UpliftStatus::Format,
        Error::Checksum(_) => UpliftStatus::Checksum,
        Error::SkeletonMismatch(_) => UpliftStatus::SkeletonMismatch,
        Error::NonFiniteGradient { .. } | Error::AlignmentDegenerate(_) => UpliftStatus::Numeric,
        _ => UpliftStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> UpliftStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UpliftStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            UpliftStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            UpliftStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            UpliftStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(m: *const UpliftModel) -> Result<&'a UpliftModel, Fail> {
    m.as_ref().ok_or(Fail::Null("model"))
}

unsafe fn dataset_ref<'a>(d: *const UpliftDataset) -> Result<&'a UpliftDataset, Fail> {
    d.as_ref().ok_or(Fail::Null("dataset"))
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Fail> {
    if buf.is_null() {
        return Err(Fail::Null("output buffer"));
    }
    if len < need {
        return Err(Fail::Core(Error::ShapeMismatch {
            expected: format!("buffer of at least {need} values"),
            actual: len.to_string(),
        }));
    }
    Ok(std::slice::from_raw_parts_mut(buf, len))
}

fn default_skeleton(joints: usize) -> Result<Skeleton, Error> {
    if joints == 17 {
        Ok(Skeleton::h36m())
    } else {
        Skeleton::chain(joints, Vec::new())
    }
}

fn model_from(ck: &Checkpoint) -> Result<UpliftModel, Error> {
    let skeleton = match ck.meta.get("skeleton") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Format(e.to_string()))?,
        None => default_skeleton(ck.config.joints)?,
    };
    Ok(UpliftModel {
        predictor: ModelPredictor::from_checkpoint(ck)?,
        skeleton,
    })
}

fn poses_2d(flat: &[f64], frames: usize, joints: usize) -> Vec<Pose2D> {
    (0..frames)
        .map(|f| {
            Pose2D(
                (0..joints)
                    .map(|j| {
                        let k = 2 * (f * joints + j);
                        [flat[k], flat[k + 1]]
                    })
                    .collect(),
            )
        })
        .collect()
}

fn write_3d(poses: &[Pose3D], out: &mut [f64]) {
    for (dst, v) in out.iter_mut().zip(poses.iter().flat_map(|p| p.0.iter().flatten())) {
        *dst = *v;
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uplift_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn uplift_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_load(path: *const c_char, out: *mut *mut UpliftModel) -> UpliftStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let path = path_arg(path, "path")?;
        let m = model_from(&Checkpoint::load(&path)?)?;
        *out = Box::into_raw(Box::new(m));
        Ok(())
    })
}

/// Randomly initialised network from a JSON model configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut UpliftModel,
) -> UpliftStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if config_json.is_null() {
            return Err(Fail::Null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| Fail::Arg("config is not valid UTF-8".into()))?;
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Fail::Core(Error::Format(e.to_string())))?;
        let model = Uplifter::new(cfg)?;
        let params = model.init_params(seed);
        let skeleton = default_skeleton(model.config().joints)?;
        *out = Box::into_raw(Box::new(UpliftModel {
            predictor: ModelPredictor::new(model, params),
            skeleton,
        }));
        Ok(())
    })
}

/// Write the model as a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_save(model: *const UpliftModel, path: *const c_char) -> UpliftStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path, "path")?;
        let mut ck = Checkpoint::new(&m.predictor.model, m.predictor.params.clone());
        ck.meta = serde_json::json!({ "skeleton": m.skeleton });
        ck.save(&path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_free(model: *mut UpliftModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_info(model: *const UpliftModel, out: *mut UpliftModelInfo) -> UpliftStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let c = m.predictor.model.config();
        *out = UpliftModelInfo {
            joints: c.joints,
            window: c.schedule.window,
            stride_in: c.schedule.stride_in,
            stride_out: c.schedule.stride_out,
            n_out: c.n_out(),
            parameters: m.predictor.params.len(),
            flops_per_forward: flops_estimate(c).total,
        };
        Ok(())
    })
}

/// Number of key-frame inputs of one window at `stride_in`.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_window_inputs(
    model: *const UpliftModel,
    stride_in: usize,
    out: *mut usize,
) -> UpliftStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let sched = m.predictor.model.config().schedule.with_stride_in(stride_in)?;
        *out = token_layout(&sched)?.n_in();
        Ok(())
    })
}

/// 3D pose of the center frame of one window whose `n_in` key-frame 2D
/// poses are given in temporal order at `stride_in`.
///
/// # Safety
/// `poses2d` must hold `n_in * joints * 2` values; `out3d` must hold
/// `out_len >= joints * 3` values.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_predict_center(
    model: *const UpliftModel,
    stride_in: usize,
    poses2d: *const f64,
    n_in: usize,
    out3d: *mut f64,
    out_len: usize,
) -> UpliftStatus {
    guard(|| {
        let m = model_ref(model)?;
        if poses2d.is_null() {
            return Err(Fail::Null("poses2d"));
        }
        let c = m.predictor.model.config();
        let sched = c.schedule.with_stride_in(stride_in)?;
        let layout = token_layout(&sched)?;
        if n_in != layout.n_in() {
            return Err(Fail::Core(Error::ShapeMismatch {
                expected: format!("{} key-frames", layout.n_in()),
                actual: n_in.to_string(),
            }));
        }
        let out = out_slice(out3d, out_len, c.joints * 3)?;
        let flat = std::slice::from_raw_parts(poses2d, n_in * c.joints * 2);
        let inputs = poses_2d(flat, n_in, c.joints);
        let fwd = m
            .predictor
            .model
            .forward(&m.predictor.params, &inputs, &layout, uplift::network::Mode::Eval)?;
        write_3d(&[fwd.center_pose()], out);
        Ok(())
    })
}

/// Dense 3D poses for a whole 2D sequence: sliding windows at `stride_in`,
/// bilinear upsampling between output strides.
///
/// # Safety
/// `poses2d` must hold `frames * joints * 2` values; `out3d` must hold
/// `out_len >= frames * joints * 3` values.
#[no_mangle]
pub unsafe extern "C" fn uplift_model_infer_sequence(
    model: *const UpliftModel,
    stride_in: usize,
    poses2d: *const f64,
    frames: usize,
    flip_tta: bool,
    out3d: *mut f64,
    out_len: usize,
) -> UpliftStatus {
    guard(|| {
        let m = model_ref(model)?;
        if poses2d.is_null() {
            return Err(Fail::Null("poses2d"));
        }
        let c = m.predictor.model.config();
        let sched: StrideSchedule = c.schedule.with_stride_in(stride_in)?;
        let out = out_slice(out3d, out_len, frames * c.joints * 3)?;
        let flat = std::slice::from_raw_parts(poses2d, frames * c.joints * 2);
        let inputs = poses_2d(flat, frames, c.joints);
        let poses = infer_clip(&m.predictor, 0, &inputs, &sched, &m.skeleton, flip_tta)?;
        write_3d(&poses, out);
        Ok(())
    })
}

/// Load and validate a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_dataset_load(path: *const c_char, out: *mut *mut UpliftDataset) -> UpliftStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let path = path_arg(path, "path")?;
        let set = TrainingSet::from_dataset(&Dataset::load(&path)?)?;
        *out = Box::into_raw(Box::new(UpliftDataset { set }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uplift_dataset_free(dataset: *mut UpliftDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Sequence count, joint count and frame rate.
///
/// # Safety
/// `dataset` must come from this library; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_dataset_info(
    dataset: *const UpliftDataset,
    sequences: *mut usize,
    joints: *mut usize,
    frame_rate: *mut f64,
) -> UpliftStatus {
    guard(|| {
        let d = dataset_ref(dataset)?;
        if sequences.is_null() || joints.is_null() || frame_rate.is_null() {
            return Err(Fail::Null("out"));
        }
        *sequences = d.set.clips.len();
        *joints = d.set.skeleton.joint_count();
        *frame_rate = d.set.frame_rate;
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_dataset_frames(
    dataset: *const UpliftDataset,
    sequence: usize,
    out: *mut usize,
) -> UpliftStatus {
    guard(|| {
        let d = dataset_ref(dataset)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let clip = d
            .set
            .clips
            .get(sequence)
            .ok_or_else(|| Fail::Arg(format!("sequence {sequence} out of range")))?;
        *out = clip.targets.len();
        Ok(())
    })
}

/// Copy the normalized 2D poses (`frames * joints * 2`) of one sequence.
///
/// # Safety
/// `dataset` must come from this library; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn uplift_dataset_copy_2d(
    dataset: *const UpliftDataset,
    sequence: usize,
    out: *mut f64,
    out_len: usize,
) -> UpliftStatus {
    guard(|| {
        let d = dataset_ref(dataset)?;
        let clip = d
            .set
            .clips
            .get(sequence)
            .ok_or_else(|| Fail::Arg(format!("sequence {sequence} out of range")))?;
        let j = d.set.skeleton.joint_count();
        let dst = out_slice(out, out_len, clip.inputs.len() * j * 2)?;
        for (o, v) in dst.iter_mut().zip(clip.inputs.iter().flat_map(|p| p.0.iter().flatten())) {
            *o = *v;
        }
        Ok(())
    })
}

/// Copy the camera-space 3D poses (`frames * joints * 3`, mm) of one sequence.
///
/// # Safety
/// `dataset` must come from this library; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn uplift_dataset_copy_3d(
    dataset: *const UpliftDataset,
    sequence: usize,
    out: *mut f64,
    out_len: usize,
) -> UpliftStatus {
    guard(|| {
        let d = dataset_ref(dataset)?;
        let clip = d
            .set
            .clips
            .get(sequence)
            .ok_or_else(|| Fail::Arg(format!("sequence {sequence} out of range")))?;
        let j = d.set.skeleton.joint_count();
        let dst = out_slice(out, out_len, clip.targets.len() * j * 3)?;
        write_3d(&clip.targets, dst);
        Ok(())
    })
}

/// Mean root-relative per-joint position error over `frames` poses, with
/// joint 0 as the root.
///
/// # Safety
/// `pred` and `gt` must each hold `frames * joints * 3` values; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn uplift_mpjpe(
    pred: *const f64,
    gt: *const f64,
    frames: usize,
    joints: usize,
    out: *mut f64,
) -> UpliftStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() || out.is_null() {
            return Err(Fail::Null("pred, gt or out"));
        }
        if frames == 0 || joints == 0 {
            return Err(Fail::Core(Error::EmptyInput("no poses".into())));
        }
        let skel = Skeleton::chain(joints, Vec::new())?;
        let n = joints * 3;
        let a = std::slice::from_raw_parts(pred, frames * n);
        let b = std::slice::from_raw_parts(gt, frames * n);
        let mut sum = 0.0;
        for f in 0..frames {
            let p = Pose3D::from_flat(&a[f * n..(f + 1) * n]);
            let g = Pose3D::from_flat(&b[f * n..(f + 1) * n]);
            sum += uplift::metrics::mpjpe(&p, &g, &skel)?;
        }
        *out = sum / frames as f64;
        Ok(())
    })
}
