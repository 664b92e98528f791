//! Line-delimited JSON dataset files.
//!
//! The first line is a [`DatasetHeader`]; every further line is one
//! [`FrameRecord`]. 2D poses are stored in pixels, 3D poses in camera
//! coordinates (mm). Floats are written in shortest round-trip form, so a
//! write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::{sample_camera, CameraRanges, Placement, Range};
use super::motion::{burst_segments, generate_motion, BurstSegment, MotionKind, MotionSpec};
use crate::error::{Error, Result};
use crate::geometry::{
    normalize_image_coords, CameraIntrinsics, Pose2D, Pose3D, PoseSequence3D, Skeleton,
    DEFAULT_DEPTH_EPSILON_MM,
};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Gaussian jitter on normalized 2D coordinates plus optional joint dropout
/// (a dropped joint repeats its previous-frame value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub id: usize,
    pub camera: usize,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<BurstSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub skeleton: Skeleton,
    pub frame_rate: f64,
    pub cameras: Vec<CameraEntry>,
    pub noise: Option<NoiseModel>,
    pub sequences: Vec<SequenceInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub sequence: usize,
    pub frame: usize,
    pub camera: usize,
    pub pose2d: Vec<[f64; 2]>,
    pub pose3d: Vec<[f64; 3]>,
}

/// One clip: pixel-space 2D poses and camera-space 3D poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub info: SequenceInfo,
    pub pixels: Vec<Pose2D>,
    pub poses3d: Vec<Pose3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn skeleton(&self) -> &Skeleton {
        &self.header.skeleton
    }

    pub fn frame_rate(&self) -> f64 {
        self.header.frame_rate
    }

    pub fn camera(&self, id: usize) -> Result<&CameraIntrinsics> {
        self.header
            .cameras
            .iter()
            .find(|c| c.id == id)
            .map(|c| &c.intrinsics)
            .ok_or_else(|| Error::Format(format!("unknown camera id {id}")))
    }

    /// 2D poses of sequence `i` in normalized image coordinates.
    pub fn normalized_2d(&self, i: usize) -> Result<Vec<Pose2D>> {
        let s = &self.sequences[i];
        let cam = self.camera(s.info.camera)?;
        s.pixels.iter().map(|p| normalize_image_coords(&p.0, cam)).collect()
    }

    pub fn sequence_3d(&self, i: usize) -> PoseSequence3D {
        PoseSequence3D {
            frames: self.sequences[i].poses3d.clone(),
            frame_rate: self.header.frame_rate,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.poses3d.len()).sum()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let fmt = |e: serde_json::Error| Error::Format(e.to_string());
        let io = |e: std::io::Error| Error::Format(e.to_string());
        serde_json::to_writer(&mut w, &self.header).map_err(fmt)?;
        w.write_all(b"\n").map_err(io)?;
        for s in &self.sequences {
            for (t, (p2, p3)) in s.pixels.iter().zip(&s.poses3d).enumerate() {
                let rec = FrameRecord {
                    sequence: s.info.id,
                    frame: t,
                    camera: s.info.camera,
                    pose2d: p2.0.clone(),
                    pose3d: p3.0.clone(),
                };
                serde_json::to_writer(&mut w, &rec).map_err(fmt)?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(f).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Strict reader: any inconsistency is an error. Use
    /// [`validate_file`] for a full diagnostic listing.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let (header, records) = parse(r)?;
        let mut diag = Diagnostics::default();
        let ds = assemble(header, records, &mut diag);
        match diag.issues.first() {
            Some(issue) => Err(Error::Format(issue.to_string())),
            None => Ok(ds),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::read_from(BufReader::new(f))
    }
}

fn parse<R: BufRead>(r: R) -> Result<(DatasetHeader, Vec<(usize, FrameRecord)>)> {
    let mut lines = r.lines().enumerate();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty dataset file".into()))?
        .1
        .map_err(|e| Error::Format(e.to_string()))?;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Format(format!("line 1: header: {e}")))?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            header.format_version
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        records.push((i + 1, rec));
    }
    Ok((header, records))
}

/// Group records into sequences, noting structural problems.
fn assemble(
    header: DatasetHeader,
    records: Vec<(usize, FrameRecord)>,
    diag: &mut Diagnostics,
) -> Dataset {
    let j = header.skeleton.joint_count();
    let mut sequences: Vec<Sequence> = header
        .sequences
        .iter()
        .map(|info| Sequence {
            info: info.clone(),
            pixels: Vec::new(),
            poses3d: Vec::new(),
        })
        .collect();
    for info in &header.sequences {
        if !header.cameras.iter().any(|c| c.id == info.camera) {
            diag.push(IssueKind::Header, Some(info.id), None, None, format!("unknown camera {}", info.camera));
        }
    }
    for (line, rec) in records {
        let Some(seq) = sequences.iter_mut().find(|s| s.info.id == rec.sequence) else {
            diag.push(IssueKind::Record, Some(rec.sequence), Some(rec.frame), None, format!("line {line}: sequence not declared in header"));
            continue;
        };
        if rec.camera != seq.info.camera {
            diag.push(IssueKind::Record, Some(rec.sequence), Some(rec.frame), None, format!("line {line}: camera {} differs from header", rec.camera));
        }
        if rec.pose2d.len() != j || rec.pose3d.len() != j {
            diag.push(IssueKind::Record, Some(rec.sequence), Some(rec.frame), None, format!("line {line}: expected {j} joints"));
            continue;
        }
        if rec.frame != seq.poses3d.len() {
            diag.push(
                IssueKind::FrameOrder,
                Some(rec.sequence),
                Some(rec.frame),
                None,
                format!("line {line}: frame {} follows {} records", rec.frame, seq.poses3d.len()),
            );
        }
        seq.pixels.push(Pose2D(rec.pose2d));
        seq.poses3d.push(Pose3D(rec.pose3d));
    }
    for s in &sequences {
        if s.poses3d.len() != s.info.frames {
            diag.push(
                IssueKind::Header,
                Some(s.info.id),
                None,
                None,
                format!("header declares {} frames, file has {}", s.info.frames, s.poses3d.len()),
            );
        }
    }
    Dataset { header, sequences }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Header,
    Record,
    FrameOrder,
    BoneLength,
    ProjectionResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub sequence: Option<usize>,
    pub frame: Option<usize>,
    pub joint: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(s) = self.sequence {
            write!(f, " sequence {s}")?;
        }
        if let Some(t) = self.frame {
            write!(f, " frame {t}")?;
        }
        if let Some(j) = self.joint {
            write!(f, " joint {j}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sequences: usize,
    pub frames: usize,
    pub issues: Vec<Issue>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(
        &mut self,
        kind: IssueKind,
        sequence: Option<usize>,
        frame: Option<usize>,
        joint: Option<usize>,
        message: String,
    ) {
        self.issues.push(Issue {
            kind,
            sequence,
            frame,
            joint,
            message,
        });
    }
}

/// Pixel residual allowed between stored and re-projected 2D poses.
pub const PROJECTION_TOLERANCE_PX: f64 = 1e-6;
/// Relative bone-length drift allowed within a sequence.
pub const BONE_LENGTH_TOLERANCE: f64 = 1e-6;

fn bone_length(p: &Pose3D, a: usize, b: usize) -> f64 {
    (0..3).map(|k| (p.0[a][k] - p.0[b][k]).powi(2)).sum::<f64>().sqrt()
}

/// Content checks on an in-memory dataset. Never mutates.
pub fn validate_dataset(ds: &Dataset) -> Diagnostics {
    let mut diag = Diagnostics {
        sequences: ds.sequences.len(),
        frames: ds.total_frames(),
        issues: Vec::new(),
    };
    check_content(ds, &mut diag);
    diag
}

fn check_content(ds: &Dataset, diag: &mut Diagnostics) {
    let skel = ds.skeleton();
    let bones = skel.bones();
    for s in &ds.sequences {
        let id = s.info.id;
        if let Some(first) = s.poses3d.first() {
            let rest: Vec<f64> = bones.iter().map(|&(a, b)| bone_length(first, a, b)).collect();
            for (t, p) in s.poses3d.iter().enumerate() {
                for (&(a, b), &l0) in bones.iter().zip(&rest) {
                    let l = bone_length(p, a, b);
                    if (l - l0).abs() > BONE_LENGTH_TOLERANCE * l0.max(1e-9) {
                        diag.push(
                            IssueKind::BoneLength,
                            Some(id),
                            Some(t),
                            Some(b),
                            format!("bone {a}-{b} is {l:.6} mm, was {l0:.6} mm"),
                        );
                    }
                }
            }
        }
        if ds.header.noise.is_some() {
            continue;
        }
        let Ok(cam) = ds.camera(s.info.camera) else {
            continue;
        };
        for (t, (p2, p3)) in s.pixels.iter().zip(&s.poses3d).enumerate() {
            for (j, (uv, xyz)) in p2.0.iter().zip(&p3.0).enumerate() {
                match cam.project_point(*xyz, f64::MIN_POSITIVE) {
                    Some(px) => {
                        let r = ((px[0] - uv[0]).powi(2) + (px[1] - uv[1]).powi(2)).sqrt();
                        if !(r <= PROJECTION_TOLERANCE_PX) {
                            diag.push(
                                IssueKind::ProjectionResidual,
                                Some(id),
                                Some(t),
                                Some(j),
                                format!("stored 2D differs from projection by {r:.3e} px"),
                            );
                        }
                    }
                    None => diag.push(
                        IssueKind::ProjectionResidual,
                        Some(id),
                        Some(t),
                        Some(j),
                        "joint behind the camera".into(),
                    ),
                }
            }
        }
    }
}

/// Read a dataset file leniently and report every problem found.
pub fn validate_file(path: &Path) -> Result<Diagnostics> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let (header, records) = parse(BufReader::new(f))?;
    let mut diag = Diagnostics::default();
    let ds = assemble(header, records, &mut diag);
    diag.sequences = ds.sequences.len();
    diag.frames = ds.total_frames();
    check_content(&ds, &mut diag);
    Ok(diag)
}

/// Recipe for a whole synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sequences: usize,
    pub frames: usize,
    pub frame_rate: f64,
    /// Kinds are assigned round-robin.
    pub kinds: Vec<MotionKind>,
    pub amplitude_mm: Range,
    pub frequency_hz: Range,
    pub seed: u64,
    pub cameras: CameraRanges,
    pub noise: Option<NoiseModel>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sequences: 20,
            frames: 500,
            frame_rate: 50.0,
            kinds: vec![
                MotionKind::SinusoidalLimbs,
                MotionKind::SmoothRandomWalk,
                MotionKind::Burst,
            ],
            amplitude_mm: (40.0, 120.0),
            frequency_hz: (0.5, 2.0),
            seed: 0,
            cameras: CameraRanges::default(),
            noise: None,
        }
    }
}

impl SynthConfig {
    pub fn motion_specs(&self) -> Result<Vec<MotionSpec>> {
        use rand::Rng;
        if self.kinds.is_empty() {
            return Err(Error::Config("no motion kinds selected".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |r: Range| if r.0 >= r.1 { r.0 } else { rng.random_range(r.0..=r.1) };
        Ok((0..self.sequences)
            .map(|i| MotionSpec {
                kind: self.kinds[i % self.kinds.len()],
                frames: self.frames,
                frame_rate: self.frame_rate,
                amplitude_mm: draw(self.amplitude_mm),
                frequency_hz: draw(self.frequency_hz),
                seed: self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            })
            .collect())
    }
}

/// Generate, place, project and (optionally) perturb every clip.
pub fn build_dataset(
    skel: &Skeleton,
    specs: &[MotionSpec],
    ranges: &CameraRanges,
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<Dataset> {
    let frame_rate = specs.first().map_or(50.0, |s| s.frame_rate);
    if specs.iter().any(|s| s.frame_rate != frame_rate) {
        return Err(Error::Config("all clips must share one frame rate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cameras = Vec::with_capacity(specs.len());
    let mut sequences = Vec::with_capacity(specs.len());
    for (id, spec) in specs.iter().enumerate() {
        let body = generate_motion(spec, skel)?;
        let (cam, placement) = sample_camera(&mut rng, ranges, &body, DEFAULT_DEPTH_EPSILON_MM)?;
        let placed = placement.apply(&body);
        let pixels = placed
            .frames
            .iter()
            .enumerate()
            .map(|(t, pose)| {
                pose.0
                    .iter()
                    .enumerate()
                    .map(|(joint, &p)| {
                        cam.project_point(p, DEFAULT_DEPTH_EPSILON_MM).ok_or(
                            Error::ProjectionDomain {
                                frame: t,
                                joint,
                                depth: p[2],
                            },
                        )
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Pose2D)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("sequence {id}: {e}")))?;
        cameras.push(CameraEntry { id, intrinsics: cam });
        sequences.push(Sequence {
            info: SequenceInfo {
                id,
                camera: id,
                frames: spec.frames,
                motion: Some(spec.clone()),
                placement: Some(placement),
                segments: if spec.kind == MotionKind::Burst {
                    burst_segments(spec)
                } else {
                    Vec::new()
                },
            },
            pixels,
            poses3d: placed.frames,
        });
    }
    let noise = noise.filter(|n| n.sigma > 0.0 || n.dropout > 0.0).cloned();
    if let Some(n) = &noise {
        apply_noise(&mut sequences, &cameras, n)?;
    }
    Ok(Dataset {
        header: DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            skeleton: skel.clone(),
            frame_rate,
            cameras,
            noise,
            sequences: sequences.iter().map(|s| s.info.clone()).collect(),
        },
        sequences,
    })
}

fn apply_noise(sequences: &mut [Sequence], cameras: &[CameraEntry], n: &NoiseModel) -> Result<()> {
    if !(n.sigma >= 0.0) || !(0.0..1.0).contains(&n.dropout) {
        return Err(Error::Config("noise sigma must be >= 0 and dropout in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
    let gauss = Normal::new(0.0, n.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let drop = Bernoulli::new(n.dropout).map_err(|e| Error::Config(e.to_string()))?;
    for s in sequences {
        let cam = cameras[s.info.camera].intrinsics;
        let scale = cam.width / 2.0;
        let mut prev: Option<Pose2D> = None;
        for pose in s.pixels.iter_mut() {
            for (j, uv) in pose.0.iter_mut().enumerate() {
                if let (true, Some(p)) = (drop.sample(&mut rng), &prev) {
                    *uv = p.0[j];
                } else {
                    uv[0] += gauss.sample(&mut rng) * scale;
                    uv[1] += gauss.sample(&mut rng) * scale;
                }
            }
            prev = Some(pose.clone());
        }
    }
    Ok(())
}

/// Generate a dataset from a [`SynthConfig`].
pub fn synthesize(cfg: &SynthConfig, skel: &Skeleton) -> Result<Dataset> {
    build_dataset(skel, &cfg.motion_specs()?, &cfg.cameras, cfg.noise.as_ref(), cfg.seed)
}
