//! Command-line front end.
//!
//! Every subcommand reads one TOML run configuration (`--config`, all
//! sections optional) and applies flag overrides on top. Results go to
//! `--out`; a one-line JSON summary goes to stdout. Failures print a JSON
//! object `{"error": kind, "message": text}` to stderr.
//!
//! Exit status: 0 on success, 1 on validation or runtime failure, 2 on
//! usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::{
    adaptive_infer, bench_throughput, emit_report, AdaptiveConfig, BenchReport, Report,
    ReportFormat, VelocitySource,
};
use crate::error::{Error, Result};
use crate::geometry::{pose_velocity, Pose3D, PoseSequence3D, Skeleton};
use crate::metrics::MetricsReport;
use crate::network::{default_strides, grad_check, Checkpoint, ModelConfig, Uplifter};
use crate::sequencing::StrideSchedule;
use crate::synth::{synthesize, validate_dataset, Dataset, SynthConfig};
use crate::training::{
    evaluate, infer_clip, loss_and_grad, make_sample, EvalReport, ModelPredictor, OraclePredictor,
    Predictor, TrainConfig, Trainer, TrainingSet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSection {
    pub window: usize,
    pub stride_in: usize,
    pub stride_out: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            window: 81,
            stride_in: 20,
            stride_out: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Small,
    #[default]
    Default,
}

/// Preset plus optional per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub k_joint: Option<usize>,
    pub k_temp: Option<usize>,
    pub k_strided: Option<usize>,
    pub d_joint: Option<usize>,
    pub d_temp: Option<usize>,
    pub heads_spatial: Option<usize>,
    pub heads_temporal: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub strides: Option<Vec<usize>>,
    pub drop_path_rate: Option<f64>,
    pub spatial_enabled: Option<bool>,
    pub temporal_enabled: Option<bool>,
    pub strided_enabled: Option<bool>,
    pub duta_enabled: Option<bool>,
}

impl ModelSection {
    pub fn build(&self, schedule: StrideSchedule, joints: usize) -> Result<ModelConfig> {
        let mut c = match self.preset {
            Preset::Tiny => ModelConfig::tiny(schedule, joints),
            Preset::Small => ModelConfig {
                d_joint: 16,
                d_temp: 64,
                heads_temporal: 4,
                ..ModelConfig::tiny(schedule, joints)
            },
            Preset::Default => ModelConfig::preset(schedule, joints),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(
            k_joint, k_temp, d_joint, d_temp, heads_spatial, heads_temporal, mlp_ratio,
            drop_path_rate, spatial_enabled, temporal_enabled, strided_enabled, duta_enabled
        );
        if let Some(k) = self.k_strided {
            c.k_strided = k;
            c.strides = default_strides(c.n_out(), k);
        }
        if let Some(s) = &self.strides {
            c.strides = s.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub duration_ms: u64,
    pub min_forwards: usize,
    pub frame_rate: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            duration_ms: 2000,
            min_forwards: 20,
            frame_rate: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSection {
    pub probes: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection {
            probes: 200,
            epsilon: 1e-4,
            tolerance: 1e-3,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub adaptive: AdaptiveConfig,
    pub bench: BenchSection,
    pub grad_check: GradCheckSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn schedule(&self) -> Result<StrideSchedule> {
        let s = self.schedule;
        StrideSchedule::new(s.window, s.stride_in, s.stride_out)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides both the training and the synthesis seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    stride_in: Option<usize>,
    #[arg(long, value_name = "N")]
    stride_out: Option<usize>,
    /// Temporal receptive field N.
    #[arg(long, value_name = "N")]
    window: Option<usize>,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Dataset file; synthesized from the [synth] section when absent.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug, Clone, Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// Predict ground truth instead of running a checkpoint.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth(Common),
    /// Train on synthetic (or given) data; writes pretrain.ckpt.
    Pretrain(Common),
    /// Train from scratch; writes model.ckpt.
    Train(Common),
    /// Continue from --checkpoint with fresh optimizer state; writes finetune.ckpt.
    Finetune(Common),
    /// Dense evaluation with the full metric suite.
    Eval(PredictArgs),
    /// Dense 3D predictions for every sequence.
    Infer(PredictArgs),
    /// Inference with velocity-driven input stride.
    AdaptiveInfer {
        #[command(flatten)]
        predict: PredictArgs,
        /// Drive the controller with ground-truth velocity.
        #[arg(long)]
        oracle_velocity: bool,
    },
    /// Forward-pass throughput and FLOPs.
    Bench(Common),
    /// Compare analytic and numeric gradients of the training loss.
    GradCheck(Common),
    /// Re-emit a JSON eval, metrics or bench report in --format.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(value_name = "REPORT")]
        input: PathBuf,
    },
}

#[derive(Debug, Parser)]
#[command(name = "uplift", version, about = "Sparse 2D-to-3D pose uplifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Parse `argv` (program name first), run the command and return the exit status.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            let msg = json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(std::io::stderr(), "{msg}");
            EXIT_FAILURE
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(v) = c.window {
        cfg.schedule.window = v;
    }
    if let Some(v) = c.stride_in {
        cfg.schedule.stride_in = v;
    }
    if let Some(v) = c.stride_out {
        cfg.schedule.stride_out = v;
    }
    Ok(cfg)
}

fn load_dataset(c: &Common, cfg: &RunConfig) -> Result<Dataset> {
    match &c.data {
        Some(p) => Dataset::load(p),
        None => synthesize(&cfg.synth, &Skeleton::h36m()),
    }
}

fn load_set(c: &Common, cfg: &RunConfig) -> Result<TrainingSet> {
    TrainingSet::from_dataset(&load_dataset(c, cfg)?)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_checkpoint(c: &Common) -> Result<Checkpoint> {
    match &c.checkpoint {
        Some(p) => Checkpoint::load(p),
        None => Err(Error::Config("--checkpoint is required".into())),
    }
}

fn check_joints(config: &ModelConfig, set: &TrainingSet) -> Result<()> {
    if config.joints != set.skeleton.joint_count() {
        return Err(Error::SkeletonMismatch(format!(
            "checkpoint has {} joints, data has {}",
            config.joints,
            set.skeleton.joint_count()
        )));
    }
    Ok(())
}

/// Predictor and evaluation schedule. A checkpoint fixes `N` and `s_out`;
/// `--stride-in` may select any input stride the model was trained with.
fn predictor(
    args: &PredictArgs,
    cfg: &RunConfig,
    set: &TrainingSet,
) -> Result<(Box<dyn Predictor>, StrideSchedule)> {
    if args.oracle {
        return Ok((Box::new(OraclePredictor::new(set)), cfg.schedule()?));
    }
    let ck = require_checkpoint(&args.common)?;
    check_joints(&ck.config, set)?;
    let mut sched = ck.config.schedule;
    if let Some(s) = args.common.stride_in {
        sched = sched.with_stride_in(s)?;
    }
    Ok((Box::new(ModelPredictor::from_checkpoint(&ck)?), sched))
}

fn train_run(c: &Common, name: &str, resume: bool) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let set = load_set(c, &cfg)?;
    let mut trainer = if resume {
        let ck = require_checkpoint(c)?;
        check_joints(&ck.config, &set)?;
        Trainer::with_params(ck.model()?, ck.params.clone(), cfg.train.clone())?
    } else {
        let mc = cfg.model.build(cfg.schedule()?, set.skeleton.joint_count())?;
        Trainer::new(Uplifter::new(mc)?, cfg.train.clone())?
    };
    let total = trainer.total_steps(&set);
    trainer.run(&set, |s| {
        if s.step % 100 == 0 || s.step + 1 == total {
            log::info!("{name} step {}/{total} loss {:.3}", s.step + 1, s.loss_total);
        }
    })?;
    create_out(&c.out)?;
    let ck_path = c.out.join(format!("{name}.ckpt"));
    trainer.checkpoint(&set).save(&ck_path)?;
    trainer.write_log(&c.out.join(format!("{name}_log.csv")))?;
    let last = trainer.log().last();
    Ok(json!({
        "command": name,
        "checkpoint": ck_path,
        "steps": trainer.steps_done(),
        "final_loss": last.map(|s| s.loss_total),
    }))
}

fn write_predictions(path: &Path, seqs: &[Vec<Pose3D>]) -> Result<()> {
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["sequence", "frame", "joint", "x_mm", "y_mm", "z_mm"]).map_err(err)?;
    for (s, poses) in seqs.iter().enumerate() {
        for (f, p) in poses.iter().enumerate() {
            for (j, q) in p.0.iter().enumerate() {
                w.serialize((s, f, j, q[0], q[1], q[2])).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_synth(c: &Common) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let ds = synthesize(&cfg.synth, &Skeleton::h36m())?;
    let diag = validate_dataset(&ds);
    create_out(&c.out)?;
    let path = c.out.join("dataset.jsonl");
    ds.save(&path)?;
    Ok(json!({
        "command": "synth",
        "dataset": path,
        "sequences": diag.sequences,
        "frames": diag.frames,
        "clean": diag.is_clean(),
    }))
}

fn cmd_eval(args: &PredictArgs) -> Result<serde_json::Value> {
    let c = &args.common;
    let cfg = load_config(c)?;
    let set = load_set(c, &cfg)?;
    let (pred, sched) = predictor(args, &cfg, &set)?;
    let report = evaluate(pred.as_ref(), &set, &sched, cfg.train.flip_tta_enabled)?;
    let files = emit_report(Report::Eval(&report), &c.out, c.format.into())?;
    Ok(json!({
        "command": "eval",
        "mpjpe_mm": report.all_frames.mpjpe_mm,
        "key_frame_mpjpe_mm": report.key_frames.mpjpe_mm,
        "p_mpjpe_mm": report.all_frames.p_mpjpe_mm,
        "files": files,
    }))
}

fn cmd_infer(args: &PredictArgs) -> Result<serde_json::Value> {
    let c = &args.common;
    let cfg = load_config(c)?;
    let set = load_set(c, &cfg)?;
    let (pred, sched) = predictor(args, &cfg, &set)?;
    let seqs = set
        .clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            infer_clip(pred.as_ref(), i, &clip.inputs, &sched, &set.skeleton, cfg.train.flip_tta_enabled)
        })
        .collect::<Result<Vec<_>>>()?;
    create_out(&c.out)?;
    let path = c.out.join("predictions.csv");
    write_predictions(&path, &seqs)?;
    Ok(json!({ "command": "infer", "predictions": path, "sequences": seqs.len() }))
}

fn cmd_adaptive(args: &PredictArgs, oracle_velocity: bool) -> Result<serde_json::Value> {
    let c = &args.common;
    let cfg = load_config(c)?;
    let set = load_set(c, &cfg)?;
    let (pred, sched) = predictor(args, &cfg, &set)?;
    create_out(&c.out)?;
    let trace_path = c.out.join("stride_trace.csv");
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", trace_path.display()));
    let mut trace = csv::Writer::from_path(&trace_path).map_err(err)?;
    trace.write_record(["sequence", "frame", "stride_in"]).map_err(err)?;
    let mut seqs = Vec::new();
    let mut switches = Vec::new();
    let mut forwards = 0;
    for (i, clip) in set.clips.iter().enumerate() {
        let gt_velocity;
        let source = if oracle_velocity {
            let seq = PoseSequence3D { frames: clip.targets.clone(), frame_rate: set.frame_rate };
            gt_velocity = pose_velocity(&seq, &set.skeleton)?;
            VelocitySource::Oracle(&gt_velocity)
        } else {
            VelocitySource::Predicted
        };
        let out = adaptive_infer(
            pred.as_ref(),
            i,
            &clip.inputs,
            &sched,
            &cfg.adaptive,
            &set.skeleton,
            set.frame_rate,
            source,
            cfg.train.flip_tta_enabled,
        )?;
        for (f, s) in out.trace.iter().enumerate() {
            trace.serialize((i, f, s)).map_err(err)?;
        }
        switches.extend(out.switches.iter().map(|s| json!({ "sequence": i, "frame": s.frame, "stride_in": s.stride })));
        forwards += out.forwards;
        seqs.push(out.poses);
    }
    trace.flush().map_err(|e| Error::io(&trace_path, e))?;
    let path = c.out.join("predictions.csv");
    write_predictions(&path, &seqs)?;
    Ok(json!({
        "command": "adaptive-infer",
        "predictions": path,
        "trace": trace_path,
        "forwards": forwards,
        "switches": switches,
    }))
}

fn cmd_bench(c: &Common) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let (model, params) = match &c.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            (ck.model()?, ck.params)
        }
        None => {
            let m = Uplifter::new(cfg.model.build(cfg.schedule()?, Skeleton::h36m().joint_count())?)?;
            let p = m.init_params(cfg.train.seed);
            (m, p)
        }
    };
    let b = &cfg.bench;
    let report = bench_throughput(
        &model,
        &params,
        Duration::from_millis(b.duration_ms),
        b.min_forwards,
        b.frame_rate,
    )?;
    let files = emit_report(Report::Bench(&report), &c.out, c.format.into())?;
    Ok(json!({ "command": "bench", "report": report, "files": files }))
}

fn cmd_grad_check(c: &Common) -> Result<serde_json::Value> {
    let cfg = load_config(c)?;
    let set = load_set(c, &cfg)?;
    let sched = cfg.schedule()?;
    let model = Uplifter::new(cfg.model.build(sched, set.skeleton.joint_count())?)?;
    let params = model.init_params(cfg.train.seed);
    let clip = &set.clips[0];
    let center = (clip.targets.len() / 2).min(clip.targets.len().saturating_sub(1));
    let sample = make_sample(&set, 0, center, &sched, 0)?;
    let w = cfg.train.weights();
    // shapes match by construction, so the loss cannot fail
    let loss = |out: &crate::network::ForwardOutput| {
        loss_and_grad(out, &sample.targets, &sample.center_target, &set.skeleton, w)
            .expect("loss shapes follow the layout")
    };
    let g = &cfg.grad_check;
    let report = grad_check(
        &model,
        &params,
        &sample.inputs,
        &sample.layout,
        loss,
        g.probes,
        g.epsilon,
        cfg.train.seed,
    )?;
    create_out(&c.out)?;
    let path = c.out.join("grad_check.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    if !(report.max_rel_error < g.tolerance) {
        let worst = report.worst().map(|p| format!("{}[{}]", p.tensor, p.index)).unwrap_or_default();
        return Err(Error::Config(format!(
            "gradient check failed: max relative error {:.3e} at {worst} (tolerance {:.1e})",
            report.max_rel_error, g.tolerance
        )));
    }
    Ok(json!({
        "command": "grad-check",
        "probes": report.probes.len(),
        "max_rel_error": report.max_rel_error,
        "report": path,
    }))
}

fn cmd_report(c: &Common, input: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let format = c.format.into();
    let files = if let Ok(r) = serde_json::from_str::<EvalReport>(&text) {
        emit_report(Report::Eval(&r), &c.out, format)?
    } else if let Ok(r) = serde_json::from_str::<BenchReport>(&text) {
        emit_report(Report::Bench(&r), &c.out, format)?
    } else if let Ok(r) = serde_json::from_str::<MetricsReport>(&text) {
        emit_report(Report::Metrics(&r), &c.out, format)?
    } else {
        return Err(Error::Format(format!(
            "{}: not an eval, bench or metrics report",
            input.display()
        )));
    };
    Ok(json!({ "command": "report", "files": files }))
}

fn run(cmd: Command) -> Result<serde_json::Value> {
    match cmd {
        Command::Synth(c) => cmd_synth(&c),
        Command::Pretrain(c) => train_run(&c, "pretrain", false),
        Command::Train(c) => train_run(&c, "model", false),
        Command::Finetune(c) => train_run(&c, "finetune", true),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::AdaptiveInfer { predict, oracle_velocity } => cmd_adaptive(&predict, oracle_velocity),
        Command::Bench(c) => cmd_bench(&c),
        Command::GradCheck(c) => cmd_grad_check(&c),
        Command::Report { common, input } => cmd_report(&common, &input),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_section_overrides_preset() {
        let s: ModelSection = toml::from_str("preset = \"small\"\nd_temp = 32\nk_strided = 2").unwrap();
        let c = s.build(StrideSchedule::new(25, 4, 2).unwrap(), 17).unwrap();
        assert_eq!((c.d_temp, c.d_joint, c.k_strided), (32, 16, 2));
        assert_eq!(c.strides, default_strides(13, 2));
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(toml::from_str::<RunConfig>("[nope]\nx = 1").is_err());
        let cfg: RunConfig = toml::from_str("[schedule]\nwindow = 9\nstride_in = 4\nstride_out = 1").unwrap();
        assert_eq!(cfg.schedule().unwrap(), StrideSchedule::new(9, 4, 1).unwrap());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli_dispatch(["uplift", "frobnicate"]), EXIT_USAGE);
        assert_eq!(cli_dispatch(["uplift", "eval", "--bogus"]), EXIT_USAGE);
        assert_eq!(cli_dispatch(["uplift", "--help"]), EXIT_OK);
    }
}
