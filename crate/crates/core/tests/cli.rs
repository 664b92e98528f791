use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uplift::network::{flops_estimate, Checkpoint};
use uplift::synth::{validate_file, Dataset};

const CONFIG: &str = r#"
[schedule]
window = 9
stride_in = 4
stride_out = 1

[model]
preset = "tiny"

[train]
epochs = 1
steps_per_epoch = 2
batch_size = 4
strides_in = [2, 4]

[synth]
sequences = 2
frames = 60
seed = 3

[adaptive]
slow_stride = 4
fast_stride = 2
cooldown = 5

[bench]
duration_ms = 30
min_forwards = 3

[grad_check]
probes = 40
"#;

fn uplift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uplift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(o: &Output) -> serde_json::Value {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).expect("json summary")
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.join("data");
    let s = summary(&uplift(&["synth", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(s["clean"], true);
    assert_eq!(s["frames"], 120);
    (
        cfg.to_str().unwrap().to_owned(),
        out.join("dataset.jsonl").to_str().unwrap().to_owned(),
    )
}

#[test]
fn synth_writes_a_valid_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path());
    assert!(validate_file(Path::new(&data)).unwrap().is_clean());
    assert_eq!(Dataset::load(Path::new(&data)).unwrap().sequences.len(), 2);
}

#[test]
fn oracle_eval_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("eval");
    let s = summary(&uplift(&[
        "eval", "--oracle", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap(),
    ]));
    assert!(s["mpjpe_mm"].as_f64().unwrap() < 1e-9);
    assert!(s["key_frame_mpjpe_mm"].as_f64().unwrap() < 1e-9);
    for f in ["all_summary.csv", "all_per_frame.csv", "key_velocity_histogram.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn train_finetune_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let s = summary(&uplift(&["train", "--config", &cfg, "--data", &data, "--out", o, "--seed", "5"]));
    assert_eq!(s["steps"], 2);
    let ck = out.join("model.ckpt");
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.config.d_temp, 8);
    let ck = ck.to_str().unwrap();
    let s = summary(&uplift(&["finetune", "--config", &cfg, "--data", &data, "--out", o, "--checkpoint", ck]));
    assert_eq!(s["steps"], 2);
    assert!(out.join("finetune_log.csv").exists());

    let s = summary(&uplift(&[
        "eval", "--config", &cfg, "--data", &data, "--out", o, "--checkpoint", ck, "--stride-in", "2",
        "--format", "json",
    ]));
    assert!(s["mpjpe_mm"].as_f64().unwrap() > 0.0);
    let rep = out.join("eval.json");
    let csv_dir = dir.path().join("csv");
    let s = summary(&uplift(&["report", rep.to_str().unwrap(), "--out", csv_dir.to_str().unwrap()]));
    assert_eq!(s["files"].as_array().unwrap().len(), 6);
    let m = uplift::bench::read_metrics_csv(&csv_dir, "all_").unwrap();
    let e: uplift::training::EvalReport = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(m, e.all_frames);

    let s = summary(&uplift(&["infer", "--config", &cfg, "--data", &data, "--out", o, "--checkpoint", ck]));
    assert_eq!(s["sequences"], 2);
    let rows = fs::read_to_string(out.join("predictions.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 120 * 17);
}

#[test]
fn adaptive_infer_emits_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("adaptive");
    let s = summary(&uplift(&[
        "adaptive-infer", "--oracle", "--oracle-velocity", "--config", &cfg, "--data", &data, "--out",
        out.to_str().unwrap(),
    ]));
    assert!(s["forwards"].as_u64().unwrap() > 0);
    let trace = fs::read_to_string(out.join("stride_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 120);
    assert!(trace.lines().skip(1).all(|l| l.ends_with(",4") || l.ends_with(",2")));
}

#[test]
fn bench_echoes_the_flops_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path());
    let out = dir.path().join("bench");
    let s = summary(&uplift(&["bench", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let run: uplift::cli::RunConfig = toml::from_str(CONFIG).unwrap();
    let mc = run.model.build(run.schedule().unwrap(), 17).unwrap();
    assert_eq!(s["report"]["flops_per_forward"].as_f64().unwrap(), flops_estimate(&mc).total);
    assert!(s["report"]["poses_per_second"].as_f64().unwrap() > 0.0);
    let r = uplift::bench::read_bench_csv(&out.join("bench.csv")).unwrap();
    assert_eq!(r.flops_per_forward, flops_estimate(&mc).total);
}

#[test]
fn grad_check_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("gc");
    let s = summary(&uplift(&["grad-check", "--config", &cfg, "--data", &data, "--out", out.to_str().unwrap()]));
    assert_eq!(s["probes"], 40);
    assert!(s["max_rel_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn missing_config_exits_one_with_path() {
    let o = uplift(&["eval", "--oracle", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("/nonexistent/run.toml"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(uplift(&["nonsense"]).status.code(), Some(2));
    assert_eq!(uplift(&["eval", "--window", "many"]).status.code(), Some(2));
    assert_eq!(uplift(&[]).status.code(), Some(2));
}

#[test]
fn invalid_schedule_exits_one() {
    let o = uplift(&["eval", "--oracle", "--window", "10", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "invalid_schedule");
}
