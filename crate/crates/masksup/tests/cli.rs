use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use masksup::records::{read_curve, read_metrics};
use masksup::run::read_summary;

fn masksup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masksup")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    let root = format!("output_root = {:?}", dir.join("runs").to_string_lossy());
    let base = ["dataset = \"binary\"", "data_n = 10", "data_size = 16", "epochs = 2", "batch_size = 4", "base_width = 4", "depth = 2", &root];
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_owned();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut lines: Vec<&str> = base.iter().copied().filter(|l| !overridden.contains(&key(l))).collect();
    lines.extend(extra.lines());
    fs::write(&path, lines.join("\n")).unwrap();
    path
}

fn run_dirs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn train(dir: &Path, cfg: &Path, args: &[&str]) -> PathBuf {
    let before = if dir.join("runs").is_dir() { run_dirs(dir) } else { Vec::new() };
    let mut all = vec!["train", "--config", cfg.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = masksup(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    run_dirs(dir).into_iter().find(|d| !before.contains(d)).expect("new run directory")
}

#[test]
fn train_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let run = train(tmp.path(), &cfg, &["--mode", "baseline"]);
    for f in ["config.toml", "train_log.jsonl", "best.ckpt", "last.ckpt", "summary.toml", "test_metrics.toml"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let name = run.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("baseline-"), "{name}");
    let summary = read_summary(&run).unwrap();
    assert_eq!(summary.mode, "baseline");
    assert_eq!(summary.epoch_seconds.len(), 2);
    assert_eq!(summary.steps, 4);
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains("\"kind\":\"step\"")).count(), 4);
    assert_eq!(log.lines().filter(|l| l.contains("\"kind\":\"epoch\"")).count(), 2);
}

#[test]
fn seed_flag_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "seed = 7\nepochs = 1");
    let run = train(tmp.path(), &cfg, &["--seed", "1"]);
    assert_eq!(read_summary(&run).unwrap().seed, 1);
    assert!(fs::read_to_string(run.join("config.toml")).unwrap().contains("seed = 1\n"));
}

#[test]
fn distinct_configs_get_distinct_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "epochs = 1");
    let a = train(tmp.path(), &cfg, &["--seed", "1"]);
    let b = train(tmp.path(), &cfg, &["--seed", "2"]);
    let c = train(tmp.path(), &cfg, &["--seed", "2"]);
    assert_ne!(a, b);
    assert_ne!(b, c);
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "warmup_steps = 10");
    let out = masksup(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup_steps"));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "learning_rate = 1e30\nepochs = 5");
    let out = masksup(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_missing_checkpoint_exits_2() {
    let out = masksup(&["eval", "--checkpoint", "/nonexistent/best.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_robustness_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let runs: Vec<PathBuf> =
        ["baseline", "cb", "masksup"].iter().map(|m| train(tmp.path(), &cfg, &["--mode", m])).collect();

    let ckpt = runs[2].join("best.ckpt");
    let out = masksup(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success());
    let report = read_metrics(&runs[2].join("eval_test.toml")).unwrap();
    let net = masksup::load_checkpoint(&ckpt).unwrap().net;
    assert_eq!(report.params, net.parameter_count());
    assert_eq!(report.per_class_iou.len(), 2);

    let out = masksup(&["robustness", "--checkpoint", ckpt.to_str().unwrap(), "--coverages", "0,0.25,0.5,0.7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_curve(&runs[2].join("robustness.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.coverage).collect::<Vec<_>>(), vec![0.0, 0.25, 0.5, 0.7]);
    let csv = fs::read_to_string(runs[2].join("robustness.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("coverage,miou"));
    assert!(runs[2].join("robustness.svg").is_file());

    let figs = tmp.path().join("figs");
    let mut args = vec!["plots", "--out-dir", figs.to_str().unwrap(), "--runs"];
    args.extend(runs.iter().map(|r| r.to_str().unwrap()));
    let out = masksup(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> =
        fs::read_dir(&figs).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("miou-")).count(), 1, "{names:?}");
    assert_eq!(names.iter().filter(|n| n.starts_with("loss-")).count(), 3);
    assert!(names.contains(&"robustness.svg".to_owned()));
}

#[test]
fn preview_masks_stay_in_high_band() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("preview");
    let out = masksup(&[
        "preview-masks",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--regime",
        "high",
        "--count",
        "6",
        "--set",
        "data_n=10",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut masks = 0;
    for entry in fs::read_dir(&out_dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.starts_with("mask-") {
            continue;
        }
        let img = image::open(&path).unwrap().to_luma8();
        let removed = img.pixels().filter(|p| p.0[0] < 128).count();
        let f = removed as f64 / (img.width() * img.height()) as f64;
        assert!((0.50..=0.75).contains(&f), "{name}: {f}");
        masks += 1;
    }
    assert_eq!(masks, 6);
}

#[test]
fn synth_data_round_trips_through_directory_loader() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    let out = masksup(&[
        "synth-data",
        "--kind",
        "multiclass",
        "--n",
        "12",
        "--size",
        "16",
        "--num-classes",
        "4",
        "--out",
        root.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = masksup::load_image_mask_dir(&root, 4, None).unwrap();
    let original = masksup_core::data::synth_multiclass_scenes(12, 16, 4, 3.0, 0).unwrap();
    assert_eq!(loaded.train.len(), original.train.len());
    for (a, b) in loaded.all().zip(original.all()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
    }
}

#[test]
fn converged_model_scores_near_one_on_its_training_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        "mode = \"baseline\"\nambiguity = 0.0\ndata_n = 20\nepochs = 60\nbase_width = 8\nlearning_rate = 0.005",
    );
    let run = train(tmp.path(), &cfg, &[]);
    let ckpt = run.join("last.ckpt");
    let out = masksup(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--split", "train"]);
    assert!(out.status.success());
    let report = read_metrics(&run.join("eval_train.toml")).unwrap();
    assert!(report.miou >= 0.95, "train mIoU {}", report.miou);
}
