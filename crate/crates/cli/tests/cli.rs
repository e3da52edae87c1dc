use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pneumox_cli::artifacts::RunManifest;

fn pneumox(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pneumox"))
        .args(args)
        .arg(format!("--output_dir={}", toml::Value::String(out.display().to_string())))
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small networks and few images so a whole pipeline runs in seconds.
const SMALL: &[&str] = &[
    "--synth.count=40",
    "--patch_net.base_channels=2",
    "--patch_net.blocks=1",
    "--fusion_net.image.base_channels=2",
    "--fusion_net.image.blocks=1",
    "--fusion_net.heatmap_channels=2",
    "--train_patch.epochs=2",
    "--train_fusion.epochs=2",
];

fn with(cmd: &str, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string(), "--quiet".into()];
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run(out: &Path, cmd: &str, extra: &[&str]) -> Output {
    let args = with(cmd, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    pneumox(out, &refs)
}

fn manifest(out: &Path, command: &str) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifests").join(format!("{command}.json"))).unwrap()).unwrap()
}

#[test]
fn synth_with_zero_count_writes_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = pneumox(dir.path(), &["synth", "--synth.count=0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("data/manifest.tsv")).unwrap();
    assert_eq!(text.lines().count(), 2, "header and column row only: {text}");
    let m = manifest(dir.path(), "synth");
    assert_eq!(m.command, "synth");
    assert_eq!(m.seed, 7);
    assert_eq!(m.artifacts.len(), 1);
    assert_eq!(m.artifacts[0].path, "data/manifest.tsv");
    assert_eq!(m.config_sha256.len(), 64);
    assert!(!dir.path().join(".pneumox.lock").exists());
}

#[test]
fn compare_readers_on_the_bundled_set() {
    let dir = tempfile::tempdir().unwrap();
    let o = pneumox(dir.path(), &["compare-readers"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("human       0.72"), "{out}");
    assert!(out.contains("model       0.92"), "{out}");
    assert!(out.contains("either      1.00"), "{out}");
    let kv = fs::read_to_string(dir.path().join("reports/readers.kv")).unwrap();
    assert!(kv.contains("disagreements=1,2,5,6,16,17,20,22,24\n"), "{kv}");
}

#[test]
fn compare_readers_on_a_custom_file() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("readers.tsv");
    fs::write(&table, "#pneumox-readers\tversion=1\nid\ttruth\thuman\tmodel\tcategory\na\t1\t1\t0\tpneumonia\nb\t0\t0\t0\tnormal\n").unwrap();
    let o = pneumox(dir.path(), &["compare-readers", "--readers", table.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let kv = fs::read_to_string(dir.path().join("reports/readers.kv")).unwrap();
    assert!(kv.contains("human_accuracy=1\n") && kv.contains("model_accuracy=0.5\n"), "{kv}");

    let o = pneumox(dir.path(), &["compare-readers", "--readers", "no/such/file.tsv"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn failures_map_to_exit_codes_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cases: &[(&[&str], i32)] = &[
        (&["frobnicate"], 2),
        (&["synth", "--geometry.stride=3"], 2),
        (&["synth", "--no_such.key=1"], 2),
        (&["synth", "--train_patch.epochs=zero"], 2),
        (&["train-patch"], 3),
        (&["eval"], 3),
        (&["heatmaps"], 3),
    ];
    for (args, want) in cases {
        let o = pneumox(p, args);
        assert_eq!(code(&o), *want, "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
    // geometry is rejected before any output appears
    assert!(!p.join("data").exists());
}

#[test]
fn a_held_lock_refuses_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".pneumox.lock"), "1\n").unwrap();
    let o = pneumox(dir.path(), &["compare-readers"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("in use"));
}

#[test]
fn corrupt_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("data")).unwrap();
    fs::write(dir.path().join("data/manifest.tsv"), "not a manifest\n").unwrap();
    let o = run(dir.path(), "train-patch", &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn exploding_training_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), "synth", &[])), 0);
    let o = run(dir.path(), "train-patch", &["--train_patch.schedule.base_lr=1e38", "--train_patch.epochs=5"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric"));
}

#[test]
fn config_file_and_flags_layer_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    fs::write(&file, "seed = 3\n[train_patch]\nepochs = 4\n[train_patch.schedule]\nbase_lr = 0.01\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pneumox"))
        .args(["config", "--config", file.to_str().unwrap(), "--train_patch.epochs", "6"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg: pneumox_cli::RunConfig = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.train_patch.epochs, 6);
    assert_eq!(cfg.train_patch.schedule.base_lr, 0.01);
    assert_eq!(cfg.train_patch.schedule.period_epochs, 50);
}

fn all_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["data", "checkpoints", "history", "heatmaps", "reports"] {
        for f in pneumox_cli::artifacts::files_under(&root.join(sub)).unwrap() {
            let rel = f.strip_prefix(root).unwrap().display().to_string();
            out.push((rel, fs::read(&f).unwrap()));
        }
    }
    out
}

#[test]
fn small_pipeline_reruns_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        for cmd in ["synth", "train-patch", "heatmaps", "train-fusion", "eval", "predict"] {
            let o = run(dir, cmd, &[]);
            assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
        }
    }
    let (fa, fb) = (all_files(a.path()), all_files(b.path()));
    assert!(fa.len() > 40);
    assert_eq!(fa.len(), fb.len());
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }
    for name in ["checkpoints/patch_best.ckpt", "checkpoints/fusion_last.ckpt", "history/fusion.tsv", "reports/eval.kv", "reports/scores.tsv", "heatmaps/heatmaps.tsv"] {
        assert!(a.path().join(name).exists(), "{name}");
    }
    // manifests record the hashes of what is on disk
    let m = manifest(a.path(), "eval");
    assert_eq!(m.artifacts.len(), 3);
    for art in &m.artifacts {
        let (sha, _) = pneumox_cli::artifacts::sha256_file(&a.path().join(&art.path)).unwrap();
        assert_eq!(sha, art.sha256);
    }
    let kv = fs::read_to_string(a.path().join("reports/eval.kv")).unwrap();
    assert!(kv.contains("samples=8\n"), "{kv}");
    assert!(kv.contains("region_rule.apex_band=0,0.2\n"));

    // a different seed changes the weights
    let c = tempfile::tempdir().unwrap();
    for cmd in ["synth", "train-patch"] {
        assert_eq!(code(&run(c.path(), cmd, &["--seed=8"])), 0);
    }
    let ckpt = |d: &Path| fs::read(d.join("checkpoints/patch_best.ckpt")).unwrap();
    assert_ne!(ckpt(a.path()), ckpt(c.path()));
}

#[test]
fn predict_accepts_an_external_image() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for cmd in ["synth", "train-patch", "heatmaps", "train-fusion"] {
        let o = run(p, cmd, &["--synth.count=12"]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let img = p.join("data/images").read_dir().unwrap().next().unwrap().unwrap().path();
    let o = run(p, "predict", &["--synth.count=12", "--image", img.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(p.join("reports/predictions.tsv")).unwrap();
    let row = table.lines().nth(1).unwrap();
    let prob: f32 = row.split('\t').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&prob));
    assert_eq!(table.lines().count(), 2);

    let bad = p.join("odd.pgm");
    pneumox_core::data::write_gray_image(&bad, &pneumox_core::Tensor::full(&[1, 48, 48], 0.5)).unwrap();
    let o = run(p, "predict", &["--synth.count=12", "--image", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn stage_two_rejects_a_cache_from_another_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for cmd in ["synth", "train-patch", "heatmaps"] {
        assert_eq!(code(&run(p, cmd, &["--synth.count=12"])), 0);
    }
    let o = run(p, "train-fusion", &["--synth.count=12", "--geometry.heat_threshold=0.25"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn augmentation_grows_the_stage_one_set() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(p, "synth", &["--synth.count=12"])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_pneumox"))
        .args(with("train-patch", &["--synth.count=12", "--augment.train_count=30"]))
        .arg(format!("--output_dir={}", toml::Value::String(p.display().to_string())))
        .arg("--set")
        .arg("quiet_flag_is_not_a_key=1")
        .output()
        .unwrap();
    // an unknown key still fails before training
    assert_eq!(code(&o), 2);
    let o = run(p, "train-patch", &["--synth.count=12", "--augment.train_count=30", "--augment.policy.max_rotate_deg=3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(p.join("checkpoints/patch_best.ckpt").exists());
}
