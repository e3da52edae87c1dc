//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! ```text
//! cargo run --release -p pneumox-cli --bin pneumox-acceptance -- [--out DIR] [--only 1,2,3]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use pneumox_core::data::BBox;
use pneumox_core::evaluation::{auroc, confusion, prf1, ConfusionCounts};
use pneumox_core::gradcheck::{layer_suite, patchnet_suite};
use pneumox_core::patching::{overlap_fraction, PatchRect, WindowGrid};
use pneumox_core::rng::seeded;
use rand::Rng as _;

#[derive(Parser)]
#[command(about = "Checks the eight acceptance criteria and prints one line each")]
struct Args {
    /// Scratch directory for pipeline runs.
    #[arg(long, default_value = "target/acceptance")]
    out: PathBuf,
    /// Comma-separated subset of criteria to run.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u32>,
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn pneumox(out: &Path, command: &str, extra: &[&str]) -> i32 {
    let mut args = vec!["pneumox".to_string(), command.into(), "--quiet".into()];
    args.push(format!("--output_dir={}", toml_string(out)));
    args.extend(extra.iter().map(|s| s.to_string()));
    pneumox_cli::run_args(args)
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn read_kv(path: &Path) -> BTreeMap<String, String> {
    let text = fs::read_to_string(path).unwrap_or_default();
    pneumox_core::evaluation::parse_kv(&text).into_iter().collect()
}

fn fresh(dir: &Path) -> PathBuf {
    let _ = fs::remove_dir_all(dir);
    dir.to_path_buf()
}

fn readers(out: &Path) -> Verdict {
    let dir = fresh(&out.join("readers"));
    let t = Instant::now();
    let code = pneumox(&dir, "compare-readers", &[]);
    let took = t.elapsed();
    let kv = read_kv(&dir.join("reports/readers.kv"));
    let acc = |k: &str| kv.get(k).and_then(|v| v.parse::<f64>().ok()).map(|v| format!("{v:.2}"));
    let got = (acc("human_accuracy"), acc("model_accuracy"), acc("union_accuracy"));
    let disagreements = kv.get("disagreements").cloned().unwrap_or_default();
    let pass = code == 0
        && got == (Some("0.72".into()), Some("0.92".into()), Some("1.00".into()))
        && disagreements == "1,2,5,6,16,17,20,22,24"
        && took < Duration::from_secs(1);
    verdict(pass, format!("accuracies {got:?}, disagreements {{{disagreements}}}, {:.3}s", took.as_secs_f64()))
}

fn f1_arithmetic() -> Verdict {
    // precision 84/100, recall 84/105
    let c = ConfusionCounts { tp: 84, fp: 16, tn: 0, fn_: 21 };
    let m = prf1(&c);
    let (p, r, f) = (m.precision.unwrap_or(f64::NAN), m.recall.unwrap_or(f64::NAN), m.f1.unwrap_or(f64::NAN));
    let pass = format!("{p:.2}") == "0.84" && format!("{r:.2}") == "0.80" && format!("{f:.2}") == "0.82" && (f - 0.8195).abs() < 1e-4;
    verdict(pass, format!("precision {p:.4}, recall {r:.4}, f1 {f:.6}"))
}

fn grid_geometry(out: &Path) -> Verdict {
    let side = |f, p, s| WindowGrid::new(f, p, s).map(|g| g.grid_side).ok();
    let full = side(512, 256, 16);
    let desk = side(64, 32, 2);
    let rejected = [(64, 32, 3), (512, 256, 15), (63, 32, 2), (32, 64, 2), (64, 32, 0)]
        .iter()
        .all(|&(f, p, s)| side(f, p, s).is_none());
    let dir = fresh(&out.join("geometry"));
    let code = pneumox(&dir, "train-patch", &["--geometry.stride=3"]);
    let untouched = !dir.join("checkpoints").exists();
    verdict(
        full == Some(17) && desk == Some(17) && rejected && code == 2 && untouched,
        format!("512/256/16 -> {full:?}, 64/32/2 -> {desk:?}, bad grids rejected {rejected}, cli exit {code}"),
    )
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let mut layer_worst = 0.0f64;
    let mut net_worst = 0.0f64;
    for seed in 0..20 {
        match layer_suite(seed) {
            Ok(rows) => rows.iter().for_each(|(_, e)| layer_worst = layer_worst.max(*e)),
            Err(e) => return verdict(false, format!("layer suite seed {seed}: {e}")),
        }
        match patchnet_suite(seed) {
            Ok(e) => net_worst = net_worst.max(e),
            Err(e) => return verdict(false, format!("end-to-end seed {seed}: {e}")),
        }
    }
    let took = t.elapsed();
    verdict(
        layer_worst < 1e-5 && net_worst < 1e-4 && took < Duration::from_secs(30),
        format!("20 seeds, worst layer {layer_worst:.2e}, worst end-to-end {net_worst:.2e}, {:.1}s", took.as_secs_f64()),
    )
}

fn metric_oracles() -> Verdict {
    let mut rng = seeded(2024);
    let mut worst_auc = 0.0f64;
    let mut counts_ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(2..=200);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        labels[0] = 1;
        labels[1] = 0;
        // coarse levels force ties
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..25)) / 24.0).collect();
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        match auroc(&scores, &labels) {
            Ok(a) => worst_auc = worst_auc.max((a - num / pairs).abs()),
            Err(_) => worst_auc = f64::INFINITY,
        }
        let thr = f64::from(rng.gen_range(0..25)) / 24.0;
        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (s, l) in scores.iter().zip(&labels) {
            match (*s >= thr, *l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let c = confusion(&scores, &labels, thr).ok();
        counts_ok &= c == Some(ConfusionCounts { tp, fp, tn, fn_ });
        let m = prf1(&ConfusionCounts { tp, fp, tn, fn_ });
        let p = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let r = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let f = match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        counts_ok &= close(m.precision, p) && close(m.recall, r) && close(m.f1, f);
    }
    let mut worst_overlap = 0.0f64;
    for _ in 0..100 {
        let side = 64u32;
        let boxes: Vec<BBox> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let (w, h) = (rng.gen_range(1..=30), rng.gen_range(1..=30));
                BBox::new(rng.gen_range(0..=side - w), rng.gen_range(0..=side - h), w, h).expect("box")
            })
            .collect();
        let ps = rng.gen_range(4..=32);
        let rect = PatchRect { x: rng.gen_range(0..=side - ps), y: rng.gen_range(0..=side - ps), side: ps };
        let (mut union, mut inside) = (0u64, 0u64);
        for y in 0..side {
            for x in 0..side {
                if boxes.iter().any(|b| x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h) {
                    union += 1;
                    inside += u64::from(x >= rect.x && x < rect.x + ps && y >= rect.y && y < rect.y + ps);
                }
            }
        }
        let oracle = inside as f64 / union as f64;
        worst_overlap = worst_overlap.max((overlap_fraction(&boxes, &rect) - oracle).abs());
    }
    verdict(
        worst_auc <= 1e-12 && counts_ok && worst_overlap <= 1e-12,
        format!("auroc max diff {worst_auc:.1e}, confusion/prf1 match {counts_ok}, overlap max diff {worst_overlap:.1e}"),
    )
}

struct PipelineRun {
    code: i32,
    failed_at: &'static str,
    took: Duration,
}

fn full_pipeline(dir: &Path) -> PipelineRun {
    let t = Instant::now();
    for command in ["synth", "train-patch", "heatmaps", "train-fusion", "eval"] {
        let code = pneumox(dir, command, &["--synth.count=2500", "--data.test_fraction=0.2"]);
        if code != 0 {
            return PipelineRun { code, failed_at: command, took: t.elapsed() };
        }
    }
    PipelineRun { code: 0, failed_at: "", took: t.elapsed() }
}

fn learnability(run: &PipelineRun, dir: &Path) -> Verdict {
    if run.code != 0 {
        return verdict(false, format!("`{}` exited with {}", run.failed_at, run.code));
    }
    let kv = read_kv(&dir.join("reports/eval.kv"));
    let get = |k: &str| kv.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
    let (auc, f1, att) = (get("auroc"), get("f1"), get("attention_hit_fraction"));
    let n = kv.get("samples").cloned().unwrap_or_default();
    verdict(
        auc >= 0.90 && f1 >= 0.80 && att >= 0.70 && run.took <= Duration::from_secs(15 * 60),
        format!("test n={n}, auroc {auc:.4}, f1 {f1:.4}, attention {att:.4}, {:.0}s", run.took.as_secs_f64()),
    )
}

/// Every non-manifest artifact must match byte for byte.
fn determinism(a: &Path, b: &Path, run_b: &PipelineRun) -> Verdict {
    if run_b.code != 0 {
        return verdict(false, format!("rerun `{}` exited with {}", run_b.failed_at, run_b.code));
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["checkpoints", "reports", "history", "heatmaps", "data"] {
        let files = pneumox_cli::artifacts::files_under(&a.join(sub)).unwrap_or_default();
        for fa in files {
            let rel = fa.strip_prefix(a).expect("under a");
            compared += 1;
            if fs::read(&fa).ok() != fs::read(b.join(rel)).ok() {
                differing.push(rel.display().to_string());
            }
        }
    }
    verdict(
        compared > 0 && differing.is_empty(),
        format!("{compared} files compared, {} differ {:?}", differing.len(), differing.iter().take(3).collect::<Vec<_>>()),
    )
}

fn schedule(out: &Path) -> Verdict {
    let dir = fresh(&out.join("schedule"));
    let overrides = [
        "--synth.count=24",
        "--train_patch.epochs=120",
        "--train_patch.schedule.base_lr=1e-5",
        "--train_patch.schedule.gamma=0.9",
        "--train_patch.schedule.period_epochs=50",
        "--train_patch.patches_per_image=1",
        "--patch_net.base_channels=1",
        "--patch_net.blocks=1",
    ];
    for command in ["synth", "train-patch"] {
        let code = pneumox(&dir, command, &overrides);
        if code != 0 {
            return verdict(false, format!("`{command}` exited with {code}"));
        }
    }
    let text = fs::read_to_string(dir.join("history/patch.tsv")).unwrap_or_default();
    let rows: Vec<(u32, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .filter_map(|l| {
            let mut f = l.split('\t');
            Some((f.next()?.parse().ok()?, f.next()?.parse().ok()?))
        })
        .collect();
    let expect = |e: u32| match e {
        0..=49 => 1e-5,
        50..=99 => 9e-6,
        _ => 8.1e-6,
    };
    let exact = rows.len() == 120 && rows.iter().enumerate().all(|(i, &(e, lr))| e == i as u32 && lr == expect(e));
    let at = |e: usize| rows.get(e).map_or(f64::NAN, |r| r.1);
    verdict(exact, format!("{} rows; lr at 0/49/50/99/100/119 = {} {} {} {} {} {}", rows.len(), at(0), at(49), at(50), at(99), at(100), at(119)))
}

fn main() {
    let args = Args::parse();
    let want = |c: u32| args.only.is_empty() || args.only.contains(&c);
    let out = args.out;
    let _ = fs::create_dir_all(&out);
    let mut all = true;
    let mut report = |n: u32, name: &str, v: Verdict| {
        all &= v.pass;
        println!("criterion {n} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    if want(1) {
        report(1, "reader table", readers(&out));
    }
    if want(2) {
        report(2, "f1 arithmetic", f1_arithmetic());
    }
    if want(3) {
        report(3, "grid geometry", grid_geometry(&out));
    }
    if want(4) {
        report(4, "gradient suite", gradients());
    }
    if want(5) {
        report(5, "metric oracles", metric_oracles());
    }
    if want(6) || want(7) {
        let a = fresh(&out.join("desk-a"));
        let run_a = full_pipeline(&a);
        if want(6) {
            report(6, "desk learnability", learnability(&run_a, &a));
        }
        if want(7) {
            let b = fresh(&out.join("desk-b"));
            let run_b = if run_a.code == 0 { full_pipeline(&b) } else { PipelineRun { code: run_a.code, failed_at: run_a.failed_at, took: Duration::ZERO } };
            report(7, "determinism", determinism(&a, &b, &run_b));
        }
    }
    if want(8) {
        report(8, "lr schedule", schedule(&out));
    }
    std::process::exit(if all { 0 } else { 1 });
}
