use pneumox_core::data::{resize_sample, split_items, synth_generate, SynthConfig};
use pneumox_core::evaluation::auroc;
use pneumox_core::models::{Checkpoint, FusionClassifier, FusionNetConfig, PatchNetConfig, Pipeline, TrainMeta};
use pneumox_core::optim::LrSchedule;
use pneumox_core::patching::{PatchSampling, WindowGrid};
use pneumox_core::rng::seeded;
use pneumox_core::training::{evaluate, fusion_examples, train_stage1, train_stage2, HeatmapCache, TrainConfig};

fn nets() -> (PatchNetConfig, FusionNetConfig) {
    let patch = PatchNetConfig { input_side: 16, base_channels: 4, blocks: 2, dropout_rate: 0.2, ..PatchNetConfig::default() };
    let fusion = FusionNetConfig { heatmap_side: 9, heatmap_channels: 2, image: patch.clone(), dropout_rate: 0.2 };
    (patch, fusion)
}

fn train_cfg(epochs: u32) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        patches_per_image: 4,
        schedule: LrSchedule { base_lr: 3e-3, ..LrSchedule::default() },
        sampling: PatchSampling::BoxBiased { box_prob: 0.5 },
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn two_stages_learn_synthetic_opacities() {
    let synth = SynthConfig { count: 800, side: 32, ..SynthConfig::default() };
    let all = synth_generate(&synth, &mut seeded(11)).unwrap();
    let (train, test) = split_items(&all, (0.8, 0.2), 12).unwrap();
    let (pcfg, fcfg) = nets();
    let grid = WindowGrid::new(32, 16, 2).unwrap();
    assert_eq!(grid.grid_side as usize, fcfg.heatmap_side);

    let s1 = train_stage1(&train_cfg(8), &pcfg, &train, |_| {}).unwrap();
    assert_eq!(s1.history.rows.len(), 8);
    let cache = HeatmapCache::compute(&s1.best, grid, 0.5, &all).unwrap();
    let ex = fusion_examples(&train, &cache, 16).unwrap();
    let s2 = train_stage2(&train_cfg(15), &fcfg, &ex, |_| {}).unwrap();

    let test_ex = fusion_examples(&test, &cache, 16).unwrap();
    let ev = evaluate(&s2.best, &test_ex).unwrap();
    assert!(ev.auroc.unwrap() > 0.95, "test auroc {:?}", ev.auroc);

    // the assembled pipeline reproduces the cached-heatmap scores
    let pipeline = Pipeline::new(s1.best.clone(), s2.best.clone(), grid, 0.5).unwrap();
    for (s, score) in test.iter().zip(&ev.scores).take(10) {
        let p = pipeline.predict(s).unwrap();
        assert_eq!(p.heatmap, cache.maps[&s.id]);
        assert_eq!(f64::from(p.probability), *score);
        assert_eq!(p.diagnosis, u8::from(*score >= 0.5));
    }

    // checkpoints restore networks that score identically
    let meta = TrainMeta { epoch: s2.best_epoch, seed: 5, final_lr: 2e-3 };
    let back = Checkpoint::from_bytes(&Checkpoint::from_fusionnet(&s2.best, meta).to_bytes()).unwrap().fusionnet().unwrap();
    let e = &test_ex[0];
    let heat = &cache.maps[&e.id];
    assert_eq!(
        back.fusion_probability(&e.image, heat).unwrap().to_bits(),
        s2.best.fusion_probability(&e.image, heat).unwrap().to_bits()
    );
    let labels: Vec<u8> = test_ex.iter().map(|e| e.label).collect();
    assert_eq!(auroc(&ev.scores, &labels).unwrap(), ev.auroc.unwrap());
}

#[test]
fn stage_one_replays_bit_for_bit() {
    let all = synth_generate(&SynthConfig { count: 30, side: 32, ..SynthConfig::default() }, &mut seeded(1)).unwrap();
    let (pcfg, _) = nets();
    let a = train_stage1(&train_cfg(2), &pcfg, &all, |_| {}).unwrap();
    let b = train_stage1(&train_cfg(2), &pcfg, &all, |_| {}).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.history, b.history);
    let c = train_stage1(&TrainConfig { seed: 6, ..train_cfg(2) }, &pcfg, &all, |_| {}).unwrap();
    assert_ne!(a.last, c.last);
}

#[test]
fn long_history_follows_the_step_schedule() {
    let all = synth_generate(&SynthConfig { count: 6, side: 16, ..SynthConfig::default() }, &mut seeded(2)).unwrap();
    let work: Vec<_> = all.iter().map(|s| resize_sample(s, 8).unwrap()).collect();
    let net = PatchNetConfig { input_side: 8, base_channels: 1, blocks: 1, extra_conv: false, ..PatchNetConfig::default() };
    let cfg = TrainConfig { epochs: 120, patches_per_image: 1, val_fraction: 0.34, ..TrainConfig::default() };
    let out = train_stage1(&cfg, &net, &work, |_| {}).unwrap();
    let lrs: Vec<f64> = out.history.rows.iter().map(|r| r.lr).collect();
    assert_eq!(lrs.len(), 120);
    assert!(lrs[..50].iter().all(|&l| l == 1e-5));
    assert!(lrs[50..100].iter().all(|&l| l == 9e-6));
    assert!(lrs[100..].iter().all(|&l| l == 8.1e-6));
    assert!(out.history.follows(&cfg.schedule));
    let tsv = out.history.to_tsv();
    assert!(tsv.contains("\n100\t0.0000081\t"), "{tsv}");
}
