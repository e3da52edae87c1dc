//! One method per subcommand. Each returns the artifact paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use pneumox_core::data::{
    augment_to_count, load_manifest, load_samples, read_gray_image, resize_area, resize_sample, scale_boxes,
    split_items, synth_generate, write_dataset, ImageSample,
};
use pneumox_core::evaluation::{
    load_reader_file, parse_reader_text, reader_compare, AttentionCheck, EvalItem, EvalReport, READER_FIXTURE,
};
use pneumox_core::models::{load_checkpoint, save_checkpoint, Checkpoint, FusionClassifier, FusionNet, PatchNet, Pipeline, TrainMeta};
use pneumox_core::optim::LrSchedule;
use pneumox_core::patching::attention_hits;
use pneumox_core::rng::{derive_seed, seeded};
use pneumox_core::training::{fusion_examples, train_stage1, train_stage2, EpochRecord, HeatmapCache, TrainConfig};

use crate::artifacts::files_under;
use crate::config::{check_image_side, RunConfig};
use crate::CliError;

const STREAM_SYNTH: u64 = 10;
const STREAM_SPLIT: u64 = 11;
const STREAM_AUGMENT: u64 = 12;
const STREAM_PATCH: u64 = 0x100;
const STREAM_FUSION: u64 = 0x200;

/// Decision threshold on the final probability.
pub const DIAGNOSIS_THRESHOLD: f64 = 0.5;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub quiet: bool,
}

/// The loaded dataset and its seeded train/test split.
pub struct Dataset {
    pub all: Vec<ImageSample>,
    pub train: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

fn write(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{} not found; run `pneumox {hint}` first", path.display())))
    }
}

/// Seed of one training stage: the run seed, mixed with the stage and the
/// section's own `seed` offset.
fn stage_seed(run_seed: u64, stream: u64, train: &TrainConfig) -> u64 {
    derive_seed(run_seed, stream.wrapping_add(train.seed))
}

fn meta(epoch: u32, seed: u64, schedule: &LrSchedule) -> TrainMeta {
    TrainMeta { epoch, seed, final_lr: schedule.lr_at_epoch(epoch) }
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

impl Ctx<'_> {
    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.output_dir.join(rel)
    }

    /// Summary output on stdout; `--quiet` silences it, the files remain.
    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn ckpt(&self, name: &str) -> PathBuf {
        self.out("checkpoints").join(format!("{name}.ckpt"))
    }

    fn progress(&self, stage: &'static str) -> impl FnMut(&EpochRecord) + '_ {
        move |r| {
            if !self.quiet {
                eprintln!(
                    "{stage} epoch {:>3}  lr {}  train_loss {:.4}  val_loss {}  val_f1 {}  val_auroc {}",
                    r.epoch,
                    r.lr,
                    r.train_loss,
                    na(r.val_loss),
                    na(r.val_f1),
                    na(r.val_auroc)
                );
            }
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        let path = self.cfg.data_dir().join("manifest.tsv");
        require(&path, "synth")?;
        let manifest = load_manifest(&path)?;
        check_image_side(manifest.image_size, &self.cfg.geometry)
            .map_err(|m| CliError::Config(format!("dataset {}: {m}", path.display())))?;
        let all = load_samples(&manifest)?;
        if all.is_empty() {
            return Err(CliError::Data(format!("dataset {} has no images", path.display())));
        }
        let f = self.cfg.data.test_fraction;
        let (train, test) = split_items(&all, (1.0 - f, f), derive_seed(self.cfg.seed, STREAM_SPLIT))?;
        Ok(Dataset { all, train, test })
    }

    fn patch_net(&self) -> Result<PatchNet<f32>, CliError> {
        let path = self.ckpt("patch_best");
        require(&path, "train-patch")?;
        load_checkpoint(&path)?
            .patchnet_as(&self.cfg.patch_net)
            .map_err(|e| CliError::Config(format!("{} does not match [patch_net]: {e}", path.display())))
    }

    fn fusion_net(&self) -> Result<FusionNet<f32>, CliError> {
        let path = self.ckpt("fusion_best");
        require(&path, "train-fusion")?;
        load_checkpoint(&path)?
            .fusionnet_as(&self.cfg.fusion_net)
            .map_err(|e| CliError::Config(format!("{} does not match [fusion_net]: {e}", path.display())))
    }

    fn heatmaps_for(&self, samples: &[ImageSample]) -> Result<HeatmapCache, CliError> {
        let dir = self.out("heatmaps");
        require(&dir.join("heatmaps.tsv"), "heatmaps")?;
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        Ok(HeatmapCache::read(&dir, self.cfg.grid()?, self.cfg.geometry.heat_threshold, &ids)?)
    }

    pub fn synth(&self) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.cfg;
        let samples = synth_generate(&cfg.synth, &mut seeded(derive_seed(cfg.seed, STREAM_SYNTH)))?;
        let dir = cfg.data_dir();
        // stale images from an earlier, larger run would linger otherwise
        let images = dir.join("images");
        if images.exists() {
            fs::remove_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
        }
        write_dataset(&dir, &samples, cfg.synth.side)?;
        let mut out = vec![dir.join("manifest.tsv")];
        out.extend(files_under(&images)?);
        self.say(&format!("wrote {} images to {}\n", samples.len(), dir.display()));
        Ok(out)
    }

    pub fn train_patch(&self) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.cfg;
        let ds = self.load_dataset()?;
        let mut train = ds.train;
        if let Some(a) = &cfg.augment {
            let target = a.train_count.max(train.len());
            train = augment_to_count(&train, target, &mut seeded(derive_seed(cfg.seed, STREAM_AUGMENT)), &a.policy)?;
        }
        let working = train
            .iter()
            .map(|s| resize_sample(s, cfg.geometry.working_side))
            .collect::<Result<Vec<_>, _>>()?;
        let tc = TrainConfig { seed: stage_seed(cfg.seed, STREAM_PATCH, &cfg.train_patch), ..cfg.train_patch.clone() };
        let out = train_stage1(&tc, &cfg.patch_net, &working, self.progress("patch"))?;
        let (best, last) = (self.ckpt("patch_best"), self.ckpt("patch_last"));
        save_checkpoint(&Checkpoint::from_patchnet(&out.best, meta(out.best_epoch, tc.seed, &tc.schedule)), &best)?;
        save_checkpoint(&Checkpoint::from_patchnet(&out.last, meta(tc.epochs - 1, tc.seed, &tc.schedule)), &last)?;
        let history = write(&self.out("history/patch.tsv"), &out.history.to_tsv())?;
        self.say(&format!("stage 1 trained on {} images; best epoch {}\n", working.len(), out.best_epoch));
        Ok(vec![best, last, history])
    }

    pub fn heatmaps(&self) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.cfg;
        let net = self.patch_net()?;
        let ds = self.load_dataset()?;
        let cache = HeatmapCache::compute(&net, cfg.grid()?, cfg.geometry.heat_threshold, &ds.all)?;
        let dir = self.out("heatmaps");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        cache.write(&dir)?;
        self.say(&format!("wrote {} heatmaps to {}\n", cache.maps.len(), dir.display()));
        files_under(&dir)
    }

    pub fn train_fusion(&self) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.cfg;
        let ds = self.load_dataset()?;
        let cache = self.heatmaps_for(&ds.train)?;
        let examples = fusion_examples(&ds.train, &cache, cfg.geometry.fusion_side as usize)?;
        let tc = TrainConfig { seed: stage_seed(cfg.seed, STREAM_FUSION, &cfg.train_fusion), ..cfg.train_fusion.clone() };
        let out = train_stage2(&tc, &cfg.fusion_net, &examples, self.progress("fusion"))?;
        let (best, last) = (self.ckpt("fusion_best"), self.ckpt("fusion_last"));
        save_checkpoint(&Checkpoint::from_fusionnet(&out.best, meta(out.best_epoch, tc.seed, &tc.schedule)), &best)?;
        save_checkpoint(&Checkpoint::from_fusionnet(&out.last, meta(tc.epochs - 1, tc.seed, &tc.schedule)), &last)?;
        let history = write(&self.out("history/fusion.tsv"), &out.history.to_tsv())?;
        self.say(&format!("stage 2 trained on {} images; best epoch {}\n", examples.len(), out.best_epoch));
        Ok(vec![best, last, history])
    }

    pub fn predict(&self, images: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.cfg;
        let pipeline = Pipeline::new(self.patch_net()?, self.fusion_net()?, cfg.grid()?, cfg.geometry.heat_threshold)?;
        let samples = if images.is_empty() {
            self.load_dataset()?.test
        } else {
            images.iter().map(|p| self.external_image(p)).collect::<Result<Vec<_>, _>>()?
        };
        let mut table = String::from("id\tprobability\tdiagnosis\tlit_windows\n");
        for s in &samples {
            let p = pipeline.predict(s)?;
            table.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, p.probability, p.diagnosis, p.heatmap.lit()));
        }
        self.say(&table);
        Ok(vec![write(&self.out("reports/predictions.tsv"), &table)?])
    }

    fn external_image(&self, path: &Path) -> Result<ImageSample, CliError> {
        if !path.exists() {
            return Err(CliError::Missing(format!("image {} not found", path.display())));
        }
        let pixels = read_gray_image(path)?;
        let (_, h, w) = pixels.dims3()?;
        if h != w {
            return Err(CliError::Data(format!("{} is {h}×{w}; images must be square", path.display())));
        }
        check_image_side(h as u32, &self.cfg.geometry).map_err(|m| CliError::Data(format!("{}: {m}", path.display())))?;
        let id = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
        Ok(ImageSample { id, pixels, label: 0, boxes: Vec::new(), category: None })
    }

    pub fn eval(&self) -> Result<Vec<PathBuf>, CliError> {
        let cfg = self.cfg;
        let net = self.fusion_net()?;
        let ds = self.load_dataset()?;
        let cache = self.heatmaps_for(&ds.test)?;
        let grid = cfg.grid()?;
        let mut items = Vec::with_capacity(ds.test.len());
        let mut attention = AttentionCheck::default();
        let mut scores = String::from("id\tlabel\tscore\tprediction\tlit_windows\n");
        for s in &ds.test {
            let heat = &cache.maps[&s.id];
            let small = resize_area(&s.pixels, cfg.geometry.fusion_side as usize)?;
            let score = f64::from(net.fusion_probability(&small, heat)?);
            let predicted = u8::from(score >= DIAGNOSIS_THRESHOLD);
            if s.label == 1 && predicted == 1 {
                let boxes = scale_boxes(&s.boxes, s.side(), grid.full_side);
                let (hits, lit) = attention_hits(heat, &grid, &boxes);
                attention.add(hits, lit);
            }
            scores.push_str(&format!("{}\t{}\t{score}\t{predicted}\t{}\n", s.id, s.label, heat.lit()));
            items.push(EvalItem { score, label: s.label, boxes: s.boxes.clone(), side: s.side() });
        }
        let report = EvalReport::build(&items, DIAGNOSIS_THRESHOLD, &cfg.regions, Some(attention))?;
        let text = report.to_text();
        self.say(&text);
        Ok(vec![
            write(&self.out("reports/eval.txt"), &text)?,
            write(&self.out("reports/eval.kv"), &report.to_kv())?,
            write(&self.out("reports/scores.tsv"), &scores)?,
        ])
    }

    pub fn compare_readers(&self, readers: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
        let records = match readers {
            Some(p) => {
                require(p, "compare-readers --readers <existing file>")?;
                load_reader_file(p)?
            }
            None => parse_reader_text(READER_FIXTURE)?,
        };
        let report = reader_compare(&records)?;
        let text = report.to_text();
        self.say(&text);
        Ok(vec![
            write(&self.out("reports/readers.txt"), &text)?,
            write(&self.out("reports/readers.kv"), &report.to_kv())?,
        ])
    }
}
