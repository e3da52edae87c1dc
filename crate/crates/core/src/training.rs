//! Mini-batch training for both stages.
//!
//! Each batch computes per-example gradients (in parallel, each with its own
//! derived dropout stream), sums them in example order and applies one Adam
//! update with the epoch's scheduled learning rate. Summation order is fixed,
//! so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{resize_area, split_items, ImageSample};
use crate::error::{param_err, Error, Result};
use crate::evaluation::{auroc, confusion, prf1};
use crate::loss::{bce_logit_grad, bce_loss};
use crate::models::{FusionNet, FusionNetConfig, Network, PatchNet, PatchNetConfig};
use crate::optim::{adam_step, AdamState, LrSchedule};
use crate::patching::{
    build_heatmap, read_heatmap, sample_patches, write_heatmap, Heatmap, PatchClassifier, PatchSampling, WindowGrid,
    PATCH_POSITIVE_THRESHOLD,
};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_VAL: u64 = 3;
const STREAM_EPOCH: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub epochs: u32,
    pub seed: u64,
    /// Stage 1 only.
    pub patches_per_image: usize,
    pub val_fraction: f64,
    /// Stage 1 only: overlap share that makes a patch positive.
    pub patch_threshold: f64,
    /// Stage 1 only.
    pub sampling: PatchSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            schedule: LrSchedule::default(),
            epochs: 10,
            seed: 0,
            patches_per_image: 8,
            val_fraction: 0.2,
            patch_threshold: PATCH_POSITIVE_THRESHOLD,
            sampling: PatchSampling::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(param_err!("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(param_err!("epochs must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(param_err!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.patches_per_image == 0 {
            return Err(param_err!("patches_per_image must be at least 1"));
        }
        if !(self.patch_threshold > 0.0 && self.patch_threshold <= 1.0) {
            return Err(param_err!("patch_threshold must lie in (0, 1], got {}", self.patch_threshold));
        }
        if let PatchSampling::BoxBiased { box_prob } = self.sampling {
            if !(0.0..=1.0).contains(&box_prob) {
                return Err(param_err!("box_prob must lie in [0, 1], got {box_prob}"));
            }
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_f1: Option<f64>,
    pub val_auroc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

impl TrainHistory {
    /// Tab-separated table, one row per epoch. Learning rates use the
    /// shortest exact decimal form.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tlr\ttrain_loss\tval_loss\tval_f1\tval_auroc\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{}\t{}\t{}",
                r.epoch,
                r.lr,
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_f1),
                opt(r.val_auroc)
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        s
    }

    pub fn follows(&self, schedule: &LrSchedule) -> bool {
        self.rows.iter().all(|r| r.lr == schedule.lr_at_epoch(r.epoch))
    }
}

/// Result of a training run: the final-epoch model, the model with the
/// lowest validation loss and the per-epoch history.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub best: M,
    pub best_epoch: u32,
    pub last: M,
    pub history: TrainHistory,
}

/// A network that can be fitted on examples of one kind.
pub trait Trainable: Network<f32> + Clone + Send + Sync {
    type Example: Send + Sync;

    fn label(example: &Self::Example) -> u8;
    /// Inference-mode probability.
    fn predict(&self, example: &Self::Example) -> Result<f32>;
    /// Training-mode loss and parameter gradients.
    fn loss_grads(&self, example: &Self::Example, rng: &mut Rng) -> Result<(f32, Vec<Tensor<f32>>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchExample {
    pub patch: Tensor<f32>,
    pub label: u8,
}

impl Trainable for PatchNet<f32> {
    type Example = PatchExample;

    fn label(example: &PatchExample) -> u8 {
        example.label
    }

    fn predict(&self, example: &PatchExample) -> Result<f32> {
        self.forward(&example.patch)
    }

    fn loss_grads(&self, example: &PatchExample, rng: &mut Rng) -> Result<(f32, Vec<Tensor<f32>>)> {
        let (p, trace) = self.forward_traced(&example.patch, true, rng)?;
        let (loss, dz) = bce_logit_grad(p, example.label)?;
        Ok((loss, self.backward(&trace, dz)?))
    }
}

/// A stage-2 training item: the downscaled image and its heatmap bits.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionExample {
    pub id: String,
    pub image: Tensor<f32>,
    pub heat: Tensor<f32>,
    pub label: u8,
}

impl Trainable for FusionNet<f32> {
    type Example = FusionExample;

    fn label(example: &FusionExample) -> u8 {
        example.label
    }

    fn predict(&self, example: &FusionExample) -> Result<f32> {
        self.forward(&example.image, &example.heat)
    }

    fn loss_grads(&self, example: &FusionExample, rng: &mut Rng) -> Result<(f32, Vec<Tensor<f32>>)> {
        let (p, trace) = self.forward_traced(&example.image, &example.heat, true, rng)?;
        let (loss, dz) = bce_logit_grad(p, example.label)?;
        Ok((loss, self.backward(&trace, dz)?))
    }
}

/// A model plus its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer<M> {
    pub model: M,
    states: Vec<AdamState<f32>>,
}

impl<M: Trainable> Trainer<M> {
    pub fn new(model: M) -> Self {
        let states = model.named_params().iter().map(|(_, t)| AdamState::new(t.shape())).collect();
        Self { model, states }
    }

    /// One averaged-gradient Adam update over `batch`. Returns the mean loss
    /// before the update.
    pub fn step(&mut self, batch: &[&M::Example], lr: f64, seed: u64) -> Result<f64> {
        if batch.is_empty() {
            return Err(param_err!("empty batch"));
        }
        let model = &self.model;
        let results = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| model.loss_grads(ex, &mut seeded(derive_seed(seed, i as u64))))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0f64;
        let mut acc: Option<Vec<Tensor<f32>>> = None;
        for (loss, grads) in results {
            total += loss as f64;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => {
                    for (a, g) in a.iter_mut().zip(&grads) {
                        a.add_scaled(g, 1.0)?;
                    }
                }
            }
        }
        let mean = total / batch.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {mean}")));
        }
        let mut grads = acc.expect("non-empty batch");
        let scale = 1.0 / batch.len() as f32;
        for g in &mut grads {
            g.scale(scale);
            if !g.all_finite() {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
        for ((p, g), st) in self.model.params_mut().into_iter().zip(&grads).zip(&mut self.states) {
            adam_step(p, g, st, lr)?;
        }
        Ok(mean)
    }
}

/// Mean BCE, F1 and AUROC of inference-mode predictions.
pub struct Evaluation {
    pub loss: f64,
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
    pub scores: Vec<f64>,
}

pub fn evaluate<M: Trainable>(model: &M, examples: &[M::Example]) -> Result<Evaluation> {
    let scores = examples
        .par_iter()
        .map(|e| model.predict(e).map(f64::from))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<u8> = examples.iter().map(M::label).collect();
    let mut loss = 0.0;
    for (&p, &y) in scores.iter().zip(&labels) {
        loss += bce_loss(p, y)?.0;
    }
    let n = examples.len().max(1) as f64;
    let (f1, au) = if examples.is_empty() {
        (None, None)
    } else {
        (prf1(&confusion(&scores, &labels, 0.5)?).f1, auroc(&scores, &labels).ok())
    };
    Ok(Evaluation { loss: loss / n, f1, auroc: au, scores })
}

/// Generic epoch loop. `epoch_data` supplies the (possibly freshly sampled)
/// training examples for each epoch.
pub fn fit<M: Trainable>(
    model: M,
    config: &TrainConfig,
    validation: &[M::Example],
    mut epoch_data: impl FnMut(u32, &mut Rng) -> Result<Vec<M::Example>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    let mut trainer = Trainer::new(model);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, u32, M)> = None;
    for epoch in 0..config.epochs {
        let epoch_seed = derive_seed(config.seed, STREAM_EPOCH + epoch as u64);
        let mut rng = seeded(epoch_seed);
        let examples = epoch_data(epoch, &mut rng)?;
        if examples.is_empty() {
            return Err(param_err!("epoch {epoch} has no training examples"));
        }
        let positives = examples.iter().filter(|e| M::label(e) == 1).count();
        if positives == 0 || positives == examples.len() {
            history.warnings.push(format!(
                "epoch {epoch}: every training example has label {}",
                u8::from(positives > 0)
            ));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let lr = config.schedule.lr_at_epoch(epoch);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&M::Example> = chunk.iter().map(|&i| &examples[i]).collect();
            loss_sum += trainer.step(&batch, lr, derive_seed(epoch_seed, b as u64))? * batch.len() as f64;
        }
        let val = (!validation.is_empty()).then(|| evaluate(&trainer.model, validation)).transpose()?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / examples.len() as f64,
            val_loss: val.as_ref().map(|v| v.loss),
            val_f1: val.as_ref().and_then(|v| v.f1),
            val_auroc: val.as_ref().and_then(|v| v.auroc),
        };
        on_epoch(&record);
        let key = record.val_loss.unwrap_or(record.train_loss);
        if best.as_ref().map_or(true, |(b, _, _)| key < *b) {
            best = Some((key, epoch, trainer.model.clone()));
        }
        history.rows.push(record);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, last: trainer.model, history })
}

/// Splits off the validation images, then trains the patch classifier on
/// patches drawn afresh from the training images every epoch. `images` must
/// already be at working resolution.
pub fn train_stage1(
    config: &TrainConfig,
    net: &PatchNetConfig,
    images: &[ImageSample],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<PatchNet<f32>>> {
    config.validate()?;
    net.validate()?;
    if images.is_empty() {
        return Err(param_err!("stage-1 training needs at least one image"));
    }
    let side = net.input_side as u32;
    if let Some(s) = images.iter().find(|s| s.side() < side) {
        return Err(param_err!("image {} ({} px) is smaller than the {side}-pixel patch", s.id, s.side()));
    }
    let (train, val) = split_items(images, (1.0 - config.val_fraction, config.val_fraction), derive_seed(config.seed, STREAM_SPLIT))?;
    let draw = |set: &[ImageSample], rng: &mut Rng| -> Result<Vec<PatchExample>> {
        let mut out = Vec::with_capacity(set.len() * config.patches_per_image);
        for s in set {
            for (patch, label) in sample_patches(s, config.patches_per_image, side, config.patch_threshold, config.sampling, rng)? {
                out.push(PatchExample { patch, label });
            }
        }
        Ok(out)
    };
    let validation = draw(&val, &mut seeded(derive_seed(config.seed, STREAM_VAL)))?;
    let model = PatchNet::init(net.clone(), &mut seeded(derive_seed(config.seed, STREAM_INIT)))?;
    fit(model, config, &validation, |_, rng| draw(&train, rng), on_epoch)
}

/// Trains the fusion classifier on precomputed examples.
pub fn train_stage2(
    config: &TrainConfig,
    net: &FusionNetConfig,
    examples: &[FusionExample],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<FusionNet<f32>>> {
    config.validate()?;
    net.validate()?;
    if examples.is_empty() {
        return Err(param_err!("stage-2 training needs at least one example"));
    }
    let (train, val) = split_items(examples, (1.0 - config.val_fraction, config.val_fraction), derive_seed(config.seed, STREAM_SPLIT))?;
    let model = FusionNet::init(net.clone(), &mut seeded(derive_seed(config.seed, STREAM_INIT)))?;
    fit(model, config, &val, |_, _| Ok(train.clone()), on_epoch)
}

/// Stage-1 heatmaps for a set of images, keyed by id.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapCache {
    pub grid: WindowGrid,
    pub threshold: f32,
    pub maps: BTreeMap<String, Heatmap>,
}

const CACHE_INDEX: &str = "heatmaps.tsv";

impl HeatmapCache {
    /// Resizes each image to the grid's working side and slides the frozen
    /// stage-1 model over it.
    pub fn compute<P: PatchClassifier>(
        stage1: &P,
        grid: WindowGrid,
        threshold: f32,
        samples: &[ImageSample],
    ) -> Result<Self> {
        let mut maps = BTreeMap::new();
        for s in samples {
            let working = resize_area(&s.pixels, grid.full_side as usize)?;
            maps.insert(s.id.clone(), build_heatmap(stage1, &working, &grid, threshold)?);
        }
        Ok(Self { grid, threshold, maps })
    }

    /// Writes one probability and one bit file per image plus an index.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let g = &self.grid;
        let mut index = format!(
            "#pneumox-heatmaps\tfull_side={}\tpatch_side={}\tstride={}\tthreshold={}\n",
            g.full_side, g.patch_side, g.stride, self.threshold
        );
        for (id, map) in &self.maps {
            write_heatmap(dir, id, map)?;
            index.push_str(id);
            index.push('\n');
        }
        let path = dir.join(CACHE_INDEX);
        fs::write(&path, index).map_err(|e| Error::io(&path, e))
    }

    /// Reads the cache for exactly `ids`. A missing id or a geometry that
    /// disagrees with `grid` is a configuration error.
    pub fn read(dir: &Path, grid: WindowGrid, threshold: f32, ids: &[String]) -> Result<Self> {
        let path = dir.join(CACHE_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let expect = format!(
            "#pneumox-heatmaps\tfull_side={}\tpatch_side={}\tstride={}\tthreshold={}",
            grid.full_side, grid.patch_side, grid.stride, threshold
        );
        if header != expect {
            return Err(Error::Config(format!(
                "heatmap cache {} was built for `{header}`, expected `{expect}`",
                dir.display()
            )));
        }
        let cached: std::collections::BTreeSet<&str> = lines.filter(|l| !l.is_empty()).collect();
        let mut maps = BTreeMap::new();
        for id in ids {
            if !cached.contains(id.as_str()) {
                return Err(Error::Config(format!("heatmap cache {} has no entry for `{id}`", dir.display())));
            }
            let map = read_heatmap(dir, id, threshold)?;
            if map.grid_side != grid.grid_side {
                return Err(Error::Config(format!(
                    "heatmap `{id}` is {0}×{0}, grid is {1}×{1}",
                    map.grid_side, grid.grid_side
                )));
            }
            maps.insert(id.clone(), map);
        }
        Ok(Self { grid, threshold, maps })
    }
}

/// Pairs each sample (resized to `image_side`) with its cached heatmap bits.
pub fn fusion_examples(samples: &[ImageSample], cache: &HeatmapCache, image_side: usize) -> Result<Vec<FusionExample>> {
    samples
        .par_iter()
        .map(|s| {
            let map = cache
                .maps
                .get(&s.id)
                .ok_or_else(|| Error::Config(format!("no heatmap cached for sample `{}`", s.id)))?;
            Ok(FusionExample {
                id: s.id.clone(),
                image: resize_area(&s.pixels, image_side)?,
                heat: map.bits_tensor(),
                label: s.label,
            })
        })
        .collect()
}
