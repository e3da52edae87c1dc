//! End-to-end inference: working-resolution heatmap from stage 1, then the
//! fusion classifier on a downscaled image plus that heatmap.

use serde::{Deserialize, Serialize};

use crate::data::{resize_area, ImageSample};
use crate::error::{param_err, Result};
use crate::patching::{build_heatmap, Heatmap, PatchClassifier, WindowGrid};
use crate::tensor::Tensor;

/// Anything that maps an image plus its heatmap to a probability.
pub trait FusionClassifier: Sync {
    fn image_side(&self) -> usize;
    fn heatmap_side(&self) -> usize;
    fn fusion_probability(&self, image: &Tensor<f32>, heatmap: &Heatmap) -> Result<f32>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f32,
    pub diagnosis: u8,
    pub heatmap: Heatmap,
}

pub struct Pipeline<P, F> {
    pub stage1: P,
    pub stage2: F,
    pub grid: WindowGrid,
    /// Bit threshold applied to stage-1 window probabilities.
    pub heat_threshold: f32,
}

impl<P: PatchClassifier, F: FusionClassifier> Pipeline<P, F> {
    pub fn new(stage1: P, stage2: F, grid: WindowGrid, heat_threshold: f32) -> Result<Self> {
        if stage1.input_side() != grid.patch_side as usize {
            return Err(param_err!(
                "stage-1 input side {} differs from the window side {}",
                stage1.input_side(),
                grid.patch_side
            ));
        }
        if stage2.heatmap_side() != grid.grid_side as usize {
            return Err(param_err!(
                "stage-2 expects a {0}×{0} heatmap, the grid yields {1}×{1}",
                stage2.heatmap_side(),
                grid.grid_side
            ));
        }
        Ok(Self { stage1, stage2, grid, heat_threshold })
    }

    pub fn heatmap(&self, sample: &ImageSample) -> Result<Heatmap> {
        let working = resize_area(&sample.pixels, self.grid.full_side as usize)?;
        build_heatmap(&self.stage1, &working, &self.grid, self.heat_threshold)
    }

    pub fn predict(&self, sample: &ImageSample) -> Result<Prediction> {
        let heatmap = self.heatmap(sample)?;
        self.predict_with(sample, heatmap)
    }

    /// Stage 2 only, with a precomputed heatmap.
    pub fn predict_with(&self, sample: &ImageSample, heatmap: Heatmap) -> Result<Prediction> {
        let small = resize_area(&sample.pixels, self.stage2.image_side())?;
        let probability = self.stage2.fusion_probability(&small, &heatmap)?;
        Ok(Prediction { probability, diagnosis: u8::from(probability >= 0.5), heatmap })
    }
}
