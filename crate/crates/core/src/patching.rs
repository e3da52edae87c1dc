//! Patch sampling, the overlap labeling rule, the sliding-window grid and
//! heatmap construction.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, ImageSample};
use crate::error::{param_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Default share of the box union a patch must contain to count as positive.
pub const PATCH_POSITIVE_THRESHOLD: f64 = 0.10;

/// Square window; `(x, y)` is the top-left corner in working-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRect {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl PatchRect {
    pub fn area(&self) -> u64 {
        self.side as u64 * self.side as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub full_side: u32,
    pub patch_side: u32,
    pub stride: u32,
    pub grid_side: u32,
}

impl WindowGrid {
    pub fn new(full_side: u32, patch_side: u32, stride: u32) -> Result<Self> {
        if patch_side == 0 || patch_side > full_side {
            return Err(param_err!("patch side {patch_side} must lie in 1..={full_side}"));
        }
        if stride == 0 {
            return Err(param_err!("window stride must be at least 1"));
        }
        let span = full_side - patch_side;
        if span % stride != 0 {
            return Err(param_err!(
                "({full_side} − {patch_side}) = {span} is not divisible by stride {stride}"
            ));
        }
        Ok(Self {
            full_side,
            patch_side,
            stride,
            grid_side: span / stride + 1,
        })
    }

    /// Window at grid row `i` (y offset) and column `j` (x offset).
    pub fn rect(&self, i: u32, j: u32) -> PatchRect {
        PatchRect {
            x: j * self.stride,
            y: i * self.stride,
            side: self.patch_side,
        }
    }

    /// All windows in row-major order.
    pub fn rects(&self) -> impl Iterator<Item = PatchRect> + '_ {
        (0..self.grid_side).flat_map(move |i| (0..self.grid_side).map(move |j| self.rect(i, j)))
    }

    pub fn len(&self) -> usize {
        (self.grid_side * self.grid_side) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rasterized union of boxes with a summed-area table for O(1) rectangle
/// counts.
pub struct BoxUnion {
    width: usize,
    height: usize,
    table: Vec<u64>,
}

impl BoxUnion {
    pub fn new(boxes: &[BBox]) -> Self {
        let width = boxes.iter().map(|b| b.right() as usize).max().unwrap_or(0);
        let height = boxes.iter().map(|b| b.bottom() as usize).max().unwrap_or(0);
        let mut mask = vec![0u8; width * height];
        for b in boxes {
            for y in b.y as usize..b.bottom() as usize {
                mask[y * width + b.x as usize..y * width + b.right() as usize].fill(1);
            }
        }
        let stride = width + 1;
        let mut table = vec![0u64; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0u64;
            for x in 0..width {
                row += mask[y * width + x] as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self { width, height, table }
    }

    pub fn area(&self) -> u64 {
        self.table[self.table.len() - 1]
    }

    /// Union pixels inside the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub fn count(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> u64 {
        let cl = |v: u32, lim: usize| (v as usize).min(lim);
        let (x0, x1) = (cl(x0, self.width), cl(x1, self.width));
        let (y0, y1) = (cl(y0, self.height), cl(y1, self.height));
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        let s = self.width + 1;
        let t = &self.table;
        t[y1 * s + x1] + t[y0 * s + x0] - t[y0 * s + x1] - t[y1 * s + x0]
    }

    pub fn fraction(&self, rect: &PatchRect) -> f64 {
        let total = self.area();
        if total == 0 {
            return 0.0;
        }
        self.count(rect.x, rect.y, rect.x + rect.side, rect.y + rect.side) as f64 / total as f64
    }
}

/// Share of the box union (all boxes of the image) that falls inside `rect`.
/// Zero when there are no boxes.
pub fn overlap_fraction(boxes: &[BBox], rect: &PatchRect) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    BoxUnion::new(boxes).fraction(rect)
}

/// Inclusive threshold: a fraction equal to the threshold is positive.
pub fn label_patch(fraction: f64, threshold: f64) -> u8 {
    u8::from(fraction >= threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PatchSampling {
    /// Top-left corners uniform over all valid positions.
    Uniform,
    /// With probability `box_prob`, draw among positions whose window
    /// intersects a box (positive images only).
    BoxBiased { box_prob: f64 },
}

impl Default for PatchSampling {
    fn default() -> Self {
        PatchSampling::Uniform
    }
}

/// Draws `count` random patches from a working-resolution sample and labels
/// each with the overlap rule.
pub fn sample_patches(
    sample: &ImageSample,
    count: usize,
    patch_side: u32,
    threshold: f64,
    sampling: PatchSampling,
    rng: &mut Rng,
) -> Result<Vec<(Tensor<f32>, u8)>> {
    let side = sample.side();
    if patch_side == 0 || patch_side > side {
        return Err(param_err!("patch side {patch_side} does not fit a {side}-pixel image"));
    }
    let span = side - patch_side;
    let union = (sample.label == 1).then(|| BoxUnion::new(&sample.boxes));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rect = match (sampling, sample.boxes.first()) {
            (PatchSampling::BoxBiased { box_prob }, Some(_)) if rng.gen_bool(box_prob.clamp(0.0, 1.0)) => {
                let b = sample.boxes[rng.gen_range(0..sample.boxes.len())];
                // corners whose window overlaps box `b`, clipped to the valid span
                let lo = |v: u32| v.saturating_sub(patch_side - 1).min(span);
                let hi = |v: u32, ext: u32| (v + ext - 1).min(span);
                PatchRect {
                    x: rng.gen_range(lo(b.x)..=hi(b.x, b.w)),
                    y: rng.gen_range(lo(b.y)..=hi(b.y, b.h)),
                    side: patch_side,
                }
            }
            _ => PatchRect {
                x: rng.gen_range(0..=span),
                y: rng.gen_range(0..=span),
                side: patch_side,
            },
        };
        let label = match &union {
            Some(u) => label_patch(u.fraction(&rect), threshold),
            None => 0,
        };
        out.push((sample.pixels.crop(rect.x as usize, rect.y as usize, patch_side as usize)?, label));
    }
    Ok(out)
}

/// Anything that maps a `1×S×S` patch to a probability.
pub trait PatchClassifier: Sync {
    fn input_side(&self) -> usize;
    fn patch_probability(&self, patch: &Tensor<f32>) -> Result<f32>;
}

/// Stage-1 predictions over the window grid. Row `i` is the window y offset,
/// column `j` the x offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub grid_side: u32,
    pub probs: Vec<f32>,
    pub bits: Vec<u8>,
    pub threshold: f32,
}

impl Heatmap {
    pub fn from_probs(grid_side: u32, probs: Vec<f32>, threshold: f32) -> Result<Self> {
        if probs.len() != (grid_side * grid_side) as usize {
            return Err(param_err!("{} probabilities for a {grid_side}×{grid_side} grid", probs.len()));
        }
        let bits = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
        Ok(Self { grid_side, probs, bits, threshold })
    }

    pub fn zeros(grid_side: u32) -> Self {
        Self::from_probs(grid_side, vec![0.0; (grid_side * grid_side) as usize], 0.5).expect("square grid")
    }

    pub fn bit(&self, i: u32, j: u32) -> u8 {
        self.bits[(i * self.grid_side + j) as usize]
    }

    pub fn lit(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// The bit grid as a `1×G×G` tensor, the stage-2 heatmap input.
    pub fn bits_tensor<T: crate::Scalar>(&self) -> Tensor<T> {
        let g = self.grid_side as usize;
        Tensor::new(vec![1, g, g], self.bits.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }).collect())
            .expect("square grid")
    }

    pub fn probs_text(&self) -> String {
        grid_text(self.grid_side, &self.probs, |p| format!("{p:.6}"))
    }

    pub fn bits_text(&self) -> String {
        grid_text(self.grid_side, &self.bits, |b| b.to_string())
    }
}

fn grid_text<V: Copy>(g: u32, values: &[V], fmt: impl Fn(V) -> String) -> String {
    let mut s = String::new();
    for row in values.chunks(g as usize) {
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

/// Slides the patch classifier over every window of the working image.
pub fn build_heatmap<M: PatchClassifier + ?Sized>(
    model: &M,
    image: &Tensor<f32>,
    grid: &WindowGrid,
    threshold: f32,
) -> Result<Heatmap> {
    if model.input_side() != grid.patch_side as usize {
        return Err(param_err!(
            "stage-1 input side {} differs from the window side {}",
            model.input_side(),
            grid.patch_side
        ));
    }
    let (_, h, w) = image.dims3()?;
    if h != w || h != grid.full_side as usize {
        return Err(param_err!("image is {h}×{w}, grid expects {}", grid.full_side));
    }
    let rects: Vec<PatchRect> = grid.rects().collect();
    let probs = rects
        .par_iter()
        .map(|r| model.patch_probability(&image.crop(r.x as usize, r.y as usize, r.side as usize)?))
        .collect::<Result<Vec<f32>>>()?;
    Heatmap::from_probs(grid.grid_side, probs, threshold)
}

/// Counts lit windows and, among them, the ones intersecting any box.
/// Returns `(hits, lit)`.
pub fn attention_hits(heatmap: &Heatmap, grid: &WindowGrid, boxes: &[BBox]) -> (usize, usize) {
    let (mut hits, mut lit) = (0, 0);
    for (bit, r) in heatmap.bits.iter().zip(grid.rects()) {
        if *bit == 1 {
            lit += 1;
            hits += usize::from(boxes.iter().any(|b| b.intersects_square(r.x, r.y, r.side)));
        }
    }
    (hits, lit)
}

/// File names for a sample's exported heatmap pair.
pub fn heatmap_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.heat.txt")), dir.join(format!("{id}.bits.txt")))
}

/// Writes `<id>.heat.txt` (probabilities, 6 decimals) and `<id>.bits.txt`.
pub fn write_heatmap(dir: &Path, id: &str, heatmap: &Heatmap) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (probs, bits) = heatmap_paths(dir, id);
    fs::write(&probs, heatmap.probs_text()).map_err(|e| Error::io(&probs, e))?;
    fs::write(&bits, heatmap.bits_text()).map_err(|e| Error::io(&bits, e))?;
    Ok((probs, bits))
}

fn parse_grid<V>(path: &Path, parse: impl Fn(&str) -> Option<V>) -> Result<(u32, Vec<V>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let g = rows.len();
    let mut values = Vec::with_capacity(g * g);
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split_whitespace().collect();
        if cells.len() != g {
            return Err(Error::Load(format!("{}: row {} has {} cells, expected {g}", path.display(), i + 1, cells.len())));
        }
        for c in cells {
            values.push(parse(c).ok_or_else(|| Error::Load(format!("{}: bad cell `{c}`", path.display())))?);
        }
    }
    if g == 0 {
        return Err(Error::Load(format!("{}: empty heatmap", path.display())));
    }
    Ok((g as u32, values))
}

/// Reads an exported heatmap. Bits come from the bit grid, which is
/// authoritative; probabilities carry the 6-decimal text precision.
pub fn read_heatmap(dir: &Path, id: &str, threshold: f32) -> Result<Heatmap> {
    let (probs_path, bits_path) = heatmap_paths(dir, id);
    let (g, probs) = parse_grid(&probs_path, |c| c.parse::<f32>().ok().filter(|p| (0.0..=1.0).contains(p)))?;
    let (gb, bits) = parse_grid(&bits_path, |c| match c {
        "0" => Some(0u8),
        "1" => Some(1u8),
        _ => None,
    })?;
    if g != gb {
        return Err(Error::Load(format!("heatmap {id}: probability grid {g} vs bit grid {gb}")));
    }
    Ok(Heatmap { grid_side: g, probs, bits, threshold })
}
