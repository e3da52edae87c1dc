//! Small affine jitter plus brightness scaling.
//!
//! Horizontal flips are deliberately absent: they would move the cardiac
//! silhouette to the wrong side and break the behind-the-heart geometry.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, ImageSample};
use crate::error::{param_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MAX_TRANSLATE: f64 = 0.05;
const MAX_ROTATE_DEG: f64 = 5.0;
const BRIGHTNESS_LIMITS: (f64, f64) = (0.9, 1.1);
const ATTEMPTS_PER_COPY: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Maximum shift per axis as a fraction of the side.
    pub max_translate: f64,
    pub max_rotate_deg: f64,
    pub brightness: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            max_translate: 0.05,
            max_rotate_deg: 5.0,
            brightness: (0.9, 1.1),
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            max_translate: 0.0,
            max_rotate_deg: 0.0,
            brightness: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_TRANSLATE).contains(&self.max_translate) {
            return Err(param_err!("translation limit {} outside [0, {MAX_TRANSLATE}]", self.max_translate));
        }
        if !(0.0..=MAX_ROTATE_DEG).contains(&self.max_rotate_deg) {
            return Err(param_err!("rotation limit {} outside [0, {MAX_ROTATE_DEG}] degrees", self.max_rotate_deg));
        }
        let (lo, hi) = self.brightness;
        if lo > hi || lo < BRIGHTNESS_LIMITS.0 || hi > BRIGHTNESS_LIMITS.1 {
            return Err(param_err!("brightness range [{lo}, {hi}] outside [0.9, 1.1]"));
        }
        Ok(())
    }

    pub fn draw(&self, side: u32, rng: &mut Rng) -> Jitter {
        let span = |rng: &mut Rng, lim: f64| if lim > 0.0 { rng.gen_range(-lim..=lim) } else { 0.0 };
        let t = self.max_translate * side as f64;
        Jitter {
            dx: span(rng, t),
            dy: span(rng, t),
            angle_deg: span(rng, self.max_rotate_deg),
            brightness: if self.brightness.0 < self.brightness.1 {
                rng.gen_range(self.brightness.0..=self.brightness.1)
            } else {
                self.brightness.0
            },
        }
    }
}

/// One concrete transform: rotate about the image center, then translate,
/// then scale intensities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub dx: f64,
    pub dy: f64,
    pub angle_deg: f64,
    pub brightness: f64,
}

impl Jitter {
    pub fn is_identity(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.angle_deg == 0.0 && self.brightness == 1.0
    }

    /// Maps a continuous image coordinate forward.
    fn forward(&self, x: f64, y: f64, c: f64) -> (f64, f64) {
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (u, v) = (x - c, y - c);
        (cos * u - sin * v + c + self.dx, sin * u + cos * v + c + self.dy)
    }

    fn inverse(&self, x: f64, y: f64, c: f64) -> (f64, f64) {
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let (u, v) = (x - c - self.dx, y - c - self.dy);
        (cos * u + sin * v + c, -sin * u + cos * v + c)
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn bilinear(src: &[f32], side: usize, x: f64, y: f64) -> f32 {
    let at = |ix: i64, iy: i64| -> f64 {
        if ix < 0 || iy < 0 || ix >= side as i64 || iy >= side as i64 {
            0.0
        } else {
            src[iy as usize * side + ix as usize] as f64
        }
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
    let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Applies `jitter` to pixels and boxes. Boxes become the axis-aligned hull of
/// their transformed corners, clamped to the frame. `suffix` is appended to
/// the id.
pub fn apply_jitter(sample: &ImageSample, jitter: &Jitter, suffix: &str) -> Result<ImageSample> {
    let side = sample.side();
    let n = side as usize;
    let c = side as f64 / 2.0;
    let pixels = if jitter.is_identity() {
        sample.pixels.clone()
    } else {
        let src = sample.pixels.data();
        let gain = jitter.brightness as f32;
        let mut out = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                // pixel centers sit at integer + 0.5
                let (sx, sy) = jitter.inverse(x as f64 + 0.5, y as f64 + 0.5, c);
                let v = bilinear(src, n, snap(sx - 0.5), snap(sy - 0.5));
                out.push((v * gain).clamp(0.0, 1.0));
            }
        }
        Tensor::new(vec![1, n, n], out)?
    };

    let mut boxes = Vec::with_capacity(sample.boxes.len());
    for b in &sample.boxes {
        let corners = [
            (b.x as f64, b.y as f64),
            (b.right() as f64, b.y as f64),
            (b.x as f64, b.bottom() as f64),
            (b.right() as f64, b.bottom() as f64),
        ]
        .map(|(x, y)| jitter.forward(x, y, c));
        let lim = side as f64;
        let x0 = snap(corners.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)).floor().clamp(0.0, lim);
        let y0 = snap(corners.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)).floor().clamp(0.0, lim);
        let x1 = snap(corners.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)).ceil().clamp(0.0, lim);
        let y1 = snap(corners.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)).ceil().clamp(0.0, lim);
        if let Ok(bb) = BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32) {
            boxes.push(bb);
        }
    }
    if sample.label == 1 && boxes.is_empty() {
        return Err(Error::AugmentRejected(format!(
            "sample {}: transform pushed every box out of frame",
            sample.id
        )));
    }
    Ok(ImageSample {
        id: format!("{}{suffix}", sample.id),
        pixels,
        label: sample.label,
        boxes,
        category: sample.category,
    })
}

/// Draws one jitter from `policy` and applies it. The copy index keeps ids
/// unique across repeated augmentation of the same source.
pub fn augment(sample: &ImageSample, rng: &mut Rng, policy: &AugmentPolicy, copy_index: usize) -> Result<ImageSample> {
    policy.validate()?;
    let jitter = policy.draw(sample.side(), rng);
    apply_jitter(sample, &jitter, &format!("~aug{copy_index}"))
}

/// Expands `samples` to exactly `target` items: the originals first, then
/// augmented copies drawn by cycling through a seeded permutation. Rejected
/// draws are retried a bounded number of times before moving to the next
/// source image.
pub fn augment_to_count(
    samples: &[ImageSample],
    target: usize,
    rng: &mut Rng,
    policy: &AugmentPolicy,
) -> Result<Vec<ImageSample>> {
    policy.validate()?;
    if target < samples.len() {
        return Err(param_err!("augmentation target {target} is below the {} source images", samples.len()));
    }
    let mut out = samples.to_vec();
    if target == samples.len() {
        return Ok(out);
    }
    if samples.is_empty() {
        return Err(param_err!("cannot augment an empty dataset to {target} images"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut cursor = 0usize;
    let mut consecutive_failures = 0usize;
    while out.len() < target {
        let src = &samples[order[cursor % order.len()]];
        cursor += 1;
        let copy = out.len() - samples.len();
        let mut made = None;
        for _ in 0..ATTEMPTS_PER_COPY {
            match augment(src, rng, policy, copy) {
                Ok(s) => {
                    made = Some(s);
                    break;
                }
                Err(Error::AugmentRejected(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        match made {
            Some(s) => {
                consecutive_failures = 0;
                out.push(s);
            }
            None => {
                consecutive_failures += 1;
                if consecutive_failures > samples.len() {
                    return Err(Error::AugmentRejected("every source image rejects augmentation".into()));
                }
            }
        }
    }
    Ok(out)
}
