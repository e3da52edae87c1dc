//! Samples, manifests, resizing, augmentation, splitting and the synthetic
//! radiograph generator.

mod augment;
mod io;
mod manifest;
mod resize;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, augment_to_count, apply_jitter, AugmentPolicy, Jitter};
pub use io::{read_gray_image, write_gray_image};
pub use manifest::{load_manifest, load_samples, write_dataset, write_manifest, DatasetManifest, ManifestRecord, MANIFEST_VERSION};
pub use resize::{resize_area, resize_sample, scale_boxes};
pub use split::{split, split_items};
pub use synth::{synth_generate, SynthConfig};

/// Axis-aligned box in pixel coordinates; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(param_err!("box extents must be positive, got {w}×{h}"));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits(&self, side: u32) -> bool {
        self.right() <= side && self.bottom() <= side
    }

    pub fn center_normalized(&self, side: u32) -> (f64, f64) {
        let side = side as f64;
        (
            (self.x as f64 + self.w as f64 / 2.0) / side,
            (self.y as f64 + self.h as f64 / 2.0) / side,
        )
    }

    /// Does the box share at least one pixel with the square at `(x, y)`?
    pub fn intersects_square(&self, x: u32, y: u32, side: u32) -> bool {
        self.x < x + side && x < self.right() && self.y < y + side && y < self.bottom()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for BBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, w, h] = parts[..] else {
            return Err(param_err!("box `{s}` must be x,y,w,h"));
        };
        let num = |v: &str| v.parse::<u32>().map_err(|_| param_err!("box `{s}` has a non-integer field `{v}`"));
        BBox::new(num(x)?, num(y)?, num(w)?, num(h)?)
    }
}

/// Diagnostic category of an image, used for reader-set composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Pneumonia,
    OtherDisease,
    Normal,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Pneumonia, Category::OtherDisease, Category::Normal];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Pneumonia => "pneumonia",
            Category::OtherDisease => "other_disease",
            Category::Normal => "normal",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pneumonia" => Ok(Category::Pneumonia),
            "other_disease" => Ok(Category::OtherDisease),
            "normal" => Ok(Category::Normal),
            _ => Err(param_err!("unknown category `{s}`")),
        }
    }
}

/// A grayscale radiograph with its label and opacity boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `1×H×W`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub label: u8,
    pub boxes: Vec<BBox>,
    pub category: Option<Category>,
}

impl ImageSample {
    pub fn side(&self) -> u32 {
        self.pixels.shape()[2] as u32
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.pixels.dims3()?;
        if c != 1 || h != w {
            return Err(param_err!("sample {}: expected a square 1×S×S image, got {c}×{h}×{w}", self.id));
        }
        if self.label > 1 {
            return Err(param_err!("sample {}: label must be 0 or 1, got {}", self.id, self.label));
        }
        if (self.label == 1) != !self.boxes.is_empty() {
            return Err(param_err!(
                "sample {}: label {} with {} boxes violates label ⇔ non-empty boxes",
                self.id,
                self.label,
                self.boxes.len()
            ));
        }
        if let Some(b) = self.boxes.iter().find(|b| !b.fits(w as u32)) {
            return Err(param_err!("sample {}: box {b} exceeds the {w}-pixel image", self.id));
        }
        Ok(())
    }
}
