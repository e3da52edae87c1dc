//! Synthetic frontal radiographs with soft elliptical opacities.
//!
//! Each image has two dark lung fields over a brighter body, a cardiac
//! silhouette on the image right, faint rib bands and Gaussian texture.
//! Positive images get one to three opacity blobs whose bounding boxes are
//! recorded exactly. A configurable share of positives has its blobs placed
//! in review areas (apex band or behind the heart) as judged by the same
//! [`RegionRule`] the evaluation uses.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::io::quantize_8bit;
use crate::data::{BBox, Category, ImageSample};
use crate::error::{param_err, Result};
use crate::evaluation::{region_of, Region, RegionDetail, RegionRule};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub side: u32,
    pub positive_fraction: f64,
    /// Share of positives whose opacities sit in review areas.
    pub review_fraction: f64,
    /// Peak added intensity of an opacity.
    pub blob_intensity: (f64, f64),
    /// Blob semi-axes as a fraction of the side.
    pub blob_radius: (f64, f64),
    pub max_blobs: u32,
    /// Standard deviation of the additive texture noise.
    pub texture: f64,
    /// Share of negatives tagged `other_disease`, drawn with a linear streak.
    pub other_disease_fraction: f64,
    pub region_rule: RegionRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            side: 64,
            positive_fraction: 0.4,
            review_fraction: 0.3,
            blob_intensity: (0.30, 0.45),
            blob_radius: (0.08, 0.14),
            max_blobs: 3,
            texture: 0.03,
            other_disease_fraction: 0.3,
            region_rule: RegionRule::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(param_err!("{name} must lie in [0, 1], got {v}"))
            }
        };
        unit("positive_fraction", self.positive_fraction)?;
        unit("review_fraction", self.review_fraction)?;
        unit("other_disease_fraction", self.other_disease_fraction)?;
        if self.side < 16 {
            return Err(param_err!("synthetic images need side ≥ 16, got {}", self.side));
        }
        let (rlo, rhi) = self.blob_radius;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(param_err!("blob radius range ({rlo}, {rhi}) is empty"));
        }
        if rhi >= 0.5 {
            return Err(param_err!("blob radius {rhi} of the side makes blobs larger than the image"));
        }
        if rlo * (self.side as f64) < 1.0 {
            return Err(param_err!("blob radius {rlo} is below one pixel at side {}", self.side));
        }
        let (ilo, ihi) = self.blob_intensity;
        if !(ilo > 0.0 && ilo <= ihi && ihi <= 1.0) {
            return Err(param_err!("blob intensity range ({ilo}, {ihi}) must lie in (0, 1]"));
        }
        if !(1..=3).contains(&self.max_blobs) {
            return Err(param_err!("max_blobs must be 1..=3, got {}", self.max_blobs));
        }
        if !(self.texture >= 0.0 && self.texture < 0.5) {
            return Err(param_err!("texture level {} outside [0, 0.5)", self.texture));
        }
        self.region_rule.validate()
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    /// Squared normalized distance; `< 1` inside.
    fn d2(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.cx) / self.rx;
        let v = (y - self.cy) / self.ry;
        u * u + v * v
    }

    /// Smooth bump: `(1 − d²)²` inside, zero outside.
    fn bump(&self, x: f64, y: f64) -> f64 {
        let d2 = self.d2(x, y);
        if d2 < 1.0 {
            (1.0 - d2) * (1.0 - d2)
        } else {
            0.0
        }
    }

    /// Soft-edged indicator used for anatomy.
    fn soft(&self, x: f64, y: f64) -> f64 {
        let d = self.d2(x, y).sqrt();
        (1.0 - ((d - 0.92) / 0.08).clamp(0.0, 1.0)).clamp(0.0, 1.0)
    }

    /// Pixel-grid bounding box of the bump's support.
    fn bbox(&self, side: u32) -> Option<BBox> {
        let lim = side as f64;
        let x0 = (self.cx - self.rx).floor().clamp(0.0, lim);
        let y0 = (self.cy - self.ry).floor().clamp(0.0, lim);
        let x1 = (self.cx + self.rx).ceil().clamp(0.0, lim);
        let y1 = (self.cy + self.ry).ceil().clamp(0.0, lim);
        BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).ok()
    }
}

fn anatomy(side: f64, rng: &mut Rng) -> (Vec<Ellipse>, Ellipse, f64) {
    let j = |rng: &mut Rng| rng.gen_range(-0.02..0.02);
    let lungs = vec![
        Ellipse { cx: (0.30 + j(rng)) * side, cy: (0.47 + j(rng)) * side, rx: 0.17 * side, ry: 0.34 * side },
        Ellipse { cx: (0.70 + j(rng)) * side, cy: (0.47 + j(rng)) * side, rx: 0.17 * side, ry: 0.34 * side },
    ];
    let heart = Ellipse {
        cx: (0.63 + j(rng)) * side,
        cy: (0.72 + j(rng)) * side,
        rx: (0.17 + j(rng)) * side,
        ry: (0.13 + j(rng)) * side,
    };
    let rib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    (lungs, heart, rib_phase)
}

/// Draws a blob center (normalized) for the requested region.
fn blob_center(detail: RegionDetail, rule: &RegionRule, rng: &mut Rng) -> (f64, f64) {
    match detail {
        RegionDetail::Apex => {
            let y = rng.gen_range(rule.apex_band.0.max(0.06)..rule.apex_band.1.min(0.19));
            let x = if rng.gen_bool(0.5) { rng.gen_range(0.18..0.42) } else { rng.gen_range(0.58..0.82) };
            (x, y)
        }
        RegionDetail::BehindHeart => {
            let (xl, xh) = rule.heart_x;
            let (yl, yh) = rule.heart_y;
            (rng.gen_range(xl + 0.03..xh - 0.05), rng.gen_range(yl + 0.03..yh - 0.08))
        }
        RegionDetail::Other => {
            if rng.gen_bool(0.5) {
                (rng.gen_range(0.16..0.44), rng.gen_range(0.26..0.78))
            } else {
                (rng.gen_range(0.58..0.84), rng.gen_range(0.26..0.50))
            }
        }
    }
}

fn render(
    cfg: &SynthConfig,
    rng: &mut Rng,
    blobs: &[(Ellipse, f64)],
    streak: Option<(f64, f64, f64)>,
) -> Tensor<f32> {
    let side = cfg.side as f64;
    let n = cfg.side as usize;
    let (lungs, heart, rib_phase) = anatomy(side, rng);
    let noise = Normal::new(0.0, cfg.texture.max(1e-12)).expect("valid sigma");
    let body = rng.gen_range(0.42..0.50);
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let lung = lungs.iter().map(|l| l.soft(px, py)).fold(0.0, f64::max);
            let mut v = body - 0.27 * lung;
            let rib = ((py / side) * 7.0 * std::f64::consts::TAU + rib_phase).sin().max(0.0).powi(6);
            v += 0.07 * rib * lung;
            v += 0.28 * heart.soft(px, py);
            for (b, amp) in blobs {
                v += amp * b.bump(px, py);
            }
            if let Some((y0, slope, amp)) = streak {
                let d = (py - (y0 + slope * (px - side / 2.0))).abs();
                v += amp * (1.0 - d / 1.2).max(0.0) * lung;
            }
            if cfg.texture > 0.0 {
                v += noise.sample(rng);
            }
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let mut t = Tensor::new(vec![1, n, n], data).expect("square image");
    quantize_8bit(&mut t);
    t
}

fn positive_blobs(cfg: &SynthConfig, review: bool, rng: &mut Rng) -> (Vec<(Ellipse, f64)>, Vec<BBox>) {
    let side = cfg.side as f64;
    let rule = &cfg.region_rule;
    let count = rng.gen_range(1..=cfg.max_blobs);
    loop {
        let mut blobs = Vec::new();
        let mut boxes = Vec::new();
        for _ in 0..count {
            let detail = if review {
                if rng.gen_bool(0.5) {
                    RegionDetail::Apex
                } else {
                    RegionDetail::BehindHeart
                }
            } else {
                RegionDetail::Other
            };
            let (ux, uy) = blob_center(detail, rule, rng);
            let mut r = || rng.gen_range(cfg.blob_radius.0..=cfg.blob_radius.1) * side;
            let e = Ellipse { cx: ux * side, cy: uy * side, rx: r(), ry: r() };
            let amp = rng.gen_range(cfg.blob_intensity.0..=cfg.blob_intensity.1);
            if let Some(b) = e.bbox(cfg.side) {
                boxes.push(b);
                blobs.push((e, amp));
            }
        }
        // every box center must agree with the intended region
        let consistent = !boxes.is_empty()
            && boxes.iter().all(|b| {
                let got = region_of(std::slice::from_ref(b), cfg.side, rule).ok();
                got == Some(if review { Region::ReviewArea } else { Region::Other })
            });
        if consistent {
            return (blobs, boxes);
        }
    }
}

/// Generates `config.count` samples. Exactly `round(count · positive_fraction)`
/// images are positive and `round(positives · review_fraction)` of those have
/// review-area opacities; the assignment order is shuffled.
pub fn synth_generate(config: &SynthConfig, rng: &mut Rng) -> Result<Vec<ImageSample>> {
    config.validate()?;
    let n = config.count;
    let n_pos = (n as f64 * config.positive_fraction).round() as usize;
    let n_review = (n_pos as f64 * config.review_fraction).round() as usize;
    let n_neg = n - n_pos;
    let n_other = (n_neg as f64 * config.other_disease_fraction).round() as usize;

    #[derive(Clone, Copy)]
    enum Kind {
        Review,
        Plain,
        Normal,
        OtherDisease,
    }
    let mut kinds: Vec<Kind> = std::iter::repeat(Kind::Review)
        .take(n_review)
        .chain(std::iter::repeat(Kind::Plain).take(n_pos - n_review))
        .chain(std::iter::repeat(Kind::OtherDisease).take(n_other))
        .chain(std::iter::repeat(Kind::Normal).take(n_neg - n_other))
        .collect();
    kinds.shuffle(rng);

    let width = n.max(1).to_string().len();
    let side = config.side as f64;
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let (blobs, boxes, streak, category) = match kind {
                Kind::Review | Kind::Plain => {
                    let (b, bx) = positive_blobs(config, matches!(kind, Kind::Review), rng);
                    (b, bx, None, Category::Pneumonia)
                }
                Kind::OtherDisease => {
                    let streak = (rng.gen_range(0.3..0.7) * side, rng.gen_range(-0.3..0.3), rng.gen_range(0.15..0.25));
                    (Vec::new(), Vec::new(), Some(streak), Category::OtherDisease)
                }
                Kind::Normal => (Vec::new(), Vec::new(), None, Category::Normal),
            };
            let pixels = render(config, rng, &blobs, streak);
            let sample = ImageSample {
                id: format!("syn{i:0width$}"),
                pixels,
                label: u8::from(!boxes.is_empty()),
                boxes,
                category: Some(category),
            };
            sample.validate()?;
            Ok(sample)
        })
        .collect()
}
