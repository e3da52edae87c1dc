//! Review-area geometry: the lung apex band and the zone behind the heart.

use serde::{Deserialize, Serialize};

use crate::data::BBox;
use crate::error::{param_err, Result};

/// Normalized region definitions. Coordinates are fractions of the image side,
/// with y growing downward and the heart displayed on the image right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionRule {
    pub apex_band: (f64, f64),
    pub heart_x: (f64, f64),
    pub heart_y: (f64, f64),
}

impl Default for RegionRule {
    fn default() -> Self {
        Self {
            apex_band: (0.0, 0.20),
            heart_x: (0.55, 0.90),
            heart_y: (0.55, 0.95),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    ReviewArea,
    Other,
}

/// Finer split of [`Region::ReviewArea`] used by the stratified report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionDetail {
    Apex,
    BehindHeart,
    Other,
}

fn inside(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

impl RegionRule {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("apex_band", self.apex_band),
            ("heart_x", self.heart_x),
            ("heart_y", self.heart_y),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(param_err!("region interval {name} = [{lo}, {hi}] must lie within [0, 1]"));
            }
        }
        Ok(())
    }

    /// Classifies one normalized point.
    pub fn classify_point(&self, x: f64, y: f64) -> RegionDetail {
        if inside(y, self.apex_band) {
            RegionDetail::Apex
        } else if inside(x, self.heart_x) && inside(y, self.heart_y) {
            RegionDetail::BehindHeart
        } else {
            RegionDetail::Other
        }
    }

    /// Apex wins over behind-heart when boxes land in both.
    pub fn detail_of(&self, boxes: &[BBox], side: u32) -> Result<RegionDetail> {
        if boxes.is_empty() {
            return Err(param_err!("regions apply only to samples with boxes"));
        }
        let mut best = RegionDetail::Other;
        for b in boxes {
            let (cx, cy) = b.center_normalized(side);
            best = best.min(self.classify_point(cx, cy));
        }
        Ok(best)
    }

    pub fn describe(&self) -> String {
        format!(
            "apex_band=[{:.2},{:.2}] heart_zone=[{:.2},{:.2}]x[{:.2},{:.2}]",
            self.apex_band.0, self.apex_band.1, self.heart_x.0, self.heart_x.1, self.heart_y.0, self.heart_y.1
        )
    }
}

/// `ReviewArea` iff any box center falls in the apex band or the heart zone.
pub fn region_of(boxes: &[BBox], side: u32, rule: &RegionRule) -> Result<Region> {
    Ok(match rule.detail_of(boxes, side)? {
        RegionDetail::Other => Region::Other,
        _ => Region::ReviewArea,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(cx: f64, cy: f64) -> BBox {
        // 10×10 box on a 100-pixel image, centered at (cx, cy)
        BBox::new((cx * 100.0) as u32 - 5, (cy * 100.0) as u32 - 5, 10, 10).unwrap()
    }

    #[test]
    fn rule_examples() {
        let rule = RegionRule::default();
        assert_eq!(region_of(&[centered(0.3, 0.1)], 100, &rule).unwrap(), Region::ReviewArea);
        assert_eq!(region_of(&[centered(0.7, 0.8)], 100, &rule).unwrap(), Region::ReviewArea);
        assert_eq!(region_of(&[centered(0.3, 0.5)], 100, &rule).unwrap(), Region::Other);
        assert!(region_of(&[], 100, &rule).is_err());
    }

    #[test]
    fn any_box_in_review_area_suffices() {
        let rule = RegionRule::default();
        let boxes = [centered(0.3, 0.5), centered(0.7, 0.8)];
        assert_eq!(rule.detail_of(&boxes, 100).unwrap(), RegionDetail::BehindHeart);
        let boxes = [centered(0.7, 0.8), centered(0.4, 0.1)];
        assert_eq!(rule.detail_of(&boxes, 100).unwrap(), RegionDetail::Apex);
    }

    #[test]
    fn defaults_are_valid_and_disjoint() {
        let rule = RegionRule::default();
        rule.validate().unwrap();
        assert!(rule.apex_band.1 < rule.heart_y.0);
        assert!(RegionRule { apex_band: (0.5, 0.2), ..rule }.validate().is_err());
    }
}
