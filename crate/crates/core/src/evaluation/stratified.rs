use serde::{Deserialize, Serialize};

use crate::data::BBox;
use crate::error::{param_err, Result};
use crate::evaluation::regions::{RegionDetail, RegionRule};

/// One evaluated image: truth, boxes (at `side` resolution) and the binary call.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub label: u8,
    pub boxes: Vec<BBox>,
    pub side: u32,
    pub prediction: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub group: String,
    pub n: usize,
    pub correct: usize,
    /// `None` for an empty group.
    pub accuracy: Option<f64>,
}

impl AccuracyRow {
    fn new(group: &str, n: usize, correct: usize) -> Self {
        Self {
            group: group.to_string(),
            n,
            correct,
            accuracy: (n > 0).then(|| correct as f64 / n as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifiedTable {
    pub rule: RegionRule,
    pub rows: Vec<AccuracyRow>,
}

impl StratifiedTable {
    pub fn row(&self, group: &str) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

/// Accuracy over positives grouped by where their opacities lie, plus rows
/// for all positives and all samples. Rows: `apex`, `behind_heart`,
/// `review_area` (the union of the two), `other`, `all_positives`,
/// `all_samples`.
pub fn stratified_accuracy(samples: &[ScoredSample], rule: &RegionRule) -> Result<StratifiedTable> {
    rule.validate()?;
    let mut counts = [(0usize, 0usize); 3];
    let (mut pos_n, mut pos_ok, mut all_ok) = (0usize, 0usize, 0usize);
    for s in samples {
        let ok = s.prediction == s.label;
        all_ok += usize::from(ok);
        if s.label != 1 {
            continue;
        }
        if s.boxes.is_empty() {
            return Err(param_err!("positive sample without boxes cannot be stratified"));
        }
        let slot = match rule.detail_of(&s.boxes, s.side)? {
            RegionDetail::Apex => 0,
            RegionDetail::BehindHeart => 1,
            RegionDetail::Other => 2,
        };
        counts[slot].0 += 1;
        counts[slot].1 += usize::from(ok);
        pos_n += 1;
        pos_ok += usize::from(ok);
    }
    let rows = vec![
        AccuracyRow::new("apex", counts[0].0, counts[0].1),
        AccuracyRow::new("behind_heart", counts[1].0, counts[1].1),
        AccuracyRow::new("review_area", counts[0].0 + counts[1].0, counts[0].1 + counts[1].1),
        AccuracyRow::new("other", counts[2].0, counts[2].1),
        AccuracyRow::new("all_positives", pos_n, pos_ok),
        AccuracyRow::new("all_samples", samples.len(), all_ok),
    ];
    Ok(StratifiedTable { rule: rule.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(cx: u32, cy: u32, label: u8, prediction: u8) -> ScoredSample {
        ScoredSample {
            label,
            boxes: if label == 1 { vec![BBox::new(cx - 2, cy - 2, 4, 4).unwrap()] } else { vec![] },
            side: 100,
            prediction,
        }
    }

    #[test]
    fn all_correct_gives_ones() {
        let s = vec![at(30, 10, 1, 1), at(70, 80, 1, 1), at(30, 50, 1, 1), at(0, 0, 0, 0)];
        let t = stratified_accuracy(&s, &RegionRule::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.accuracy == Some(1.0)));
    }

    #[test]
    fn injected_apex_errors() {
        // 50 apex positives, 10 predictions flipped
        let mut s: Vec<_> = (0..50).map(|i| at(30, 10, 1, u8::from(i >= 10))).collect();
        s.extend((0..30).map(|_| at(30, 50, 1, 1)));
        let t = stratified_accuracy(&s, &RegionRule::default()).unwrap();
        assert_eq!(t.row("apex").unwrap().accuracy, Some(0.8));
        assert_eq!(t.row("other").unwrap().accuracy, Some(1.0));
        assert_eq!(t.row("behind_heart").unwrap().accuracy, None);
        assert_eq!(t.row("all_positives").unwrap().n, 80);
    }

    #[test]
    fn regions_partition_positives() {
        let s: Vec<_> = (0..60).map(|i| at(10 + i, 5 + i, 1, 1)).collect();
        let t = stratified_accuracy(&s, &RegionRule::default()).unwrap();
        let review = t.row("review_area").unwrap().n;
        let other = t.row("other").unwrap().n;
        assert_eq!(review + other, 60);
        assert_eq!(t.row("apex").unwrap().n + t.row("behind_heart").unwrap().n, review);
    }

    #[test]
    fn positive_without_boxes_is_rejected() {
        let s = vec![ScoredSample { label: 1, boxes: vec![], side: 10, prediction: 1 }];
        assert!(stratified_accuracy(&s, &RegionRule::default()).is_err());
    }
}
