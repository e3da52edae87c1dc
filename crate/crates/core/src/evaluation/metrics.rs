use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn record(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Thresholded counts; a score equal to the threshold is a positive call.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if scores.len() != labels.len() {
        return Err(param_err!("{} scores but {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(param_err!("confusion needs at least one sample"));
    }
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        if y > 1 {
            return Err(param_err!("label {y} is not binary"));
        }
        c.record(s >= threshold, y == 1);
    }
    Ok(c)
}

/// Precision, recall and F1; `None` marks an undefined value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn prf1(c: &ConfusionCounts) -> Prf1 {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_from(p, r),
        _ => None,
    };
    Prf1 { precision, recall, f1 }
}

/// F1 from precision and recall values directly; undefined when both are 0.
pub fn f1_from(precision: f64, recall: f64) -> Option<f64> {
    let sum = precision + recall;
    (sum > 0.0).then(|| 2.0 * precision * recall / sum)
}

/// Area under the ROC curve as the Mann-Whitney statistic: average ranks
/// (ties share the mean rank) summed over positives.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(param_err!("{} scores but {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(param_err!("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.iter().filter(|&&y| y == 0).count();
    if pos + neg != labels.len() {
        return Err(param_err!("labels must be 0 or 1"));
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!("AUROC needs both classes, got {pos} positive and {neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group [i, j] shares the mean rank
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mean_rank * group_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        hits += 1.0;
                    } else if si == sj {
                        hits += 0.5;
                    }
                }
            }
        }
        hits / pairs
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&[0.5; 4], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 2, 0, 0));
        assert!(confusion(&[0.5], &[1, 0], 0.5).is_err());
        assert!(confusion(&[], &[], 0.5).is_err());
    }

    #[test]
    fn confusion_loop_oracle() {
        let mut rng = seeded(8);
        let scores: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2)).collect();
        let c = confusion(&scores, &labels, 0.5).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for i in 0..50 {
            match (scores[i] >= 0.5, labels[i]) {
                (true, 1) => tp += 1,
                (true, _) => fp += 1,
                (false, 0) => tn += 1,
                _ => fn_ += 1,
            }
        }
        assert_eq!(c, ConfusionCounts { tp, fp, tn, fn_ });
    }

    #[test]
    fn prf1_examples() {
        // 84 true positives, 16 false positives, 21 false negatives
        let c = ConfusionCounts { tp: 84, fp: 16, tn: 500, fn_: 21 };
        let m = prf1(&c);
        assert!((m.precision.unwrap() - 0.84).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.80).abs() < 1e-12);
        assert!((m.f1.unwrap() - 0.8195).abs() < 1e-4);
        assert_eq!(format!("{:.2}", m.f1.unwrap()), "0.82");

        let m = prf1(&ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 2 });
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);

        // every call wrong: p = r = 0 leaves 2pr/(p+r) at 0/0
        let m = prf1(&ConfusionCounts { tp: 0, fp: 4, tn: 0, fn_: 3 });
        assert_eq!((m.precision, m.recall, m.f1), (Some(0.0), Some(0.0), None));

        let m = prf1(&ConfusionCounts { tp: 5, fp: 0, tn: 1, fn_: 5 });
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(0.5));
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::Undefined(_))));
    }

    proptest! {
        #[test]
        fn rank_sum_matches_pairs(seed in any::<u64>(), n in 2usize..200, levels in 1u32..20) {
            let mut rng = seeded(seed);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
            let a = auroc(&scores, &labels).unwrap();
            prop_assert!((a - auroc_pairs(&scores, &labels)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert!((auroc(&warped, &labels).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn counts_sum_and_f1_bounds(seed in any::<u64>(), n in 1usize..300) {
            let mut rng = seeded(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let c = confusion(&scores, &labels, 0.5).unwrap();
            prop_assert_eq!(c.total(), n as u64);
            let m = prf1(&c);
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                prop_assert!(f <= (p + r) / 2.0 + 1e-12);
                prop_assert!(f <= 2.0 * p.min(r) + 1e-12);
                prop_assert!(f >= 0.0);
            }
        }
    }
}
