//! Plain-text and `key=value` renderings of evaluation results.
//!
//! Text output rounds to two decimals. The key/value form keeps full
//! precision and writes `n/a` for undefined values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::BBox;
use crate::error::Result;
use crate::evaluation::readers::{Correct, ReaderReport};
use crate::evaluation::{auroc, confusion, prf1, stratified_accuracy, ConfusionCounts, Prf1, RegionRule, ScoredSample, StratifiedTable};

/// Share of lit heatmap windows on true-positive images that intersect a
/// ground-truth box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionCheck {
    pub images: usize,
    pub lit: usize,
    pub hits: usize,
}

impl AttentionCheck {
    pub fn add(&mut self, hits: usize, lit: usize) {
        self.images += 1;
        self.hits += hits;
        self.lit += lit;
    }

    pub fn fraction(&self) -> Option<f64> {
        (self.lit > 0).then(|| self.hits as f64 / self.lit as f64)
    }
}

/// One scored test image.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub score: f64,
    pub label: u8,
    pub boxes: Vec<BBox>,
    pub side: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: Prf1,
    pub auroc: Option<f64>,
    pub attention: Option<AttentionCheck>,
    pub regions: StratifiedTable,
}

impl EvalReport {
    pub fn build(items: &[EvalItem], threshold: f64, rule: &RegionRule, attention: Option<AttentionCheck>) -> Result<Self> {
        let scores: Vec<f64> = items.iter().map(|i| i.score).collect();
        let labels: Vec<u8> = items.iter().map(|i| i.label).collect();
        let counts = confusion(&scores, &labels, threshold)?;
        let scored: Vec<ScoredSample> = items
            .iter()
            .map(|i| ScoredSample {
                label: i.label,
                boxes: i.boxes.clone(),
                side: i.side,
                prediction: u8::from(i.score >= threshold),
            })
            .collect();
        Ok(Self {
            n: items.len(),
            threshold,
            counts,
            metrics: prf1(&counts),
            auroc: auroc(&scores, &labels).ok(),
            attention,
            regions: stratified_accuracy(&scored, rule)?,
        })
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut s = String::from("evaluation report\n");
        let _ = writeln!(s, "samples     {}", self.n);
        let _ = writeln!(s, "threshold   {:.2}", self.threshold);
        let _ = writeln!(s, "tp fp tn fn {} {} {} {}", c.tp, c.fp, c.tn, c.fn_);
        let _ = writeln!(s, "accuracy    {}", d2(c.accuracy()));
        let _ = writeln!(s, "precision   {}", d2(self.metrics.precision));
        let _ = writeln!(s, "recall      {}", d2(self.metrics.recall));
        let _ = writeln!(s, "f1          {}", d2(self.metrics.f1));
        let _ = writeln!(s, "auroc       {}", d2(self.auroc));
        if let Some(a) = &self.attention {
            let _ = writeln!(
                s,
                "attention   {} ({} of {} lit windows on {} true positives touch a box)",
                d2(a.fraction()),
                a.hits,
                a.lit,
                a.images
            );
        }
        s.push('\n');
        s.push_str(&regions_text(&self.regions));
        s
    }

    pub fn to_kv(&self) -> String {
        let c = &self.counts;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("samples", self.n.to_string());
        kv("threshold", self.threshold.to_string());
        kv("tp", c.tp.to_string());
        kv("fp", c.fp.to_string());
        kv("tn", c.tn.to_string());
        kv("fn", c.fn_.to_string());
        kv("accuracy", full(c.accuracy()));
        kv("precision", full(self.metrics.precision));
        kv("recall", full(self.metrics.recall));
        kv("f1", full(self.metrics.f1));
        kv("auroc", full(self.auroc));
        if let Some(a) = &self.attention {
            kv("attention_images", a.images.to_string());
            kv("attention_lit", a.lit.to_string());
            kv("attention_hits", a.hits.to_string());
            kv("attention_hit_fraction", full(a.fraction()));
        }
        s.push_str(&regions_kv(&self.regions));
        s
    }
}

fn d2(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.2}"))
}

fn full(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| x.to_string())
}

pub fn regions_text(t: &StratifiedTable) -> String {
    let mut s = format!("region rule {}\n", t.rule.describe());
    let _ = writeln!(s, "{:<14} {:>6} {:>8} {:>9}", "group", "n", "correct", "accuracy");
    for r in &t.rows {
        let _ = writeln!(s, "{:<14} {:>6} {:>8} {:>9}", r.group, r.n, r.correct, d2(r.accuracy));
    }
    s
}

pub fn regions_kv(t: &StratifiedTable) -> String {
    let r = &t.rule;
    let mut s = format!(
        "region_rule.apex_band={},{}\nregion_rule.heart_x={},{}\nregion_rule.heart_y={},{}\n",
        r.apex_band.0, r.apex_band.1, r.heart_x.0, r.heart_x.1, r.heart_y.0, r.heart_y.1
    );
    for row in &t.rows {
        let _ = writeln!(s, "region.{}.n={}", row.group, row.n);
        let _ = writeln!(s, "region.{}.correct={}", row.group, row.correct);
        let _ = writeln!(s, "region.{}.accuracy={}", row.group, full(row.accuracy));
    }
    s
}

fn correct_name(c: Correct) -> &'static str {
    match c {
        Correct::HumanOnly => "human_only",
        Correct::ModelOnly => "model_only",
    }
}

impl ReaderReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("reader comparison\n");
        let _ = writeln!(s, "images      {}", self.n);
        let _ = writeln!(s, "human       {:.2}", self.human_acc);
        let _ = writeln!(s, "model       {:.2}", self.model_acc);
        let _ = writeln!(s, "either      {:.2}", self.union_acc);
        s.push('\n');
        let _ = writeln!(s, "{:<14} {:>4} {:>6} {:>6} {:>7}", "category", "n", "human", "model", "either");
        for r in &self.per_category {
            let _ = writeln!(
                s,
                "{:<14} {:>4} {:>6} {:>6} {:>7}",
                r.category.as_str(),
                r.n,
                r.human_correct,
                r.model_correct,
                r.union_correct
            );
        }
        s.push('\n');
        let _ = writeln!(s, "exactly one reader correct:");
        for (id, who) in &self.disagreements {
            let _ = writeln!(s, "  {id} {}", correct_name(*who));
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images={}", self.n);
        let _ = writeln!(s, "human_accuracy={}", self.human_acc);
        let _ = writeln!(s, "model_accuracy={}", self.model_acc);
        let _ = writeln!(s, "union_accuracy={}", self.union_acc);
        for r in &self.per_category {
            let k = r.category.as_str();
            let _ = writeln!(s, "category.{k}.n={}", r.n);
            let _ = writeln!(s, "category.{k}.human_correct={}", r.human_correct);
            let _ = writeln!(s, "category.{k}.model_correct={}", r.model_correct);
            let _ = writeln!(s, "category.{k}.union_correct={}", r.union_correct);
        }
        let ids: Vec<&str> = self.disagreements.iter().map(|(id, _)| id.as_str()).collect();
        let _ = writeln!(s, "disagreements={}", ids.join(","));
        for (id, who) in &self.disagreements {
            let _ = writeln!(s, "disagreement.{id}={}", correct_name(*who));
        }
        s
    }
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{parse_reader_text, reader_compare, READER_FIXTURE};

    fn item(score: f64, label: u8, cy: u32) -> EvalItem {
        EvalItem {
            score,
            label,
            boxes: if label == 1 { vec![BBox::new(20, cy, 6, 6).unwrap()] } else { vec![] },
            side: 64,
        }
    }

    #[test]
    fn eval_report_forms_agree() {
        let items = vec![item(0.9, 1, 2), item(0.7, 1, 30), item(0.4, 1, 30), item(0.2, 0, 0), item(0.6, 0, 0)];
        let att = AttentionCheck { images: 2, lit: 10, hits: 9 };
        let r = EvalReport::build(&items, 0.5, &RegionRule::default(), Some(att)).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn_), (2, 1, 1, 1));
        let kv: std::collections::BTreeMap<_, _> = parse_kv(&r.to_kv()).into_iter().collect();
        assert_eq!(kv["f1"], (2.0f64 / 3.0).to_string());
        assert_eq!(kv["attention_hit_fraction"], "0.9");
        assert_eq!(kv["region.apex.n"], "1");
        assert_eq!(kv["region.behind_heart.accuracy"], "n/a");
        assert_eq!(kv["region_rule.apex_band"], "0,0.2");
        let text = r.to_text();
        assert!(text.contains("f1          0.67"), "{text}");
        assert!(text.contains("apex_band=[0.00,0.20]"));
    }

    #[test]
    fn reader_report_lists_disagreements() {
        let r = reader_compare(&parse_reader_text(READER_FIXTURE).unwrap()).unwrap();
        let kv: std::collections::BTreeMap<_, _> = parse_kv(&r.to_kv()).into_iter().collect();
        assert_eq!(kv["human_accuracy"], "0.72");
        assert_eq!(kv["model_accuracy"], "0.92");
        assert_eq!(kv["union_accuracy"], "1");
        assert_eq!(kv["disagreements"], "1,2,5,6,16,17,20,22,24");
        assert!(r.to_text().contains("either      1.00"));
    }
}
