//! Human-reader versus model complementarity.
//!
//! Reader file layout, tab- or whitespace-separated:
//!
//! ```text
//! #pneumox-readers	version=1
//! id	truth	human	model	category
//! 1	0	1	0	other_disease
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Category;
use crate::error::{Error, Result};

const MAGIC: &str = "#pneumox-readers";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderRecord {
    pub id: String,
    pub truth: u8,
    pub human: u8,
    pub model: u8,
    pub category: Category,
}

impl ReaderRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("truth", self.truth), ("human", self.human), ("model", self.model)] {
            if v > 1 {
                return Err(format!("{name} value {v} is not 0 or 1"));
            }
        }
        if (self.category == Category::Pneumonia) != (self.truth == 1) {
            return Err(format!(
                "category {} contradicts truth {} (pneumonia ⇔ truth 1)",
                self.category, self.truth
            ));
        }
        Ok(())
    }
}

pub fn load_reader_file(path: &Path) -> Result<Vec<ReaderRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reader_text(&text).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_reader_text(text: &str) -> Result<Vec<ReaderRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("id") {
            if row == 1 && line.starts_with('#') && !line.starts_with(MAGIC) {
                return Err(Error::Load(format!("row {row}: header must start with `{MAGIC}`")));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: String| Error::Load(format!("row {row}: {m}"));
        let [id, truth, human, model, category] = cols[..] else {
            return Err(bad(format!("expected 5 fields, got {}", cols.len())));
        };
        let bit = |name: &str, v: &str| match v {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad(format!("{name} `{v}` is not 0 or 1"))),
        };
        let rec = ReaderRecord {
            id: id.to_string(),
            truth: bit("truth", truth)?,
            human: bit("human", human)?,
            model: bit("model", model)?,
            category: category.parse().map_err(|e: Error| bad(e.to_string()))?,
        };
        rec.validate().map_err(bad)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn format_reader_file(records: &[ReaderRecord]) -> String {
    let mut s = format!("{MAGIC}\tversion=1\nid\ttruth\thuman\tmodel\tcategory\n");
    for r in records {
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.id, r.truth, r.human, r.model, r.category));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub n: usize,
    pub human_correct: usize,
    pub model_correct: usize,
    pub union_correct: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correct {
    HumanOnly,
    ModelOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReaderReport {
    pub n: usize,
    pub human_acc: f64,
    pub model_acc: f64,
    /// Share of images where at least one reader is right.
    pub union_acc: f64,
    pub per_category: Vec<CategoryRow>,
    /// Images where exactly one of the two is correct.
    pub disagreements: Vec<(String, Correct)>,
}

pub fn reader_compare(records: &[ReaderRecord]) -> Result<ReaderReport> {
    if records.is_empty() {
        return Err(Error::Load("reader comparison needs at least one record".into()));
    }
    let mut by_cat: BTreeMap<usize, CategoryRow> = BTreeMap::new();
    let (mut h, mut m, mut u) = (0usize, 0usize, 0usize);
    let mut disagreements = Vec::new();
    for (row, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::Load(format!("record {} (row {}): {e}", r.id, row + 1)))?;
        let hc = r.human == r.truth;
        let mc = r.model == r.truth;
        h += usize::from(hc);
        m += usize::from(mc);
        u += usize::from(hc || mc);
        match (hc, mc) {
            (true, false) => disagreements.push((r.id.clone(), Correct::HumanOnly)),
            (false, true) => disagreements.push((r.id.clone(), Correct::ModelOnly)),
            _ => {}
        }
        let key = Category::ALL.iter().position(|&c| c == r.category).expect("known category");
        let e = by_cat.entry(key).or_insert(CategoryRow {
            category: r.category,
            n: 0,
            human_correct: 0,
            model_correct: 0,
            union_correct: 0,
        });
        e.n += 1;
        e.human_correct += usize::from(hc);
        e.model_correct += usize::from(mc);
        e.union_correct += usize::from(hc || mc);
    }
    let n = records.len() as f64;
    Ok(ReaderReport {
        n: records.len(),
        human_acc: h as f64 / n,
        model_acc: m as f64 / n,
        union_acc: u as f64 / n,
        per_category: by_cat.into_values().collect(),
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn rec(id: usize, truth: u8, human: u8, model: u8) -> ReaderRecord {
        ReaderRecord {
            id: id.to_string(),
            truth,
            human,
            model,
            category: if truth == 1 { Category::Pneumonia } else { Category::Normal },
        }
    }

    #[test]
    fn identical_readers_union_equals_each() {
        let rs: Vec<_> = (0..10).map(|i| rec(i, (i % 2) as u8, (i % 3 == 0) as u8, (i % 3 == 0) as u8)).collect();
        let r = reader_compare(&rs).unwrap();
        assert_eq!(r.union_acc, r.human_acc);
        assert!(r.disagreements.is_empty());
    }

    #[test]
    fn loop_oracle_and_bounds() {
        let mut rng = seeded(12);
        let rs: Vec<_> = (0..100)
            .map(|i| rec(i, rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..2)))
            .collect();
        let r = reader_compare(&rs).unwrap();
        let mut h = 0.0;
        let mut m = 0.0;
        let mut u = 0.0;
        for x in &rs {
            if x.human == x.truth {
                h += 1.0;
            }
            if x.model == x.truth {
                m += 1.0;
            }
            if x.human == x.truth || x.model == x.truth {
                u += 1.0;
            }
        }
        assert_eq!((r.human_acc, r.model_acc, r.union_acc), (h / 100.0, m / 100.0, u / 100.0));
        assert!(r.human_acc.max(r.model_acc) <= r.union_acc);
        assert!(r.union_acc <= (r.human_acc + r.model_acc).min(1.0));
        assert_eq!(r.per_category.iter().map(|c| c.n).sum::<usize>(), 100);
    }

    #[test]
    fn parse_errors_name_the_row() {
        let err = parse_reader_text("#pneumox-readers\tversion=1\n1\t0\t1\t0\tnormal\n2\t1\t2\t0\tpneumonia\n").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
        let err = parse_reader_text("1\t1\t1\t0\tnormal\n").unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        assert!(reader_compare(&[]).is_err());
    }

    #[test]
    fn format_parse_roundtrip() {
        let rs: Vec<_> = (0..5).map(|i| rec(i, (i % 2) as u8, 1, 0)).collect();
        assert_eq!(parse_reader_text(&format_reader_file(&rs)).unwrap(), rs);
    }
}
