//! Line-oriented dataset manifest.
//!
//! ```text
//! #pneumox-manifest	version=1	side=64
//! id	path	label	category	boxes
//! p0001	images/p0001.png	1	pneumonia	10,12,8,6;30,31,5,5
//! n0002	images/n0002.png	0	normal
//! ```
//!
//! Fields are tab-separated. `category` is `-` when unknown. The box field is
//! a `;`-separated list of `x,y,w,h` quadruples and may be empty or absent.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::io::{read_gray_image, write_gray_image};
use crate::data::{BBox, Category, ImageSample};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
const MAGIC: &str = "#pneumox-manifest";
const COLUMNS: &str = "id\tpath\tlabel\tcategory\tboxes";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: u8,
    pub category: Option<Category>,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Original side length of every image.
    pub image_size: u32,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(image_size: u32, root: impl Into<PathBuf>) -> Self {
        Self {
            image_size,
            root: root.into(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Deterministic `(first, second)` partition, see [`crate::data::split_items`].
    pub fn split(&self, fractions: (f64, f64), seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
        let (a, b) = crate::data::split_items(&self.records, fractions, seed)?;
        let part = |records| DatasetManifest {
            image_size: self.image_size,
            root: self.root.clone(),
            records,
        };
        Ok((part(a), part(b)))
    }
}

fn load_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Load(format!("{}:{line}: {msg}", path.display()))
}

fn validate_record(rec: &ManifestRecord, side: u32) -> std::result::Result<(), String> {
    if rec.label > 1 {
        return Err(format!("record {}: label must be 0 or 1", rec.id));
    }
    if (rec.label == 1) != !rec.boxes.is_empty() {
        return Err(format!(
            "record {}: label {} with {} boxes violates label ⇔ non-empty boxes",
            rec.id,
            rec.label,
            rec.boxes.len()
        ));
    }
    if let Some(b) = rec.boxes.iter().find(|b| !b.fits(side)) {
        return Err(format!("record {}: box {b} exceeds the {side}-pixel image", rec.id));
    }
    Ok(())
}

/// Parses and validates a manifest. Every record is checked against the
/// sample invariants and every image path must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| load_err(path, 1, "empty file, missing header"))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MAGIC) {
        return Err(load_err(path, 1, format!("header must start with `{MAGIC}`")));
    }
    let mut version = None;
    let mut side = None;
    for f in fields {
        match f.split_once('=') {
            Some(("version", v)) => version = v.parse::<u32>().ok(),
            Some(("side", v)) => side = v.parse::<u32>().ok().filter(|&s| s > 0),
            _ => return Err(load_err(path, 1, format!("unknown header field `{f}`"))),
        }
    }
    if version != Some(MANIFEST_VERSION) {
        return Err(load_err(path, 1, format!("unsupported manifest version {version:?}")));
    }
    let image_size = side.ok_or_else(|| load_err(path, 1, "header lacks a positive side"))?;

    let mut manifest = DatasetManifest::new(image_size, root);
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() || line == COLUMNS {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 || cols.len() > 5 {
            return Err(load_err(path, lineno, format!("expected 4 or 5 tab-separated fields, got {}", cols.len())));
        }
        let id = cols[0].to_string();
        if id.is_empty() {
            return Err(load_err(path, lineno, "empty id"));
        }
        let label = match cols[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(load_err(path, lineno, format!("record {id}: label `{other}` is not 0 or 1"))),
        };
        let category = match cols[3] {
            "-" => None,
            c => Some(c.parse::<Category>().map_err(|e| load_err(path, lineno, format!("record {id}: {e}")))?),
        };
        let boxes = cols
            .get(4)
            .filter(|s| !s.is_empty())
            .map(|s| s.split(';').map(str::parse::<BBox>).collect::<Result<Vec<_>>>())
            .transpose()
            .map_err(|e| load_err(path, lineno, format!("record {id}: {e}")))?
            .unwrap_or_default();
        let rec = ManifestRecord {
            id,
            path: PathBuf::from(cols[1]),
            label,
            category,
            boxes,
        };
        validate_record(&rec, image_size).map_err(|m| load_err(path, lineno, m))?;
        if !seen.insert(rec.id.clone()) {
            return Err(load_err(path, lineno, format!("duplicate id {}", rec.id)));
        }
        let full = manifest.root.join(&rec.path);
        if !full.is_file() {
            return Err(load_err(path, lineno, format!("record {}: image {} not found", rec.id, full.display())));
        }
        manifest.records.push(rec);
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = format!("{MAGIC}\tversion={MANIFEST_VERSION}\tside={}\n{COLUMNS}\n", manifest.image_size);
    for r in &manifest.records {
        let boxes: Vec<String> = r.boxes.iter().map(BBox::to_string).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.id,
            r.path.display(),
            r.label,
            r.category.map_or("-", Category::as_str),
            boxes.join(";")
        ));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads every image named by the manifest.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<ImageSample>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let full = manifest.root.join(&r.path);
            let pixels = read_gray_image(&full)?;
            let (_, h, w) = pixels.dims3()?;
            if h != w || h as u32 != manifest.image_size {
                return Err(Error::Load(format!(
                    "record {}: image is {h}×{w}, manifest side is {}",
                    r.id, manifest.image_size
                )));
            }
            Ok(ImageSample {
                id: r.id.clone(),
                pixels,
                label: r.label,
                boxes: r.boxes.clone(),
                category: r.category,
            })
        })
        .collect()
}

/// Writes `images/<id>.png` for each sample plus `manifest.tsv` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[ImageSample], image_size: u32) -> Result<DatasetManifest> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut manifest = DatasetManifest::new(image_size, dir);
    for s in samples {
        s.validate()?;
        if s.side() != image_size {
            return Err(Error::Parameter(format!("sample {} has side {}, expected {image_size}", s.id, s.side())));
        }
        let rel = PathBuf::from("images").join(format!("{}.png", s.id));
        write_gray_image(&dir.join(&rel), &s.pixels)?;
        manifest.records.push(ManifestRecord {
            id: s.id.clone(),
            path: rel,
            label: s.label,
            category: s.category,
            boxes: s.boxes.clone(),
        });
    }
    write_manifest(&dir.join("manifest.tsv"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn touch(dir: &Path, rel: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        write_gray_image(&p, &Tensor::zeros(&[1, 16, 16])).unwrap();
    }

    #[test]
    fn empty_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        write_manifest(&p, &DatasetManifest::new(16, dir.path())).unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.image_size, 16);
    }

    #[test]
    fn three_records_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(16, dir.path());
        for (i, (label, cat, boxes)) in [
            (1u8, Some(Category::Pneumonia), vec![BBox::new(1, 2, 3, 4).unwrap(), BBox::new(8, 8, 8, 8).unwrap()]),
            (0, Some(Category::Normal), vec![]),
            (0, None, vec![]),
        ]
        .into_iter()
        .enumerate()
        {
            let rel = format!("img/{i}.png");
            touch(dir.path(), &rel);
            m.records.push(ManifestRecord {
                id: format!("r{i}"),
                path: rel.into(),
                label,
                category: cat,
                boxes,
            });
        }
        let p = dir.path().join("m.tsv");
        write_manifest(&p, &m).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn rejects_invariant_violations() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        let p = dir.path().join("m.tsv");
        let cases = [
            ("x\ta.png\t1\tpneumonia\n", "label 1 with 0 boxes"),
            ("x\ta.png\t0\tnormal\t1,1,2,2\n", "label 0 with 1 boxes"),
            ("x\ta.png\t1\tpneumonia\t10,10,8,8\n", "exceeds"),
            ("x\ta.png\t2\tnormal\n", "not 0 or 1"),
            ("x\tmissing.png\t0\tnormal\n", "not found"),
            ("x\ta.png\t0\tnormal\nx\ta.png\t0\tnormal\n", "duplicate id"),
            ("x\ta.png\n", "expected 4 or 5"),
        ];
        for (body, needle) in cases {
            fs::write(&p, format!("{MAGIC}\tversion=1\tside=16\n{body}")).unwrap();
            let err = load_manifest(&p).unwrap_err().to_string();
            assert!(err.contains(needle), "{err} should mention {needle}");
        }
        fs::write(&p, format!("{MAGIC}\tversion=9\tside=16\n")).unwrap();
        assert!(load_manifest(&p).is_err());
        assert!(load_manifest(&dir.path().join("nope.tsv")).is_err());
    }
}
