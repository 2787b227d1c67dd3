//! Dataset manifest CSV.
//!
//! Required header: `id,image_path,features_path,bu_maps,labels`. List-valued
//! fields are `;`-separated. Two optional ground-truth columns may follow:
//!
//! * `gt_masks`: `category:path` pairs, one binary PGM mask per category
//! * `gt_boxes`: `category:x:y:w:h` boxes in pixels
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::map::PixelBox;

const REQUIRED: [&str; 5] = ["id", "image_path", "features_path", "bu_maps", "labels"];
const OPTIONAL: [&str; 2] = ["gt_masks", "gt_boxes"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: Option<PathBuf>,
    pub features_path: PathBuf,
    pub bu_map_paths: Vec<PathBuf>,
    pub labels: BTreeSet<String>,
    pub gt_masks: Vec<(String, PathBuf)>,
    pub gt_boxes: Vec<(String, PixelBox)>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, features_path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            image_path: None,
            features_path: features_path.into(),
            bu_map_paths: Vec::new(),
            labels: BTreeSet::new(),
            gt_masks: Vec::new(),
            gt_boxes: Vec::new(),
        }
    }

    pub fn is_positive(&self, category: &str) -> bool {
        self.labels.contains(category)
    }

    /// `+1` if the category is labelled present, `-1` otherwise.
    pub fn label_sign(&self, category: &str) -> f64 {
        if self.is_positive(category) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn gt_mask_path(&self, category: &str) -> Option<&Path> {
        self.gt_masks
            .iter()
            .find(|(c, _)| c == category)
            .map(|(_, p)| p.as_path())
    }

    pub fn boxes_for<'a>(&'a self, category: &'a str) -> impl Iterator<Item = PixelBox> + 'a {
        self.gt_boxes
            .iter()
            .filter(move |(c, _)| c == category)
            .map(|(_, b)| *b)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Sorted union of all labels.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().flat_map(|e| e.labels.iter()).collect();
        set.into_iter().cloned().collect()
    }

    /// Per-entry `Y_k` for one category.
    pub fn label_signs(&self, category: &str) -> Vec<f64> {
        self.entries.iter().map(|e| e.label_sign(category)).collect()
    }

    pub fn check_labels(&self, categories: &[String]) -> Result<()> {
        for e in &self.entries {
            for l in &e.labels {
                if !categories.contains(l) {
                    return Err(Error::UnknownCategory(l.clone())
                        .context(format!("labels of entry {:?}", e.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| -> String {
            p.strip_prefix(base_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut out = String::from("id,image_path,features_path,bu_maps,labels,gt_masks,gt_boxes\n");
        for e in &self.entries {
            let bu: Vec<String> = e.bu_map_paths.iter().map(|p| rel(p)).collect();
            let labels: Vec<&str> = e.labels.iter().map(String::as_str).collect();
            let masks: Vec<String> = e
                .gt_masks
                .iter()
                .map(|(c, p)| format!("{c}:{}", rel(p)))
                .collect();
            let boxes: Vec<String> = e
                .gt_boxes
                .iter()
                .map(|(c, b)| format!("{c}:{}:{}:{}:{}", b.x, b.y, b.w, b.h))
                .collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.id,
                e.image_path.as_deref().map(rel).unwrap_or_default(),
                rel(&e.features_path),
                bu.join(";"),
                labels.join(";"),
                masks.join(";"),
                boxes.join(";"),
            ));
        }
        out
    }
}

fn split_list(field: &str) -> impl Iterator<Item = &str> {
    field.split(';').map(str::trim).filter(|s| !s.is_empty())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses manifest text; relative paths are joined onto `base_dir`. File
/// existence is not checked.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    for (i, name) in REQUIRED.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column {i} to be {name:?}"),
            });
        }
    }
    if let Some(extra) = headers
        .iter()
        .skip(REQUIRED.len())
        .find(|h| !OPTIONAL.contains(h))
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("unknown column {extra:?}"),
        });
    }
    let masks_col = col("gt_masks");
    let boxes_col = col("gt_boxes");

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(perr("empty id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id, line });
        }
        if field(2).is_empty() {
            return Err(perr("empty features_path".into()));
        }
        let mut entry = ManifestEntry::new(id, resolve(base_dir, field(2)));
        entry.image_path = Some(field(1))
            .filter(|s| !s.is_empty())
            .map(|s| resolve(base_dir, s));
        entry.bu_map_paths = split_list(field(3)).map(|p| resolve(base_dir, p)).collect();
        entry.labels = split_list(field(4)).map(str::to_string).collect();
        if let Some(i) = masks_col {
            for item in split_list(field(i)) {
                let (cat, path) = item
                    .split_once(':')
                    .ok_or_else(|| perr(format!("gt_masks item {item:?} is not category:path")))?;
                entry.gt_masks.push((cat.to_string(), resolve(base_dir, path)));
            }
        }
        if let Some(i) = boxes_col {
            for item in split_list(field(i)) {
                let parts: Vec<&str> = item.split(':').collect();
                let nums: Option<Vec<usize>> = parts
                    .get(1..)
                    .map(|p| p.iter().map(|s| s.parse().ok()).collect())
                    .unwrap_or(None);
                match (parts.first(), nums.as_deref()) {
                    (Some(cat), Some(&[x, y, w, h])) if w > 0 && h > 0 => {
                        entry
                            .gt_boxes
                            .push((cat.to_string(), PixelBox::new(x, y, w, h)));
                    }
                    _ => return Err(perr(format!("gt_boxes item {item:?} is not category:x:y:w:h"))),
                }
            }
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

/// Reads and parses a manifest, checking that every features file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    for e in &manifest.entries {
        if !e.features_path.exists() {
            return Err(Error::MissingFile(e.features_path.clone()).context(format!("entry {:?}", e.id)));
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    write_atomic(path, manifest.to_csv(base).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,image_path,features_path,bu_maps,labels\n";

    #[test]
    fn parses_lists() {
        let text = format!("{HEADER}img1,,f1.ften,b1.pgm;b2.pgm,cat;dog\n");
        let m = parse_manifest(&text, Path::new("/data")).unwrap();
        let e = &m.entries[0];
        assert_eq!(e.id, "img1");
        assert_eq!(e.image_path, None);
        assert_eq!(e.features_path, PathBuf::from("/data/f1.ften"));
        assert_eq!(e.bu_map_paths.len(), 2);
        assert_eq!(e.labels, ["cat", "dog"].iter().map(|s| s.to_string()).collect());
        assert_eq!(m.label_signs("dog"), vec![1.0]);
        assert_eq!(m.label_signs("cow"), vec![-1.0]);
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = format!("{HEADER}img1,,f1.ften,,cat\nimg1,,f2.ften,,\n");
        let err = parse_manifest(&text, Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn empty_labels_is_all_negative() {
        let text = format!("{HEADER}img1,,f1.ften,,\n");
        let m = parse_manifest(&text, Path::new(".")).unwrap();
        assert!(m.entries[0].labels.is_empty());
        assert_eq!(m.label_signs("cat"), vec![-1.0]);
    }

    #[test]
    fn bad_rows_report_line() {
        let text = format!("{HEADER}a,,f.ften,,\nb,,,,\n");
        match parse_manifest(&text, Path::new(".")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e:?}"),
        }
        let text = "id,image,features_path,bu_maps,labels\n";
        assert!(matches!(
            parse_manifest(text, Path::new(".")).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn ground_truth_columns() {
        let text = "id,image_path,features_path,bu_maps,labels,gt_masks,gt_boxes\n\
                    a,a.ppm,a.ften,,cat,cat:a_cat.pgm,cat:1:2:3:4;dog:0:0:5:5\n";
        let m = parse_manifest(text, Path::new("/d")).unwrap();
        let e = &m.entries[0];
        assert_eq!(e.gt_mask_path("cat"), Some(Path::new("/d/a_cat.pgm")));
        assert_eq!(e.boxes_for("cat").collect::<Vec<_>>(), vec![PixelBox::new(1, 2, 3, 4)]);
        let again = parse_manifest(&m.to_csv(Path::new("/d")), Path::new("/d")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn labels_checked_against_categories() {
        let text = format!("{HEADER}a,,f.ften,,cat;cow\n");
        let m = parse_manifest(&text, Path::new(".")).unwrap();
        assert!(m.check_labels(&["cat".into(), "cow".into()]).is_ok());
        assert!(m.check_labels(&["cat".into()]).is_err());
    }
}
