use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk benchmark layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `<cat>/train/good`, `<cat>/test/<defect>`, `<cat>/ground_truth/<defect>/<stem>_mask.png`.
    Mvtec,
    /// `split_csv/1cls.csv` with columns `object,split,label,image,mask`.
    Visa,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mvtec" | "mvtec-ad" | "mvtec_ad" => Ok(Layout::Mvtec),
            "visa" => Ok(Layout::Visa),
            other => Err(Error::Config(format!(
                "unknown dataset layout {other:?} (expected mvtec or visa)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Path relative to the dataset root, with `/` separators.
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub mask: Option<PathBuf>,
    /// Defect type directory (`good` for normal images).
    pub defect: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub object_label: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub layout: Layout,
    pub categories: Vec<Category>,
}

impl DatasetManifest {
    pub fn category(&self, name: &str) -> Result<&Category> {
        self.categories
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Manifest(format!("no category {name:?} under {}", self.root.display())))
    }

    /// Keeps only the named categories (all when `names` is empty).
    pub fn retain(&mut self, names: &[String]) -> Result<()> {
        if names.is_empty() {
            return Ok(());
        }
        for n in names {
            self.category(n)?;
        }
        self.categories.retain(|c| names.contains(&c.name));
        Ok(())
    }
}

/// Reads a dataset including its normal train split.
pub fn load_manifest(root: impl AsRef<Path>, layout: Layout) -> Result<DatasetManifest> {
    load(root.as_ref(), layout, true)
}

/// Reads only the test split; the train directories are never touched.
pub fn load_test_manifest(root: impl AsRef<Path>, layout: Layout) -> Result<DatasetManifest> {
    load(root.as_ref(), layout, false)
}

fn load(root: &Path, layout: Layout, with_train: bool) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Manifest(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let categories = match layout {
        Layout::Mvtec => load_mvtec(root, with_train)?,
        Layout::Visa => load_visa(root, with_train)?,
    };
    if categories.is_empty() {
        return Err(Error::Manifest(format!("no categories found under {}", root.display())));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        layout,
        categories,
    })
}

fn object_label(name: &str) -> String {
    name.replace('_', " ")
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn rel_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn load_mvtec(root: &Path, with_train: bool) -> Result<Vec<Category>> {
    let mut categories = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() || !dir.join("test").is_dir() {
            continue;
        }
        let name = dir.file_name().expect("directory entry").to_string_lossy().into_owned();
        let mut train = Vec::new();
        if with_train {
            let good = dir.join("train").join("good");
            if !good.is_dir() {
                return Err(Error::Manifest(format!(
                    "category {name:?} has no train/good directory"
                )));
            }
            for p in sorted_entries(&good)?.into_iter().filter(|p| is_image(p)) {
                train.push(Sample {
                    id: rel_id(root, &p),
                    path: p,
                    label: Label::Normal,
                    mask: None,
                    defect: "good".into(),
                });
            }
        }
        let mut test = Vec::new();
        let mut missing = Vec::new();
        let gt_root = dir.join("ground_truth");
        for defect_dir in sorted_entries(&dir.join("test"))?.into_iter().filter(|p| p.is_dir()) {
            let defect = defect_dir.file_name().expect("entry").to_string_lossy().into_owned();
            let anomalous = defect != "good";
            if anomalous && !gt_root.is_dir() {
                return Err(Error::Manifest(format!(
                    "category {name:?} has defect images but no ground_truth directory"
                )));
            }
            for p in sorted_entries(&defect_dir)?.into_iter().filter(|p| is_image(p)) {
                let mask = if anomalous {
                    let stem = p.file_stem().expect("image file").to_string_lossy();
                    let m = gt_root.join(&defect).join(format!("{stem}_mask.png"));
                    if !m.is_file() {
                        missing.push(rel_id(root, &m));
                    }
                    Some(m)
                } else {
                    None
                };
                test.push(Sample {
                    id: rel_id(root, &p),
                    path: p,
                    label: if anomalous { Label::Anomalous } else { Label::Normal },
                    mask,
                    defect: defect.clone(),
                });
            }
        }
        if !missing.is_empty() {
            return Err(Error::Manifest(format!(
                "category {name:?} is missing masks: {}",
                missing.join(", ")
            )));
        }
        categories.push(Category {
            object_label: object_label(&name),
            name,
            train,
            test,
        });
    }
    Ok(categories)
}

#[derive(Debug, Deserialize)]
struct VisaRow {
    object: String,
    split: String,
    label: String,
    image: String,
    #[serde(default)]
    mask: Option<String>,
}

fn load_visa(root: &Path, with_train: bool) -> Result<Vec<Category>> {
    let csv_path = root.join("split_csv").join("1cls.csv");
    let file = std::fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut categories: Vec<Category> = Vec::new();
    let mut missing = Vec::new();
    for row in reader.deserialize::<VisaRow>() {
        let row = row?;
        let label = match row.label.as_str() {
            "normal" => Label::Normal,
            "anomaly" | "anomalous" => Label::Anomalous,
            other => {
                return Err(Error::Manifest(format!(
                    "unknown VisA label {other:?} for {}",
                    row.image
                )))
            }
        };
        let is_train = match row.split.as_str() {
            "train" => true,
            "test" => false,
            other => {
                return Err(Error::Manifest(format!(
                    "unknown VisA split {other:?} for {}",
                    row.image
                )))
            }
        };
        if is_train && (!with_train || label == Label::Anomalous) {
            continue;
        }
        let mask = match (label, row.mask.as_deref().filter(|m| !m.is_empty())) {
            (Label::Anomalous, Some(m)) => {
                let p = root.join(m);
                if !p.is_file() {
                    missing.push(m.to_string());
                }
                Some(p)
            }
            (Label::Anomalous, None) => {
                missing.push(format!("(no mask listed for {})", row.image));
                None
            }
            (Label::Normal, _) => None,
        };
        let idx = match categories.iter().position(|c| c.name == row.object) {
            Some(i) => i,
            None => {
                categories.push(Category {
                    object_label: object_label(&row.object),
                    name: row.object.clone(),
                    train: Vec::new(),
                    test: Vec::new(),
                });
                categories.len() - 1
            }
        };
        let sample = Sample {
            id: row.image.clone(),
            path: root.join(&row.image),
            label,
            mask,
            defect: if label == Label::Normal {
                "good".into()
            } else {
                "bad".into()
            },
        };
        if is_train {
            categories[idx].train.push(sample);
        } else {
            categories[idx].test.push(sample);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Manifest(format!("missing masks: {}", missing.join(", "))));
    }
    categories.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(categories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"").unwrap();
    }

    fn toy_mvtec(root: &Path) {
        touch(&root.join("metal_nut/train/good/000.png"));
        touch(&root.join("metal_nut/train/good/001.png"));
        touch(&root.join("metal_nut/test/good/000.png"));
        touch(&root.join("metal_nut/test/scratch/000.png"));
        touch(&root.join("metal_nut/ground_truth/scratch/000_mask.png"));
        touch(&root.join("license.txt"));
    }

    #[test]
    fn mvtec_toy_tree() {
        let dir = tempfile::tempdir().unwrap();
        toy_mvtec(dir.path());
        let m = load_manifest(dir.path(), Layout::Mvtec).unwrap();
        assert_eq!(m.categories.len(), 1);
        let c = &m.categories[0];
        assert_eq!(c.object_label, "metal nut");
        assert_eq!((c.train.len(), c.test.len()), (2, 2));
        assert_eq!(c.test.iter().filter(|s| s.mask.is_some()).count(), 1);
        assert_eq!(c.test[1].id, "metal_nut/test/scratch/000.png");
        assert_eq!(c.test[1].label, Label::Anomalous);

        let t = load_test_manifest(dir.path(), Layout::Mvtec).unwrap();
        assert!(t.categories[0].train.is_empty());
    }

    #[test]
    fn mvtec_missing_masks() {
        let dir = tempfile::tempdir().unwrap();
        toy_mvtec(dir.path());
        fs::remove_dir_all(dir.path().join("metal_nut/ground_truth")).unwrap();
        let err = load_manifest(dir.path(), Layout::Mvtec).unwrap_err().to_string();
        assert!(err.contains("metal_nut") && err.contains("ground_truth"), "{err}");

        fs::create_dir_all(dir.path().join("metal_nut/ground_truth/scratch")).unwrap();
        let err = load_manifest(dir.path(), Layout::Mvtec).unwrap_err().to_string();
        assert!(err.contains("000_mask.png"), "{err}");
    }

    #[test]
    fn visa_csv() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        touch(&root.join("candle/Data/Images/Normal/0.JPG"));
        touch(&root.join("candle/Data/Images/Anomaly/1.JPG"));
        touch(&root.join("candle/Data/Masks/Anomaly/1.png"));
        fs::create_dir_all(root.join("split_csv")).unwrap();
        fs::write(
            root.join("split_csv/1cls.csv"),
            "object,split,label,image,mask\n\
             candle,train,normal,candle/Data/Images/Normal/0.JPG,\n\
             candle,test,normal,candle/Data/Images/Normal/0.JPG,\n\
             candle,test,anomaly,candle/Data/Images/Anomaly/1.JPG,candle/Data/Masks/Anomaly/1.png\n",
        )
        .unwrap();
        let m = load_manifest(root, Layout::Visa).unwrap();
        let c = m.category("candle").unwrap();
        assert_eq!((c.train.len(), c.test.len()), (1, 2));
        assert!(c.test[1].mask.is_some());
        assert!(m.category("pcb1").is_err());
        assert!(load_test_manifest(root, Layout::Visa).unwrap().categories[0]
            .train
            .is_empty());
    }

    #[test]
    fn fifteen_categories() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..15 {
            touch(&dir.path().join(format!("cat{i:02}/train/good/0.png")));
            touch(&dir.path().join(format!("cat{i:02}/test/good/0.png")));
        }
        assert_eq!(load_manifest(dir.path(), Layout::Mvtec).unwrap().categories.len(), 15);
    }
}
