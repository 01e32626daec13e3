use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::SideInfoSource;
use crate::error::{Error, Result};
use crate::numgrad::Matrix;
use crate::tree_cov::TreeHierarchy;

/// Class pools: `lots` for pre-training, `one_example` for one-shot
/// evaluation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub lots: Vec<String>,
    pub one_example: Vec<String>,
}

/// Features with class labels and the pool split.
///
/// Global class ids follow `class_names`, which lists the `lots` classes
/// first and the `one_example` classes after them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    num_lots: usize,
    by_class: Vec<Vec<usize>>,
}

impl DatasetBundle {
    pub fn new(features: Matrix, label_names: &[String], split: &SplitManifest) -> Result<Self> {
        if features.rows() != label_names.len() {
            return Err(Error::Config(format!(
                "{} feature rows but {} labels",
                features.rows(),
                label_names.len()
            )));
        }
        let lots: HashSet<&String> = split.lots.iter().collect();
        if let Some(c) = split.one_example.iter().find(|c| lots.contains(c)) {
            return Err(Error::Config(format!(
                "class `{c}` is in both the lots and one_example pools"
            )));
        }
        let class_names: Vec<String> = split.lots.iter().chain(&split.one_example).cloned().collect();
        let unique: HashSet<&String> = class_names.iter().collect();
        if unique.len() != class_names.len() {
            return Err(Error::Config("duplicate class name in split manifest".into()));
        }
        let mut labels = Vec::with_capacity(label_names.len());
        for (row, name) in label_names.iter().enumerate() {
            let id = class_names.iter().position(|c| c == name).ok_or_else(|| {
                Error::Config(format!("label `{name}` on row {row} is not a declared class"))
            })?;
            labels.push(id);
        }
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        Ok(DatasetBundle {
            features,
            labels,
            class_names,
            num_lots: split.lots.len(),
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Global ids of the `lots` pool.
    pub fn lots(&self) -> Vec<usize> {
        (0..self.num_lots).collect()
    }

    /// Global ids of the `one_example` pool.
    pub fn one_example(&self) -> Vec<usize> {
        (self.num_lots..self.class_names.len()).collect()
    }

    pub fn num_lots(&self) -> usize {
        self.num_lots
    }

    pub fn num_one_example(&self) -> usize {
        self.class_names.len() - self.num_lots
    }

    /// Sample indices of a class, in file order.
    pub fn samples_of(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn split(&self) -> SplitManifest {
        SplitManifest {
            lots: self.class_names[..self.num_lots].to_vec(),
            one_example: self.class_names[self.num_lots..].to_vec(),
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|&l| self.class_names[l].clone()).collect()
    }

    pub fn load(features: &Path, labels: &Path, split: &Path) -> Result<Self> {
        let x = read_features(features)?;
        let y = read_labels(labels)?;
        let text = fs::read_to_string(split).map_err(|e| Error::io(split, e))?;
        let manifest: SplitManifest = serde_json::from_str(&text)?;
        DatasetBundle::new(x, &y, &manifest)
    }

    /// Writes `features.csv`, `labels.csv` and `split.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_features(&dir.join(FEATURES_FILE), &self.features)?;
        write_labels(&dir.join(LABELS_FILE), &self.label_names())?;
        let split = serde_json::to_string_pretty(&self.split())?;
        let path = dir.join(SPLIT_FILE);
        fs::write(&path, split + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        DatasetBundle::load(&dir.join(FEATURES_FILE), &dir.join(LABELS_FILE), &dir.join(SPLIT_FILE))
    }
}

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const SIDEINFO_DIR: &str = "sideinfo";

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_float(field: &str, path: &Path, row: usize, col: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Config(format!(
            "{}: row {row}, column {col}: `{field}` is not a number",
            path.display()
        ))
    })
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    let mut reader = csv_reader(path)?;
    let cols = reader.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (c, field) in record.iter().enumerate() {
            data.push(parse_float(field, path, r + 1, c)?);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.cols()).map(|j| format!("f{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(record.get(0).unwrap_or_default().to_string());
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class"])?;
    for l in labels {
        w.write_record([l])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Class-embedding CSV: first column the class name, then the vector. A
/// first row whose second field is not numeric is taken as a header.
pub fn read_class_embeddings(path: &Path, name: &str) -> Result<SideInfoSource> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut classes = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if r == 0 && record.get(1).is_some_and(|f| f.trim().parse::<f64>().is_err()) {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Config(format!(
                "{}: row {} has no embedding values",
                path.display(),
                r + 1
            )));
        }
        let d = record.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Config(format!(
                "{}: row {} has {d} values, expected {}",
                path.display(),
                r + 1,
                dim.unwrap()
            )));
        }
        classes.push(record[0].trim().to_string());
        for (c, f) in record.iter().enumerate().skip(1) {
            data.push(parse_float(f, path, r + 1, c)?);
        }
    }
    let table = Matrix::from_vec(classes.len(), dim.unwrap_or(0), data)?;
    SideInfoSource::embeddings(name, classes, table)
}

pub fn write_class_embeddings(path: &Path, classes: &[String], table: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["class".to_string()];
    header.extend((0..table.cols()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (c, row) in classes.iter().zip(table.row_iter()) {
        let mut rec = vec![c.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tree(path: &Path) -> Result<TreeHierarchy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TreeHierarchy::parse(&text)
}

/// Loads every `*.csv` (class embeddings) and `*.tree` file in `dir`,
/// sorted by file name. The source name is the file stem.
pub fn read_side_info_dir(dir: &Path) -> Result<Vec<SideInfoSource>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for path in entries {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        match path.extension().and_then(|s| s.to_str()) {
            Some("csv") => out.push(read_class_embeddings(&path, stem)?),
            Some("tree") => out.push(SideInfoSource::tree(stem, read_tree(&path)?)),
            _ => {}
        }
    }
    Ok(out)
}

pub fn write_side_info_dir(dir: &Path, sources: &[SideInfoSource]) -> Result<()> {
    use crate::affinity::SideInfo;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in sources {
        match &s.info {
            SideInfo::Embeddings { classes, table } => {
                write_class_embeddings(&dir.join(format!("{}.csv", s.name)), classes, table)?
            }
            SideInfo::Tree(t) => {
                let path = dir.join(format!("{}.tree", s.name));
                fs::write(&path, t.to_text()).map_err(|e| Error::io(&path, e))?
            }
        }
    }
    Ok(())
}
