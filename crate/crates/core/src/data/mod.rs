//! Dataset ingestion: CSV manifests, image loading with the 0-1 scaling and
//! bilinear resize preprocessing, deterministic stratified splits, and the
//! synthetic grating dataset the acceptance runs train on.

pub mod image;
mod synth;

pub use image::load_image;
pub use synth::generate_synthetic;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One manifest row: a path relative to the manifest location plus the
/// class-name label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
}

/// A listing of samples with a deterministic class index: class names are
/// sorted lexicographically and numbered 0..C-1.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
    class_index: Vec<String>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn from_rows(rows: Vec<ManifestRow>, base_dir: PathBuf) -> Result<DatasetManifest> {
        if rows.is_empty() {
            return Err(Error::invalid("manifest has no rows".to_string()));
        }
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            if !seen.insert(row.path.as_str()) {
                return Err(Error::invalid(format!(
                    "manifest line {}: duplicate path {:?}",
                    i + 2,
                    row.path
                )));
            }
        }
        let mut class_index: Vec<String> =
            rows.iter().map(|r| r.label.clone()).collect::<HashSet<_>>().into_iter().collect();
        class_index.sort();
        if class_index.len() < 2 {
            return Err(Error::invalid(format!(
                "manifest needs at least 2 classes, found {:?}",
                class_index
            )));
        }
        Ok(DatasetManifest { rows, class_index, base_dir })
    }

    /// Builds a manifest slice that keeps the parent's class universe, so
    /// label ids stay aligned across split halves even when a class is
    /// absent from one of them.
    fn subset(&self, rows: Vec<ManifestRow>) -> Result<DatasetManifest> {
        if rows.is_empty() {
            return Err(Error::invalid("split produced an empty manifest".to_string()));
        }
        for row in &rows {
            if self.label_id(&row.label).is_none() {
                return Err(Error::invalid(format!("unknown label {:?}", row.label)));
            }
        }
        Ok(DatasetManifest {
            rows,
            class_index: self.class_index.clone(),
            base_dir: self.base_dir.clone(),
        })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_index(&self) -> &[String] {
        &self.class_index
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.class_index.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Absolute path of one row's image file.
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label"])
            .map_err(|e| Error::invalid(format!("manifest write: {e}")))?;
        for row in &self.rows {
            w.write_record([&row.path, &row.label])
                .map_err(|e| Error::invalid(format!("manifest write: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a `path,label` CSV. Row order is preserved; the class index is the
/// lexicographic ordering of the distinct labels.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: {e}", path.display()),
            )),
            _ => Error::invalid(format!("{}: {e}", path.display())),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
        return Err(Error::invalid(format!(
            "{}: expected header \"path,label\", found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::invalid(format!("{} line {}: {e}", path.display(), i + 2))
        })?;
        if record.len() != 2 {
            return Err(Error::invalid(format!(
                "{} line {}: expected 2 fields, found {}",
                path.display(),
                i + 2,
                record.len()
            )));
        }
        rows.push(ManifestRow { path: record[0].to_string(), label: record[1].to_string() });
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    DatasetManifest::from_rows(rows, base)
}

/// Result of [`stratified_split`]; warnings report singleton classes that
/// were kept entirely in the training half.
pub struct Split {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub warnings: Vec<String>,
}

/// Deterministic per-class split: each class contributes
/// round(count * val_fraction) validation rows (at least 1 when count >= 2).
/// Both halves preserve the original manifest order.
pub fn stratified_split(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut val_rows: HashSet<usize> = HashSet::new();
    for class in manifest.class_index() {
        let mut members: Vec<usize> = manifest
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            warnings.push(format!(
                "class {class:?} has a single sample; keeping it in the training split"
            ));
            continue;
        }
        let count = ((members.len() as f64 * val_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        val_rows.extend(members.into_iter().take(count));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, row) in manifest.rows().iter().enumerate() {
        if val_rows.contains(&i) {
            val.push(row.clone());
        } else {
            train.push(row.clone());
        }
    }
    Ok(Split { train: manifest.subset(train)?, val: manifest.subset(val)?, warnings })
}

/// One preprocessed sample: a [3, S, S] tensor in [0,1] plus its label id.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub tensor: Tensor,
    pub label_index: usize,
}

/// All samples of a manifest, decoded and resized, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the given sample indices into a [B, 3, S, S] batch tensor plus
    /// its label vector.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        assert!(!indices.is_empty());
        let first = &self.samples[indices[0]].tensor;
        let sample_len = first.numel();
        let shape = first.shape();
        let mut data = Vec::with_capacity(indices.len() * sample_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.samples[i].tensor.data());
            labels.push(self.samples[i].label_index);
        }
        (
            Tensor::new(data, &[indices.len(), shape[0], shape[1], shape[2]]),
            labels,
        )
    }
}

/// Loads every manifest row at the given image size. Decoding runs in
/// parallel but the output order always matches the manifest.
pub fn load_dataset(manifest: &DatasetManifest, image_size: usize) -> Result<Dataset> {
    // label ids are resolved before the parallel stage so errors are ordered
    let mut labeled: Vec<(PathBuf, usize)> = Vec::with_capacity(manifest.len());
    for row in manifest.rows() {
        let label_index = manifest
            .label_id(&row.label)
            .ok_or_else(|| Error::invalid(format!("unknown label {:?}", row.label)))?;
        labeled.push((manifest.resolve(row), label_index));
    }
    let samples: Result<Vec<ImageSample>> = labeled
        .par_iter()
        .map(|(path, label_index)| {
            Ok(ImageSample { tensor: load_image(path, image_size)?, label_index: *label_index })
        })
        .collect();
    Ok(Dataset { samples: samples?, class_names: manifest.class_index().to_vec() })
}
