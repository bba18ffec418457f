//! Dataset generation, ingestion, and storage.

mod container;
mod idx;
mod sim;
mod strokes;

pub use container::{load_dataset, save_dataset};
pub use idx::{load_idx, write_idx_images, write_idx_labels};
pub use sim::{simulate, simulate_with_graph, synth_expressions, SimConfig, SimDataset};
pub use strokes::stroke_images;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// In-memory dataset: a batch-leading sample tensor with optional labels
/// and optional ground-truth representations. Sample ids are unique and
/// survive subsetting, so latent-table rows can always be traced back.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Option<Vec<u8>>,
    pub z_true: Option<Tensor>,
    pub sample_ids: Vec<u64>,
    /// Values are known to lie in `[0, 1]` (image data); denoising clamps
    /// and BCE targets rely on this.
    pub unit_range: bool,
}

impl Dataset {
    pub fn new(x: Tensor) -> Dataset {
        let n = x.shape()[0] as u64;
        Dataset { x, labels: None, z_true: None, sample_ids: (0..n).collect(), unit_range: false }
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample element count.
    pub fn sample_len(&self) -> usize {
        self.x.shape()[1..].iter().product()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::format(format!("{} labels for {n} samples", l.len())));
            }
        }
        if let Some(z) = &self.z_true {
            if z.shape()[0] != n {
                return Err(Error::format(format!(
                    "{} ground-truth rows for {n} samples",
                    z.shape()[0]
                )));
            }
        }
        if self.sample_ids.len() != n {
            return Err(Error::format(format!("{} sample ids for {n} samples", self.sample_ids.len())));
        }
        let mut ids = self.sample_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(Error::format("sample ids are not unique".to_string()));
        }
        Ok(())
    }
}

/// What to draw when subsetting a dataset.
#[derive(Clone, Copy, Debug)]
pub enum SubsampleSpec {
    /// `size` samples without replacement.
    Total(usize),
    /// `per_class` samples from every label value present.
    Balanced { per_class: usize },
}

/// Seeded sampling without replacement. Balanced mode draws equally from
/// every class and requires labels. The result keeps the original sample
/// ids and is ordered by them.
pub fn subsample(ds: &Dataset, spec: SubsampleSpec, seed: u64) -> Result<Dataset> {
    ds.validate()?;
    let mut rng = Rng::with_stream(seed, 0x5ab5);
    let chosen: Vec<usize> = match spec {
        SubsampleSpec::Total(size) => {
            if size > ds.len() {
                return Err(Error::invalid(format!(
                    "requested {size} samples from a dataset of {}",
                    ds.len()
                )));
            }
            let mut idx = rng.shuffled_indices(ds.len());
            idx.truncate(size);
            idx
        }
        SubsampleSpec::Balanced { per_class } => {
            let labels = ds
                .labels
                .as_ref()
                .ok_or_else(|| Error::invalid("balanced subsampling needs labels".to_string()))?;
            let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                by_class.entry(l).or_default().push(i);
            }
            let mut chosen = Vec::new();
            for (label, members) in &by_class {
                if members.len() < per_class {
                    return Err(Error::invalid(format!(
                        "class {label} has {} samples, need {per_class}",
                        members.len()
                    )));
                }
                let order = rng.shuffled_indices(members.len());
                chosen.extend(order[..per_class].iter().map(|&k| members[k]));
            }
            chosen
        }
    };
    // Stable ordering by original sample id.
    let mut chosen = chosen;
    chosen.sort_by_key(|&i| ds.sample_ids[i]);
    Ok(Dataset {
        x: ds.x.select_rows(&chosen),
        labels: ds.labels.as_ref().map(|l| chosen.iter().map(|&i| l[i]).collect()),
        z_true: ds.z_true.as_ref().map(|z| z.select_rows(&chosen)),
        sample_ids: chosen.iter().map(|&i| ds.sample_ids[i]).collect(),
        unit_range: ds.unit_range,
    })
}

/// Write the dataset as CSV: one row per sample, full `f64` round-trip
/// precision (the shortest representation that parses back exactly).
pub fn export_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let mut out = String::new();
    out.push_str("id");
    if ds.labels.is_some() {
        out.push_str(",label");
    }
    for j in 0..ds.sample_len() {
        let _ = write!(out, ",x{j}");
    }
    if let Some(z) = &ds.z_true {
        for j in 0..z.shape()[1] {
            let _ = write!(out, ",z{j}");
        }
    }
    out.push('\n');
    for (row, &id) in ds.sample_ids.iter().enumerate() {
        let _ = write!(out, "{id}");
        if let Some(l) = &ds.labels {
            let _ = write!(out, ",{}", l[row]);
        }
        for v in ds.x.row(row) {
            let _ = write!(out, ",{v}");
        }
        if let Some(z) = &ds.z_true {
            for v in z.row(row) {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
