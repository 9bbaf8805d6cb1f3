use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Arc<Image>,
    pub class_id: usize,
    /// Where the sample came from (relative path for loaded data, a
    /// synthetic tag otherwise). Used as the sample identity.
    pub source: String,
}

/// A labeled image collection. Immutable once built.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    FolderPerClass,
    ManifestCsv,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(id: impl Into<String>, class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self {
            id: id.into(),
            class_names,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = self.class_counts();
        if let Some(s) = self.samples.iter().find(|s| s.class_id >= self.class_names.len()) {
            return Err(Error::invalid(format!(
                "sample {} has class id {} but only {} classes exist",
                s.source,
                s.class_id,
                self.class_names.len()
            )));
        }
        if let Some(pos) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(self.class_names[pos].clone()));
        }
        if let Some(first) = self.samples.first() {
            let dims = first.image.dims();
            if let Some(s) = self.samples.iter().find(|s| s.image.dims() != dims) {
                return Err(Error::NonUniformImage {
                    path: s.source.clone().into(),
                    got: s.image.dims(),
                    expected: dims,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.class_id) {
                *c += 1;
            }
        }
        counts
    }

    /// Image side length, if the dataset is non-empty.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| s.image.dims())
    }

    pub fn images(&self) -> Vec<Arc<Image>> {
        self.samples.iter().map(|s| Arc::clone(&s.image)).collect()
    }

    /// Sub-dataset holding the given classes (in the given order), re-indexed
    /// `0..classes.len()`.
    pub fn select_classes(&self, id: impl Into<String>, classes: &[usize]) -> Dataset {
        let remap: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                remap.get(&s.class_id).map(|&new_id| Sample {
                    image: Arc::clone(&s.image),
                    class_id: new_id,
                    source: s.source.clone(),
                })
            })
            .collect();
        Dataset {
            id: id.into(),
            class_names: classes.iter().map(|&c| self.class_names[c].clone()).collect(),
            samples,
        }
    }

    /// Resizes every image to `size × size`.
    pub fn resized(&self, size: usize) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                image: if s.image.height() == size && s.image.width() == size {
                    Arc::clone(&s.image)
                } else {
                    Arc::new(s.image.resize(size, size))
                },
                class_id: s.class_id,
                source: s.source.clone(),
            })
            .collect();
        Dataset {
            id: self.id.clone(),
            class_names: self.class_names.clone(),
            samples,
        }
    }
}

/// Splits off the `n_rare` smallest classes (ties by class name, ascending)
/// as the rare dataset; the remaining classes form the base dataset.
pub fn split_base_rare(dataset: &Dataset, n_rare: usize) -> Result<(Dataset, Dataset)> {
    let n = dataset.n_classes();
    if n_rare >= n {
        return Err(Error::invalid(format!(
            "n_rare = {n_rare} must be smaller than the number of classes ({n})"
        )));
    }
    let counts = dataset.class_counts();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        counts[a]
            .cmp(&counts[b])
            .then_with(|| dataset.class_names[a].cmp(&dataset.class_names[b]))
    });
    let mut rare: Vec<usize> = order[..n_rare].to_vec();
    rare.sort_unstable();
    let base: Vec<usize> = (0..n).filter(|c| !rare.contains(c)).collect();
    Ok((
        dataset.select_classes(format!("{}/base", dataset.id), &base),
        dataset.select_classes(format!("{}/rare", dataset.id), &rare),
    ))
}
