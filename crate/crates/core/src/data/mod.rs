//! Datasets, the 3:1:1 stratified split, and non-IID partitioning of the
//! training split across nodes and edges.

mod idx;
mod partition;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Example;
use crate::rng::{self, purpose};

pub use idx::{load_idx, parse_idx};
pub use partition::{
    partition, ClassFraction, DiversitySetting, NodeData, Partition, PartitionConfig, PartitionDoc,
    EdgeClasses, Placement,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub input_dim: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, examples: Vec<Example>) -> Result<Self> {
        let input_dim = examples.first().map(|e| e.features.len()).unwrap_or(0);
        if examples.is_empty() {
            return Err(Error::Domain("dataset must not be empty".into()));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= num_classes {
                return Err(Error::Domain(format!("example {i} has label {} >= {num_classes}", ex.label)));
            }
            if ex.features.len() != input_dim {
                return Err(Error::Shape(format!("example {i} has {} features, expected {input_dim}", ex.features.len())));
            }
        }
        Ok(Dataset { name: name.into(), num_classes, input_dim, examples })
    }

    fn subset(&self, suffix: &str, indices: &[usize]) -> Dataset {
        Dataset {
            name: format!("{}/{suffix}", self.name),
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Indices of the examples of each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, ex) in self.examples.iter().enumerate() {
            by_class[ex.label].push(i);
        }
        by_class
    }
}

/// Isotropic Gaussian blobs (sigma 0.3), one centre per class drawn uniformly
/// from `[-1, 1]^input_dim`. Examples are emitted class by class.
pub fn synth_blobs(num_classes: usize, input_dim: usize, per_class: usize, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || input_dim == 0 || per_class == 0 {
        return Err(Error::Domain("synth_blobs arguments must be positive".into()));
    }
    let mut rng = rng::stream(seed, purpose::BLOBS, 0);
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..input_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.3).expect("valid sigma");
    let mut examples = Vec::with_capacity(num_classes * per_class);
    for (label, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            let x = centre.iter().map(|m| m + noise.sample(&mut rng)).collect();
            examples.push(Example::new(x, label));
        }
    }
    Dataset::new(format!("blobs-{num_classes}x{input_dim}"), num_classes, examples)
}

/// Train, validation and test splits in ratio 3:1:1.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Class-stratified 3:1:1 split. Each class contributes `round(n/5)` examples
/// to validation and to test and the rest to training.
pub fn split(ds: &Dataset, seed: u64) -> Result<Splits> {
    if ds.len() < 5 {
        return Err(Error::Domain(format!("cannot split {} examples 3:1:1", ds.len())));
    }
    let mut rng = rng::stream(seed, purpose::SPLIT, 0);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut members) in ds.indices_by_class().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 5 {
            log::warn!("class {class} has only {} examples; split proportions are approximate", members.len());
        }
        members.shuffle(&mut rng);
        let fifth = (members.len() as f64 / 5.0).round() as usize;
        val.extend_from_slice(&members[..fifth]);
        test.extend_from_slice(&members[fifth..2 * fifth]);
        train.extend_from_slice(&members[2 * fifth..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok(Splits {
        train: ds.subset("train", &train),
        val: ds.subset("val", &val),
        test: ds.subset("test", &test),
    })
}
