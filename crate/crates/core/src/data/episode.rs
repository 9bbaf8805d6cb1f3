use std::sync::Arc;

use rand::seq::{index, SliceRandom};

use super::dataset::Dataset;
use super::image::Image;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// One labeled image inside a task. `index` points back into the rare
/// dataset and serves as the sample identity.
#[derive(Clone, Debug)]
pub struct TaskSample {
    pub index: usize,
    pub image: Arc<Image>,
    /// Task label in `0..n_way`.
    pub label: usize,
}

/// An N-way K-shot task: K support images per class, every other image of
/// the sampled classes in the query set.
#[derive(Clone, Debug)]
pub struct EpisodeTask {
    pub n_way: usize,
    pub k_shot: usize,
    pub seed: u64,
    /// `classes[label]` is the rare-dataset class id behind task label `label`.
    pub classes: Vec<usize>,
    pub support: Vec<TaskSample>,
    pub query: Vec<TaskSample>,
}

impl EpisodeTask {
    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|s| s.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|s| s.label).collect()
    }

    pub fn support_images(&self) -> Vec<Arc<Image>> {
        self.support.iter().map(|s| Arc::clone(&s.image)).collect()
    }

    pub fn query_images(&self) -> Vec<Arc<Image>> {
        self.query.iter().map(|s| Arc::clone(&s.image)).collect()
    }
}

/// Samples a task. When the rare dataset has exactly `n_way` classes all of
/// them are used in class-id order; otherwise `n_way` classes are drawn
/// under the seed and kept in ascending class-id order.
pub fn sample_task(rare: &Dataset, n_way: usize, k_shot: usize, seed: u64) -> Result<EpisodeTask> {
    if n_way == 0 || k_shot == 0 {
        return Err(Error::invalid("N and K must be positive"));
    }
    if rare.n_classes() < n_way {
        return Err(Error::invalid(format!(
            "rare dataset has {} classes, task needs N = {n_way}",
            rare.n_classes()
        )));
    }
    let mut rng = rng::rng_at(seed, &[stream::TASK]);
    let mut classes: Vec<usize> = if rare.n_classes() == n_way {
        (0..n_way).collect()
    } else {
        index::sample(&mut rng, rare.n_classes(), n_way).into_vec()
    };
    classes.sort_unstable();

    let counts = rare.class_counts();
    for &c in &classes {
        if counts[c] <= k_shot {
            return Err(Error::ClassTooSmall {
                class: rare.class_names[c].clone(),
                count: counts[c],
                k: k_shot,
            });
        }
    }

    let mut in_support = vec![false; rare.len()];
    let mut support = Vec::with_capacity(n_way * k_shot);
    for (label, &c) in classes.iter().enumerate() {
        let mut members: Vec<usize> = rare
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.class_id == c)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        for &i in &members[..k_shot] {
            in_support[i] = true;
            support.push(TaskSample {
                index: i,
                image: Arc::clone(&rare.samples[i].image),
                label,
            });
        }
    }

    let query = rare
        .samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !in_support[*i])
        .filter_map(|(i, s)| {
            classes.iter().position(|&c| c == s.class_id).map(|label| TaskSample {
                index: i,
                image: Arc::clone(&s.image),
                label,
            })
        })
        .collect();

    Ok(EpisodeTask {
        n_way,
        k_shot,
        seed,
        classes,
        support,
        query,
    })
}
