//! Random forest classifier over the eight score labels.
//!
//! Each tree is grown on a bootstrap sample with Gini splits, examining
//! `ceil(sqrt(cols))` random features per node (more if none of those can
//! split), until nodes are pure or cannot be split. Tree `t` draws from its own
//! ChaCha stream of the forest seed, so trees can be fit in parallel.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, RowView, MAX_SCORE};

pub const N_LABELS: usize = MAX_SCORE as usize + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        counts: [u32; N_LABELS],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_estimators: usize,
    pub seed: u64,
    pub n_features: usize,
}

/// Index of the largest count; ties go to the lower label.
fn argmax<T: PartialOrd + Copy>(counts: &[T]) -> u8 {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best as u8
}

impl DecisionTree {
    pub fn leaf_counts(&self, row: RowView<'_>) -> &[u32; N_LABELS] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row.get(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict(&self, row: RowView<'_>) -> u8 {
        argmax(self.leaf_counts(row))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct TreeBuilder<'a> {
    data: &'a [Vec<f64>],
    labels: &'a [u8],
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

fn gini_sum(counts: &[u32; N_LABELS], n: u32) -> f64 {
    // n * gini, so children can be added directly
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n - sq / n
}

impl TreeBuilder<'_> {
    fn counts(&self, samples: &[usize]) -> [u32; N_LABELS] {
        let mut counts = [0u32; N_LABELS];
        for &s in samples {
            counts[self.labels[s] as usize] += 1;
        }
        counts
    }

    fn grow(&mut self, samples: &mut [usize]) -> usize {
        let counts = self.counts(samples);
        let id = self.nodes.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || samples.len() < 2 {
            None
        } else {
            self.best_split(samples, &counts)
        };
        let Some(split) = split else {
            self.nodes.push(Node::Leaf { counts });
            return id;
        };
        self.nodes.push(Node::Leaf { counts });

        let mut mid = 0;
        for i in 0..samples.len() {
            if self.data[samples[i]][split.feature] <= split.threshold {
                samples.swap(i, mid);
                mid += 1;
            }
        }
        let (lo, hi) = samples.split_at_mut(mid);
        let left = self.grow(lo);
        let right = self.grow(hi);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, samples: &[usize], counts: &[u32; N_LABELS]) -> Option<BestSplit> {
        let n_features = self.data[0].len();
        let mut features: Vec<usize> = (0..n_features).collect();
        features.shuffle(&mut self.rng);

        let total = samples.len() as u32;
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<(f64, u8)> = Vec::with_capacity(samples.len());
        for (visited, &f) in features.iter().enumerate() {
            if visited >= self.max_features && best.is_some() {
                break;
            }
            order.clear();
            order.extend(samples.iter().map(|&s| (self.data[s][f], self.labels[s])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            let mut left = [0u32; N_LABELS];
            let mut right = *counts;
            for i in 0..order.len() - 1 {
                let label = order[i].1 as usize;
                left[label] += 1;
                right[label] -= 1;
                let (a, b) = (order[i].0, order[i + 1].0);
                if a == b {
                    continue;
                }
                let n_left = i as u32 + 1;
                let impurity = gini_sum(&left, n_left) + gini_sum(&right, total - n_left);
                if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

fn dense(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|i| x.dense_row(i)).collect()
}

pub fn fit_tree(data: &[Vec<f64>], labels: &[u8], sample: &mut [usize], max_features: usize, rng: ChaCha8Rng) -> DecisionTree {
    let mut builder = TreeBuilder {
        data,
        labels,
        max_features,
        rng,
        nodes: Vec::new(),
    };
    builder.grow(sample);
    DecisionTree {
        nodes: builder.nodes,
    }
}

pub fn fit_forest(x: &FeatureMatrix, y: &[u8], n_estimators: usize, seed: u64) -> Result<ForestModel> {
    if x.rows() == 0 || y.len() != x.rows() {
        return Err(Error::Contract(format!(
            "forest needs >= 1 example with one label per row ({} rows, {} labels)",
            x.rows(),
            y.len()
        )));
    }
    if n_estimators == 0 {
        return Err(Error::Config("n_estimators must be at least 1".into()));
    }
    if let Some(bad) = y.iter().find(|&&l| l > MAX_SCORE) {
        return Err(Error::Contract(format!("label {bad} outside 0-7")));
    }
    let data = dense(x);
    let n = x.rows();
    let max_features = ((x.cols() as f64).sqrt().ceil() as usize).max(1);

    let trees = (0..n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            if x.cols() == 0 {
                let mut counts = [0u32; N_LABELS];
                sample.iter().for_each(|&s| counts[y[s] as usize] += 1);
                return DecisionTree {
                    nodes: vec![Node::Leaf { counts }],
                };
            }
            fit_tree(&data, y, &mut sample, max_features, rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_estimators,
        seed,
        n_features: x.cols(),
    })
}

/// Per-label vote counts; they sum to the number of trees.
pub fn forest_votes(model: &ForestModel, row: RowView<'_>) -> [usize; N_LABELS] {
    let mut votes = [0usize; N_LABELS];
    for tree in &model.trees {
        votes[tree.predict(row) as usize] += 1;
    }
    votes
}

/// Majority vote, ties to the lower label.
pub fn predict_forest(model: &ForestModel, row: RowView<'_>) -> u8 {
    argmax(&forest_votes(model, row))
}
