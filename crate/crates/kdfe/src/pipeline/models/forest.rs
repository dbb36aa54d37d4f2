//! Random forest: Gini-split trees on bootstrap samples with sqrt(d) feature
//! subsampling per split. The prediction score is the mean of the per-tree
//! leaf positive fractions.

use crate::pipeline::frame::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn score(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { positive_fraction } => return *positive_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

const MIN_SAMPLES_SPLIT: usize = 2;

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [bool],
    max_depth: Option<usize>,
    features_per_split: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, indices: &[usize]) -> usize {
        let positives = indices.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            positive_fraction: positives as f64 / indices.len().max(1) as f64,
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, indices: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let positives = indices.iter().filter(|&&i| self.y[i]).count();
        let pure = positives == 0 || positives == indices.len();
        let depth_reached = self.max_depth.map_or(false, |d| depth >= d);
        if pure || depth_reached || indices.len() < MIN_SAMPLES_SPLIT {
            return self.leaf(indices);
        }
        // sqrt(d) random feature candidates per split.
        let mut candidates: Vec<usize> = (0..self.x.cols).collect();
        for i in 0..self.features_per_split.min(candidates.len()) {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
        }
        candidates.truncate(self.features_per_split);
        candidates.sort_unstable();

        let parent_gini = gini(positives, indices.len());
        let mut best: Option<(f64, usize, f64)> = None; // (impurity decrease, feature, threshold)
        for &feature in &candidates {
            indices.sort_by(|&a, &b| {
                self.x
                    .get(a, feature)
                    .partial_cmp(&self.x.get(b, feature))
                    .unwrap()
            });
            let total_pos = positives;
            let n = indices.len();
            let mut left_pos = 0usize;
            for split in 1..n {
                if self.y[indices[split - 1]] {
                    left_pos += 1;
                }
                let prev = self.x.get(indices[split - 1], feature);
                let here = self.x.get(indices[split], feature);
                if prev == here {
                    continue;
                }
                let left_n = split;
                let right_n = n - split;
                let right_pos = total_pos - left_pos;
                let weighted = (left_n as f64 * gini(left_pos, left_n)
                    + right_n as f64 * gini(right_pos, right_n))
                    / n as f64;
                let decrease = parent_gini - weighted;
                let threshold = 0.5 * (prev + here);
                let better = match best {
                    None => decrease > 1e-12,
                    Some((best_dec, best_feat, best_thr)) => {
                        decrease > best_dec + 1e-12
                            || ((decrease - best_dec).abs() <= 1e-12
                                && (feature, threshold) < (best_feat, best_thr))
                    }
                };
                if better {
                    best = Some((decrease, feature, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(indices);
        };
        let mut left: Vec<usize> = Vec::new();
        let mut right: Vec<usize> = Vec::new();
        for &i in indices.iter() {
            if self.x.get(i, feature) <= threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive_fraction: 0.0, // placeholder, replaced below
        });
        let left_node = self.build(&mut left, depth + 1, rng);
        let right_node = self.build(&mut right, depth + 1, rng);
        self.nodes[node] = Node::Split {
            feature,
            threshold,
            left: left_node,
            right: right_node,
        };
        node
    }
}

fn gini(positives: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = positives as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Builds `n_trees` bootstrap trees. Tree i is seeded from (seed, i), so the
/// first k trees of a larger forest are exactly the k-tree forest — the CV
/// grid evaluates n_estimators prefixes of one build.
pub fn fit_trees(
    x: &Matrix,
    y: &[bool],
    n_trees: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> Vec<Tree> {
    let features_per_split = (x.cols as f64).sqrt().ceil() as usize;
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9e3779b97f4a7c15));
            let mut indices: Vec<usize> =
                (0..x.rows).map(|_| rng.random_range(0..x.rows)).collect();
            let mut builder = TreeBuilder {
                x,
                y,
                max_depth,
                features_per_split: features_per_split.max(1),
                nodes: Vec::new(),
            };
            builder.build(&mut indices, 0, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect()
}

pub fn forest_scores(trees: &[Tree], x: &Matrix) -> Vec<f64> {
    (0..x.rows)
        .into_par_iter()
        .map(|r| {
            let row = x.row(r);
            trees.iter().map(|t| t.score(row)).sum::<f64>() / trees.len().max(1) as f64
        })
        .collect()
}

impl ForestModel {
    pub fn fit(x: &Matrix, y: &[bool], n_trees: usize, max_depth: Option<usize>, seed: u64) -> Self {
        ForestModel {
            trees: fit_trees(x, y, n_trees, max_depth, seed),
        }
    }

    pub fn predict_scores(&self, x: &Matrix) -> Vec<f64> {
        forest_scores(&self.trees, x)
    }
}
