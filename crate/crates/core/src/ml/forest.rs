//! CART random forest with Gini impurity splits.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{class_index, MlError};
use crate::sampler::{derive_seed, SeedPart};

/// How many features each split may inspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    /// `ceil(sqrt(d))`
    Sqrt,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            FeaturesPerSplit::All => n_features,
            FeaturesPerSplit::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestSpec {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub features_per_split: FeaturesPerSplit,
    pub min_samples_split: usize,
    /// Pick `max_depth` and `features_per_split` from a small grid on an
    /// inner validation split before the final fit (see `ml::evaluate`).
    pub grid_search: bool,
    /// Grow trees on the rayon pool. Results are identical either way.
    pub parallel: bool,
    pub seed: u64,
}

impl Default for RandomForestSpec {
    fn default() -> Self {
        RandomForestSpec {
            n_trees: 200,
            max_depth: None,
            features_per_split: FeaturesPerSplit::Sqrt,
            min_samples_split: 2,
            grid_search: false,
            parallel: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        class: u16,
    },
    Split {
        feature: u32,
        /// Rows with `value <= threshold` go left.
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    fn predict_row(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class as usize,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let next = if row[feature as usize] <= threshold { left } else { right };
                    at = next as usize;
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub spec: RandomForestSpec,
    pub classes: Vec<u8>,
    pub n_features: usize,
    trees: Vec<DecisionTree>,
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Rows `..left_len` of the sorted node go left.
    left_len: usize,
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    max_depth: usize,
    min_samples_split: usize,
}

fn majority(counts: &[usize]) -> usize {
    // first maximum, i.e. the lowest class wins ties
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> DecisionTree {
        let mut nodes = Vec::new();
        let mut stack = vec![(rows, 0usize, None::<(usize, bool)>)];
        let mut order: Vec<usize> = (0..self.x.ncols()).collect();
        let mut scratch = Vec::new();

        while let Some((mut rows, depth, parent)) = stack.pop() {
            let at = nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = at as u32;
                    } else {
                        *right = at as u32;
                    }
                }
            }

            let counts = self.counts(&rows);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || rows.len() < self.min_samples_split || depth >= self.max_depth {
                None
            } else {
                order.shuffle(rng);
                self.best_split(&mut rows, &order, &counts, &mut scratch)
            };

            match split {
                None => nodes.push(Node::Leaf {
                    class: majority(&counts) as u16,
                }),
                Some(s) => {
                    nodes.push(Node::Split {
                        feature: s.feature as u32,
                        threshold: s.threshold,
                        left: 0,
                        right: 0,
                    });
                    let x = self.x;
                    rows.sort_by(|&a, &b| x[[a, s.feature]].total_cmp(&x[[b, s.feature]]));
                    let right = rows.split_off(s.left_len);
                    // right pushed first so the left subtree is laid out next
                    stack.push((right, depth + 1, Some((at, false))));
                    stack.push((rows, depth + 1, Some((at, true))));
                }
            }
        }
        DecisionTree { nodes }
    }

    /// Scans features in `order`, skipping ones that are constant on this
    /// node, until `max_features` usable features have been inspected.
    fn best_split(
        &self,
        rows: &mut [usize],
        order: &[usize],
        totals: &[usize],
        scratch: &mut Vec<(f64, usize)>,
    ) -> Option<Split> {
        let n = rows.len();
        let mut inspected = 0;
        let mut best: Option<(f64, Split)> = None;
        let mut left = vec![0usize; self.n_classes];

        for &f in order {
            if inspected == self.max_features {
                break;
            }
            scratch.clear();
            scratch.extend(rows.iter().map(|&r| (self.x[[r, f]], self.y[r])));
            let (lo, hi) = scratch
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(v, _)| (lo.min(v), hi.max(v)));
            if lo == hi {
                continue;
            }
            inspected += 1;
            scratch.sort_by(|a, b| a.0.total_cmp(&b.0));

            left.iter_mut().for_each(|c| *c = 0);
            // sum_k n_k^2 / n on each side; maximizing it minimizes the
            // weighted Gini impurity of the children
            let mut left_sq = 0.0;
            let mut right_sq: f64 = totals.iter().map(|&c| (c * c) as f64).sum();
            for i in 0..n - 1 {
                let (v, k) = scratch[i];
                let l = left[k] as f64;
                let r = (totals[k] - left[k]) as f64;
                left_sq += 2.0 * l + 1.0;
                right_sq -= 2.0 * r - 1.0;
                left[k] += 1;
                let next = scratch[i + 1].0;
                if v == next {
                    continue;
                }
                let n_left = (i + 1) as f64;
                let score = left_sq / n_left + right_sq / (n as f64 - n_left);
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((
                        score,
                        Split {
                            feature: f,
                            threshold: v,
                            left_len: i + 1,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }
}

pub fn train_random_forest(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    spec: &RandomForestSpec,
) -> Result<RandomForest, MlError> {
    if spec.n_trees == 0 {
        return Err(MlError::InvalidSpec("n_trees must be at least 1".into()));
    }
    let (classes, y) = class_index(labels, x.nrows())?;
    if classes.len() < 2 {
        return Err(MlError::SingleClass(classes[0]));
    }
    let builder = Builder {
        x,
        y: &y,
        n_classes: classes.len(),
        max_features: spec.features_per_split.resolve(x.ncols()),
        max_depth: spec.max_depth.unwrap_or(usize::MAX),
        min_samples_split: spec.min_samples_split.max(2),
    };
    let n = x.nrows();
    let grow = |t: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            spec.seed,
            &[SeedPart::Tag("tree"), SeedPart::Int(t as u64)],
        ));
        let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        builder.grow(rows, &mut rng)
    };
    let trees = if spec.parallel {
        (0..spec.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..spec.n_trees).map(grow).collect()
    };
    Ok(RandomForest {
        spec: spec.clone(),
        classes,
        n_features: x.ncols(),
        trees,
    })
}

impl RandomForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Majority vote over trees; ties go to the lowest class id.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u8>, MlError> {
        if x.ncols() != self.n_features {
            return Err(MlError::SchemaMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let mut votes = vec![0usize; self.classes.len()];
        let mut row = Vec::with_capacity(self.n_features);
        Ok(x
            .rows()
            .into_iter()
            .map(|r| {
                row.clear();
                row.extend(r.iter().copied());
                votes.iter_mut().for_each(|v| *v = 0);
                for t in &self.trees {
                    votes[t.predict_row(&row)] += 1;
                }
                self.classes[majority(&votes)]
            })
            .collect())
    }
}
