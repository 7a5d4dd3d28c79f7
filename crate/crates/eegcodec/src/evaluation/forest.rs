//! Seeded CART decision tree and bagged random forest for the downstream
//! benchmarks. Gini impurity, midpoint thresholds, deterministic
//! tie-breaking (lowest feature index, then lowest threshold).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct FitCtx<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    features_per_split: usize,
}

fn gini(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    counts
        .iter()
        .enumerate()
        .max_by_key(|(i, &c)| (c, std::cmp::Reverse(*i)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

impl DecisionTree {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        max_depth: usize,
        features_per_split: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert_eq!(x.len(), y.len());
        let ctx = FitCtx { x, y, n_classes, max_depth, features_per_split };
        let mut tree = DecisionTree { nodes: Vec::new() };
        let rows: Vec<usize> = (0..x.len()).collect();
        tree.grow(&ctx, &rows, 0, rng);
        tree
    }

    fn grow(&mut self, ctx: &FitCtx, rows: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut counts = vec![0usize; ctx.n_classes];
        for &r in rows {
            counts[ctx.y[r]] += 1;
        }
        let node_gini = gini(&counts);
        if depth >= ctx.max_depth || rows.len() < 2 || node_gini == 0.0 {
            self.nodes.push(Node::Leaf { class: majority(&counts) });
            return self.nodes.len() - 1;
        }

        let n_features = ctx.x[0].len();
        let candidates: Vec<usize> = if ctx.features_per_split >= n_features {
            (0..n_features).collect()
        } else {
            // distinct random feature subset, order-normalized
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < ctx.features_per_split {
                picked.insert(rng.gen_range(0..n_features));
            }
            picked.into_iter().collect()
        };

        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        for &f in &candidates {
            let mut values: Vec<(f64, usize)> =
                rows.iter().map(|&r| (ctx.x[r][f], ctx.y[r])).collect();
            values.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut left = vec![0usize; ctx.n_classes];
            let mut right = counts.clone();
            for i in 0..values.len() - 1 {
                left[values[i].1] += 1;
                right[values[i].1] -= 1;
                if values[i].0 == values[i + 1].0 {
                    continue;
                }
                let threshold = 0.5 * (values[i].0 + values[i + 1].0);
                let nl = (i + 1) as f64;
                let nr = (values.len() - i - 1) as f64;
                let impurity =
                    (nl * gini(&left) + nr * gini(&right)) / values.len() as f64;
                let candidate = (impurity, f, threshold);
                let better = match &best {
                    None => true,
                    Some((bi, bf, bt)) => {
                        impurity < *bi - 1e-12
                            || ((impurity - bi).abs() <= 1e-12
                                && (f < *bf || (f == *bf && threshold < *bt)))
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }

        let Some((impurity, feature, threshold)) = best else {
            self.nodes.push(Node::Leaf { class: majority(&counts) });
            return self.nodes.len() - 1;
        };
        if impurity >= node_gini - 1e-12 {
            self.nodes.push(Node::Leaf { class: majority(&counts) });
            return self.nodes.len() - 1;
        }

        let (lrows, rrows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| ctx.x[r][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { class: 0 }); // placeholder
        let left = self.grow(ctx, &lrows, depth + 1, rng);
        let right = self.grow(ctx, &rrows, depth + 1, rng);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

impl RandomForest {
    /// 200 bagged trees, sqrt-feature subsampling per split.
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, n_trees: usize, seed: u64) -> Self {
        let n = x.len();
        let n_features = x[0].len();
        let per_split = (n_features as f64).sqrt().ceil() as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for tree_idx in 0..n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (tree_idx as u64).wrapping_mul(0x9E3779B9));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let bx: Vec<Vec<f64>> = rows.iter().map(|&r| x[r].clone()).collect();
            let by: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            trees.push(DecisionTree::fit(&bx, &by, n_classes, 64, per_split, &mut rng));
        }
        RandomForest { trees, n_classes }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        majority(&votes)
    }
}

/// Fraction of correct predictions.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -1.0 } else { 1.0 };
            x.push(vec![
                center + rng.gen_range(-0.3..0.3),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            y.push(class);
        }
        (x, y)
    }

    #[test]
    fn tree_fits_separable_data() {
        let (x, y) = separable(60, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = DecisionTree::fit(&x, &y, 2, 8, 3, &mut rng);
        let preds: Vec<usize> = x.iter().map(|r| tree.predict(r)).collect();
        assert_eq!(accuracy(&preds, &y), 1.0);
    }

    #[test]
    fn forest_generalizes_and_is_deterministic() {
        let (xtr, ytr) = separable(80, 3);
        let (xte, yte) = separable(40, 4);
        let f1 = RandomForest::fit(&xtr, &ytr, 2, 50, 7);
        let f2 = RandomForest::fit(&xtr, &ytr, 2, 50, 7);
        let p1: Vec<usize> = xte.iter().map(|r| f1.predict(r)).collect();
        let p2: Vec<usize> = xte.iter().map(|r| f2.predict(r)).collect();
        assert_eq!(p1, p2, "same seed, same predictions");
        assert!(accuracy(&p1, &yte) > 0.9);
    }

    #[test]
    fn permuted_labels_score_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (xtr, ytr) = separable(200, 6);
        let shuffled: Vec<usize> = {
            let mut y = ytr.clone();
            for i in (1..y.len()).rev() {
                let j = rng.gen_range(0..=i);
                y.swap(i, j);
            }
            y
        };
        let (xte, yte) = separable(100, 8);
        let f = RandomForest::fit(&xtr, &shuffled, 2, 50, 9);
        let preds: Vec<usize> = xte.iter().map(|r| f.predict(r)).collect();
        let acc = accuracy(&preds, &yte);
        assert!((acc - 0.5).abs() < 0.15, "chance-level accuracy, got {acc}");
    }
}
