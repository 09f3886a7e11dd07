use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training, Matrix, Regressor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraTreesParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all of them.
    #[serde(default)]
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ExtraTreesParams {
    fn default() -> Self {
        ExtraTreesParams {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 2,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "node", rename_all = "lowercase")]
enum Node<T> {
    Leaf {
        value: T,
    },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    fn predict(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Extremely randomized trees: at each node every candidate feature gets one
/// uniformly drawn threshold between its node minimum and maximum, and the
/// candidate with the largest variance reduction wins. Prediction averages
/// the leaf means of all trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ExtraTrees<T> {
    params: ExtraTreesParams,
    n_features: usize,
    trees: Vec<Tree<T>>,
}

struct Builder<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [T],
    params: ExtraTreesParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Builder<'_, T> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mean = idx.iter().map(|&i| self.y[i].f64()).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value: T::of(mean) });
        self.nodes.len() - 1
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf.max(1) || pure {
            return self.leaf(idx);
        }
        let n_features = self.x.cols();
        let k = self.params.max_features.unwrap_or(n_features).clamp(1, n_features);
        let features: Vec<usize> = if k == n_features {
            (0..n_features).collect()
        } else {
            let mut f = sample(&mut self.rng, n_features, k).into_vec();
            f.sort_unstable();
            f
        };

        let mut best: Option<(f64, usize, T)> = None;
        for f in features {
            let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
            for &i in idx.iter() {
                let v = self.x.row(i)[f];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let u: f64 = self.rng.random();
            if !(hi > lo) {
                continue;
            }
            let threshold = lo + (hi - lo) * T::of(u);
            let (mut nl, mut sl, mut sr) = (0usize, 0.0f64, 0.0f64);
            for &i in idx.iter() {
                let t = self.y[i].f64();
                if self.x.row(i)[f] <= threshold {
                    nl += 1;
                    sl += t;
                } else {
                    sr += t;
                }
            }
            let nr = n - nl;
            let min_leaf = self.params.min_leaf.max(1);
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            // maximising this is minimising the children's squared error
            let score = sl * sl / nl as f64 + sr * sr / nr as f64;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, threshold));
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };

        let x = self.x;
        let mut split = 0;
        for j in 0..n {
            if x.row(idx[j])[feature] <= threshold {
                idx.swap(split, j);
                split += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: T::zero() });
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

impl<T: Scalar> ExtraTrees<T> {
    pub fn fit(x: &Matrix<T>, y: &[T], params: ExtraTreesParams) -> Result<Self> {
        check_training(x, y.len())?;
        if params.n_trees == 0 {
            return Err(Error::Fit("n_trees must be at least 1".into()));
        }
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let mut b = Builder {
                    x,
                    y,
                    params,
                    rng,
                    nodes: Vec::new(),
                };
                let mut idx: Vec<usize> = (0..x.rows()).collect();
                b.build(&mut idx, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(ExtraTrees {
            params,
            n_features: x.cols(),
            trees,
        })
    }

    pub fn params(&self) -> &ExtraTreesParams {
        &self.params
    }

    pub fn trees(&self) -> &[Tree<T>] {
        &self.trees
    }
}

impl<T: Scalar> Regressor<T> for ExtraTrees<T> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row_raw(&self, x: &[T]) -> T {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x).f64()).sum();
        T::of(sum / self.trees.len() as f64)
    }

    fn predict_raw(&self, x: &Matrix<T>) -> Vec<T> {
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_row_raw(x.row(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix<f64>, Vec<f64>) {
        // two clusters on one feature: x = 0 and x = 1
        let rows: Vec<Vec<f64>> = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0].iter().map(|v| vec![*v]).collect();
        (
            Matrix::from_rows(&rows).unwrap(),
            vec![0.1, 0.2, 0.3, 0.6, 0.7, 0.8, 0.9],
        )
    }

    #[test]
    fn constant_target_gives_constant_prediction() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect::<Vec<_>>()).unwrap();
        let y = vec![0.3; 20];
        let m = ExtraTrees::fit(
            &x,
            &y,
            ExtraTreesParams {
                n_trees: 5,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let p = m.predict_row(&[4.5, 1.0]);
        assert!((p - 0.3).abs() < 1e-15);
        for i in 0..20 {
            assert_eq!(m.predict_row(x.row(i)), p);
        }
    }

    #[test]
    fn single_stump_matches_cluster_means() {
        let (x, y) = toy();
        let params = ExtraTreesParams {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            max_features: None,
            seed: 42,
        };
        let m = ExtraTrees::fit(&x, &y, params).unwrap();
        assert_eq!(m.trees()[0].n_leaves(), 2);
        // hand-computed leaf means
        let left = (0.1 + 0.2 + 0.3) / 3.0;
        let right = (0.6 + 0.7 + 0.8 + 0.9) / 4.0;
        assert!((m.predict_row(&[0.0]) - left).abs() < 1e-15);
        assert!((m.predict_row(&[1.0]) - right).abs() < 1e-15);
        assert!((m.predict_row(&[-5.0]) - left).abs() < 1e-15);
        assert!((m.predict_row(&[5.0]) - right).abs() < 1e-15);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let x = Matrix::from_rows(
            &(0..60)
                .map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y: Vec<f64> = (0..60).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let p = ExtraTreesParams {
            n_trees: 8,
            max_features: Some(2),
            seed: 9,
            ..Default::default()
        };
        let a = ExtraTrees::fit(&x, &y, p).unwrap();
        let b = ExtraTrees::fit(&x, &y, p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&x), b.predict(&x));
        let c = ExtraTrees::fit(&x, &y, ExtraTreesParams { seed: 10, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_row_is_a_leaf() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let m = ExtraTrees::fit(&x, &[0.4], ExtraTreesParams::default()).unwrap();
        assert!((m.predict_row(&[9.0, 9.0]) - 0.4f64).abs() < 1e-12);
        assert!(ExtraTrees::fit(
            &x,
            &[0.4],
            ExtraTreesParams {
                n_trees: 0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn min_leaf_is_respected() {
        let x = Matrix::from_rows(&(0..40).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let m = ExtraTrees::fit(
            &x,
            &y,
            ExtraTreesParams {
                n_trees: 3,
                min_leaf: 10,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for t in m.trees() {
            assert!(t.n_leaves() <= 4);
        }
    }
}
