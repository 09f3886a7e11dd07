use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{r2_score, Matrix, Model, ModelSpec, R2Variant, Regressor, SavedEnsemble, MODEL_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Weighted mean of member predictions, per sample.
///
/// The dot product is clamped to the per-sample member range, so identical
/// members reproduce their prediction exactly and the result is always a
/// convex combination.
pub fn combine<T: Scalar>(member_preds: &[Vec<T>], weights: &[T]) -> Vec<T> {
    let n = member_preds.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut acc = 0.0f64;
            let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
            for (p, w) in member_preds.iter().zip(weights) {
                let v = p[i];
                acc += w.f64() * v.f64();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            T::of(acc).max(lo).min(hi)
        })
        .collect()
}

fn check_weights<T: Scalar>(weights: &[T], members: usize) -> Result<()> {
    if weights.len() != members {
        return Err(Error::Parameter(format!(
            "{} weights for {members} members",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.f64() >= 0.0) || !w.is_finite()) {
        return Err(Error::Parameter("ensemble weights must be non-negative".into()));
    }
    let sum: f64 = weights.iter().map(|w| w.f64()).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Parameter(format!("ensemble weights sum to {sum}, not 1")));
    }
    Ok(())
}

fn uniform<T: Scalar>(m: usize) -> Vec<T> {
    vec![T::one() / T::of_usize(m); m]
}

/// Convex combination of fitted regressors.
#[derive(Clone, Debug, PartialEq)]
pub struct VotingEnsemble<T> {
    specs: Vec<ModelSpec>,
    names: Vec<String>,
    members: Vec<Model<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> VotingEnsemble<T> {
    /// Uniform weights when `weights` is `None`.
    pub fn new(members: Vec<(ModelSpec, Model<T>)>, weights: Option<Vec<T>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Parameter("an ensemble needs at least one member".into()));
        }
        let weights = weights.unwrap_or_else(|| uniform(members.len()));
        check_weights(&weights, members.len())?;
        let n_features = members[0].1.n_features();
        if members.iter().any(|(_, m)| m.n_features() != n_features) {
            return Err(Error::Parameter("ensemble members disagree on feature count".into()));
        }
        let (specs, members): (Vec<_>, Vec<_>) = members.into_iter().unzip();
        Ok(VotingEnsemble {
            names: specs.iter().map(ToString::to_string).collect(),
            specs,
            members,
            weights,
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self) -> &[Model<T>] {
        &self.members
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        check_weights(&weights, self.members.len())?;
        self.weights = weights;
        Ok(self)
    }

    /// Clamped predictions of every member.
    pub fn member_predictions(&self, x: &Matrix<T>) -> Vec<Vec<T>> {
        self.members.iter().map(|m| m.predict(x)).collect()
    }

    pub fn to_saved(&self) -> SavedEnsemble<T> {
        SavedEnsemble {
            format_version: MODEL_FORMAT_VERSION,
            names: self.names.clone(),
            specs: self.specs.clone(),
            weights: self.weights.clone(),
            members: self.members.clone(),
        }
    }

    pub fn from_saved(saved: SavedEnsemble<T>) -> Result<Self> {
        if saved.specs.len() != saved.members.len() {
            return Err(Error::Format("ensemble specs and members differ in length".into()));
        }
        let weights = saved.weights;
        VotingEnsemble::new(saved.specs.into_iter().zip(saved.members).collect(), Some(weights))
    }
}

impl<T: Scalar> Regressor<T> for VotingEnsemble<T> {
    fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    fn predict_row_raw(&self, x: &[T]) -> T {
        let preds: Vec<Vec<T>> = self.members.iter().map(|m| vec![m.predict_row(x)]).collect();
        combine(&preds, &self.weights)[0]
    }

    fn predict_raw(&self, x: &Matrix<T>) -> Vec<T> {
        combine(&self.member_predictions(x), &self.weights)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSearchOptions {
    /// Simplex grid spacing.
    pub resolution: f64,
    /// Cap on grid points; the spacing is coarsened to stay under it.
    pub max_grid_points: usize,
    pub variant: R2Variant,
}

impl Default for WeightSearchOptions {
    fn default() -> Self {
        WeightSearchOptions {
            resolution: 0.01,
            max_grid_points: 2_000_000,
            variant: R2Variant::Determination,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub weights: Vec<f64>,
    pub r2: f64,
    pub uniform_r2: f64,
    pub grid_divisions: usize,
    pub grid_points: usize,
}

/// Sufficient statistics for scoring any weight vector in O(m²).
struct Gram {
    m: usize,
    n: f64,
    pp: Vec<f64>,
    py: Vec<f64>,
    ps: Vec<f64>,
    ty: f64,
    sst: f64,
}

impl Gram {
    fn new<T: Scalar>(preds: &[Vec<T>], truth: &[T]) -> Self {
        let m = preds.len();
        let n = truth.len() as f64;
        let ty = truth.iter().map(|v| v.f64()).sum::<f64>() / n;
        let sst = truth.iter().map(|v| (v.f64() - ty).powi(2)).sum();
        let mut pp = vec![0.0; m * m];
        let mut py = vec![0.0; m];
        let mut ps = vec![0.0; m];
        for i in 0..m {
            for (k, t) in truth.iter().enumerate() {
                let v = preds[i][k].f64();
                py[i] += v * (t.f64() - ty);
                ps[i] += v;
            }
            for j in 0..=i {
                let s: f64 = preds[i].iter().zip(&preds[j]).map(|(a, b)| a.f64() * b.f64()).sum();
                pp[i * m + j] = s;
                pp[j * m + i] = s;
            }
        }
        Gram {
            m,
            n,
            pp,
            py,
            ps,
            ty,
            sst,
        }
    }

    fn score(&self, w: &[f64], variant: R2Variant) -> f64 {
        let m = self.m;
        let mut quad = 0.0;
        for i in 0..m {
            for j in 0..m {
                quad += w[i] * w[j] * self.pp[i * m + j];
            }
        }
        let lin: f64 = (0..m).map(|i| w[i] * self.py[i]).sum();
        let sum: f64 = (0..m).map(|i| w[i] * self.ps[i]).sum();
        match variant {
            R2Variant::Determination => {
                // SSE = Σ(ŷ - ȳ)² - 2Σ(ŷ - ȳ)(y - ȳ) + SST, expanded around ȳ
                let c = self.ty;
                let shifted_sq = quad - 2.0 * c * sum + self.n * c * c;
                let sse = shifted_sq - 2.0 * lin + self.sst;
                1.0 - sse / self.sst
            }
            R2Variant::PearsonSquared => {
                let mean = sum / self.n;
                let var = quad - self.n * mean * mean;
                if var <= 0.0 {
                    return 0.0;
                }
                lin * lin.abs() / (var * self.sst)
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

fn for_each_composition(parts: usize, total: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if i + 1 == cur.len() {
            cur[i] = left;
            f(cur);
            return;
        }
        for v in (0..=left).rev() {
            cur[i] = v;
            rec(i + 1, left - v, cur, f);
        }
    }
    let mut cur = vec![0; parts];
    rec(0, total, &mut cur, f);
}

/// Simplex weights maximizing held-out R².
///
/// Grid search over the simplex at `options.resolution` (coarsened when the
/// grid would exceed `max_grid_points`), then pairwise weight-transfer
/// refinement with halving steps. The uniform point is the starting
/// incumbent and is only replaced on a strict improvement, so identical
/// members yield uniform weights and the result never scores below uniform.
pub fn optimize_weights<T: Scalar>(
    member_preds: &[Vec<T>],
    truth: &[T],
    options: WeightSearchOptions,
) -> Result<WeightSearch> {
    let m = member_preds.len();
    if m < 2 {
        return Err(Error::Parameter(
            "weight optimization needs at least two members".into(),
        ));
    }
    if member_preds.iter().any(|p| p.len() != truth.len()) {
        return Err(Error::Parameter("member predictions and truth differ in length".into()));
    }
    if truth.len() < 10 {
        return Err(Error::HeldoutTooSmall { rows: truth.len() });
    }
    if !(options.resolution > 0.0 && options.resolution <= 1.0) {
        return Err(Error::Parameter("resolution must be in (0, 1]".into()));
    }
    let variant = options.variant;
    let gram = Gram::new(member_preds, truth);
    let uniform_w = vec![1.0 / m as f64; m];
    let uniform_score = gram.score(&uniform_w, variant);
    let better = |s: f64, best: f64| s > best + 1e-12 * (1.0 + best.abs());

    let mut divisions = (1.0 / options.resolution).round().max(1.0) as usize;
    while divisions > 1 && binomial(divisions + m - 1, m - 1) > options.max_grid_points {
        divisions -= 1;
    }
    let grid_points = binomial(divisions + m - 1, m - 1);

    let mut best_w = uniform_w.clone();
    let mut best = uniform_score;
    let mut w = vec![0.0; m];
    for_each_composition(m, divisions, &mut |c| {
        for (wi, ci) in w.iter_mut().zip(c) {
            *wi = *ci as f64 / divisions as f64;
        }
        let s = gram.score(&w, variant);
        if better(s, best) {
            best = s;
            best_w.copy_from_slice(&w);
        }
    });

    let mut step = 0.5 / divisions as f64;
    while step >= 1e-6 {
        let mut improved = true;
        let mut rounds = 0;
        while improved && rounds < 1000 {
            improved = false;
            rounds += 1;
            for i in 0..m {
                for j in 0..m {
                    if i == j || best_w[i] <= 0.0 {
                        continue;
                    }
                    let d = step.min(best_w[i]);
                    let mut cand = best_w.clone();
                    cand[i] -= d;
                    cand[j] += d;
                    let s = gram.score(&cand, variant);
                    if better(s, best) {
                        best = s;
                        best_w = cand;
                        improved = true;
                    }
                }
            }
        }
        step /= 2.0;
    }

    let sum: f64 = best_w.iter().sum();
    best_w.iter_mut().for_each(|v| *v = (*v / sum).max(0.0));
    // confirm against the direct metric on the clamped combination
    let to_t = |w: &[f64]| w.iter().map(|v| T::of(*v)).collect::<Vec<T>>();
    let uniform_r2 = r2_score(&combine(member_preds, &to_t(&uniform_w)), truth, variant)?;
    let r2 = r2_score(&combine(member_preds, &to_t(&best_w)), truth, variant)?;
    let (weights, r2) = if r2 >= uniform_r2 {
        (best_w, r2)
    } else {
        (uniform_w, uniform_r2)
    };
    Ok(WeightSearch {
        weights,
        r2,
        uniform_r2,
        grid_divisions: divisions,
        grid_points,
    })
}

/// A named set of held-out predictions entering the subset search.
#[derive(Clone, Debug)]
pub struct Candidate<T> {
    pub name: String,
    pub predictions: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEvaluation {
    pub members: Vec<usize>,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSearch {
    pub best: Vec<usize>,
    pub best_names: Vec<String>,
    pub r2: f64,
    pub evaluations: Vec<SubsetEvaluation>,
}

/// Scores every `size`-subset of candidates as a uniform-weight ensemble on
/// held-out data and returns the best. Subsets are visited in lexicographic
/// index order and only a strictly higher R² displaces the incumbent.
pub fn subset_search<T: Scalar>(
    candidates: &[Candidate<T>],
    size: usize,
    truth: &[T],
    variant: R2Variant,
) -> Result<SubsetSearch> {
    if size == 0 || candidates.len() < size {
        return Err(Error::Parameter(format!(
            "cannot choose subsets of {size} from {} candidates",
            candidates.len()
        )));
    }
    if candidates.iter().any(|c| c.predictions.len() != truth.len()) {
        return Err(Error::Parameter(
            "candidate predictions and truth differ in length".into(),
        ));
    }
    let subsets: Vec<Vec<usize>> = (0..candidates.len()).combinations(size).collect();
    let weights = uniform::<T>(size);
    let evaluations: Vec<SubsetEvaluation> = subsets
        .into_par_iter()
        .map(|members| {
            let preds: Vec<Vec<T>> = members.iter().map(|&i| candidates[i].predictions.clone()).collect();
            let r2 = r2_score(&combine(&preds, &weights), truth, variant)?;
            Ok(SubsetEvaluation { members, r2 })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, e) in evaluations.iter().enumerate() {
        log::debug!("subset {:?}: R² = {:.6}", e.members, e.r2);
        if e.r2 > evaluations[best].r2 {
            best = i;
        }
    }
    let winner = &evaluations[best];
    Ok(SubsetSearch {
        best: winner.members.clone(),
        best_names: winner.members.iter().map(|&i| candidates[i].name.clone()).collect(),
        r2: winner.r2,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn weighted_dot_product() {
        let preds: Vec<Vec<f64>> = vec![vec![0.2], vec![0.4], vec![0.8]];
        let out = combine(&preds, &[0.5, 0.25, 0.25]);
        assert!((out[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn identical_members_reproduce_member() {
        let p = vec![0.1, 0.7, 0.3333];
        let out = combine(&[p.clone(), p.clone(), p.clone()], &[0.2, 0.3, 0.5]);
        assert_eq!(out, p);
    }

    #[test]
    fn uniform_default_equals_explicit_thirds() {
        let x = Matrix::from_rows(&(0..12).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..12).map(|i| ((i * 5) % 12) as f64 / 12.0).collect();
        let specs = [
            ModelSpec::Knn { k: 2 },
            ModelSpec::Ridge { lambda: 0.1 },
            ModelSpec::Knn { k: 5 },
        ];
        let members: Vec<_> = specs.iter().map(|s| (*s, s.fit(&x, &y).unwrap())).collect();
        let a = VotingEnsemble::new(members.clone(), None).unwrap();
        let b = VotingEnsemble::new(members, Some(vec![1.0 / 3.0; 3])).unwrap();
        assert_eq!(a.predict(&x), b.predict(&x));
        assert!(VotingEnsemble::<f64>::new(vec![], None).is_err());
    }

    #[test]
    fn bad_weights_rejected() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let m = ModelSpec::Knn { k: 1 }.fit(&x, &[0.0, 1.0]).unwrap();
        let members = vec![(ModelSpec::Knn { k: 1 }, m.clone()), (ModelSpec::Knn { k: 1 }, m)];
        assert!(VotingEnsemble::new(members.clone(), Some(vec![0.5])).is_err());
        assert!(VotingEnsemble::new(members.clone(), Some(vec![1.5, -0.5])).is_err());
        assert!(VotingEnsemble::new(members, Some(vec![0.6, 0.6])).is_err());
    }

    #[test]
    fn dominant_member_takes_the_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = noise(&mut rng, 200);
        let good: Vec<f64> = truth.iter().map(|t| t + 0.01 * (rng.random::<f64>() - 0.5)).collect();
        let preds = vec![noise(&mut rng, 200), good, noise(&mut rng, 200)];
        let res = optimize_weights(&preds, &truth, WeightSearchOptions::default()).unwrap();
        assert!(res.weights[1] >= 0.95, "{:?}", res.weights);
        assert!(res.r2 >= res.uniform_r2);
    }

    #[test]
    fn identical_members_return_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = noise(&mut rng, 50);
        let p: Vec<f64> = truth.iter().map(|t| 0.5 * t + 0.2).collect();
        let res = optimize_weights(&[p.clone(), p.clone(), p], &truth, WeightSearchOptions::default()).unwrap();
        assert_eq!(res.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn complementary_members_meet_in_the_middle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..100).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
        let e: Vec<f64> = (0..100).map(|_| 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let a: Vec<f64> = truth.iter().zip(&e).map(|(t, e)| t + e).collect();
        let b: Vec<f64> = truth.iter().zip(&e).map(|(t, e)| t - e).collect();
        let res = optimize_weights(&[a, b], &truth, WeightSearchOptions::default()).unwrap();
        assert!((res.weights[0] - 0.5).abs() < 0.01, "{:?}", res.weights);
        assert!(res.r2 > 0.999999);
    }

    #[test]
    fn small_heldout_is_flagged() {
        let p = vec![0.1; 9];
        let t: Vec<f64> = (0..9).map(|i| i as f64 / 9.0).collect();
        assert!(matches!(
            optimize_weights(&[p.clone(), p], &t, WeightSearchOptions::default()),
            Err(Error::HeldoutTooSmall { rows: 9 })
        ));
    }

    #[test]
    fn pearson_variant_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = noise(&mut rng, 80);
        let scaled: Vec<f64> = truth.iter().map(|t| 0.3 * t + 0.1).collect();
        let opts = WeightSearchOptions {
            variant: R2Variant::PearsonSquared,
            ..Default::default()
        };
        let res = optimize_weights(&[noise(&mut rng, 80), scaled], &truth, opts).unwrap();
        assert!(res.weights[1] > 0.95);
        assert!(res.r2 > 0.99);
    }

    #[test]
    fn subset_search_counts_and_forced_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = noise(&mut rng, 40);
        let cands: Vec<Candidate<f64>> = (0..10)
            .map(|i| Candidate {
                name: format!("m{i}"),
                predictions: noise(&mut rng, 40),
            })
            .collect();
        let res = subset_search(&cands, 3, &truth, R2Variant::Determination).unwrap();
        assert_eq!(res.evaluations.len(), 120);
        let forced = subset_search(&cands[..3], 3, &truth, R2Variant::Determination).unwrap();
        assert_eq!(forced.best, vec![0, 1, 2]);
        assert_eq!(forced.evaluations.len(), 1);
        assert!(subset_search(&cands[..2], 3, &truth, R2Variant::Determination).is_err());
    }

    #[test]
    fn perfect_candidate_is_always_picked() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = noise(&mut rng, 60);
        let mut cands: Vec<Candidate<f64>> = (0..6)
            .map(|i| Candidate {
                name: format!("noise{i}"),
                predictions: noise(&mut rng, 60),
            })
            .collect();
        cands.insert(
            3,
            Candidate {
                name: "oracle".into(),
                predictions: truth.clone(),
            },
        );
        for size in 1..=3 {
            let res = subset_search(&cands, size, &truth, R2Variant::Determination).unwrap();
            assert!(res.best.contains(&3), "size {size}: {:?}", res.best_names);
        }
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let truth: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let cands: Vec<Candidate<f64>> = (0..4)
            .map(|i| Candidate {
                name: format!("c{i}"),
                predictions: truth.clone(),
            })
            .collect();
        let res = subset_search(&cands, 2, &truth, R2Variant::Determination).unwrap();
        assert_eq!(res.best, vec![0, 1]);
    }

    proptest! {
        #[test]
        fn ensemble_is_convex(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 1..20),
            raw_w in proptest::collection::vec(0.01f64..1.0, 3),
        ) {
            let s: f64 = raw_w.iter().sum();
            let w: Vec<f64> = raw_w.iter().map(|v| v / s).collect();
            let preds: Vec<Vec<f64>> = (0..3).map(|m| rows.iter().map(|r| r[m]).collect()).collect();
            let out = combine(&preds, &w);
            for (i, r) in rows.iter().enumerate() {
                let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[i] >= lo && out[i] <= hi);
            }
        }

        #[test]
        fn optimized_never_below_uniform(seed in any::<u64>(), m in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = noise(&mut rng, 30);
            let preds: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let a = rng.random::<f64>();
                    truth.iter().map(|t| (a * t + (1.0 - a) * rng.random::<f64>()).clamp(0.0, 1.0)).collect()
                })
                .collect();
            let res = optimize_weights(&preds, &truth, WeightSearchOptions { resolution: 0.05, ..Default::default() }).unwrap();
            prop_assert!(res.r2 >= res.uniform_r2);
            prop_assert!((res.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
