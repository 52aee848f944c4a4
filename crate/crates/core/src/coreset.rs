//! Greedy k-center coreset selection.
//!
//! [`kcenter_greedy`] is the farthest-first traversal: after the first
//! center, every pick is the point farthest from its nearest selected
//! center. Each pick costs one O(n) pass that both refreshes the cached
//! min-distance of every point and finds the next argmax. The result is a
//! 2-approximation of the optimal k-center radius, which
//! [`kcenter_optimal_bruteforce`] can verify on small instances.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingError, EmbeddingVector};
use crate::scalar::{dist_sq, dot, norm_sq, Scalar};
use crate::seed::derive_rng;

const BRUTE_FORCE_MAX_N: usize = 12;
const BRUTE_FORCE_MAX_K: usize = 4;
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoresetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent input: {0}")]
    Consistency(String),
    #[error("brute force refused: n={n}, k={k} exceeds n<={max_n}, k<={max_k}", max_n = BRUTE_FORCE_MAX_N, max_k = BRUTE_FORCE_MAX_K)]
    GuardExceeded { n: usize, k: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cosine_similarity`
    CosineDistance,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::CosineDistance => "cosine_distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetSelection {
    /// Indices in pick order.
    pub selected_indices: Vec<usize>,
    /// Max over all points of the distance to the nearest selected center,
    /// measured right after each pick.
    pub radius_trace: Vec<f64>,
    pub k: usize,
    pub metric: Metric,
    pub seed: u64,
}

/// Validated point set with per-point norms for the cosine metric.
struct Points<'a, S: Scalar> {
    rows: Vec<&'a [S]>,
    norms: Vec<f64>,
    metric: Metric,
}

impl<'a, S: Scalar> Points<'a, S> {
    fn new(vectors: &'a [EmbeddingVector<S>], metric: Metric) -> Result<Self, CoresetError> {
        let first = vectors
            .first()
            .ok_or_else(|| CoresetError::InvalidArgument("no vectors".into()))?;
        let dim = first.dim();
        if let Some(i) = vectors.iter().position(|v| v.dim() != dim) {
            return Err(CoresetError::Consistency(format!(
                "vector {i} has dim {} but vector 0 has dim {dim}",
                vectors[i].dim()
            )));
        }
        let rows: Vec<&[S]> = vectors.iter().map(|v| v.values()).collect();
        let norms = match metric {
            Metric::Euclidean => Vec::new(),
            Metric::CosineDistance => {
                let norms: Vec<f64> = rows.iter().map(|r| norm_sq(r).sqrt()).collect();
                if norms.iter().any(|&n| n == 0.0) {
                    return Err(EmbeddingError::ZeroVector.into());
                }
                norms
            }
        };
        Ok(Points {
            rows,
            norms,
            metric,
        })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        match self.metric {
            Metric::Euclidean => dist_sq(self.rows[i], self.rows[j]).sqrt(),
            Metric::CosineDistance => {
                let c = dot(self.rows[i], self.rows[j]) / (self.norms[i] * self.norms[j]);
                (1.0 - c.clamp(-1.0, 1.0)).max(0.0)
            }
        }
    }

    fn check_indices(&self, idx: &[usize], what: &str) -> Result<(), CoresetError> {
        let mut seen = vec![false; self.len()];
        for &i in idx {
            if i >= self.len() {
                return Err(CoresetError::InvalidArgument(format!(
                    "{what} index {i} out of range for {} points",
                    self.len()
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(CoresetError::InvalidArgument(format!("{what} index {i} repeated")));
            }
        }
        Ok(())
    }
}

/// Running farthest-first state: cached min-distance of every point to the
/// selected set.
struct Traversal<'p, 'a, S: Scalar> {
    points: &'p Points<'a, S>,
    min_dist: Vec<f64>,
    selected: Vec<bool>,
}

impl<'p, 'a, S: Scalar> Traversal<'p, 'a, S> {
    fn new(points: &'p Points<'a, S>) -> Self {
        Traversal {
            points,
            min_dist: vec![f64::INFINITY; points.len()],
            selected: vec![false; points.len()],
        }
    }

    /// Adds `center` and returns `(radius, farthest)`: the max min-distance
    /// over unselected points and the lowest index attaining it (None when
    /// every point is selected).
    fn add(&mut self, center: usize) -> (f64, Option<usize>) {
        self.selected[center] = true;
        self.min_dist[center] = 0.0;
        let points = self.points;
        let selected = &self.selected;
        let update = |(j, md): (usize, &mut f64)| -> (f64, usize) {
            if selected[j] {
                return (f64::NEG_INFINITY, usize::MAX);
            }
            let d = points.distance(center, j);
            if d < *md {
                *md = d;
            }
            (*md, j)
        };
        // (value, index) with ties to the lower index; associative and
        // commutative, so the parallel reduction is schedule-independent.
        let better = |a: (f64, usize), b: (f64, usize)| -> (f64, usize) {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        };
        let identity = (f64::NEG_INFINITY, usize::MAX);
        let best = if self.min_dist.len() >= PAR_THRESHOLD {
            self.min_dist
                .par_iter_mut()
                .enumerate()
                .map(update)
                .reduce(|| identity, better)
        } else {
            self.min_dist
                .iter_mut()
                .enumerate()
                .map(update)
                .fold(identity, better)
        };
        if best.1 == usize::MAX {
            (0.0, None)
        } else {
            (best.0, Some(best.1))
        }
    }
}

/// Farthest-first k-center selection.
///
/// Without `initial`, the first center is drawn uniformly with `seed`.
/// Initial indices count toward `k`. Ties go to the lowest index.
pub fn kcenter_greedy<S: Scalar>(
    vectors: &[EmbeddingVector<S>],
    k: usize,
    seed: u64,
    metric: Metric,
    initial: &[usize],
) -> Result<CoresetSelection, CoresetError> {
    if k < 1 {
        return Err(CoresetError::InvalidArgument("k must be >= 1".into()));
    }
    let points = Points::new(vectors, metric)?;
    points.check_indices(initial, "initial")?;
    let n = points.len();
    let target = k.min(n);
    if initial.len() > target {
        return Err(CoresetError::InvalidArgument(format!(
            "{} initial centers exceed the selection size {target}",
            initial.len()
        )));
    }

    let mut trav = Traversal::new(&points);
    let mut selected = Vec::with_capacity(target);
    let mut trace = Vec::with_capacity(target);
    let mut next = if initial.is_empty() {
        let mut rng = derive_rng(seed, &["kcenter-first"]);
        Some(rng.gen_range(0..n))
    } else {
        None
    };
    let mut queue = initial.iter().copied();
    while selected.len() < target {
        let pick = match queue.next() {
            Some(i) => i,
            None => next.expect("an unselected point remains while below target"),
        };
        let (radius, farthest) = trav.add(pick);
        selected.push(pick);
        trace.push(radius);
        next = farthest;
    }
    Ok(CoresetSelection {
        selected_indices: selected,
        radius_trace: trace,
        k,
        metric,
        seed,
    })
}

/// Max over all points of the distance to the nearest center.
pub fn kcenter_radius<S: Scalar>(
    vectors: &[EmbeddingVector<S>],
    centers: &[usize],
    metric: Metric,
) -> Result<f64, CoresetError> {
    if centers.is_empty() {
        return Err(CoresetError::InvalidArgument("centers must be non-empty".into()));
    }
    let points = Points::new(vectors, metric)?;
    if let Some(&bad) = centers.iter().find(|&&c| c >= points.len()) {
        return Err(CoresetError::InvalidArgument(format!(
            "center index {bad} out of range for {} points",
            points.len()
        )));
    }
    Ok(radius_of(&points, centers))
}

fn radius_of<S: Scalar>(points: &Points<'_, S>, centers: &[usize]) -> f64 {
    (0..points.len())
        .map(|j| {
            centers
                .iter()
                .map(|&c| if c == j { 0.0 } else { points.distance(c, j) })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Exact k-center optimum by enumerating every size-`k` subset in
/// lexicographic order; the first subset attaining the minimum wins.
/// Refuses instances beyond n=12 or k=4.
pub fn kcenter_optimal_bruteforce<S: Scalar>(
    vectors: &[EmbeddingVector<S>],
    k: usize,
    metric: Metric,
) -> Result<(Vec<usize>, f64), CoresetError> {
    let n = vectors.len();
    if n > BRUTE_FORCE_MAX_N || k > BRUTE_FORCE_MAX_K {
        return Err(CoresetError::GuardExceeded { n, k });
    }
    if k < 1 {
        return Err(CoresetError::InvalidArgument("k must be >= 1".into()));
    }
    let points = Points::new(vectors, metric)?;
    let k = k.min(n);
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best = (combo.clone(), radius_of(&points, &combo));
    while next_combination(&mut combo, n) {
        let r = radius_of(&points, &combo);
        if r < best.1 {
            best = (combo.clone(), r);
        }
    }
    Ok(best)
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Splits `k` across strata in proportion to their sizes (largest
/// remainder, ties to the earlier stratum), runs the greedy within each
/// stratum and concatenates the picks in stratum-label order. The
/// returned trace is the global radius after each merged pick.
pub fn kcenter_greedy_stratified<S: Scalar>(
    vectors: &[EmbeddingVector<S>],
    strata: &[String],
    k: usize,
    seed: u64,
    metric: Metric,
) -> Result<CoresetSelection, CoresetError> {
    if strata.len() != vectors.len() {
        return Err(CoresetError::InvalidArgument(
            "one stratum label per vector required".into(),
        ));
    }
    if k < 1 {
        return Err(CoresetError::InvalidArgument("k must be >= 1".into()));
    }
    let points = Points::new(vectors, metric)?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(s.as_str()).or_default().push(i);
    }
    let n = vectors.len();
    let target = k.min(n);
    let quotas = largest_remainder(
        &groups.values().map(Vec::len).collect::<Vec<_>>(),
        target,
    );

    let mut merged = Vec::with_capacity(target);
    for ((label, members), quota) in groups.iter().zip(quotas) {
        if quota == 0 {
            continue;
        }
        let sub: Vec<EmbeddingVector<S>> = members.iter().map(|&i| vectors[i].clone()).collect();
        let sub_seed = crate::seed::derive_seed(seed, &["stratum", label]);
        let sel = kcenter_greedy(&sub, quota, sub_seed, metric, &[])?;
        merged.extend(sel.selected_indices.iter().map(|&j| members[j]));
    }

    let mut trav = Traversal::new(&points);
    let trace = merged.iter().map(|&c| trav.add(c).0).collect();
    Ok(CoresetSelection {
        selected_indices: merged,
        radius_trace: trace,
        k,
        metric,
        seed,
    })
}

fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut rema: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| ((s * total) % n, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - quotas.iter().sum::<usize>();
    for (_, i) in rema {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// On-disk selection record; indices are translated to corpus ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub k: usize,
    pub seed: u64,
    pub metric: String,
    pub selected_ids: Vec<String>,
    pub radius_trace: Vec<f64>,
}

impl SelectionFile {
    pub fn from_selection(sel: &CoresetSelection, ids: &[String]) -> Self {
        SelectionFile {
            k: sel.k,
            seed: sel.seed,
            metric: sel.metric.as_str().to_string(),
            selected_ids: sel.selected_indices.iter().map(|&i| ids[i].clone()).collect(),
            radius_trace: sel.radius_trace.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(xs: &[&[f64]]) -> Vec<EmbeddingVector<f64>> {
        xs.iter()
            .map(|x| EmbeddingVector::new(x.to_vec(), "t").unwrap())
            .collect()
    }

    fn line(xs: &[f64]) -> Vec<EmbeddingVector<f64>> {
        xs.iter()
            .map(|&x| EmbeddingVector::new(vec![x], "t").unwrap())
            .collect()
    }

    #[test]
    fn k_equals_n_is_permutation() {
        let v = line(&[3.0, -1.0, 4.0, 1.5, 9.0]);
        let sel = kcenter_greedy(&v, 5, 11, Metric::Euclidean, &[]).unwrap();
        let mut s = sel.selected_indices.clone();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert_eq!(*sel.radius_trace.last().unwrap(), 0.0);
    }

    #[test]
    fn second_pick_is_farthest_point() {
        // min-distance to {0}: point 1 -> 1, point 10 -> 10
        let v = line(&[0.0, 1.0, 10.0]);
        let sel = kcenter_greedy(&v, 2, 0, Metric::Euclidean, &[0]).unwrap();
        assert_eq!(sel.selected_indices, vec![0, 2]);
        assert_eq!(sel.radius_trace, vec![10.0, 1.0]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let v = line(&[0.0, -5.0, 5.0]);
        let sel = kcenter_greedy(&v, 2, 0, Metric::Euclidean, &[0]).unwrap();
        assert_eq!(sel.selected_indices, vec![0, 1]);
    }

    #[test]
    fn k_larger_than_n_truncates() {
        let v = line(&[0.0, 1.0]);
        let sel = kcenter_greedy(&v, 10, 3, Metric::Euclidean, &[]).unwrap();
        assert_eq!(sel.selected_indices.len(), 2);
    }

    #[test]
    fn greedy_errors() {
        let v = line(&[0.0, 1.0]);
        assert!(matches!(
            kcenter_greedy(&v, 0, 0, Metric::Euclidean, &[]),
            Err(CoresetError::InvalidArgument(_))
        ));
        assert!(matches!(
            kcenter_greedy::<f64>(&[], 1, 0, Metric::Euclidean, &[]),
            Err(CoresetError::InvalidArgument(_))
        ));
        let mixed = pts(&[&[0.0], &[1.0, 2.0]]);
        assert!(matches!(
            kcenter_greedy(&mixed, 1, 0, Metric::Euclidean, &[]),
            Err(CoresetError::Consistency(_))
        ));
        assert!(kcenter_greedy(&v, 2, 0, Metric::Euclidean, &[5]).is_err());
        assert!(kcenter_greedy(&v, 2, 0, Metric::Euclidean, &[1, 1]).is_err());
        assert!(kcenter_greedy(&v, 1, 0, Metric::Euclidean, &[0, 1]).is_err());
    }

    #[test]
    fn cosine_metric_rejects_zero_vectors() {
        let v = pts(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert!(kcenter_greedy(&v, 1, 0, Metric::CosineDistance, &[]).is_err());
        let v = pts(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.1]]);
        let sel = kcenter_greedy(&v, 2, 0, Metric::CosineDistance, &[0]).unwrap();
        assert_eq!(sel.selected_indices, vec![0, 1]);
    }

    #[test]
    fn radius_examples() {
        let v = line(&[0.0, 10.0]);
        assert_eq!(kcenter_radius(&v, &[0], Metric::Euclidean).unwrap(), 10.0);
        assert_eq!(kcenter_radius(&v, &[0, 1], Metric::Euclidean).unwrap(), 0.0);
        assert!(kcenter_radius(&v, &[], Metric::Euclidean).is_err());
        assert!(kcenter_radius(&v, &[2], Metric::Euclidean).is_err());
    }

    #[test]
    fn bruteforce_examples() {
        // subsets of {0,1,10}: {0,1}->9, {0,10}->1, {1,10}->1; lexicographic tie -> {0,10}
        let v = line(&[0.0, 1.0, 10.0]);
        let (centers, r) = kcenter_optimal_bruteforce(&v, 2, Metric::Euclidean).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(centers, vec![0, 2]);
        let (_, r) = kcenter_optimal_bruteforce(&v, 3, Metric::Euclidean).unwrap();
        assert_eq!(r, 0.0);
        let big = line(&(0..13).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(
            kcenter_optimal_bruteforce(&big, 2, Metric::Euclidean),
            Err(CoresetError::GuardExceeded { .. })
        ));
        assert!(matches!(
            kcenter_optimal_bruteforce(&v, 5, Metric::Euclidean),
            Err(CoresetError::GuardExceeded { .. })
        ));
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all.len(), 6);
        assert_eq!(all.last().unwrap(), &vec![2, 3]);
    }

    #[test]
    fn largest_remainder_allocation() {
        assert_eq!(largest_remainder(&[5, 3, 2], 5), vec![3, 1, 1]);
        assert_eq!(largest_remainder(&[1, 1], 2), vec![1, 1]);
        assert_eq!(largest_remainder(&[10, 0], 3), vec![3, 0]);
    }

    #[test]
    fn stratified_respects_quotas() {
        let v = line(&[0.0, 1.0, 2.0, 3.0, 100.0, 101.0]);
        let strata: Vec<String> = ["a", "a", "a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let sel = kcenter_greedy_stratified(&v, &strata, 3, 1, Metric::Euclidean).unwrap();
        assert_eq!(sel.selected_indices.len(), 3);
        let in_b = sel.selected_indices.iter().filter(|&&i| i >= 4).count();
        assert_eq!(in_b, 1);
        assert!(sel.radius_trace.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn parallel_path_matches_sequential() {
        // above PAR_THRESHOLD the update runs through rayon
        let n = PAR_THRESHOLD + 37;
        let v: Vec<EmbeddingVector<f32>> = (0..n)
            .map(|i| {
                let x = ((i * 7919) % 1009) as f64;
                EmbeddingVector::from_f64(&[x, (i % 13) as f64], "t").unwrap()
            })
            .collect();
        let a = kcenter_greedy(&v, 25, 9, Metric::Euclidean, &[]).unwrap();
        let b = kcenter_greedy(&v, 25, 9, Metric::Euclidean, &[]).unwrap();
        assert_eq!(a, b);
        // independent check of each pick against a naive argmax
        let naive_next = |chosen: &[usize]| -> usize {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for j in 0..n {
                if chosen.contains(&j) {
                    continue;
                }
                let d = chosen
                    .iter()
                    .map(|&c| dist_sq(v[c].values(), v[j].values()).sqrt())
                    .fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, j);
                }
            }
            best.1
        };
        for i in 1..a.selected_indices.len() {
            assert_eq!(a.selected_indices[i], naive_next(&a.selected_indices[..i]));
        }
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
        (1usize..=4, 1usize..=10, 1usize..=3).prop_flat_map(|(dim, n, k)| {
            (
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n),
                Just(k),
            )
        })
    }

    proptest! {
        #[test]
        fn greedy_is_two_approximation((raw, k) in arb_instance(), seed in any::<u64>()) {
            let v: Vec<EmbeddingVector<f64>> = raw.iter().map(|x| EmbeddingVector::new(x.clone(), "t").unwrap()).collect();
            let sel = kcenter_greedy(&v, k, seed, Metric::Euclidean, &[]).unwrap();
            let greedy_r = kcenter_radius(&v, &sel.selected_indices, Metric::Euclidean).unwrap();
            let (_, best) = kcenter_optimal_bruteforce(&v, k, Metric::Euclidean).unwrap();
            prop_assert!(greedy_r <= 2.0 * best + 1e-12);
            prop_assert!(sel.radius_trace.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(*sel.radius_trace.last().unwrap(), greedy_r);
        }

        #[test]
        fn adding_center_never_increases_radius((raw, _) in arb_instance(), extra in 0usize..10) {
            let v: Vec<EmbeddingVector<f64>> = raw.iter().map(|x| EmbeddingVector::new(x.clone(), "t").unwrap()).collect();
            let n = v.len();
            let r1 = kcenter_radius(&v, &[0], Metric::Euclidean).unwrap();
            let r2 = kcenter_radius(&v, &[0, extra % n], Metric::Euclidean).unwrap();
            prop_assert!(r2 <= r1);
        }

        #[test]
        fn permutation_equivariance(raw in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..9), rot in 0usize..8) {
            let n = raw.len();
            let v: Vec<EmbeddingVector<f64>> = raw.iter().map(|x| EmbeddingVector::new(x.clone(), "t").unwrap()).collect();
            // permutation: rotate by `rot`; new index p holds old index perm[p]
            let perm: Vec<usize> = (0..n).map(|p| (p + rot) % n).collect();
            let pv: Vec<EmbeddingVector<f64>> = perm.iter().map(|&o| v[o].clone()).collect();
            let k = (n / 2).max(1);
            let a = kcenter_greedy(&v, k, 0, Metric::Euclidean, &[0]).unwrap();
            let start = perm.iter().position(|&o| o == 0).unwrap();
            let b = kcenter_greedy(&pv, k, 0, Metric::Euclidean, &[start]).unwrap();
            // continuous random coordinates make distance ties a measure-zero event
            let mut sa = a.selected_indices.clone();
            let mut sb: Vec<usize> = b.selected_indices.iter().map(|&p| perm[p]).collect();
            sa.sort();
            sb.sort();
            prop_assert_eq!(sa, sb);
        }
    }
}
