//! K-means clustering of preference vectors with elbow-based choice of `k`.
//!
//! Each run starts from k-means++ seeding and performs Lloyd iterations until
//! assignments stop changing or [`MAX_ITERATIONS`] is reached. [`kmeans`]
//! keeps the best of [`RESTARTS`] seeded runs by distortion.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of each input point, in input order.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub distortion: f64,
    /// Distortion per candidate `k` when `k` was chosen by [`elbow_select`].
    pub distortion_curve: BTreeMap<usize, f64>,
}

impl ClusteringResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Letter label of cluster `index` ("A", "B", ..., "Z", "AA", ...).
    pub fn label(index: usize) -> String {
        let mut n = index + 1;
        let mut out = Vec::new();
        while n > 0 {
            let r = (n - 1) % 26;
            out.push(b'A' + r as u8);
            n = (n - 1) / 26;
        }
        out.reverse();
        String::from_utf8(out).expect("ascii")
    }

    pub fn labels(&self) -> Vec<String> {
        self.assignments.iter().map(|&a| Self::label(a)).collect()
    }
}

/// How the cluster count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    /// Knee of the distortion curve over `k_min..=k_max`.
    Auto { k_min: usize, k_max: usize },
    Fixed { k: usize },
}

impl KChoice {
    pub fn cluster(&self, points: &[Vec<f64>], seed_: u64, parallel: bool) -> Result<ClusteringResult> {
        match *self {
            KChoice::Auto { k_min, k_max } => elbow_cluster(points, k_min, k_max, seed_, parallel),
            KChoice::Fixed { k } => cluster_fixed_k(points, k, seed_, parallel),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn validate_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or_else(|| Error::invalid("no points to cluster"))?;
    if dim == 0 {
        return Err(Error::invalid("points must have at least one coordinate"));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::invalid(format!("point {i} has dimension {} (expected {dim})", p.len())));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(dim)
}

pub fn distinct_points(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            // Unreachable while k <= distinct points.
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

pub(crate) struct LloydRun {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub distortion: f64,
    /// Distortion after each assignment step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

pub(crate) fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> LloydRun {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut dists = Vec::with_capacity(points.len());
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let (c, d) = nearest(p, &centroids);
                dists.push(d);
                c
            })
            .collect();
        trace.push(dists.iter().sum());
        if next == assignments {
            break;
        }
        assignments = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = HashSet::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Empty cluster: reseed at the point farthest from its centroid.
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)))
                    .expect("more points than clusters");
                taken.insert(far);
                dists[far] = 0.0;
                centroids[c] = points[far].clone();
            }
        }
    }
    // Final assignment against the final centroids.
    let (assignments, dists): (Vec<usize>, Vec<f64>) = points.iter().map(|p| nearest(p, &centroids)).unzip();
    let distortion = dists.iter().sum();
    LloydRun {
        centroids,
        assignments,
        distortion,
        trace,
    }
}

fn kmeans_inner(points: &[Vec<f64>], k: usize, seed_: u64, parallel: bool) -> Result<ClusteringResult> {
    validate_points(points)?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let distinct = distinct_points(points);
    if k > distinct {
        return Err(Error::invalid(format!("k={k} exceeds the {distinct} distinct points")));
    }
    let run = |r: usize| {
        let mut rng = seed::rng(seed::derive(seed_, r as u64));
        lloyd(points, kmeans_plus_plus(points, k, &mut rng))
    };
    let runs: Vec<LloydRun> = if parallel {
        (0..RESTARTS).into_par_iter().map(run).collect()
    } else {
        (0..RESTARTS).map(run).collect()
    };
    // Lowest distortion; earliest restart on ties.
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.distortion < best.distortion { r } else { best })
        .expect("at least one restart");
    Ok(ClusteringResult {
        k,
        centroids: best.centroids,
        assignments: best.assignments,
        distortion: best.distortion,
        distortion_curve: BTreeMap::new(),
    })
}

/// Best of [`RESTARTS`] k-means++/Lloyd runs. Pure in `(points, k, seed)`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed_: u64) -> Result<ClusteringResult> {
    kmeans_inner(points, k, seed_, true)
}

pub fn kmeans_serial(points: &[Vec<f64>], k: usize, seed_: u64) -> Result<ClusteringResult> {
    kmeans_inner(points, k, seed_, false)
}

/// Index of the knee of a decreasing curve: the point farthest below the
/// chord joining the first and last points. Ties go to the smaller `k`.
pub fn knee(curve: &BTreeMap<usize, f64>) -> Option<usize> {
    let (&k0, &d0) = curve.iter().next()?;
    let (&k1, &d1) = curve.iter().next_back()?;
    let (dx, dy) = ((k1 - k0) as f64, d1 - d0);
    let len = dx.hypot(dy);
    let mut best: Option<(usize, f64)> = None;
    for (&k, &d) in curve {
        // Signed distance, positive below the chord.
        let dist = if len > 0.0 { (dy * (k - k0) as f64 - dx * (d - d0)) / len } else { 0.0 };
        if best.is_none_or(|(_, b)| dist > b) {
            best = Some((k, dist));
        }
    }
    best.map(|(k, _)| k)
}

fn curve_seed(seed_: u64, k: usize) -> u64 {
    seed::derive(seed_, k as u64)
}

fn elbow_inner(points: &[Vec<f64>], k_min: usize, k_max: usize, seed_: u64, parallel: bool) -> Result<(usize, BTreeMap<usize, ClusteringResult>)> {
    if k_min == 0 || k_min >= k_max {
        return Err(Error::invalid(format!("k range must satisfy 1 <= k_min < k_max (got {k_min}..{k_max})")));
    }
    validate_points(points)?;
    let distinct = distinct_points(points);
    if k_max > distinct {
        return Err(Error::invalid(format!("k_max={k_max} exceeds the {distinct} distinct points")));
    }
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let fits: Vec<Result<ClusteringResult>> = if parallel {
        ks.par_iter().map(|&k| kmeans_inner(points, k, curve_seed(seed_, k), true)).collect()
    } else {
        ks.iter().map(|&k| kmeans_inner(points, k, curve_seed(seed_, k), false)).collect()
    };
    let runs: BTreeMap<usize, ClusteringResult> = ks.into_iter().zip(fits).map(|(k, r)| r.map(|r| (k, r))).collect::<Result<_>>()?;
    let curve: BTreeMap<usize, f64> = runs.iter().map(|(&k, r)| (k, r.distortion)).collect();
    let chosen = knee(&curve).expect("non-empty range");
    let runs = runs
        .into_iter()
        .map(|(k, mut r)| {
            r.distortion_curve = curve.clone();
            (k, r)
        })
        .collect();
    Ok((chosen, runs))
}

/// Runs k-means for every `k` in `k_min..=k_max` and returns the knee.
pub fn elbow_select(points: &[Vec<f64>], k_min: usize, k_max: usize, seed_: u64) -> Result<usize> {
    elbow_inner(points, k_min, k_max, seed_, true).map(|(k, _)| k)
}

/// Like [`elbow_select`] but returns the clustering at the chosen `k`, with
/// the full distortion curve attached. The result equals
/// `kmeans(points, k, derive(seed, k))`.
pub fn elbow_cluster(points: &[Vec<f64>], k_min: usize, k_max: usize, seed_: u64, parallel: bool) -> Result<ClusteringResult> {
    let (k, mut runs) = elbow_inner(points, k_min, k_max, seed_, parallel)?;
    Ok(runs.remove(&k).expect("chosen k was run"))
}

/// Clustering at a fixed `k` using the same per-`k` seed as [`elbow_cluster`].
pub fn cluster_fixed_k(points: &[Vec<f64>], k: usize, seed_: u64, parallel: bool) -> Result<ClusteringResult> {
    kmeans_inner(points, k, curve_seed(seed_, k), parallel)
}

/// Renumbers clusters so index 0 ("A") is the largest. Ties: smaller
/// centroid norm first, then lexicographic centroid order. Membership is
/// unchanged.
pub fn label_by_size(result: &ClusteringResult) -> ClusteringResult {
    let sizes = result.sizes();
    let norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>();
    let mut order: Vec<usize> = (0..result.k).collect();
    order.sort_by(|&a, &b| {
        sizes[b]
            .cmp(&sizes[a])
            .then_with(|| norm(&result.centroids[a]).total_cmp(&norm(&result.centroids[b])))
            .then_with(|| {
                result.centroids[a]
                    .iter()
                    .zip(&result.centroids[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(a.cmp(&b))
    });
    let mut new_index = vec![0; result.k];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    ClusteringResult {
        k: result.k,
        centroids: order.iter().map(|&old| result.centroids[old].clone()).collect(),
        assignments: result.assignments.iter().map(|&a| new_index[a]).collect(),
        distortion: result.distortion,
        distortion_curve: result.distortion_curve.clone(),
    }
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    let pairs = |x: u64| x * x.saturating_sub(1) / 2;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c) as f64).sum();
    let sum_rows: f64 = rows.values().map(|&c| pairs(c) as f64).sum();
    let sum_cols: f64 = cols.values().map(|&c| pairs(c) as f64).sum();
    let total = pairs(a.len() as u64) as f64;
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed_: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seed::rng(seed_);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(center.iter().map(|x| x + noise.sample(&mut rng)).collect());
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separated_blobs_split_exactly() {
        let (pts, truth) = blobs(&[vec![0.0, 0.0], vec![10.0, 10.0]], 30, 0.5, 1);
        let r = kmeans(&pts, 2, 3).unwrap();
        assert_eq!(adjusted_rand_index(&r.assignments, &truth), 1.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let r = kmeans(&pts, 1, 0).unwrap();
        assert!((r.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 3.0).abs() < 1e-12);
        assert_eq!(r.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(kmeans(&pts, 3, 0), Err(Error::InvalidInput(_))));
        assert!(kmeans(&pts, 2, 0).is_ok());
        assert!(kmeans(&pts, 0, 0).is_err());
        assert!(kmeans(&[], 1, 0).is_err());
    }

    #[test]
    fn serial_and_parallel_agree() {
        let (pts, _) = blobs(&[vec![0.0; 3], vec![1.0; 3], vec![-1.0, 0.0, 1.0]], 40, 0.3, 9);
        assert_eq!(kmeans(&pts, 3, 4).unwrap(), kmeans_serial(&pts, 3, 4).unwrap());
        assert_eq!(elbow_cluster(&pts, 2, 6, 4, true).unwrap(), elbow_cluster(&pts, 2, 6, 4, false).unwrap());
    }

    #[test]
    fn five_blob_recovery() {
        let centers: Vec<Vec<f64>> = (0..5)
            .map(|c| (0..7).map(|d| if d == c { 1.0 } else if d == (c + 2) % 7 { -1.0 } else { 0.0 }).collect())
            .collect();
        let (pts, truth) = blobs(&centers, 150, 0.1, 21);
        let r = kmeans(&pts, 5, 2).unwrap();
        assert!(adjusted_rand_index(&r.assignments, &truth) >= 0.9);
        assert_eq!(elbow_select(&pts, 2, 10, 2).unwrap(), 5);
    }

    #[test]
    fn knee_ties_break_low() {
        let linear: BTreeMap<usize, f64> = (2..=10).map(|k| (k, 100.0 - 10.0 * k as f64)).collect();
        assert_eq!(knee(&linear), Some(2));
        let bent: BTreeMap<usize, f64> = [(1, 100.0), (2, 20.0), (3, 15.0), (4, 12.0)].into();
        assert_eq!(knee(&bent), Some(2));
    }

    #[test]
    fn elbow_rejects_bad_range() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert!(elbow_select(&pts, 3, 3, 0).is_err());
        assert!(elbow_select(&pts, 2, 6, 0).is_err());
    }

    #[test]
    fn label_by_size_orders_descending() {
        let r = ClusteringResult {
            k: 2,
            centroids: vec![vec![0.0], vec![1.0]],
            assignments: [vec![0; 10], vec![1; 40]].concat(),
            distortion: 0.0,
            distortion_curve: BTreeMap::new(),
        };
        let l = label_by_size(&r);
        assert_eq!(l.sizes(), vec![40, 10]);
        assert_eq!(l.assignments[0], 1);
        assert_eq!(l.assignments[10], 0);
        assert_eq!(l.centroids, vec![vec![1.0], vec![0.0]]);
    }

    #[test]
    fn label_by_size_reference_sizes() {
        let sizes = [22, 377, 29, 368, 41];
        let assignments: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
        let r = ClusteringResult {
            k: 5,
            centroids: (0..5).map(|c| vec![c as f64]).collect(),
            assignments,
            distortion: 0.0,
            distortion_curve: BTreeMap::new(),
        };
        let l = label_by_size(&r);
        assert_eq!(l.sizes(), vec![377, 368, 41, 29, 22]);
        let labels: Vec<String> = (0..5).map(ClusteringResult::label).collect();
        assert_eq!(labels, ["A", "B", "C", "D", "E"]);
    }

    #[test]
    fn singleton_ties_are_deterministic() {
        let r = ClusteringResult {
            k: 3,
            centroids: vec![vec![0.0, 2.0], vec![-1.0, 0.0], vec![1.0, 0.0]],
            assignments: vec![0, 1, 2],
            distortion: 0.0,
            distortion_curve: BTreeMap::new(),
        };
        let l = label_by_size(&r);
        // Norms 4, 1, 1: the two unit-norm centroids first, lexicographic between them.
        assert_eq!(l.centroids, vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(l.assignments, vec![2, 0, 1]);
    }

    #[test]
    fn label_letters() {
        assert_eq!(ClusteringResult::label(0), "A");
        assert_eq!(ClusteringResult::label(25), "Z");
        assert_eq!(ClusteringResult::label(26), "AA");
    }

    #[test]
    fn ari_identities() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    fn arb_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 8..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn lloyd_distortion_never_increases(pts in arb_points(), k in 1usize..5, s in any::<u64>()) {
            prop_assume!(k <= distinct_points(&pts));
            let init = kmeans_plus_plus(&pts, k, &mut seed::rng(s));
            let run = lloyd(&pts, init);
            for w in run.trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            prop_assert!(run.distortion <= run.trace.last().copied().unwrap() + 1e-9);
        }

        #[test]
        fn points_sit_with_nearest_centroid(pts in arb_points(), k in 1usize..5, s in any::<u64>()) {
            prop_assume!(k <= distinct_points(&pts));
            let r = kmeans(&pts, k, s).unwrap();
            for (p, &a) in pts.iter().zip(&r.assignments) {
                let own = squared_distance(p, &r.centroids[a]);
                for c in &r.centroids {
                    prop_assert!(own <= squared_distance(p, c));
                }
            }
            prop_assert_eq!(&r, &kmeans(&pts, k, s).unwrap());
        }

        #[test]
        fn relabeling_keeps_membership(pts in arb_points(), k in 1usize..5, s in any::<u64>()) {
            prop_assume!(k <= distinct_points(&pts));
            let r = kmeans(&pts, k, s).unwrap();
            let l = label_by_size(&r);
            prop_assert_eq!(adjusted_rand_index(&r.assignments, &l.assignments), 1.0);
            let sizes = l.sizes();
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
