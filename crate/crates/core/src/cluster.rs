//! Grouping investigator maps by their pixel-wise entropy signatures.
//!
//! Each map becomes one row of an [`EntropyFeatureMatrix`] (its flattened
//! entropy raster). k-Means works on squared Euclidean distance between rows,
//! k-Medoids (PAM) on Manhattan distance with medoids drawn from the rows.
//!
//! Cluster ids in a returned [`ClusterModel`] are canonical: cluster 0 holds
//! map 0, and each further id is the cluster of the lowest-indexed map not yet
//! covered. Group `g` in output names is cluster `g - 1`.

use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::entropy_map;
use crate::error::{Error, Result};
use crate::grid::ProbabilityRaster;
use crate::raster_io::save_f32_raster;

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;

/// One entropy row per map, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyFeatureMatrix {
    n_maps: usize,
    n_features: usize,
    grid: (usize, usize),
    data: Vec<f64>,
}

impl EntropyFeatureMatrix {
    pub fn from_maps(maps: &[&ProbabilityRaster]) -> Result<Self> {
        let shape = crate::fusion::check_same_shape(maps)?;
        let n_features = shape.n_pixels();
        let mut data = Vec::with_capacity(maps.len() * n_features);
        for m in maps {
            data.extend(entropy_map(m).into_values());
        }
        Ok(Self {
            n_maps: maps.len(),
            n_features,
            grid: (shape.width(), shape.height()),
            data,
        })
    }

    /// Arbitrary feature rows; the grid is taken as `n_features x 1`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_features = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("no feature rows".into()))?;
        if n_features == 0 {
            return Err(Error::InvalidArgument("empty feature rows".into()));
        }
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::DimensionMismatch("feature rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite feature".into()));
        }
        Ok(Self {
            n_maps: rows.len(),
            n_features,
            grid: (n_features, 1),
            data: rows.concat(),
        })
    }

    pub fn n_maps(&self) -> usize {
        self.n_maps
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_features..(j + 1) * self.n_features]
    }
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    KMeans,
    KMedoids,
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::KMedoids => "kmedoids",
        })
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterMethod::KMeans),
            "kmedoids" => Ok(ClusterMethod::KMedoids),
            other => Err(Error::InvalidArgument(format!(
                "unknown cluster method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Centers {
    /// Mean feature vector per cluster.
    Means(Vec<Vec<f64>>),
    /// Index of the medoid map per cluster.
    Medoids(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub method: ClusterMethod,
    pub k: usize,
    pub assignment: Vec<usize>,
    pub centers: Centers,
    pub inertia: f64,
    pub seed: u64,
    /// Objective after every improvement step of the winning run.
    pub trace: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterModelFile {
    method: ClusterMethod,
    k: usize,
    seed: u64,
    assignment: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    medoid_indices: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    centers_file: Option<String>,
    inertia: f64,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Writes the model as JSON. k-Means centers go to a sibling f32 raster
    /// `<stem>_centers` whose bands are the clusters.
    pub fn save(&self, path: &Path, features: &EntropyFeatureMatrix) -> Result<()> {
        let (medoid_indices, centers_file) = match &self.centers {
            Centers::Medoids(m) => (Some(m.clone()), None),
            Centers::Means(means) => {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or(Error::EmptyPath)?;
                let name = format!("{stem}_centers");
                let (w, h) = features.grid;
                let mut values = vec![0.0; w * h * self.k];
                for (c, mean) in means.iter().enumerate() {
                    for (i, &v) in mean.iter().enumerate() {
                        values[i * self.k + c] = v;
                    }
                }
                let bands: Vec<String> = (0..self.k).map(|c| format!("center_{c}")).collect();
                save_f32_raster(&path.with_file_name(&name), w, h, &bands, &values)?;
                (None, Some(format!("{name}.json")))
            }
        };
        let file = ClusterModelFile {
            method: self.method,
            k: self.k,
            seed: self.seed,
            assignment: self.assignment.clone(),
            medoid_indices,
            centers_file,
            inertia: self.inertia,
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_k(features: &EntropyFeatureMatrix, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if k > features.n_maps {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of maps ({})",
            features.n_maps
        )));
    }
    Ok(())
}

/// Relabels clusters in order of first appearance; returns the old-to-new map.
fn canonicalize(assignment: &mut [usize], k: usize) -> Vec<usize> {
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for a in assignment.iter_mut() {
        if remap[*a] == usize::MAX {
            remap[*a] = next;
            next += 1;
        }
        *a = remap[*a];
    }
    remap
}

fn permute_by<T: Clone>(items: &[T], remap: &[usize]) -> Vec<T> {
    let mut out = items.to_vec();
    for (old, &new) in remap.iter().enumerate() {
        out[new] = items[old].clone();
    }
    out
}

struct LloydRun {
    assignment: Vec<usize>,
    centers: Vec<Vec<f64>>,
    inertia: f64,
    trace: Vec<f64>,
}

fn kmeans_pp_init(x: &EntropyFeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.n_maps;
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|j| sq_euclidean(x.row(j), x.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen center
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|j| !chosen.contains(j)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_euclidean(x.row(j), x.row(next)));
        }
    }
    chosen
}

fn lloyd(x: &EntropyFeatureMatrix, mut centers: Vec<Vec<f64>>) -> LloydRun {
    let (n, k) = (x.n_maps, centers.len());
    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut dist = vec![0.0; n];
        let mut next = vec![0; n];
        for j in 0..n {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_euclidean(x.row(j), center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            next[j] = best;
            dist[j] = best_d;
        }
        // empty-cluster repair: move the worst-served point of a multi-member
        // cluster into each empty cluster
        let mut sizes = vec![0usize; k];
        next.iter().for_each(|&a| sizes[a] += 1);
        for e in 0..k {
            if sizes[e] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&j| sizes[next[j]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a multi-member cluster");
            sizes[next[far]] -= 1;
            next[far] = e;
            sizes[e] = 1;
            dist[far] = 0.0;
            centers[e] = x.row(far).to_vec();
        }
        let inertia: f64 = dist.iter().sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(inertia <= prev * (1.0 + 1e-12) + 1e-12, "inertia rose");
        }
        trace.push(inertia);
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&j| assignment[j] == c).collect();
            center.iter_mut().for_each(|v| *v = 0.0);
            for &j in &members {
                for (v, &f) in center.iter_mut().zip(x.row(j)) {
                    *v += f;
                }
            }
            let m = members.len() as f64;
            center.iter_mut().for_each(|v| *v /= m);
        }
    }
    let inertia = (0..n)
        .map(|j| sq_euclidean(x.row(j), &centers[assignment[j]]))
        .sum();
    LloydRun {
        assignment,
        centers,
        inertia,
        trace,
    }
}

/// k-Means (Lloyd) with k-means++ seeding, best of [`KMEANS_RESTARTS`] runs.
pub fn kmeans_cluster(features: &EntropyFeatureMatrix, k: usize, seed: u64) -> Result<ClusterModel> {
    check_k(features, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = kmeans_pp_init(features, k, &mut rng);
        let centers = init.iter().map(|&j| features.row(j).to_vec()).collect();
        let run = lloyd(features, centers);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut run = best.expect("at least one restart");
    let remap = canonicalize(&mut run.assignment, k);
    Ok(ClusterModel {
        method: ClusterMethod::KMeans,
        k,
        assignment: run.assignment,
        centers: Centers::Means(permute_by(&run.centers, &remap)),
        inertia: run.inertia,
        seed,
        trace: run.trace,
    })
}

fn pam_cost(dist: &[f64], n: usize, medoids: &[usize]) -> f64 {
    (0..n)
        .map(|j| {
            medoids
                .iter()
                .map(|&m| dist[j * n + m])
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// k-Medoids by PAM (greedy build, then steepest-descent swaps) under L1.
/// The seed fixes the candidate order, which decides ties in cost.
pub fn kmedoids_cluster(features: &EntropyFeatureMatrix, k: usize, seed: u64) -> Result<ClusterModel> {
    check_k(features, k)?;
    let n = features.n_maps;
    let mut dist = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = manhattan(features.row(a), features.row(b));
            dist[a * n + b] = d;
            dist[b * n + a] = d;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // build
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut cost = f64::INFINITY;
    while medoids.len() < k {
        let mut pick = None;
        let free: Vec<usize> = order.iter().copied().filter(|c| !medoids.contains(c)).collect();
        for cand in free {
            medoids.push(cand);
            let c = pam_cost(&dist, n, &medoids);
            medoids.pop();
            if pick.is_none() || c < cost {
                pick = Some(cand);
                cost = c;
            }
        }
        medoids.push(pick.expect("k <= n leaves a candidate"));
    }
    let mut trace = vec![cost];

    // swap
    let tol = 1e-12 * cost.max(1.0);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        let free: Vec<usize> = order.iter().copied().filter(|c| !medoids.contains(c)).collect();
        for slot in 0..k {
            for &cand in &free {
                let old = medoids[slot];
                medoids[slot] = cand;
                let c = pam_cost(&dist, n, &medoids);
                medoids[slot] = old;
                if c < cost - tol && best.is_none_or(|(_, _, b)| c < b) {
                    best = Some((slot, cand, c));
                }
            }
        }
        match best {
            Some((slot, cand, c)) => {
                debug_assert!(c <= cost);
                medoids[slot] = cand;
                cost = c;
                trace.push(cost);
            }
            None => break,
        }
    }

    let mut assignment: Vec<usize> = (0..n)
        .map(|j| {
            let mut best = 0;
            for s in 1..k {
                if dist[j * n + medoids[s]] < dist[j * n + medoids[best]] {
                    best = s;
                }
            }
            best
        })
        .collect();
    // a medoid tied with another medoid's row still owns itself
    for (s, &m) in medoids.iter().enumerate() {
        assignment[m] = s;
    }
    let remap = canonicalize(&mut assignment, k);
    Ok(ClusterModel {
        method: ClusterMethod::KMedoids,
        k,
        assignment,
        centers: Centers::Medoids(permute_by(&medoids, &remap)),
        inertia: cost,
        seed,
        trace,
    })
}

pub fn cluster(
    method: ClusterMethod,
    features: &EntropyFeatureMatrix,
    k: usize,
    seed: u64,
) -> Result<ClusterModel> {
    match method {
        ClusterMethod::KMeans => kmeans_cluster(features, k, seed),
        ClusterMethod::KMedoids => kmedoids_cluster(features, k, seed),
    }
}

/// Splits `maps` by cluster, keeping input order inside each subset.
pub fn cluster_subsets<'a, T>(maps: &'a [T], model: &ClusterModel) -> Result<Vec<Vec<&'a T>>> {
    if model.assignment.len() != maps.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} maps, got {}",
            model.assignment.len(),
            maps.len()
        )));
    }
    if let Some(&bad) = model.assignment.iter().find(|&&a| a >= model.k) {
        return Err(Error::InvalidArgument(format!(
            "assignment references cluster {bad} with k = {}",
            model.k
        )));
    }
    let mut subsets: Vec<Vec<&T>> = vec![Vec::new(); model.k];
    for (m, &a) in maps.iter().zip(&model.assignment) {
        subsets[a].push(m);
    }
    subsets.retain(|s| !s.is_empty());
    Ok(subsets)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&v| pairs(v)).sum();
    let rows: f64 = (0..ka)
        .map(|x| pairs(table[x * kb..(x + 1) * kb].iter().sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|y| pairs((0..ka).map(|x| table[x * kb + y]).sum()))
        .sum();
    let total = pairs(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        // both partitions trivial in the same way
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs_input() -> EntropyFeatureMatrix {
        EntropyFeatureMatrix::from_rows(&[
            vec![0.1, 1.5, 0.3],
            vec![1.9, 0.2, 1.0],
            vec![0.1, 1.5, 0.3],
            vec![1.9, 0.2, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn kmeans_separable_pairs() {
        let m = kmeans_cluster(&pairs_input(), 2, 1).unwrap();
        assert_eq!(m.assignment, vec![0, 1, 0, 1]);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn kmeans_k_equals_j() {
        let x = EntropyFeatureMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let m = kmeans_cluster(&x, 4, 3).unwrap();
        assert_eq!(m.assignment, vec![0, 1, 2, 3]);
        assert_eq!(m.inertia, 0.0);
        // duplicates force the empty-cluster repair path
        let m = kmeans_cluster(&pairs_input(), 4, 3).unwrap();
        assert_eq!(m.cluster_sizes(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn kmedoids_separable_pairs() {
        let m = kmedoids_cluster(&pairs_input(), 2, 9).unwrap();
        assert_eq!(m.assignment, vec![0, 1, 0, 1]);
        let Centers::Medoids(med) = &m.centers else {
            panic!("medoids expected")
        };
        assert!([0, 2].contains(&med[0]));
        assert!([1, 3].contains(&med[1]));
    }

    #[test]
    fn kmedoids_three_point_toy() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0]];
        let x = EntropyFeatureMatrix::from_rows(&rows).unwrap();
        // exhaustive oracle over the three medoid pairs
        let l1 = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum() };
        let best = [(0, 1), (0, 2), (1, 2)]
            .into_iter()
            .map(|(a, b)| {
                let cost: f64 = rows
                    .iter()
                    .map(|r| l1(r, &rows[a]).min(l1(r, &rows[b])))
                    .sum();
                (cost, a, b)
            })
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .unwrap();
        assert_eq!(best.0, 1.0);
        for seed in 0..10 {
            let m = kmedoids_cluster(&x, 2, seed).unwrap();
            assert_eq!(m.assignment, vec![0, 0, 1]);
            assert_eq!(m.inertia, best.0);
            let Centers::Medoids(med) = &m.centers else { unreachable!() };
            assert!(med[0] <= 1 && med[1] == 2);
        }
    }

    #[test]
    fn k_out_of_range() {
        let x = pairs_input();
        assert!(kmedoids_cluster(&x, 1, 0).is_err());
        assert!(kmeans_cluster(&x, 1, 0).is_err());
        assert!(kmeans_cluster(&x, 5, 0).is_err());
        assert!(kmedoids_cluster(&x, 5, 0).is_err());
    }

    fn model(assignment: Vec<usize>, k: usize) -> ClusterModel {
        ClusterModel {
            method: ClusterMethod::KMeans,
            k,
            assignment,
            centers: Centers::Medoids(vec![]),
            inertia: 0.0,
            seed: 0,
            trace: vec![],
        }
    }

    #[test]
    fn subsets() {
        let maps = ["m0", "m1", "m2"];
        let s = cluster_subsets(&maps, &model(vec![0, 1, 0], 2)).unwrap();
        assert_eq!(s, vec![vec![&"m0", &"m2"], vec![&"m1"]]);
        let s = cluster_subsets(&maps, &model(vec![0, 0, 0], 1)).unwrap();
        assert_eq!(s, vec![vec![&"m0", &"m1", &"m2"]]);
        assert!(cluster_subsets(&maps, &model(vec![0, 5, 0], 2)).is_err());
        assert!(cluster_subsets(&maps, &model(vec![0, 1], 2)).is_err());
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn save_writes_json_and_centers() {
        let dir = tempfile::tempdir().unwrap();
        let x = pairs_input();
        let m = kmeans_cluster(&x, 2, 1).unwrap();
        let path = dir.path().join("model.json");
        m.save(&path, &x).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["method"], "kmeans");
        assert_eq!(v["centers_file"], "model_centers.json");
        assert!(dir.path().join("model_centers.bin").exists());
        let m = kmedoids_cluster(&x, 2, 1).unwrap();
        m.save(&path, &x).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["medoid_indices"].as_array().unwrap().len(), 2);
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (3usize..9, 1usize..6).prop_flat_map(|(n, f)| {
            prop::collection::vec(prop::collection::vec(0.0f64..2.0, f), n)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn objectives_monotone_and_deterministic(rows in rows_strategy(), seed in 0u64..1000) {
            let x = EntropyFeatureMatrix::from_rows(&rows).unwrap();
            for k in 2..=x.n_maps().min(4) {
                for method in [ClusterMethod::KMeans, ClusterMethod::KMedoids] {
                    let m = cluster(method, &x, k, seed).unwrap();
                    for w in m.trace.windows(2) {
                        prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
                    }
                    prop_assert!(m.cluster_sizes().iter().all(|&s| s > 0));
                    prop_assert_eq!(&m, &cluster(method, &x, k, seed).unwrap());
                    let subsets = cluster_subsets(&rows, &m).unwrap();
                    prop_assert_eq!(subsets.iter().map(Vec::len).sum::<usize>(), rows.len());
                    if let Centers::Medoids(med) = &m.centers {
                        for (c, &mi) in med.iter().enumerate() {
                            prop_assert_eq!(m.assignment[mi], c);
                        }
                    }
                }
            }
        }
    }
}
