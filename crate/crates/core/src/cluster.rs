//! k-means over the reduced feature space plus cluster validity scores.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stats::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
    /// Lloyd stops once the relative WCSS change falls below this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    /// Cluster index per input row.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    /// `None` when k = 1.
    pub silhouette: Option<f64>,
    /// `None` outside 2 <= k <= n - 1.
    pub calinski_harabasz: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl ClusteringResult {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }
}

/// One Lloyd run from fixed initial centroids.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after every assignment step, starting with the initial centroids.
    pub history: Vec<f64>,
}

fn validate_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::Empty("points"))?;
    let d = first.len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
    }
    Ok(d)
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, m)| (c, squared_distance(point, m)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Total squared distance of each point to the centroid of its assigned cluster.
pub fn wcss(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

/// Cluster means for a given assignment; empty clusters get an empty vector.
pub fn centroids_of(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| if n == 0 { Vec::new() } else { s.into_iter().map(|x| x / n as f64).collect() })
        .collect()
}

/// k-means++ seeding: the first centre uniformly, each next one with
/// probability proportional to the squared distance to the nearest centre.
pub fn kmeans_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Guard against rounding landing on an already-chosen zero-weight point.
            if d2[pick] <= 0.0 {
                pick = d2.iter().rposition(|w| *w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every remaining point coincides with a centre; pick any unchosen index.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd iterations. An empty cluster is reseeded with the point farthest from
/// its own centroid among clusters that have more than one member.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> LloydRun {
    let k = init.len();
    let mut centroids = init;
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = vec![wcss(points, &assignments, &centroids)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        fill_empty_clusters(points, &mut assignments, &centroids, k);
        centroids = centroids_of(points, &assignments, k);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assignments;
        assignments = next;
        fill_empty_clusters(points, &mut assignments, &centroids, k);
        centroids = centroids_of(points, &assignments, k);
        let current = wcss(points, &assignments, &centroids);
        let previous = *history.last().expect("history starts non-empty");
        history.push(current);
        let rel = if previous > 0.0 { (previous - current).abs() / previous } else { 0.0 };
        if !changed || rel < tol {
            break;
        }
    }
    let final_wcss = *history.last().expect("non-empty");
    LloydRun {
        assignments,
        centroids,
        wcss: final_wcss,
        iterations,
        history,
    }
}

fn fill_empty_clusters(points: &[Vec<f64>], assignments: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignments.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // Farthest point (first on ties) from its current centroid among
        // clusters that can spare a member.
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignments[i];
            if counts[c] < 2 {
                continue;
            }
            let d = if centroids[c].is_empty() { 0.0 } else { squared_distance(p, &centroids[c]) };
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => assignments[i] = empty,
            None => return,
        }
    }
}

/// Best-of-restarts k-means with k-means++ seeding. Restart `r` uses the seed
/// `derive(seed, ["kmeans", k, r])`; ties in WCSS go to the lower restart index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, params: &KMeansParams) -> Result<ClusteringResult> {
    validate_points(points)?;
    let n = points.len();
    if k < 1 || k > n {
        return Err(Error::InvalidInput(format!("k = {k} must lie in 1..={n}")));
    }
    let restarts = params.restarts.max(1);
    let runs: Vec<LloydRun> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let s = seed::derive(seed, &["kmeans", &k.to_string(), &r.to_string()]);
            let mut rng = seed::rng(s);
            let init = kmeans_plus_plus(points, k, &mut rng);
            lloyd(points, init, params.max_iter, params.tol)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.wcss < a.wcss { b } else { a })
        .expect("at least one restart");
    let silhouette = if k >= 2 { silhouette(points, &best.assignments).ok() } else { None };
    let calinski_harabasz = calinski_harabasz(points, &best.assignments).ok();
    Ok(ClusteringResult {
        k,
        assignments: best.assignments,
        centroids: best.centroids,
        wcss: best.wcss,
        silhouette,
        calinski_harabasz,
        iterations: best.iterations,
        seed,
    })
}

fn cluster_count(assignments: &[usize]) -> usize {
    let mut labels: Vec<usize> = assignments.to_vec();
    labels.sort_unstable();
    labels.dedup();
    labels.len()
}

/// Mean silhouette with Euclidean distance; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    validate_points(points)?;
    if points.len() != assignments.len() {
        return Err(Error::DimensionMismatch { expected: points.len(), actual: assignments.len() });
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    if cluster_count(assignments) < 2 {
        return Err(Error::InvalidInput("silhouette is undefined for a single cluster".into()));
    }
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    let scores: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let own = assignments[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, q) in points.iter().enumerate() {
                if j != i {
                    sums[assignments[j]] += squared_distance(p, q).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 { (b - a) / denom } else { 0.0 }
        })
        .collect();
    Ok(crate::stats::mean(&scores))
}

/// Between-cluster over within-cluster dispersion, each divided by its degrees
/// of freedom. Returns infinity when the within-cluster sum is zero.
pub fn calinski_harabasz(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    validate_points(points)?;
    let n = points.len();
    if n != assignments.len() {
        return Err(Error::DimensionMismatch { expected: n, actual: assignments.len() });
    }
    let k = cluster_count(assignments);
    if k < 2 || k + 1 > n {
        return Err(Error::InvalidInput(format!("Calinski-Harabasz needs 2 <= k <= n - 1 (k = {k}, n = {n})")));
    }
    let labels = assignments.iter().max().map_or(0, |m| m + 1);
    let centroids = centroids_of(points, assignments, labels);
    let d = points[0].len();
    let overall: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let mut bss = 0.0;
    for (c, centroid) in centroids.iter().enumerate() {
        if centroid.is_empty() {
            continue;
        }
        let size = assignments.iter().filter(|&&a| a == c).count() as f64;
        bss += size * squared_distance(centroid, &overall);
    }
    let within = wcss(points, assignments, &centroids);
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((bss / (k - 1) as f64) / (within / (n - k) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepEntry {
    pub k: usize,
    pub wcss: f64,
    pub silhouette: f64,
    pub calinski_harabasz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best: ClusteringResult,
    /// WCSS and scores for every k tried (elbow data).
    pub sweep: Vec<KSweepEntry>,
}

/// Runs k-means for each k in `k_min..=k_max` and keeps the highest silhouette;
/// scores within 1e-9 of each other go to the smaller k.
pub fn select_k(
    points: &[Vec<f64>],
    k_min: usize,
    k_max: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<KSelection> {
    validate_points(points)?;
    let n = points.len();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(Error::InvalidInput(format!(
            "k range [{k_min}, {k_max}] must satisfy 2 <= k_min <= k_max <= n - 1 (n = {n})"
        )));
    }
    let results = (k_min..=k_max)
        .map(|k| kmeans(points, k, seed, params))
        .collect::<Result<Vec<_>>>()?;
    let sweep = results
        .iter()
        .map(|r| KSweepEntry {
            k: r.k,
            wcss: r.wcss,
            silhouette: r.silhouette.unwrap_or(f64::NEG_INFINITY),
            calinski_harabasz: r.calinski_harabasz,
        })
        .collect();
    let best = results
        .into_iter()
        .reduce(|best, cand| {
            let (b, c) = (best.silhouette.unwrap_or(f64::NEG_INFINITY), cand.silhouette.unwrap_or(f64::NEG_INFINITY));
            if c > b + 1e-9 { cand } else { best }
        })
        .expect("non-empty k range");
    Ok(KSelection { best, sweep })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&m| pairs(m)).sum();
    let sum_rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sum_cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if (max - expected).abs() < f64::EPSILON {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max - expected))
}
