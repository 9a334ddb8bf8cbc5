//! Reduction of IK solution sets to diverse representatives: k-means medoids
//! followed by affinity propagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IkSolution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    pub kmeans_k: usize,
    pub ap_upper: usize,
    pub ap_lower: usize,
    pub ap_fallback: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { kmeans_k: 500, ap_upper: 80, ap_lower: 10, ap_fallback: 30 }
    }
}

impl ClusterParams {
    pub fn check(&self) -> Result<(), String> {
        if self.kmeans_k == 0 || self.ap_upper == 0 || self.ap_lower == 0 || self.ap_fallback == 0 {
            return Err("clustering parameters must be positive".into());
        }
        if !(self.ap_lower <= self.ap_fallback && self.ap_fallback <= self.ap_upper) {
            return Err(format!(
                "clustering bounds must satisfy ap_lower <= ap_fallback <= ap_upper, got {} / {} / {}",
                self.ap_lower, self.ap_fallback, self.ap_upper
            ));
        }
        Ok(())
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lowest index of the minimum of `f` over `0..n`.
fn argmin(n: usize, f: impl Fn(usize) -> f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for i in 0..n {
        let v = f(i);
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Lloyd's k-means with k-means++ seeding. Returns the assignment of every
/// point and the centroids; empty clusters keep their previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return (vec![0; n], Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            centroids.len()
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let a = argmin(k, |c| dist2(p, &centroids[c]));
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    (assign, centroids)
}

/// Members nearest to each non-empty cluster's centroid, in cluster order.
fn medoids(points: &[Vec<f64>], assign: &[usize], centroids: &[Vec<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    for (c, centroid) in centroids.iter().enumerate() {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            if assign[i] == c {
                let d = dist2(p, centroid);
                if d < best.1 {
                    best = (i, d);
                }
            }
        }
        if best.0 != usize::MAX && !out.contains(&best.0) {
            out.push(best.0);
        }
    }
    out
}

/// Affinity propagation on a dense similarity matrix whose diagonal holds the
/// preferences. Returns exemplar indices in ascending order.
pub fn affinity_propagation(s: &[Vec<f64>], damping: f64, max_iterations: usize) -> Vec<usize> {
    let n = s.len();
    if n == 0 {
        return Vec::new();
    }
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut last = Vec::new();
    let mut stable = 0;
    for _ in 0..max_iterations {
        for i in 0..n {
            let (mut first, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[i][k] + s[i][k];
                if v > first {
                    second = first;
                    first = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let other = if k == arg { second } else { first };
                r[i][k] = damping * r[i][k] + (1.0 - damping) * (s[i][k] - other);
            }
        }
        for k in 0..n {
            let pos: f64 = (0..n).filter(|&i| i != k).map(|i| r[i][k].max(0.0)).sum();
            for i in 0..n {
                let new = if i == k { pos } else { (r[k][k] + pos - r[i][k].max(0.0)).min(0.0) };
                a[i][k] = damping * a[i][k] + (1.0 - damping) * new;
            }
        }
        let exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        if exemplars == last && !exemplars.is_empty() {
            stable += 1;
            if stable >= 15 {
                break;
            }
        } else {
            stable = 0;
            last = exemplars;
        }
    }
    if last.is_empty() {
        last.push(argmin(n, |k| -(a[k][k] + r[k][k])));
    }
    last
}

fn ap_with_preference(points: &[Vec<f64>], preference: f64) -> Vec<usize> {
    let n = points.len();
    let s: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|k| if i == k { preference } else { -dist2(&points[i], &points[k]) }).collect()).collect();
    affinity_propagation(&s, 0.5, 200)
}

/// Picks representative IK solutions. Solutions are returned unchanged and
/// in input order.
pub fn cluster_ik(solutions: &[IkSolution], params: &ClusterParams, seed: u64) -> Vec<IkSolution> {
    let n = solutions.len();
    if n <= params.ap_lower {
        return solutions.to_vec();
    }
    let points: Vec<Vec<f64>> = solutions.iter().map(|s| s.config.clone()).collect();
    let (assign, centroids) = kmeans(&points, params.kmeans_k.min(n), seed);
    let reduced = medoids(&points, &assign, &centroids);
    let sub: Vec<Vec<f64>> = reduced.iter().map(|&i| points[i].clone()).collect();
    let lower = params.ap_lower.min(n);
    let in_bounds = |c: usize| (lower..=params.ap_upper).contains(&c);

    let mut chosen: Option<Vec<usize>> = None;
    if sub.len() >= lower {
        let mut sims: Vec<f64> = Vec::new();
        for i in 0..sub.len() {
            for k in (i + 1)..sub.len() {
                sims.push(-dist2(&sub[i], &sub[k]));
            }
        }
        sims.sort_by(f64::total_cmp);
        let median = sims.get(sims.len() / 2).copied().unwrap_or(0.0);
        let ex = ap_with_preference(&sub, median);
        if in_bounds(ex.len()) {
            chosen = Some(ex);
        } else {
            let (mut lo, mut hi) = (sims.first().copied().unwrap_or(-1.0) * 2.0, 0.0);
            for _ in 0..20 {
                let mid = 0.5 * (lo + hi);
                let ex = ap_with_preference(&sub, mid);
                if in_bounds(ex.len()) {
                    chosen = Some(ex);
                    break;
                }
                if ex.len() < lower {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let mut picked: Vec<usize> = match chosen {
        Some(ex) => ex.into_iter().map(|i| reduced[i]).collect(),
        None => {
            let (assign, centroids) = kmeans(&points, params.ap_fallback.min(n), seed.wrapping_add(1));
            medoids(&points, &assign, &centroids)
        }
    };
    while picked.len() < lower {
        let far = argmin(n, |i| {
            if picked.contains(&i) {
                f64::INFINITY
            } else {
                -picked.iter().map(|&p| dist2(&points[i], &points[p])).fold(f64::INFINITY, f64::min)
            }
        });
        picked.push(far);
    }
    picked.sort_unstable();
    picked.truncate(params.ap_upper);
    picked.into_iter().map(|i| solutions[i].clone()).collect()
}
