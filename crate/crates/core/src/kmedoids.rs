//! PAM k-medoids over a dense distance matrix.
//!
//! Initialization is either the greedy BUILD phase or a seeded random draw.
//! The SWAP phase evaluates every (medoid, non-medoid) exchange per iteration
//! in O(n²) using nearest/second-nearest caches and applies the best one
//! while it strictly lowers the total deviation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric pairwise Euclidean distances, stored densely.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Euclidean distances between equal-length feature vectors.
    pub fn euclidean(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MedoidInit {
    /// Greedy PAM BUILD.
    #[default]
    Build,
    /// `k` distinct points drawn with the clustering seed.
    Random,
}

#[derive(Clone, Debug)]
pub struct Clustering {
    /// Medoid point indices, ascending.
    pub medoids: Vec<usize>,
    /// For each point, the position in `medoids` of its nearest medoid
    /// (lowest medoid index on ties).
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Total deviation after initialization and after every applied swap.
    pub cost_history: Vec<f64>,
    pub swaps: usize,
}

impl Clustering {
    /// Member indices per medoid, in medoid order. May contain empty groups
    /// when duplicate points are both medoids.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.medoids.len()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Sum over all points of the distance to the nearest medoid.
pub fn total_cost(dm: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..dm.len())
        .map(|i| medoids.iter().map(|&m| dm.get(i, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

pub fn kmedoids(dm: &DistanceMatrix, k: usize, max_iter: usize, init: MedoidInit, seed: u64) -> Result<Clustering> {
    let n = dm.len();
    if n == 0 {
        return Err(Error::config("cannot cluster an empty set"));
    }
    if k == 0 || k > n {
        return Err(Error::config(format!("k = {k} must be in 1..={n}")));
    }
    let mut medoids = match init {
        MedoidInit::Build => build(dm, k),
        MedoidInit::Random => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx.truncate(k);
            idx
        }
    };
    let mut cost = total_cost(dm, &medoids);
    let mut cost_history = vec![cost];
    let mut swaps = 0;

    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    let mut delta = vec![0.0; k];
    while swaps < max_iter {
        let (nearest, dn, ds) = nearest_two(dm, &medoids);
        let mut best = (0.0, usize::MAX, usize::MAX);
        for candidate in 0..n {
            if is_medoid[candidate] {
                continue;
            }
            delta.iter_mut().for_each(|d| *d = 0.0);
            let mut shared = 0.0;
            let dc = dm.row(candidate);
            for o in 0..n {
                let dj = dc[o];
                let removal = dj.min(ds[o]) - dn[o];
                if dj < dn[o] {
                    // o moves to the candidate whichever medoid is removed
                    shared += dj - dn[o];
                    delta[nearest[o]] += removal - (dj - dn[o]);
                } else {
                    delta[nearest[o]] += removal;
                }
            }
            for (m, d) in delta.iter().enumerate() {
                let total = shared + d;
                if total < best.0 {
                    best = (total, m, candidate);
                }
            }
        }
        if !(best.0 < -1e-12 * cost.max(f64::MIN_POSITIVE)) {
            break;
        }
        let (_, m, candidate) = best;
        is_medoid[medoids[m]] = false;
        is_medoid[candidate] = true;
        medoids[m] = candidate;
        cost = total_cost(dm, &medoids);
        cost_history.push(cost);
        swaps += 1;
    }

    medoids.sort_unstable();
    let assignment = (0..n)
        .map(|i| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if dm.get(i, m) < dm.get(i, medoids[best]) {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(Clustering { medoids, assignment, cost, cost_history, swaps })
}

fn build(dm: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dm.len();
    let first = (0..n)
        .map(|i| (i, dm.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |best, (i, s)| if s < best.1 { (i, s) } else { best })
        .0;
    let mut medoids = vec![first];
    let mut is_medoid = vec![false; n];
    is_medoid[first] = true;
    let mut nearest: Vec<f64> = dm.row(first).to_vec();
    while medoids.len() < k {
        let mut best = (usize::MAX, -1.0);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let gain: f64 = dm.row(c).iter().zip(&nearest).map(|(d, n)| (n - d).max(0.0)).sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        medoids.push(c);
        is_medoid[c] = true;
        for (nd, d) in nearest.iter_mut().zip(dm.row(c)) {
            *nd = nd.min(*d);
        }
    }
    medoids
}

/// Position of the nearest medoid, its distance, and the second-nearest
/// distance for every point.
fn nearest_two(dm: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = dm.len();
    let mut nearest = vec![0; n];
    let mut dn = vec![f64::INFINITY; n];
    let mut ds = vec![f64::INFINITY; n];
    for (c, &m) in medoids.iter().enumerate() {
        for (o, &d) in dm.row(m).iter().enumerate() {
            if d < dn[o] {
                ds[o] = dn[o];
                dn[o] = d;
                nearest[o] = c;
            } else if d < ds[o] {
                ds[o] = d;
            }
        }
    }
    (nearest, dn, ds)
}

/// Element-wise mean of equal-length vectors, computed relative to the first
/// member so that identical members average to themselves exactly.
pub fn shifted_mean(members: &[&[f64]]) -> Vec<f64> {
    let first = members[0];
    let n = members.len() as f64;
    (0..first.len())
        .map(|k| {
            let s: f64 = members.iter().map(|m| m[k] - first[k]).sum();
            first[k] + s / n
        })
        .collect()
}
