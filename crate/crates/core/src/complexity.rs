//! Wall-clock scaling of bank search and bank update.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bank::{BankEntry, BankParams, EntryOrigin, TrajectoryBank};
use crate::error::Result;
use crate::trajdata::{Point, Trajectory};

pub const DEFAULT_SIZES: [usize; 3] = [100, 1_000, 10_000];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub size: usize,
    pub mean_ns: f64,
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]).collect()
}

/// A bank of `size` random entries.
pub fn random_bank(size: usize, t_pas: usize, t_fut: usize, params: &BankParams, seed: u64) -> Result<TrajectoryBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..size)
        .map(|_| BankEntry {
            past: random_points(&mut rng, t_pas),
            future: random_points(&mut rng, t_fut),
            origin: EntryOrigin::InitialCluster,
        })
        .collect();
    TrajectoryBank::from_entries(entries, params)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Mean time per top-1 search for each bank size: median over `reps`
/// repetitions of `queries` searches.
pub fn bench_search(sizes: &[usize], queries: usize, reps: usize, t_pas: usize, t_fut: usize, seed: u64) -> Result<Vec<Timing>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let qs: Vec<Vec<Point>> = (0..queries).map(|_| random_points(&mut rng, t_pas)).collect();
    let mut out = Vec::new();
    for &size in sizes {
        let bank = random_bank(size, t_pas, t_fut, &BankParams::default(), seed)?;
        let mut sink = 0usize;
        for q in qs.iter().take(queries.min(50)) {
            sink ^= bank.search(q)?.index;
        }
        let mut means = Vec::with_capacity(reps);
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            for q in &qs {
                sink ^= bank.search(q)?.index;
            }
            means.push(start.elapsed().as_nanos() as f64 / queries as f64);
        }
        std::hint::black_box(sink);
        out.push(Timing { size, mean_ns: median(means) });
    }
    Ok(out)
}

/// Mean time per bank update on the add branch (every prediction counts as
/// bad, re-clustering disabled) for each bank size.
pub fn bench_update(sizes: &[usize], updates: usize, reps: usize, t_pas: usize, t_fut: usize, seed: u64) -> Result<Vec<Timing>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xadd);
    let mut examples = Vec::with_capacity(updates);
    for i in 0..updates {
        let xy = random_points(&mut rng, t_pas + t_fut);
        let pred = random_points(&mut rng, t_fut);
        examples.push((Trajectory::from_xy(i as i64, &xy, t_pas, t_fut)?, pred));
    }
    let params = BankParams { theta: 0.0, beta: usize::MAX, ..BankParams::default() };
    let mut out = Vec::new();
    for &size in sizes {
        let base = random_bank(size, t_pas, t_fut, &params, seed)?;
        let mut means = Vec::with_capacity(reps);
        for _ in 0..reps.max(1) {
            let mut bank = base.clone();
            bank.reserve(updates);
            let start = Instant::now();
            for (t, p) in &examples {
                bank.maybe_update(t, p)?;
            }
            means.push(start.elapsed().as_nanos() as f64 / updates as f64);
            std::hint::black_box(bank.len());
        }
        out.push(Timing { size, mean_ns: median(means) });
    }
    Ok(out)
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

pub fn fit_timings(t: &[Timing]) -> (f64, f64, f64) {
    let xs: Vec<f64> = t.iter().map(|t| t.size as f64).collect();
    let ys: Vec<f64> = t.iter().map(|t| t.mean_ns).collect();
    linear_fit(&xs, &ys)
}

/// Largest over smallest mean time.
pub fn spread_ratio(t: &[Timing]) -> f64 {
    let max = t.iter().map(|t| t.mean_ns).fold(f64::NEG_INFINITY, f64::max);
    let min = t.iter().map(|t| t.mean_ns).fold(f64::INFINITY, f64::min);
    max / min
}

pub fn timings_csv(t: &[Timing]) -> String {
    let mut s = String::from("size,mean_ns\n");
    for x in t {
        s.push_str(&format!("{},{:.1}\n", x.size, x.mean_ns));
    }
    s
}
