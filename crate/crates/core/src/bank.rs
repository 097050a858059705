//! Group trajectory bank.
//!
//! The bank holds representative past–future pairs. It is initialized by
//! clustering complete training trajectories with k-medoids and averaging
//! each cluster, queried by cosine similarity between flattened past
//! segments, and grown online: a training trajectory whose prediction misses
//! its ground truth by more than `theta` (ADE) is appended, and once `beta`
//! such additions are pending they are clustered and replaced by their
//! cluster averages.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmedoids::{kmedoids, shifted_mean, DistanceMatrix, MedoidInit};
use crate::metrics::ade;
use crate::trajdata::{Point, Trajectory};

pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryOrigin {
    InitialCluster,
    OnlineAddition,
    MergedCluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EntryRepr", into = "EntryRepr")]
pub struct BankEntry {
    pub past: Vec<Point>,
    pub future: Vec<Point>,
    pub origin: EntryOrigin,
}

/// On-disk form: matrices as row-major flat arrays.
#[derive(Serialize, Deserialize)]
struct EntryRepr {
    past: Vec<f64>,
    future: Vec<f64>,
    origin: EntryOrigin,
}

impl TryFrom<EntryRepr> for BankEntry {
    type Error = Error;

    fn try_from(r: EntryRepr) -> Result<Self> {
        Ok(BankEntry { past: unflatten(&r.past)?, future: unflatten(&r.future)?, origin: r.origin })
    }
}

impl From<BankEntry> for EntryRepr {
    fn from(e: BankEntry) -> Self {
        EntryRepr { past: flatten(&e.past), future: flatten(&e.future), origin: e.origin }
    }
}

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

pub fn unflatten(flat: &[f64]) -> Result<Vec<Point>> {
    if flat.len() % 2 != 0 {
        return Err(Error::Format(format!("matrix of {} values is not n×2", flat.len())));
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

impl BankEntry {
    fn from_trajectory(traj: &Trajectory, origin: EntryOrigin) -> Self {
        BankEntry { past: traj.past(), future: traj.future(), origin }
    }

    fn concat(&self) -> Vec<f64> {
        let mut v = flatten(&self.past);
        v.extend(flatten(&self.future));
        v
    }

    fn from_concat(v: &[f64], t_pas: usize, origin: EntryOrigin) -> Self {
        let split = 2 * t_pas;
        BankEntry {
            past: unflatten(&v[..split]).expect("even length"),
            future: unflatten(&v[split..]).expect("even length"),
            origin,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub index: usize,
    pub score: f64,
    pub candidate_future: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Unchanged,
    Added,
    /// The addition filled the pending buffer; `merged` raw additions were
    /// replaced by `clusters` averaged entries.
    AddedAndMerged { merged: usize, clusters: usize },
}

/// Construction and update parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BankParams {
    pub k: usize,
    pub max_iter: usize,
    pub init: MedoidInit,
    pub seed: u64,
    pub theta: f64,
    pub beta: usize,
    /// Cluster count when merging pending additions; `None` means
    /// `max(1, round(beta / 4))`.
    pub k_recluster: Option<usize>,
    pub translate_to_origin: bool,
}

impl Default for BankParams {
    fn default() -> Self {
        Self {
            k: 32,
            max_iter: 100,
            init: MedoidInit::Build,
            seed: 0,
            theta: f64::INFINITY,
            beta: 10,
            k_recluster: None,
            translate_to_origin: false,
        }
    }
}

pub fn default_k_recluster(beta: usize) -> usize {
    ((beta as f64 / 4.0).round() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBank {
    version: u32,
    t_pas: usize,
    t_fut: usize,
    #[serde(with = "float_or_inf")]
    theta: f64,
    beta: usize,
    k_recluster: usize,
    seed: u64,
    translate_to_origin: bool,
    frozen: bool,
    entries: Vec<BankEntry>,
    /// Additions since the last merge. They are always the tail of `entries`.
    pending: Vec<BankEntry>,
    n_added: usize,
}

/// Clusters `trainset` into at most `k` groups and builds a bank of their
/// averages, with default update parameters.
pub fn init_bank(trainset: &[Trajectory], k: usize, max_iter: usize, seed: u64) -> Result<TrajectoryBank> {
    TrajectoryBank::build(trainset, &BankParams { k, max_iter, seed, ..BankParams::default() })
}

impl TrajectoryBank {
    pub fn build(trainset: &[Trajectory], params: &BankParams) -> Result<Self> {
        let first = trainset.first().ok_or_else(|| Error::config("empty training set"))?;
        let (t_pas, t_fut) = (first.t_pas(), first.t_fut());
        if trainset.iter().any(|t| t.t_pas() != t_pas || t.t_fut() != t_fut) {
            return Err(Error::config("training trajectories disagree on t_pas/t_fut"));
        }
        if params.k == 0 || params.k > trainset.len() {
            return Err(Error::config(format!(
                "k = {} must be in 1..={} (training set size)",
                params.k,
                trainset.len()
            )));
        }
        if params.beta == 0 {
            return Err(Error::config("beta must be at least 1"));
        }
        if params.theta.is_nan() || params.theta < 0.0 {
            return Err(Error::config("theta must be non-negative"));
        }
        let rows: Vec<Vec<f64>> = trainset.iter().map(|t| flatten(&t.xy())).collect();
        let entries = cluster_averages(&rows, params.k, params.max_iter, params.init, params.seed, t_pas, EntryOrigin::InitialCluster)?;
        Ok(Self {
            version: BANK_FORMAT_VERSION,
            t_pas,
            t_fut,
            theta: params.theta,
            beta: params.beta,
            k_recluster: params.k_recluster.unwrap_or_else(|| default_k_recluster(params.beta)),
            seed: params.seed,
            translate_to_origin: params.translate_to_origin,
            frozen: false,
            entries,
            pending: Vec::new(),
            n_added: 0,
        })
    }

    /// A bank holding exactly `entries`, for tests and tools.
    pub fn from_entries(entries: Vec<BankEntry>, params: &BankParams) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::config("bank needs at least one entry"))?;
        let (t_pas, t_fut) = (first.past.len(), first.future.len());
        if entries.iter().any(|e| e.past.len() != t_pas || e.future.len() != t_fut) {
            return Err(Error::shape("bank entries disagree on shape"));
        }
        if entries.iter().any(|e| e.past.iter().chain(&e.future).flatten().any(|v| !v.is_finite())) {
            return Err(Error::Data("non-finite bank entry".into()));
        }
        Ok(Self {
            version: BANK_FORMAT_VERSION,
            t_pas,
            t_fut,
            theta: params.theta,
            beta: params.beta.max(1),
            k_recluster: params.k_recluster.unwrap_or_else(|| default_k_recluster(params.beta)),
            seed: params.seed,
            translate_to_origin: params.translate_to_origin,
            frozen: false,
            entries,
            pending: Vec::new(),
            n_added: 0,
        })
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn t_pas(&self) -> usize {
        self.t_pas
    }

    pub fn t_fut(&self) -> usize {
        self.t_fut
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn k_recluster(&self) -> usize {
        self.k_recluster
    }

    pub fn n_added(&self) -> usize {
        self.n_added
    }

    pub fn pending(&self) -> &[BankEntry] {
        &self.pending
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_theta(&mut self, theta: f64) -> Result<()> {
        self.check_writable()?;
        if theta.is_nan() || theta < 0.0 {
            return Err(Error::config("theta must be non-negative"));
        }
        self.theta = theta;
        Ok(())
    }

    pub fn set_beta(&mut self, beta: usize, k_recluster: Option<usize>) -> Result<()> {
        self.check_writable()?;
        if beta == 0 || k_recluster == Some(0) {
            return Err(Error::config("beta and k_recluster must be at least 1"));
        }
        self.beta = beta;
        self.k_recluster = k_recluster.unwrap_or_else(|| default_k_recluster(beta));
        Ok(())
    }

    pub fn reserve(&mut self, additional: usize) {
        self.entries.reserve(additional);
        self.pending.reserve(additional.min(self.beta));
    }

    /// Marks the bank read-only. Idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(mut self) -> Self {
        self.freeze();
        self
    }

    fn check_writable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::Frozen)
        } else {
            Ok(())
        }
    }

    fn check_past(&self, past: &[Point]) -> Result<()> {
        if past.len() != self.t_pas {
            return Err(Error::shape(format!("query past has {} steps, bank expects {}", past.len(), self.t_pas)));
        }
        Ok(())
    }

    fn key(&self, past: &[Point]) -> Vec<f64> {
        if self.translate_to_origin {
            let o = past[past.len() - 1];
            past.iter().flat_map(|p| [p[0] - o[0], p[1] - o[1]]).collect()
        } else {
            flatten(past)
        }
    }

    fn query_key(&self, past: &[Point]) -> Result<(Vec<f64>, f64)> {
        self.check_past(past)?;
        let q = self.key(past);
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::UndefinedSimilarity("query past has zero or non-finite norm".into()));
        }
        Ok((q, norm))
    }

    /// Cosine similarity of the query key with entry `i`, or `None` when the
    /// entry's key has zero norm.
    fn score(&self, q: &[f64], qnorm: f64, i: usize) -> Option<f64> {
        let past = &self.entries[i].past;
        let o = if self.translate_to_origin { past[past.len() - 1] } else { [0.0, 0.0] };
        let (mut dot, mut sq) = (0.0, 0.0);
        for (qp, p) in q.chunks_exact(2).zip(past) {
            let (bx, by) = (p[0] - o[0], p[1] - o[1]);
            dot += qp[0] * bx + qp[1] * by;
            sq += bx * bx + by * by;
        }
        if sq > 0.0 {
            Some(dot / (qnorm * sq.sqrt()))
        } else {
            None
        }
    }

    fn candidate(&self, i: usize, query_past: &[Point]) -> Vec<Point> {
        let entry = &self.entries[i];
        if self.translate_to_origin {
            let from = entry.past[entry.past.len() - 1];
            let to = query_past[query_past.len() - 1];
            entry.future.iter().map(|p| [p[0] - from[0] + to[0], p[1] - from[1] + to[1]]).collect()
        } else {
            entry.future.clone()
        }
    }

    /// The entry whose past is most similar to `past`; lowest index wins ties.
    pub fn search(&self, past: &[Point]) -> Result<SearchResult> {
        let (q, qnorm) = self.query_key(past)?;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.entries.len() {
            if let Some(s) = self.score(&q, qnorm, i) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        let (index, score) =
            best.ok_or_else(|| Error::UndefinedSimilarity("every bank entry has a zero-norm past".into()))?;
        Ok(SearchResult { index, score, candidate_future: self.candidate(index, past) })
    }

    /// The `min(k, |entries|)` best entries by descending score.
    pub fn topk_search(&self, past: &[Point], k: usize) -> Result<Vec<SearchResult>> {
        if k == 0 {
            return Err(Error::config("top-k search needs k >= 1"));
        }
        let (q, qnorm) = self.query_key(past)?;
        let mut scored: Vec<(usize, f64)> =
            (0..self.entries.len()).filter_map(|i| self.score(&q, qnorm, i).map(|s| (i, s))).collect();
        if scored.is_empty() {
            return Err(Error::UndefinedSimilarity("every bank entry has a zero-norm past".into()));
        }
        // stable: equal scores keep ascending index order
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(index, score)| SearchResult { index, score, candidate_future: self.candidate(index, past) })
            .collect())
    }

    /// Adds `traj` when its prediction error exceeds `theta`, merging pending
    /// additions once `beta` of them have accumulated.
    pub fn maybe_update(&mut self, traj: &Trajectory, predicted_future: &[Point]) -> Result<UpdateOutcome> {
        self.check_writable()?;
        if traj.t_pas() != self.t_pas || traj.t_fut() != self.t_fut {
            return Err(Error::shape("trajectory shape does not match the bank"));
        }
        let d = ade(predicted_future, &traj.future())?;
        if d <= self.theta {
            return Ok(UpdateOutcome::Unchanged);
        }
        let entry = BankEntry::from_trajectory(traj, EntryOrigin::OnlineAddition);
        self.entries.push(entry.clone());
        self.pending.push(entry);
        self.n_added += 1;
        if self.n_added < self.beta {
            return Ok(UpdateOutcome::Added);
        }
        let merged = self.pending.len();
        let rows: Vec<Vec<f64>> = self.pending.iter().map(BankEntry::concat).collect();
        let k = self.k_recluster.min(merged);
        let averages = cluster_averages(&rows, k, 100, MedoidInit::Build, self.seed, self.t_pas, EntryOrigin::MergedCluster)?;
        let clusters = averages.len();
        self.entries.truncate(self.entries.len() - merged);
        self.entries.extend(averages);
        self.pending.clear();
        self.n_added = 0;
        Ok(UpdateOutcome::AddedAndMerged { merged, clusters })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let bank: TrajectoryBank = serde_json::from_str(s)?;
        if bank.version != BANK_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "bank format version {} (this build reads {})",
                bank.version, BANK_FORMAT_VERSION
            )));
        }
        let shape_ok = |e: &BankEntry| e.past.len() == bank.t_pas && e.future.len() == bank.t_fut;
        if bank.entries.is_empty()
            || !bank.entries.iter().all(shape_ok)
            || !bank.pending.iter().all(shape_ok)
            || bank.n_added != bank.pending.len()
            || bank.beta == 0
        {
            return Err(Error::Format("bank file is inconsistent".into()));
        }
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn cluster_averages(
    rows: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    init: MedoidInit,
    seed: u64,
    t_pas: usize,
    origin: EntryOrigin,
) -> Result<Vec<BankEntry>> {
    let dm = DistanceMatrix::euclidean(rows);
    let clustering = kmedoids(&dm, k, max_iter, init, seed)?;
    Ok(clustering
        .clusters()
        .into_iter()
        .filter(|members| !members.is_empty())
        .map(|members| {
            let refs: Vec<&[f64]> = members.iter().map(|&i| rows[i].as_slice()).collect();
            BankEntry::from_concat(&shifted_mean(&refs), t_pas, origin)
        })
        .collect())
}

/// Per-cluster statistics of an initial clustering, for reporting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    /// Mean Euclidean distance of members to the cluster average.
    pub mean_distance: f64,
}

/// Clusters `trainset` like [`TrajectoryBank::build`] and reports member
/// counts and spread per non-empty cluster.
pub fn cluster_summary(trainset: &[Trajectory], params: &BankParams) -> Result<(TrajectoryBank, Vec<ClusterSummary>)> {
    let bank = TrajectoryBank::build(trainset, params)?;
    let rows: Vec<Vec<f64>> = trainset.iter().map(|t| flatten(&t.xy())).collect();
    let dm = DistanceMatrix::euclidean(&rows);
    let clustering = kmedoids(&dm, params.k, params.max_iter, params.init, params.seed)?;
    let summary = clustering
        .clusters()
        .into_iter()
        .filter(|m| !m.is_empty())
        .zip(bank.entries())
        .enumerate()
        .map(|(cluster, (members, entry))| {
            let center = entry.concat();
            let total: f64 = members
                .iter()
                .map(|&i| rows[i].iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .sum();
            ClusterSummary { cluster, size: members.len(), mean_distance: total / members.len() as f64 }
        })
        .collect();
    Ok((bank, summary))
}

/// JSON has no infinity; non-finite thresholds are written as the string "inf".
mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid threshold {s:?}"))),
        }
    }
}
