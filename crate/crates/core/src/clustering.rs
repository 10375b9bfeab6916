//! Extreme directions and spherical k-means on the positive unit sphere.
//!
//! Directions are the unit-Pareto observations with the largest Euclidean
//! norm, each divided by that norm. Spherical k-means then groups them by
//! cosine dissimilarity `1 - θ·a`; the centroids act as extremal prototypes
//! and each channel is attached to the prototype with the largest loading on
//! it.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ExcoError, Result};
use crate::evt::ParetoMatrix;
use crate::seeding::stream_rng;
use crate::stats::quantile;

/// Tolerance on the unit norm of user-supplied directions.
const UNIT_NORM_TOL: f64 = 1e-6;

/// Objective decrease below which a run is considered converged.
const OBJECTIVE_TOL: f64 = 1e-10;

/// How the exceedance threshold is applied to the Pareto-scale rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep rows whose Euclidean norm exceeds the `q`-quantile of all norms.
    #[default]
    Norm,
    /// Keep rows in which at least one channel exceeds its own marginal
    /// `q`-quantile.
    Marginal,
}

/// Unit vectors on the positive sphere, one per retained observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeDirections {
    directions: Array2<f64>,
    source_rows: Vec<usize>,
    threshold: f64,
    quantile: f64,
    mode: ThresholdMode,
    channels: Vec<String>,
}

impl ExtremeDirections {
    /// Build directly from rows that are already (approximately) unit norm
    /// with nonnegative coordinates. Rows are renormalized exactly.
    pub fn from_unit_rows(rows: Array2<f64>, channels: Vec<String>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(ExcoError::InvalidInput("no directions given".into()));
        }
        if channels.len() != rows.ncols() {
            return Err(ExcoError::InvalidInput(format!(
                "{} labels for {} coordinates",
                channels.len(),
                rows.ncols()
            )));
        }
        let mut directions = rows;
        for (i, mut row) in directions.axis_iter_mut(Axis(0)).enumerate() {
            check_direction(row.view())
                .map_err(|e| ExcoError::InvalidDirection(format!("row {i}: {e}")))?;
            let n = norm(row.view());
            row.mapv_inplace(|v| v / n);
        }
        let n = directions.nrows();
        Ok(Self {
            directions,
            source_rows: (0..n).collect(),
            threshold: 0.0,
            quantile: 0.0,
            mode: ThresholdMode::Norm,
            channels,
        })
    }

    pub fn directions(&self) -> &Array2<f64> {
        &self.directions
    }

    pub fn source_rows(&self) -> &[usize] {
        &self.source_rows
    }

    /// Threshold applied to the rows: the norm threshold in
    /// [`ThresholdMode::Norm`], the largest per-channel threshold in
    /// [`ThresholdMode::Marginal`].
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }
}

/// Fitted spherical k-means model. Cluster indices in `assignments` are
/// 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub seed: u64,
}

/// Channel partition derived from a model. Labels are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    pub channels: Vec<String>,
    pub labels: Vec<usize>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            restarts: 50,
            max_iter: 100,
        }
    }
}

/// A single Lloyd run together with its objective after every iteration.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub model: ClusterModel,
    pub history: Vec<f64>,
}

/// Best objectives over a range of cluster counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KSweep {
    pub points: Vec<(usize, f64)>,
    /// Cluster counts that could not be fitted, with the reason.
    pub skipped: Vec<(usize, String)>,
}

impl KSweep {
    /// Cluster count with the sharpest bend in the objective curve (largest
    /// discrete second difference), among counts with both neighbours
    /// present.
    pub fn elbow(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for w in self.points.windows(3) {
            let [(k0, a), (k1, b), (k2, c)] = [w[0], w[1], w[2]];
            if k1 != k0 + 1 || k2 != k1 + 1 {
                continue;
            }
            let bend = a - 2.0 * b + c;
            if best.is_none_or(|(_, v)| bend > v) {
                best = Some((k1, bend));
            }
        }
        best.map(|(k, _)| k)
    }
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn check_direction(v: ArrayView1<'_, f64>) -> std::result::Result<(), String> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("coordinates must be finite and nonnegative".into());
    }
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(format!("norm {n} is not 1"));
    }
    Ok(())
}

/// Keep the rows of `y` whose norm exceeds the `quantile` of all row norms
/// and project them onto the unit sphere.
pub fn extract_extreme_directions(y: &ParetoMatrix, quantile: f64) -> Result<ExtremeDirections> {
    extract_extreme_directions_with(y, quantile, ThresholdMode::Norm)
}

/// As [`extract_extreme_directions`], with an explicit threshold mode.
///
/// `quantile = 0` keeps every row.
pub fn extract_extreme_directions_with(
    y: &ParetoMatrix,
    q: f64,
    mode: ThresholdMode,
) -> Result<ExtremeDirections> {
    if !(0.0..1.0).contains(&q) {
        return Err(ExcoError::Parameter(format!(
            "quantile must lie in [0,1), got {q}"
        )));
    }
    let values = y.values();
    let norms: Vec<f64> = values.axis_iter(Axis(0)).map(norm).collect();
    let (threshold, keep): (f64, Vec<usize>) = match mode {
        ThresholdMode::Norm => {
            let tau = if q == 0.0 { 0.0 } else { quantile(&norms, q) };
            let keep = (0..norms.len()).filter(|&t| norms[t] > tau).collect();
            (tau, keep)
        }
        ThresholdMode::Marginal => {
            let taus: Vec<f64> = if q == 0.0 {
                vec![0.0; y.n_channels()]
            } else {
                (0..y.n_channels())
                    .map(|d| quantile(&y.column(d).to_vec(), q))
                    .collect()
            };
            let keep = values
                .axis_iter(Axis(0))
                .enumerate()
                .filter(|(_, row)| row.iter().zip(&taus).any(|(v, tau)| v > tau))
                .map(|(t, _)| t)
                .collect();
            (taus.iter().cloned().fold(0.0, f64::max), keep)
        }
    };
    if keep.is_empty() {
        return Err(ExcoError::EmptyExceedance { quantile: q });
    }
    let d = y.n_channels();
    let mut directions = Array2::zeros((keep.len(), d));
    for (i, &t) in keep.iter().enumerate() {
        let n = norms[t];
        for j in 0..d {
            directions[[i, j]] = values[[t, j]] / n;
        }
    }
    Ok(ExtremeDirections {
        directions,
        source_rows: keep,
        threshold,
        quantile: q,
        mode,
        channels: y.channels().to_vec(),
    })
}

/// `1 - x·a` for unit vectors on the positive sphere.
pub fn cosine_dissimilarity(x: &[f64], a: &[f64]) -> Result<f64> {
    Ok(1.0 - checked_dot(x, a)?)
}

/// `1 - (x·a)^2` for unit vectors on the positive sphere.
pub fn quadratic_dissimilarity(x: &[f64], a: &[f64]) -> Result<f64> {
    let c = checked_dot(x, a)?;
    Ok(1.0 - c * c)
}

fn checked_dot(x: &[f64], a: &[f64]) -> Result<f64> {
    if x.len() != a.len() {
        return Err(ExcoError::InvalidDirection(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            a.len()
        )));
    }
    check_direction(ArrayView1::from(x)).map_err(ExcoError::InvalidDirection)?;
    check_direction(ArrayView1::from(a)).map_err(ExcoError::InvalidDirection)?;
    let c = dot(x, a);
    Ok(c.clamp(0.0, 1.0))
}

fn dot(x: &[f64], a: &[f64]) -> f64 {
    x.iter().zip(a).map(|(p, q)| p * q).sum()
}

/// Mean over directions of the cosine dissimilarity to the nearest centroid.
pub fn objective(theta: &ExtremeDirections, centroids: &[Vec<f64>]) -> Result<f64> {
    if centroids.is_empty() {
        return Err(ExcoError::Parameter(
            "at least one centroid is required".into(),
        ));
    }
    for (c, a) in centroids.iter().enumerate() {
        if a.len() != theta.dim() {
            return Err(ExcoError::InvalidDirection(format!(
                "centroid {c} has {} coordinates, expected {}",
                a.len(),
                theta.dim()
            )));
        }
        check_direction(ArrayView1::from(a.as_slice()))
            .map_err(|e| ExcoError::InvalidDirection(format!("centroid {c}: {e}")))?;
    }
    let total: f64 = theta
        .directions()
        .axis_iter(Axis(0))
        .map(|row| {
            let row = row.as_slice().expect("row-major directions");
            centroids
                .iter()
                .map(|a| 1.0 - dot(row, a))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / theta.len() as f64)
}

/// Spherical k-means, best of `opts.restarts` seeded runs.
///
/// Restart `r` draws its k-means++ style initialization from stream `r` of
/// `opts.seed`; runs are independent and may execute in parallel, and ties
/// in the final objective go to the lowest restart index.
pub fn spherical_kmeans(theta: &ExtremeDirections, opts: &KMeansOptions) -> Result<ClusterModel> {
    validate_k(theta, opts.k)?;
    if opts.restarts == 0 {
        return Err(ExcoError::Parameter("restarts must be at least 1".into()));
    }
    let data = Points::new(theta);
    let runs: Vec<Lloyd> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(opts.seed, r as u64);
            let init = plus_plus_init(&data, opts.k, &mut rng);
            lloyd(&data, init, opts.max_iter)
        })
        .collect();
    let best = pick_best(runs);
    Ok(best.into_model(opts.restarts, opts.seed))
}

/// One Lloyd run from the given initial centroids, with its objective trace.
pub fn spherical_kmeans_from_init(
    theta: &ExtremeDirections,
    init: &[Vec<f64>],
    max_iter: usize,
) -> Result<KMeansRun> {
    validate_k(theta, init.len())?;
    for (c, a) in init.iter().enumerate() {
        if a.len() != theta.dim() {
            return Err(ExcoError::InvalidDirection(format!(
                "centroid {c} has wrong dimension"
            )));
        }
        check_direction(ArrayView1::from(a.as_slice()))
            .map_err(|e| ExcoError::InvalidDirection(format!("centroid {c}: {e}")))?;
    }
    let data = Points::new(theta);
    let run = lloyd(&data, init.iter().flatten().copied().collect(), max_iter);
    let history = run.history.clone();
    Ok(KMeansRun {
        model: run.into_model(1, 0),
        history,
    })
}

fn validate_k(theta: &ExtremeDirections, k: usize) -> Result<()> {
    if k < 1 {
        return Err(ExcoError::Parameter("k must be at least 1".into()));
    }
    if k > theta.len() {
        return Err(ExcoError::Infeasible {
            k,
            available: theta.len(),
        });
    }
    Ok(())
}

/// Per-channel community: channel `d` joins the cluster whose centroid has
/// the largest `d`-th coordinate (lowest index on ties).
pub fn assign_communities(model: &ClusterModel, channels: &[String]) -> CommunityAssignment {
    let d = channels.len();
    let labels = (0..d)
        .map(|j| {
            let mut best = 0;
            for c in 1..model.centroids.len() {
                if model.centroids[c][j] > model.centroids[best][j] {
                    best = c;
                }
            }
            best + 1
        })
        .collect();
    CommunityAssignment {
        channels: channels.to_vec(),
        labels,
        k: model.k,
        window_id: None,
    }
}

/// Best objective for each `k` in `ks` (visited in increasing order).
///
/// Each `k` after the first also tries the previous best centroids plus the
/// direction farthest from them, which keeps the curve nonincreasing.
pub fn k_sweep(
    theta: &ExtremeDirections,
    ks: impl IntoIterator<Item = usize>,
    seed: u64,
    restarts: usize,
) -> Result<KSweep> {
    let mut ks: Vec<usize> = ks.into_iter().collect();
    ks.sort_unstable();
    ks.dedup();
    let data = Points::new(theta);
    let mut sweep = KSweep::default();
    let mut previous: Option<Vec<f64>> = None;
    for k in ks {
        let opts = KMeansOptions::new(k, seed).with_restarts(restarts);
        let model = match spherical_kmeans(theta, &opts) {
            Ok(m) => m,
            Err(e @ (ExcoError::Infeasible { .. } | ExcoError::Parameter(_))) => {
                sweep.skipped.push((k, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut best = model;
        if let Some(prev) = previous.as_ref().filter(|p| p.len() / data.dim < k) {
            let mut init = prev.clone();
            while init.len() / data.dim < k {
                let far = farthest_point(&data, &init);
                init.extend_from_slice(data.row(far));
            }
            let warm = lloyd(&data, init, opts.max_iter);
            if warm.objective < best.objective {
                best = warm.into_model(restarts + 1, seed);
            }
        }
        previous = Some(best.centroids.iter().flatten().copied().collect());
        sweep.points.push((k, best.objective));
    }
    Ok(sweep)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ExcoError::InvalidInput("labelings differ in length".into()));
    }
    let n = a.len();
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both partitions trivial in the same way.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Row-major copy of the directions for the inner loops.
struct Points {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl Points {
    fn new(theta: &ExtremeDirections) -> Self {
        let dir = theta.directions();
        Self {
            data: dir.iter().copied().collect(),
            n: dir.nrows(),
            dim: dir.ncols(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

struct Lloyd {
    centroids: Vec<f64>,
    labels: Vec<usize>,
    objective: f64,
    iterations: usize,
    history: Vec<f64>,
    k: usize,
    dim: usize,
}

impl Lloyd {
    fn into_model(self, restarts_used: usize, seed: u64) -> ClusterModel {
        ClusterModel {
            k: self.k,
            centroids: self
                .centroids
                .chunks(self.dim)
                .map(<[f64]>::to_vec)
                .collect(),
            assignments: self.labels.iter().map(|l| l + 1).collect(),
            objective: self.objective,
            iterations: self.iterations,
            restarts_used,
            seed,
        }
    }
}

fn pick_best(runs: Vec<Lloyd>) -> Lloyd {
    let mut best: Option<Lloyd> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn plus_plus_init<R: Rng>(data: &Points, k: usize, rng: &mut R) -> Vec<f64> {
    let mut chosen = Vec::with_capacity(k);
    let mut centroids = Vec::with_capacity(k * data.dim);
    let first = rng.random_range(0..data.n);
    chosen.push(first);
    centroids.extend_from_slice(data.row(first));
    let mut nearest: Vec<f64> = (0..data.n)
        .map(|i| (1.0 - dot(data.row(i), data.row(first))).max(0.0))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every point coincides with a chosen centroid.
            let free: Vec<usize> = (0..data.n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        centroids.extend_from_slice(data.row(next));
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min((1.0 - dot(data.row(i), data.row(next))).max(0.0));
        }
    }
    centroids
}

fn nearest_centroid(point: &[f64], centroids: &[f64], dim: usize, current: Option<usize>) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, a) in centroids.chunks(dim).enumerate() {
        let s = dot(point, a);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    // Keep the current cluster on exact ties so that repaired points stay put.
    if let Some(cur) = current {
        if dot(point, &centroids[cur * dim..(cur + 1) * dim]) == best_sim {
            return cur;
        }
    }
    best
}

/// Reassign every point; returns whether any label changed. With
/// `keep_ties`, a point stays in its current cluster when that cluster is
/// among the nearest.
fn assign(data: &Points, centroids: &[f64], labels: &mut [usize], keep_ties: bool) -> bool {
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let current = keep_ties.then_some(*label);
        let c = nearest_centroid(data.row(i), centroids, data.dim, current);
        if c != *label {
            changed = true;
            *label = c;
        }
    }
    changed
}

fn farthest_point(data: &Points, centroids: &[f64]) -> usize {
    let mut far = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..data.n {
        let c = nearest_centroid(data.row(i), centroids, data.dim, None);
        let d = 1.0 - dot(data.row(i), &centroids[c * data.dim..(c + 1) * data.dim]);
        if d > worst {
            worst = d;
            far = i;
        }
    }
    far
}

/// Give every empty cluster the member farthest from its centroid among
/// clusters that can spare one, then reassign.
fn repair_empty(data: &Points, centroids: &mut [f64], labels: &mut [usize], k: usize) -> bool {
    let dim = data.dim;
    let mut repaired = false;
    for _ in 0..k {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let mut far = None;
        let mut worst = f64::NEG_INFINITY;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = 1.0 - dot(data.row(i), &centroids[l * dim..(l + 1) * dim]);
            if d > worst {
                worst = d;
                far = Some(i);
            }
        }
        let far = far.expect("k <= number of directions");
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(data.row(far));
        labels[far] = empty;
        assign(data, centroids, labels, true);
        repaired = true;
    }
    repaired
}

fn update_centroids(data: &Points, labels: &[usize], centroids: &mut [f64], k: usize) {
    let dim = data.dim;
    let mut sums = vec![0.0; k * dim];
    for (i, &l) in labels.iter().enumerate() {
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(data.row(i)) {
            *s += v;
        }
    }
    for (c, sum) in sums.chunks(dim).enumerate() {
        let n = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for (dst, v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(sum) {
                *dst = v / n;
            }
        }
    }
}

fn labeled_objective(data: &Points, centroids: &[f64], labels: &[usize]) -> f64 {
    let dim = data.dim;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| 1.0 - dot(data.row(i), &centroids[l * dim..(l + 1) * dim]))
        .sum();
    total / data.n as f64
}

fn lloyd(data: &Points, mut centroids: Vec<f64>, max_iter: usize) -> Lloyd {
    let k = centroids.len() / data.dim;
    let mut labels = vec![0usize; data.n];
    assign(data, &centroids, &mut labels, false);
    repair_empty(data, &mut centroids, &mut labels, k);
    let mut objective = labeled_objective(data, &centroids, &labels);
    let mut history = vec![objective];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update_centroids(data, &labels, &mut centroids, k);
        let mut changed = assign(data, &centroids, &mut labels, true);
        changed |= repair_empty(data, &mut centroids, &mut labels, k);
        let next = labeled_objective(data, &centroids, &labels);
        history.push(next);
        let delta = objective - next;
        objective = next;
        if !changed || delta < OBJECTIVE_TOL {
            break;
        }
    }
    Lloyd {
        centroids,
        labels,
        objective,
        iterations,
        history,
        k,
        dim: data.dim,
    }
}
