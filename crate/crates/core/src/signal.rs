//! Frequency-band filtering and the sliding-window clustering pipeline.

use std::f64::consts::PI;

use ndarray::Axis;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    assign_communities, extract_extreme_directions_with, spherical_kmeans, ClusterModel,
    CommunityAssignment, ExtremeDirections, KMeansOptions, ThresholdMode,
};
use crate::error::{ExcoError, Result};
use crate::evt::{absolute_amplitude, empirical_pareto_transform, SignalMatrix};
use crate::seeding::derive_seed;

/// Butterworth prototype order used for every band.
pub const FILTER_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz >= 0.0 && high_hz > low_hz && high_hz.is_finite()) {
            return Err(ExcoError::Band(format!(
                "need 0 <= low < high, got {low_hz}..{high_hz}"
            )));
        }
        Ok(Self {
            name: name.into(),
            low_hz,
            high_hz,
        })
    }

    /// Look up one of the canonical bands by (case-insensitive) name.
    pub fn canonical(name: &str) -> Option<Self> {
        canonical_bands()
            .into_iter()
            .find(|b| b.name.eq_ignore_ascii_case(name))
    }

    fn check_rate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if self.high_hz >= nyquist {
            return Err(ExcoError::Band(format!(
                "{} band upper edge {} Hz is not below the Nyquist frequency {nyquist} Hz",
                self.name, self.high_hz
            )));
        }
        if !(self.low_hz >= 0.0 && self.low_hz < self.high_hz) {
            return Err(ExcoError::Band(format!(
                "{} band edges out of order",
                self.name
            )));
        }
        Ok(())
    }
}

/// Delta, theta, alpha, beta and gamma, in that order.
pub fn canonical_bands() -> Vec<BandSpec> {
    [
        ("delta", 0.0, 4.0),
        ("theta", 4.0, 8.0),
        ("alpha", 8.0, 12.0),
        ("beta", 12.0, 30.0),
        ("gamma", 30.0, 50.0),
    ]
    .into_iter()
    .map(|(name, low_hz, high_hz)| BandSpec {
        name: name.to_string(),
        low_hz,
        high_hz,
    })
    .collect()
}

/// One second-order section `(b0, b1, b2, a1, a2)` with `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// Digital Butterworth design (bilinear transform) as a cascade of biquads.
///
/// `low_hz == 0` gives a low-pass at `high_hz`; otherwise a band-pass built
/// from an `order`-pole prototype, i.e. `order` sections.
pub fn butterworth_sos(band: &BandSpec, sample_rate_hz: f64, order: usize) -> Result<Vec<Biquad>> {
    band.check_rate(sample_rate_hz)?;
    if order == 0 || !order.is_multiple_of(2) {
        return Err(ExcoError::Parameter(format!(
            "filter order must be even and positive, got {order}"
        )));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let warp = |f: f64| fs2 * (PI * f / sample_rate_hz).tan();
    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
    // Prototype poles in the upper half plane; their conjugates are implied.
    let proto: Vec<Complex64> = (1..=order / 2)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + order - 1) as f64 / (2 * order) as f64))
        .collect();

    let section = |z: Complex64, b: [f64; 3]| Biquad {
        b,
        a: [-2.0 * z.re, z.norm_sqr()],
    };

    let (mut sos, w_ref) = if band.low_hz == 0.0 {
        let wc = warp(band.high_hz);
        let sos: Vec<Biquad> = proto
            .iter()
            .map(|p| section(bilinear(p * wc), [1.0, 2.0, 1.0]))
            .collect();
        (sos, 0.0)
    } else {
        let w1 = warp(band.low_hz);
        let w2 = warp(band.high_hz);
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();
        let mut sos = Vec::with_capacity(order);
        for p in &proto {
            let half = p * (bw / 2.0);
            let disc = (half * half - w0 * w0).sqrt();
            for s in [half + disc, half - disc] {
                sos.push(section(bilinear(s), [1.0, 0.0, -1.0]));
            }
        }
        // Analog centre frequency mapped back through the bilinear warp.
        (sos, 2.0 * (w0 / fs2).atan())
    };

    let gain: f64 = sos
        .iter()
        .map(|s| s.response(w_ref))
        .product::<Complex64>()
        .norm();
    let per_section = gain.powf(-1.0 / sos.len() as f64);
    for s in &mut sos {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(sos)
}

/// Steady-state transposed direct form II state of each section for a unit
/// step input.
fn step_state(sos: &[Biquad]) -> Vec<[f64; 2]> {
    let mut level = 1.0;
    sos.iter()
        .map(|s| {
            let h = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
            let z2 = level * (s.b[2] - s.a[1] * h);
            let z1 = level * (s.b[1] - s.a[0] * h) + z2;
            level *= h;
            [z1, z2]
        })
        .collect()
}

fn sos_filter(sos: &[Biquad], x: &mut [f64], init: &[[f64; 2]], scale: f64) {
    for (s, z0) in sos.iter().zip(init) {
        let (mut z1, mut z2) = (z0[0] * scale, z0[1] * scale);
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[0] * y + z2;
            z2 = s.b[2] * input - s.a[1] * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd reflection padding of
/// `3 * (2 * sections + 1)` samples at each end (shortened for very short
/// inputs), each pass started from the step-response state scaled to its
/// first sample.
pub fn filtfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = step_state(sos);
    let first = ext[0];
    sos_filter(sos, &mut ext, &zi, first);
    ext.reverse();
    let first = ext[0];
    sos_filter(sos, &mut ext, &zi, first);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase 4th-order Butterworth band-pass of every channel (low-pass
/// for bands starting at 0 Hz).
pub fn bandpass(x: &SignalMatrix, band: &BandSpec) -> Result<SignalMatrix> {
    let sos = butterworth_sos(band, x.sample_rate_hz(), FILTER_ORDER)?;
    let mut out = x.samples().clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let filtered = filtfilt(&sos, &col.to_vec());
        for (dst, v) in col.iter_mut().zip(filtered) {
            *dst = v;
        }
    }
    x.with_samples(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub length_s: f64,
    pub stride_s: f64,
    pub sample_rate_hz: f64,
}

impl WindowPlan {
    pub fn new(length_s: f64, stride_s: f64, sample_rate_hz: f64) -> Result<Self> {
        let plan = Self {
            length_s,
            stride_s,
            sample_rate_hz,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Disjoint windows of `length_s` seconds.
    pub fn disjoint(length_s: f64, sample_rate_hz: f64) -> Result<Self> {
        Self::new(length_s, length_s, sample_rate_hz)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(ExcoError::InvalidPlan(
                "sample rate must be positive".into(),
            ));
        }
        if !(self.length_s.is_finite() && self.length_s * self.sample_rate_hz >= 2.0) {
            return Err(ExcoError::InvalidPlan(format!(
                "window of {} s spans fewer than 2 samples",
                self.length_s
            )));
        }
        if !(self.stride_s.is_finite() && self.stride_s > 0.0 && self.stride_samples() >= 1) {
            return Err(ExcoError::InvalidPlan(format!(
                "stride must be at least one sample, got {} s",
                self.stride_s
            )));
        }
        Ok(())
    }

    pub fn length_samples(&self) -> usize {
        (self.length_s * self.sample_rate_hz).round() as usize
    }

    pub fn stride_samples(&self) -> usize {
        (self.stride_s * self.sample_rate_hz).round() as usize
    }
}

/// Half-open `(start, end)` sample ranges of every full window.
pub fn sliding_windows(n_samples: usize, plan: &WindowPlan) -> Result<Vec<(usize, usize)>> {
    plan.validate()?;
    let len = plan.length_samples();
    let stride = plan.stride_samples();
    if len > n_samples {
        return Err(ExcoError::InvalidPlan(format!(
            "window of {len} samples does not fit in {n_samples} samples"
        )));
    }
    Ok((0..=n_samples - len)
        .step_by(stride)
        .map(|start| (start, start + len))
        .collect())
}

/// Settings for one pass of the clustering pipeline over a block of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub band: Option<BandSpec>,
    pub quantile: f64,
    pub threshold_mode: ThresholdMode,
    pub kmeans: KMeansOptions,
}

impl PipelineConfig {
    pub fn new(k: usize, quantile: f64, seed: u64) -> Self {
        Self {
            band: None,
            quantile,
            threshold_mode: ThresholdMode::Norm,
            kmeans: KMeansOptions::new(k, seed),
        }
    }
}

/// Everything produced by one pass of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub directions: ExtremeDirections,
    pub model: ClusterModel,
    pub communities: CommunityAssignment,
}

/// Optional band-pass, absolute amplitude, Pareto transform, extreme
/// directions, spherical k-means and channel communities.
pub fn run_pipeline(x: &SignalMatrix, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let filtered;
    let source = match &cfg.band {
        Some(band) => {
            filtered = bandpass(x, band)?;
            &filtered
        }
        None => x,
    };
    let amplitude = absolute_amplitude(source)?;
    let pareto = empirical_pareto_transform(&amplitude)?;
    let directions = extract_extreme_directions_with(&pareto, cfg.quantile, cfg.threshold_mode)?;
    let model = spherical_kmeans(&directions, &cfg.kmeans)?;
    let communities = assign_communities(&model, x.channels());
    Ok(PipelineOutput {
        directions,
        model,
        communities,
    })
}

/// Result for one analysis window. Exactly one of `communities` and
/// `failure` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub window_id: usize,
    pub start_sample: usize,
    pub end_sample: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_directions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ClusterModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communities: Option<CommunityAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl WindowOutcome {
    pub fn is_ok(&self) -> bool {
        self.communities.is_some()
    }

    pub fn start_s(&self, sample_rate_hz: f64) -> f64 {
        self.start_sample as f64 / sample_rate_hz
    }
}

/// Run the pipeline on every window of `plan`. Window `w` uses seed
/// `derive_seed(cfg.kmeans.seed, w)`. Windows whose data are too thin
/// (no exceedances, fewer directions than clusters) are reported as failed
/// rather than aborting the run.
pub fn windowed_communities(
    x: &SignalMatrix,
    plan: &WindowPlan,
    cfg: &PipelineConfig,
) -> Result<Vec<WindowOutcome>> {
    if (plan.sample_rate_hz - x.sample_rate_hz()).abs() > 1e-9 * x.sample_rate_hz() {
        return Err(ExcoError::InvalidPlan(format!(
            "plan rate {} Hz differs from signal rate {} Hz",
            plan.sample_rate_hz,
            x.sample_rate_hz()
        )));
    }
    if let Some(band) = &cfg.band {
        band.check_rate(x.sample_rate_hz())?;
    }
    let windows = sliding_windows(x.n_samples(), plan)?;
    windows
        .par_iter()
        .enumerate()
        .map(|(w, &(start, end))| {
            let mut local = cfg.clone();
            local.kmeans.seed = derive_seed(cfg.kmeans.seed, w as u64);
            let block = x.slice_rows(start, end)?;
            let mut outcome = WindowOutcome {
                window_id: w,
                start_sample: start,
                end_sample: end,
                n_directions: None,
                model: None,
                communities: None,
                failure: None,
            };
            match run_pipeline(&block, &local) {
                Ok(out) => {
                    let mut communities = out.communities;
                    communities.window_id = Some(w);
                    outcome.n_directions = Some(out.directions.len());
                    outcome.model = Some(out.model);
                    outcome.communities = Some(communities);
                }
                Err(e) if e.is_degenerate() => outcome.failure = Some(e.to_string()),
                Err(e) => return Err(e),
            }
            Ok(outcome)
        })
        .collect()
}

/// Fraction of windows in which each pair of channels shares a community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceMatrix {
    pub channels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Number of windows in which each pair shares a community.
    pub counts: Vec<Vec<usize>>,
    pub n_windows: usize,
    pub failed_windows: Vec<usize>,
}

pub fn persistence_matrix(assignments: &[CommunityAssignment]) -> Result<PersistenceMatrix> {
    let first = assignments
        .first()
        .ok_or_else(|| ExcoError::InvalidInput("no window assignments to aggregate".into()))?;
    let d = first.channels.len();
    let mut counts = vec![vec![0usize; d]; d];
    for (i, a) in assignments.iter().enumerate() {
        if a.channels != first.channels || a.labels.len() != d {
            return Err(ExcoError::InvalidInput(format!(
                "assignment {i} has a different channel set"
            )));
        }
        for (row, lp) in counts.iter_mut().zip(&a.labels) {
            for (count, lq) in row.iter_mut().zip(&a.labels) {
                if lp == lq {
                    *count += 1;
                }
            }
        }
    }
    let n = assignments.len();
    let values = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / n as f64).collect())
        .collect();
    Ok(PersistenceMatrix {
        channels: first.channels.clone(),
        values,
        counts,
        n_windows: n,
        failed_windows: Vec::new(),
    })
}

/// Persistence over the successful windows of `outcomes`; failed windows
/// are listed but do not count.
pub fn persistence_from_outcomes(outcomes: &[WindowOutcome]) -> Result<PersistenceMatrix> {
    let ok: Vec<CommunityAssignment> = outcomes
        .iter()
        .filter_map(|o| o.communities.clone())
        .collect();
    let mut m = persistence_matrix(&ok)?;
    m.failed_windows = outcomes
        .iter()
        .filter(|o| !o.is_ok())
        .map(|o| o.window_id)
        .collect();
    Ok(m)
}

/// Split windows by start time: those starting before `split_s` go first.
pub fn split_outcomes(
    outcomes: &[WindowOutcome],
    sample_rate_hz: f64,
    split_s: f64,
) -> (Vec<WindowOutcome>, Vec<WindowOutcome>) {
    outcomes
        .iter()
        .cloned()
        .partition(|o| o.start_s(sample_rate_hz) < split_s)
}
