//! Seeded generators for heavy-tailed synthetic multichannel data.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::error::{ExcoError, Result};
use crate::evt::SignalMatrix;
use crate::seeding::stream_rng;

/// Sample rate attached to generated signals.
pub const SIMULATED_RATE_HZ: f64 = 100.0;

/// Stability index used by the triplet example.
pub const TRIPLET_ALPHA: f64 = 1.75;

/// Coefficients of the MA(3) process driving the two dependent channels.
pub const TRIPLET_MA3: [f64; 4] = [1.0, 0.5, -0.6, 1.5];

/// Coefficients of the independent MA(4) channel.
pub const TRIPLET_MA4: [f64; 5] = [1.0, 0.7, -0.2, 1.5, -0.5];

/// Noise added to each channel of a planted block, relative to the factor
/// scale.
pub const BLOCK_NOISE_SCALE: f64 = 0.05;

/// Symmetric α-stable law with the given scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub alpha: f64,
    pub scale: f64,
}

impl StableParams {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        let p = Self { alpha, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn standard(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(ExcoError::Parameter(format!(
                "stability index must lie in (0, 2], got {}",
                self.alpha
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(ExcoError::Parameter(format!(
                "stable scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Chambers–Mallows–Stuck map for the symmetric case: `angle` uniform on
/// (-π/2, π/2), `exp_draw` standard exponential. Odd in `angle`.
pub fn cms_transform(alpha: f64, angle: f64, exp_draw: f64) -> f64 {
    if alpha == 1.0 {
        return angle.tan();
    }
    let a = (alpha * angle).sin() / angle.cos().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * angle).cos() / exp_draw).powf((1.0 - alpha) / alpha);
    a * b
}

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn stable_draws<R: Rng>(p: &StableParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let angle = PI * (open_unit(rng) - 0.5);
            let exp_draw = -open_unit(rng).ln();
            p.scale * cms_transform(p.alpha, angle, exp_draw)
        })
        .collect()
}

/// `n` i.i.d. symmetric α-stable draws, reproducible per seed.
pub fn sample_symmetric_stable(p: &StableParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    p.validate()?;
    if n == 0 {
        return Err(ExcoError::Parameter(
            "sample size must be at least 1".into(),
        ));
    }
    Ok(stable_draws(p, n, &mut stream_rng(seed, 0)))
}

/// Finite-order moving average `X_t = Σ_j c_j Z_{t-j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaModel {
    coefficients: Vec<f64>,
}

impl MaModel {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(ExcoError::Parameter(
                "MA coefficients must be finite and non-empty".into(),
            ));
        }
        if coefficients.iter().all(|&c| c == 0.0) {
            return Err(ExcoError::Parameter("MA coefficients are all zero".into()));
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }
}

/// Filter `innovations` through the model, dropping the first `order`
/// outputs whose sums would reach before the series start. The result has
/// `innovations.len() - order` entries.
pub fn simulate_ma(model: &MaModel, innovations: &[f64]) -> Result<Vec<f64>> {
    let q = model.order();
    if innovations.len() < q + 1 {
        return Err(ExcoError::InvalidInput(format!(
            "MA({q}) needs at least {} innovations, got {}",
            q + 1,
            innovations.len()
        )));
    }
    Ok((q..innovations.len())
        .map(|t| {
            model
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, c)| c * innovations[t - j])
                .sum()
        })
        .collect())
}

/// Stationary MA series of length `n` driven by standard symmetric stable
/// innovations from stream `stream` of `seed`.
pub fn stable_ma_series(
    model: &MaModel,
    alpha: f64,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let p = StableParams::standard(alpha)?;
    let z = stable_draws(&p, n + model.order(), &mut stream_rng(seed, stream));
    simulate_ma(model, &z)
}

/// Three channels (T3, P4, T6): P4 is the MA(3) series, T6 its copy
/// delayed by one sample, and T3 an independent MA(4) series; all driven by
/// α = 1.75 symmetric stable innovations.
pub fn make_fig3_triplet(n: usize, seed: u64) -> Result<SignalMatrix> {
    if n < 2 {
        return Err(ExcoError::Parameter(
            "triplet needs at least 2 samples".into(),
        ));
    }
    let ma3 = MaModel::new(TRIPLET_MA3.to_vec())?;
    let ma4 = MaModel::new(TRIPLET_MA4.to_vec())?;
    let x = stable_ma_series(&ma3, TRIPLET_ALPHA, n + 1, seed, 1)?;
    let x_star = stable_ma_series(&ma4, TRIPLET_ALPHA, n, seed, 2)?;
    let mut samples = Array2::zeros((n, 3));
    for t in 0..n {
        samples[[t, 0]] = x_star[t];
        samples[[t, 1]] = x[t + 1];
        samples[[t, 2]] = x[t];
    }
    SignalMatrix::new(
        samples,
        vec!["T3".into(), "P4".into(), "T6".into()],
        SIMULATED_RATE_HZ,
    )
}

/// Signal with a known channel partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDataset {
    pub signal: SignalMatrix,
    /// 1-based block index of every channel.
    pub true_labels: Vec<usize>,
}

/// Channels grouped into mutually independent blocks; every channel of a
/// block is the block's heavy-tailed MA(3) factor plus Gaussian noise with
/// standard deviation [`BLOCK_NOISE_SCALE`].
pub fn synthetic_block_dataset(
    d: usize,
    block_sizes: &[usize],
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<PlantedDataset> {
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(ExcoError::Parameter("block sizes must be positive".into()));
    }
    if block_sizes.iter().sum::<usize>() != d {
        return Err(ExcoError::Parameter(format!(
            "block sizes {block_sizes:?} do not sum to {d} channels"
        )));
    }
    if n == 0 {
        return Err(ExcoError::Parameter("need at least one sample".into()));
    }
    StableParams::standard(alpha)?;
    let ma3 = MaModel::new(TRIPLET_MA3.to_vec())?;
    // A stable law with index 2 and scale s is N(0, 2 s^2).
    let noise = StableParams::new(2.0, BLOCK_NOISE_SCALE / 2f64.sqrt())?;
    let mut samples = Array2::zeros((n, d));
    let mut true_labels = Vec::with_capacity(d);
    let mut channel = 0;
    for (b, &size) in block_sizes.iter().enumerate() {
        let factor = stable_ma_series(&ma3, alpha, n, seed, 1000 + b as u64)?;
        for _ in 0..size {
            let eps = stable_draws(&noise, n, &mut stream_rng(seed, 2000 + channel as u64));
            for t in 0..n {
                samples[[t, channel]] = factor[t] + eps[t];
            }
            true_labels.push(b + 1);
            channel += 1;
        }
    }
    let labels = (1..=d).map(|i| format!("ch{i}")).collect();
    Ok(PlantedDataset {
        signal: SignalMatrix::new(samples, labels, SIMULATED_RATE_HZ)?,
        true_labels,
    })
}
