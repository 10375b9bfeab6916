//! Marginal transforms, GEV evaluation and pairwise tail dependence.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ExcoError, Result};
use crate::stats::{mid_ranks, quantile};

/// Below this magnitude the shape parameter is treated as exactly zero.
const GUMBEL_SHAPE_EPS: f64 = 1e-12;

/// A T×D block of samples, one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    samples: Array2<f64>,
    channels: Vec<String>,
    sample_rate_hz: f64,
}

impl SignalMatrix {
    pub fn new(samples: Array2<f64>, channels: Vec<String>, sample_rate_hz: f64) -> Result<Self> {
        let (t, d) = samples.dim();
        if t == 0 || d == 0 {
            return Err(ExcoError::InvalidInput(format!(
                "signal matrix must be non-empty, got {t}x{d}"
            )));
        }
        if channels.len() != d {
            return Err(ExcoError::InvalidInput(format!(
                "{} channel labels for {d} columns",
                channels.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &channels {
            if !seen.insert(c.as_str()) {
                return Err(ExcoError::InvalidInput(format!(
                    "duplicate channel label {c:?}"
                )));
            }
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(ExcoError::Parameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(((t, d), v)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ExcoError::InvalidInput(format!(
                "non-finite sample {v} at row {t}, column {d}"
            )));
        }
        Ok(Self {
            samples,
            channels,
            sample_rate_hz,
        })
    }

    /// Convenience constructor with channels named `ch1..chD`.
    pub fn unlabeled(samples: Array2<f64>, sample_rate_hz: f64) -> Result<Self> {
        let channels = (1..=samples.ncols()).map(|i| format!("ch{i}")).collect();
        Self::new(samples, channels, sample_rate_hz)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    /// Rows `start..end` as a new matrix with the same labels and rate.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_samples() {
            return Err(ExcoError::InvalidInput(format!(
                "row range {start}..{end} outside 0..{}",
                self.n_samples()
            )));
        }
        Ok(Self {
            samples: self.samples.slice(ndarray::s![start..end, ..]).to_owned(),
            channels: self.channels.clone(),
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Replace the samples, keeping labels and rate.
    pub fn with_samples(&self, samples: Array2<f64>) -> Result<Self> {
        Self::new(samples, self.channels.clone(), self.sample_rate_hz)
    }
}

/// Samples transformed to unit-Pareto margins, column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoMatrix {
    values: Array2<f64>,
    channels: Vec<String>,
}

impl ParetoMatrix {
    /// Wrap values that are already on the unit-Pareto scale. Every entry
    /// must be finite and at least 1.
    pub fn from_values(values: Array2<f64>, channels: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 || channels.len() != values.ncols() {
            return Err(ExcoError::InvalidInput(
                "pareto matrix must be non-empty with one label per column".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 1.0) {
            return Err(ExcoError::InvalidInput(
                "pareto values must be finite and at least 1".into(),
            ));
        }
        Ok(Self { values, channels })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn column(&self, d: usize) -> ArrayView1<'_, f64> {
        self.values.column(d)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Location, scale and shape of a generalized extreme value law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GevParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self> {
        let p = Self {
            location,
            scale,
            shape,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(ExcoError::Parameter(format!(
                "GEV scale must be positive, got {}",
                self.scale
            )));
        }
        if !self.location.is_finite() || !self.shape.is_finite() {
            return Err(ExcoError::Parameter(
                "GEV location and shape must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Support of the law as `(lower, upper)`, infinite where unbounded.
    pub fn support(&self) -> (f64, f64) {
        if self.shape.abs() < GUMBEL_SHAPE_EPS {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.shape > 0.0 {
            (self.location - self.scale / self.shape, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, self.location - self.scale / self.shape)
        }
    }
}

/// Symmetric D×D matrix of pairwise tail-dependence estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiMatrix {
    pub channels: Vec<String>,
    pub quantile: f64,
    pub values: Vec<Vec<f64>>,
}

/// `|x - mean|` per channel.
pub fn absolute_amplitude(raw: &SignalMatrix) -> Result<SignalMatrix> {
    let mut out = raw.samples().clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / col.len() as f64;
        col.mapv_inplace(|v| (v - mean).abs());
    }
    raw.with_samples(out)
}

/// Rank transform to unit-Pareto margins: `F = rank / (T + 1)` with mid-ranks
/// for ties, then `Y = 1 / (1 - F)`.
pub fn empirical_pareto_transform(x: &SignalMatrix) -> Result<ParetoMatrix> {
    let samples = x.samples();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(ExcoError::InvalidInput(
            "non-finite sample in pareto transform".into(),
        ));
    }
    let t = samples.nrows() as f64;
    let mut values = Array2::zeros(samples.dim());
    for (d, col) in samples.axis_iter(Axis(1)).enumerate() {
        let ranks = mid_ranks(&col.to_vec());
        for (row, r) in ranks.into_iter().enumerate() {
            values[[row, d]] = (t + 1.0) / (t + 1.0 - r);
        }
    }
    Ok(ParetoMatrix {
        values,
        channels: x.channels().to_vec(),
    })
}

/// GEV distribution function.
pub fn gev_cdf(x: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    let z = (x - p.location) / p.scale;
    if p.shape.abs() < GUMBEL_SHAPE_EPS {
        return Ok((-(-z).exp()).exp());
    }
    let s = 1.0 + p.shape * z;
    if s <= 0.0 {
        // Below a Fréchet lower bound, or above a reversed-Weibull upper bound.
        return Ok(if p.shape > 0.0 { 0.0 } else { 1.0 });
    }
    Ok((-s.powf(-1.0 / p.shape)).exp())
}

/// GEV density; zero outside the support.
pub fn gev_pdf(x: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    let z = (x - p.location) / p.scale;
    if p.shape.abs() < GUMBEL_SHAPE_EPS {
        let e = (-z).exp();
        return Ok(if e.is_finite() {
            e * (-e).exp() / p.scale
        } else {
            0.0
        });
    }
    let s = 1.0 + p.shape * z;
    if s <= 0.0 {
        return Ok(0.0);
    }
    let tz = s.powf(-1.0 / p.shape);
    let density = s.powf(-1.0 / p.shape - 1.0) * (-tz).exp() / p.scale;
    Ok(if density.is_finite() { density } else { 0.0 })
}

/// Tail-dependence estimate between two Pareto-scale columns.
///
/// Each column is thresholded at its own empirical `q`-quantile; the result
/// averages the two conditional frequencies
/// `#{both exceed} / #{first exceeds}` and `#{both exceed} / #{second exceeds}`
/// so that it is exchangeable in its arguments.
pub fn empirical_chi(y1: ArrayView1<'_, f64>, y2: ArrayView1<'_, f64>, q: f64) -> Result<f64> {
    if y1.len() != y2.len() {
        return Err(ExcoError::InvalidInput(format!(
            "columns differ in length: {} vs {}",
            y1.len(),
            y2.len()
        )));
    }
    if y1.is_empty() {
        return Err(ExcoError::InvalidInput("empty columns".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(ExcoError::Parameter(format!(
            "quantile must lie in (0,1), got {q}"
        )));
    }
    let a = y1.to_vec();
    let b = y2.to_vec();
    let t1 = quantile(&a, q);
    let t2 = quantile(&b, q);
    let (mut n1, mut n2, mut joint) = (0usize, 0usize, 0usize);
    for (&u, &v) in a.iter().zip(&b) {
        let e1 = u > t1;
        let e2 = v > t2;
        n1 += e1 as usize;
        n2 += e2 as usize;
        joint += (e1 && e2) as usize;
    }
    if n1 == 0 || n2 == 0 {
        return Err(ExcoError::DegenerateThreshold(format!(
            "no exceedances above the {q} quantile"
        )));
    }
    let chi = 0.5 * (joint as f64 / n1 as f64 + joint as f64 / n2 as f64);
    Ok(chi.clamp(0.0, 1.0))
}

/// All pairwise tail-dependence estimates; unit diagonal.
pub fn chi_matrix(y: &ParetoMatrix, q: f64) -> Result<ChiMatrix> {
    let d = y.n_channels();
    let mut values = vec![vec![1.0; d]; d];
    for (i, j) in (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))) {
        let c = empirical_chi(y.column(i), y.column(j), q)?;
        values[i][j] = c;
        values[j][i] = c;
    }
    Ok(ChiMatrix {
        channels: y.channels().to_vec(),
        quantile: q,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn column(values: &[f64]) -> SignalMatrix {
        let a = Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap();
        SignalMatrix::unlabeled(a, 1.0).unwrap()
    }

    fn col0(m: &Array2<f64>) -> Vec<f64> {
        m.column(0).to_vec()
    }

    #[test]
    fn signal_matrix_rejects_bad_input() {
        assert!(SignalMatrix::unlabeled(Array2::zeros((0, 2)), 1.0).is_err());
        assert!(SignalMatrix::unlabeled(array![[f64::NAN]], 1.0).is_err());
        assert!(SignalMatrix::unlabeled(array![[1.0]], 0.0).is_err());
        let dup = SignalMatrix::new(array![[1.0, 2.0]], vec!["a".into(), "a".into()], 1.0);
        assert!(matches!(dup, Err(ExcoError::InvalidInput(_))));
    }

    #[test]
    fn absolute_amplitude_examples() {
        let out = absolute_amplitude(&column(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(col0(out.samples()), vec![0.0, 0.0, 0.0]);
        let out = absolute_amplitude(&column(&[-1.0, 0.0, 1.0])).unwrap();
        assert_eq!(col0(out.samples()), vec![1.0, 0.0, 1.0]);
        let out = absolute_amplitude(&column(&[2.0, 4.0, 6.0, 8.0])).unwrap();
        assert_eq!(col0(out.samples()), vec![3.0, 1.0, 1.0, 3.0]);
    }

    #[test]
    fn pareto_transform_examples() {
        let y = empirical_pareto_transform(&column(&[3.0, 1.0, 4.0, 2.0])).unwrap();
        let got = col0(y.values());
        for (g, e) in got.iter().zip([2.5, 1.25, 5.0, 5.0 / 3.0]) {
            assert_abs_diff_eq!(*g, e, epsilon = 1e-12);
        }
        let y = empirical_pareto_transform(&column(&[42.0])).unwrap();
        assert_abs_diff_eq!(y.values()[[0, 0]], 2.0, epsilon = 1e-15);
        let y = empirical_pareto_transform(&column(&[7.0, 7.0])).unwrap();
        assert_eq!(col0(y.values()), vec![2.0, 2.0]);
    }

    #[test]
    fn gev_examples() {
        let gumbel = GevParams::new(0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(
            gev_cdf(0.0, &gumbel).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            gev_pdf(0.0, &gumbel).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );

        let frechet = GevParams::new(0.0, 1.0, 0.5).unwrap();
        assert_eq!(gev_cdf(-2.0, &frechet).unwrap(), 0.0);
        assert_eq!(gev_cdf(-3.0, &frechet).unwrap(), 0.0);
        assert_eq!(gev_pdf(-2.5, &frechet).unwrap(), 0.0);
        assert_eq!(frechet.support().0, -2.0);

        // (1 - 0.5)^2 = 0.25 exactly, so the value is exp(-1/4).
        let weibull = GevParams::new(0.0, 1.0, -0.5).unwrap();
        assert_abs_diff_eq!(
            gev_cdf(1.0, &weibull).unwrap(),
            0.778_800_783_071_404_9,
            epsilon = 1e-15
        );
        assert_eq!(gev_cdf(2.5, &weibull).unwrap(), 1.0);
        assert_eq!(gev_pdf(2.5, &weibull).unwrap(), 0.0);
    }

    #[test]
    fn gev_rejects_nonpositive_scale() {
        let bad = GevParams {
            location: 0.0,
            scale: 0.0,
            shape: 0.1,
        };
        assert!(matches!(gev_cdf(0.0, &bad), Err(ExcoError::Parameter(_))));
        assert!(matches!(gev_pdf(0.0, &bad), Err(ExcoError::Parameter(_))));
        assert!(GevParams::new(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn chi_of_identical_columns_is_one() {
        let y = array![1.0, 5.0, 2.0, 9.0, 3.0, 7.0, 4.0, 8.0, 6.0, 10.0];
        assert_eq!(empirical_chi(y.view(), y.view(), 0.7).unwrap(), 1.0);
    }

    #[test]
    fn chi_without_exceedances_fails() {
        let y = array![2.0, 2.0, 2.0, 2.0];
        let err = empirical_chi(y.view(), y.view(), 0.5).unwrap_err();
        assert!(matches!(err, ExcoError::DegenerateThreshold(_)));
    }

    #[test]
    fn chi_matrix_small_cases() {
        let one = ParetoMatrix::from_values(array![[1.0], [2.0]], vec!["a".into()]).unwrap();
        let m = chi_matrix(&one, 0.5).unwrap();
        assert_eq!(m.values, vec![vec![1.0]]);

        let dup = ParetoMatrix::from_values(
            array![[1.0, 1.0], [3.0, 3.0], [2.0, 2.0], [4.0, 4.0]],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let m = chi_matrix(&dup, 0.5).unwrap();
        assert_eq!(m.values[0][1], 1.0);
        assert_eq!(m.values[1][0], 1.0);
    }
}
