//! Clock-offset distributions and probabilistic timestamp comparison.
//!
//! Each client's clock offset relative to the sequencer is a distribution
//! over microseconds. Given two reported timestamps and the senders' offset
//! models, [`preceding_prob`] returns the probability that the first message
//! really happened before the second. Gaussian pairs take a closed form;
//! every other pair goes through an FFT-convolved difference distribution.

use std::sync::LazyLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Hard cap on convolution grid size; finer resolutions are rejected.
const MAX_CONV_BINS: usize = 1 << 22;

/// Gaussians are discretized over mean +/- this many standard deviations.
const GAUSSIAN_SUPPORT_SIGMAS: f64 = 8.0;

/// Empirical densities must integrate to one within this tolerance.
pub const MASS_TOLERANCE: f64 = 1e-6;

static STD_NORMAL: LazyLock<Normal> =
    LazyLock::new(|| Normal::new(0.0, 1.0).expect("unit normal"));

/// Standard normal CDF.
pub(crate) fn phi(x: f64) -> f64 {
    STD_NORMAL.cdf(x)
}

/// Standard normal quantile, q strictly inside (0, 1).
pub(crate) fn phi_inv(q: f64) -> f64 {
    STD_NORMAL.inverse_cdf(q)
}

/// Probabilities are compared after rounding to 12 decimal digits; this is
/// the tie-detection grain used by the ordering layer.
pub(crate) fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// A client's clock-offset distribution, in microseconds.
///
/// `gaussian` with `std == 0` is a point mass (a perfectly known offset).
/// `empirical` is a histogram: `bin_edges` has one more entry than
/// `densities`, edges strictly increase, densities are per-microsecond and
/// must integrate to 1 within [`MASS_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClockModel {
    Gaussian {
        mean: f64,
        std: f64,
    },
    Empirical {
        bin_edges: Vec<f64>,
        densities: Vec<f64>,
    },
}

impl ClockModel {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        let m = ClockModel::Gaussian { mean, std };
        m.validate()?;
        Ok(m)
    }

    pub fn empirical(bin_edges: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        let m = ClockModel::Empirical { bin_edges, densities };
        m.validate()?;
        Ok(m)
    }

    /// Check structural invariants. Deserialized models must be re-validated
    /// by callers; serde only checks shape, not numbers.
    pub fn validate(&self) -> Result<()> {
        match self {
            ClockModel::Gaussian { mean, std } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidDistribution(format!(
                        "gaussian mean must be finite, got {mean}"
                    )));
                }
                if !std.is_finite() || *std < 0.0 {
                    return Err(Error::InvalidDistribution(format!(
                        "gaussian std must be finite and >= 0, got {std}"
                    )));
                }
                Ok(())
            }
            ClockModel::Empirical { bin_edges, densities } => {
                if bin_edges.len() < 2 || densities.len() + 1 != bin_edges.len() {
                    return Err(Error::InvalidDistribution(format!(
                        "need n+1 edges for n densities, got {} edges, {} densities",
                        bin_edges.len(),
                        densities.len()
                    )));
                }
                for w in bin_edges.windows(2) {
                    if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
                        return Err(Error::InvalidDistribution(format!(
                            "bin edges must be finite and strictly increasing, got {} then {}",
                            w[0], w[1]
                        )));
                    }
                }
                let mut mass = 0.0;
                for (k, d) in densities.iter().enumerate() {
                    if !d.is_finite() || *d < 0.0 {
                        return Err(Error::InvalidDistribution(format!(
                            "density {k} must be finite and >= 0, got {d}"
                        )));
                    }
                    mass += d * (bin_edges[k + 1] - bin_edges[k]);
                }
                if (mass - 1.0).abs() > MASS_TOLERANCE {
                    return Err(Error::InvalidDistribution(format!(
                        "densities integrate to {mass}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Mean offset.
    pub fn mean(&self) -> f64 {
        match self {
            ClockModel::Gaussian { mean, .. } => *mean,
            ClockModel::Empirical { bin_edges, densities } => {
                let mut m = 0.0;
                for (k, d) in densities.iter().enumerate() {
                    let w = bin_edges[k + 1] - bin_edges[k];
                    m += d * w * (bin_edges[k] + w / 2.0);
                }
                m
            }
        }
    }

    /// Offset standard deviation. Within-bin spread counts (w^2/12 per bin).
    pub fn std(&self) -> f64 {
        match self {
            ClockModel::Gaussian { std, .. } => *std,
            ClockModel::Empirical { bin_edges, densities } => {
                let mean = self.mean();
                let mut v = 0.0;
                for (k, d) in densities.iter().enumerate() {
                    let w = bin_edges[k + 1] - bin_edges[k];
                    let c = bin_edges[k] + w / 2.0;
                    v += d * w * ((c - mean).powi(2) + w * w / 12.0);
                }
                v.sqrt()
            }
        }
    }

    /// True only for a zero-variance Gaussian.
    pub fn is_point_mass(&self) -> bool {
        matches!(self, ClockModel::Gaussian { std, .. } if *std == 0.0)
    }

    /// P(offset <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ClockModel::Gaussian { mean, std } => {
                if *std == 0.0 {
                    if x < *mean {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    phi((x - mean) / std)
                }
            }
            ClockModel::Empirical { bin_edges, densities } => {
                let last = *bin_edges.last().expect("validated");
                if x <= bin_edges[0] {
                    return 0.0;
                }
                if x >= last {
                    return 1.0;
                }
                let k = bin_edges.partition_point(|e| *e <= x) - 1;
                let mut cum = 0.0;
                for i in 0..k {
                    cum += densities[i] * (bin_edges[i + 1] - bin_edges[i]);
                }
                (cum + densities[k] * (x - bin_edges[k])).clamp(0.0, 1.0)
            }
        }
    }

    /// Draw one offset.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ClockModel::Gaussian { mean, std } => {
                if *std == 0.0 {
                    *mean
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + std * z
                }
            }
            ClockModel::Empirical { .. } => {
                let u: f64 = rng.random();
                offset_quantile(self, u.clamp(1e-12, 1.0 - 1e-12)).expect("validated model")
            }
        }
    }

    /// Discretize onto a uniform grid of `resolution`-wide bins starting at
    /// the returned first edge; yields one probability mass per bin.
    fn discretize(&self, resolution: f64) -> Result<(f64, Vec<f64>)> {
        match self {
            ClockModel::Gaussian { mean, std } => {
                if *std == 0.0 {
                    return Ok((mean - resolution / 2.0, vec![1.0]));
                }
                let lo = mean - GAUSSIAN_SUPPORT_SIGMAS * std;
                let span = 2.0 * GAUSSIAN_SUPPORT_SIGMAS * std;
                let n = checked_bin_count(span, resolution)?;
                let mut masses = Vec::with_capacity(n);
                let mut prev = phi((lo - mean) / std);
                for k in 1..=n {
                    let edge = lo + k as f64 * resolution;
                    let next = phi((edge - mean) / std);
                    masses.push((next - prev).max(0.0));
                    prev = next;
                }
                normalize(&mut masses)?;
                Ok((lo, masses))
            }
            ClockModel::Empirical { bin_edges, .. } => {
                let lo = bin_edges[0];
                let hi = *bin_edges.last().expect("validated");
                let n = checked_bin_count(hi - lo, resolution)?;
                let mut masses = Vec::with_capacity(n);
                let mut prev = 0.0;
                for k in 1..=n {
                    let edge = lo + k as f64 * resolution;
                    let next = self.cdf(edge);
                    masses.push((next - prev).max(0.0));
                    prev = next;
                }
                normalize(&mut masses)?;
                Ok((lo, masses))
            }
        }
    }
}

fn checked_bin_count(span: f64, resolution: f64) -> Result<usize> {
    let n = (span / resolution).ceil();
    if !n.is_finite() || n as usize > MAX_CONV_BINS {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} too fine for support span {span} ({n} bins, cap {MAX_CONV_BINS})"
        )));
    }
    Ok((n as usize).max(1))
}

fn normalize(masses: &mut [f64]) -> Result<()> {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidDistribution(
            "no probability mass left after discretization".into(),
        ));
    }
    for m in masses.iter_mut() {
        *m /= total;
    }
    Ok(())
}

fn validate_resolution(resolution: f64) -> Result<()> {
    if !resolution.is_finite() || resolution <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "resolution must be positive and finite, got {resolution}"
        )));
    }
    Ok(())
}

/// Distribution of the offset difference theta_j - theta_i on a uniform
/// grid. Densities are per microsecond and integrate to exactly 1; the CDF
/// is piecewise linear with cdf[0] == 0 and cdf[n] == 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencePdf {
    bin_edges: Vec<f64>,
    densities: Vec<f64>,
    cdf: Vec<f64>,
}

impl DifferencePdf {
    /// Build from arbitrary nonnegative bin densities; renormalizes total
    /// mass to 1.
    pub fn from_bins(bin_edges: Vec<f64>, densities: Vec<f64>) -> Result<Self> {
        if bin_edges.len() < 2 || densities.len() + 1 != bin_edges.len() {
            return Err(Error::InvalidDistribution(format!(
                "need n+1 edges for n densities, got {} edges, {} densities",
                bin_edges.len(),
                densities.len()
            )));
        }
        for w in bin_edges.windows(2) {
            if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::InvalidDistribution(
                    "bin edges must be finite and strictly increasing".into(),
                ));
            }
        }
        let mut mass = 0.0;
        for (k, d) in densities.iter().enumerate() {
            if !d.is_finite() || *d < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "density {k} must be finite and >= 0, got {d}"
                )));
            }
            mass += d * (bin_edges[k + 1] - bin_edges[k]);
        }
        if !(mass > 0.0) {
            return Err(Error::InvalidDistribution("total mass must be positive".into()));
        }
        let densities: Vec<f64> = densities.iter().map(|d| d / mass).collect();
        let mut cdf = Vec::with_capacity(bin_edges.len());
        cdf.push(0.0);
        let mut cum = 0.0;
        for (k, d) in densities.iter().enumerate() {
            cum += d * (bin_edges[k + 1] - bin_edges[k]);
            cdf.push(cum.min(1.0));
        }
        *cdf.last_mut().expect("nonempty") = 1.0;
        Ok(DifferencePdf { bin_edges, densities, cdf })
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn support(&self) -> (f64, f64) {
        (self.bin_edges[0], *self.bin_edges.last().expect("nonempty"))
    }

    /// P(difference <= x), linear within bins.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let edges = &self.bin_edges;
        if x <= edges[0] {
            return 0.0;
        }
        if x >= *edges.last().expect("nonempty") {
            return 1.0;
        }
        let k = edges.partition_point(|e| *e <= x) - 1;
        (self.cdf[k] + self.densities[k] * (x - edges[k])).clamp(0.0, 1.0)
    }

    /// P(difference > x).
    pub fn tail_probability(&self, x: f64) -> f64 {
        1.0 - self.cdf_at(x)
    }

    pub fn mean(&self) -> f64 {
        let mut m = 0.0;
        for (k, d) in self.densities.iter().enumerate() {
            let w = self.bin_edges[k + 1] - self.bin_edges[k];
            m += d * w * (self.bin_edges[k] + w / 2.0);
        }
        m
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let mut v = 0.0;
        for (k, d) in self.densities.iter().enumerate() {
            let w = self.bin_edges[k + 1] - self.bin_edges[k];
            let c = self.bin_edges[k] + w / 2.0;
            v += d * w * ((c - mean).powi(2) + w * w / 12.0);
        }
        v
    }
}

/// Distribution of theta_j - theta_i, convolved on a uniform grid of width
/// `resolution` microseconds.
pub fn difference_pdf(
    c_i: &ClockModel,
    c_j: &ClockModel,
    resolution: f64,
) -> Result<DifferencePdf> {
    validate_resolution(resolution)?;
    c_i.validate()?;
    c_j.validate()?;

    let (start_i, mut masses_i) = c_i.discretize(resolution)?;
    let (start_j, masses_j) = c_j.discretize(resolution)?;
    let n_i = masses_i.len();
    let n_j = masses_j.len();
    if n_i + n_j - 1 > MAX_CONV_BINS {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} too fine: difference grid needs {} bins, cap {MAX_CONV_BINS}",
            n_i + n_j - 1
        )));
    }

    // theta_j + (-theta_i): negate i's grid, which reverses its mass order.
    let end_i = start_i + n_i as f64 * resolution;
    masses_i.reverse();
    let mut masses = fft_convolve(&masses_j, &masses_i);

    // FFT roundoff can leave tiny negatives; clamp, then renormalize.
    for m in masses.iter_mut() {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    normalize(&mut masses)?;

    // Output bin k is centered at start_j - end_i + (k + 1) * resolution.
    let first_edge = start_j - end_i + resolution / 2.0;
    let n = masses.len();
    let bin_edges: Vec<f64> = (0..=n)
        .map(|k| first_edge + k as f64 * resolution)
        .collect();
    let densities: Vec<f64> = masses.iter().map(|m| m / resolution).collect();
    DifferencePdf::from_bins(bin_edges, densities)
}

fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    use rustfft::num_complex::Complex;

    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = rustfft::FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    let mut fb: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    for (slot, &v) in fa.iter_mut().zip(a) {
        slot.re = v;
    }
    for (slot, &v) in fb.iter_mut().zip(b) {
        slot.re = v;
    }
    forward.process(&mut fa);
    forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inverse.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.truncate(out_len);
    fa.iter().map(|c| c.re * scale).collect()
}

/// P(T_i + theta_i < T_j + theta_j) for Gaussian offset models.
///
/// Degenerate pairs (both point masses) order deterministically and return
/// exactly 0 or 1; equal effective timestamps are an [`Error::ExactTie`].
pub fn preceding_prob_gaussian(
    t_i: f64,
    t_j: f64,
    c_i: &ClockModel,
    c_j: &ClockModel,
) -> Result<f64> {
    let (mu_i, s_i) = gaussian_params(c_i)?;
    let (mu_j, s_j) = gaussian_params(c_j)?;
    if !t_i.is_finite() || !t_j.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "timestamps must be finite, got {t_i} and {t_j}"
        )));
    }
    let num = (t_j - t_i) + (mu_j - mu_i);
    let denom = (s_i * s_i + s_j * s_j).sqrt();
    if denom == 0.0 {
        return if num > 0.0 {
            Ok(1.0)
        } else if num < 0.0 {
            Ok(0.0)
        } else {
            Err(Error::ExactTie)
        };
    }
    Ok(phi(num / denom))
}

fn gaussian_params(c: &ClockModel) -> Result<(f64, f64)> {
    c.validate()?;
    match c {
        ClockModel::Gaussian { mean, std } => Ok((*mean, *std)),
        ClockModel::Empirical { .. } => Err(Error::InvalidParameter(
            "closed form requires gaussian models".into(),
        )),
    }
}

/// P(T_i + theta_i < T_j + theta_j). Gaussian pairs use the closed form;
/// any other pair evaluates the convolved difference distribution's tail
/// beyond T_i - T_j.
pub fn preceding_prob(
    t_i: f64,
    t_j: f64,
    c_i: &ClockModel,
    c_j: &ClockModel,
    resolution: f64,
) -> Result<f64> {
    if let (ClockModel::Gaussian { .. }, ClockModel::Gaussian { .. }) = (c_i, c_j) {
        return preceding_prob_gaussian(t_i, t_j, c_i, c_j);
    }
    if !t_i.is_finite() || !t_j.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "timestamps must be finite, got {t_i} and {t_j}"
        )));
    }
    let diff = difference_pdf(c_i, c_j, resolution)?;
    Ok(diff.tail_probability(t_i - t_j))
}

/// Smallest offset t with P(offset <= t) >= q, for q strictly inside (0, 1).
pub fn offset_quantile(c: &ClockModel, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::QuantileDomain(q));
    }
    c.validate()?;
    match c {
        ClockModel::Gaussian { mean, std } => {
            if *std == 0.0 {
                Ok(*mean)
            } else {
                Ok(mean + std * phi_inv(q))
            }
        }
        ClockModel::Empirical { bin_edges, densities } => {
            let mut cum = 0.0;
            for (k, d) in densities.iter().enumerate() {
                if cum >= q {
                    return Ok(bin_edges[k]);
                }
                let w = bin_edges[k + 1] - bin_edges[k];
                let mass = d * w;
                if cum + mass >= q && *d > 0.0 {
                    return Ok(bin_edges[k] + (q - cum) / d);
                }
                cum += mass;
            }
            Ok(*bin_edges.last().expect("validated"))
        }
    }
}
