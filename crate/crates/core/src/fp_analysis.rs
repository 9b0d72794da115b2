//! Averaged Fokker-Planck quantities and circular-distribution analysis.
//!
//! For two uncoupled oscillators driven by common noise, period-averaging
//! the Fokker-Planck equation leaves a diffusion in the phase difference
//! with coefficient `[h(0) - h(phi_-)] + v^2`, where `h` is the circular
//! autocorrelation of the common-noise response curve. Its stationary
//! density is `Q(phi_-) = q0 / ([h(0) - h(phi_-)] + v^2)`. All integrals are
//! grid sums (trapezoid on a uniform periodic grid).

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_sde::PhaseCurve;
use crate::rng::stream_rng;

/// Normalized density over [0, 2 pi).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseDistribution {
    pub bins: usize,
    pub density: Vec<f64>,
    pub sample_count: usize,
}

impl PhaseDistribution {
    pub fn uniform(bins: usize) -> Self {
        Self {
            bins,
            density: vec![1.0 / std::f64::consts::TAU; bins],
            sample_count: 0,
        }
    }

    pub fn bin_width(&self) -> f64 {
        std::f64::consts::TAU / self.bins as f64
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.bins).map(|j| (j as f64 + 0.5) * self.bin_width()).collect()
    }

    /// `integral |p - uniform| / 2`.
    pub fn tv_from_uniform(&self) -> f64 {
        let u = 1.0 / std::f64::consts::TAU;
        0.5 * self
            .density
            .iter()
            .map(|d| (d - u).abs() * self.bin_width())
            .sum::<f64>()
    }

    pub fn to_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "bin_center,density")?;
        for (center, density) in self.bin_centers().iter().zip(&self.density) {
            writeln!(writer, "{center:.9e},{density:.9e}")?;
        }
        Ok(())
    }
}

/// Histogram of angles (wrapped into [0, 2 pi)), normalized to a density.
pub fn histogram_phases(series: &[f64], bins: usize) -> Result<PhaseDistribution> {
    if series.is_empty() {
        return Err(Error::EmptyInput("phase series"));
    }
    if bins < 8 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: format!("need at least 8 bins, got {bins}"),
        });
    }
    let width = std::f64::consts::TAU / bins as f64;
    let mut counts = vec![0usize; bins];
    for &phase in series {
        let idx = ((phase.rem_euclid(std::f64::consts::TAU)) / width) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let total = series.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    Ok(PhaseDistribution { bins, density, sample_count: series.len() })
}

/// `integral |p - q|` over the circle; both distributions must share binning.
pub fn l1_distance(p: &PhaseDistribution, q: &PhaseDistribution) -> Result<f64> {
    if p.bins != q.bins {
        return Err(Error::DimensionMismatch { left: p.bins, right: q.bins });
    }
    Ok(p.density
        .iter()
        .zip(&q.density)
        .map(|(a, b)| (a - b).abs() * p.bin_width())
        .sum())
}

/// One-sided Fourier mode powers of a real curve on a uniform grid:
/// `powers[0] = |c_0|^2` and `powers[m] = 2 |c_m|^2` for `m >= 1`,
/// up to the Nyquist mode.
pub fn fourier_spectrum(curve: &[f64]) -> Vec<f64> {
    let n = curve.len();
    let n_modes = n / 2 + 1;
    let mut powers = Vec::with_capacity(n_modes);
    for m in 0..n_modes {
        let mut re = 0.0;
        let mut im = 0.0;
        for (j, &y) in curve.iter().enumerate() {
            let angle = std::f64::consts::TAU * (m * j) as f64 / n as f64;
            re += y * angle.cos();
            im -= y * angle.sin();
        }
        re /= n as f64;
        im /= n as f64;
        let power = re * re + im * im;
        powers.push(if m == 0 { power } else { 2.0 * power });
    }
    powers
}

/// Index of the strongest oscillating mode (`m >= 1`).
pub fn dominant_mode(powers: &[f64]) -> usize {
    powers
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, 0.0), |(ib, vb), (i, &v)| if v > vb { (i, v) } else { (ib, vb) })
        .0
}

/// Number of local maxima above `threshold` times the uniform density,
/// after a circular 3-bin moving average.
pub fn count_clusters(dist: &PhaseDistribution, threshold: f64) -> usize {
    let n = dist.bins;
    let smoothed: Vec<f64> = (0..n)
        .map(|j| {
            (dist.density[(j + n - 1) % n] + dist.density[j] + dist.density[(j + 1) % n]) / 3.0
        })
        .collect();
    let bar = threshold / std::f64::consts::TAU;
    let mut clusters = 0;
    for j in 0..n {
        let left = smoothed[(j + n - 1) % n];
        let right = smoothed[(j + 1) % n];
        if smoothed[j] > bar && smoothed[j] >= left && smoothed[j] > right {
            clusters += 1;
        }
    }
    clusters
}

/// Circular autocorrelation of the response curve at lag `phi`:
/// `h(phi) = (1/2 pi) integral Z(phi + x) Z(x) dx`. Evaluated through the
/// mode powers, `h(phi) = sum_m P_m cos(m phi)`, which agrees with the
/// cyclic grid quadrature at grid lags and extends it exactly to arbitrary
/// lags for band-limited curves.
pub fn correlation_h(z: &PhaseCurve, phi: f64) -> f64 {
    let powers = fourier_spectrum(z.values());
    powers
        .iter()
        .enumerate()
        .map(|(m, p)| p * (m as f64 * phi).cos())
        .sum()
}

/// The whole correlation curve on the grid of `z` (exact cyclic correlation
/// at grid lags).
pub fn correlation_h_curve(z: &PhaseCurve) -> PhaseCurve {
    let m = z.len();
    let values: Vec<f64> = (0..m)
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..m {
                acc += z.values()[(j + k) % m] * z.values()[j];
            }
            acc / m as f64
        })
        .collect();
    PhaseCurve::new(values).expect("nonempty curve")
}

/// Stationary phase-difference density
/// `Q(phi_-) = q0 / ([h(0) - h(phi_-)] + v^2)`, normalized on the grid.
pub fn steady_state_q(h: &PhaseCurve, v: f64) -> Result<PhaseDistribution> {
    let h0 = h.values()[0];
    let mut raw = Vec::with_capacity(h.len());
    for &hv in h.values() {
        let denom = (h0 - hv) + v * v;
        if denom <= 0.0 {
            return Err(Error::NotNormalizable(
                "denominator vanishes: perfect-synchronization limit (v = 0)",
            ));
        }
        raw.push(1.0 / denom);
    }
    let width = std::f64::consts::TAU / h.len() as f64;
    let total: f64 = raw.iter().map(|q| q * width).sum();
    let density = raw.into_iter().map(|q| q / total).collect();
    Ok(PhaseDistribution { bins: h.len(), density, sample_count: 0 })
}

/// Period-averaged diffusion matrix of the pair at lag `phi_-`:
/// `D_ij = h(phi_i - phi_j) + v^2 delta_ij`, sampled on the grid of `z_hn`.
pub fn averaged_diffusion(z_hn: &PhaseCurve, v: f64) -> Vec<[[f64; 2]; 2]> {
    let h = correlation_h_curve(z_hn);
    let h0 = h.values()[0];
    h.values()
        .iter()
        .map(|&hphi| [[h0 + v * v, hphi], [hphi, h0 + v * v]])
        .collect()
}

/// Mean total-variation distance from uniform of multinomial samples of the
/// same size and binning: the Monte Carlo noise floor used to judge whether
/// an observed histogram is consistent with uniformity.
pub fn tv_null_scale(n_samples: usize, bins: usize, n_boot: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream_rng(seed, 0);
    let mut tvs = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let samples: Vec<f64> =
            (0..n_samples).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        let hist = histogram_phases(&samples, bins).expect("nonempty");
        tvs.push(hist.tv_from_uniform());
    }
    let mean = tvs.iter().sum::<f64>() / tvs.len() as f64;
    let var = tvs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / tvs.len() as f64;
    (mean, var.sqrt())
}
