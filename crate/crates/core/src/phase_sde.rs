//! Reduced one-dimensional phase equations.
//!
//! The phase of a monitored oscillator obeys
//! `dtheta/dt = omega + sum_i Y_i(theta) ∘ xi_i(t)` in the Stratonovich
//! form, or equivalently the Ito form with the extra drift
//! `1/2 sum_i Y_i'(theta) Y_i(theta)`. Curves are sampled on a uniform
//! angle grid and linearly interpolated; series are stored unwrapped and
//! wrapped only at analysis time to avoid splitting clusters at 0/2 pi.

use std::io::Write;

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, wiener};

/// Real periodic curve sampled on a uniform grid over [0, 2 pi).
#[derive(Debug, Clone)]
pub struct PhaseCurve {
    values: Vec<f64>,
}

impl PhaseCurve {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::InvalidParameter {
                name: "curve",
                reason: format!("need at least 4 grid values, got {}", values.len()),
            });
        }
        Ok(Self { values })
    }

    pub fn constant(value: f64, grid: usize) -> Self {
        Self { values: vec![value; grid.max(4)] }
    }

    /// `amplitude * sin(mode * theta + phase)` on the grid.
    pub fn harmonic(amplitude: f64, mode: usize, phase: f64, grid: usize) -> Self {
        let m = grid.max(4);
        let values = (0..m)
            .map(|j| {
                let theta = std::f64::consts::TAU * j as f64 / m as f64;
                amplitude * (mode as f64 * theta + phase).sin()
            })
            .collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn thetas(&self) -> Vec<f64> {
        let m = self.values.len();
        (0..m).map(|j| std::f64::consts::TAU * j as f64 / m as f64).collect()
    }

    /// Periodic linear interpolation.
    pub fn eval(&self, theta: f64) -> f64 {
        let m = self.values.len();
        let pos = theta.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * m as f64;
        let j = (pos.floor() as usize) % m;
        let w = pos - pos.floor();
        self.values[j] * (1.0 - w) + self.values[(j + 1) % m] * w
    }

    /// dY/dtheta by central differences on the grid.
    pub fn derivative(&self) -> Self {
        let m = self.values.len();
        let h = std::f64::consts::TAU / m as f64;
        let values = (0..m)
            .map(|j| (self.values[(j + 1) % m] - self.values[(j + m - 1) % m]) / (2.0 * h))
            .collect();
        Self { values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// One Stratonovich noise term `Y(theta) ∘ xi(t)`. Terms with the same
/// `stream` id share their Wiener increments.
#[derive(Debug, Clone)]
pub struct PhaseNoiseTerm {
    pub curve: PhaseCurve,
    pub stream: u64,
}

/// Reduced phase model: natural frequency plus multiplicative noise terms.
#[derive(Debug, Clone)]
pub struct PhaseModel {
    pub omega: f64,
    pub noise_terms: Vec<PhaseNoiseTerm>,
}

impl PhaseModel {
    pub fn new(omega: f64, noise_terms: Vec<PhaseNoiseTerm>) -> Result<Self> {
        if omega <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: format!("natural frequency must be positive, got {omega}"),
            });
        }
        Ok(Self { omega, noise_terms })
    }

    /// Heterodyne backaction of the quantum van der Pol oscillator:
    /// `v1 sin(theta) ∘ xi_11 + v1 cos(theta) ∘ xi_12
    ///  + v2 sin(2 theta) ∘ xi_21 + v2 cos(2 theta) ∘ xi_22`,
    /// four independent noise streams.
    pub fn qvdp_closed_form(omega: f64, v1: f64, v2: f64, grid: usize) -> Result<Self> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        Self::new(
            omega,
            vec![
                PhaseNoiseTerm { curve: PhaseCurve::harmonic(v1, 1, 0.0, grid), stream: 0 },
                PhaseNoiseTerm { curve: PhaseCurve::harmonic(v1, 1, half_pi, grid), stream: 1 },
                PhaseNoiseTerm { curve: PhaseCurve::harmonic(v2, 2, 0.0, grid), stream: 2 },
                PhaseNoiseTerm { curve: PhaseCurve::harmonic(v2, 2, half_pi, grid), stream: 3 },
            ],
        )
    }

    /// The consolidated form `omega + v xi` with
    /// `v = sqrt(sum_k v_k^2)`: a single constant white-noise term.
    pub fn consolidated_white_noise(omega: f64, v: f64, grid: usize) -> Result<Self> {
        Self::new(
            omega,
            vec![PhaseNoiseTerm { curve: PhaseCurve::constant(v, grid), stream: 0 }],
        )
    }
}

/// Simulated phase trajectory at fixed step `dt`, stored unwrapped.
#[derive(Debug, Clone)]
pub struct PhaseSeries {
    pub dt: f64,
    pub unwrapped: Vec<f64>,
}

impl PhaseSeries {
    pub fn len(&self) -> usize {
        self.unwrapped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unwrapped.is_empty()
    }

    pub fn final_phase(&self) -> f64 {
        *self.unwrapped.last().expect("nonempty series")
    }

    /// Phases wrapped to [0, 2 pi).
    pub fn wrapped(&self) -> Vec<f64> {
        self.unwrapped.iter().map(|t| t.rem_euclid(std::f64::consts::TAU)).collect()
    }

    /// Wrapped phases of every `stride`-th point after `skip` initial points.
    pub fn wrapped_samples(&self, skip: usize, stride: usize) -> Vec<f64> {
        self.unwrapped
            .iter()
            .skip(skip)
            .step_by(stride.max(1))
            .map(|t| t.rem_euclid(std::f64::consts::TAU))
            .collect()
    }

    pub fn to_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "time,phase_unwrapped,phase")?;
        for (i, phase) in self.unwrapped.iter().enumerate() {
            writeln!(
                writer,
                "{:.9e},{:.9e},{:.9e}",
                i as f64 * self.dt,
                phase,
                phase.rem_euclid(std::f64::consts::TAU)
            )?;
        }
        Ok(())
    }
}

fn unique_streams(terms: &[PhaseNoiseTerm]) -> Vec<u64> {
    let mut ids: Vec<u64> = terms.iter().map(|t| t.stream).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn increments(
    rngs: &mut [(u64, ChaCha12Rng)],
    dt: f64,
    scratch: &mut std::collections::BTreeMap<u64, f64>,
) {
    scratch.clear();
    for (id, rng) in rngs.iter_mut() {
        scratch.insert(*id, wiener(rng, dt));
    }
}

/// Stratonovich integration (Euler-Heun): the diffusion coefficients are
/// averaged between the initial point and an Euler predictor sharing the
/// same increments.
pub fn simulate_phase_stratonovich(
    pm: &PhaseModel,
    theta0: f64,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<PhaseSeries> {
    if dt <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("step must be positive, got {dt}"),
        });
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    let mut rngs: Vec<(u64, ChaCha12Rng)> = unique_streams(&pm.noise_terms)
        .into_iter()
        .map(|id| (id, stream_rng(seed, id)))
        .collect();
    let mut dws = std::collections::BTreeMap::new();
    let mut series = Vec::with_capacity(n_steps + 1);
    let mut theta = theta0;
    series.push(theta);
    for _ in 0..n_steps {
        increments(&mut rngs, dt, &mut dws);
        let mut predictor = theta + pm.omega * dt;
        for term in &pm.noise_terms {
            predictor += term.curve.eval(theta) * dws[&term.stream];
        }
        let mut next = theta + pm.omega * dt;
        for term in &pm.noise_terms {
            next += 0.5 * (term.curve.eval(theta) + term.curve.eval(predictor)) * dws[&term.stream];
        }
        theta = next;
        series.push(theta);
    }
    Ok(PhaseSeries { dt, unwrapped: series })
}

/// The Stratonovich-to-Ito drift correction `1/2 sum_i Y_i' Y_i` on the grid
/// of the first term (all terms must share a grid size).
pub fn strat_to_ito(terms: &[PhaseNoiseTerm]) -> Result<PhaseCurve> {
    let grid = terms.first().map_or(256, |t| t.curve.len());
    let mut values = vec![0.0; grid];
    for term in terms {
        if term.curve.len() != grid {
            return Err(Error::DimensionMismatch { left: grid, right: term.curve.len() });
        }
        let derivative = term.curve.derivative();
        for j in 0..grid {
            values[j] += 0.5 * derivative.values()[j] * term.curve.values()[j];
        }
    }
    PhaseCurve::new(values)
}

/// Ito integration (Euler-Maruyama) of the equivalent equation with the
/// `1/2 sum Y' Y` correction drift.
pub fn simulate_phase_ito(
    pm: &PhaseModel,
    theta0: f64,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<PhaseSeries> {
    if dt <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("step must be positive, got {dt}"),
        });
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    let correction = strat_to_ito(&pm.noise_terms)?;
    let mut rngs: Vec<(u64, ChaCha12Rng)> = unique_streams(&pm.noise_terms)
        .into_iter()
        .map(|id| (id, stream_rng(seed, id)))
        .collect();
    let mut dws = std::collections::BTreeMap::new();
    let mut series = Vec::with_capacity(n_steps + 1);
    let mut theta = theta0;
    series.push(theta);
    for _ in 0..n_steps {
        increments(&mut rngs, dt, &mut dws);
        let mut next = theta + (pm.omega + correction.eval(theta)) * dt;
        for term in &pm.noise_terms {
            next += term.curve.eval(theta) * dws[&term.stream];
        }
        theta = next;
        series.push(theta);
    }
    Ok(PhaseSeries { dt, unwrapped: series })
}

/// Stream id reserved for the common Hamiltonian noise in pair runs.
const COMMON_STREAM: u64 = 1 << 63;

/// Coupled pair driven by independent measurement noises and one shared
/// noise through `Z_HN`: Stratonovich Euler-Heun, emitting both phase series
/// (the difference series is `theta_1 - theta_2` pointwise).
pub fn simulate_phase_pair_common(
    pm: &PhaseModel,
    z_hn: &PhaseCurve,
    theta0: (f64, f64),
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<(PhaseSeries, PhaseSeries)> {
    if dt <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("step must be positive, got {dt}"),
        });
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    let ids = unique_streams(&pm.noise_terms);
    let mut rngs1: Vec<(u64, ChaCha12Rng)> =
        ids.iter().map(|&id| (id, stream_rng(seed, 2 * id))).collect();
    let mut rngs2: Vec<(u64, ChaCha12Rng)> =
        ids.iter().map(|&id| (id, stream_rng(seed, 2 * id + 1))).collect();
    let mut rng_common = stream_rng(seed, COMMON_STREAM);
    let mut dws1 = std::collections::BTreeMap::new();
    let mut dws2 = std::collections::BTreeMap::new();
    let mut s1 = Vec::with_capacity(n_steps + 1);
    let mut s2 = Vec::with_capacity(n_steps + 1);
    let (mut t1, mut t2) = theta0;
    s1.push(t1);
    s2.push(t2);
    let step_one = |theta: f64, dws: &std::collections::BTreeMap<u64, f64>, dw_n: f64| -> f64 {
        let mut predictor = theta + pm.omega * dt;
        for term in &pm.noise_terms {
            predictor += term.curve.eval(theta) * dws[&term.stream];
        }
        predictor += z_hn.eval(theta) * dw_n;
        let mut next = theta + pm.omega * dt;
        for term in &pm.noise_terms {
            next += 0.5 * (term.curve.eval(theta) + term.curve.eval(predictor)) * dws[&term.stream];
        }
        next += 0.5 * (z_hn.eval(theta) + z_hn.eval(predictor)) * dw_n;
        next
    };
    for _ in 0..n_steps {
        increments(&mut rngs1, dt, &mut dws1);
        increments(&mut rngs2, dt, &mut dws2);
        let dw_n = wiener(&mut rng_common, dt);
        t1 = step_one(t1, &dws1, dw_n);
        t2 = step_one(t2, &dws2, dw_n);
        s1.push(t1);
        s2.push(t2);
    }
    Ok((PhaseSeries { dt, unwrapped: s1 }, PhaseSeries { dt, unwrapped: s2 }))
}
