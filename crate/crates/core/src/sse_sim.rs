//! Quantum trajectory simulation for homodyne and heterodyne detection.
//!
//! Trajectories follow the Stratonovich-form stochastic Schroedinger
//! equation: heterodyne detection couples each jump operator to a complex
//! Wiener increment `dW~ = (dW_1 + i dW_2)/sqrt 2`, homodyne detection to
//! one real increment per measured quadrature. Integration uses the
//! Euler-Heun predictor-corrector (the drift and every diffusion field are
//! averaged between the endpoint evaluations with the same increments),
//! which converges to the Stratonovich solution; the state is renormalized
//! each step. Ensemble averages of `|psi><psi|` reproduce the Lindblad
//! equation, which is integrated directly here as the validation oracle.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{normalize_in_place, FockOperator, OscillatorModel, PureState};
use crate::limit_cycle::{asymptotic_phase, IsochroneOpts, LimitCycle};
use crate::model_ops::{has_nan, matvec, ModelOps};
use crate::rng::{stream_rng, wiener};

/// Hermitian Hamiltonian noise `H_N = strength * S_N ∘ xi(t)`.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    operator: FockOperator,
    strength: f64,
    shared: bool,
}

impl NoiseSpec {
    pub fn new(operator: FockOperator, strength: f64, shared: bool) -> Result<Self> {
        let dev = operator.hermitian_deviation();
        if dev > 1e-10 {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self { operator, strength, shared })
    }

    pub fn operator(&self) -> &FockOperator {
        &self.operator
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    /// The effective operator `strength * S_N`.
    pub fn scaled_operator(&self) -> FockOperator {
        self.operator.scaled(C64::new(self.strength, 0.0))
    }
}

/// Measurement scheme for a trajectory run.
#[derive(Debug, Clone)]
pub enum Detection {
    Heterodyne,
    /// Homodyne with one local-oscillator angle per jump.
    Homodyne(Vec<f64>),
}

/// Recording controls for a single trajectory.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// States are kept every `sample_stride` steps (currents every step).
    pub sample_stride: usize,
    pub record_states: bool,
    pub record_currents: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { sample_stride: 100, record_states: true, record_currents: true }
    }
}

/// Measurement currents, one series per jump operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Currents {
    /// `J_k = <L_k> + dW~_k/dt`, complex.
    Heterodyne(Vec<Vec<C64>>),
    /// `J_k = <X_k> + dW_k/dt`, real.
    Homodyne(Vec<Vec<f64>>),
}

/// One simulated quantum trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub dt: f64,
    pub n_steps: usize,
    /// Times of the sampled states.
    pub sampled_times: Vec<f64>,
    pub states: Option<Vec<PureState>>,
    pub currents: Option<Currents>,
    /// Isochrone phases of the sampled states, filled by [`attach_phases`].
    pub phases: Option<Vec<f64>>,
}

const BINARY_MAGIC: &[u8; 4] = b"QPTR";
const BINARY_VERSION: u32 = 1;

impl TrajectoryRecord {
    /// CSV of the sampled rows: time, phase (when present), and for context
    /// the per-jump current at the sampled step.
    pub fn sampled_to_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let n_jumps = match &self.currents {
            Some(Currents::Heterodyne(c)) => c.len(),
            Some(Currents::Homodyne(c)) => c.len(),
            None => 0,
        };
        let mut header = vec!["time".to_string()];
        if self.phases.is_some() {
            header.push("phase".into());
        }
        for k in 0..n_jumps {
            match &self.currents {
                Some(Currents::Heterodyne(_)) => {
                    header.push(format!("J{k}_re"));
                    header.push(format!("J{k}_im"));
                }
                _ => header.push(format!("J{k}")),
            }
        }
        writeln!(writer, "{}", header.join(","))?;
        for (idx, time) in self.sampled_times.iter().enumerate() {
            let mut row = vec![format!("{time:.9e}")];
            if let Some(phases) = &self.phases {
                row.push(format!("{:.9e}", phases[idx]));
            }
            let step = ((time / self.dt).round() as usize).min(self.n_steps.saturating_sub(1));
            match &self.currents {
                Some(Currents::Heterodyne(c)) => {
                    for series in c {
                        row.push(format!("{:.9e}", series[step].re));
                        row.push(format!("{:.9e}", series[step].im));
                    }
                }
                Some(Currents::Homodyne(c)) => {
                    for series in c {
                        row.push(format!("{:.9e}", series[step]));
                    }
                }
                None => {}
            }
            writeln!(writer, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Compact binary layout, all little-endian: magic `QPTR`, version u32,
    /// flags u32 (bit 0: heterodyne currents, bit 1: states present, bit 2:
    /// phases present), dim u64, n_steps u64, n_jumps u64, n_samples u64,
    /// seed u64, dt f64; then currents per jump (heterodyne: re, im per
    /// step), sampled times, states as interleaved re/im amplitudes, phases.
    pub fn to_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        let dim = self.states.as_ref().and_then(|s| s.first()).map_or(0, |s| s.dim());
        let (het, n_jumps) = match &self.currents {
            Some(Currents::Heterodyne(c)) => (true, c.len()),
            Some(Currents::Homodyne(c)) => (false, c.len()),
            None => (false, 0),
        };
        let mut flags = 0u32;
        if het {
            flags |= 1;
        }
        if self.states.is_some() {
            flags |= 2;
        }
        if self.phases.is_some() {
            flags |= 4;
        }
        writer.write_all(BINARY_MAGIC)?;
        writer.write_all(&BINARY_VERSION.to_le_bytes())?;
        writer.write_all(&flags.to_le_bytes())?;
        for value in [dim as u64, self.n_steps as u64, n_jumps as u64, self.sampled_times.len() as u64, self.seed] {
            writer.write_all(&value.to_le_bytes())?;
        }
        writer.write_all(&self.dt.to_le_bytes())?;
        match &self.currents {
            Some(Currents::Heterodyne(c)) => {
                for series in c {
                    for z in series {
                        writer.write_all(&z.re.to_le_bytes())?;
                        writer.write_all(&z.im.to_le_bytes())?;
                    }
                }
            }
            Some(Currents::Homodyne(c)) => {
                for series in c {
                    for x in series {
                        writer.write_all(&x.to_le_bytes())?;
                    }
                }
            }
            None => {}
        }
        for t in &self.sampled_times {
            writer.write_all(&t.to_le_bytes())?;
        }
        if let Some(states) = &self.states {
            for state in states {
                for z in state.amplitudes() {
                    writer.write_all(&z.re.to_le_bytes())?;
                    writer.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        if let Some(phases) = &self.phases {
            for p in phases {
                writer.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_binary<R: Read>(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::InvalidParameter {
                name: "binary",
                reason: "bad magic bytes".into(),
            });
        }
        let mut u32buf = [0u8; 4];
        reader.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != BINARY_VERSION {
            return Err(Error::InvalidParameter {
                name: "binary",
                reason: format!("unsupported version {version}"),
            });
        }
        reader.read_exact(&mut u32buf)?;
        let flags = u32::from_le_bytes(u32buf);
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let dim = read_u64(&mut reader)? as usize;
        let n_steps = read_u64(&mut reader)? as usize;
        let n_jumps = read_u64(&mut reader)? as usize;
        let n_samples = read_u64(&mut reader)? as usize;
        let seed = read_u64(&mut reader)?;
        let mut f64buf = [0u8; 8];
        reader.read_exact(&mut f64buf)?;
        let dt = f64::from_le_bytes(f64buf);
        let read_f64 = |r: &mut R| -> Result<f64> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        };
        let currents = if n_jumps > 0 {
            if flags & 1 != 0 {
                let mut all = Vec::with_capacity(n_jumps);
                for _ in 0..n_jumps {
                    let mut series = Vec::with_capacity(n_steps);
                    for _ in 0..n_steps {
                        let re = read_f64(&mut reader)?;
                        let im = read_f64(&mut reader)?;
                        series.push(C64::new(re, im));
                    }
                    all.push(series);
                }
                Some(Currents::Heterodyne(all))
            } else {
                let mut all = Vec::with_capacity(n_jumps);
                for _ in 0..n_jumps {
                    let mut series = Vec::with_capacity(n_steps);
                    for _ in 0..n_steps {
                        series.push(read_f64(&mut reader)?);
                    }
                    all.push(series);
                }
                Some(Currents::Homodyne(all))
            }
        } else {
            None
        };
        let mut sampled_times = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            sampled_times.push(read_f64(&mut reader)?);
        }
        let states = if flags & 2 != 0 {
            let mut states = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let mut amp = Array1::zeros(dim);
                for i in 0..dim {
                    let re = read_f64(&mut reader)?;
                    let im = read_f64(&mut reader)?;
                    amp[i] = C64::new(re, im);
                }
                states.push(PureState::new(amp)?);
            }
            Some(states)
        } else {
            None
        };
        let phases = if flags & 4 != 0 {
            let mut phases = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                phases.push(read_f64(&mut reader)?);
            }
            Some(phases)
        } else {
            None
        };
        Ok(Self { seed, dt, n_steps, sampled_times, states, currents, phases })
    }
}

/// Euler-Heun step for a Stratonovich SDE with several scalar noises.
fn heun_step(
    drift: &dyn Fn(&Array1<C64>) -> Array1<C64>,
    diffusions: &dyn Fn(&Array1<C64>) -> Vec<Array1<C64>>,
    psi: &Array1<C64>,
    dt: f64,
    dws: &[f64],
) -> Array1<C64> {
    let n = psi.len();
    let a0 = drift(psi);
    let b0 = diffusions(psi);
    debug_assert_eq!(b0.len(), dws.len());
    let mut predictor = psi.clone();
    for i in 0..n {
        predictor[i] += a0[i] * C64::new(dt, 0.0);
    }
    for (field, dw) in b0.iter().zip(dws) {
        for i in 0..n {
            predictor[i] += field[i] * C64::new(*dw, 0.0);
        }
    }
    let a1 = drift(&predictor);
    let b1 = diffusions(&predictor);
    let mut out = psi.clone();
    for i in 0..n {
        out[i] += (a0[i] + a1[i]) * C64::new(0.5 * dt, 0.0);
    }
    for ((f0, f1), dw) in b0.iter().zip(&b1).zip(dws) {
        for i in 0..n {
            out[i] += (f0[i] + f1[i]) * C64::new(0.5 * dw, 0.0);
        }
    }
    out
}

struct SseSystem {
    ops: ModelOps,
    detection_heterodyne: bool,
    noise_op: Option<Array2<C64>>,
}

impl SseSystem {
    fn new(model: &OscillatorModel, detection: &Detection, noise: Option<&NoiseSpec>) -> Result<Self> {
        let effective = match detection {
            Detection::Heterodyne => model.clone(),
            Detection::Homodyne(angles) => model.with_rotated_jumps(angles)?,
        };
        Ok(Self {
            ops: ModelOps::new(&effective),
            detection_heterodyne: matches!(detection, Detection::Heterodyne),
            noise_op: noise.map(|n| n.scaled_operator().into_entries()),
        })
    }

    fn n_noise_channels(&self) -> usize {
        let per_jump = if self.detection_heterodyne { 2 } else { 1 };
        self.ops.jumps.len() * per_jump + usize::from(self.noise_op.is_some())
    }

    fn drift(&self, psi: &Array1<C64>) -> Array1<C64> {
        if self.detection_heterodyne {
            self.ops.deterministic_drift(psi)
        } else {
            self.ops.homodyne_drift(psi)
        }
    }

    /// Diffusion fields in channel order: per jump the `dW_1`/`dW_2` pair
    /// (heterodyne) or the single real channel (homodyne), Hamiltonian
    /// noise last.
    fn diffusions(&self, psi: &Array1<C64>) -> Vec<Array1<C64>> {
        let (fields, _) = self.ops.diffusion_fields(psi);
        let mut out = Vec::with_capacity(self.n_noise_channels());
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for field in fields {
            if self.detection_heterodyne {
                // (L - <L>) psi dW~* = b/sqrt2 dW1 + (-i b)/sqrt2 dW2
                out.push(field.mapv(|z| z * C64::new(inv_sqrt2, 0.0)));
                out.push(field.mapv(|z| z * C64::new(0.0, -inv_sqrt2)));
            } else {
                out.push(field);
            }
        }
        if let Some(s_n) = &self.noise_op {
            let mut h_noise = matvec(s_n, psi);
            h_noise.mapv_inplace(|z| z * C64::new(0.0, -1.0));
            out.push(h_noise);
        }
        out
    }
}

struct StepRecorder {
    opts: SimOptions,
    heterodyne: bool,
    sampled_times: Vec<f64>,
    states: Vec<PureState>,
    currents_het: Vec<Vec<C64>>,
    currents_hom: Vec<Vec<f64>>,
}

impl StepRecorder {
    fn new(opts: &SimOptions, heterodyne: bool, n_jumps: usize, n_steps: usize) -> Self {
        let (het, hom) = if opts.record_currents {
            if heterodyne {
                (vec![Vec::with_capacity(n_steps); n_jumps], Vec::new())
            } else {
                (Vec::new(), vec![Vec::with_capacity(n_steps); n_jumps])
            }
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            opts: opts.clone(),
            heterodyne,
            sampled_times: Vec::new(),
            states: Vec::new(),
            currents_het: het,
            currents_hom: hom,
        }
    }

    fn maybe_sample(&mut self, step: usize, time: f64, psi: &Array1<C64>) {
        if self.opts.record_states && step % self.opts.sample_stride == 0 {
            self.sampled_times.push(time);
            self.states.push(PureState::new(psi.clone()).expect("renormalized state"));
        }
    }

    /// The end-of-run state is always kept when states are recorded at all.
    fn sample_final(&mut self, time: f64, psi: &Array1<C64>) {
        if self.opts.record_states {
            self.sampled_times.push(time);
            self.states.push(PureState::new(psi.clone()).expect("renormalized state"));
        }
    }

    fn record_currents(&mut self, expectations: &[C64], dws: &[f64], dt: f64, heterodyne: bool) {
        if !self.opts.record_currents {
            return;
        }
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for (k, l_exp) in expectations.iter().enumerate() {
            if heterodyne {
                let xi = C64::new(dws[2 * k], dws[2 * k + 1]) * inv_sqrt2 / dt;
                self.currents_het[k].push(l_exp + xi);
            } else {
                self.currents_hom[k].push(2.0 * l_exp.re + dws[k] / dt);
            }
        }
    }

    fn finish(self, seed: u64, dt: f64, n_steps: usize) -> TrajectoryRecord {
        let currents = if self.opts.record_currents {
            Some(if self.heterodyne {
                Currents::Heterodyne(self.currents_het)
            } else {
                Currents::Homodyne(self.currents_hom)
            })
        } else {
            None
        };
        TrajectoryRecord {
            seed,
            dt,
            n_steps,
            sampled_times: self.sampled_times,
            states: if self.opts.record_states { Some(self.states) } else { None },
            currents,
            phases: None,
        }
    }
}

fn integrate_with_increments(
    system: &SseSystem,
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    seed: u64,
    fill_dws: &mut dyn FnMut(&mut [f64]),
    opts: &SimOptions,
) -> Result<TrajectoryRecord> {
    if dt <= 0.0 || t_end <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("need positive dt and t_end, got {dt}, {t_end}"),
        });
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    let n_jumps = system.ops.jumps.len();
    let mut recorder = StepRecorder::new(opts, system.detection_heterodyne, n_jumps, n_steps);
    let mut psi = psi0.amplitudes().clone();
    let mut dws = vec![0.0; system.n_noise_channels()];
    for step in 0..n_steps {
        recorder.maybe_sample(step, step as f64 * dt, &psi);
        fill_dws(&mut dws);
        if opts.record_currents {
            let (_, expectations) = system.ops.diffusion_fields(&psi);
            recorder.record_currents(&expectations, &dws, dt, system.detection_heterodyne);
        }
        psi = heun_step(
            &|v| system.drift(v),
            &|v| system.diffusions(v),
            &psi,
            dt,
            &dws,
        );
        if has_nan(&psi) {
            return Err(Error::IntegrationDiverged { step, time: step as f64 * dt });
        }
        normalize_in_place(&mut psi);
    }
    recorder.sample_final(t_end, &psi);
    Ok(recorder.finish(seed, dt, n_steps))
}

fn integrate_single(
    system: &SseSystem,
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    seed: u64,
    meas_rng: &mut ChaCha12Rng,
    mut noise_rng: Option<&mut ChaCha12Rng>,
    opts: &SimOptions,
) -> Result<TrajectoryRecord> {
    let n_meas = system.ops.jumps.len() * if system.detection_heterodyne { 2 } else { 1 };
    let has_noise = system.noise_op.is_some();
    let mut fill = |dws: &mut [f64]| {
        for slot in dws.iter_mut().take(n_meas) {
            *slot = wiener(meas_rng, dt);
        }
        if has_noise {
            let rng = noise_rng.as_mut().expect("noise stream present");
            dws[n_meas] = wiener(rng, dt);
        }
    };
    integrate_with_increments(system, psi0, t_end, dt, seed, &mut fill, opts)
}

/// Heterodyne trajectory (complex Wiener increment per jump), optionally
/// with Hermitian Hamiltonian noise. Identical seeds give bit-identical
/// records.
pub fn simulate_heterodyne(
    model: &OscillatorModel,
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    seed: u64,
    noise: Option<&NoiseSpec>,
    opts: &SimOptions,
) -> Result<TrajectoryRecord> {
    let system = SseSystem::new(model, &Detection::Heterodyne, noise)?;
    let mut meas = stream_rng(seed, 0);
    let mut noise_rng = noise.map(|_| stream_rng(seed, 1));
    integrate_single(&system, psi0, t_end, dt, seed, &mut meas, noise_rng.as_mut(), opts)
}

/// Homodyne trajectory at fixed local-oscillator angles (one real Wiener
/// increment per jump).
pub fn simulate_homodyne(
    model: &OscillatorModel,
    angles: &[f64],
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    seed: u64,
    noise: Option<&NoiseSpec>,
    opts: &SimOptions,
) -> Result<TrajectoryRecord> {
    let system = SseSystem::new(model, &Detection::Homodyne(angles.to_vec()), noise)?;
    let mut meas = stream_rng(seed, 0);
    let mut noise_rng = noise.map(|_| stream_rng(seed, 1));
    integrate_single(&system, psi0, t_end, dt, seed, &mut meas, noise_rng.as_mut(), opts)
}

/// Two identical oscillators under heterodyne detection subjected to the
/// same Hamiltonian-noise path (independent measurement noises, shared
/// `xi_N` increments when the spec says so).
pub fn simulate_pair_common_noise(
    model: &OscillatorModel,
    s_n: &NoiseSpec,
    psi0: (&PureState, &PureState),
    t_end: f64,
    dt: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
    if dt <= 0.0 || t_end <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("need positive dt and t_end, got {dt}, {t_end}"),
        });
    }
    let system = SseSystem::new(model, &Detection::Heterodyne, Some(s_n))?;
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    let n_jumps = system.ops.jumps.len();
    let n_meas = n_jumps * 2;
    let mut rng1 = stream_rng(seed, 0);
    let mut rng2 = stream_rng(seed, 1);
    let mut rng_shared = stream_rng(seed, 2);
    let mut rec1 = StepRecorder::new(opts, true, n_jumps, n_steps);
    let mut rec2 = StepRecorder::new(opts, true, n_jumps, n_steps);
    let mut psi1 = psi0.0.amplitudes().clone();
    let mut psi2 = psi0.1.amplitudes().clone();
    let mut dws1 = vec![0.0; n_meas + 1];
    let mut dws2 = vec![0.0; n_meas + 1];
    for step in 0..n_steps {
        let time = step as f64 * dt;
        rec1.maybe_sample(step, time, &psi1);
        rec2.maybe_sample(step, time, &psi2);
        for slot in dws1.iter_mut().take(n_meas) {
            *slot = wiener(&mut rng1, dt);
        }
        for slot in dws2.iter_mut().take(n_meas) {
            *slot = wiener(&mut rng2, dt);
        }
        let common = wiener(&mut rng_shared, dt);
        dws1[n_meas] = common;
        dws2[n_meas] = if s_n.shared() { common } else { wiener(&mut rng_shared, dt) };
        if opts.record_currents {
            let (_, exp1) = system.ops.diffusion_fields(&psi1);
            let (_, exp2) = system.ops.diffusion_fields(&psi2);
            rec1.record_currents(&exp1, &dws1, dt, true);
            rec2.record_currents(&exp2, &dws2, dt, true);
        }
        psi1 = heun_step(&|v| system.drift(v), &|v| system.diffusions(v), &psi1, dt, &dws1);
        psi2 = heun_step(&|v| system.drift(v), &|v| system.diffusions(v), &psi2, dt, &dws2);
        if has_nan(&psi1) || has_nan(&psi2) {
            return Err(Error::IntegrationDiverged { step, time });
        }
        normalize_in_place(&mut psi1);
        normalize_in_place(&mut psi2);
    }
    rec1.sample_final(t_end, &psi1);
    rec2.sample_final(t_end, &psi2);
    Ok((rec1.finish(seed, dt, n_steps), rec2.finish(seed, dt, n_steps)))
}

/// Fills `phases` with the isochrone phase of every sampled state.
pub fn attach_phases(
    record: &mut TrajectoryRecord,
    lc: &LimitCycle,
    opts: &IsochroneOpts,
) -> Result<()> {
    let states = record
        .states
        .as_ref()
        .ok_or(Error::EmptyInput("record has no sampled states"))?;
    let phases: Result<Vec<f64>> = states
        .par_iter()
        .map(|s| asymptotic_phase(s, lc, opts))
        .collect();
    record.phases = Some(phases?);
    Ok(())
}

/// Density-matrix propagation of the Lindblad equation
/// `drho/dt = -i[H, rho] + sum_k (L rho L^dag - 1/2 {L^dag L, rho})`
/// by fixed-step RK4 (step `<= 1e-3` natural units).
pub fn lindblad_evolve(model: &OscillatorModel, rho: &FockOperator, t: f64) -> Result<FockOperator> {
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: model.dim() });
    }
    let dev = rho.hermitian_deviation();
    if dev > 1e-10 {
        return Err(Error::InvalidDensityMatrix(format!("Hermiticity deviation {dev:.3e}")));
    }
    if (rho.trace().re - 1.0).abs() > 1e-8 || rho.trace().im.abs() > 1e-10 {
        return Err(Error::InvalidDensityMatrix(format!("trace {}", rho.trace())));
    }
    let min_eig = rho.eigvalsh()?.first().copied().unwrap_or(0.0);
    if min_eig < -1e-10 {
        return Err(Error::InvalidDensityMatrix(format!("negative eigenvalue {min_eig:.3e}")));
    }
    if t <= 0.0 {
        return Ok(rho.clone());
    }
    let h = model.hamiltonian().entries().clone();
    let jumps: Vec<Array2<C64>> = model.jumps().iter().map(|l| l.entries().clone()).collect();
    let jump_dags: Vec<Array2<C64>> = model.jumps().iter().map(|l| l.adjoint().into_entries()).collect();
    let ldl: Vec<Array2<C64>> = jumps.iter().zip(&jump_dags).map(|(l, ld)| ld.dot(l)).collect();
    let rhs = |r: &Array2<C64>| -> Array2<C64> {
        let mut out = h.dot(r) - r.dot(&h);
        out.mapv_inplace(|z| z * C64::new(0.0, -1.0));
        for ((l, ld), ll) in jumps.iter().zip(&jump_dags).zip(&ldl) {
            out += &l.dot(r).dot(ld);
            let anti = ll.dot(r) + r.dot(ll);
            out.scaled_add(C64::new(-0.5, 0.0), &anti);
        }
        out
    };
    let steps = (t / 1e-3).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut r = rho.entries().clone();
    for _ in 0..steps {
        let k1 = rhs(&r);
        let k2 = rhs(&(&r + &k1.mapv(|z| z * C64::new(0.5 * dt, 0.0))));
        let k3 = rhs(&(&r + &k2.mapv(|z| z * C64::new(0.5 * dt, 0.0))));
        let k4 = rhs(&(&r + &k3.mapv(|z| z * C64::new(dt, 0.0))));
        let mut incr = k1;
        incr.scaled_add(C64::new(2.0, 0.0), &k2);
        incr.scaled_add(C64::new(2.0, 0.0), &k3);
        incr += &k4;
        r.scaled_add(C64::new(dt / 6.0, 0.0), &incr);
    }
    FockOperator::new(r)
}

/// Trace distance `1/2 Tr |a - b|` between two density matrices.
pub fn trace_distance(a: &FockOperator, b: &FockOperator) -> Result<f64> {
    let diff = a - b;
    let eigs = diff.eigvalsh()?;
    Ok(0.5 * eigs.iter().map(|v| v.abs()).sum::<f64>())
}

/// Ensemble average of the final-state projectors `E[|psi><psi|]` over
/// `n_traj` independent trajectories, summed in trajectory order so the
/// result is independent of scheduling.
pub fn ensemble_average_projector(
    model: &OscillatorModel,
    detection: &Detection,
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    master_seed: u64,
    n_traj: usize,
) -> Result<FockOperator> {
    let finals = ensemble_final_states(model, detection, psi0, t_end, dt, master_seed, n_traj)?;
    let dim = model.dim();
    let mut acc = Array2::<C64>::zeros((dim, dim));
    for state in &finals {
        acc += &crate::hilbert::outer(state.amplitudes(), state.amplitudes());
    }
    acc.mapv_inplace(|z| z / C64::new(n_traj as f64, 0.0));
    FockOperator::new(acc)
}

/// Ensemble averages at step `dt` and at `dt/2` along the *same* Brownian
/// paths: the fine increments are drawn first and summed pairwise for the
/// coarse run, so the Monte Carlo noise is common to both averages and the
/// difference between their Lindblad distances isolates the discretization
/// bias.
pub fn ensemble_average_projector_dt_refined(
    model: &OscillatorModel,
    detection: &Detection,
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    master_seed: u64,
    n_traj: usize,
) -> Result<(FockOperator, FockOperator)> {
    if n_traj == 0 {
        return Err(Error::EmptyInput("ensemble size must be positive"));
    }
    let opts = SimOptions { sample_stride: usize::MAX, record_states: true, record_currents: false };
    let results: Vec<Result<(Array1<C64>, Array1<C64>)>> = (0..n_traj)
        .into_par_iter()
        .map(|idx| {
            let system = SseSystem::new(model, detection, None)?;
            let n_channels = system.n_noise_channels();
            let fine_dt = dt / 2.0;
            let n_fine = ((t_end / fine_dt).round().max(1.0) as usize).next_multiple_of(2);
            let mut rng = stream_rng(master_seed, idx as u64);
            let fine: Vec<Vec<f64>> = (0..n_fine)
                .map(|_| (0..n_channels).map(|_| wiener(&mut rng, fine_dt)).collect())
                .collect();
            let mut fine_iter = fine.iter();
            let mut fill_fine = |dws: &mut [f64]| {
                dws.copy_from_slice(fine_iter.next().expect("enough fine increments"));
            };
            let fine_record = integrate_with_increments(
                &system, psi0, t_end, fine_dt, master_seed, &mut fill_fine, &opts,
            )?;
            let mut pair_iter = fine.chunks(2);
            let mut fill_coarse = |dws: &mut [f64]| {
                let pair = pair_iter.next().expect("enough coarse increments");
                for (i, slot) in dws.iter_mut().enumerate() {
                    *slot = pair[0][i] + pair[1][i];
                }
            };
            let coarse_record = integrate_with_increments(
                &system, psi0, t_end, dt, master_seed, &mut fill_coarse, &opts,
            )?;
            let fine_state = fine_record.states.expect("states").pop().expect("final");
            let coarse_state = coarse_record.states.expect("states").pop().expect("final");
            Ok((coarse_state.amplitudes().clone(), fine_state.amplitudes().clone()))
        })
        .collect();
    let dim = model.dim();
    let mut acc_coarse = Array2::<C64>::zeros((dim, dim));
    let mut acc_fine = Array2::<C64>::zeros((dim, dim));
    for entry in results {
        let (coarse, fine) = entry?;
        acc_coarse += &crate::hilbert::outer(&coarse, &coarse);
        acc_fine += &crate::hilbert::outer(&fine, &fine);
    }
    let scale = C64::new(n_traj as f64, 0.0);
    acc_coarse.mapv_inplace(|z| z / scale);
    acc_fine.mapv_inplace(|z| z / scale);
    Ok((FockOperator::new(acc_coarse)?, FockOperator::new(acc_fine)?))
}

/// Final states of an ensemble of trajectories, in trajectory order.
pub fn ensemble_final_states(
    model: &OscillatorModel,
    detection: &Detection,
    psi0: &PureState,
    t_end: f64,
    dt: f64,
    master_seed: u64,
    n_traj: usize,
) -> Result<Vec<PureState>> {
    if n_traj == 0 {
        return Err(Error::EmptyInput("ensemble size must be positive"));
    }
    let opts = SimOptions { sample_stride: usize::MAX, record_states: true, record_currents: false };
    let finals: Vec<Result<PureState>> = (0..n_traj)
        .into_par_iter()
        .map(|idx| {
            let system = SseSystem::new(model, detection, None)?;
            let mut meas = stream_rng(master_seed, idx as u64);
            let record =
                integrate_single(&system, psi0, t_end, dt, master_seed, &mut meas, None, &opts)?;
            Ok(record.states.expect("states recorded").pop().expect("final state"))
        })
        .collect();
    finals.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{expectation, make_annihilation, make_qvdp};
    use approx::assert_abs_diff_eq;

    fn superposition(dim: usize) -> PureState {
        let mut amp = Array1::<C64>::zeros(dim);
        amp[0] = C64::new(0.6, 0.1);
        amp[1] = C64::new(0.8, 0.0);
        amp[2] = C64::new(0.0, 0.3);
        PureState::from_unnormalized(amp).unwrap()
    }

    #[test]
    fn zero_jumps_matches_deterministic_flow() {
        let dim = 5;
        let a = make_annihilation(dim).unwrap();
        let h = a.adjoint().matmul(&a);
        let model = OscillatorModel::new(h, vec![], vec![]).unwrap();
        let psi0 = superposition(dim);
        let record = simulate_heterodyne(
            &model,
            &psi0,
            1.0,
            1e-3,
            7,
            None,
            &SimOptions { sample_stride: usize::MAX, record_states: true, record_currents: false },
        )
        .unwrap();
        let stochastic_final = record.states.unwrap().pop().unwrap();
        let deterministic = crate::limit_cycle::evolve_state(&model, &psi0, 1.0, 1000).unwrap();
        let overlap = stochastic_final.overlap(&deterministic).norm();
        assert!(overlap > 1.0 - 1e-9, "overlap deficit {}", 1.0 - overlap);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let model = make_qvdp(6, 1.0, 0.2, 1.0).unwrap();
        let psi0 = superposition(6);
        let opts = SimOptions::default();
        let a = simulate_heterodyne(&model, &psi0, 0.5, 1e-3, 42, None, &opts).unwrap();
        let b = simulate_heterodyne(&model, &psi0, 0.5, 1e-3, 42, None, &opts).unwrap();
        assert_eq!(a.currents, b.currents);
        let sa = a.states.unwrap();
        let sb = b.states.unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            assert_eq!(x.amplitudes(), y.amplitudes());
        }
        let c = simulate_heterodyne(&model, &psi0, 0.5, 1e-3, 43, None, &opts).unwrap();
        assert_ne!(a.currents, c.currents);
    }

    #[test]
    fn homodyne_seeded_determinism() {
        let model = make_qvdp(6, 1.0, 0.2, 1.0).unwrap();
        let psi0 = superposition(6);
        let opts = SimOptions::default();
        let a = simulate_homodyne(&model, &[0.0, 0.0], &psi0, 0.5, 1e-3, 9, None, &opts).unwrap();
        let b = simulate_homodyne(&model, &[0.0, 0.0], &psi0, 0.5, 1e-3, 9, None, &opts).unwrap();
        assert_eq!(a.currents, b.currents);
    }

    #[test]
    fn trajectory_norm_stays_unit() {
        let model = make_qvdp(8, 1.0, 0.2, 1.0).unwrap();
        let psi0 = superposition(8);
        let opts = SimOptions { sample_stride: 50, record_states: true, record_currents: false };
        let record = simulate_heterodyne(&model, &psi0, 2.0, 1e-3, 3, None, &opts).unwrap();
        for state in record.states.unwrap() {
            assert_abs_diff_eq!(state.norm(), 1.0, epsilon = 1e-12);
        }
        let mut last = 0.0;
        for t in &record.sampled_times {
            assert!(*t > last || *t == 0.0, "times not strictly increasing");
            last = *t;
        }
    }

    #[test]
    fn lindblad_eigenprojector_is_stationary() {
        let dim = 4;
        let a = make_annihilation(dim).unwrap();
        let h = a.adjoint().matmul(&a);
        let model = OscillatorModel::new(h, vec![], vec![]).unwrap();
        let psi = PureState::fock(dim, 2).unwrap();
        let rho = FockOperator::new(crate::hilbert::outer(psi.amplitudes(), psi.amplitudes())).unwrap();
        let evolved = lindblad_evolve(&model, &rho, 1.0).unwrap();
        assert!(evolved.max_abs_diff(&rho) < 1e-10);
    }

    #[test]
    fn lindblad_single_loss_decays_exponentially() {
        // L = a, rho = |1><1|: <n>(t) = e^{-t}
        let dim = 4;
        let a = make_annihilation(dim).unwrap();
        let model = OscillatorModel::new(
            FockOperator::zeros(dim),
            vec![a.clone()],
            vec!["loss".into()],
        )
        .unwrap();
        let psi = PureState::fock(dim, 1).unwrap();
        let rho = FockOperator::new(crate::hilbert::outer(psi.amplitudes(), psi.amplitudes())).unwrap();
        let evolved = lindblad_evolve(&model, &rho, 0.7).unwrap();
        let n_exp = evolved.entries()[[1, 1]].re;
        assert_abs_diff_eq!(n_exp, (-0.7_f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn lindblad_preserves_trace_for_qvdp() {
        let model = make_qvdp(8, 1.0, 0.2, 1.0).unwrap();
        let psi = superposition(8);
        let rho = FockOperator::new(crate::hilbert::outer(psi.amplitudes(), psi.amplitudes())).unwrap();
        let mut state = rho;
        for _ in 0..5 {
            state = lindblad_evolve(&model, &state, 0.5).unwrap();
            assert_abs_diff_eq!(state.trace().re, 1.0, epsilon = 1e-9);
            assert!(state.trace().im.abs() < 1e-12);
            assert!(state.hermitian_deviation() < 1e-10);
        }
    }

    #[test]
    fn lindblad_rejects_bad_density_matrix() {
        let model = make_qvdp(4, 1.0, 0.2, 1.0).unwrap();
        let bad = FockOperator::identity(4); // trace 4
        assert!(matches!(
            lindblad_evolve(&model, &bad, 0.1),
            Err(Error::InvalidDensityMatrix(_))
        ));
    }

    #[test]
    fn heterodyne_ensemble_matches_lindblad() {
        // unravelling consistency at reduced size; the full-size version is
        // an acceptance criterion
        let model = make_qvdp(6, 1.0, 0.2, 1.0).unwrap();
        let psi0 = PureState::fock(6, 1).unwrap();
        let t_end = 2.0;
        let finals = ensemble_final_states(
            &model,
            &Detection::Heterodyne,
            &psi0,
            t_end,
            1e-3,
            2024,
            400,
        )
        .unwrap();
        let dim = 6;
        let mut acc = Array2::<C64>::zeros((dim, dim));
        for state in &finals {
            acc += &crate::hilbert::outer(state.amplitudes(), state.amplitudes());
        }
        acc.mapv_inplace(|z| z / C64::new(finals.len() as f64, 0.0));
        let ensemble_rho = FockOperator::new(acc).unwrap();
        let rho0 =
            FockOperator::new(crate::hilbert::outer(psi0.amplitudes(), psi0.amplitudes())).unwrap();
        let lindblad_rho = lindblad_evolve(&model, &rho0, t_end).unwrap();
        let dist = trace_distance(&ensemble_rho, &lindblad_rho).unwrap();
        assert!(dist < 0.12, "trace distance {dist} too large for n = 400");
    }

    #[test]
    fn homodyne_ensemble_matches_lindblad() {
        let model = make_qvdp(6, 1.0, 0.2, 1.0).unwrap();
        let psi0 = PureState::fock(6, 1).unwrap();
        let t_end = 1.5;
        let finals = ensemble_final_states(
            &model,
            &Detection::Homodyne(vec![0.0, 0.0]),
            &psi0,
            t_end,
            1e-3,
            77,
            400,
        )
        .unwrap();
        let mut acc = Array2::<C64>::zeros((6, 6));
        for state in &finals {
            acc += &crate::hilbert::outer(state.amplitudes(), state.amplitudes());
        }
        acc.mapv_inplace(|z| z / C64::new(finals.len() as f64, 0.0));
        let ensemble_rho = FockOperator::new(acc).unwrap();
        let rho0 =
            FockOperator::new(crate::hilbert::outer(psi0.amplitudes(), psi0.amplitudes())).unwrap();
        let lindblad_rho = lindblad_evolve(&model, &rho0, t_end).unwrap();
        let dist = trace_distance(&ensemble_rho, &lindblad_rho).unwrap();
        assert!(dist < 0.12, "trace distance {dist} too large for n = 400");
    }

    #[test]
    fn pair_shares_common_noise_path() {
        // with measurement noise suppressed (no jumps) and shared S_N, both
        // oscillators follow identical dynamics
        let dim = 5;
        let a = make_annihilation(dim).unwrap();
        let h = a.adjoint().matmul(&a);
        let model = OscillatorModel::new(h, vec![], vec![]).unwrap();
        let s_n = &a.scaled(C64::new(0.0, 1.0)) - &a.adjoint().scaled(C64::new(0.0, 1.0));
        let spec = NoiseSpec::new(s_n, 1.0, true).unwrap();
        let psi0 = superposition(dim);
        let opts = SimOptions { sample_stride: 100, record_states: true, record_currents: false };
        let (r1, r2) =
            simulate_pair_common_noise(&model, &spec, (&psi0, &psi0), 1.0, 1e-3, 5, &opts).unwrap();
        let s1 = r1.states.unwrap();
        let s2 = r2.states.unwrap();
        for (x, y) in s1.iter().zip(&s2) {
            assert!(x.overlap(y).norm() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn noise_spec_rejects_non_hermitian() {
        let a = make_annihilation(4).unwrap();
        assert!(NoiseSpec::new(a, 1.0, true).is_err());
    }

    #[test]
    fn binary_roundtrip() {
        let model = make_qvdp(5, 1.0, 0.2, 1.0).unwrap();
        let psi0 = superposition(5);
        let opts = SimOptions { sample_stride: 100, record_states: true, record_currents: true };
        let mut record =
            simulate_heterodyne(&model, &psi0, 0.3, 1e-3, 11, None, &opts).unwrap();
        record.phases = Some(vec![0.5; record.sampled_times.len()]);
        let mut buf = Vec::new();
        record.to_binary(&mut buf).unwrap();
        let loaded = TrajectoryRecord::from_binary(buf.as_slice()).unwrap();
        assert_eq!(loaded.n_steps, record.n_steps);
        assert_eq!(loaded.seed, record.seed);
        assert_eq!(loaded.currents, record.currents);
        assert_eq!(loaded.sampled_times, record.sampled_times);
        assert_eq!(loaded.phases, record.phases);
        let (ls, rs) = (loaded.states.unwrap(), record.states.unwrap());
        for (x, y) in ls.iter().zip(&rs) {
            assert_eq!(x.amplitudes(), y.amplitudes());
        }
    }

    #[test]
    fn expectation_currents_track_state() {
        let model = make_qvdp(6, 1.0, 0.2, 1.0).unwrap();
        let psi0 = superposition(6);
        let record = simulate_heterodyne(
            &model,
            &psi0,
            0.01,
            1e-3,
            1,
            None,
            &SimOptions { sample_stride: 1, record_states: true, record_currents: true },
        )
        .unwrap();
        // first current sample embeds <L_k> at t = 0 plus noise/dt; verify the
        // expectation part using the known initial state
        if let Some(Currents::Heterodyne(series)) = &record.currents {
            let l0 = &model.jumps()[0];
            let expected = expectation(l0, &psi0).unwrap();
            // the noise part has zero mean over many reseeded draws; here we
            // only check the current is finite and the series lengths match
            assert_eq!(series[0].len(), record.n_steps);
            assert!(series[0][0].is_finite());
            let _ = expected;
        } else {
            panic!("currents missing");
        }
    }
}
