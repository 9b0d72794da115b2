//! Phase response curves and measurement-backaction coefficients.
//!
//! Nonlinear norm-preserving dynamics `dpsi = -i B(psi) psi dt` acts on the
//! state exactly like the Hermitian operator
//! `H_B = [B - <B>] |psi><psi| + H.c.`, so both the deterministic and the
//! stochastic parts of a trajectory equation reduce to unitary directions.
//! The phase response curve of a Hermitian direction `H` is the derivative
//! of the asymptotic phase under `exp(-i g H)`, computed here by central
//! differences with a step-halving consistency check.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{expectation, expm, outer, FockOperator, OscillatorModel, PureState};
use crate::limit_cycle::{asymptotic_phase, IsochroneOpts, LimitCycle};
use crate::model_ops::{inner, matvec};
use crate::sun_basis::{decompose, GeneratorBasis};

/// Options for finite-difference phase response evaluation.
#[derive(Debug, Clone)]
pub struct PrcOpts {
    /// Perturbation strength of the central difference.
    pub g: f64,
    /// Relative agreement required between the `g` and `g/2` estimates.
    pub consistency_rel_tol: f64,
    /// Absolute agreement floor, so near-zero responses do not trip the
    /// relative check.
    pub consistency_abs_floor: f64,
    pub isochrone: IsochroneOpts,
}

impl Default for PrcOpts {
    fn default() -> Self {
        Self {
            g: 1e-3,
            consistency_rel_tol: 1e-3,
            consistency_abs_floor: 1e-4,
            isochrone: IsochroneOpts::default(),
        }
    }
}

impl PrcOpts {
    /// Economical settings for full-grid sweeps; accuracy against the
    /// defaults is covered by the validation suite.
    pub fn fast() -> Self {
        Self { isochrone: IsochroneOpts::fast(), ..Self::default() }
    }
}

/// Hermitian equivalent of a norm-preserving dynamics `dpsi = -i B psi dt`
/// at the state `psi`: `H_B = [B - <B>] |psi><psi| + H.c.`. The two dynamics
/// agree on `psi` itself: `-i H_B psi = -i (B - <B>) psi`.
pub fn hermitianize(b: &FockOperator, psi: &PureState) -> Result<FockOperator> {
    if b.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { left: b.dim(), right: psi.dim() });
    }
    let bpsi = matvec(b.entries(), psi.amplitudes());
    let b_exp = inner(psi.amplitudes(), &bpsi);
    let mut w = bpsi;
    for i in 0..psi.dim() {
        w[i] -= b_exp * psi.amplitudes()[i];
    }
    let mut h = outer(&w, psi.amplitudes());
    let hc = outer(psi.amplitudes(), &w);
    h += &hc;
    FockOperator::new(h)
}

/// Traceless Hermitian operators carrying the two orthogonal components of
/// the measurement backaction of a jump operator:
/// `H_1 = (i/sqrt 2)(L - <L>)|psi><psi| + H.c.` and
/// `H_2 = (1/sqrt 2)(L - <L>)|psi><psi| + H.c.`, so that
/// `-i H_1 psi dW_1 - i H_2 psi dW_2 = (L - <L>) psi dW~*` with
/// `dW~ = (dW_1 + i dW_2)/sqrt 2`.
pub fn stochastic_hermitians(
    l: &FockOperator,
    psi: &PureState,
) -> Result<(FockOperator, FockOperator)> {
    if l.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { left: l.dim(), right: psi.dim() });
    }
    let lpsi = matvec(l.entries(), psi.amplitudes());
    let l_exp = inner(psi.amplitudes(), &lpsi);
    let mut w = lpsi;
    for i in 0..psi.dim() {
        w[i] -= l_exp * psi.amplitudes()[i];
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let w1: Array1<C64> = w.mapv(|z| z * C64::new(0.0, inv_sqrt2));
    let mut h1 = outer(&w1, psi.amplitudes());
    h1 += &outer(psi.amplitudes(), &w1);
    let w2: Array1<C64> = w.mapv(|z| z * C64::new(inv_sqrt2, 0.0));
    let mut h2 = outer(&w2, psi.amplitudes());
    h2 += &outer(psi.amplitudes(), &w2);
    Ok((FockOperator::new(h1)?, FockOperator::new(h2)?))
}

/// Phase shift wrapped to (-pi, pi].
fn wrap_phase_diff(d: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = d.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w -= tau;
    }
    w
}

fn phase_of_perturbed(
    lc: &LimitCycle,
    h: &FockOperator,
    psi: &PureState,
    g: f64,
    iso: &IsochroneOpts,
) -> Result<f64> {
    let u = expm(&h.scaled(C64::new(0.0, -g)));
    let perturbed = PureState::from_unnormalized(matvec(u.entries(), psi.amplitudes()))?;
    asymptotic_phase(&perturbed, lc, iso)
}

/// Directional phase response `Z_H(theta)`: the derivative of the asymptotic
/// phase under `exp(-i g H)`, via central differences at `g` with a
/// step-halving consistency check. The matrix exponential is evaluated by
/// scaling-and-squaring to machine precision.
pub fn prc_directional(lc: &LimitCycle, h: &FockOperator, theta: f64, opts: &PrcOpts) -> Result<f64> {
    let dev = h.hermitian_deviation();
    if dev > 1e-10 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    if h.dim() != lc.dim() {
        return Err(Error::DimensionMismatch { left: h.dim(), right: lc.dim() });
    }
    if h.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let psi = lc.state_at(theta);
    let g = opts.g;
    let coarse = {
        let minus = phase_of_perturbed(lc, h, &psi, g, &opts.isochrone)?;
        let plus = phase_of_perturbed(lc, h, &psi, -g, &opts.isochrone)?;
        wrap_phase_diff(minus - plus) / (2.0 * g)
    };
    let fine = {
        let minus = phase_of_perturbed(lc, h, &psi, g / 2.0, &opts.isochrone)?;
        let plus = phase_of_perturbed(lc, h, &psi, -g / 2.0, &opts.isochrone)?;
        wrap_phase_diff(minus - plus) / g
    };
    let allowed = (opts.consistency_rel_tol * fine.abs()).max(opts.consistency_abs_floor);
    if (coarse - fine).abs() > allowed {
        return Err(Error::PrcInconsistent { coarse, fine });
    }
    Ok(fine)
}

/// Sampled phase response curves on the cycle's phase grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PRCTable {
    /// Sample angles, a uniform subset of the cycle grid.
    pub thetas: Vec<f64>,
    /// Directional response curves keyed by label.
    pub directional: BTreeMap<String, Vec<f64>>,
    /// Per-generator curves `Z_l(theta_j)`, indexed `[l][j]`; filled by
    /// [`prc_table`], absent otherwise.
    pub generator: Option<Vec<Vec<f64>>>,
    /// Backaction curves `Y_km(theta_j)` per jump, `m = 1, 2`.
    pub backaction: Vec<BackactionCurves>,
}

/// The two backaction curves of one jump operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackactionCurves {
    pub label: String,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

impl PRCTable {
    fn empty(thetas: Vec<f64>) -> Self {
        Self { thetas, directional: BTreeMap::new(), generator: None, backaction: Vec::new() }
    }

    pub fn grid_size(&self) -> usize {
        self.thetas.len()
    }

    /// CSV export: theta column followed by one column per stored curve.
    pub fn to_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut headers = vec!["theta".to_string()];
        for label in self.directional.keys() {
            headers.push(label.clone());
        }
        for curves in &self.backaction {
            headers.push(format!("Y_{}_1", curves.label));
            headers.push(format!("Y_{}_2", curves.label));
        }
        writeln!(writer, "{}", headers.join(","))?;
        for (j, theta) in self.thetas.iter().enumerate() {
            let mut row = vec![format!("{theta:.12e}")];
            for values in self.directional.values() {
                row.push(format!("{:.12e}", values[j]));
            }
            for curves in &self.backaction {
                row.push(format!("{:.12e}", curves.y1[j]));
                row.push(format!("{:.12e}", curves.y2[j]));
            }
            writeln!(writer, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(data: &str) -> Result<Self> {
        Ok(serde_json::from_str(data)?)
    }
}

fn strided_thetas(lc: &LimitCycle, stride: usize) -> (Vec<usize>, Vec<f64>) {
    let stride = stride.max(1);
    let indices: Vec<usize> = (0..lc.grid_size()).step_by(stride).collect();
    let thetas = indices.iter().map(|&j| lc.theta_at(j)).collect();
    (indices, thetas)
}

/// Fills the per-generator curves `Z_l(theta_j)` for every generator in the
/// basis, sampling every `stride`-th grid point. Cost is one directional PRC
/// per (generator, point) pair, parallelized over the grid.
pub fn prc_table(
    lc: &LimitCycle,
    basis: &GeneratorBasis,
    opts: &PrcOpts,
    stride: usize,
) -> Result<PRCTable> {
    if basis.dim() != lc.dim() {
        return Err(Error::DimensionMismatch { left: basis.dim(), right: lc.dim() });
    }
    let (indices, thetas) = strided_thetas(lc, stride);
    let mut table = PRCTable::empty(thetas);
    let n_gen = basis.len();
    let jobs: Vec<(usize, usize)> = (0..n_gen)
        .flat_map(|l| indices.iter().map(move |&j| (l, j)))
        .collect();
    let values: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(l, j)| prc_directional(lc, &basis.generators()[l], lc.theta_at(j), opts))
        .collect();
    let mut generator = vec![vec![0.0; indices.len()]; n_gen];
    for (slot, value) in jobs.iter().zip(values) {
        let (l, j) = *slot;
        let col = indices.iter().position(|&k| k == j).expect("job index");
        generator[l][col] = value?;
    }
    table.generator = Some(generator);
    Ok(table)
}

/// Backaction coefficient curves `Y_km(theta) = Z_{H_km(theta)}(theta)`,
/// evaluated directly as directional responses of the stochastic Hermitian
/// operators on the cycle. By linearity of the response this equals the
/// generator-decomposition route `sum_l Z_l g_km,l`; the two routes are
/// cross-checked in the test suite.
pub fn backaction_coeffs(lc: &LimitCycle, opts: &PrcOpts, stride: usize) -> Result<PRCTable> {
    let (indices, thetas) = strided_thetas(lc, stride);
    let model = lc.model().clone();
    let jumps = model.jumps().to_vec();
    let mut table = PRCTable::empty(thetas);
    for (k, jump) in jumps.iter().enumerate() {
        let per_point: Vec<Result<(f64, f64)>> = indices
            .par_iter()
            .map(|&j| {
                let psi = lc.grid_states()[j].clone();
                let (h1, h2) = stochastic_hermitians(jump, &psi)?;
                let y1 = prc_directional(lc, &h1, lc.theta_at(j), opts)?;
                let y2 = prc_directional(lc, &h2, lc.theta_at(j), opts)?;
                Ok((y1, y2))
            })
            .collect();
        let mut y1 = Vec::with_capacity(indices.len());
        let mut y2 = Vec::with_capacity(indices.len());
        for entry in per_point {
            let (a, b) = entry?;
            y1.push(a);
            y2.push(b);
        }
        table.backaction.push(BackactionCurves { label: model.labels()[k].clone(), y1, y2 });
    }
    Ok(table)
}

/// Verification route for the backaction curves through the generator
/// decomposition, `Y_km = sum_l Z_l(theta) Tr[H_km E_l]`. Requires a table
/// with generator curves on the same stride.
pub fn backaction_via_decomposition(
    gen_table: &PRCTable,
    lc: &LimitCycle,
    basis: &GeneratorBasis,
    stride: usize,
) -> Result<Vec<BackactionCurves>> {
    let generator = gen_table
        .generator
        .as_ref()
        .ok_or(Error::EmptyInput("generator curves missing from table"))?;
    let (indices, _) = strided_thetas(lc, stride);
    if indices.len() != gen_table.thetas.len() {
        return Err(Error::DimensionMismatch {
            left: indices.len(),
            right: gen_table.thetas.len(),
        });
    }
    let model = lc.model();
    let mut out = Vec::new();
    for (k, jump) in model.jumps().iter().enumerate() {
        let mut y1 = Vec::with_capacity(indices.len());
        let mut y2 = Vec::with_capacity(indices.len());
        for (col, &j) in indices.iter().enumerate() {
            let psi = &lc.grid_states()[j];
            let (h1, h2) = stochastic_hermitians(jump, psi)?;
            let g1 = decompose(&h1, basis)?;
            let g2 = decompose(&h2, basis)?;
            let mut acc1 = 0.0;
            let mut acc2 = 0.0;
            for l in 0..basis.len() {
                acc1 += generator[l][col] * g1[l];
                acc2 += generator[l][col] * g2[l];
            }
            y1.push(acc1);
            y2.push(acc2);
        }
        out.push(BackactionCurves { label: model.labels()[k].clone(), y1, y2 });
    }
    Ok(out)
}

/// Hermitian directions of the homodyne difference dynamics for one jump:
/// the deterministic part `-(1/2)(L^2 - <L^2>) + <L>(L - <L>)` Hermitianized,
/// and the real-noise stochastic part `H = i(L - <L>)|psi><psi| + H.c.`.
#[derive(Debug, Clone)]
pub struct JumpDifference {
    pub label: String,
    pub drift: FockOperator,
    pub stochastic: FockOperator,
}

/// Difference between the homodyne trajectory equation (with jumps rotated
/// by the local-oscillator angles) and the deterministic limit-cycle flow,
/// expressed as per-jump Hermitian directions at the state `psi`.
pub fn homodyne_difference_generator(
    model: &OscillatorModel,
    angles: &[f64],
    psi: &PureState,
) -> Result<Vec<JumpDifference>> {
    let rotated = model.with_rotated_jumps(angles)?;
    if rotated.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { left: rotated.dim(), right: psi.dim() });
    }
    let mut out = Vec::new();
    for (k, l) in rotated.jumps().iter().enumerate() {
        let l_sq = l.matmul(l);
        let l_exp = expectation(l, psi)?;
        let lsq_exp = expectation(&l_sq, psi)?;
        // D = -(1/2)(L^2 - <L^2>) + <L>(L - <L>) so that dpsi = D psi dt;
        // written as dpsi = -i (iD) psi dt and Hermitianized
        let dim = model.dim();
        let identity = FockOperator::identity(dim);
        let mut d_op = &l_sq - &identity.scaled(lsq_exp);
        d_op = d_op.scaled(C64::new(-0.5, 0.0));
        let centered = l - &identity.scaled(l_exp);
        d_op = &d_op + &centered.scaled(l_exp);
        let b = d_op.scaled(C64::new(0.0, 1.0));
        let drift = hermitianize(&b, psi)?;
        // real-noise analogue: -i H psi = (L - <L>) psi
        let w = matvec(centered.entries(), psi.amplitudes());
        let wi: Array1<C64> = w.mapv(|z| z * C64::new(0.0, 1.0));
        let mut h = outer(&wi, psi.amplitudes());
        h += &outer(psi.amplitudes(), &wi);
        let stochastic = FockOperator::new(h)?;
        out.push(JumpDifference { label: rotated.labels()[k].clone(), drift, stochastic });
    }
    Ok(out)
}

/// Least-squares fit of `c0 + A sin(m theta + phi)` on a uniform angle grid
/// (exact Fourier projection there).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HarmonicFit {
    pub mode: usize,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    /// RMS residual over the fitted amplitude.
    pub residual_rel: f64,
}

pub fn fit_single_harmonic(thetas: &[f64], values: &[f64], mode: usize) -> HarmonicFit {
    assert_eq!(thetas.len(), values.len(), "curve length mismatch");
    let n = thetas.len() as f64;
    let offset = values.iter().sum::<f64>() / n;
    let mut s = 0.0;
    let mut c = 0.0;
    for (&theta, &y) in thetas.iter().zip(values) {
        s += (y - offset) * (mode as f64 * theta).sin();
        c += (y - offset) * (mode as f64 * theta).cos();
    }
    let a = 2.0 * s / n;
    let b = 2.0 * c / n;
    let amplitude = a.hypot(b);
    let phase = b.atan2(a);
    let mut ss = 0.0;
    for (&theta, &y) in thetas.iter().zip(values) {
        let fit = offset + amplitude * (mode as f64 * theta + phase).sin();
        ss += (y - fit).powi(2);
    }
    let residual_rel = if amplitude > 0.0 { (ss / n).sqrt() / amplitude } else { (ss / n).sqrt() };
    HarmonicFit { mode, amplitude, phase, offset, residual_rel }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{make_annihilation, make_qvdp};
    use crate::limit_cycle::{find_limit_cycle, CycleOpts};
    use approx::assert_abs_diff_eq;
    use once_cell::sync::Lazy;

    fn perturbed_fock_one(dim: usize) -> PureState {
        let mut amp = Array1::<C64>::zeros(dim);
        amp[0] = C64::new(0.35, 0.0);
        amp[1] = C64::new(1.0, 0.0);
        amp[2] = C64::new(0.2, 0.1);
        PureState::from_unnormalized(amp).unwrap()
    }

    static QVDP_CYCLE: Lazy<LimitCycle> = Lazy::new(|| {
        let model = make_qvdp(10, 1.0, 0.2, 1.0).unwrap();
        find_limit_cycle(&model, &perturbed_fock_one(10), &CycleOpts::default()).unwrap()
    });

    #[test]
    fn hermitianize_annihilates_eigenstate_direction() {
        // B Hermitian with psi an eigenstate: (B - <B>) psi = 0, so H_B = 0
        let a = make_annihilation(4).unwrap();
        let number = a.adjoint().matmul(&a);
        let psi = PureState::fock(4, 2).unwrap();
        let h = hermitianize(&number, &psi).unwrap();
        assert!(h.max_abs() < 1e-14);
    }

    #[test]
    fn hermitianize_of_annihilation_on_fock_one() {
        // B = a, psi = |1>: <a> = 0, H_B = |0><1| + |1><0|
        let a = make_annihilation(3).unwrap();
        let psi = PureState::fock(3, 1).unwrap();
        let h = hermitianize(&a, &psi).unwrap();
        assert_abs_diff_eq!(h.entries()[[0, 1]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h.entries()[[1, 0]].re, 1.0, epsilon = 1e-14);
        assert!(h.entries()[[2, 2]].norm() < 1e-15);
        assert!(h.is_hermitian());
    }

    #[test]
    fn hermitianize_reproduces_dynamics_on_state() {
        // -i H_B psi = -i (B - <B>) psi for a random non-Hermitian B
        let a = make_annihilation(5).unwrap();
        let b = &a.matmul(&a) - &a.adjoint().scaled(C64::new(0.3, 0.7));
        let psi = perturbed_fock_one(5);
        let h = hermitianize(&b, &psi).unwrap();
        assert!(h.is_hermitian());
        let lhs = matvec(h.entries(), psi.amplitudes());
        let b_exp = expectation(&b, &psi).unwrap();
        let bpsi = matvec(b.entries(), psi.amplitudes());
        for i in 0..5 {
            let rhs = bpsi[i] - b_exp * psi.amplitudes()[i];
            assert!((lhs[i] - rhs).norm() < 1e-12, "component {i} mismatch");
        }
        // norm derivative vanishes: <psi| -iH |psi> has zero real part
        let h_exp = expectation(&h, &psi).unwrap();
        assert!(h_exp.norm() < 1e-12);
    }

    #[test]
    fn stochastic_hermitians_on_fock_one() {
        // L = a, psi = |1>: H2 = (1/sqrt2)(|0><1| + |1><0|), H1 = (i/sqrt2)|0><1| + H.c.
        let a = make_annihilation(3).unwrap();
        let psi = PureState::fock(3, 1).unwrap();
        let (h1, h2) = stochastic_hermitians(&a, &psi).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(h2.entries()[[0, 1]].re, s, epsilon = 1e-14);
        assert_abs_diff_eq!(h2.entries()[[1, 0]].re, s, epsilon = 1e-14);
        assert_abs_diff_eq!(h1.entries()[[0, 1]].im, s, epsilon = 1e-14);
        assert_abs_diff_eq!(h1.entries()[[1, 0]].im, -s, epsilon = 1e-14);
    }

    #[test]
    fn stochastic_hermitians_vanish_for_scalar_jump() {
        let l = FockOperator::identity(4).scaled(C64::new(0.0, 2.5));
        let psi = perturbed_fock_one(4);
        let (h1, h2) = stochastic_hermitians(&l, &psi).unwrap();
        assert!(h1.max_abs() < 1e-14);
        assert!(h2.max_abs() < 1e-14);
    }

    #[test]
    fn stochastic_hermitians_traceless_on_cycle() {
        let lc = &*QVDP_CYCLE;
        for j in (0..lc.grid_size()).step_by(16) {
            let psi = &lc.grid_states()[j];
            for jump in lc.model().jumps() {
                let (h1, h2) = stochastic_hermitians(jump, psi).unwrap();
                assert!(h1.trace().norm() <= 1e-12);
                assert!(h2.trace().norm() <= 1e-12);
                assert!(h1.hermitian_deviation() <= 1e-12);
                assert!(h2.hermitian_deviation() <= 1e-12);
            }
        }
    }

    #[test]
    fn equation_13_reconstruction_identity() {
        // -iH1 psi dW1 - iH2 psi dW2 = (L - <L>) psi dW~* for arbitrary dW
        let lc = &*QVDP_CYCLE;
        let psi = &lc.grid_states()[37];
        let l = &lc.model().jumps()[0];
        let (h1, h2) = stochastic_hermitians(l, psi).unwrap();
        let dw1 = 0.37;
        let dw2 = -0.82;
        let mi = C64::new(0.0, -1.0);
        let lhs_1 = matvec(h1.entries(), psi.amplitudes());
        let lhs_2 = matvec(h2.entries(), psi.amplitudes());
        let lpsi = matvec(l.entries(), psi.amplitudes());
        let l_exp = inner(psi.amplitudes(), &lpsi);
        let dw_conj = C64::new(dw1, -dw2) * std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..psi.dim() {
            let lhs = mi * (lhs_1[i] * dw1 + lhs_2[i] * dw2);
            let rhs = (lpsi[i] - l_exp * psi.amplitudes()[i]) * dw_conj;
            assert!((lhs - rhs).norm() < 1e-12, "component {i}");
        }
    }

    #[test]
    fn prc_zero_operator_is_zero() {
        let lc = &*QVDP_CYCLE;
        let z = prc_directional(lc, &FockOperator::zeros(10), 1.0, &PrcOpts::default()).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn prc_tangent_direction_is_unity() {
        // H built from the on-cycle tangent: Z must be d theta / d g = 1
        let lc = &*QVDP_CYCLE;
        let j = 25;
        let m = lc.grid_size();
        let fwd = &lc.grid_states()[(j + 1) % m];
        let bwd = &lc.grid_states()[(j + m - 1) % m];
        let psi = &lc.grid_states()[j];
        let dtheta = std::f64::consts::TAU / m as f64;
        // phase-aligned central difference d psi / d theta
        let af = inner(psi.amplitudes(), fwd.amplitudes());
        let ab = inner(psi.amplitudes(), bwd.amplitudes());
        let rf = C64::from_polar(1.0, -af.arg());
        let rb = C64::from_polar(1.0, -ab.arg());
        let mut tangent = Array1::<C64>::zeros(psi.dim());
        for i in 0..psi.dim() {
            tangent[i] =
                (fwd.amplitudes()[i] * rf - bwd.amplitudes()[i] * rb) / C64::new(2.0 * dtheta, 0.0);
        }
        let b = FockOperator::new(outer(&tangent, psi.amplitudes())).unwrap();
        // dpsi = tangent dtheta = -i (i tangent psi^dag) psi dtheta
        let h = hermitianize(&b.scaled(C64::new(0.0, 1.0)), psi).unwrap();
        let z = prc_directional(lc, &h, lc.theta_at(j), &PrcOpts::default()).unwrap();
        assert!((z - 1.0).abs() < 5e-3, "tangent response {z}");
    }

    #[test]
    fn prc_harmonic_drive_is_first_harmonic() {
        // spot-check at a few angles against a single fitted sinusoid
        let lc = &*QVDP_CYCLE;
        let a = make_annihilation(10).unwrap();
        let drive = &a.scaled(C64::new(0.0, 1.0)) - &a.adjoint().scaled(C64::new(0.0, 1.0));
        let opts = PrcOpts::fast();
        let thetas: Vec<f64> = (0..16).map(|j| lc.theta_at(j * 16)).collect();
        let values: Vec<f64> = thetas
            .iter()
            .map(|&t| prc_directional(lc, &drive, t, &opts).unwrap())
            .collect();
        let fit = fit_single_harmonic(&thetas, &values, 1);
        assert!(
            fit.residual_rel < 0.02,
            "harmonic-drive PRC distorted: residual {}",
            fit.residual_rel
        );
        assert!(fit.amplitude > 0.1, "degenerate amplitude {}", fit.amplitude);
    }

    #[test]
    fn prc_linearity_in_generator_directions() {
        let lc = &*QVDP_CYCLE;
        let basis = crate::sun_basis::build_generators(10).unwrap();
        let opts = PrcOpts::fast();
        let theta = lc.theta_at(48);
        let e1 = &basis.generators()[11];
        let e2 = &basis.generators()[57];
        let combined = &e1.scaled(C64::new(0.3, 0.0)) + &e2.scaled(C64::new(0.7, 0.0));
        let z1 = prc_directional(lc, e1, theta, &opts).unwrap();
        let z2 = prc_directional(lc, e2, theta, &opts).unwrap();
        let zc = prc_directional(lc, &combined, theta, &opts).unwrap();
        assert!(
            (zc - (0.3 * z1 + 0.7 * z2)).abs() < 1e-3,
            "linearity violated: {zc} vs {}",
            0.3 * z1 + 0.7 * z2
        );
    }

    #[test]
    fn homodyne_difference_zero_jumps() {
        let dim = 6;
        let a = make_annihilation(dim).unwrap();
        let h = a.adjoint().matmul(&a);
        let model = OscillatorModel::new(h, vec![], vec![]).unwrap();
        let diffs = homodyne_difference_generator(&model, &[], &perturbed_fock_one(dim)).unwrap();
        assert!(diffs.is_empty());
    }

    #[test]
    fn homodyne_difference_parts_are_hermitian() {
        let lc = &*QVDP_CYCLE;
        let psi = &lc.grid_states()[100];
        let diffs = homodyne_difference_generator(lc.model(), &[0.0, 0.0], psi).unwrap();
        assert_eq!(diffs.len(), 2);
        for d in &diffs {
            assert!(d.drift.hermitian_deviation() < 1e-12);
            assert!(d.stochastic.hermitian_deviation() < 1e-12);
        }
    }

    #[test]
    fn harmonic_fit_recovers_synthetic_curve() {
        let thetas: Vec<f64> =
            (0..64).map(|j| std::f64::consts::TAU * j as f64 / 64.0).collect();
        let values: Vec<f64> =
            thetas.iter().map(|&t| 0.2 + 1.7 * (2.0 * t + 0.6).sin()).collect();
        let fit = fit_single_harmonic(&thetas, &values, 2);
        assert_abs_diff_eq!(fit.amplitude, 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.phase, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.offset, 0.2, epsilon = 1e-12);
        assert!(fit.residual_rel < 1e-12);
    }
}
