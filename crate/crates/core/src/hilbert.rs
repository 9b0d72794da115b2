//! Truncated bosonic Hilbert-space primitives.
//!
//! A single oscillator mode is truncated to the lowest `N` Fock levels.
//! Operators are dense complex `N x N` matrices; pure states are normalized
//! complex `N`-vectors, physically identified modulo a global phase.
//! Rates are expressed in natural units where the jump rates are inverse
//! time, so all operators here are dimensionless.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Hermiticity threshold: an operator `O` counts as Hermitian when
/// `max |O - O^dag| <= HERMITIAN_TOL` entrywise.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Allowed norm drift of a pure state after any public operation.
pub const NORM_TOL: f64 = 1e-9;

/// Overlap-modulus deficit below which two states count as physically equal.
pub const PHYS_EQ_TOL: f64 = 1e-9;

/// Dense operator on the truncated Fock space.
#[derive(Debug, Clone)]
pub struct FockOperator {
    dim: usize,
    entries: Array2<C64>,
}

impl FockOperator {
    /// Wraps a square matrix. Fails on non-square input.
    pub fn new(entries: Array2<C64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch { left: rows, right: cols });
        }
        if rows == 0 {
            return Err(Error::InvalidDimension { dim: 0, reason: "operator must be nonempty" });
        }
        Ok(Self { dim: rows, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Array2::zeros((dim, dim)) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, entries: Array2::eye(dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<C64> {
        self.entries
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Array2::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[[i, j]] = self.entries[[j, i]].conj();
            }
        }
        Self { dim: self.dim, entries: out }
    }

    /// Largest entrywise deviation from the adjoint.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let d = (self.entries[[i, j]] - self.entries[[j, i]].conj()).norm();
                dev = dev.max(d);
            }
        }
        dev
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_deviation() <= HERMITIAN_TOL
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.entries[[i, i]]).sum()
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self { dim: self.dim, entries: self.entries.mapv(|z| z * factor) }
    }

    /// Matrix product `self * other`. Panics on dimension mismatch.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        Self { dim: self.dim, entries: self.entries.dot(&other.entries) }
    }

    /// `[self, other] = self*other - other*self`.
    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    /// Largest entrywise |difference| against another operator.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        self.entries
            .iter()
            .zip(other.entries.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Applies the operator to a raw amplitude vector.
    pub fn apply_vec(&self, x: &Array1<C64>) -> Array1<C64> {
        assert_eq!(self.dim, x.len(), "operator/state dimension mismatch");
        self.entries.dot(x)
    }

    /// Eigenvalues of a Hermitian operator, ascending, via cyclic Jacobi
    /// rotations. The truncated dimensions used here (N <= ~20) make the
    /// O(N^3)-per-sweep cost irrelevant.
    pub fn eigvalsh(&self) -> Result<Vec<f64>> {
        let dev = self.hermitian_deviation();
        if dev > HERMITIAN_TOL.max(1e-10) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let n = self.dim;
        let mut a = self.entries.clone();
        let scale = self.max_abs().max(1e-300);
        for _sweep in 0..100 {
            let mut off = 0.0_f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[[p, q]].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-15 * scale * n as f64 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[[p, q]];
                    let r = apq.norm();
                    if r <= 1e-18 * scale {
                        continue;
                    }
                    let phi = apq.arg();
                    let alpha = a[[p, p]].re;
                    let gamma = a[[q, q]].re;
                    let theta = 0.5 * (2.0 * r).atan2(alpha - gamma);
                    let (s, c) = theta.sin_cos();
                    let eip = C64::from_polar(1.0, phi);
                    let eim = eip.conj();
                    // A <- V^dag A V with the 2x2 block rotation
                    //   V = [[c, -s e^{i phi}], [s e^{-i phi}, c]].
                    for i in 0..n {
                        let aip = a[[i, p]];
                        let aiq = a[[i, q]];
                        a[[i, p]] = aip * c + aiq * s * eim;
                        a[[i, q]] = -aip * s * eip + aiq * c;
                    }
                    for j in 0..n {
                        let apj = a[[p, j]];
                        let aqj = a[[q, j]];
                        a[[p, j]] = apj * c + aqj * s * eip;
                        a[[q, j]] = -apj * s * eim + aqj * c;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[[i, i]].re).collect();
        vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        Ok(vals)
    }
}

impl std::ops::Add for &FockOperator {
    type Output = FockOperator;
    fn add(self, rhs: &FockOperator) -> FockOperator {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        FockOperator { dim: self.dim, entries: &self.entries + &rhs.entries }
    }
}

impl std::ops::Sub for &FockOperator {
    type Output = FockOperator;
    fn sub(self, rhs: &FockOperator) -> FockOperator {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        FockOperator { dim: self.dim, entries: &self.entries - &rhs.entries }
    }
}

/// Matrix exponential by scaling-and-squaring of the Taylor series,
/// summed to machine precision.
pub fn expm(op: &FockOperator) -> FockOperator {
    let n = op.dim();
    // infinity norm bounds the spectral radius
    let norm = (0..n)
        .map(|i| (0..n).map(|j| op.entries()[[i, j]].norm()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5_f64.powi(squarings as i32);
    let scaled = op.entries().mapv(|z| z * scale);

    let mut result = Array2::<C64>::eye(n);
    let mut term = Array2::<C64>::eye(n);
    for k in 1..=40 {
        term = term.dot(&scaled) / C64::new(k as f64, 0.0);
        result += &term;
        let tmax = term.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if tmax < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    FockOperator { dim: n, entries: result }
}

/// `|u><v|` on raw amplitude vectors.
pub(crate) fn outer(u: &Array1<C64>, v: &Array1<C64>) -> Array2<C64> {
    let n = u.len();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = u[i] * v[j].conj();
        }
    }
    out
}

/// Normalized pure state on the truncated Fock space.
#[derive(Debug, Clone)]
pub struct PureState {
    amplitudes: Array1<C64>,
}

impl PureState {
    /// Wraps an amplitude vector that is already normalized to [`NORM_TOL`].
    pub fn new(amplitudes: Array1<C64>) -> Result<Self> {
        let norm = vec_norm(&amplitudes);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: format!("norm {norm} is not 1 within {NORM_TOL:e}"),
            });
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn from_unnormalized(amplitudes: Array1<C64>) -> Result<Self> {
        let norm = vec_norm(&amplitudes);
        if norm < 1e-300 {
            return Err(Error::InvalidParameter {
                name: "amplitudes",
                reason: "cannot normalize the zero vector".into(),
            });
        }
        Ok(Self { amplitudes: amplitudes.mapv(|z| z / norm) })
    }

    /// Fock basis state `|n>`.
    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::InvalidDimension { dim, reason: "Fock index out of range" });
        }
        let mut amp = Array1::zeros(dim);
        amp[n] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: amp })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        vec_norm(&self.amplitudes)
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &Self) -> C64 {
        assert_eq!(self.dim(), other.dim(), "state dimension mismatch");
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Physical equality: identical modulo a global phase, i.e. overlap
    /// modulus 1 within [`PHYS_EQ_TOL`].
    pub fn physically_eq(&self, other: &Self) -> bool {
        (1.0 - self.overlap(other).norm()).abs() <= PHYS_EQ_TOL
    }

    /// Rotates the global phase by `e^{i lambda}`.
    pub fn with_global_phase(&self, lambda: f64) -> Self {
        let phase = C64::from_polar(1.0, lambda);
        Self { amplitudes: self.amplitudes.mapv(|z| z * phase) }
    }
}

pub(crate) fn vec_norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn normalize_in_place(v: &mut Array1<C64>) {
    let norm = vec_norm(v);
    if norm > 0.0 {
        v.mapv_inplace(|z| z / norm);
    }
}

/// `<psi|O|psi>`. Real up to 1e-12 imaginary part when `O` is Hermitian.
pub fn expectation(op: &FockOperator, psi: &PureState) -> Result<C64> {
    if op.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { left: op.dim(), right: psi.dim() });
    }
    let applied = op.entries().dot(psi.amplitudes());
    Ok(psi
        .amplitudes()
        .iter()
        .zip(applied.iter())
        .map(|(a, b)| a.conj() * b)
        .sum())
}

/// Bosonic annihilation operator: entry `(n-1, n) = sqrt(n)`.
pub fn make_annihilation(dim: usize) -> Result<FockOperator> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, reason: "annihilation needs N >= 2" });
    }
    let mut a = Array2::zeros((dim, dim));
    for n in 1..dim {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    FockOperator::new(a)
}

/// Hamiltonian plus jump operators defining one monitored oscillator.
#[derive(Debug, Clone)]
pub struct OscillatorModel {
    dim: usize,
    hamiltonian: FockOperator,
    jumps: Vec<FockOperator>,
    labels: Vec<String>,
}

impl OscillatorModel {
    pub fn new(
        hamiltonian: FockOperator,
        jumps: Vec<FockOperator>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let dim = hamiltonian.dim();
        if !hamiltonian.is_hermitian() {
            return Err(Error::NotHermitian { deviation: hamiltonian.hermitian_deviation() });
        }
        for jump in &jumps {
            if jump.dim() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: jump.dim() });
            }
        }
        if labels.len() != jumps.len() {
            return Err(Error::InvalidParameter {
                name: "labels",
                reason: format!("{} labels for {} jumps", labels.len(), jumps.len()),
            });
        }
        Ok(Self { dim, hamiltonian, jumps, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &FockOperator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[FockOperator] {
        &self.jumps
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Copy of the model with every jump rotated as `L_k -> e^{i angle_k} L_k`.
    pub fn with_rotated_jumps(&self, angles: &[f64]) -> Result<Self> {
        if angles.len() != self.jumps.len() {
            return Err(Error::InvalidParameter {
                name: "angles",
                reason: format!("{} angles for {} jumps", angles.len(), self.jumps.len()),
            });
        }
        let jumps = self
            .jumps
            .iter()
            .zip(angles)
            .map(|(l, lam)| l.scaled(C64::from_polar(1.0, *lam)))
            .collect();
        Ok(Self {
            dim: self.dim,
            hamiltonian: self.hamiltonian.clone(),
            jumps,
            labels: self.labels.clone(),
        })
    }
}

/// Quantum van der Pol oscillator in the rotating frame:
/// `H = delta a^dag a`, one-particle gain `sqrt(gamma_g) a^dag` and
/// two-particle loss `sqrt(gamma_d) a^2`.
pub fn make_qvdp(dim: usize, delta: f64, gamma_g: f64, gamma_d: f64) -> Result<OscillatorModel> {
    if dim < 3 {
        return Err(Error::InvalidDimension { dim, reason: "two-particle loss needs N >= 3" });
    }
    if gamma_g <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma_g",
            reason: format!("gain rate must be positive, got {gamma_g}"),
        });
    }
    if gamma_d <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma_d",
            reason: format!("damping rate must be positive, got {gamma_d}"),
        });
    }
    let a = make_annihilation(dim)?;
    let adag = a.adjoint();
    let number = adag.matmul(&a);
    let hamiltonian = number.scaled(C64::new(delta, 0.0));
    let gain = adag.scaled(C64::new(gamma_g.sqrt(), 0.0));
    let loss = a.matmul(&a).scaled(C64::new(gamma_d.sqrt(), 0.0));
    OscillatorModel::new(hamiltonian, vec![gain, loss], vec!["gain".into(), "loss2".into()])
}
