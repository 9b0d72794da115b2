//! Internal drift kernels shared by the deterministic and stochastic
//! integrators. Matrices are pre-extracted from the model once; the hot
//! loops run on raw amplitude slices.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::hilbert::OscillatorModel;

#[inline]
pub(crate) fn matvec(m: &Array2<C64>, x: &Array1<C64>) -> Array1<C64> {
    let n = x.len();
    let ms = m.as_slice().expect("standard layout");
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array1::zeros(n);
    let os = out.as_slice_mut().unwrap();
    for i in 0..n {
        let row = &ms[i * n..(i + 1) * n];
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            acc += row[j] * xs[j];
        }
        os[i] = acc;
    }
    out
}

#[inline]
pub(crate) fn inner(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub(crate) fn norm_sqr(a: &Array1<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Pre-extracted matrices for one oscillator.
pub(crate) struct ModelOps {
    pub dim: usize,
    pub hamiltonian: Array2<C64>,
    pub jumps: Vec<Array2<C64>>,
    pub jump_adjoints: Vec<Array2<C64>>,
}

impl ModelOps {
    pub fn new(model: &OscillatorModel) -> Self {
        Self {
            dim: model.dim(),
            hamiltonian: model.hamiltonian().entries().clone(),
            jumps: model.jumps().iter().map(|l| l.entries().clone()).collect(),
            jump_adjoints: model.jumps().iter().map(|l| l.adjoint().into_entries()).collect(),
        }
    }

    /// Noise-removed Stratonovich drift,
    /// `-iH psi - 1/2 sum_k (L^dag L - <L^dag L>) psi + sum_k <L^dag>(L - <L>) psi`.
    /// This is the norm-preserving deterministic flow that defines the limit
    /// cycle; it is also the drift of the heterodyne trajectory equation.
    pub fn deterministic_drift(&self, psi: &Array1<C64>) -> Array1<C64> {
        let mut out = matvec(&self.hamiltonian, psi);
        out.mapv_inplace(|z| z * C64::new(0.0, -1.0));
        for (l, ldag) in self.jumps.iter().zip(&self.jump_adjoints) {
            let w = matvec(l, psi);
            let u = matvec(ldag, &w);
            let l_exp = inner(psi, &w);
            let ldl_exp = norm_sqr(&w);
            let half = C64::new(0.5, 0.0);
            let lconj = l_exp.conj();
            for i in 0..self.dim {
                out[i] += -half * (u[i] - ldl_exp * psi[i]) + lconj * (w[i] - l_exp * psi[i]);
            }
        }
        out
    }

    /// Deterministic drift with the stochastic-calculus evaluation point `p`
    /// (`p = 0` Ito, `p = 1/2` Stratonovich). Differs from the Stratonovich
    /// drift by `(p - 1/2) sum_k (<L^dag L> - <L^dag><L>) psi`.
    pub fn drift_with_calculus(&self, psi: &Array1<C64>, p: f64) -> Array1<C64> {
        let mut out = self.deterministic_drift(psi);
        if p != 0.5 {
            let mut variance = 0.0;
            for l in &self.jumps {
                let w = matvec(l, psi);
                variance += norm_sqr(&w) - inner(psi, &w).norm_sqr();
            }
            let shift = C64::new((p - 0.5) * variance, 0.0);
            for i in 0..self.dim {
                out[i] += shift * psi[i];
            }
        }
        out
    }

    /// Homodyne Stratonovich drift for fixed quadratures,
    /// `-iH psi - 1/2 sum_k (X_k L_k - <X_k L_k>) psi + sum_k <X_k>(L_k - <L_k>) psi`
    /// with `X_k = L_k + L_k^dag`.
    pub fn homodyne_drift(&self, psi: &Array1<C64>) -> Array1<C64> {
        let mut out = matvec(&self.hamiltonian, psi);
        out.mapv_inplace(|z| z * C64::new(0.0, -1.0));
        for (l, ldag) in self.jumps.iter().zip(&self.jump_adjoints) {
            let w = matvec(l, psi);
            let lw = matvec(l, &w);
            let ldw = matvec(ldag, &w);
            let l_exp = inner(psi, &w);
            let x_exp = C64::new(2.0 * l_exp.re, 0.0);
            let mut xl_exp = C64::new(0.0, 0.0);
            for i in 0..self.dim {
                xl_exp += psi[i].conj() * (lw[i] + ldw[i]);
            }
            let half = C64::new(0.5, 0.0);
            for i in 0..self.dim {
                let xl = lw[i] + ldw[i];
                out[i] += -half * (xl - xl_exp * psi[i]) + x_exp * (w[i] - l_exp * psi[i]);
            }
        }
        out
    }

    /// Measurement-noise diffusion fields `b_k(psi) = (L_k - <L_k>) psi`,
    /// one per jump, plus the jump expectations `<L_k>`.
    pub fn diffusion_fields(&self, psi: &Array1<C64>) -> (Vec<Array1<C64>>, Vec<C64>) {
        let mut fields = Vec::with_capacity(self.jumps.len());
        let mut expectations = Vec::with_capacity(self.jumps.len());
        for l in &self.jumps {
            let mut w = matvec(l, psi);
            let l_exp = inner(psi, &w);
            for i in 0..self.dim {
                w[i] -= l_exp * psi[i];
            }
            fields.push(w);
            expectations.push(l_exp);
        }
        (fields, expectations)
    }
}

/// Classical RK4 step of `dpsi/dt = drift(psi)`; the caller renormalizes.
#[inline]
pub(crate) fn rk4_step<F>(drift: &F, psi: &Array1<C64>, dt: f64) -> Array1<C64>
where
    F: Fn(&Array1<C64>) -> Array1<C64>,
{
    let n = psi.len();
    let k1 = drift(psi);
    let mut stage = Array1::zeros(n);
    for i in 0..n {
        stage[i] = psi[i] + k1[i] * C64::new(0.5 * dt, 0.0);
    }
    let k2 = drift(&stage);
    for i in 0..n {
        stage[i] = psi[i] + k2[i] * C64::new(0.5 * dt, 0.0);
    }
    let k3 = drift(&stage);
    for i in 0..n {
        stage[i] = psi[i] + k3[i] * C64::new(dt, 0.0);
    }
    let k4 = drift(&stage);
    let sixth = dt / 6.0;
    let mut out = Array1::zeros(n);
    for i in 0..n {
        out[i] = psi[i] + (k1[i] + (k2[i] + k3[i]) * C64::new(2.0, 0.0) + k4[i]) * C64::new(sixth, 0.0);
    }
    out
}

pub(crate) fn has_nan(psi: &Array1<C64>) -> bool {
    psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
}
