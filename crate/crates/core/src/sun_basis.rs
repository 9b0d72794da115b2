//! Trace-orthonormal generator basis of SU(N).
//!
//! The basis is built from generalized Gell-Mann matrices: symmetric and
//! antisymmetric off-diagonal pairs plus the diagonal family, each divided
//! by sqrt(Tr[Lambda^2]) = sqrt(2) so that `Tr[E_l E_m] = delta_lm`.
//! Any traceless Hermitian operator decomposes as `H = sum_l g_l E_l` with
//! real coefficients `g_l = Tr[H E_l]`.
//!
//! Generator ordering is fixed so coefficient vectors are stable artifacts:
//! first the symmetric pairs (j, k) with j < k in lexicographic order, then
//! the antisymmetric pairs in the same order, then the diagonal generators
//! for j = 1..N-1.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::FockOperator;

/// Trace threshold below which an input operator is silently projected onto
/// the traceless subspace before decomposition.
pub const TRACE_PROJECT_TOL: f64 = 1e-10;

/// Ordered trace-orthonormal generators of SU(N).
#[derive(Debug, Clone)]
pub struct GeneratorBasis {
    dim: usize,
    generators: Vec<FockOperator>,
}

impl GeneratorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of generators, `N^2 - 1`.
    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn generators(&self) -> &[FockOperator] {
        &self.generators
    }

    /// Unchecked assembly, for tests that need to inject a corrupted basis.
    /// Use [`build_generators`] for a valid one.
    pub fn from_parts(dim: usize, generators: Vec<FockOperator>) -> Self {
        Self { dim, generators }
    }

    /// Re-checks Hermiticity, tracelessness and trace-orthonormality of every
    /// generator, reporting the first offending index.
    pub fn verify(&self) -> Result<()> {
        if self.generators.len() != self.dim * self.dim - 1 {
            return Err(Error::InvalidParameter {
                name: "generator_basis",
                reason: format!(
                    "expected {} generators for N = {}, found {}",
                    self.dim * self.dim - 1,
                    self.dim,
                    self.generators.len()
                ),
            });
        }
        for (l, gen) in self.generators.iter().enumerate() {
            let dev = gen.hermitian_deviation();
            if dev > 1e-12 {
                return Err(Error::InvalidParameter {
                    name: "generator_basis",
                    reason: format!("generator {l} non-Hermitian: deviation {dev:.3e}"),
                });
            }
            let tr = gen.trace().norm();
            if tr > 1e-12 {
                return Err(Error::InvalidParameter {
                    name: "generator_basis",
                    reason: format!("generator {l} has trace {tr:.3e}"),
                });
            }
        }
        for l in 0..self.generators.len() {
            for m in l..self.generators.len() {
                let prod = self.generators[l].matmul(&self.generators[m]).trace();
                let expected = if l == m { 1.0 } else { 0.0 };
                if (prod.re - expected).abs() > 1e-12 || prod.im.abs() > 1e-12 {
                    return Err(Error::InvalidParameter {
                        name: "generator_basis",
                        reason: format!(
                            "generators {l},{m}: Tr[E_l E_m] = {:.3e}+{:.3e}i, expected {expected}",
                            prod.re, prod.im
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Builds the N^2 - 1 generalized Gell-Mann generators of SU(N).
pub fn build_generators(dim: usize) -> Result<GeneratorBasis> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, reason: "SU(N) basis needs N >= 2" });
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut generators = Vec::with_capacity(dim * dim - 1);

    // symmetric: (|j><k| + |k><j|) / sqrt(2)
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut m = Array2::zeros((dim, dim));
            m[[j, k]] = C64::new(inv_sqrt2, 0.0);
            m[[k, j]] = C64::new(inv_sqrt2, 0.0);
            generators.push(FockOperator::new(m)?);
        }
    }
    // antisymmetric: -i(|j><k| - |k><j|) / sqrt(2)
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut m = Array2::zeros((dim, dim));
            m[[j, k]] = C64::new(0.0, -inv_sqrt2);
            m[[k, j]] = C64::new(0.0, inv_sqrt2);
            generators.push(FockOperator::new(m)?);
        }
    }
    // diagonal: sqrt(1/(j(j+1))) (sum_{l<=j} |l><l| - j |j+1><j+1|), 1-based j
    for j in 1..dim {
        let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
        let mut m = Array2::zeros((dim, dim));
        for l in 0..j {
            m[[l, l]] = C64::new(scale, 0.0);
        }
        m[[j, j]] = C64::new(-(j as f64) * scale, 0.0);
        generators.push(FockOperator::new(m)?);
    }

    Ok(GeneratorBasis { dim, generators })
}

/// Coefficients `g_l = Tr[H E_l]` of a traceless Hermitian operator.
///
/// Traces within [`TRACE_PROJECT_TOL`] of zero are projected out before
/// decomposition; anything larger is rejected so non-traceless operators
/// cannot slip through silently.
pub fn decompose(op: &FockOperator, basis: &GeneratorBasis) -> Result<Vec<f64>> {
    if op.dim() != basis.dim {
        return Err(Error::DimensionMismatch { left: op.dim(), right: basis.dim });
    }
    let dev = op.hermitian_deviation();
    if dev > 1e-12 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let trace = op.trace();
    if trace.norm() > TRACE_PROJECT_TOL {
        return Err(Error::NotTraceless { trace: trace.norm() });
    }
    let shift = trace / C64::new(op.dim() as f64, 0.0);
    let projected = op - &FockOperator::identity(op.dim()).scaled(shift);
    Ok(basis
        .generators
        .iter()
        .map(|e| projected.matmul(e).trace().re)
        .collect())
}

/// Reassembles `sum_l g_l E_l`.
pub fn reconstruct(coeffs: &[f64], basis: &GeneratorBasis) -> Result<FockOperator> {
    if coeffs.len() != basis.generators.len() {
        return Err(Error::CoefficientLength {
            got: coeffs.len(),
            expected: basis.generators.len(),
        });
    }
    let mut out = Array2::<C64>::zeros((basis.dim, basis.dim));
    for (g, gen) in coeffs.iter().zip(&basis.generators) {
        if *g == 0.0 {
            continue;
        }
        out.scaled_add(C64::new(*g, 0.0), gen.entries());
    }
    FockOperator::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pauli() -> [Array2<C64>; 3] {
        let c = C64::new;
        let x = ndarray::array![[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]];
        let y = ndarray::array![[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]];
        let z = ndarray::array![[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]];
        [x, y, z]
    }

    #[test]
    fn n2_is_pauli_over_sqrt2() {
        let basis = build_generators(2).unwrap();
        assert_eq!(basis.len(), 3);
        for (gen, sigma) in basis.generators().iter().zip(pauli()) {
            let scaled = sigma.mapv(|z| z * std::f64::consts::FRAC_1_SQRT_2);
            let diff = gen
                .entries()
                .iter()
                .zip(scaled.iter())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()));
            assert!(diff < 1e-15, "generator deviates from Pauli/sqrt(2) by {diff}");
        }
    }

    #[test]
    fn n3_matches_gell_mann_over_sqrt2() {
        let basis = build_generators(3).unwrap();
        assert_eq!(basis.len(), 8);
        // spot-check lambda_1 (first symmetric), lambda_2 (first antisymmetric),
        // lambda_3 and lambda_8 (diagonals), all scaled by 1/sqrt(2)
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(basis.generators()[0].entries()[[0, 1]].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(basis.generators()[3].entries()[[0, 1]].im, -s, epsilon = 1e-15);
        assert_abs_diff_eq!(basis.generators()[3].entries()[[1, 0]].im, s, epsilon = 1e-15);
        let lam3 = &basis.generators()[6];
        assert_abs_diff_eq!(lam3.entries()[[0, 0]].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(lam3.entries()[[1, 1]].re, -s, epsilon = 1e-15);
        let lam8 = &basis.generators()[7];
        assert_abs_diff_eq!(lam8.entries()[[0, 0]].re, s / 3.0_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(lam8.entries()[[2, 2]].re, -2.0 * s / 3.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn gram_matrix_is_identity() {
        for dim in [2, 3, 5] {
            let basis = build_generators(dim).unwrap();
            basis.verify().unwrap();
        }
    }

    #[test]
    fn rejects_dim_one() {
        assert!(build_generators(1).is_err());
    }

    #[test]
    fn decompose_basis_element_is_unit_vector() {
        let basis = build_generators(3).unwrap();
        let coeffs = decompose(&basis.generators()[5].clone(), &basis).unwrap();
        for (l, g) in coeffs.iter().enumerate() {
            let expected = if l == 5 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(*g, expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn decompose_zero_operator() {
        let basis = build_generators(4).unwrap();
        let coeffs = decompose(&FockOperator::zeros(4), &basis).unwrap();
        assert!(coeffs.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn reconstruct_unit_vector_gives_generator() {
        let basis = build_generators(3).unwrap();
        let mut g = vec![0.0; 8];
        g[1] = 1.0;
        let op = reconstruct(&g, &basis).unwrap();
        assert!(op.max_abs_diff(&basis.generators()[1]) < 1e-15);
    }

    #[test]
    fn reconstruct_rejects_wrong_length() {
        let basis = build_generators(3).unwrap();
        assert!(matches!(
            reconstruct(&[0.0; 7], &basis),
            Err(Error::CoefficientLength { got: 7, expected: 8 })
        ));
    }

    #[test]
    fn decompose_rejects_large_trace() {
        let basis = build_generators(3).unwrap();
        let op = FockOperator::identity(3);
        assert!(matches!(decompose(&op, &basis), Err(Error::NotTraceless { .. })));
    }

    #[test]
    fn decompose_rejects_non_hermitian() {
        let basis = build_generators(3).unwrap();
        let a = crate::hilbert::make_annihilation(3).unwrap();
        assert!(matches!(decompose(&a, &basis), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn verify_reports_corrupted_index() {
        let mut basis = build_generators(3).unwrap();
        let mut gens = basis.generators().to_vec();
        gens[4] = gens[2].clone();
        basis = GeneratorBasis::from_parts(3, gens);
        let err = basis.verify().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2,4") || msg.contains("4"), "message should name the index: {msg}");
    }

    mod roundtrip {
        use super::*;
        use proptest::prelude::*;

        fn random_traceless_hermitian(dim: usize, seed: &[f64]) -> FockOperator {
            let mut m = Array2::<C64>::zeros((dim, dim));
            let mut it = seed.iter().cycle();
            for i in 0..dim {
                for j in i..dim {
                    let re = *it.next().unwrap();
                    let im = if i == j { 0.0 } else { *it.next().unwrap() };
                    m[[i, j]] = C64::new(re, im);
                    m[[j, i]] = C64::new(re, -im);
                }
            }
            let trace: C64 = (0..dim).map(|i| m[[i, i]]).sum();
            let shift = trace / C64::new(dim as f64, 0.0);
            for i in 0..dim {
                m[[i, i]] -= shift;
            }
            FockOperator::new(m).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn decompose_reconstruct_roundtrip(
                seed in proptest::collection::vec(-1.0_f64..1.0, 36..49),
                dim in 2_usize..5,
            ) {
                let basis = build_generators(dim).unwrap();
                let h = random_traceless_hermitian(dim, &seed);
                let coeffs = decompose(&h, &basis).unwrap();
                let rebuilt = reconstruct(&coeffs, &basis).unwrap();
                prop_assert!(rebuilt.max_abs_diff(&h) < 1e-10);
            }

            #[test]
            fn parseval_under_trace_norm(
                seed in proptest::collection::vec(-1.0_f64..1.0, 36..49),
                dim in 2_usize..5,
            ) {
                let basis = build_generators(dim).unwrap();
                let h = random_traceless_hermitian(dim, &seed);
                let coeffs = decompose(&h, &basis).unwrap();
                let frob_sq = h.frobenius_norm().powi(2);
                let coeff_sq: f64 = coeffs.iter().map(|g| g * g).sum();
                prop_assert!((frob_sq - coeff_sq).abs() < 1e-10 * frob_sq.max(1.0));
            }

            #[test]
            fn coefficient_roundtrip_identity(
                coeffs in proptest::collection::vec(-2.0_f64..2.0, 8),
            ) {
                let basis = build_generators(3).unwrap();
                let op = reconstruct(&coeffs, &basis).unwrap();
                let back = decompose(&op, &basis).unwrap();
                for (a, b) in coeffs.iter().zip(&back) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}
