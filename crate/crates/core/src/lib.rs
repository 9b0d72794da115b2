//! Quantum phase reduction for continuously monitored limit-cycle
//! oscillators in truncated Fock spaces.
//!
//! The crate covers the full pipeline: stochastic Schroedinger equations for
//! homodyne and heterodyne detection, the deterministic limit cycle and its
//! isochrone phase, phase response curves obtained through the SU(N)
//! generator decomposition of the measurement backaction, reduced
//! one-dimensional phase equations, and Fokker-Planck analysis of
//! noise-induced synchronization between oscillator pairs.

pub mod error;
pub mod fp_analysis;
pub mod hilbert;
pub mod limit_cycle;
mod model_ops;
pub mod phase_response;
pub mod phase_sde;
pub mod rng;
pub mod sse_sim;
pub mod sun_basis;

pub use error::{Error, Result};
pub use fp_analysis::{
    correlation_h, count_clusters, dominant_mode, fourier_spectrum, histogram_phases, l1_distance,
    steady_state_q, PhaseDistribution,
};
pub use hilbert::{
    expectation, make_annihilation, make_qvdp, FockOperator, OscillatorModel, PureState,
};
pub use limit_cycle::{
    asymptotic_phase, deterministic_step, find_limit_cycle, norm_drift_vs_calculus, CycleOpts,
    IsochroneOpts, LimitCycle,
};
pub use phase_response::{
    backaction_coeffs, fit_single_harmonic, hermitianize, homodyne_difference_generator,
    prc_directional, prc_table, stochastic_hermitians, HarmonicFit, PRCTable, PrcOpts,
};
pub use phase_sde::{
    simulate_phase_ito, simulate_phase_pair_common, simulate_phase_stratonovich, strat_to_ito,
    PhaseCurve, PhaseModel, PhaseNoiseTerm, PhaseSeries,
};
pub use sse_sim::{
    lindblad_evolve, simulate_heterodyne, simulate_homodyne, simulate_pair_common_noise,
    trace_distance, Currents, Detection, NoiseSpec, SimOptions, TrajectoryRecord,
};
pub use sun_basis::{build_generators, decompose, reconstruct, GeneratorBasis};
