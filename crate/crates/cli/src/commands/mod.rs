pub mod limit_cycle;
pub mod prc;
pub mod simulate;
pub mod sync;
pub mod validate;

use std::path::Path;

use anyhow::{anyhow, Result};
use ndarray::Array1;
use num_complex::Complex64 as C64;

use qphase_core::hilbert::PureState;
use qphase_core::limit_cycle::{find_limit_cycle, IsochroneOpts, LimitCycle};
use qphase_core::phase_response::PrcOpts;

use crate::config::ExperimentConfig;

/// Default relaxation start: |1> with small |0>, |2> admixtures.
pub fn default_initial(dim: usize) -> PureState {
    let mut amp = Array1::<C64>::zeros(dim);
    amp[0] = C64::new(0.35, 0.0);
    amp[1] = C64::new(1.0, 0.0);
    amp[2] = C64::new(0.2, 0.1);
    PureState::from_unnormalized(amp).expect("nonzero initial state")
}

/// Isochrone settings for bulk phase readout, from the config.
pub fn isochrone_opts(config: &ExperimentConfig) -> IsochroneOpts {
    IsochroneOpts {
        relax_periods: config.numerics.relax_periods,
        steps_per_period: config.numerics.steps_per_period,
        ..IsochroneOpts::default()
    }
}

pub fn prc_opts(config: &ExperimentConfig) -> PrcOpts {
    PrcOpts { isochrone: isochrone_opts(config), ..PrcOpts::default() }
}

/// Loads the cycle from `output.cycle_path`, then from `<out>/cycle.json`,
/// and otherwise computes it fresh and stores it as `<out>/cycle.json` so
/// later subcommands reuse it.
pub fn obtain_cycle(config: &ExperimentConfig, out_dir: &Path) -> Result<LimitCycle> {
    let candidates: Vec<std::path::PathBuf> = config
        .output
        .cycle_path
        .iter()
        .map(std::path::PathBuf::from)
        .chain(std::iter::once(out_dir.join("cycle.json")))
        .collect();
    for path in &candidates {
        if path.is_file() {
            let data = std::fs::read_to_string(path)?;
            let cycle = LimitCycle::from_json_str(&data)?;
            if cycle.dim() != config.dim() {
                return Err(anyhow!(
                    "cycle file {} has dim {}, config wants {}",
                    path.display(),
                    cycle.dim(),
                    config.dim()
                ));
            }
            if cycle.grid_size() != config.numerics.grid_size {
                return Err(anyhow!(
                    "cycle file {} has grid size {}, config wants {}",
                    path.display(),
                    cycle.grid_size(),
                    config.numerics.grid_size
                ));
            }
            return Ok(cycle);
        }
    }
    let model = config.build_model()?;
    let cycle = find_limit_cycle(&model, &default_initial(config.dim()), &config.cycle_opts())?;
    let mut file = std::fs::File::create(out_dir.join("cycle.json"))?;
    cycle.to_writer(&mut file)?;
    Ok(cycle)
}

/// Deterministic per-worker seed derivation for ensembles whose members
/// consume whole stream families internally.
pub fn derived_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(index.wrapping_add(1)))
}

/// Backaction curves with their harmonic structure extracted.
#[derive(serde::Serialize)]
pub struct BackactionSummary {
    #[serde(skip)]
    pub table: qphase_core::phase_response::PRCTable,
    pub per_jump: Vec<JumpFitSummary>,
    /// Consolidated white-noise amplitude `sqrt(mean_theta sum_km Y_km^2)`.
    pub v_total: f64,
    /// Relative spread of `sum_km Y_km^2` over the grid (flat for an
    /// unbiased heterodyne backaction).
    pub sum_sq_rel_spread: f64,
}

#[derive(serde::Serialize)]
pub struct JumpFitSummary {
    pub label: String,
    /// Dominant harmonic of the pair of curves.
    pub mode: usize,
    /// Common amplitude of the fitted sin/cos pair.
    pub v: f64,
    pub residual_y1: f64,
    pub residual_y2: f64,
    /// Quadrature offset between the two curves, wrapped residual of
    /// `phase(y2) - phase(y1) - pi/2` in units of the mode.
    pub quadrature_offset_residual: f64,
}

pub fn measure_backaction(
    lc: &LimitCycle,
    opts: &PrcOpts,
    stride: usize,
) -> Result<BackactionSummary> {
    use qphase_core::fp_analysis::{dominant_mode, fourier_spectrum};
    use qphase_core::phase_response::{backaction_coeffs, fit_single_harmonic};

    let table = backaction_coeffs(lc, opts, stride)?;
    let m = table.thetas.len();
    let mut per_jump = Vec::new();
    let mut sum_sq = vec![0.0_f64; m];
    for curves in &table.backaction {
        for j in 0..m {
            sum_sq[j] += curves.y1[j].powi(2) + curves.y2[j].powi(2);
        }
        let mode = dominant_mode(&fourier_spectrum(&curves.y1));
        let fit1 = fit_single_harmonic(&table.thetas, &curves.y1, mode);
        let fit2 = fit_single_harmonic(&table.thetas, &curves.y2, mode);
        let quadrature = {
            let d = fit2.phase - fit1.phase - std::f64::consts::FRAC_PI_2;
            let w = d.rem_euclid(std::f64::consts::TAU);
            w.min(std::f64::consts::TAU - w)
        };
        per_jump.push(JumpFitSummary {
            label: curves.label.clone(),
            mode,
            v: 0.5 * (fit1.amplitude + fit2.amplitude),
            residual_y1: fit1.residual_rel,
            residual_y2: fit2.residual_rel,
            quadrature_offset_residual: quadrature,
        });
    }
    let mean_sq = sum_sq.iter().sum::<f64>() / m as f64;
    let spread = sum_sq
        .iter()
        .fold(0.0_f64, |acc, s| acc.max((s - mean_sq).abs()))
        / mean_sq.max(1e-300);
    Ok(BackactionSummary {
        table,
        per_jump,
        v_total: mean_sq.sqrt(),
        sum_sq_rel_spread: spread,
    })
}

/// Response curve of the Hamiltonian noise operator on the cycle grid.
pub fn noise_response_curve(
    lc: &LimitCycle,
    noise: &qphase_core::sse_sim::NoiseSpec,
    opts: &PrcOpts,
    stride: usize,
) -> Result<qphase_core::phase_sde::PhaseCurve> {
    use qphase_core::phase_response::prc_directional;
    use rayon::prelude::*;

    let op = noise.scaled_operator();
    let stride = stride.max(1);
    let indices: Vec<usize> = (0..lc.grid_size()).step_by(stride).collect();
    let values: std::result::Result<Vec<f64>, qphase_core::Error> = indices
        .par_iter()
        .map(|&j| prc_directional(lc, &op, lc.theta_at(j), opts))
        .collect();
    Ok(qphase_core::phase_sde::PhaseCurve::new(values?)?)
}
