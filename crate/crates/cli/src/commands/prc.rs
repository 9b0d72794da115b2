//! `qphase prc`: phase response curves on the cycle — the measurement
//! backaction curves `Y_km` with harmonic fits, the harmonic-drive response
//! under heterodyne detection, and the per-jump difference curves under
//! homodyne detection.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use qphase_core::hilbert::make_annihilation;
use qphase_core::phase_response::{
    fit_single_harmonic, homodyne_difference_generator, prc_directional, HarmonicFit,
};

use crate::config::ExperimentConfig;
use crate::output::{write_bytes, write_json};

#[derive(Serialize)]
struct PrcReport {
    omega: f64,
    backaction: super::BackactionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    harmonic_drive_fit: Option<HarmonicFit>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    homodyne_difference_fits: Vec<DifferenceFit>,
}

#[derive(Serialize)]
struct DifferenceFit {
    label: String,
    deterministic_dominant_mode: usize,
    stochastic_dominant_mode: usize,
    stochastic_fit: HarmonicFit,
}

pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let cycle = super::obtain_cycle(config, out_dir)?;
    let opts = super::prc_opts(config);
    let stride = config.numerics.prc_stride.max(1);
    let backaction = super::measure_backaction(&cycle, &opts, stride)?;
    let thetas = backaction.table.thetas.clone();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for curves in &backaction.table.backaction {
        columns.push((format!("Y_{}_1", curves.label), curves.y1.clone()));
        columns.push((format!("Y_{}_2", curves.label), curves.y2.clone()));
    }

    let mut harmonic_drive_fit = None;
    let mut homodyne_difference_fits = Vec::new();

    match config.homodyne_angles() {
        None => {
            // heterodyne: response to the harmonic drive i(a - a^dag)
            let a = make_annihilation(cycle.dim())?;
            let drive = &a.scaled(C64::new(0.0, 1.0)) - &a.adjoint().scaled(C64::new(0.0, 1.0));
            let values: std::result::Result<Vec<f64>, qphase_core::Error> = thetas
                .par_iter()
                .map(|&theta| prc_directional(&cycle, &drive, theta, &opts))
                .collect();
            let values = values?;
            harmonic_drive_fit = Some(fit_single_harmonic(&thetas, &values, 1));
            columns.push(("Z_harmonic_drive".into(), values));
        }
        Some(angles) => {
            // homodyne: per-jump deterministic and stochastic difference curves
            let model = cycle.model().clone();
            let n_jumps = model.jumps().len();
            for k in 0..n_jumps {
                let per_theta: std::result::Result<Vec<(f64, f64)>, qphase_core::Error> = thetas
                    .par_iter()
                    .map(|&theta| {
                        let psi = cycle.state_at(theta);
                        let diffs = homodyne_difference_generator(&model, &angles, &psi)?;
                        let det = prc_directional(&cycle, &diffs[k].drift, theta, &opts)?;
                        let sto = prc_directional(&cycle, &diffs[k].stochastic, theta, &opts)?;
                        Ok((det, sto))
                    })
                    .collect();
                let per_theta = per_theta?;
                let det: Vec<f64> = per_theta.iter().map(|p| p.0).collect();
                let sto: Vec<f64> = per_theta.iter().map(|p| p.1).collect();
                let det_mode = qphase_core::fp_analysis::dominant_mode(
                    &qphase_core::fp_analysis::fourier_spectrum(&det),
                );
                let sto_mode = qphase_core::fp_analysis::dominant_mode(
                    &qphase_core::fp_analysis::fourier_spectrum(&sto),
                );
                homodyne_difference_fits.push(DifferenceFit {
                    label: model.labels()[k].clone(),
                    deterministic_dominant_mode: det_mode,
                    stochastic_dominant_mode: sto_mode,
                    stochastic_fit: fit_single_harmonic(&thetas, &sto, sto_mode),
                });
                columns.push((format!("Zdet_{}", model.labels()[k]), det));
                columns.push((format!("Zsto_{}", model.labels()[k]), sto));
            }
        }
    }

    let mut csv = Vec::new();
    let header: Vec<&str> = std::iter::once("theta")
        .chain(columns.iter().map(|(name, _)| name.as_str()))
        .collect();
    writeln!(csv, "{}", header.join(","))?;
    for (j, theta) in thetas.iter().enumerate() {
        let mut row = vec![format!("{theta:.12e}")];
        for (_, values) in &columns {
            row.push(format!("{:.12e}", values[j]));
        }
        writeln!(csv, "{}", row.join(","))?;
    }
    write_bytes(&out_dir.join("prc.csv"), &csv)?;

    let report = PrcReport {
        omega: cycle.omega(),
        backaction,
        harmonic_drive_fit,
        homodyne_difference_fits,
    };
    write_json(&out_dir.join("prc_fits.json"), &report)?;

    for jump in &report.backaction.per_jump {
        println!(
            "prc: jump {} -> mode {} with v = {:.4} (residuals {:.3}, {:.3})",
            jump.label, jump.mode, jump.v, jump.residual_y1, jump.residual_y2
        );
    }
    println!(
        "prc: v_total = {:.4}, sum Y^2 spread {:.2e}, written to {}",
        report.backaction.v_total,
        report.backaction.sum_sq_rel_spread,
        out_dir.display()
    );
    Ok(())
}
