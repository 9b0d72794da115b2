//! Experiment configuration: JSON schema, validation and assembly of the
//! domain objects. Unknown fields are rejected so typos surface as config
//! errors; command-line flags override the corresponding fields.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use qphase_core::hilbert::{make_annihilation, make_qvdp, FockOperator, OscillatorModel};
use qphase_core::limit_cycle::CycleOpts;
use qphase_core::sse_sim::{Detection, NoiseSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub detection: DetectionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpecConfig>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Quantum van der Pol oscillator in the rotating frame.
    Qvdp { dim: usize, delta: f64, gamma_gain: f64, gamma_damp: f64 },
    /// Explicit operator matrices, flattened interleaved re/im, row-major.
    Custom {
        dim: usize,
        hamiltonian: Vec<f64>,
        jumps: Vec<Vec<f64>>,
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectionSpec {
    Heterodyne,
    Homodyne {
        #[serde(default)]
        angles: Vec<f64>,
    },
}

impl Default for DetectionSpec {
    fn default() -> Self {
        Self::Heterodyne
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpecConfig {
    /// Named operator (`"i(a-adag)"`, `"i(a2-adag2)"`) or explicit matrix.
    pub operator: NoiseOperator,
    #[serde(default = "default_strength")]
    pub strength: f64,
    #[serde(default = "default_true")]
    pub shared: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseOperator {
    Named(String),
    Matrix { matrix: Vec<f64> },
}

fn default_strength() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub dt: f64,
    pub t_end: f64,
    /// Trajectory time discarded before sampling stationary statistics.
    pub burn_in: f64,
    /// Spacing of stationary phase samples along a trajectory.
    pub sample_interval: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub bins: usize,
    /// Stride over the cycle grid for PRC sweeps.
    pub prc_stride: usize,
    /// Isochrone settings for bulk phase readout.
    pub relax_periods: usize,
    pub steps_per_period: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 150.0,
            burn_in: 60.0,
            sample_interval: 8.0,
            ensemble: 64,
            seed: 42,
            grid_size: 256,
            bins: 32,
            prc_stride: 4,
            relax_periods: 12,
            steps_per_period: 1200,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Output directory; the `--out` flag takes precedence.
    pub dir: Option<String>,
    /// Path of a previously computed cycle file to reuse.
    pub cycle_path: Option<String>,
}

/// Config-level failure: reported with exit code 2 and the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig =
        serde_json::from_str(&data).map_err(|e| ConfigError(format!("{e}")))?;
    validate(&config)?;
    Ok(config)
}

fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let n = &config.numerics;
    if n.dt <= 0.0 {
        return Err(ConfigError(format!("field numerics.dt must be positive, got {}", n.dt)));
    }
    if n.t_end <= 0.0 {
        return Err(ConfigError(format!("field numerics.t_end must be positive, got {}", n.t_end)));
    }
    if n.ensemble == 0 {
        return Err(ConfigError("field numerics.ensemble must be at least 1".into()));
    }
    if n.bins < 8 {
        return Err(ConfigError(format!("field numerics.bins must be >= 8, got {}", n.bins)));
    }
    if n.grid_size < 16 {
        return Err(ConfigError(format!(
            "field numerics.grid_size must be >= 16, got {}",
            n.grid_size
        )));
    }
    match &config.model {
        ModelSpec::Qvdp { dim, gamma_gain, gamma_damp, .. } => {
            if *dim < 3 {
                return Err(ConfigError(format!("field model.dim must be >= 3, got {dim}")));
            }
            if *gamma_gain <= 0.0 || *gamma_damp <= 0.0 {
                return Err(ConfigError("fields model.gamma_gain and model.gamma_damp must be positive".into()));
            }
        }
        ModelSpec::Custom { dim, hamiltonian, jumps, labels } => {
            if hamiltonian.len() != 2 * dim * dim {
                return Err(ConfigError(format!(
                    "field model.hamiltonian needs {} floats for dim {dim}, got {}",
                    2 * dim * dim,
                    hamiltonian.len()
                )));
            }
            for (k, jump) in jumps.iter().enumerate() {
                if jump.len() != 2 * dim * dim {
                    return Err(ConfigError(format!(
                        "field model.jumps[{k}] needs {} floats, got {}",
                        2 * dim * dim,
                        jump.len()
                    )));
                }
            }
            if labels.len() != jumps.len() {
                return Err(ConfigError("field model.labels must match model.jumps in length".into()));
            }
        }
    }
    if let DetectionSpec::Homodyne { angles } = &config.detection {
        let n_jumps = match &config.model {
            ModelSpec::Qvdp { .. } => 2,
            ModelSpec::Custom { jumps, .. } => jumps.len(),
        };
        if !angles.is_empty() && angles.len() != n_jumps {
            return Err(ConfigError(format!(
                "field detection.angles needs {n_jumps} entries (or none for all-zero), got {}",
                angles.len()
            )));
        }
    }
    Ok(())
}

fn unflatten(data: &[f64], dim: usize) -> Result<FockOperator, ConfigError> {
    let entries = Array2::from_shape_vec(
        (dim, dim),
        data.chunks(2).map(|c| C64::new(c[0], c[1])).collect(),
    )
    .map_err(|e| ConfigError(format!("bad matrix shape: {e}")))?;
    FockOperator::new(entries).map_err(|e| ConfigError(format!("bad matrix: {e}")))
}

impl ExperimentConfig {
    pub fn build_model(&self) -> Result<OscillatorModel, ConfigError> {
        match &self.model {
            ModelSpec::Qvdp { dim, delta, gamma_gain, gamma_damp } => {
                make_qvdp(*dim, *delta, *gamma_gain, *gamma_damp)
                    .map_err(|e| ConfigError(format!("model: {e}")))
            }
            ModelSpec::Custom { dim, hamiltonian, jumps, labels } => {
                let h = unflatten(hamiltonian, *dim)?;
                let jump_ops = jumps
                    .iter()
                    .map(|j| unflatten(j, *dim))
                    .collect::<Result<Vec<_>, _>>()?;
                OscillatorModel::new(h, jump_ops, labels.clone())
                    .map_err(|e| ConfigError(format!("model: {e}")))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ModelSpec::Qvdp { dim, .. } | ModelSpec::Custom { dim, .. } => *dim,
        }
    }

    pub fn detection(&self) -> Detection {
        match &self.detection {
            DetectionSpec::Heterodyne => Detection::Heterodyne,
            DetectionSpec::Homodyne { angles } => {
                let n_jumps = match &self.model {
                    ModelSpec::Qvdp { .. } => 2,
                    ModelSpec::Custom { jumps, .. } => jumps.len(),
                };
                let angles = if angles.is_empty() { vec![0.0; n_jumps] } else { angles.clone() };
                Detection::Homodyne(angles)
            }
        }
    }

    pub fn homodyne_angles(&self) -> Option<Vec<f64>> {
        match self.detection() {
            Detection::Homodyne(angles) => Some(angles),
            Detection::Heterodyne => None,
        }
    }

    pub fn build_noise(&self) -> Result<Option<NoiseSpec>, ConfigError> {
        let Some(spec) = &self.noise else { return Ok(None) };
        let dim = self.dim();
        let op = match &spec.operator {
            NoiseOperator::Named(name) => named_noise_operator(name, dim)?,
            NoiseOperator::Matrix { matrix } => unflatten(matrix, dim)?,
        };
        NoiseSpec::new(op, spec.strength, spec.shared)
            .map(Some)
            .map_err(|e| ConfigError(format!("noise: {e}")))
    }

    pub fn cycle_opts(&self) -> CycleOpts {
        CycleOpts { grid_size: self.numerics.grid_size, ..CycleOpts::default() }
    }
}

/// The named Hermitian noise operators used throughout.
pub fn named_noise_operator(name: &str, dim: usize) -> Result<FockOperator, ConfigError> {
    let a = make_annihilation(dim).map_err(|e| ConfigError(format!("noise: {e}")))?;
    let i = C64::new(0.0, 1.0);
    match name {
        "i(a-adag)" => Ok(&a.scaled(i) - &a.adjoint().scaled(i)),
        "i(a2-adag2)" => {
            let a2 = a.matmul(&a);
            Ok(&a2.scaled(i) - &a2.adjoint().scaled(i))
        }
        "x" | "a+adag" => Ok(&a + &a.adjoint()),
        other => Err(ConfigError(format!(
            "field noise.operator: unknown name {other:?} (expected \"i(a-adag)\", \"i(a2-adag2)\", \"a+adag\", or an explicit matrix)"
        ))),
    }
}
