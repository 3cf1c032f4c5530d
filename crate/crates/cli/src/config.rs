//! Experiment configuration: a single JSON file validated against the
//! published schema in schema/config.schema.json. Flags only override the
//! output directory, preset and root seed; everything else lives in the
//! file so a run is reproducible from one artifact.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use latent_reuse::datamodel::{GaussianLatent, LatentDistribution, MixtureModel, NoisyLowDimModel};
use latent_reuse::geometry::{self, Frame};
use latent_reuse::mc::McBudget;
use latent_reuse::schedule::DiffusionSchedule;
use latent_reuse::trainer::TrainConfig;

/// The published JSON schema for config files.
pub const CONFIG_SCHEMA: &str = include_str!("../schema/config.schema.json");
pub const CONFIG_SCHEMA_PATH: &str = "crates/cli/schema/config.schema.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    /// Root seed; every module stream derives from it.
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub ambient_dim: usize,
    pub schedule: ScheduleSpec,
    pub target: ModelSpec,
    #[serde(default)]
    pub source: Option<ModelSpec>,
    pub projector: ProjectorSpec,
    #[serde(default)]
    pub mixed: Option<MixedSpec>,
    pub mc: McSpec,
    #[serde(default)]
    pub trainer: Option<TrainerSpec>,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub n_time_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub latent_dim: usize,
    pub sigma: f64,
    #[serde(default)]
    pub latent: LatentSpec,
    #[serde(default)]
    pub frame: FrameSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentSpec {
    /// Standard normal N(0, I).
    #[default]
    Standard,
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        components: Vec<GaussianSpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrameSpec {
    /// The first latent_dim coordinate axes.
    #[default]
    FirstAxes,
    /// Explicit row-major D x d columns (orthonormalized by QR).
    Columns { data: Vec<f64> },
    /// Haar-random frame.
    Random { seed: u64 },
    /// Target only: rotate the source frame by the given principal angles.
    RotatedFromSource { angles: Vec<f64>, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProjectorSpec {
    /// V1 spans the target frame.
    Aligned,
    /// V1 at the given principal angles to the target frame.
    Angled { angles: Vec<f64>, seed: u64 },
    /// Haar-random V1 of the given dimension.
    Random { latent_dim: usize, seed: u64 },
    /// V1 spans the source frame (requires `source`).
    Source,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedSpec {
    pub k: usize,
    pub omega: [f64; 2],
    #[serde(default)]
    pub c_mode: CMode,
    pub eta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CMode {
    /// c_i = measured time-averaged lambda_max / h^2.
    #[default]
    CBar,
    Fixed {
        c: [f64; 2],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n_samples: usize,
    pub n_workers: usize,
    pub n_batches: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub n_train_samples: usize,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub n_time_samples: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(rename = "K")]
    pub output_bound: f64,
    pub kappa: f64,
    pub truncate: bool,
    /// Truncation parameters (N2, delta, C_z, C_perp) when truncate is on.
    #[serde(default)]
    pub truncation: Option<TruncationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    pub delta: f64,
    pub c_z: f64,
    pub c_perp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub n_chains: usize,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub angles: Vec<f64>,
    #[serde(default)]
    pub sigmas: Vec<f64>,
    /// (d1, d2) pairs for the dimension sweep.
    #[serde(default)]
    pub dims: Vec<[usize; 2]>,
    #[serde(default)]
    pub ks: Vec<usize>,
}

#[derive(Debug)]
pub struct ConfigError {
    /// JSON-pointer-like path to the offending field.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "invalid config at `{}`: {} (schema: {})",
            self.path, self.message, CONFIG_SCHEMA_PATH
        )
    }
}

impl std::error::Error for ConfigError {}

/// Parses and validates a config file, reporting the schema path of the
/// first violation.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    validate(&config)?;
    Ok(config)
}

fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let fail = |path: &str, message: String| {
        Err(ConfigError {
            path: path.to_string(),
            message,
        })
    };
    if config.ambient_dim == 0 || config.ambient_dim > 256 {
        return fail("ambient_dim", "must be in 1..=256".into());
    }
    if !(config.schedule.t0 > 0.0 && config.schedule.t_end > config.schedule.t0) {
        return fail("schedule", "need 0 < t0 < T".into());
    }
    if config.schedule.n_time_nodes < 2 {
        return fail("schedule.n_time_nodes", "need at least 2 nodes".into());
    }
    if config.mc.n_samples == 0 || config.mc.n_workers == 0 || config.mc.n_batches < 2 {
        return fail("mc", "n_samples, n_workers >= 1 and n_batches >= 2".into());
    }
    if config.target.latent_dim == 0 || config.target.latent_dim > config.ambient_dim {
        return fail("target.latent_dim", "must be in 1..=ambient_dim".into());
    }
    if let Some(source) = &config.source {
        if source.latent_dim == 0 || source.latent_dim > config.ambient_dim {
            return fail("source.latent_dim", "must be in 1..=ambient_dim".into());
        }
        if matches!(source.frame, FrameSpec::RotatedFromSource { .. }) {
            return fail("source.frame", "rotated_from_source is target-only".into());
        }
    }
    if matches!(config.target.frame, FrameSpec::RotatedFromSource { .. }) && config.source.is_none()
    {
        return fail(
            "target.frame",
            "rotated_from_source requires a source".into(),
        );
    }
    if matches!(config.projector, ProjectorSpec::Source) && config.source.is_none() {
        return fail(
            "projector",
            "projector type `source` requires a source".into(),
        );
    }
    if let Some(mixed) = &config.mixed {
        if config.source.is_none() {
            return fail("mixed", "mixed spec requires a source model".into());
        }
        let omega_sum = mixed.omega[0] + mixed.omega[1];
        if mixed.omega.iter().any(|&w| w < 0.0) || (omega_sum - 1.0).abs() > 1e-12 {
            return fail("mixed.omega", "must be nonnegative and sum to 1".into());
        }
        if mixed.eta.is_nan() || mixed.eta <= 0.0 {
            return fail("mixed.eta", "must be positive".into());
        }
    }
    if let Some(trainer) = &config.trainer {
        if trainer.truncate && trainer.truncation.is_none() {
            return fail(
                "trainer.truncation",
                "required when truncate is true".into(),
            );
        }
        if trainer.n_train_samples == 0 {
            return fail("trainer.n_train_samples", "must be positive".into());
        }
    }
    Ok(())
}

fn build_latent(spec: &LatentSpec, dim: usize) -> anyhow::Result<LatentDistribution> {
    let gauss = |mean: &[f64], cov: &[Vec<f64>]| -> anyhow::Result<GaussianLatent> {
        let d = mean.len();
        anyhow::ensure!(d == dim, "latent mean has dim {d}, expected {dim}");
        anyhow::ensure!(
            cov.len() == d && cov.iter().all(|r| r.len() == d),
            "covariance must be {d}x{d}"
        );
        let mut m = DMatrix::zeros(d, d);
        for (i, row) in cov.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(GaussianLatent::new(DVector::from_vec(mean.to_vec()), m)?)
    };
    Ok(match spec {
        LatentSpec::Standard => LatentDistribution::Gaussian(GaussianLatent::standard(dim)),
        LatentSpec::Gaussian { mean, cov } => LatentDistribution::Gaussian(gauss(mean, cov)?),
        LatentSpec::GaussianMixture {
            weights,
            components,
        } => LatentDistribution::mixture(
            weights.clone(),
            components
                .iter()
                .map(|c| gauss(&c.mean, &c.cov))
                .collect::<anyhow::Result<Vec<_>>>()?,
        )?,
    })
}

fn build_frame(
    spec: &FrameSpec,
    ambient_dim: usize,
    latent_dim: usize,
    source: Option<&Frame>,
) -> anyhow::Result<Frame> {
    Ok(match spec {
        FrameSpec::FirstAxes => Frame::first_axes(ambient_dim, latent_dim),
        FrameSpec::Columns { data } => {
            anyhow::ensure!(
                data.len() == ambient_dim * latent_dim,
                "frame data must hold {} values",
                ambient_dim * latent_dim
            );
            geometry::make_frame(&DMatrix::from_row_slice(ambient_dim, latent_dim, data))?
        }
        FrameSpec::Random { seed } => geometry::haar_frame(ambient_dim, latent_dim, *seed),
        FrameSpec::RotatedFromSource { angles, seed } => {
            let base = source.ok_or_else(|| anyhow::anyhow!("no source frame available"))?;
            anyhow::ensure!(
                base.latent_dim() == latent_dim,
                "rotated frame must match the source latent dimension"
            );
            geometry::rotate_frame(base, angles, *seed)?
        }
    })
}

/// Fully constructed fixture shared by the preset runners.
pub struct Fixture {
    pub target: NoisyLowDimModel,
    pub source: Option<NoisyLowDimModel>,
    pub projector: Frame,
    pub sched: DiffusionSchedule,
    pub budget: McBudget,
}

impl Fixture {
    pub fn mixture(&self, omega: [f64; 2]) -> anyhow::Result<MixtureModel> {
        let source = self
            .source
            .clone()
            .ok_or_else(|| anyhow::anyhow!("preset requires a source model"))?;
        Ok(MixtureModel::new(omega, [source, self.target.clone()])?)
    }
}

pub fn build_fixture(config: &ExperimentConfig) -> anyhow::Result<Fixture> {
    let d = config.ambient_dim;
    let source_frame = match &config.source {
        Some(spec) => Some(build_frame(&spec.frame, d, spec.latent_dim, None)?),
        None => None,
    };
    let target_frame = build_frame(
        &config.target.frame,
        d,
        config.target.latent_dim,
        source_frame.as_ref(),
    )?;
    let target = NoisyLowDimModel::new(
        target_frame.clone(),
        build_latent(&config.target.latent, config.target.latent_dim)?,
        config.target.sigma,
    )?;
    let source = match &config.source {
        Some(spec) => Some(NoisyLowDimModel::new(
            source_frame.clone().unwrap(),
            build_latent(&spec.latent, spec.latent_dim)?,
            spec.sigma,
        )?),
        None => None,
    };
    let projector = match &config.projector {
        ProjectorSpec::Aligned => target_frame.clone(),
        ProjectorSpec::Angled { angles, seed } => {
            geometry::rotate_frame(&target_frame, angles, *seed)?
        }
        ProjectorSpec::Random { latent_dim, seed } => geometry::haar_frame(d, *latent_dim, *seed),
        ProjectorSpec::Source => source_frame
            .clone()
            .ok_or_else(|| anyhow::anyhow!("projector `source` requires a source model"))?,
    };
    let sched = DiffusionSchedule::new(
        config.schedule.t0,
        config.schedule.t_end,
        config.schedule.n_time_nodes,
    )?;
    let budget = McBudget {
        n: config.mc.n_samples,
        n_workers: config.mc.n_workers,
        n_batches: config.mc.n_batches,
        seed: config.seed,
    };
    Ok(Fixture {
        target,
        source,
        projector,
        sched,
        budget,
    })
}

impl TrainerSpec {
    pub fn to_core_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_epochs: self.n_epochs,
            batch_size: self.batch_size,
            step_size: self.step_size,
            momentum: self.momentum,
            seed,
            n_time_samples: self.n_time_samples,
            hidden_widths: self.hidden_widths.clone(),
            output_bound: self.output_bound,
            kappa: self.kappa,
            truncate: self.truncate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_preset_configs_parse_and_build() {
        for preset in crate::presets::PRESET_NAMES {
            let config = crate::presets::default_config(preset).unwrap();
            let text = serde_json::to_string(&config).unwrap();
            let parsed = parse_config(&text).unwrap();
            build_fixture(&parsed).unwrap();
        }
    }

    #[test]
    fn unknown_field_is_rejected_with_path() {
        let config = crate::presets::default_config("angle-sweep").unwrap();
        let mut value = serde_json::to_value(&config).unwrap();
        value["schedule"]["bogus"] = serde_json::json!(1);
        let err = parse_config(&value.to_string()).unwrap_err();
        assert!(err.path.contains("schedule"), "path {}", err.path);
        assert!(err.to_string().contains("config.schema.json"));
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let config = crate::presets::default_config("angle-sweep").unwrap();
        let mut value = serde_json::to_value(&config).unwrap();
        value["schedule"]["t0"] = serde_json::json!(-0.5);
        let err = parse_config(&value.to_string()).unwrap_err();
        assert!(err.path.contains("schedule"));
    }

    #[test]
    fn mixed_without_source_is_rejected() {
        let config = crate::presets::default_config("mixed-vs-frozen").unwrap();
        let mut value = serde_json::to_value(&config).unwrap();
        value["source"] = serde_json::Value::Null;
        let err = parse_config(&value.to_string()).unwrap_err();
        // The first violated constraint names its own path; any of the
        // source-dependent fields is acceptable.
        assert!(
            ["mixed", "projector", "target.frame"]
                .iter()
                .any(|p| err.path.contains(p)),
            "path {}",
            err.path
        );
    }
}
