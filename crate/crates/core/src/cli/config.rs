//! The TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::laws::{ShapeParams, SpectralLaw};
use crate::moments::{ActivationFamily, ActivationSpec, BiasLaw};
use crate::risk::{MixtureGrid, TaskSpec};
use crate::simulate::matrix_io::MatrixFormat;
use crate::simulate::{DataSpec, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    /// CSV is always written; `json` and `svg` add report and plot files.
    #[serde(default)]
    pub formats: Vec<OutputFormat>,
    #[serde(default)]
    pub activation: ActivationSection,
    #[serde(default)]
    pub bias: BiasSection,
    #[serde(default = "one")]
    pub sigma_w: f64,
    #[serde(default = "one")]
    pub sigma_x: f64,
    #[serde(default)]
    pub normalize: bool,
    pub shape: Option<ShapeParams>,
    #[serde(default)]
    pub law: LawSection,
    pub task: Option<TaskSection>,
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub density: DensitySection,
    pub errors: Option<ErrorsSection>,
    pub mixture_search: Option<MixtureSection>,
    pub compare: Option<CompareSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSection {
    pub family: String,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default = "one")]
    pub scale: f64,
}

impl Default for ActivationSection {
    fn default() -> Self {
        Self { family: "relu".into(), params: toml::Table::new(), scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSection {
    pub kind: String,
    #[serde(default)]
    pub params: toml::Table,
}

impl Default for BiasSection {
    fn default() -> Self {
        let mut params = toml::Table::new();
        params.insert("b0".into(), toml::Value::Float(0.0));
        Self { kind: "dirac".into(), params }
    }
}

/// Data spectral law for the theory; Marchenko-Pastur uses `shape.phi` and
/// `sigma_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSection {
    #[default]
    MarchenkoPastur,
    Discrete { atoms: Vec<(f64, f64)> },
    Empirical { eigenvalues: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    NoisyAutoencoder,
    LinearTeacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskName,
    #[serde(default = "one")]
    pub sigma_a: f64,
    #[serde(default)]
    pub sigma_eps: f64,
    pub gamma: f64,
}

impl TaskSection {
    pub fn spec(&self) -> TaskSpec {
        match self.kind {
            TaskName::NoisyAutoencoder => TaskSpec::autoencoder(self.sigma_a, self.sigma_eps, self.gamma),
            TaskName::LinearTeacher => TaskSpec::linear_teacher(self.sigma_eps, self.gamma),
        }
    }
}

fn default_n2() -> usize {
    16
}

fn default_data() -> DataSpec {
    DataSpec::GaussianIid { sigma_x: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub m: usize,
    #[serde(default = "default_n2")]
    pub n2: usize,
    pub n_test: Option<usize>,
    #[serde(default = "yes")]
    pub center_features: bool,
    /// Gaussian data takes its scale from the top-level `sigma_x`.
    #[serde(default = "default_data")]
    pub data: DataSpec,
    #[serde(default = "one_usize")]
    pub trials: usize,
}

fn one_usize() -> usize {
    1
}

fn default_points() -> usize {
    512
}

fn default_bins() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "default_points")]
    pub points: usize,
    pub lambda_max: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub simulate: bool,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self { points: default_points(), lambda_max: None, bins: default_bins(), simulate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorsSection {
    pub gammas: Vec<f64>,
    /// `(phi, psi)` pairs; defaults to the top-level shape.
    #[serde(default)]
    pub shapes: Vec<(f64, f64)>,
    #[serde(default)]
    pub simulate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub sigma_eps_sq: f64,
    pub gamma: f64,
    #[serde(default)]
    pub p_values: Vec<f64>,
    #[serde(default)]
    pub zeta1_values: Vec<f64>,
    #[serde(default)]
    pub single_zetas: Vec<f64>,
    /// Used to build uniform axes when the explicit lists are empty.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_grid_points() -> usize {
    41
}

impl MixtureSection {
    pub fn grid(&self) -> MixtureGrid {
        let uniform = MixtureGrid::uniform(self.grid_points, self.grid_points);
        let pick = |v: &Vec<f64>, d: Vec<f64>| if v.is_empty() { d } else { v.clone() };
        MixtureGrid {
            p_values: pick(&self.p_values, uniform.p_values),
            zeta1_values: pick(&self.zeta1_values, uniform.zeta1_values),
            single_zetas: pick(&self.single_zetas, uniform.single_zetas),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub data: PathBuf,
    #[serde(default)]
    pub format: MatrixFormat,
    #[serde(default = "yes")]
    pub mean_subtract: bool,
    #[serde(default)]
    pub rescale: bool,
    #[serde(default = "yes")]
    pub simulate: bool,
}

fn tagged<T: serde::de::DeserializeOwned + Serialize>(what: &str, kind: &str, params: &toml::Table) -> Result<T> {
    let mut t = params.clone();
    if t.contains_key("kind") {
        return Err(Error::Config(format!("{what}.params must not contain `kind`")));
    }
    t.insert("kind".into(), toml::Value::String(kind.to_string()));
    let value: T = toml::Value::Table(t).try_into().map_err(|e| Error::Config(format!("{what} `{kind}`: {e}")))?;
    // Unit variants accept any extra keys; catch those by round-tripping.
    let back = toml::Table::try_from(&value).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(k) = params.keys().find(|k| !back.contains_key(*k)) {
        return Err(Error::Config(format!("{what} `{kind}` takes no parameter `{k}`")));
    }
    Ok(value)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.activation_spec().map_err(cfg)?.validate().map_err(cfg)?;
        if let Some(shape) = &self.shape {
            shape.validate().map_err(cfg)?;
        }
        if let Some(task) = &self.task {
            task.spec().validate().map_err(cfg)?;
        }
        if let Some(sim) = &self.simulation {
            if sim.m < 2 || sim.trials == 0 {
                return Err(Error::Config("simulation needs m >= 2 and trials >= 1".into()));
            }
        }
        if self.density.points < 2 || self.density.bins == 0 {
            return Err(Error::Config("density needs points >= 2 and bins >= 1".into()));
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(Error::Config("threads must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn activation_spec(&self) -> Result<ActivationSpec> {
        let family: ActivationFamily = tagged("activation", &self.activation.family, &self.activation.params)?;
        let bias: BiasLaw = tagged("bias", &self.bias.kind, &self.bias.params)?;
        let mut spec = ActivationSpec::new(family, bias).with_sigmas(self.sigma_w, self.sigma_x).with_scale(self.activation.scale);
        spec.normalize = self.normalize;
        Ok(spec)
    }

    pub fn require_shape(&self) -> Result<ShapeParams> {
        self.shape.ok_or_else(|| Error::Config("missing [shape] section (phi, psi)".into()))
    }

    pub fn require_task(&self) -> Result<TaskSpec> {
        self.task.map(|t| t.spec()).ok_or_else(|| Error::Config("missing [task] section".into()))
    }

    pub fn spectral_law(&self, phi: f64) -> SpectralLaw {
        match &self.law {
            LawSection::MarchenkoPastur => SpectralLaw::marchenko_pastur(phi, self.sigma_x),
            LawSection::Discrete { atoms } => SpectralLaw::Discrete { atoms: atoms.clone() },
            LawSection::Empirical { eigenvalues } => SpectralLaw::Empirical { eigenvalues: eigenvalues.clone() },
        }
    }

    /// Simulation settings at shape `(phi, psi)`: `n0 = round(phi m)`,
    /// `n1 = round(n0 / psi)`.
    pub fn sim_config(&self, shape: ShapeParams, seed: u64, task: TaskSpec) -> Result<SimConfig> {
        let sim = self.simulation.as_ref().ok_or_else(|| Error::Config("missing [simulation] section".into()))?;
        let n0 = (shape.phi * sim.m as f64).round() as usize;
        let n1 = (n0 as f64 / shape.psi).round() as usize;
        let data = match &sim.data {
            DataSpec::GaussianIid { .. } => DataSpec::GaussianIid { sigma_x: self.sigma_x },
            d => d.clone(),
        };
        Ok(SimConfig {
            m: sim.m,
            n0,
            n1,
            n2: sim.n2,
            seed,
            activation: self.activation_spec()?,
            data,
            task,
            center_features: sim.center_features,
            n_test: sim.n_test,
        })
    }

    pub fn wants(&self, f: OutputFormat) -> bool {
        f == OutputFormat::Csv || self.formats.contains(&f)
    }

    /// SHA-256 of the resolved configuration. Thread count and output
    /// directory are excluded, so outputs do not depend on them.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Marker written as the first line of every CSV.
pub fn provenance(cfg: &RunConfig, command: &str) -> String {
    format!("rfmix {command} config-sha256={}", cfg.hash())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml_str("[shape]\nphi = 1.5\npsi = 0.8\n").unwrap();
        assert_eq!(cfg.activation_spec().unwrap().family, ActivationFamily::Relu);
        let err = RunConfig::from_toml_str("colour = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::from_toml_str("[density]\npoints = 10\nbogus = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn family_params_are_checked() {
        let ok = "[activation]\nfamily = \"leaky_relu\"\nparams = { alpha = 0.3 }\n[bias]\nkind = \"gaussian\"\nparams = { sigma = 1.0 }\n";
        let cfg = RunConfig::from_toml_str(ok).unwrap();
        assert_eq!(cfg.activation_spec().unwrap().family, ActivationFamily::LeakyRelu { alpha: 0.3 });
        let bad = "[activation]\nfamily = \"leaky_relu\"\nparams = { slope = 0.3 }\n";
        assert_eq!(RunConfig::from_toml_str(bad).unwrap_err().exit_code(), 2);
        let bad = "[activation]\nfamily = \"relu\"\nparams = { alpha = 0.3 }\n";
        assert_eq!(RunConfig::from_toml_str(bad).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn hash_ignores_threads_and_out_dir() {
        let a = RunConfig::from_toml_str("seed = 3\n").unwrap();
        let mut b = a.clone();
        b.threads = Some(7);
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
    }
}
