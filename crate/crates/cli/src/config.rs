//! The JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use refrag_core::kernel::DEFAULT_MONOMIAL_EPSILON;
use refrag_core::pde::{Observable, PdeSettings, TimeScheme};
use refrag_core::pdmp::{JumpProposal, LScheme};
use refrag_core::verify::Settings;
use refrag_core::{FragmentationKernel, ModelParams};
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub a_minus: f64,
    pub a_plus: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub verify: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Monomial {
        gamma: f64,
    },
    /// Inline nodes, or a CSV file with header `s,rho` relative to the
    /// config file.
    Table {
        #[serde(default)]
        s: Option<Vec<f64>>,
        #[serde(default)]
        rho: Option<Vec<f64>>,
        #[serde(default)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObservableSpec {
    One,
    Identity,
    Indicator {
        lo: f64,
        #[serde(default)]
        hi: Option<f64>,
    },
}

impl ObservableSpec {
    pub fn to_observable(self) -> Observable {
        match self {
            ObservableSpec::One => Observable::One,
            ObservableSpec::Identity => Observable::Identity,
            ObservableSpec::Indicator { lo, hi } => Observable::Indicator { lo, hi: hi.unwrap_or(f64::INFINITY) },
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self.to_observable() {
            Observable::One => 1.0,
            Observable::Identity => x,
            Observable::Indicator { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalSpec {
    Exact,
    Blend(f64),
}

impl From<ProposalSpec> for JumpProposal {
    fn from(p: ProposalSpec) -> Self {
        match p {
            ProposalSpec::Exact => JumpProposal::Exact,
            ProposalSpec::Blend(a) => JumpProposal::Blend(a),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LSchemeSpec {
    Direct,
    Tilted,
    Blend(f64),
    Auto,
}

impl From<LSchemeSpec> for LScheme {
    fn from(s: LSchemeSpec) -> Self {
        match s {
            LSchemeSpec::Direct => LScheme::Direct,
            LSchemeSpec::Tilted => LScheme::Tilted,
            LSchemeSpec::Blend(a) => LScheme::Blend(a),
            LSchemeSpec::Auto => LScheme::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    FeynmanKac,
    Martingale,
    Tilted,
    L,
    Occupation,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: u64,
    pub x: f64,
    pub t: f64,
    pub observable: ObservableSpec,
    pub proposal: ProposalSpec,
    pub estimators: Vec<EstimatorKind>,
    /// Argument of `L`; `λ*` when absent.
    pub q: Option<f64>,
    pub l_scheme: LSchemeSpec,
    pub t_max: Option<f64>,
    pub occupation_time: f64,
    pub occupation_edges: Vec<f64>,
    /// Number of `ξ` paths written to `paths.csv`.
    pub event_log_paths: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            x: 1.0,
            t: 10.0,
            observable: ObservableSpec::Indicator { lo: 1.0, hi: Some(2.0) },
            proposal: ProposalSpec::Exact,
            estimators: vec![
                EstimatorKind::FeynmanKac,
                EstimatorKind::Martingale,
                EstimatorKind::Tilted,
                EstimatorKind::L,
                EstimatorKind::Occupation,
            ],
            q: None,
            l_scheme: LSchemeSpec::Auto,
            t_max: None,
            occupation_time: 1e6,
            occupation_edges: vec![1e-300, 1.0, 1e300],
            event_log_paths: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub t_final: f64,
    pub dt_safety: f64,
    pub sample_every: f64,
    pub scheme: TimeScheme,
    /// The initial state is a unit count in the cell containing this size.
    pub start_x: f64,
    pub observables: Vec<ObservableSpec>,
}

impl Default for PdeConfig {
    fn default() -> Self {
        let s = PdeSettings::default();
        Self {
            x_min: s.x_min,
            x_max: s.x_max,
            n_cells: s.n_cells,
            t_final: s.t_final,
            dt_safety: s.dt_safety,
            sample_every: s.sample_every,
            scheme: s.scheme,
            start_x: 1.0,
            observables: vec![
                ObservableSpec::One,
                ObservableSpec::Identity,
                ObservableSpec::Indicator { lo: 1.0, hi: None },
            ],
        }
    }
}

impl PdeConfig {
    pub fn settings(&self) -> PdeSettings {
        PdeSettings {
            x_min: self.x_min,
            x_max: self.x_max,
            n_cells: self.n_cells,
            t_final: self.t_final,
            dt_safety: self.dt_safety,
            sample_every: self.sample_every,
            scheme: self.scheme,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub svg: bool,
    /// Refuse outside the strict regime instead of writing partial
    /// constants.
    pub normalize: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self { x_min: 1e-4, x_max: 1e4, n_points: 401, svg: true, normalize: true }
    }
}

/// A validated configuration with its model objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub params: ModelParams,
    pub kernel: FragmentationKernel,
    pub seed: u64,
    pub out: PathBuf,
}

impl Resolved {
    pub fn verify_settings(&self) -> Result<Settings, CliError> {
        let mut settings: Settings = match &self.config.verify {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("verify block: {e}")))?,
            None => Settings::default(),
        };
        if self.config.verify.as_ref().is_some_and(|v| v.get("seed").is_some()) {
            return Err(CliError::Config("verify block: set the seed at the top level".into()));
        }
        settings.seed = self.seed;
        Ok(settings)
    }
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    #[derive(Deserialize)]
    struct Row {
        s: f64,
        rho: f64,
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("kernel table {}: {e}", path.display())))?;
    let (mut s, mut rho) = (Vec::new(), Vec::new());
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| CliError::Config(format!("kernel table {}: {e}", path.display())))?;
        s.push(row.s);
        rho.push(row.rho);
    }
    Ok((s, rho))
}

fn build_kernel(config: &RunConfig, base: &Path) -> Result<FragmentationKernel, CliError> {
    let kernel = match &config.kernel {
        KernelSpec::Monomial { gamma } => {
            FragmentationKernel::monomial_with_epsilon(*gamma, config.epsilon.unwrap_or(DEFAULT_MONOMIAL_EPSILON))
        }
        KernelSpec::Table { s, rho, file } => {
            let epsilon = config.epsilon.ok_or_else(|| CliError::Config("table kernels need \"epsilon\"".into()))?;
            let (s, rho) = match (s, rho, file) {
                (Some(s), Some(rho), None) => (s.clone(), rho.clone()),
                (None, None, Some(f)) => read_table(&base.join(f))?,
                _ => return Err(CliError::Config("table kernels need either \"s\" and \"rho\" or \"file\"".into())),
            };
            FragmentationKernel::tabulated(s, rho, epsilon)
        }
    };
    Ok(kernel?)
}

/// Reads and validates `path`, applying command-line overrides.
pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Resolved, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    if !(config.a_plus < config.a_minus) {
        return Err(CliError::Config(format!("need a_plus < a_minus, got {} and {}", config.a_plus, config.a_minus)));
    }
    let params = ModelParams::new(config.a_minus, config.a_plus)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let kernel = build_kernel(&config, base)?;
    let seed = seed.or(config.seed).unwrap_or(Settings::default().seed);
    let out = out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok(Resolved { config, params, kernel, seed, out })
}
