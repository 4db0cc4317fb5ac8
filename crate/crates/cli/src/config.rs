//! Run configuration: defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lrmc::analysis::ReportConfig;
use lrmc::approx::{MonteCarloConfig, SamplingConfig};
use lrmc::loads::PopulationSpec;
use lrmc::turvey::GameConfig;
use lrmc::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    Exact,
    Sampling,
    Clustering,
    All,
}

impl MethodChoice {
    pub fn is_stochastic(self) -> bool {
        self != MethodChoice::Exact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    WithoutPv,
    WithPv,
}

/// PV output subtracted from synthetic customers in the with-PV scenario,
/// kWh per half-hour at solar noon.
pub const SYNTHETIC_PV_AMPLITUDE: f64 = 0.5;

/// Where the traces come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Input(PathBuf),
    Synthetic(String),
}

/// `demoN` and `residentialN` give the residential mix, `twoarchN` an even
/// morning/evening split.
pub fn synthetic_spec(name: &str, scenario: Scenario) -> Result<PopulationSpec, Error> {
    let split = name.find(|c: char| c.is_ascii_digit()).unwrap_or(name.len());
    let (kind, count) = name.split_at(split);
    let count: usize = count
        .parse()
        .map_err(|_| Error::Argument(format!("synthetic population '{name}' needs a customer count, e.g. demo25")))?;
    if count == 0 {
        return Err(Error::Argument("synthetic population must have customers".into()));
    }
    let mut spec = match kind {
        "demo" | "residential" | "peaky" => PopulationSpec::residential(count),
        "twoarch" => PopulationSpec::two_archetypes(count),
        _ => {
            return Err(Error::Argument(format!(
                "unknown synthetic population '{kind}'; expected demo, residential, peaky or twoarch"
            )))
        }
    };
    if scenario == Scenario::WithPv {
        spec.pv_amplitude = SYNTHETIC_PV_AMPLITUDE;
    }
    Ok(spec)
}

/// Shape of the optional config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub method: Option<MethodChoice>,
    pub seed: Option<u64>,
    pub clusters: Option<usize>,
    pub scenario: Option<Scenario>,
    pub zero_fill: Option<bool>,
    pub game: Option<GameConfig>,
    pub sampling: Option<SamplingConfig>,
    pub monte_carlo: Option<MonteCarloConfig>,
    pub report: Option<ReportConfig>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Argument(format!("config {}: {e}", path.display())))
    }
}

/// Effective configuration of an `allocate` run, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub source: Source,
    pub method: MethodChoice,
    pub seed: Option<u64>,
    pub clusters: usize,
    pub scenario: Scenario,
    pub zero_fill: bool,
    pub game: GameConfig,
    pub sampling: SamplingConfig,
    pub monte_carlo: MonteCarloConfig,
    pub report: ReportConfig,
}

/// Flag values; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub method: Option<MethodChoice>,
    pub seed: Option<u64>,
    pub clusters: Option<usize>,
    pub mc_runs: Option<usize>,
    pub subset_size: Option<usize>,
    pub scenario: Option<Scenario>,
    pub zero_fill: bool,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Result<Self, Error> {
        let source = match (flags.input, flags.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Argument("give either --input or --synthetic, not both".into())),
            (Some(p), None) => Source::Input(p),
            (None, Some(s)) => Source::Synthetic(s),
            (None, None) => match (file.input, file.synthetic) {
                (Some(_), Some(_)) => {
                    return Err(Error::Argument("config sets both input and synthetic".into()))
                }
                (Some(p), None) => Source::Input(p),
                (None, Some(s)) => Source::Synthetic(s),
                (None, None) => return Err(Error::Argument("no data: pass --input or --synthetic".into())),
            },
        };
        let mut monte_carlo = file.monte_carlo.unwrap_or_default();
        if let Some(runs) = flags.mc_runs {
            monte_carlo.runs = runs;
        }
        if flags.subset_size.is_some() {
            monte_carlo.subset_size = flags.subset_size;
        }
        let cfg = RunConfig {
            source,
            method: flags.method.or(file.method).unwrap_or(MethodChoice::Exact),
            seed: flags.seed.or(file.seed),
            clusters: flags.clusters.or(file.clusters).unwrap_or(5),
            scenario: flags.scenario.or(file.scenario).unwrap_or_default(),
            zero_fill: flags.zero_fill || file.zero_fill.unwrap_or(false),
            game: file.game.unwrap_or_default(),
            sampling: file.sampling.unwrap_or_default(),
            monte_carlo,
            report: file.report.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg.with_seed())
    }

    fn validate(&self) -> Result<(), Error> {
        let synthetic = matches!(self.source, Source::Synthetic(_));
        if self.seed.is_none() && (self.method.is_stochastic() || synthetic) {
            return Err(Error::Argument(format!(
                "--seed is required for {} runs",
                if synthetic { "synthetic" } else { "stochastic" }
            )));
        }
        self.game.validate()?;
        self.sampling.validate()?;
        self.report.flat.validate()?;
        self.report.time_of_use.validate()?;
        if self.monte_carlo.runs == 0 {
            return Err(Error::Argument("--mc-runs must be at least 1".into()));
        }
        if self.clusters == 0 {
            return Err(Error::Argument("--clusters must be at least 1".into()));
        }
        Ok(())
    }

    /// The run seed drives every stochastic component.
    fn with_seed(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.sampling.seed = seed;
            self.monte_carlo.seed = seed;
        }
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// SHA-256 of the compact JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
