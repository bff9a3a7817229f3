//! Scenario configuration: a TOML file naming the input files, the period
//! layout, choice and GA parameters, and the experiment grid.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::optimizer::GAParams;
use crate::prediction::PredictionSettings;

/// The three benchmark scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NoToll,
    Static,
    Predictive,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::NoToll => "no_toll",
            ScenarioKind::Static => "static",
            ScenarioKind::Predictive => "predictive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_toll" => Ok(ScenarioKind::NoToll),
            "static" => Ok(ScenarioKind::Static),
            "predictive" => Ok(ScenarioKind::Predictive),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scalar broadcast over all gantries, or one value per gantry.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PerGantry {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerGantry {
    pub fn expand(&self, m: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerGantry::Scalar(v) => Ok(vec![*v; m]),
            PerGantry::Vector(v) if v.len() == m => Ok(v.clone()),
            PerGantry::Vector(v) => Err(Error::Config(format!(
                "{what} lists {} values for {m} gantries",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FilesSection {
    pub network: PathBuf,
    pub demand: PathBuf,
    pub historical_times: Option<PathBuf>,
    pub path_sets: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PeriodSection {
    pub start: f64,
    pub end: f64,
    /// Tolls are zero before this instant.
    pub warmup_end: f64,
    /// Tolls are zero from this instant on.
    pub tolling_end: f64,
    /// Estimation/tolling interval width Δ, seconds.
    pub delta: f64,
    /// Prediction horizon H in intervals.
    pub horizon: usize,
    pub peak_start: Option<f64>,
    pub peak_end: Option<f64>,
}

impl PeriodSection {
    pub fn n_intervals(&self) -> usize {
        ((self.end - self.start) / self.delta).round() as usize
    }

    pub fn n_cycles(&self) -> usize {
        self.n_intervals()
    }

    pub fn tolling_window(&self) -> (f64, f64) {
        (self.warmup_end, self.tolling_end)
    }

    pub fn peak_window(&self) -> Option<(f64, f64)> {
        match (self.peak_start, self.peak_end) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let aligned = |t: f64| ((t - self.start) / self.delta).fract().abs() < 1e-9;
        if self.delta <= 0.0 {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.start <= self.warmup_end
            && self.warmup_end <= self.tolling_end
            && self.tolling_end <= self.end)
        {
            return Err(Error::Config(
                "windows must satisfy start <= warmup_end <= tolling_end <= end".into(),
            ));
        }
        for (t, name) in [
            (self.end, "end"),
            (self.warmup_end, "warmup_end"),
            (self.tolling_end, "tolling_end"),
        ] {
            if !aligned(t) {
                return Err(Error::Config(format!("{name} is not a multiple of delta")));
            }
        }
        if self.horizon < 2 {
            return Err(Error::Config(
                "horizon must be at least 2 intervals (one decision interval)".into(),
            ));
        }
        if self.n_intervals() == 0 {
            return Err(Error::Config("empty simulation period".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChoiceSection {
    pub beta_cost: f64,
    pub beta_time: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_true")]
    pub en_route: bool,
    #[serde(default = "default_one")]
    pub informed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TollSection {
    pub lower: PerGantry,
    pub upper: PerGantry,
    pub delta_max: PerGantry,
    #[serde(default = "default_true")]
    pub reduced: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GASection {
    pub population: usize,
    #[serde(default = "default_crossover")]
    pub crossover_probability: f64,
    #[serde(default = "default_mutation")]
    pub mutation_probability: f64,
    #[serde(default = "default_sbx_eta")]
    pub sbx_eta: f64,
    #[serde(default = "default_mutation_eta")]
    pub mutation_eta: f64,
    pub max_generations: usize,
    pub time_budget: f64,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PredictionSection {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for PredictionSection {
    fn default() -> Self {
        PredictionSection {
            eps: default_eps(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
pub struct EstimationSection {
    #[serde(default)]
    pub count_noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WorldSection {
    #[serde(default = "default_cov")]
    pub cov: f64,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RunSection {
    pub scenarios: Vec<String>,
    #[serde(default = "default_levels")]
    pub demand_levels: Vec<f64>,
    #[serde(default = "default_static_multiplier")]
    pub static_design_multiplier: f64,
}

fn default_k_max() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_crossover() -> f64 {
    0.7
}
fn default_mutation() -> f64 {
    0.1
}
fn default_sbx_eta() -> f64 {
    15.0
}
fn default_mutation_eta() -> f64 {
    20.0
}
fn default_eps() -> f64 {
    0.05
}
fn default_max_iter() -> usize {
    5
}
fn default_cov() -> f64 {
    0.2
}
fn default_levels() -> Vec<f64> {
    vec![1.0]
}
fn default_static_multiplier() -> f64 {
    1.2
}

/// The whole scenario file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScenarioConfig {
    pub files: FilesSection,
    pub period: PeriodSection,
    pub choice: ChoiceSection,
    pub tolls: TollSection,
    pub ga: GASection,
    #[serde(default)]
    pub prediction: PredictionSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    pub world: WorldSection,
    pub run: RunSection,
    /// Directory the file paths are resolved against (the config file's
    /// directory), set at load time.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn parse_with_overrides(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::parse(text, base_dir);
        }
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for entry in overrides {
            let (key, raw) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {entry:?} is not key=value")))?;
            apply_override(&mut value, key.trim(), raw.trim())?;
        }
        let text = toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse(&text, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        }
    }

    pub fn scenario_kinds(&self) -> Result<Vec<ScenarioKind>> {
        self.run.scenarios.iter().map(|s| ScenarioKind::parse(s)).collect()
    }

    pub fn ga_params(&self, seed: u64) -> GAParams {
        GAParams {
            population: self.ga.population,
            crossover_probability: self.ga.crossover_probability,
            mutation_probability: self.ga.mutation_probability,
            sbx_eta: self.ga.sbx_eta,
            mutation_eta: self.ga.mutation_eta,
            max_generations: self.ga.max_generations,
            time_budget: self.ga.time_budget,
            batch_size: self.ga.batch_size.unwrap_or(self.ga.population),
            seed,
        }
    }

    pub fn prediction_settings(&self) -> PredictionSettings {
        PredictionSettings {
            eps: self.prediction.eps,
            max_iter: self.prediction.max_iter,
        }
    }

    fn validate(&self) -> Result<()> {
        self.period.validate()?;
        if self.choice.beta_cost >= 0.0 || self.choice.beta_time >= 0.0 {
            return Err(Error::Config("choice coefficients must be negative".into()));
        }
        if !(0.0..=1.0).contains(&self.choice.informed_fraction) {
            return Err(Error::Config("informed_fraction outside [0, 1]".into()));
        }
        if self.choice.k_max < 1 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.world.cov < 0.0 {
            return Err(Error::Config("cov must be non-negative".into()));
        }
        if self.world.replications < 1 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if self.run.demand_levels.iter().any(|l| *l <= 0.0) {
            return Err(Error::Config("demand levels must be positive".into()));
        }
        self.ga_params(0).validate()?;
        self.scenario_kinds()?;
        Ok(())
    }
}

/// Set a dotted-path key in a TOML tree, e.g. `period.delta=60`. The value
/// is parsed as TOML; strings that fail to parse are taken verbatim.
fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key:?} crosses a non-table value")))?
            .entry(*part)
            .or_insert(toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("{key:?} crosses a non-table value")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
pub(crate) const EXAMPLE_CONFIG: &str = r#"
[files]
network = "network.txt"
demand = "demand.txt"

[period]
start = 0.0
end = 3600.0
warmup_end = 600.0
tolling_end = 2400.0
delta = 300.0
horizon = 3
peak_start = 900.0
peak_end = 1800.0

[choice]
beta_cost = -0.4
beta_time = -0.01
k_max = 3
en_route = false

[tolls]
lower = 0.0
upper = 4.0
delta_max = 4.0
reduced = true

[ga]
population = 8
max_generations = 4
time_budget = 30.0

[world]
cov = 0.2
replications = 3
seed = 7

[run]
scenarios = ["no_toll", "predictive"]
demand_levels = [1.0]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses() {
        let c = ScenarioConfig::parse(EXAMPLE_CONFIG, Path::new("/tmp")).unwrap();
        assert_eq!(c.period.n_intervals(), 12);
        assert_eq!(c.period.tolling_window(), (600.0, 2400.0));
        assert_eq!(c.period.peak_window(), Some((900.0, 1800.0)));
        assert_eq!(
            c.scenario_kinds().unwrap(),
            vec![ScenarioKind::NoToll, ScenarioKind::Predictive]
        );
        assert_eq!(c.ga_params(1).batch_size, 8);
        assert_eq!(c.prediction_settings().eps, 0.05);
        assert_eq!(c.tolls.upper.expand(2, "upper").unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn overrides_replace_values() {
        let c = ScenarioConfig::parse_with_overrides(
            EXAMPLE_CONFIG,
            Path::new("/tmp"),
            &["period.delta=60".into(), "world.replications = 5".into()],
        )
        .unwrap();
        assert_eq!(c.period.delta, 60.0);
        assert_eq!(c.world.replications, 5);
        assert_eq!(c.period.n_intervals(), 60);
    }

    #[test]
    fn override_rejects_malformed_entries() {
        assert!(ScenarioConfig::parse_with_overrides(
            EXAMPLE_CONFIG,
            Path::new("/tmp"),
            &["perioddelta".into()],
        )
        .is_err());
    }

    #[test]
    fn misaligned_windows_are_rejected() {
        let c = ScenarioConfig::parse_with_overrides(
            EXAMPLE_CONFIG,
            Path::new("/tmp"),
            &["period.warmup_end=601".into()],
        );
        assert!(c.is_err());
        let c = ScenarioConfig::parse_with_overrides(
            EXAMPLE_CONFIG,
            Path::new("/tmp"),
            &["period.horizon=1".into()],
        );
        assert!(c.is_err());
    }

    #[test]
    fn per_gantry_vector_length_is_checked() {
        let v = PerGantry::Vector(vec![1.0, 2.0]);
        assert!(v.expand(3, "upper").is_err());
        assert_eq!(v.expand(2, "upper").unwrap(), vec![1.0, 2.0]);
    }
}
