use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dichotomy_core::system::{DelaySystem, SystemSpec};
use dichotomy_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// Pipeline stage requested on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectrum,
    Green,
    Solve,
    PairingCheck,
    Dichotomy,
    Fredholm,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Green => "green",
            Command::Solve => "solve",
            Command::PairingCheck => "pairing-check",
            Command::Dichotomy => "dichotomy",
            Command::Fredholm => "fredholm",
            Command::All => "all",
        }
    }
}

/// Numerical settings as written in the config; every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSpec {
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub probes: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub s_list: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write CSV curves next to the JSON reports.
    #[serde(default = "yes")]
    pub csv: bool,
    /// Embed the nodal projector matrices in the dichotomy report.
    #[serde(default = "yes")]
    pub p_matrices: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            csv: true,
            p_matrices: true,
        }
    }
}

/// Top-level config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    /// Informational; the command line decides what runs.
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub numerics: NumericsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Numerics with defaults applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Numerics {
    pub step: f64,
    pub half_width: f64,
    pub m: usize,
    pub horizon: f64,
    pub probes: usize,
    pub seed: u64,
    pub s_list: Vec<f64>,
}

/// Schema violation with the path of the offending field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A validated config: the system, resolved numerics and output options.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: SystemSpec,
    pub system: DelaySystem,
    pub numerics: Numerics,
    pub output: OutputSpec,
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::new(path, format!("must be a positive finite number, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            ConfigError::new(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Build the system and apply numeric defaults.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let system = self.system.build().map_err(|e| match e {
            CoreError::Invalid { field, message } => ConfigError::new(format!("system.{field}"), message),
            other => ConfigError::new("system", other.to_string()),
        })?;
        let r = system.max_delay().max(1.0);
        let n = &self.numerics;
        let step = positive("numerics.step", n.step.unwrap_or(1.0 / 64.0))?;
        if step > 1.0 {
            return Err(ConfigError::new("numerics.step", "must not exceed 1"));
        }
        if let Some(rmin) = system.min_positive_delay() {
            if rmin < step {
                return Err(ConfigError::new(
                    "numerics.step",
                    format!("step {step} is coarser than the smallest positive delay {rmin}"),
                ));
            }
        }
        let half_width = positive("numerics.half_width", n.half_width.unwrap_or(50.0))?;
        let horizon = positive("numerics.horizon", n.horizon.unwrap_or(20.0 * r))?;
        let m = n.m.unwrap_or((64.0 * r).round() as usize);
        if m == 0 {
            return Err(ConfigError::new("numerics.m", "must be at least 1"));
        }
        let probes = n.probes.unwrap_or(256);
        if probes == 0 {
            return Err(ConfigError::new("numerics.probes", "must be at least 1"));
        }
        let s_list = n.s_list.clone().unwrap_or_else(|| vec![0.0]);
        for (i, s) in s_list.iter().enumerate() {
            if !s.is_finite() {
                return Err(ConfigError::new(format!("numerics.s_list[{i}]"), "must be finite"));
            }
        }
        Ok(Resolved {
            spec: self.system.clone(),
            system,
            numerics: Numerics {
                step,
                half_width,
                m,
                horizon,
                probes,
                seed: n.seed.unwrap_or(42),
                s_list,
            },
            output: self.output.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STABLE: &str = r#"{"system": {"dim": 1, "delays": [0.0], "limit_plus": [[-1.0]]}}"#;

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_json(STABLE).unwrap().resolve().unwrap();
        let n = cfg.numerics;
        assert_eq!((n.step, n.half_width, n.m, n.horizon), (1.0 / 64.0, 50.0, 64, 20.0));
        assert_eq!((n.probes, n.seed, n.s_list), (256, 42, vec![0.0]));
        assert!(cfg.output.csv && cfg.output.p_matrices);
    }

    #[test]
    fn delay_scaled_defaults() {
        let text = r#"{"system": {"dim": 1, "delays": [0.0, 2.0], "limit_plus": [[-1.0], [0.2]]}}"#;
        let n = RunConfig::from_json(text).unwrap().resolve().unwrap().numerics;
        assert_eq!((n.m, n.horizon), (128, 40.0));
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let text = r#"{"system": {"dim": 1, "delays": [0.0], "limit_plus": [[-1.0]]}, "numerics": {"stepp": 0.1}}"#;
        let err = RunConfig::from_json(text).unwrap_err();
        assert_eq!(err.path, "numerics.stepp");
        assert!(err.message.contains("stepp"));
        let text = r#"{"system": {"dim": 1, "delays": [0.0], "limit_plus": [[-1.0]], "colour": 1}}"#;
        assert_eq!(RunConfig::from_json(text).unwrap_err().path, "system.colour");
    }

    #[test]
    fn type_errors_name_the_field() {
        let text = r#"{"system": {"dim": 1, "delays": [0.0, "x"], "limit_plus": [[-1.0]]}}"#;
        assert_eq!(RunConfig::from_json(text).unwrap_err().path, "system.delays[1]");
    }

    #[test]
    fn non_increasing_delays() {
        let text = r#"{"system": {"dim": 1, "delays": [0.0, 1.0, 1.0], "limit_plus": [[-1.0], [0.1], [0.1]]}}"#;
        let err = RunConfig::from_json(text).unwrap().resolve().unwrap_err();
        assert_eq!(err.path, "system.delays");
    }

    #[test]
    fn bad_numerics() {
        let text = r#"{"system": {"dim": 1, "delays": [0.0], "limit_plus": [[-1.0]]}, "numerics": {"step": -1.0}}"#;
        let err = RunConfig::from_json(text).unwrap().resolve().unwrap_err();
        assert_eq!(err.path, "numerics.step");
    }
}
