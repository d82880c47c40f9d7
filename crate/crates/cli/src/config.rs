//! TOML experiment configuration, schema version 1.
//!
//! ```toml
//! schema_version = 1
//!
//! [model]
//! m = 125
//! lambda_bar = 2.5
//! horizon = 1.0
//! f_low = 0.3333333333333333   # optional, default 1/3
//! f_high = 3.0                  # optional, default 3
//! intensity = { kind = "linear-decay" }
//!
//! [factor]
//! kind = "lognormal"
//! a = 1.0
//! sigma = 0.3
//! gamma = 1.0
//!
//! [engine]
//! n = 50000
//! d = 100
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use sli_core::convergence::Estimator;
use sli_core::model::validate_params;
use sli_core::{
    Algorithm, CirParams, CirScheme, DiscreteModel, EngineOptions, FactorDynamics, GapConvention, GeneratorFamily,
    InitialLaw, LocalIntensity, LogNormalParams, ModelParams, OuDrift, SliModel,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<FactorSection>,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub m: usize,
    pub lambda_bar: f64,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_high: Option<f64>,
    #[serde(default)]
    pub intensity: IntensitySpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntensitySpec {
    /// `λ̄ (1 - x/M)` with the model's `lambda_bar` and `m`.
    #[default]
    LinearDecay,
    /// One constant rate per level `0..=M`.
    PerLevel { rates: Vec<f64> },
    /// `values[x][k]` on `[breakpoints[k], breakpoints[k+1])`.
    Table {
        breakpoints: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftSpec {
    #[default]
    Ito,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeSpec {
    #[default]
    SecondOrder,
    Exact,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FactorSection {
    Lognormal {
        a: f64,
        sigma: f64,
        gamma: f64,
        #[serde(default = "one")]
        y0: f64,
        #[serde(default)]
        drift: DriftSpec,
    },
    Cir {
        kappa: f64,
        sigma: f64,
        #[serde(default = "one")]
        y0: f64,
        #[serde(default)]
        scheme: SchemeSpec,
    },
    /// `b0 + b1 y`, `s0 + s1 y`, `g0 + g1 y`.
    Affine {
        drift: [f64; 2],
        vol: [f64; 2],
        jump: [f64; 2],
        #[serde(default = "one")]
        y0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub n: usize,
    pub d: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub replications: usize,
    pub forced_recompute: bool,
    pub parallel: bool,
    pub initial: InitialLaw,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            n: 10_000,
            d: 100,
            algorithm: Algorithm::Improved,
            seed: 0,
            replications: 1,
            forced_recompute: false,
            parallel: true,
            initial: InitialLaw::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    /// Interacting particle system.
    #[default]
    Sli,
    /// Local-intensity chain, simulated path by path.
    Li,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub process: Process,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_thresholds: Option<Vec<f64>>,
    pub gap_convention: GapConvention,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub n_values: Vec<usize>,
    pub reps_per_n: usize,
    pub reference_n: usize,
    pub reference_reps: usize,
    pub estimators: Vec<Estimator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub n_values: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSection {
    /// One `J x J` generator per loss level, or a single one used at every level.
    pub generators: Vec<Vec<Vec<f64>>>,
    pub f_vals: Vec<f64>,
    pub dt: f64,
    #[serde(default)]
    pub x0: usize,
    #[serde(default)]
    pub y0: usize,
    #[serde(default = "default_repeats")]
    pub record_every: usize,
    /// Joint-chain paths for the cross-check; 0 skips it.
    #[serde(default)]
    pub ctmc_paths: usize,
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Schema {
            path: if path == "." { "config".into() } else { path },
            message: inner.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn f_bounds(&self) -> (f64, f64) {
        (
            self.model.f_low.unwrap_or(ModelParams::DEFAULT_F_LOW),
            self.model.f_high.unwrap_or(ModelParams::DEFAULT_F_HIGH),
        )
    }

    /// Defaults that were filled in for absent fields, one line each.
    pub fn defaults_applied(&self) -> Vec<String> {
        let (lo, hi) = self.f_bounds();
        let mut out = Vec::new();
        if self.model.f_low.is_none() {
            out.push(format!("model.f_low = {lo} (default)"));
        }
        if self.model.f_high.is_none() {
            out.push(format!("model.f_high = {hi} (default)"));
        }
        out
    }

    pub fn params(&self) -> ModelParams {
        let (lo, hi) = self.f_bounds();
        ModelParams::new(self.model.m, self.model.lambda_bar, self.model.horizon).with_clamp(lo, hi)
    }

    pub fn intensity(&self) -> LocalIntensity {
        match &self.model.intensity {
            IntensitySpec::LinearDecay => LocalIntensity::linear_decay(self.model.lambda_bar, self.model.m),
            IntensitySpec::PerLevel { rates } => LocalIntensity::per_level(rates.clone()),
            IntensitySpec::Table { breakpoints, values } => LocalIntensity::table(breakpoints.clone(), values.clone()),
        }
    }

    pub fn sli_model(&self) -> Result<SliModel, ConfigError> {
        SliModel::new(self.params(), self.intensity()).map_err(|e| ConfigError::Invalid(vec![format!("model: {e}")]))
    }

    pub fn dynamics(&self) -> Result<FactorDynamics, ConfigError> {
        let f = self
            .factor
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid(vec!["factor: section required for the particle system".into()]))?;
        Ok(match *f {
            FactorSection::Lognormal {
                a,
                sigma,
                gamma,
                y0,
                drift,
            } => FactorDynamics::LogNormalJump(LogNormalParams {
                a,
                sigma,
                gamma,
                y0,
                drift: match drift {
                    DriftSpec::Ito => OuDrift::Ito,
                    DriftSpec::Paper => OuDrift::Paper,
                },
            }),
            FactorSection::Cir {
                kappa,
                sigma,
                y0,
                scheme,
            } => FactorDynamics::Cir(CirParams {
                kappa,
                sigma,
                y0,
                scheme: match scheme {
                    SchemeSpec::SecondOrder => CirScheme::SecondOrder,
                    SchemeSpec::Exact => CirScheme::Exact,
                },
            }),
            FactorSection::Affine { drift, vol, jump, y0 } => FactorDynamics::affine(drift, vol, jump, y0),
        })
    }

    pub fn engine_options(&self) -> EngineOptions {
        let e = &self.engine;
        EngineOptions::new(e.n, e.d)
            .algorithm(e.algorithm)
            .forced_recompute(e.forced_recompute)
            .initial(e.initial.clone())
            .parallel(e.parallel)
    }

    /// Default thresholds `T/8` and `T/4`.
    pub fn tau_thresholds(&self) -> Vec<f64> {
        self.experiment
            .tau_thresholds
            .clone()
            .unwrap_or_else(|| vec![self.model.horizon / 8.0, self.model.horizon / 4.0])
    }

    pub fn discrete_model(&self) -> Result<DiscreteModel, ConfigError> {
        let d = self
            .discrete
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid(vec!["discrete: section required for fokker-planck".into()]))?;
        let gen = if d.generators.len() == 1 {
            GeneratorFamily::uniform(d.generators[0].clone(), self.model.m + 1)
        } else {
            GeneratorFamily::new(d.generators.clone())
        }
        .map_err(|e| ConfigError::Invalid(vec![format!("discrete.generators: {e}")]))?;
        DiscreteModel::new(self.sli_model()?, gen, d.f_vals.clone())
            .map_err(|e| ConfigError::Invalid(vec![format!("discrete: {e}")]))
    }

    /// Semantic checks; every failure is reported with its field path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!(
                "schema_version: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for msg in validate_params(&self.params(), &self.intensity()).violations {
            v.push(format!("model: {msg}"));
        }
        if self.factor.is_some() {
            match self.dynamics() {
                Ok(d) => {
                    if let Err(e) = d.validate() {
                        v.push(format!("factor: {e}"));
                    }
                }
                Err(ConfigError::Invalid(msgs)) => v.extend(msgs),
                Err(e) => v.push(e.to_string()),
            }
        }
        let e = &self.engine;
        if e.n == 0 {
            v.push("engine.n: must be >= 1".into());
        }
        if e.d == 0 {
            v.push("engine.d: must be >= 1".into());
        }
        if e.replications == 0 {
            v.push("engine.replications: must be >= 1".into());
        }
        let x = &self.experiment;
        if let Some(k) = x.strike {
            if !k.is_finite() {
                v.push(format!("experiment.strike: must be finite, got {k}"));
            }
        }
        if let Some(th) = &x.tau_thresholds {
            if th.is_empty() || th.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                v.push("experiment.tau_thresholds: need at least one finite value >= 0".into());
            }
        }
        if let Some(c) = &x.convergence {
            if c.n_values.len() < 2 || c.n_values.contains(&0) {
                v.push("experiment.convergence.n_values: need at least two sizes >= 1".into());
            }
            if c.reps_per_n < 2 {
                v.push("experiment.convergence.reps_per_n: must be >= 2".into());
            }
            if c.reference_n == 0 || c.reference_reps == 0 {
                v.push("experiment.convergence.reference_n, reference_reps: must be >= 1".into());
            }
            if c.estimators.is_empty() {
                v.push("experiment.convergence.estimators: empty".into());
            }
        }
        if let Some(b) = &x.bench {
            if b.n_values.is_empty() || b.n_values.contains(&0) || b.repeats == 0 {
                v.push("experiment.bench: need sizes >= 1 and repeats >= 1".into());
            }
        }
        if let Some(d) = &self.discrete {
            if !(d.dt.is_finite() && d.dt > 0.0) {
                v.push(format!("discrete.dt: must be > 0, got {}", d.dt));
            }
            if d.record_every == 0 {
                v.push("discrete.record_every: must be >= 1".into());
            }
            if v.is_empty() {
                if let Err(ConfigError::Invalid(msgs)) = self.discrete_model() {
                    v.extend(msgs);
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1A: &str = r#"
schema_version = 1

[model]
m = 125
lambda_bar = 2.5
horizon = 1.0
f_low = 0.3333333333333333
f_high = 3.0

[factor]
kind = "lognormal"
a = 1.0
sigma = 0.3
gamma = 1.0
y0 = 1.0

[engine]
n = 50000
d = 100
"#;

    #[test]
    fn figure_config_is_valid() {
        let cfg = parse_config_str(FIG1A).unwrap();
        assert_eq!(cfg.engine.n, 50_000);
        assert!(cfg.defaults_applied().is_empty());
        assert!(matches!(cfg.dynamics().unwrap(), FactorDynamics::LogNormalJump(_)));
    }

    #[test]
    fn negative_n_names_the_field() {
        let text = FIG1A.replace("n = 50000", "n = -5");
        match parse_config_str(&text) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "engine.n"),
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_bounds_take_defaults() {
        let text = FIG1A
            .replace("f_low = 0.3333333333333333\n", "")
            .replace("f_high = 3.0\n", "");
        let cfg = parse_config_str(&text).unwrap();
        assert_eq!(cfg.f_bounds(), (1.0 / 3.0, 3.0));
        assert_eq!(cfg.defaults_applied().len(), 2);
    }

    #[test]
    fn semantic_errors_are_collected() {
        let text = FIG1A
            .replace("lambda_bar = 2.5", "lambda_bar = -1.0")
            .replace("gamma = 1.0", "gamma = -2.0")
            .replace("d = 100", "d = 0");
        match parse_config_str(&text) {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.starts_with("model:")), "{v:?}");
                assert!(v.iter().any(|m| m.starts_with("factor:")), "{v:?}");
                assert!(v.iter().any(|m| m.starts_with("engine.d")), "{v:?}");
            }
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = FIG1A.replace("d = 100", "d = 100\ngrid = 3");
        assert!(matches!(parse_config_str(&text), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn round_trip_and_hash() {
        let cfg = parse_config_str(FIG1A).unwrap();
        let again = parse_config_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let mut other = cfg.clone();
        other.engine.seed = 1;
        assert_ne!(cfg.hash(), other.hash());
    }
}
