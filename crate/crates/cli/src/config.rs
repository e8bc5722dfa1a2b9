//! Run configuration, presets and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use vefil::forcing::{ForcingSpec, Profile};
use vefil::sim::{CurvatureStencil, SimParams};
use vefil::theory::FluidParams;
use vefil::validation;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config field {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset {0:?}; available: {list}", list = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// What a run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    Sweep,
    TheoryTable,
    Optimize,
    Validate,
}

/// Starting shape of a simulation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Straight along the x-axis with zero memory.
    #[default]
    Straight,
    /// Seeded random curvature and memory from the first `modes` beam modes.
    Perturbed { seed: u64, amplitude: f64, modes: usize },
    /// The periodic solution of the linearised dynamics at `t = 0`.
    LinearPeriodic,
}

/// Extra analysis attached to a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Memory-lag scaling as the relaxation times in `sweep.delta` shrink.
    DeltaScaling,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    /// Beam modes used for the speed theory.
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Mode budget of the optimizer.
    #[serde(default = "default_optimize_modes")]
    pub optimize_modes: usize,
}

fn default_modes() -> usize {
    40
}
fn default_optimize_modes() -> usize {
    12
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            optimize_modes: default_optimize_modes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    /// Criteria to run; empty means all.
    #[serde(default)]
    pub criteria: Vec<usize>,
}

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "ForcingSpec::bad_swimmer")]
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub initial: InitialCondition,
    /// Spacing of recorded samples; a twentieth of the forcing period when absent.
    #[serde(default)]
    pub sample_interval: Option<f64>,
    /// Displacement window; the second half of the run when absent.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub study: Option<Study>,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_run_id() -> String {
    "run".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("every field has a default")
    }
}

pub const PRESETS: [&str; 4] = ["bad-swimmer", "traveling-wave", "relaxation", "delta-study"];

fn central(fluid: FluidParams) -> SimParams {
    SimParams {
        fluid,
        curvature_stencil: CurvatureStencil::Central,
        ..SimParams::default()
    }
}

/// Named configurations reproducing the standard experiments.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let base = RunConfig::default();
    let cfg = match name {
        "bad-swimmer" => RunConfig {
            run_id: "bad-swimmer".into(),
            forcing: ForcingSpec::bad_swimmer(),
            sim: central(FluidParams::default()),
            window: Some([1.0, 2.0]),
            sweep: SweepAxes {
                mu: vec![0.0, 1.0, 2.0, 4.0, 8.0],
                delta: vec![1.0],
            },
            ..base
        },
        "traveling-wave" => RunConfig {
            run_id: "traveling-wave".into(),
            forcing: ForcingSpec::traveling_wave(2.0 * std::f64::consts::PI).with_amplitude(0.1),
            sim: SimParams {
                t_end: 0.5,
                ..central(FluidParams {
                    mu: 1.0,
                    delta: 0.1,
                    ..FluidParams::default()
                })
            },
            initial: InitialCondition::LinearPeriodic,
            window: Some([0.375, 0.5]),
            sweep: SweepAxes {
                mu: vec![0.0, 1.0],
                delta: vec![0.1, 1.0],
            },
            ..base
        },
        "relaxation" => RunConfig {
            run_id: "relaxation".into(),
            forcing: ForcingSpec::new(Profile::Zero, Profile::Zero),
            sim: SimParams {
                t_end: 1.0,
                ..central(FluidParams {
                    mu: 1.0,
                    delta: 1.0,
                    ..FluidParams::default()
                })
            },
            initial: InitialCondition::Perturbed {
                seed: 7,
                amplitude: 0.2,
                modes: 4,
            },
            sample_interval: Some(0.01),
            sweep: SweepAxes {
                mu: vec![0.0, 1.0],
                delta: vec![0.1, 1.0],
            },
            ..base
        },
        "delta-study" => RunConfig {
            mode: Mode::Sweep,
            run_id: "delta-study".into(),
            forcing: ForcingSpec::bad_swimmer(),
            sim: central(FluidParams {
                mu: 1.0,
                ..FluidParams::default()
            }),
            sweep: SweepAxes {
                mu: vec![1.0],
                delta: vec![1e-2, 2.5e-3, 6.25e-4],
            },
            study: Some(Study::DeltaScaling),
            ..base
        },
        other => return Err(ConfigError::UnknownPreset(other.into())),
    };
    Ok(cfg)
}

/// Overlays `patch` onto `base`, recursing into objects. An object with a
/// `kind` tag names a new variant and replaces the old one whole.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Reads a config file. A manifest written by a previous run is accepted
/// and yields the configuration it recorded.
pub fn read_config_value(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    match serde_json::from_str(&text)? {
        Value::Object(mut map) if map.contains_key(MANIFEST_VERSION_KEY) => {
            map.remove("config").ok_or_else(|| invalid("config", "manifest records no config"))
        }
        value => Ok(value),
    }
}

/// Key that marks a manifest file.
pub const MANIFEST_VERSION_KEY: &str = "manifest_version";

/// Builds the effective configuration: defaults, then the preset, then the
/// file, with `mode` forced to the subcommand.
pub fn resolve(
    mode: Mode,
    preset_name: Option<&str>,
    file: Option<&Path>,
) -> Result<RunConfig, ConfigError> {
    let base = match preset_name {
        Some(name) => preset(name)?,
        None => RunConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = file {
        merge(&mut value, read_config_value(path)?);
    }
    let mut cfg: RunConfig = serde_json::from_value(value)?;
    cfg.mode = mode;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Checks every field against its owning type.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\', ',']) {
            return Err(invalid("run_id", "must be non-empty without '/', '\\' or ','"));
        }
        self.forcing.build().map_err(|e| invalid("forcing", e.to_string()))?;
        self.sim.validate().map_err(|e| invalid("sim", e.to_string()))?;
        if !(self.sim.t_end > 0.0) {
            return Err(invalid("sim.t_end", "must be positive"));
        }
        let fluid = self.sim.fluid;
        if (fluid.omega - self.forcing.omega).abs() > 1e-12 * self.forcing.omega {
            return Err(invalid(
                "sim.fluid.omega",
                format!("{} differs from forcing.omega {}", fluid.omega, self.forcing.omega),
            ));
        }
        if let Some(dt) = self.sample_interval {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("sample_interval", format!("{dt} must be positive")));
            }
        }
        if let Some([t1, t2]) = self.window {
            if !(0.0 <= t1 && t1 < t2 && t2 <= self.sim.t_end) {
                return Err(invalid(
                    "window",
                    format!("[{t1}, {t2}] must be increasing inside [0, {}]", self.sim.t_end),
                ));
            }
        }
        if let InitialCondition::Perturbed { amplitude, modes, .. } = self.initial {
            if !(amplitude.is_finite() && amplitude >= 0.0) {
                return Err(invalid("initial.amplitude", "must be finite and non-negative"));
            }
            if modes == 0 || modes > vefil::basis::MAX_STABLE_MODES {
                return Err(invalid(
                    "initial.modes",
                    format!("must lie in 1..={}", vefil::basis::MAX_STABLE_MODES),
                ));
            }
        }
        if self.theory.modes == 0 || self.theory.modes > vefil::basis::MAX_STABLE_MODES {
            return Err(invalid(
                "theory.modes",
                format!("must lie in 1..={}", vefil::basis::MAX_STABLE_MODES),
            ));
        }
        if self.theory.optimize_modes < 2 || self.theory.optimize_modes > self.theory.modes {
            return Err(invalid("theory.optimize_modes", "must lie in 2..=theory.modes"));
        }
        for (field, axis) in [("sweep.mu", &self.sweep.mu), ("sweep.delta", &self.sweep.delta)] {
            if axis.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid(field, "values must be finite and non-negative"));
            }
        }
        if self.mode == Mode::Sweep {
            if self.sweep.mu.is_empty() || self.sweep.delta.is_empty() {
                return Err(invalid("sweep", "both axes must be non-empty in sweep mode"));
            }
            // combinations that cannot run are marked failed in the output
            if self.study == Some(Study::DeltaScaling) {
                let d = &self.sweep.delta;
                if d.iter().any(|&x| x <= 0.0) || d.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(invalid("sweep.delta", "the delta study needs positive, decreasing values"));
                }
            }
        }
        if let Some(&bad) = self
            .validate
            .criteria
            .iter()
            .find(|&&id| validation::criterion_name(id).is_err())
        {
            return Err(invalid(
                "validate.criteria",
                format!("{bad} is not in 1..={}", validation::COUNT),
            ));
        }
        Ok(())
    }

    /// Spacing between recorded samples.
    pub fn resolved_interval(&self) -> f64 {
        self.sample_interval.unwrap_or_else(|| {
            let forcing = self.forcing.build().expect("validated");
            if forcing.is_zero() {
                self.sim.t_end / 200.0
            } else {
                forcing.period() / 20.0
            }
        })
    }

    /// Displacement window.
    pub fn resolved_window(&self) -> [f64; 2] {
        self.window.unwrap_or([0.5 * self.sim.t_end, self.sim.t_end])
    }

    /// Copy with every optional field made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            sample_interval: Some(self.resolved_interval()),
            window: Some(self.resolved_window()),
            ..self.clone()
        }
    }
}
