//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::envs::EnvKind;
use crate::learn::ProbeSchedule;
use crate::plan::{DiscountFn, PlanConfig};
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    ModelBased,
    Rl,
    Goal,
    Prediction,
    Knowledge,
}

impl AgentKind {
    fn default_spec(self, env: EnvKind) -> UtilitySpec {
        match self {
            AgentKind::ModelBased => env.score_spec(),
            AgentKind::Rl => UtilitySpec::RewardChannel { obs: "reward".into() },
            AgentKind::Goal => UtilitySpec::Goal { obs: "o".into(), value: true },
            AgentKind::Prediction => UtilitySpec::PredictionMatch,
            AgentKind::Knowledge => UtilitySpec::KnowledgeSeeking,
        }
    }

    fn accepts(self, spec: &UtilitySpec) -> bool {
        match self {
            AgentKind::ModelBased => spec.is_model_based(),
            AgentKind::Rl => matches!(spec, UtilitySpec::RewardChannel { .. }),
            AgentKind::Goal => matches!(spec, UtilitySpec::Goal { .. }),
            AgentKind::Prediction => matches!(spec, UtilitySpec::PredictionMatch),
            AgentKind::Knowledge => matches!(spec, UtilitySpec::KnowledgeSeeking),
        }
    }
}

impl FromStr for AgentKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "model-based" => AgentKind::ModelBased,
            "rl" => AgentKind::Rl,
            "goal" => AgentKind::Goal,
            "prediction" => AgentKind::Prediction,
            "knowledge" => AgentKind::Knowledge,
            _ => return Err(CliError::Config(format!("unknown agent kind `{s}`"))),
        })
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::ModelBased => "model-based",
            AgentKind::Rl => "rl",
            AgentKind::Goal => "goal",
            AgentKind::Prediction => "prediction",
            AgentKind::Knowledge => "knowledge",
        })
    }
}

/// What happens when a mature model is contradicted by an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnContradiction {
    Fail,
    Relearn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(CliError::Config(format!("unknown format `{s}`"))),
        }
    }
}

/// When training ends: the first recheck, at or after `floor`, at which the
/// learned model predicts the trailing `window` observations with mean
/// probability `threshold`, and at the latest at `ceiling`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maturity {
    pub floor: usize,
    pub ceiling: usize,
    pub window: usize,
    pub threshold: f64,
    pub recheck: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub env: EnvKind,
    pub env_params: String,
    pub agent: AgentKind,
    pub spec: UtilitySpec,
    pub plan: PlanConfig,
    pub maturity: Maturity,
    pub probe: ProbeSchedule,
    pub gated_choice: bool,
    pub fraction_den: u32,
    /// Steps after maturity.
    pub steps: usize,
    pub seed: u64,
    /// After maturity, act with the always-delude policy instead of planning.
    pub forced_delusion: bool,
    pub on_contradiction: OnContradiction,
    pub top_k: usize,
    pub trials: usize,
    pub sweep_seeds: usize,
    pub selfmod_gamma: f64,
    pub selfmod_depth: usize,
    pub expect_realized: Option<f64>,
    pub expect_tolerance: f64,
    pub expect_delusion_min: Option<f64>,
    pub expect_delusion_max: Option<f64>,
    pub expect_recovery: Option<f64>,
    /// Directory for step records, summary and learned model.
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

/// Parsed `key = value` lines; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: Vec<(String, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            entries.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(RawConfig { entries })
    }

    /// Later settings win.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_owned(), value.into()));
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

const KEYS: &[&str] = &[
    "experiment",
    "env",
    "env_params",
    "alpha",
    "agent",
    "spec",
    "horizon",
    "discount",
    "training_floor",
    "training_ceiling",
    "maturity_window",
    "maturity_threshold",
    "maturity_recheck",
    "probe_every",
    "probe_max_len",
    "gated_choice",
    "fraction_den",
    "steps",
    "seed",
    "forced_delusion",
    "on_contradiction",
    "top_k",
    "trials",
    "sweep_seeds",
    "selfmod_gamma",
    "selfmod_depth",
    "expect_realized",
    "expect_tolerance",
    "expect_delusion_min",
    "expect_delusion_max",
    "expect_recovery",
    "out",
    "format",
];

fn parse_value<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<T>, CliError> {
    raw.get(key)
        .map(|v| v.parse::<T>().map_err(|_| CliError::Config(format!("bad value `{v}` for `{key}`"))))
        .transpose()
}

impl ExperimentConfig {
    /// Builds a configuration, filling defaults that depend on the
    /// environment and agent. `seed` is mandatory.
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        if let Some((k, _)) = raw.entries.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        let env = EnvKind::parse(raw.get("env").unwrap_or("q67")).map_err(|e| CliError::Config(e.to_string()))?;
        let mut env_params = raw.get("env_params").unwrap_or("").to_owned();
        if let Some(a) = raw.get("alpha") {
            if !env_params.is_empty() {
                env_params.push(',');
            }
            let key = if env == EnvKind::Period4 { "flip" } else { "alpha" };
            env_params.push_str(&format!("{key}={a}"));
        }
        env.build(&env_params).map_err(|e| CliError::Config(e.to_string()))?;
        let agent: AgentKind = parse_value(raw, "agent")?.unwrap_or(AgentKind::ModelBased);
        let spec = match raw.get("spec") {
            Some(s) => s.parse::<UtilitySpec>().map_err(|e| CliError::Config(e.to_string()))?,
            None => agent.default_spec(env),
        };
        if !agent.accepts(&spec) {
            return Err(CliError::Config(format!("agent `{agent}` cannot use utility `{spec}`")));
        }
        let default_discount = match agent {
            AgentKind::Rl => DiscountFn::Window(5),
            _ => DiscountFn::Geometric(0.9),
        };
        let discount = match raw.get("discount") {
            Some(d) => d.parse::<DiscountFn>().map_err(|e| CliError::Config(e.to_string()))?,
            None => default_discount,
        };
        let plan = PlanConfig { horizon: parse_value(raw, "horizon")?.unwrap_or(4), discount };
        plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
        // period4's coin makes about one step in ten unpredictable, so a
        // correct model never reaches 0.95 there.
        let default_threshold = if env == EnvKind::Period4 { 0.85 } else { 0.95 };
        let maturity = Maturity {
            floor: parse_value(raw, "training_floor")?.unwrap_or(2000),
            ceiling: parse_value(raw, "training_ceiling")?.unwrap_or(4000),
            window: parse_value(raw, "maturity_window")?.unwrap_or(500),
            threshold: parse_value(raw, "maturity_threshold")?.unwrap_or(default_threshold),
            recheck: parse_value(raw, "maturity_recheck")?.unwrap_or(500),
        };
        if maturity.ceiling < maturity.floor || maturity.recheck == 0 || maturity.window == 0 {
            return Err(CliError::Config("need training_floor <= training_ceiling and positive window and recheck".into()));
        }
        if !(0.0..=1.0).contains(&maturity.threshold) {
            return Err(CliError::Config("maturity_threshold must lie in [0, 1]".into()));
        }
        let defaults = ProbeSchedule::default();
        let probe = ProbeSchedule {
            switch: defaults.switch,
            every: parse_value(raw, "probe_every")?.unwrap_or(defaults.every),
            max_len: parse_value(raw, "probe_max_len")?.unwrap_or(defaults.max_len),
        };
        let seed = parse_value(raw, "seed")?.ok_or_else(|| CliError::Config("`seed` is required".into()))?;
        let on_contradiction = match raw.get("on_contradiction").unwrap_or("fail") {
            "fail" => OnContradiction::Fail,
            "relearn" => OnContradiction::Relearn,
            other => return Err(CliError::Config(format!("bad value `{other}` for `on_contradiction`"))),
        };
        let selfmod_gamma: f64 = parse_value(raw, "selfmod_gamma")?.unwrap_or(0.9);
        if !(selfmod_gamma > 0.0 && selfmod_gamma < 1.0) {
            return Err(CliError::Config("selfmod_gamma must lie in (0, 1)".into()));
        }
        Ok(ExperimentConfig {
            experiment: raw.get("experiment").unwrap_or("run").to_owned(),
            env,
            env_params,
            agent,
            spec,
            plan,
            maturity,
            probe,
            gated_choice: parse_value(raw, "gated_choice")?.unwrap_or(env == EnvKind::Period4),
            fraction_den: parse_value(raw, "fraction_den")?.unwrap_or(100),
            steps: parse_value(raw, "steps")?.unwrap_or(10_000),
            seed,
            forced_delusion: parse_value(raw, "forced_delusion")?.unwrap_or(false),
            on_contradiction,
            top_k: parse_value(raw, "top_k")?.unwrap_or(5),
            trials: parse_value(raw, "trials")?.unwrap_or(100),
            sweep_seeds: parse_value(raw, "sweep_seeds")?.unwrap_or(10),
            selfmod_gamma,
            selfmod_depth: parse_value(raw, "selfmod_depth")?.unwrap_or(4),
            expect_realized: parse_value(raw, "expect_realized")?,
            expect_tolerance: parse_value(raw, "expect_tolerance")?.unwrap_or(0.02),
            expect_delusion_min: parse_value(raw, "expect_delusion_min")?,
            expect_delusion_max: parse_value(raw, "expect_delusion_max")?,
            expect_recovery: parse_value(raw, "expect_recovery")?,
            out: raw.get("out").map(PathBuf::from),
            format: parse_value(raw, "format")?.unwrap_or(OutputFormat::Csv),
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn env_program(&self) -> Result<crate::dbn::DbnProgram, CliError> {
        self.env.build(&self.env_params).map_err(|e| CliError::Config(e.to_string()))
    }
}
