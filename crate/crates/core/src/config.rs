//! TOML configuration: domain, preference model, learner and experiment settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afs::LearnerSettings;
use crate::envs::{Domain, DomainKind, DomainSpec};
use crate::experiments::Method;
use crate::feedback::{FormatPreference, PreferenceModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSection {
    #[serde(default)]
    pub formats: Option<Vec<FormatPreference>>,
}

fn default_trials() -> usize {
    100
}

fn default_budgets() -> Vec<f64> {
    vec![10.0, 20.0, 40.0, 80.0]
}

fn default_methods() -> Vec<String> {
    ["naive", "oracle", "afs"].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Rollout step limit; defaults to four times the state count.
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: DomainSpec,
    #[serde(default)]
    pub preferences: PreferenceSection,
    #[serde(default)]
    pub learning: LearnerSettings,
    #[serde(default)]
    pub experiment: ExperimentSettings,
}

const PRESET_NAVIGATION: &str = include_str!("../configs/navigation.toml");
const PRESET_VASE: &str = include_str!("../configs/vase.toml");
const PRESET_PUSH: &str = include_str!("../configs/push.toml");
const PRESET_FREEWAY: &str = include_str!("../configs/freeway.toml");

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The shipped default instance for `kind`.
    pub fn preset(kind: DomainKind) -> Self {
        let text = match kind {
            DomainKind::Navigation => PRESET_NAVIGATION,
            DomainKind::Vase => PRESET_VASE,
            DomainKind::Push => PRESET_PUSH,
            DomainKind::Freeway => PRESET_FREEWAY,
        };
        Self::from_toml_str(text).expect("shipped configs are valid")
    }

    pub fn preset_text(kind: DomainKind) -> &'static str {
        match kind {
            DomainKind::Navigation => PRESET_NAVIGATION,
            DomainKind::Vase => PRESET_VASE,
            DomainKind::Push => PRESET_PUSH,
            DomainKind::Freeway => PRESET_FREEWAY,
        }
    }

    pub fn preference_model(&self) -> Result<PreferenceModel> {
        match &self.preferences.formats {
            Some(formats) => PreferenceModel::new(formats.clone()),
            None => Ok(PreferenceModel::defaults()),
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.experiment.methods.iter().map(|m| m.parse()).collect()
    }

    /// Checks every section without building the domain.
    pub fn validate(&self) -> Result<()> {
        self.preference_model()?;
        self.learning.validate()?;
        let e = &self.experiment;
        if e.trials == 0 {
            return Err(Error::config("experiment.trials", "must be >= 1"));
        }
        if e.budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::config("experiment.budgets", "budgets must be finite and >= 0"));
        }
        if e.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("experiment.budgets", "budgets must be strictly increasing"));
        }
        if e.horizon == Some(0) {
            return Err(Error::config("experiment.horizon", "must be >= 1"));
        }
        self.methods()?;
        Ok(())
    }

    pub fn build_domain(&self) -> Result<Domain> {
        Domain::build(&self.domain)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }
}
