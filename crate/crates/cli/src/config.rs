use perturbench_core::harness::SyntheticEnvModel;
use perturbench_core::perturbation::Dimension;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// A config problem, located by its key path.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: &str, message: impl Into<String>) -> Self {
        Self {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub generate: Option<GenerateConfig>,
    pub evaluate: Option<EvaluateConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub scenes: Vec<PathBuf>,
    pub distractors: Option<PathBuf>,
    pub textures: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Rewriting service used instead of the lexicon; responses are cached
    /// under `$PERTURBENCH_CACHE` when set.
    pub rewriter_url: Option<String>,
    #[serde(default = "all_dimensions")]
    pub dimensions: Vec<Dimension>,
    pub per_cell: usize,
    pub workspace: Workspace,
}

fn all_dimensions() -> Vec<Dimension> {
    Dimension::ALL.to_vec()
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_ceiling")]
    pub ceiling_rule: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            ceiling_rule: default_ceiling(),
        }
    }
}

fn default_ceiling() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub model: String,
    #[serde(default = "one")]
    pub trials_per_task: u32,
    #[serde(default = "one_usize")]
    pub parallelism: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default)]
    pub record_trajectories: bool,
    /// Views replaced by black frames before the policy sees them.
    #[serde(default)]
    pub black_views: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// When set, runs every base scene under each single dimension and each
    /// pair of these dimensions instead of the manifest.
    pub pairs: Option<Vec<Dimension>>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
}

fn one() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

fn default_max_steps() -> u32 {
    perturbench_core::harness::DEFAULT_MAX_STEPS
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Synthetic {
        model: SyntheticEnvModel,
    },
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
    Tcp {
        address: String,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    #[default]
    Zero,
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
    Tcp {
        address: String,
    },
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at("<file>", e.to_string()))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::at(&path, e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Some(g) = &self.generate {
            if g.per_cell == 0 {
                return Err(ConfigError::at("generate.per_cell", "must be at least 1"));
            }
            if g.scenes.is_empty() {
                return Err(ConfigError::at("generate.scenes", "at least one scene is required"));
            }
            let needs = |d: Dimension| g.dimensions.contains(&d);
            if needs(Dimension::Layout) && g.distractors.is_none() {
                return Err(ConfigError::at(
                    "generate.distractors",
                    "required for the layout dimension",
                ));
            }
            if needs(Dimension::Background) && g.textures.is_none() {
                return Err(ConfigError::at(
                    "generate.textures",
                    "required for the background dimension",
                ));
            }
            for k in 0..3 {
                if !(g.workspace.min[k] < g.workspace.max[k]) {
                    return Err(ConfigError::at(
                        "generate.workspace",
                        "min must be below max on every axis",
                    ));
                }
            }
        }
        if let Some(e) = &self.evaluate {
            if e.trials_per_task == 0 {
                return Err(ConfigError::at("evaluate.trials_per_task", "must be at least 1"));
            }
            if !(e.timeout_secs > 0.0 && e.timeout_secs.is_finite()) {
                return Err(ConfigError::at("evaluate.timeout_secs", "must be a positive number"));
            }
            if let EnvironmentConfig::Synthetic { model } = &e.environment {
                model
                    .validate()
                    .map_err(|err| ConfigError::at("evaluate.environment.model", err.to_string()))?;
            }
            if let Some(p) = &e.pairs {
                if p.len() < 2 {
                    return Err(ConfigError::at("evaluate.pairs", "needs at least two dimensions"));
                }
            }
        }
        if !(self.filter.ceiling_rule > 0.0 && self.filter.ceiling_rule <= 1.0) {
            return Err(ConfigError::at("filter.ceiling_rule", "must lie in (0, 1]"));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(g) = &mut self.generate {
            g.scenes.iter_mut().for_each(fix);
            g.distractors.as_mut().map(fix);
            g.textures.as_mut().map(fix);
            g.lexicon.as_mut().map(fix);
        }
    }

    pub fn generate(&self) -> Result<&GenerateConfig, ConfigError> {
        self.generate
            .as_ref()
            .ok_or_else(|| ConfigError::at("generate", "section missing"))
    }

    pub fn evaluate(&self) -> Result<&EvaluateConfig, ConfigError> {
        self.evaluate
            .as_ref()
            .ok_or_else(|| ConfigError::at("evaluate", "section missing"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_name_the_key_path() {
        let err = Config::parse("[generate]\nscenes = []\nper_cell = \"many\"\n").unwrap_err();
        assert_eq!(err.path, "generate.per_cell");
        let err = Config::parse("[evaluate]\nmodel = \"m\"\ntrials = 3\n").unwrap_err();
        assert_eq!(err.path, "evaluate.trials");
        let err = Config::parse("[filter]\nceiling_rule = 1.5\n").unwrap_err();
        assert_eq!(err.path, "filter.ceiling_rule");
    }

    #[test]
    fn synthetic_environment_parses() {
        let cfg = Config::parse(
            r#"
[evaluate]
model = "synthetic"
pairs = ["layout", "camera"]
[evaluate.environment]
kind = "synthetic"
[evaluate.environment.model]
form = "pairwise"
base = 0.9
effects = { layout = -0.2, camera = -0.3 }
interactions = { "layout,camera" = -0.1 }
"#,
        )
        .unwrap();
        let e = cfg.evaluate().unwrap();
        assert_eq!(e.trials_per_task, 1);
        assert!(matches!(e.policy, PolicyConfig::Zero));
        assert!(matches!(e.environment, EnvironmentConfig::Synthetic { .. }));
    }
}
