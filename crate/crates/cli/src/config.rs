use std::fs;
use std::path::{Path, PathBuf};

use basisfm::eval::{PipelineConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub workspace: PathBuf,
    pub meshes: Vec<PathBuf>,
    pub variant: Variant,
    pub pipeline: PipelineConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            workspace: PathBuf::from("basisfm-work"),
            meshes: Vec::new(),
            variant: Variant::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ProjectConfig {
    /// Reads TOML, falling back to JSON when the file is not valid TOML (or ends in `.json`).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut config: ProjectConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            match toml::from_str(&text) {
                Ok(c) => c,
                Err(toml_err) => serde_json::from_str(&text)
                    .map_err(|_| CliError::Config(format!("{}: {toml_err}", path.display())))?,
            }
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.workspace = resolve(base, &config.workspace);
        config.meshes = config.meshes.iter().map(|m| resolve(base, m)).collect();
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for m in &self.meshes {
            if !m.is_file() {
                return Err(CliError::Config(format!("mesh {} does not exist", m.display())));
            }
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.workspace.join("cache")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.workspace.join("train")
    }

    pub fn match_dir(&self) -> PathBuf {
        self.workspace.join("matches")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.workspace.join("reports")
    }

    pub fn plot_dir(&self) -> PathBuf {
        self.workspace.join("plots")
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
