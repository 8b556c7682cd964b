//! Release configuration documents.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tripdp_core::pipeline::ReleasePlan;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk release configuration. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseConfig {
    pub schema_version: u32,
    pub input: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postcode_lookup: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub ledger: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub secure: bool,
    #[serde(default)]
    pub expand_rows: bool,
    pub plan: ReleasePlan,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ReleaseConfig,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: ReleaseConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn input(&self) -> PathBuf {
        self.resolve(&self.config.input)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn ledger(&self) -> PathBuf {
        self.resolve(&self.config.ledger)
    }

    pub fn postcode_lookup(&self) -> Option<PathBuf> {
        self.config
            .postcode_lookup
            .as_deref()
            .map(|p| self.resolve(p))
    }

    /// Everything wrong with the document, empty if it is usable.
    pub fn problems(&self) -> Vec<String> {
        let c = &self.config;
        let mut out = Vec::new();
        if c.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                c.schema_version
            ));
        }
        if c.seed.is_some() && c.secure {
            out.push("`seed` and `secure` are mutually exclusive".into());
        }
        if c.plan.needs_lookup() && c.postcode_lookup.is_none() {
            out.push(
                "the plan maps bus stops to postcodes but no `postcode_lookup` is given".into(),
            );
        }
        out.extend(c.plan.problems());
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.problems().as_slice() {
            [] => Ok(()),
            ps => Err(CliError::config(ps.join("\n"))),
        }
    }
}
