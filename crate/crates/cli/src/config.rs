//! JSON experiment configuration.
//!
//! One flat document per run. Fields that the chosen command does not read are
//! rejected, as are unknown keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use seqauction::competition::CcQuery;
use seqauction::dist_core::{ContinuousDist, Distribution};
use seqauction::dynamic_lp::DynamicInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandId {
    DistStats,
    OptSolve,
    Duality,
    Cc,
    MhrVerify,
    ReproducePaper,
}

impl CommandId {
    pub fn name(self) -> &'static str {
        match self {
            Self::DistStats => "dist-stats",
            Self::OptSolve => "opt-solve",
            Self::Duality => "duality",
            Self::Cc => "cc",
            Self::MhrVerify => "mhr-verify",
            Self::ReproducePaper => "reproduce-paper",
        }
    }

    /// Command-specific fields this command reads.
    fn fields(self) -> &'static [&'static str] {
        match self {
            Self::DistStats => &["distribution", "ranks", "sizes"],
            Self::OptSolve => &["instance", "solution_out"],
            Self::Duality => &["instance", "flows"],
            Self::Cc => &["queries"],
            Self::MhrVerify => &["distributions", "sizes", "plh_batch"],
            Self::ReproducePaper => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowChoice {
    General,
    ExpectationMyerson,
    MyersonExpectation,
    CorrelatedDominance,
}

impl FlowChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::General => "general",
            Self::ExpectationMyerson => "expectation-myerson",
            Self::MyersonExpectation => "myerson-expectation",
            Self::CorrelatedDominance => "correlated-dominance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedDist {
    pub id: String,
    pub dist: ContinuousDist,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<CommandId>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub cap: Option<usize>,
    pub out: Option<PathBuf>,

    pub distribution: Option<Distribution>,
    pub ranks: Option<Vec<usize>>,
    pub sizes: Option<Vec<usize>>,
    pub instance: Option<DynamicInstance>,
    pub solution_out: Option<PathBuf>,
    pub flows: Option<Vec<FlowChoice>>,
    pub queries: Option<Vec<CcQuery>>,
    pub distributions: Option<Vec<NamedDist>>,
    pub plh_batch: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut mark = |name, set: bool| {
            if set {
                out.push(name);
            }
        };
        mark("distribution", self.distribution.is_some());
        mark("ranks", self.ranks.is_some());
        mark("sizes", self.sizes.is_some());
        mark("instance", self.instance.is_some());
        mark("solution_out", self.solution_out.is_some());
        mark("flows", self.flows.is_some());
        mark("queries", self.queries.is_some());
        mark("distributions", self.distributions.is_some());
        mark("plh_batch", self.plh_batch.is_some());
        out
    }

    /// Checks the config against the command chosen on the command line.
    pub fn validate_for(&self, cmd: CommandId) -> Result<()> {
        if let Some(declared) = self.command {
            if declared != cmd {
                bail!("config is for `{}` but `{}` was requested", declared.name(), cmd.name());
            }
        }
        if let Some(field) = self.present().into_iter().find(|f| !cmd.fields().contains(f)) {
            bail!("field `{field}` is not used by `{}`", cmd.name());
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol.is_finite()) {
                bail!("field `tol` must be positive, got {tol}");
            }
        }
        for (name, list) in [("ranks", &self.ranks), ("sizes", &self.sizes)] {
            if list.as_ref().is_some_and(|v| v.is_empty() || v.contains(&0)) {
                bail!("field `{name}` must be a non-empty list of positive integers");
            }
        }
        if self.queries.as_ref().is_some_and(Vec::is_empty) {
            bail!("field `queries` must not be empty");
        }
        if self.flows.as_ref().is_some_and(Vec::is_empty) {
            bail!("field `flows` must not be empty");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse(r#"{"command": "cc", "sedd": 3}"#).unwrap_err();
        assert!(format!("{err:#}").contains("sedd"));
    }

    #[test]
    fn fields_must_belong_to_the_command() {
        let cfg = ExperimentConfig::parse(r#"{"ranks": [1]}"#).unwrap();
        assert!(cfg.validate_for(CommandId::DistStats).is_ok());
        assert!(cfg.validate_for(CommandId::Cc).is_err());
        let cfg = ExperimentConfig::parse(r#"{"command": "duality"}"#).unwrap();
        assert!(cfg.validate_for(CommandId::OptSolve).is_err());
    }

    #[test]
    fn errors_carry_a_position() {
        let err = ExperimentConfig::parse("{\n  \"command\": \"cc\",\n  \"tol\": \"x\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
