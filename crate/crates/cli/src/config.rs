//! Run configuration: TOML file first, then command-line flags on top.

use std::path::{Path, PathBuf};

use anyhow::Context;
use reasongraph::calibration::DEFAULT_BINS;
use reasongraph::estimators::{Estimator, EstimatorParams};
use reasongraph::gateway::GatewayConfig;
use reasongraph::pipeline::MatchStrategy;
use serde::{Deserialize, Serialize};

/// Everything that determines a run. Serialized into every artifact.
///
/// ```toml
/// dataset = "data/math.jsonl"
/// out_dir = "runs/math"
/// estimators = ["selfcons", "cenconf", "pathweight"]
/// match_strategy = "normalized"   # exact | normalized | judge
/// samples_per_question = 10
/// bins = 10
///
/// [params]
/// alpha = 0.1
/// seed = 7
///
/// [gateway]
/// mode = "fixture"
/// fixture_dir = "fixtures"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Questions for `sample`.
    pub questions: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub estimators: Vec<Estimator>,
    pub params: EstimatorParams,
    pub match_strategy: MatchStrategy,
    /// Persistent verdict cache for the judge strategy.
    pub judge_cache: Option<PathBuf>,
    pub samples_per_question: usize,
    pub bins: usize,
    pub gateway: GatewayConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            questions: None,
            out_dir: None,
            estimators: Estimator::CORE.to_vec(),
            params: EstimatorParams::default(),
            match_strategy: MatchStrategy::default(),
            judge_cache: None,
            samples_per_question: 10,
            bins: DEFAULT_BINS,
            gateway: GatewayConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn dataset(&self) -> anyhow::Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| crate::UsageError::new("no dataset given (--dataset or `dataset` in the config)").into())
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| crate::UsageError::new("no output directory given (--out or `out_dir` in the config)").into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorList(pub Vec<Estimator>);

/// Parses `selfcons,pathweight` or `all`.
pub fn parse_estimators(list: &str) -> Result<EstimatorList, String> {
    if list.trim() == "all" {
        return Ok(EstimatorList(Estimator::CORE.to_vec()));
    }
    list.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map(EstimatorList)
}
