//! Declarative pipeline configuration: one TOML document, overridable key
//! by key through `CPREF_*` environment variables, hashed into a digest
//! that every produced artifact embeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::{BeliefFunctionSpec, DeviationMode};
use crate::error::{Error, Result};
use crate::ingest::{IngestConfig, SourceFormat};
use crate::miner::MinerConfig;
use crate::pra::{MindisPolicy, PraConfig};
use crate::store::Split;

pub const ENV_PREFIX: &str = "CPREF";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub input: InputSection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default = "MinerSection::consensus_default")]
    pub consensus: MinerSection,
    #[serde(default = "MinerSection::per_user_default")]
    pub user_miner: MinerSection,
    #[serde(default)]
    pub pra: PraSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    /// Ratings file; requires `items` too.
    pub ratings: Option<PathBuf>,
    pub items: Option<PathBuf>,
    /// `movielens` (default) or `csv`.
    pub format: Option<String>,
    /// A prebuilt preference store; skips the ingest and prefs stages.
    pub prefs: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub high: f64,
    pub gap: f64,
    pub max_pairs: Option<usize>,
    pub split: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            high: 4.0,
            gap: 0.5,
            max_pairs: None,
            split: 0.8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerSection {
    pub min_supp: f64,
    pub min_conf: f64,
    pub max_ctx: usize,
    pub max_side: usize,
    /// Which pairs consensus mining sees: `train` (default) or `all`.
    /// Ignored for the per-user miner, which always mines train pairs.
    pub on: Option<String>,
}

impl MinerSection {
    fn consensus_default() -> Self {
        let cfg = MinerConfig::consensus();
        MinerSection {
            min_supp: cfg.min_support,
            min_conf: cfg.min_confidence,
            max_ctx: cfg.max_context_len,
            max_side: cfg.max_side_len,
            on: None,
        }
    }

    fn per_user_default() -> Self {
        let cfg = MinerConfig::per_user();
        MinerSection {
            min_supp: cfg.min_support,
            min_conf: cfg.min_confidence,
            max_ctx: cfg.max_context_len,
            max_side: cfg.max_side_len,
            on: None,
        }
    }

    pub fn to_miner_config(&self) -> MinerConfig {
        MinerConfig {
            min_support: self.min_supp,
            min_confidence: self.min_conf,
            max_context_len: self.max_ctx,
            max_side_len: self.max_side,
        }
    }

    pub fn consensus_split(&self) -> Result<Option<Split>> {
        parse_consensus_on(self.on.as_deref().unwrap_or("train"))
    }
}

pub fn parse_consensus_on(value: &str) -> Result<Option<Split>> {
    match value {
        "train" => Ok(Some(Split::Train)),
        "all" => Ok(None),
        other => Err(Error::InvalidConfig(format!(
            "consensus-on must be `train` or `all`, got `{other}`"
        ))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PraSection {
    /// `"auto"` or an explicit threshold.
    pub mindis: MindisSetting,
}

impl Default for PraSection {
    fn default() -> Self {
        PraSection {
            mindis: MindisSetting::Text("auto".into()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MindisSetting {
    Number(f64),
    Text(String),
}

impl MindisSetting {
    pub fn parse(text: &str) -> Result<Self> {
        if text == "auto" {
            return Ok(MindisSetting::Text("auto".into()));
        }
        text.parse::<f64>()
            .map(MindisSetting::Number)
            .map_err(|_| Error::InvalidConfig(format!("mindis must be `auto` or a number, got `{text}`")))
    }

    pub fn to_policy(&self) -> Result<MindisPolicy> {
        match self {
            MindisSetting::Number(v) if v.is_finite() && *v >= 0.0 => Ok(MindisPolicy::Explicit(*v)),
            MindisSetting::Number(v) => Err(Error::InvalidConfig(format!(
                "mindis must be non-negative and finite, got {v}"
            ))),
            MindisSetting::Text(t) if t == "auto" => Ok(MindisPolicy::Auto),
            MindisSetting::Text(t) => Err(Error::InvalidConfig(format!(
                "mindis must be `auto` or a number, got `{t}`"
            ))),
        }
    }

    pub fn to_pra_config(&self) -> Result<PraConfig> {
        Ok(PraConfig {
            mindis: self.to_policy()?,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    /// Belief functions to score with; both by default.
    pub functions: Vec<String>,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub ek1: f64,
    pub ek2: f64,
    pub ek3: f64,
    #[serde(default)]
    pub deviation: DeviationMode,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            functions: vec!["cos".into(), "cov".into()],
            k1: 1.2,
            k2: 1.5,
            k3: 0.6,
            ek1: 1.5,
            ek2: 1.5,
            ek3: 0.0,
            deviation: DeviationMode::MeanMinusOne,
        }
    }
}

impl ScoreSection {
    pub fn function_spec(&self, name: &str) -> BeliefFunctionSpec {
        let mut parameters = BTreeMap::new();
        if matches!(name, "cos" | "cosine") {
            parameters.insert("k1".into(), self.k1);
            parameters.insert("k2".into(), self.k2);
            parameters.insert("k3".into(), self.k3);
            parameters.insert("ek1".into(), self.ek1);
            parameters.insert("ek2".into(), self.ek2);
            parameters.insert("ek3".into(), self.ek3);
        }
        BeliefFunctionSpec {
            name: name.to_string(),
            parameters,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    #[serde(default)]
    pub standard_f1: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ks: (1..=10).map(|i| i * 5).collect(),
            standard_f1: false,
        }
    }
}

impl RunConfig {
    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            high_rating_threshold: self.ingest.high,
            min_gap: self.ingest.gap,
            max_pairs_per_user: self.ingest.max_pairs,
            split_ratio: self.ingest.split,
            seed: self.seed,
        }
    }

    pub fn source_format(&self) -> Result<SourceFormat> {
        match self.input.format.as_deref().unwrap_or("movielens") {
            "movielens" => Ok(SourceFormat::MovieLens),
            "csv" => Ok(SourceFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "input.format must be `movielens` or `csv`, got `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest_config().validate()?;
        self.consensus.to_miner_config().validate()?;
        self.user_miner.to_miner_config().validate()?;
        self.consensus.consensus_split()?;
        self.pra.mindis.to_policy()?;
        self.source_format()?;
        if self.input.prefs.is_none() && (self.input.ratings.is_none() || self.input.items.is_none())
        {
            return Err(Error::InvalidConfig(
                "input needs either `prefs` or both `ratings` and `items`".into(),
            ));
        }
        if self.score.functions.is_empty() {
            return Err(Error::InvalidConfig("score.functions may not be empty".into()));
        }
        for name in &self.score.functions {
            crate::belief::build_belief_function(&self.score.function_spec(name))?;
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::InvalidConfig("eval.ks must be positive".into()));
        }
        if self.consensus.min_supp < self.user_miner.min_supp {
            eprintln!(
                "warning: consensus min_supp {} is below the per-user min_supp {}",
                self.consensus.min_supp, self.user_miner.min_supp
            );
        }
        Ok(())
    }

    /// Parses a TOML file and applies `CPREF_*` environment overrides.
    /// Missing keys take their defaults, so partial sections are fine.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingArtifact {
            stage: "pipeline".into(),
            path: format!("{} ({e})", path.display()),
        })?;
        let user: toml::Value = text
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        RunConfig::from_value(user, ENV_PREFIX)
    }

    /// Resolves a parsed document: defaults, then the document, then
    /// `PREFIX_*` environment overrides.
    pub fn from_value(user: toml::Value, env_prefix: &str) -> Result<Self> {
        let mut value = defaults_value();
        deep_merge(&mut value, user);
        apply_env_overrides(&mut value, env_prefix);
        let config: RunConfig = value
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the resolved configuration serialization.
    pub fn digest(&self) -> [u8; 32] {
        let echo = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(echo.as_bytes());
        hasher.finalize().into()
    }
}

/// The default tree every config file is merged over. `seed` and `input`
/// stay required.
fn defaults_value() -> toml::Value {
    let skeleton = RunConfig {
        seed: 0,
        input: InputSection::default(),
        ingest: IngestSection::default(),
        consensus: MinerSection::consensus_default(),
        user_miner: MinerSection::per_user_default(),
        pra: PraSection::default(),
        score: ScoreSection::default(),
        eval: EvalSection::default(),
    };
    let mut value = toml::Value::try_from(&skeleton).expect("defaults serialize");
    if let toml::Value::Table(table) = &mut value {
        table.remove("seed");
        table.remove("input");
    }
    value
}

fn deep_merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base_table), toml::Value::Table(overlay_table)) => {
            for (key, inner) in overlay_table {
                match base_table.get_mut(&key) {
                    Some(slot) => deep_merge(slot, inner),
                    None => {
                        base_table.insert(key, inner);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Every configuration key, as `section.key` paths. The environment
/// override for a path is `PREFIX_SECTION_KEY` in upper case, e.g.
/// `CPREF_CONSENSUS_MIN_SUPP=0.02` or `CPREF_PRA_MINDIS=auto`.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "input.ratings",
    "input.items",
    "input.format",
    "input.prefs",
    "ingest.high",
    "ingest.gap",
    "ingest.max_pairs",
    "ingest.split",
    "consensus.min_supp",
    "consensus.min_conf",
    "consensus.max_ctx",
    "consensus.max_side",
    "consensus.on",
    "user_miner.min_supp",
    "user_miner.min_conf",
    "user_miner.max_ctx",
    "user_miner.max_side",
    "pra.mindis",
    "score.functions",
    "score.k1",
    "score.k2",
    "score.k3",
    "score.ek1",
    "score.ek2",
    "score.ek3",
    "score.deviation",
    "eval.ks",
    "eval.standard_f1",
];

/// Applies `PREFIX_*` environment overrides for every known configuration
/// key, creating missing sections on the way.
pub fn apply_env_overrides(value: &mut toml::Value, prefix: &str) {
    for path in CONFIG_KEYS {
        let env_key = format!("{prefix}_{}", path.replace('.', "_").to_uppercase());
        let Ok(text) = std::env::var(&env_key) else {
            continue;
        };
        let parsed = parse_env_value(&text);
        let segments: Vec<&str> = path.split('.').collect();
        let (last, parents) = segments.split_last().expect("non-empty path");
        let mut node = &mut *value;
        let mut reachable = true;
        for segment in parents {
            let toml::Value::Table(table) = node else {
                reachable = false;
                break;
            };
            node = table
                .entry(segment.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        if reachable {
            if let toml::Value::Table(table) = node {
                table.insert(last.to_string(), parsed);
            }
        }
    }
}

fn parse_env_value(text: &str) -> toml::Value {
    if let Ok(v) = text.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = text.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = text.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    if text.starts_with('[') {
        if let Ok(v) = format!("x = {text}").parse::<toml::Value>() {
            if let Some(inner) = v.get("x") {
                return inner.clone();
            }
        }
    }
    toml::Value::String(text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 42
[input]
ratings = "ratings.dat"
items = "movies.dat"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let value: toml::Value = MINIMAL.parse().unwrap();
        let config: RunConfig = value.try_into().unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.consensus.min_supp, 0.01);
        assert_eq!(config.user_miner.min_supp, 0.005);
        assert!(matches!(config.pra.mindis.to_policy().unwrap(), MindisPolicy::Auto));
        assert_eq!(config.score.functions, ["cos", "cov"]);
        assert_eq!(config.eval.ks, [5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let value: toml::Value = MINIMAL.parse().unwrap();
        let config: RunConfig = value.try_into().unwrap();
        let mut other = config.clone();
        assert_eq!(config.digest(), other.digest());
        other.seed = 43;
        assert_ne!(config.digest(), other.digest());
    }

    #[test]
    fn env_overrides_reach_nested_keys() {
        let value: toml::Value = MINIMAL.parse().unwrap();
        // A unique prefix avoids cross-test interference.
        std::env::set_var("CPREFTEST_SEED", "7");
        std::env::set_var("CPREFTEST_CONSENSUS_MIN_SUPP", "0.03");
        std::env::set_var("CPREFTEST_PRA_MINDIS", "auto");
        let config = RunConfig::from_value(value, "CPREFTEST").unwrap();
        std::env::remove_var("CPREFTEST_SEED");
        std::env::remove_var("CPREFTEST_CONSENSUS_MIN_SUPP");
        std::env::remove_var("CPREFTEST_PRA_MINDIS");
        assert_eq!(config.seed, 7);
        assert_eq!(config.consensus.min_supp, 0.03);
        // Untouched keys keep their file/default values.
        assert_eq!(config.user_miner.min_supp, 0.005);
    }

    #[test]
    fn partial_sections_take_defaults() {
        let value: toml::Value = format!("{MINIMAL}\n[consensus]\nmin_supp = 0.2\n")
            .parse()
            .unwrap();
        let config = RunConfig::from_value(value, "CPREFTEST_UNSET").unwrap();
        assert_eq!(config.consensus.min_supp, 0.2);
        assert_eq!(config.consensus.min_conf, 0.7);
    }

    #[test]
    fn mindis_setting_parses_both_shapes() {
        assert!(matches!(
            MindisSetting::parse("auto").unwrap().to_policy().unwrap(),
            MindisPolicy::Auto
        ));
        assert!(matches!(
            MindisSetting::parse("0.25").unwrap().to_policy().unwrap(),
            MindisPolicy::Explicit(v) if v == 0.25
        ));
        assert!(MindisSetting::parse("sideways").is_err());
    }

    #[test]
    fn input_requires_some_source() {
        let value: toml::Value = "seed = 1\n[input]\n".parse().unwrap();
        let config: RunConfig = value.try_into().unwrap();
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
    }
}
