//! File-to-file stage implementations. The pipeline command is exactly the
//! composition of these functions, so a full run and a sequence of
//! single-stage runs produce identical artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::belief::{
    build_belief_function, rank_topk, score_ruleset, BeliefFunctionSpec, BeliefSystem,
    DeviationMode, RankKey, ScoreOptions, ScoredRule,
};
use crate::cli::artifacts::{self, Manifest};
use crate::cli::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::topk_experiment;
use crate::ingest::{self, IngestConfig, SourceFormat, UniversePolicy};
use crate::measures::MeasureCache;
use crate::miner::{self, MinerConfig};
use crate::model::{PreferenceDatabase, Rule, RuleSet};
use crate::pra::{self, PraConfig};
use crate::store::{PreferenceStore, Split};

pub const TRANSACTIONS_FILE: &str = "transactions.db";
pub const PREFS_FILE: &str = "prefs.db";
pub const CONSENSUS_RULES_FILE: &str = "consensus_rules.csv";
pub const AGGREGATED_RULES_FILE: &str = "aggregated_rules.csv";
pub const PRA_TRACE_FILE: &str = "pra_trace.json";
pub const USER_RULES_FILE: &str = "user_rules.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn scored_file(function: &str) -> String {
    format!("scored_{function}.csv")
}

pub fn eval_file(function: &str) -> String {
    format!("eval_{function}.csv")
}

/// An error annotated with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    fn wrap(stage: &'static str) -> impl Fn(Error) -> StageError {
        move |error| StageError { stage, error }
    }
}

fn require_input(stage: &str, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage: stage.to_string(),
            path: path.display().to_string(),
        });
    }
    Ok(())
}

/// Loads rating/item sources into a transactions-only store.
pub fn stage_ingest(
    ratings: &Path,
    items: &Path,
    format: SourceFormat,
    out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("ingest", ratings)?;
    require_input("ingest", items)?;
    let ratings_reader = std::io::BufReader::new(std::fs::File::open(ratings)?);
    let items_reader = std::io::BufReader::new(std::fs::File::open(items)?);
    let (universe, transactions) =
        ingest::load_transactions(ratings_reader, items_reader, format, UniversePolicy::FromItems)?;
    let mut table = crate::model::TransactionTable::new();
    for txn in transactions {
        table.insert(txn.id, txn);
    }
    PreferenceStore::transactions_only(universe, Arc::new(table), digest).save(out)
}

/// Builds per-user preference pairs with train/test splits.
pub fn stage_prefs(
    transactions: &Path,
    cfg: &IngestConfig,
    out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("prefs", transactions)?;
    let source = PreferenceStore::load(transactions)?;
    let universe = Arc::clone(source.universe());
    let txns: Vec<_> = source.transactions().values().cloned().collect();
    let sets = ingest::build_preferences(Arc::clone(&universe), txns, cfg)?;
    let mut splits = Vec::new();
    for set in sets {
        let (train, test) = ingest::split(&set, cfg)?;
        splits.push((set, train, test));
    }
    let store = if splits.is_empty() {
        PreferenceStore::transactions_only(universe, Arc::clone(source.transactions()), digest)
    } else {
        PreferenceStore::from_user_splits(&splits, digest)?
    };
    store.save(out)
}

/// Mines the consensus pool (default) or every user's train ruleset.
pub fn stage_mine(
    prefs: &Path,
    cfg: &MinerConfig,
    consensus_on: Option<Split>,
    per_user: bool,
    out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("mine", prefs)?;
    let store = PreferenceStore::load(prefs)?;
    let universe = Arc::clone(store.universe());
    let mut rows = Vec::new();
    if per_user {
        for user in store.users() {
            let db = store.user_db(user, Some(Split::Train))?;
            if db.is_empty() {
                continue;
            }
            for mined in miner::enumerate_rules_detailed(&db, cfg)? {
                rows.push((Some(user.to_string()), mined.rule, mined.record));
            }
        }
    } else {
        let db = store.merged(consensus_on)?;
        for mined in miner::enumerate_rules_detailed(&db, cfg)? {
            rows.push((None, mined.rule, mined.record));
        }
    }
    artifacts::write_rules_csv(out, &universe, &rows, &digest)
}

/// Aggregates a consensus ruleset, writing the kept rules and the trace.
pub fn stage_pra(
    prefs: &Path,
    rules: &Path,
    cfg: &PraConfig,
    consensus_on: Option<Split>,
    out: &Path,
    trace_out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("pra", prefs)?;
    require_input("pra", rules)?;
    let store = PreferenceStore::load(prefs)?;
    let universe = Arc::clone(store.universe());
    let db = store.merged(consensus_on)?;
    let rows = artifacts::read_rules_csv(rules, &universe)?;
    if rows.iter().any(|r| r.user.is_some()) {
        return Err(Error::InvalidConfig(
            "pra expects a consensus ruleset without a user column".into(),
        ));
    }
    let ruleset = RuleSet::new(rows.into_iter().map(|r| r.rule));
    let (kept, trace) = pra::pra_aggregate(&ruleset, &db, cfg)?;
    let cache = MeasureCache::new(&db);
    let out_rows: Vec<_> = kept
        .iter()
        .map(|rule| Ok((None, rule.clone(), cache.record(rule)?)))
        .collect::<Result<_>>()?;
    artifacts::write_rules_csv(out, &universe, &out_rows, &digest)?;
    artifacts::write_trace_json(trace_out, &universe, &trace, &digest)
}

pub struct RankParams {
    pub spec: BeliefFunctionSpec,
    pub deviation: DeviationMode,
    /// When set, sort by this key (and truncate to `top`); otherwise keep
    /// the input rule order, which downstream evaluation treats as the
    /// unsorted baseline.
    pub key: Option<RankKey>,
    pub top: Option<usize>,
    pub consensus_on: Option<Split>,
}

/// Scores a ruleset file against the aggregated system.
///
/// Belief and deviation are always computed over the consensus database;
/// support and confidence over the database each ruleset was mined from
/// (the user's train pairs for per-user rows, the consensus pairs
/// otherwise).
pub fn stage_rank(
    prefs: &Path,
    system_rules: &Path,
    rules: &Path,
    params: &RankParams,
    out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("rank", prefs)?;
    require_input("rank", system_rules)?;
    require_input("rank", rules)?;
    let store = PreferenceStore::load(prefs)?;
    let universe = Arc::clone(store.universe());
    let consensus_db = Arc::new(store.merged(params.consensus_on)?);

    let system_rows = artifacts::read_rules_csv(system_rules, &universe)?;
    let system_set = crate::measures::canonical_ruleset(
        system_rows.into_iter().map(|r| r.rule),
        &consensus_db,
    );
    let system = BeliefSystem::new(system_set, Arc::clone(&consensus_db))?;
    let function = build_belief_function(&params.spec)?;

    // Group rows by user, preserving file order inside each group.
    let rows = artifacts::read_rules_csv(rules, &universe)?;
    let mut groups: Vec<(Option<String>, Vec<Rule>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(user, _)| *user == row.user) {
            Some((_, rules)) => rules.push(row.rule),
            None => groups.push((row.user, vec![row.rule])),
        }
    }

    let options = ScoreOptions {
        deviation_mode: params.deviation,
    };
    let mut out_rows: Vec<(Option<String>, ScoredRule)> = Vec::new();
    for (user, rules) in groups {
        let measure_db: PreferenceDatabase = match &user {
            Some(u) => store.user_db(u, Some(Split::Train))?,
            None => store.merged(params.consensus_on)?,
        };
        if measure_db.is_empty() {
            continue;
        }
        let ruleset = RuleSet::new(rules);
        if ruleset.is_empty() {
            continue;
        }
        let mut scored = score_ruleset(&ruleset, &system, function.as_ref(), &measure_db, options)?;
        if let Some(key) = params.key {
            scored = rank_topk(&scored, params.top.unwrap_or(scored.len()), key);
        } else if let Some(top) = params.top {
            scored.truncate(top);
        }
        out_rows.extend(scored.into_iter().map(|s| (user.clone(), s)));
    }
    artifacts::write_scored_csv(out, &universe, &out_rows, &digest)
}

/// Runs the top-k comparison over per-user scored rules.
pub fn stage_eval(
    prefs: &Path,
    scored: &Path,
    ks: &[usize],
    standard_f1: bool,
    out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("eval", prefs)?;
    require_input("eval", scored)?;
    let store = PreferenceStore::load(prefs)?;
    let universe = Arc::clone(store.universe());
    let rows = artifacts::read_scored_csv(scored, &universe)?;

    let mut scored_per_user: BTreeMap<String, Vec<ScoredRule>> = BTreeMap::new();
    for (user, rule) in rows {
        let user = user.ok_or_else(|| {
            Error::InvalidConfig("eval expects per-user scored rules (user column)".into())
        })?;
        scored_per_user.entry(user).or_default().push(rule);
    }

    let known = store.users();
    let mut test = BTreeMap::new();
    let mut train = BTreeMap::new();
    for user in scored_per_user.keys() {
        if !known.contains(user.as_str()) {
            return Err(Error::MissingSplit(user.clone()));
        }
        test.insert(user.clone(), store.user_db(user, Some(Split::Test))?);
        train.insert(user.clone(), store.user_db(user, Some(Split::Train))?);
    }

    let mut rows = topk_experiment(&scored_per_user, ks, &test, Some(&train))?;
    if standard_f1 {
        let doubled: Vec<_> = rows
            .iter()
            .filter(|r| r.metric == "f1")
            .map(|r| crate::eval::TopkRow {
                key: r.key.clone(),
                k: r.k,
                metric: "f1_std".to_string(),
                value: r.value.map(|v| 2.0 * v),
                users: r.users,
            })
            .collect();
        rows.extend(doubled);
    }
    artifacts::write_eval_csv(out, &universe, &rows, &digest)
}

/// Dumps per-rule measure records for a ruleset file.
pub fn stage_measures(
    prefs: &Path,
    rules: &Path,
    consensus_on: Option<Split>,
    out: &Path,
    digest: [u8; 32],
) -> Result<()> {
    require_input("measures", prefs)?;
    require_input("measures", rules)?;
    let store = PreferenceStore::load(prefs)?;
    let universe = Arc::clone(store.universe());
    let db = store.merged(consensus_on)?;
    let cache = MeasureCache::new(&db);
    let rows = artifacts::read_rules_csv(rules, &universe)?
        .into_iter()
        .map(|row| Ok((row.rule.clone(), cache.record(&row.rule)?)))
        .collect::<Result<Vec<_>>>()?;
    artifacts::write_measures_csv(out, &universe, &rows, &digest)
}

/// Runs the full pipeline into `out_dir` by composing the single stages,
/// then writes the manifest.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> std::result::Result<(), StageError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| StageError::wrap("pipeline")(Error::Io(e)))?;
    let digest = config.digest();
    let mut manifest = Manifest::new(config.clone(), &digest);

    let prefs_path: PathBuf = match &config.input.prefs {
        Some(path) => {
            require_input("pipeline", path).map_err(StageError::wrap("pipeline"))?;
            manifest
                .record_input(path)
                .map_err(StageError::wrap("pipeline"))?;
            path.clone()
        }
        None => {
            let ratings = config.input.ratings.as_ref().expect("validated");
            let items = config.input.items.as_ref().expect("validated");
            let format = config.source_format().map_err(StageError::wrap("ingest"))?;
            let transactions_path = out_dir.join(TRANSACTIONS_FILE);
            stage_ingest(ratings, items, format, &transactions_path, digest)
                .map_err(StageError::wrap("ingest"))?;
            manifest
                .record_input(ratings)
                .and_then(|_| manifest.record_input(items))
                .map_err(StageError::wrap("ingest"))?;
            manifest.record_artifact(&transactions_path);

            let prefs_path = out_dir.join(PREFS_FILE);
            stage_prefs(&transactions_path, &config.ingest_config(), &prefs_path, digest)
                .map_err(StageError::wrap("prefs"))?;
            manifest.record_artifact(&prefs_path);
            prefs_path
        }
    };

    let consensus_on = config
        .consensus
        .consensus_split()
        .map_err(StageError::wrap("mine"))?;
    let consensus_path = out_dir.join(CONSENSUS_RULES_FILE);
    stage_mine(
        &prefs_path,
        &config.consensus.to_miner_config(),
        consensus_on,
        false,
        &consensus_path,
        digest,
    )
    .map_err(StageError::wrap("mine"))?;
    manifest.record_artifact(&consensus_path);

    let aggregated_path = out_dir.join(AGGREGATED_RULES_FILE);
    let trace_path = out_dir.join(PRA_TRACE_FILE);
    stage_pra(
        &prefs_path,
        &consensus_path,
        &config.pra.mindis.to_pra_config().map_err(StageError::wrap("pra"))?,
        consensus_on,
        &aggregated_path,
        &trace_path,
        digest,
    )
    .map_err(StageError::wrap("pra"))?;
    manifest.record_artifact(&aggregated_path);
    manifest.record_artifact(&trace_path);

    let user_rules_path = out_dir.join(USER_RULES_FILE);
    stage_mine(
        &prefs_path,
        &config.user_miner.to_miner_config(),
        consensus_on,
        true,
        &user_rules_path,
        digest,
    )
    .map_err(StageError::wrap("mine"))?;
    manifest.record_artifact(&user_rules_path);

    for function in &config.score.functions {
        let scored_path = out_dir.join(scored_file(function));
        let params = RankParams {
            spec: config.score.function_spec(function),
            deviation: config.score.deviation,
            key: None,
            top: None,
            consensus_on,
        };
        stage_rank(
            &prefs_path,
            &aggregated_path,
            &user_rules_path,
            &params,
            &scored_path,
            digest,
        )
        .map_err(StageError::wrap("rank"))?;
        manifest.record_artifact(&scored_path);

        let eval_path = out_dir.join(eval_file(function));
        stage_eval(
            &prefs_path,
            &scored_path,
            &config.eval.ks,
            config.eval.standard_f1,
            &eval_path,
            digest,
        )
        .map_err(StageError::wrap("eval"))?;
        manifest.record_artifact(&eval_path);
    }

    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest
        .save(&manifest_path)
        .map_err(StageError::wrap("pipeline"))?;
    Ok(())
}
