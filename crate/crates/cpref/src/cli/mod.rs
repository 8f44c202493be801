//! Command-line driver: single composable stages plus the end-to-end
//! pipeline. Data flows between stages through files; progress goes to
//! standard error only.

pub mod artifacts;
pub mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::belief::{BeliefFunctionSpec, DeviationMode, RankKey};
use crate::error::Error;
use crate::ingest::{IngestConfig, SourceFormat};
use crate::miner::MinerConfig;
use crate::store::Split;
use config::{parse_consensus_on, MindisSetting, RunConfig};
use stages::{RankParams, StageError};

#[derive(Parser)]
#[command(
    name = "cpref",
    version,
    about = "Contextual preference rule mining, consensus aggregation and interestingness ranking"
)]
struct Cli {
    /// Cap worker-thread parallelism (defaults to the core count).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Movielens,
    Csv,
}

impl From<FormatArg> for SourceFormat {
    fn from(arg: FormatArg) -> Self {
        match arg {
            FormatArg::Movielens => SourceFormat::MovieLens,
            FormatArg::Csv => SourceFormat::Csv,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KeyArg {
    Eta,
    Belief,
    Dev,
}

impl From<KeyArg> for RankKey {
    fn from(arg: KeyArg) -> Self {
        match arg {
            KeyArg::Eta => RankKey::Eta,
            KeyArg::Belief => RankKey::Belief,
            KeyArg::Dev => RankKey::AbsDeviation,
        }
    }
}

#[derive(Args, Clone, Debug)]
struct ConsensusOnArg {
    /// Which split consensus-level databases use: `train` or `all`.
    #[arg(long = "consensus-on", default_value = "train")]
    consensus_on: String,
}

impl ConsensusOnArg {
    fn split(&self) -> Result<Option<Split>, Error> {
        parse_consensus_on(&self.consensus_on)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load rating and item files into a transactions snapshot.
    Ingest {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Movielens)]
        format: FormatArg,
        #[arg(long, default_value = stages::TRANSACTIONS_FILE)]
        out: PathBuf,
    },
    /// Build per-user preference pairs with train/test splits.
    Prefs {
        #[arg(long, default_value = stages::TRANSACTIONS_FILE)]
        transactions: PathBuf,
        /// Minimum rating of the preferred transaction.
        #[arg(long, default_value_t = 4.0)]
        high: f64,
        /// Required rating gap (strict).
        #[arg(long, default_value_t = 0.5)]
        gap: f64,
        /// Cap on pairs per user (seeded down-sampling).
        #[arg(long)]
        max_pairs: Option<usize>,
        /// Train fraction in (0, 1).
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        /// Seed for every sampling decision.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = stages::PREFS_FILE)]
        out: PathBuf,
    },
    /// Mine preference rules over the stored pairs.
    Mine {
        #[arg(long, default_value = stages::PREFS_FILE)]
        prefs: PathBuf,
        #[arg(long = "min-supp", default_value_t = 0.01)]
        min_supp: f64,
        #[arg(long = "min-conf", default_value_t = 0.7)]
        min_conf: f64,
        #[arg(long = "max-ctx", default_value_t = 2)]
        max_ctx: usize,
        #[arg(long = "max-side", default_value_t = 1)]
        max_side: usize,
        /// Mine each user's train pairs instead of the merged database.
        #[arg(long)]
        per_user: bool,
        #[command(flatten)]
        consensus_on: ConsensusOnArg,
        #[arg(long, default_value = stages::CONSENSUS_RULES_FILE)]
        out: PathBuf,
    },
    /// Aggregate a consensus ruleset by average internal distance.
    Pra {
        #[arg(long, default_value = stages::PREFS_FILE)]
        prefs: PathBuf,
        #[arg(long, default_value = stages::CONSENSUS_RULES_FILE)]
        rules: PathBuf,
        /// `auto` (1.5 x mean support) or an explicit threshold.
        #[arg(long, default_value = "auto")]
        mindis: String,
        #[command(flatten)]
        consensus_on: ConsensusOnArg,
        #[arg(long, default_value = stages::AGGREGATED_RULES_FILE)]
        out: PathBuf,
        #[arg(long, default_value = stages::PRA_TRACE_FILE)]
        trace: PathBuf,
    },
    /// Score rules against the aggregated belief system.
    Rank {
        #[arg(long, default_value = stages::PREFS_FILE)]
        prefs: PathBuf,
        /// Aggregated consensus ruleset backing the belief system.
        #[arg(long, default_value = stages::AGGREGATED_RULES_FILE)]
        system: PathBuf,
        /// Rules to score (per-user or consensus format).
        #[arg(long, default_value = stages::USER_RULES_FILE)]
        rules: PathBuf,
        /// `cos` (weighted cosine) or `cov` (correlation).
        #[arg(long = "belief-fn", default_value = "cov")]
        belief_fn: String,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 1.5)]
        k2: f64,
        #[arg(long, default_value_t = 0.6)]
        k3: f64,
        #[arg(long, default_value_t = 1.5)]
        ek1: f64,
        #[arg(long, default_value_t = 1.5)]
        ek2: f64,
        #[arg(long, default_value_t = 0.0)]
        ek3: f64,
        /// Sort the output by this key; omitted = keep mining order.
        #[arg(long, value_enum)]
        key: Option<KeyArg>,
        /// Keep only the top K rules (per user).
        #[arg(long = "top")]
        top: Option<usize>,
        /// Compatibility reading of the deviation: (sum - 1) / n.
        #[arg(long)]
        legacy_deviation: bool,
        #[command(flatten)]
        consensus_on: ConsensusOnArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-K comparison of ranking keys over per-user scored rules.
    Eval {
        #[arg(long, default_value = stages::PREFS_FILE)]
        prefs: PathBuf,
        #[arg(long)]
        scored: PathBuf,
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30,35,40,45,50")]
        ks: Vec<usize>,
        /// Also emit the conventional 2PR/(P+R) rows, labelled f1_std.
        #[arg(long)]
        standard_f1: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure utilities.
    Measures {
        #[command(subcommand)]
        action: MeasuresAction,
    },
    /// Run every stage from one declarative config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for all artifacts.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MeasuresAction {
    /// Emit per-rule measure records for a ruleset file.
    Dump {
        #[arg(long, default_value = stages::PREFS_FILE)]
        prefs: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[command(flatten)]
        consensus_on: ConsensusOnArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(stage: &str) -> i32 {
    match stage {
        "ingest" => 10,
        "prefs" => 11,
        "mine" => 12,
        "pra" => 13,
        "rank" => 14,
        "eval" => 15,
        "measures" => 16,
        _ => 1,
    }
}

/// Digest for single-stage runs: the stage name plus its arguments.
fn stage_digest(parts: &[String]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0]);
    }
    hasher.finalize().into()
}

fn out_dir_of(path: &std::path::Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn dispatch(cli: Cli) -> Result<(), StageError> {
    let fail = |stage: &'static str| move |error: Error| StageError { stage, error };
    match cli.command {
        Command::Ingest {
            ratings,
            items,
            format,
            out,
        } => {
            let digest = stage_digest(&[
                "ingest".into(),
                ratings.display().to_string(),
                items.display().to_string(),
                format!("{format:?}"),
            ]);
            stages::stage_ingest(&ratings, &items, format.into(), &out, digest)
                .map_err(fail("ingest"))
        }
        Command::Prefs {
            transactions,
            high,
            gap,
            max_pairs,
            split,
            seed,
            out,
        } => {
            let cfg = IngestConfig {
                high_rating_threshold: high,
                min_gap: gap,
                max_pairs_per_user: max_pairs,
                split_ratio: split,
                seed,
            };
            let digest = stage_digest(&[
                "prefs".into(),
                format!("{high}|{gap}|{max_pairs:?}|{split}|{seed}"),
            ]);
            stages::stage_prefs(&transactions, &cfg, &out, digest).map_err(fail("prefs"))
        }
        Command::Mine {
            prefs,
            min_supp,
            min_conf,
            max_ctx,
            max_side,
            per_user,
            consensus_on,
            out,
        } => {
            let cfg = MinerConfig {
                min_support: min_supp,
                min_confidence: min_conf,
                max_context_len: max_ctx,
                max_side_len: max_side,
            };
            let on = consensus_on.split().map_err(fail("mine"))?;
            let digest = stage_digest(&[
                "mine".into(),
                format!("{min_supp}|{min_conf}|{max_ctx}|{max_side}|{per_user}"),
                consensus_on.consensus_on.clone(),
            ]);
            stages::stage_mine(&prefs, &cfg, on, per_user, &out, digest).map_err(fail("mine"))
        }
        Command::Pra {
            prefs,
            rules,
            mindis,
            consensus_on,
            out,
            trace,
        } => {
            let cfg = MindisSetting::parse(&mindis)
                .and_then(|m| m.to_pra_config())
                .map_err(fail("pra"))?;
            let on = consensus_on.split().map_err(fail("pra"))?;
            let digest = stage_digest(&[
                "pra".into(),
                mindis.clone(),
                consensus_on.consensus_on.clone(),
            ]);
            stages::stage_pra(&prefs, &rules, &cfg, on, &out, &trace, digest).map_err(fail("pra"))
        }
        Command::Rank {
            prefs,
            system,
            rules,
            belief_fn,
            k1,
            k2,
            k3,
            ek1,
            ek2,
            ek3,
            key,
            top,
            legacy_deviation,
            consensus_on,
            out,
        } => {
            let mut parameters = BTreeMap::new();
            if matches!(belief_fn.as_str(), "cos" | "cosine") {
                parameters.insert("k1".into(), k1);
                parameters.insert("k2".into(), k2);
                parameters.insert("k3".into(), k3);
                parameters.insert("ek1".into(), ek1);
                parameters.insert("ek2".into(), ek2);
                parameters.insert("ek3".into(), ek3);
            }
            let params = RankParams {
                spec: BeliefFunctionSpec {
                    name: belief_fn.clone(),
                    parameters,
                },
                deviation: if legacy_deviation {
                    DeviationMode::SumMinusOneOverN
                } else {
                    DeviationMode::MeanMinusOne
                },
                key: key.map(Into::into),
                top,
                consensus_on: consensus_on.split().map_err(fail("rank"))?,
            };
            let digest = stage_digest(&[
                "rank".into(),
                belief_fn,
                format!("{k1}|{k2}|{k3}|{ek1}|{ek2}|{ek3}|{key:?}|{top:?}|{legacy_deviation}"),
                consensus_on.consensus_on.clone(),
            ]);
            stages::stage_rank(&prefs, &system, &rules, &params, &out, digest)
                .map_err(fail("rank"))
        }
        Command::Eval {
            prefs,
            scored,
            ks,
            standard_f1,
            out,
        } => {
            let digest = stage_digest(&["eval".into(), format!("{ks:?}|{standard_f1}")]);
            stages::stage_eval(&prefs, &scored, &ks, standard_f1, &out, digest)
                .map_err(fail("eval"))
        }
        Command::Measures { action } => match action {
            MeasuresAction::Dump {
                prefs,
                rules,
                consensus_on,
                out,
            } => {
                let on = consensus_on.split().map_err(fail("measures"))?;
                let digest = stage_digest(&[
                    "measures-dump".into(),
                    consensus_on.consensus_on.clone(),
                ]);
                stages::stage_measures(&prefs, &rules, on, &out, digest)
                    .map_err(fail("measures"))
            }
        },
        Command::Pipeline { config, out } => {
            let run_config = RunConfig::load(&config).map_err(fail("pipeline"))?;
            stages::run_pipeline(&run_config, &out)
        }
    }
}

fn failure_dir(cli: &Cli) -> PathBuf {
    match &cli.command {
        Command::Ingest { out, .. }
        | Command::Prefs { out, .. }
        | Command::Mine { out, .. }
        | Command::Pra { out, .. }
        | Command::Rank { out, .. }
        | Command::Eval { out, .. } => out_dir_of(out),
        Command::Measures {
            action: MeasuresAction::Dump { out, .. },
        } => out_dir_of(out),
        Command::Pipeline { out, .. } => out.clone(),
    }
}

/// Parses `args` and runs the requested command, returning the process
/// exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version as "errors" with exit code 0.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let dir = failure_dir(&cli);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(StageError { stage, error }) => {
            eprintln!("cpref: stage `{stage}` failed: {error}");
            artifacts::write_failure(&dir, stage, &error);
            exit_code(stage)
        }
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}
