//! Greedy ruleset aggregation: keep a maximally spread sub-ruleset whose
//! average internal distance stays above a threshold.
//!
//! The seed is the first-scanned rule pair maximizing the pairwise average
//! internal distance among pairs strictly exceeding `mindis`; afterwards
//! the rule maximizing the new average internal distance is inserted while
//! that maximum still strictly exceeds `mindis`. If no pair clears the
//! threshold the output is empty rather than forcing a seed.
//!
//! Distances are accumulated as integer numerators (sums of agree counts
//! minus joint counts), so the incremental bookkeeping matches the naive
//! formula exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{self, MeasureCache};
use crate::model::{PreferenceDatabase, Rule, RuleSet};

/// Threshold policy for the aggregation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MindisPolicy {
    /// 1.5 x mean support of the input ruleset.
    Auto,
    Explicit(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PraConfig {
    pub mindis: MindisPolicy,
}

impl Default for PraConfig {
    fn default() -> Self {
        PraConfig {
            mindis: MindisPolicy::Auto,
        }
    }
}

/// One growth step: the inserted rule and the average internal distance of
/// the aggregate right after insertion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PraStep {
    pub rule: String,
    pub avgdis: f64,
}

/// Audit record of one aggregation run. Rules appear in canonical text
/// form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PraTrace {
    pub mindis: f64,
    pub input_rules: usize,
    /// `None` when no pair cleared the threshold and the output is empty.
    pub seed: Option<[String; 2]>,
    pub seed_avgdis: Option<f64>,
    pub additions: Vec<PraStep>,
    pub final_avgdis: Option<f64>,
    pub kept_rules: usize,
}

/// Auto policy over explicit support values: `1.5 x mean(support)`.
pub fn resolve_mindis_from_supports(supports: &[f64], cfg: &PraConfig) -> Result<f64> {
    match cfg.mindis {
        MindisPolicy::Explicit(v) => Ok(v),
        MindisPolicy::Auto => {
            if supports.is_empty() {
                return Err(Error::EmptyRuleset);
            }
            Ok(1.5 * supports.iter().sum::<f64>() / supports.len() as f64)
        }
    }
}

/// Auto policy with supports computed from the database.
pub fn resolve_mindis(rules: &RuleSet, db: &PreferenceDatabase, cfg: &PraConfig) -> Result<f64> {
    match cfg.mindis {
        MindisPolicy::Explicit(v) => Ok(v),
        MindisPolicy::Auto => {
            if rules.is_empty() {
                return Err(Error::EmptyRuleset);
            }
            if db.is_empty() {
                return Err(Error::EmptyDatabase);
            }
            let supports: Vec<f64> = rules
                .iter()
                .map(|r| measures::agree_count(r, db) as f64 / db.len() as f64)
                .collect();
            resolve_mindis_from_supports(&supports, cfg)
        }
    }
}

/// Runs the aggregation, returning the kept rules in canonical order plus
/// the full trace.
pub fn pra_aggregate(
    rules: &RuleSet,
    db: &PreferenceDatabase,
    cfg: &PraConfig,
) -> Result<(RuleSet, PraTrace)> {
    if rules.len() < 2 {
        return Err(Error::TooFewRules {
            needed: 2,
            got: rules.len(),
        });
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mindis = resolve_mindis(rules, db, cfg)?;

    // Work over the canonical order so tie-breaking is input-order
    // independent.
    let ordered = measures::canonical_ruleset(rules.iter().cloned(), db);
    let cache = MeasureCache::new(db);
    let stats: Vec<_> = ordered.iter().map(|r| cache.stats(r)).collect();
    let k = stats.len();
    let n = db.len() as u64;

    let joint = |i: usize, j: usize| -> u64 {
        stats[i].bitmap.intersection_count(&stats[j].bitmap) as u64
    };
    // avgdis({i, j}) = (agree_i + agree_j - 2*joint_ij) / (2n)
    let pair_numer = |i: usize, j: usize| -> u64 {
        stats[i].agree as u64 + stats[j].agree as u64 - 2 * joint(i, j)
    };

    let mut trace = PraTrace {
        mindis,
        input_rules: k,
        seed: None,
        seed_avgdis: None,
        additions: Vec::new(),
        final_avgdis: None,
        kept_rules: 0,
    };

    // Seeding scan: first strict improvement wins, so ties keep the
    // earliest pair in canonical order.
    let mut best: Option<(usize, usize, u64)> = None;
    let mut max_avgdis = mindis;
    for i in 0..k {
        for j in (i + 1)..k {
            let numer = pair_numer(i, j);
            let avgdis = numer as f64 / (2 * n) as f64;
            if avgdis > max_avgdis {
                max_avgdis = avgdis;
                best = Some((i, j, numer));
            }
        }
    }
    let Some((si, sj, seed_numer)) = best else {
        return Ok((RuleSet::default(), trace));
    };
    let universe = db.universe();
    trace.seed = Some([
        ordered.rules()[si].canonical_text(universe),
        ordered.rules()[sj].canonical_text(universe),
    ]);
    trace.seed_avgdis = Some(seed_numer as f64 / (2 * n) as f64);

    let mut member = vec![false; k];
    member[si] = true;
    member[sj] = true;
    let mut member_count = 2usize;
    // Sum over ordered member pairs (i, j), i != j, of agree_i - joint_ij.
    let mut sum_numer: u64 = seed_numer;
    let mut final_avgdis = seed_numer as f64 / (2 * n) as f64;

    // Cross terms of every remaining candidate against the members:
    // sum over members s of agree_c + agree_s - 2*joint(c, s).
    let mut cross: Vec<u64> = vec![0; k];
    for c in 0..k {
        if member[c] {
            continue;
        }
        cross[c] = pair_numer(c, si) + pair_numer(c, sj);
    }

    loop {
        let mut best: Option<usize> = None;
        let mut best_avgdis = mindis;
        let next_count = (member_count + 1) as u64;
        let denom = (n * next_count * (next_count - 1)) as f64;
        for c in 0..k {
            if member[c] {
                continue;
            }
            let avgdis = (sum_numer + cross[c]) as f64 / denom;
            if avgdis > best_avgdis {
                best_avgdis = avgdis;
                best = Some(c);
            }
        }
        let Some(winner) = best else {
            break;
        };
        member[winner] = true;
        member_count += 1;
        sum_numer += cross[winner];
        final_avgdis = best_avgdis;
        trace.additions.push(PraStep {
            rule: ordered.rules()[winner].canonical_text(universe),
            avgdis: best_avgdis,
        });
        for c in 0..k {
            if !member[c] {
                cross[c] += pair_numer(c, winner);
            }
        }
    }

    let kept: Vec<Rule> = ordered
        .iter()
        .enumerate()
        .filter(|(i, _)| member[*i])
        .map(|(_, r)| r.clone())
        .collect();
    trace.kept_rules = kept.len();
    trace.final_avgdis = Some(final_avgdis);
    Ok((RuleSet::new(kept), trace))
}
