//! Candidate enumeration of contextual preference rules under minimum
//! support and confidence thresholds.
//!
//! Candidates are generated per pair `<t, u>`: the context ranges over
//! subsets of `t ∩ u` up to `max_context_len`, the plus side over non-empty
//! subsets of `t \ u` and the minus side over non-empty subsets of `u \ t`,
//! both up to `max_side_len`. A rule agrees with a pair exactly when that
//! pair generates it, so one pass over the database yields exact agreement
//! counts for every candidate within the size caps, and the against count
//! of a rule is the agreement count of its inverse.

use std::collections::HashMap;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::measures::MeasureRecord;
use crate::model::{Itemset, PreferenceDatabase, Rule, RuleSet};

#[derive(Clone, Debug)]
pub struct MinerConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    pub max_context_len: usize,
    pub max_side_len: usize,
}

impl MinerConfig {
    /// Paper-styled consensus thresholds: support 0.01, confidence 0.7,
    /// singleton sides and contexts of at most two attributes.
    pub fn consensus() -> Self {
        MinerConfig {
            min_support: 0.01,
            min_confidence: 0.7,
            max_context_len: 2,
            max_side_len: 1,
        }
    }

    /// Paper-styled per-user thresholds: support 0.005, confidence 0.7.
    pub fn per_user() -> Self {
        MinerConfig {
            min_support: 0.005,
            ..MinerConfig::consensus()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Thresholds above 1 are unsatisfiable but legal: they simply
        // produce an empty ruleset.
        if !(self.min_support > 0.0 && self.min_support.is_finite()) {
            return Err(Error::InvalidConfig("min_support must be positive".into()));
        }
        if !(self.min_confidence > 0.0 && self.min_confidence <= 1.0) {
            return Err(Error::InvalidConfig(
                "min_confidence must be in (0, 1]".into(),
            ));
        }
        if self.max_side_len < 1 {
            return Err(Error::InvalidConfig("max_side_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// A rule together with the measures it was filtered on.
#[derive(Clone, Debug)]
pub struct MinedRule {
    pub rule: Rule,
    pub record: MeasureRecord,
}

fn subsets_of(indices: &[usize], min_len: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for len in min_len..=max_len.min(indices.len()) {
        out.extend(indices.iter().copied().combinations(len));
    }
    out
}

/// Enumerates every rule within the size caps that clears both thresholds,
/// with its exact measures, sorted canonically.
pub fn enumerate_rules_detailed(
    db: &PreferenceDatabase,
    cfg: &MinerConfig,
) -> Result<Vec<MinedRule>> {
    cfg.validate()?;
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let width = db.universe().len();
    let n = db.len();

    let mut counts: HashMap<Rule, u64> = HashMap::new();
    for index in 0..n {
        let (t, u) = db.pair_transactions(index);
        let t_bits = t.items.bits();
        let u_bits = u.items.bits();
        let both: Vec<usize> = t_bits.intersection(u_bits).ones().collect();
        let t_only: Vec<usize> = t_bits.difference(u_bits).ones().collect();
        let u_only: Vec<usize> = u_bits.difference(t_bits).ones().collect();
        if t_only.is_empty() || u_only.is_empty() {
            continue;
        }
        let contexts = subsets_of(&both, 0, cfg.max_context_len);
        let pluses = subsets_of(&t_only, 1, cfg.max_side_len);
        let minuses = subsets_of(&u_only, 1, cfg.max_side_len);
        for ctx in &contexts {
            for plus in &pluses {
                for minus in &minuses {
                    let rule = Rule::new(
                        Itemset::from_bits(crate::bits::Bitset::from_indices(
                            width,
                            plus.iter().copied(),
                        )),
                        Itemset::from_bits(crate::bits::Bitset::from_indices(
                            width,
                            minus.iter().copied(),
                        )),
                        Itemset::from_bits(crate::bits::Bitset::from_indices(
                            width,
                            ctx.iter().copied(),
                        )),
                    )
                    .expect("slots disjoint by construction");
                    *counts.entry(rule).or_insert(0) += 1;
                }
            }
        }
    }

    let universe = db.universe();
    let mut survivors: Vec<(u64, String, MinedRule)> = Vec::new();
    for (rule, &agree) in &counts {
        let support = agree as f64 / n as f64;
        if support < cfg.min_support {
            continue;
        }
        let against = counts.get(&rule.inverse()).copied().unwrap_or(0);
        let confidence = agree as f64 / (agree + against) as f64;
        if confidence < cfg.min_confidence {
            continue;
        }
        let record = MeasureRecord {
            agree: agree as usize,
            against: against as usize,
            support,
            confidence: Some(confidence),
        };
        survivors.push((
            agree,
            rule.canonical_text(universe),
            MinedRule {
                rule: rule.clone(),
                record,
            },
        ));
    }
    survivors.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(survivors.into_iter().map(|(_, _, mined)| mined).collect())
}

/// As [`enumerate_rules_detailed`], rules only.
pub fn enumerate_rules(db: &PreferenceDatabase, cfg: &MinerConfig) -> Result<RuleSet> {
    Ok(RuleSet::new(
        enumerate_rules_detailed(db, cfg)?.into_iter().map(|m| m.rule),
    ))
}

/// Mines the consensus candidate pool from a merged database. The merged
/// database aggregates every user's pairs, so the (high) thresholds keep
/// only rules with broad backing.
pub fn mine_consensus(merged: &PreferenceDatabase, cfg: &MinerConfig) -> Result<RuleSet> {
    enumerate_rules(merged, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures;
    use crate::model::rule_agrees;
    use crate::synth::demo;

    fn cfg(min_support: f64, min_confidence: f64) -> MinerConfig {
        MinerConfig {
            min_support,
            min_confidence,
            max_context_len: 1,
            max_side_len: 1,
        }
    }

    #[test]
    fn demo_mining_includes_expected_rules() {
        let db = demo::database();
        let rules = enumerate_rules(&db, &cfg(0.3, 0.7)).unwrap();
        let u = db.universe();
        let texts: Vec<String> = rules.iter().map(|r| r.canonical_text(u)).collect();
        assert!(texts.contains(&"D > E | B".to_string()));
        assert!(texts.contains(&"A > C | B".to_string()));
        for mined in enumerate_rules_detailed(&db, &cfg(0.3, 0.7)).unwrap() {
            assert!(mined.record.support >= 0.3);
            assert!(mined.record.confidence.unwrap() >= 0.7);
        }
    }

    #[test]
    fn unsatisfiable_support_yields_empty_set() {
        let db = demo::database();
        let rules = enumerate_rules(&db, &cfg(1.01, 0.7)).unwrap();
        assert!(rules.is_empty());
    }

    #[test]
    fn mined_measures_recheck_against_measures_module() {
        let db = demo::database();
        let mined = enumerate_rules_detailed(&db, &cfg(0.2, 0.7)).unwrap();
        assert!(!mined.is_empty());
        for m in mined {
            let independent = measures::measure(&m.rule, &db).unwrap();
            assert_eq!(m.record, independent);
        }
    }

    #[test]
    fn output_is_exactly_the_brute_force_enumeration() {
        let db = demo::database();
        let config = MinerConfig {
            min_support: 0.25,
            min_confidence: 0.7,
            max_context_len: 2,
            max_side_len: 1,
        };
        let mined = enumerate_rules(&db, &config).unwrap();

        // Brute force: every well-formed singleton-sided rule with context
        // up to two attributes, checked pair by pair.
        let u = db.universe();
        let m = u.len();
        let mut expected = Vec::new();
        let all: Vec<usize> = (0..m).collect();
        for &p in &all {
            for &q in &all {
                if p == q {
                    continue;
                }
                let free: Vec<usize> = all.iter().copied().filter(|&x| x != p && x != q).collect();
                for ctx in subsets_of(&free, 0, 2) {
                    let rule = Rule::new(
                        Itemset::from_bits(crate::bits::Bitset::from_indices(m, [p])),
                        Itemset::from_bits(crate::bits::Bitset::from_indices(m, [q])),
                        Itemset::from_bits(crate::bits::Bitset::from_indices(m, ctx)),
                    )
                    .unwrap();
                    let agree = db
                        .pairs()
                        .iter()
                        .filter(|pair| rule_agrees(&rule, pair, &db).unwrap())
                        .count();
                    let against = db
                        .pairs()
                        .iter()
                        .filter(|pair| rule_agrees(&rule.inverse(), pair, &db).unwrap())
                        .count();
                    let support = agree as f64 / db.len() as f64;
                    if support >= config.min_support
                        && agree + against > 0
                        && agree as f64 / (agree + against) as f64 >= config.min_confidence
                    {
                        expected.push(rule);
                    }
                }
            }
        }
        let mut got: Vec<&Rule> = mined.iter().collect();
        let mut want: Vec<&Rule> = expected.iter().collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn raising_min_support_never_adds_rules() {
        let db = demo::database();
        let low = enumerate_rules(&db, &cfg(0.2, 0.7)).unwrap();
        let high = enumerate_rules(&db, &cfg(0.4, 0.7)).unwrap();
        assert!(high.len() <= low.len());
        for rule in &high {
            assert!(low.contains(rule));
        }
    }

    #[test]
    fn consensus_over_single_user_matches_enumeration() {
        let db = demo::database();
        let direct = enumerate_rules(&db, &cfg(0.3, 0.7)).unwrap();
        let consensus = mine_consensus(&db, &cfg(0.3, 0.7)).unwrap();
        assert_eq!(direct.rules(), consensus.rules());
    }

    #[test]
    fn empty_database_is_rejected() {
        let db = demo::database();
        let empty = PreferenceDatabase::new(
            std::sync::Arc::clone(db.universe()),
            std::sync::Arc::clone(db.transactions()),
            Vec::new(),
        )
        .unwrap();
        assert!(matches!(
            enumerate_rules(&empty, &cfg(0.3, 0.7)),
            Err(Error::EmptyDatabase)
        ));
    }
}
