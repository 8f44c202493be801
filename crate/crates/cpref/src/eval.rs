//! Evaluation of rulesets over held-out preference databases, plus the
//! top-k comparison harness.
//!
//! A ruleset's verdict on a pair distinguishes forward coverage from
//! coverage of the swapped pair, so conflicting rulesets are handled
//! explicitly:
//!
//! * recall = (Agree + Both) / |ξ|
//! * precision = (Agree + Both) / (Agree + Reverse + Both), undefined when
//!   nothing is covered
//! * F1 = P*R / (P + R) as printed in the source formulas (half the
//!   conventional F1; [`standard_f1`] gives `2PR / (P+R)`)
//! * favoritism = mean rating gap over pairs covered in the forward
//!   direction

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::{rank_topk, RankKey, ScoredRule};
use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::measures;
use crate::model::{PreferenceDatabase, PreferencePair, RuleSet};

/// How a ruleset relates to one pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Some rule agrees with the pair, none with the swapped pair.
    Agree,
    /// Only the swapped pair is covered.
    Reverse,
    /// Both directions are covered by different rules.
    Both,
    /// Nothing covers the pair.
    None,
}

/// Verdict of the ruleset on a single pair.
pub fn ruleset_predicts(
    rules: &RuleSet,
    pair: &PreferencePair,
    db: &PreferenceDatabase,
) -> Result<Verdict> {
    let swapped = PreferencePair {
        preferred: pair.dominated,
        dominated: pair.preferred,
    };
    let mut forward = false;
    let mut reverse = false;
    for rule in rules {
        forward = forward || crate::model::rule_agrees(rule, pair, db)?;
        reverse = reverse || crate::model::rule_agrees(rule, &swapped, db)?;
        if forward && reverse {
            break;
        }
    }
    Ok(match (forward, reverse) {
        (true, true) => Verdict::Both,
        (true, false) => Verdict::Agree,
        (false, true) => Verdict::Reverse,
        (false, false) => Verdict::None,
    })
}

/// All metrics of one ruleset over one database.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: f64,
    pub precision: Option<f64>,
    /// `P*R / (P+R)`, undefined when precision is undefined or `P+R = 0`.
    pub f1: Option<f64>,
    /// Mean `|t.rating - u.rating|` over forward-covered pairs.
    pub favoritism: Option<f64>,
    pub covered_agree: usize,
    pub covered_any: usize,
}

impl EvalReport {
    /// Conventional `2PR / (P+R)` for cross-comparison.
    pub fn standard_f1(&self) -> Option<f64> {
        self.f1.map(|v| 2.0 * v)
    }
}

/// Forward coverage of the ruleset plus coverage of the swapped pairs,
/// which is exactly agreement with the inverse rules.
fn coverage_bitmaps(rules: &RuleSet, db: &PreferenceDatabase) -> (Bitset, Bitset) {
    let mut forward = Bitset::new(db.len());
    let mut reverse = Bitset::new(db.len());
    for rule in rules {
        let (fwd, rev) = measures::bidirectional_bitmaps(rule, db);
        forward = forward.union(&fwd);
        reverse = reverse.union(&rev);
    }
    (forward, reverse)
}

/// Evaluates the ruleset over every pair of `db` in one pass.
pub fn evaluate(rules: &RuleSet, db: &PreferenceDatabase) -> Result<EvalReport> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let (forward, reverse) = coverage_bitmaps(rules, db);

    let covered_agree = forward.count_ones();
    let covered_any = forward.union(&reverse).count_ones();
    let recall = covered_agree as f64 / db.len() as f64;
    let precision = if covered_any > 0 {
        Some(covered_agree as f64 / covered_any as f64)
    } else {
        None
    };
    let f1 = precision.and_then(|p| f1_measure(p, recall));
    let favoritism = if covered_agree > 0 {
        let mut total = 0.0;
        for index in forward.ones() {
            let (t, u) = db.pair_transactions(index);
            total += (t.rating - u.rating).abs();
        }
        Some(total / covered_agree as f64)
    } else {
        None
    };
    Ok(EvalReport {
        recall,
        precision,
        f1,
        favoritism,
        covered_agree,
        covered_any,
    })
}

/// Fraction of pairs covered in the forward direction.
pub fn recall(rules: &RuleSet, db: &PreferenceDatabase) -> Result<f64> {
    Ok(evaluate(rules, db)?.recall)
}

/// Forward coverage over any-direction coverage; `None` when the ruleset
/// covers nothing.
pub fn precision(rules: &RuleSet, db: &PreferenceDatabase) -> Result<Option<f64>> {
    Ok(evaluate(rules, db)?.precision)
}

/// `P*R / (P+R)`; `None` on the degenerate 0/0 case.
pub fn f1_measure(precision: f64, recall: f64) -> Option<f64> {
    if precision + recall == 0.0 {
        None
    } else {
        Some(precision * recall / (precision + recall))
    }
}

/// Mean rating gap over forward-covered pairs; `None` when nothing is
/// covered.
pub fn favoritism(rules: &RuleSet, db: &PreferenceDatabase) -> Result<Option<f64>> {
    Ok(evaluate(rules, db)?.favoritism)
}

/// Rule orderings compared by the top-k harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopkKey {
    /// Input order, no re-ranking.
    Raw,
    Eta,
    Belief,
    /// |deviation|
    Dev,
}

impl TopkKey {
    pub const ALL: [TopkKey; 4] = [TopkKey::Raw, TopkKey::Eta, TopkKey::Belief, TopkKey::Dev];

    pub fn as_str(&self) -> &'static str {
        match self {
            TopkKey::Raw => "raw",
            TopkKey::Eta => "eta",
            TopkKey::Belief => "belief",
            TopkKey::Dev => "dev",
        }
    }
}

/// One cell of the long-format experiment table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopkRow {
    pub key: String,
    pub k: usize,
    pub metric: String,
    /// Macro average over users with a defined value; `None` when no user
    /// had one.
    pub value: Option<f64>,
    pub users: usize,
}

fn take_topk(scored: &[ScoredRule], k: usize, key: TopkKey) -> Vec<ScoredRule> {
    match key {
        TopkKey::Raw => scored.iter().take(k).cloned().collect(),
        TopkKey::Eta => rank_topk(scored, k, RankKey::Eta),
        TopkKey::Belief => rank_topk(scored, k, RankKey::Belief),
        TopkKey::Dev => rank_topk(scored, k, RankKey::AbsDeviation),
    }
}

/// Compares the four orderings at each `k`, macro-averaging per-user
/// metrics. Recall, precision and F1 are computed on each user's test
/// database; favoritism on the train database when one is supplied (the
/// convention of the source experiments), otherwise on test.
pub fn topk_experiment(
    scored_per_user: &BTreeMap<String, Vec<ScoredRule>>,
    ks: &[usize],
    test: &BTreeMap<String, PreferenceDatabase>,
    train: Option<&BTreeMap<String, PreferenceDatabase>>,
) -> Result<Vec<TopkRow>> {
    for user in scored_per_user.keys() {
        if !test.contains_key(user) {
            return Err(Error::MissingSplit(user.clone()));
        }
        if let Some(train) = train {
            if !train.contains_key(user) {
                return Err(Error::MissingSplit(user.clone()));
            }
        }
    }

    let mut rows = Vec::new();
    for key in TopkKey::ALL {
        for &k in ks {
            let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            let mut add = |metric: &'static str, value: Option<f64>| {
                if let Some(v) = value {
                    let slot = sums.entry(metric).or_insert((0.0, 0));
                    slot.0 += v;
                    slot.1 += 1;
                }
            };
            for (user, scored) in scored_per_user {
                let top = take_topk(scored, k, key);
                let rules = RuleSet::new(top.into_iter().map(|s| s.rule));
                let test_db = &test[user];
                if !test_db.is_empty() {
                    let report = evaluate(&rules, test_db)?;
                    add("recall", Some(report.recall));
                    add("precision", report.precision);
                    add("f1", report.f1);
                }
                let fav_db = train.map(|t| &t[user]).unwrap_or(test_db);
                if !fav_db.is_empty() {
                    add("favoritism", evaluate(&rules, fav_db)?.favoritism);
                }
            }
            for metric in ["recall", "precision", "f1", "favoritism"] {
                let (sum, users) = sums.get(metric).copied().unwrap_or((0.0, 0));
                rows.push(TopkRow {
                    key: key.as_str().to_string(),
                    k,
                    metric: metric.to_string(),
                    value: if users > 0 { Some(sum / users as f64) } else { None },
                    users,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rule;
    use crate::synth::demo;
    use std::sync::Arc;

    fn single_rule_set() -> (Arc<PreferenceDatabase>, RuleSet) {
        let db = demo::database();
        let u = db.universe();
        let rules = RuleSet::new(vec![Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap()]);
        (db, rules)
    }

    #[test]
    fn verdicts_on_demo_pairs() {
        let (db, rules) = single_rule_set();
        assert_eq!(
            ruleset_predicts(&rules, &db.pairs()[0], &db).unwrap(),
            Verdict::Agree
        );
        assert_eq!(
            ruleset_predicts(&rules, &db.pairs()[1], &db).unwrap(),
            Verdict::None
        );
        let empty = RuleSet::default();
        for pair in db.pairs() {
            assert_eq!(ruleset_predicts(&empty, pair, &db).unwrap(), Verdict::None);
        }
    }

    #[test]
    fn opposite_rules_produce_both() {
        let (db, _) = single_rule_set();
        let u = db.universe();
        // D>E|B agrees with p1; E>D|B agrees with the swap of p1.
        let rules = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap(),
            Rule::from_names(u, &["E"], &["D"], &["B"]).unwrap(),
        ]);
        assert_eq!(
            ruleset_predicts(&rules, &db.pairs()[0], &db).unwrap(),
            Verdict::Both
        );
    }

    #[test]
    fn demo_metrics_hand_check() {
        let (db, rules) = single_rule_set();
        let report = evaluate(&rules, &db).unwrap();
        assert_eq!(report.covered_agree, 2);
        assert_eq!(report.covered_any, 2);
        assert_eq!(report.recall, 0.4);
        assert_eq!(report.precision, Some(1.0));
        let f1 = report.f1.unwrap();
        assert_eq!(f1, 1.0 * 0.4 / 1.4);
        assert!((f1 - 0.2857).abs() < 5e-5);
        assert_eq!(report.standard_f1().unwrap(), 2.0 * f1);
        // Ratings 9.5-7.4 and 9.5-7.9.
        let fav = report.favoritism.unwrap();
        assert_eq!(fav, ((9.5 - 7.4) + (9.5 - 7.9)) / 2.0);
        assert!((fav - 1.85).abs() < 1e-12);
    }

    #[test]
    fn full_coverage_reaches_recall_one() {
        let db = demo::database();
        let u = db.universe();
        // D>C|NULL covers p1, p2, p4, p5; D>E|B covers p1, p3.
        let rules = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["C"], &[]).unwrap(),
            Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap(),
        ]);
        assert_eq!(recall(&rules, &db).unwrap(), 1.0);
    }

    #[test]
    fn uncovered_ruleset_has_undefined_precision() {
        let db = demo::database();
        let u = db.universe();
        let rules = RuleSet::new(vec![Rule::from_names(u, &["D"], &["B"], &["C"]).unwrap()]);
        let report = evaluate(&rules, &db).unwrap();
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.precision, None);
        assert_eq!(report.f1, None);
        assert_eq!(report.favoritism, None);
    }

    #[test]
    fn f1_degenerate_cases() {
        assert_eq!(f1_measure(0.0, 0.0), None);
        let x = 0.6;
        assert!((f1_measure(x, x).unwrap() - x / 2.0).abs() < 1e-15);
    }

    #[test]
    fn reverse_only_rule_lowers_precision() {
        let db = demo::database();
        let u = db.universe();
        let good = RuleSet::new(vec![Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap()]);
        let before = evaluate(&good, &db).unwrap();
        // C>A|B agrees with the swaps of p1 and p2 but no forward pair.
        let with_reverse = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap(),
            Rule::from_names(u, &["C"], &["A"], &["B"]).unwrap(),
        ]);
        let after = evaluate(&with_reverse, &db).unwrap();
        assert!(after.precision.unwrap() < before.precision.unwrap());
        assert_eq!(after.recall, before.recall);
    }

    #[test]
    fn superset_never_loses_recall() {
        let db = demo::database();
        let u = db.universe();
        let small = RuleSet::new(vec![Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap()]);
        let large = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap(),
            Rule::from_names(u, &["A"], &["C"], &["B"]).unwrap(),
        ]);
        assert!(recall(&large, &db).unwrap() >= recall(&small, &db).unwrap());
    }

    #[test]
    fn favoritism_ignores_uniform_rating_shifts() {
        let (db, rules) = single_rule_set();
        let base = favoritism(&rules, &db).unwrap().unwrap();

        let universe = Arc::clone(db.universe());
        let shifted: crate::model::TransactionTable = db
            .transactions()
            .iter()
            .map(|(id, txn)| {
                let mut t = txn.clone();
                t.rating += 2.5;
                (*id, t)
            })
            .collect();
        let shifted_db = PreferenceDatabase::new(
            universe,
            Arc::new(shifted),
            db.pairs().to_vec(),
        )
        .unwrap();
        let moved = favoritism(&rules, &shifted_db).unwrap().unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn topk_experiment_with_full_k_is_key_independent() {
        use crate::belief::{
            score_ruleset, BeliefSystem, CorrelationBelief, ScoreOptions,
        };
        let db = demo::database();
        let u = db.universe();
        let rules = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap(),
            Rule::from_names(u, &["D"], &["C"], &[]).unwrap(),
        ]);
        let system = BeliefSystem::new(
            RuleSet::new(vec![Rule::from_names(u, &["D"], &["C"], &[]).unwrap()]),
            Arc::clone(&db),
        )
        .unwrap();
        let scored = score_ruleset(
            &rules,
            &system,
            &CorrelationBelief,
            &db,
            ScoreOptions::default(),
        )
        .unwrap();

        let mut scored_map = BTreeMap::new();
        scored_map.insert("u1".to_string(), scored);
        let mut test = BTreeMap::new();
        test.insert(
            "u1".to_string(),
            PreferenceDatabase::new(
                Arc::clone(db.universe()),
                Arc::clone(db.transactions()),
                db.pairs().to_vec(),
            )
            .unwrap(),
        );

        let rows = topk_experiment(&scored_map, &[10], &test, None).unwrap();
        // k >= |rules|: all four keys evaluate the same set.
        let recall_values: Vec<f64> = rows
            .iter()
            .filter(|r| r.metric == "recall")
            .map(|r| r.value.unwrap())
            .collect();
        assert_eq!(recall_values.len(), 4);
        assert!(recall_values.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn topk_experiment_requires_split_users() {
        let scored_map: BTreeMap<String, Vec<ScoredRule>> =
            [("ghost".to_string(), Vec::new())].into();
        let test = BTreeMap::new();
        assert!(matches!(
            topk_experiment(&scored_map, &[5], &test, None),
            Err(Error::MissingSplit(user)) if user == "ghost"
        ));
    }
}
