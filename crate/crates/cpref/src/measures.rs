//! Probability-style measures over a preference database.
//!
//! With `n = |ξ|` pairs:
//!
//! * support `supp(π) = agree(π) / n`
//! * confidence `conf(π) = agree(π) / (agree(π) + against(π))`, undefined
//!   when the rule never matches in either direction
//! * joint probability `P(π1 π2)` = fraction of pairs agreeing with both
//! * directed distance `dis(π1 → π2) = P(π1) - P(π1 π2)`
//! * average internal distance of a ruleset = mean directed distance over
//!   all ordered rule pairs
//!
//! Counts are integers; every exported value is produced by a single
//! floating division of integer numerators, so identities such as
//! `distance + joint = support` hold exactly on desk-scale fixtures.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::model::{PreferenceDatabase, Rule, RuleSet};

/// Agreement counts and the derived support/confidence of one rule.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureRecord {
    pub agree: usize,
    pub against: usize,
    pub support: f64,
    /// `None` when the rule matches no pair in either direction; a rule
    /// with zero evidence is not vacuously confident.
    pub confidence: Option<f64>,
}

impl MeasureRecord {
    fn from_counts(agree: usize, against: usize, pairs: usize) -> Self {
        let confidence = if agree + against > 0 {
            Some(agree as f64 / (agree + against) as f64)
        } else {
            None
        };
        MeasureRecord {
            agree,
            against,
            support: agree as f64 / pairs as f64,
            confidence,
        }
    }
}

/// 1 where the dense transaction can stand on the preferred / dominated
/// side of the rule.
fn side_predicates(rule: &Rule, db: &PreferenceDatabase) -> (Vec<u8>, Vec<u8>) {
    let blocks_per_txn = db.blocks_per_txn();
    let n_txns = db.dense_transaction_count();

    let pref_mask = rule.context().union(rule.plus());
    let dom_mask = rule.context().union(rule.minus());
    let pref_blocks = pref_mask.bits().blocks();
    let dom_blocks = dom_mask.bits().blocks();
    let plus_blocks = rule.plus().bits().blocks();
    let minus_blocks = rule.minus().bits().blocks();

    let mut pref_ok = vec![0u8; n_txns];
    let mut dom_ok = vec![0u8; n_txns];
    for dense in 0..n_txns {
        let txn = db.dense_txn_blocks(dense);
        let mut pref = true;
        let mut dom = true;
        for b in 0..blocks_per_txn {
            let t = txn.get(b).copied().unwrap_or(0);
            let pm = pref_blocks.get(b).copied().unwrap_or(0);
            let dm = dom_blocks.get(b).copied().unwrap_or(0);
            let pl = plus_blocks.get(b).copied().unwrap_or(0);
            let mi = minus_blocks.get(b).copied().unwrap_or(0);
            pref &= pm & !t == 0 && mi & t == 0;
            dom &= dm & !t == 0 && pl & t == 0;
        }
        pref_ok[dense] = pref as u8;
        dom_ok[dense] = dom as u8;
    }
    (pref_ok, dom_ok)
}

/// Bitmap over `db.pairs()` marking the pairs that agree with `rule`.
///
/// Evaluates the agreement predicate once per distinct transaction and then
/// combines the two per-side verdicts over the pair list, which keeps the
/// scan linear in `|transactions| + |pairs|` rather than in
/// `|pairs| * |itemset width|`.
pub fn agreement_bitmap(rule: &Rule, db: &PreferenceDatabase) -> Bitset {
    let (pref_ok, dom_ok) = side_predicates(rule, db);
    let pair_refs = db.pair_refs();
    let mut blocks = vec![0u64; db.len().div_ceil(64)];
    for (word, chunk) in blocks.iter_mut().zip(pair_refs.chunks(64)) {
        let mut w = 0u64;
        for (bit, &(t, u)) in chunk.iter().enumerate() {
            w |= ((pref_ok[t as usize] & dom_ok[u as usize]) as u64) << bit;
        }
        *word = w;
    }
    Bitset::from_blocks(db.len(), blocks)
}

/// Agreement bitmaps of the rule and of its inverse in one pair scan. A
/// transaction qualifies for the preferred side of the inverse exactly when
/// it qualifies for the dominated side of the rule, so the inverse reuses
/// the same per-transaction predicates with the sides swapped.
pub fn bidirectional_bitmaps(rule: &Rule, db: &PreferenceDatabase) -> (Bitset, Bitset) {
    let (pref_ok, dom_ok) = side_predicates(rule, db);
    let pair_refs = db.pair_refs();
    let words = db.len().div_ceil(64);
    let mut forward = vec![0u64; words];
    let mut reverse = vec![0u64; words];
    for (i, chunk) in pair_refs.chunks(64).enumerate() {
        let mut fwd = 0u64;
        let mut rev = 0u64;
        for (bit, &(t, u)) in chunk.iter().enumerate() {
            let tp = pref_ok[t as usize];
            let td = dom_ok[t as usize];
            let up = pref_ok[u as usize];
            let ud = dom_ok[u as usize];
            fwd |= ((tp & ud) as u64) << bit;
            rev |= ((td & up) as u64) << bit;
        }
        forward[i] = fwd;
        reverse[i] = rev;
    }
    (
        Bitset::from_blocks(db.len(), forward),
        Bitset::from_blocks(db.len(), reverse),
    )
}

/// Number of pairs in `db` that agree with `rule`.
pub fn agree_count(rule: &Rule, db: &PreferenceDatabase) -> usize {
    agreement_bitmap(rule, db).count_ones()
}

/// Number of pairs that agree with the inverse rule.
pub fn against_count(rule: &Rule, db: &PreferenceDatabase) -> usize {
    agree_count(&rule.inverse(), db)
}

pub fn support(rule: &Rule, db: &PreferenceDatabase) -> Result<f64> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    Ok(agree_count(rule, db) as f64 / db.len() as f64)
}

/// `None` when the rule matches no pair in either direction.
pub fn confidence(rule: &Rule, db: &PreferenceDatabase) -> Option<f64> {
    let (forward, reverse) = bidirectional_bitmaps(rule, db);
    let agree = forward.count_ones();
    let against = reverse.count_ones();
    if agree + against == 0 {
        None
    } else {
        Some(agree as f64 / (agree + against) as f64)
    }
}

/// Full measure record for one rule.
pub fn measure(rule: &Rule, db: &PreferenceDatabase) -> Result<MeasureRecord> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let (forward, reverse) = bidirectional_bitmaps(rule, db);
    Ok(MeasureRecord::from_counts(
        forward.count_ones(),
        reverse.count_ones(),
        db.len(),
    ))
}

/// Number of pairs agreeing with both rules.
pub fn joint_count(r1: &Rule, r2: &Rule, db: &PreferenceDatabase) -> usize {
    agreement_bitmap(r1, db).intersection_count(&agreement_bitmap(r2, db))
}

/// Fraction of pairs agreeing with both rules.
pub fn joint_prob(r1: &Rule, r2: &Rule, db: &PreferenceDatabase) -> Result<f64> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    Ok(joint_count(r1, r2, db) as f64 / db.len() as f64)
}

/// Directed rule distance `dis(r1 → r2) = supp(r1) - P(r1 r2)`.
pub fn distance(r1: &Rule, r2: &Rule, db: &PreferenceDatabase) -> Result<f64> {
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let a1 = agreement_bitmap(r1, db);
    let joint = a1.intersection_count(&agreement_bitmap(r2, db));
    Ok((a1.count_ones() - joint) as f64 / db.len() as f64)
}

/// Mean directed distance over all ordered rule pairs of the set.
pub fn avg_internal_distance(rules: &RuleSet, db: &PreferenceDatabase) -> Result<f64> {
    if rules.len() < 2 {
        return Err(Error::TooFewRules {
            needed: 2,
            got: rules.len(),
        });
    }
    if db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let stats: Vec<(usize, Bitset)> = rules
        .iter()
        .map(|r| {
            let bm = agreement_bitmap(r, db);
            (bm.count_ones(), bm)
        })
        .collect();
    let k = stats.len();
    let mut numer: u64 = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            let joint = stats[i].1.intersection_count(&stats[j].1) as u64;
            numer += stats[i].0 as u64 + stats[j].0 as u64 - 2 * joint;
        }
    }
    Ok(numer as f64 / (db.len() * k * (k - 1)) as f64)
}

/// Sorts rules into the canonical order: support descending (by exact agree
/// count), then lexicographic on the canonical text form. Duplicates are
/// dropped.
pub fn canonical_ruleset(rules: impl IntoIterator<Item = Rule>, db: &PreferenceDatabase) -> RuleSet {
    let universe = db.universe();
    let mut keyed: Vec<(usize, String, Rule)> = RuleSet::new(rules)
        .into_iter()
        .map(|r| (agree_count(&r, db), r.canonical_text(universe), r))
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    RuleSet::new(keyed.into_iter().map(|(_, _, r)| r))
}

/// Per-rule agreement statistics shared by the aggregation and scoring
/// paths.
#[derive(Debug)]
pub struct RuleStats {
    pub bitmap: Bitset,
    pub agree: usize,
}

/// Thread-safe memo table of per-rule agreement statistics for one
/// database, keyed by canonical rule text. Entries are idempotent, so
/// concurrent double-computation is harmless.
pub struct MeasureCache<'a> {
    db: &'a PreferenceDatabase,
    inner: RwLock<HashMap<String, Arc<RuleStats>>>,
}

impl<'a> MeasureCache<'a> {
    pub fn new(db: &'a PreferenceDatabase) -> Self {
        MeasureCache {
            db,
            inner: RwLock::new(HashMap::new()),
        }
    }

    pub fn db(&self) -> &PreferenceDatabase {
        self.db
    }

    pub fn stats(&self, rule: &Rule) -> Arc<RuleStats> {
        let key = rule.canonical_text(self.db.universe());
        if let Some(found) = self.inner.read().expect("cache poisoned").get(&key) {
            return Arc::clone(found);
        }
        let bitmap = agreement_bitmap(rule, self.db);
        let stats = Arc::new(RuleStats {
            agree: bitmap.count_ones(),
            bitmap,
        });
        let mut guard = self.inner.write().expect("cache poisoned");
        Arc::clone(guard.entry(key).or_insert(stats))
    }

    /// Cached measure record; the against count comes from the inverse
    /// rule's cached bitmap.
    pub fn record(&self, rule: &Rule) -> Result<MeasureRecord> {
        if self.db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let agree = self.stats(rule).agree;
        let against = self.stats(&rule.inverse()).agree;
        Ok(MeasureRecord::from_counts(agree, against, self.db.len()))
    }
}
