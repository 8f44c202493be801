//! Dataset loading and preference database construction.
//!
//! A preference pair `<t, u>` is emitted when `t` is rated at or above the
//! high-rating threshold and the rating gap `t.rating - u.rating` exceeds
//! `min_gap`. Comparisons between two low-rated transactions are never
//! emitted. Defaults scale the ten-point convention (high >= 8, gap > 1)
//! to the five-point MovieLens scale as high = 4.0, gap = 0.5.
//!
//! Everything here is deterministic given the input bytes, the
//! configuration and the seed.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    AttributeUniverse, PreferenceDatabase, PreferencePair, Transaction, TransactionId,
    TransactionTable,
};

#[derive(Clone, Debug)]
pub struct IngestConfig {
    /// Minimum rating for the preferred side of a pair.
    pub high_rating_threshold: f64,
    /// A pair needs `t.rating - u.rating > min_gap`.
    pub min_gap: f64,
    /// Cap on pairs per user; overflow is down-sampled with the seed.
    pub max_pairs_per_user: Option<usize>,
    /// Train fraction for [`split`], in (0, 1).
    pub split_ratio: f64,
    pub seed: u64,
}

impl IngestConfig {
    /// Defaults for five-point rating scales.
    pub fn five_point(seed: u64) -> Self {
        IngestConfig {
            high_rating_threshold: 4.0,
            min_gap: 0.5,
            max_pairs_per_user: None,
            split_ratio: 0.8,
            seed,
        }
    }

    /// Defaults for ten-point rating scales.
    pub fn ten_point(seed: u64) -> Self {
        IngestConfig {
            high_rating_threshold: 8.0,
            min_gap: 1.0,
            max_pairs_per_user: None,
            split_ratio: 0.8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_gap > 0.0) {
            return Err(Error::InvalidConfig("min_gap must be > 0".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig("split_ratio must be in (0, 1)".into()));
        }
        if !self.high_rating_threshold.is_finite() {
            return Err(Error::InvalidConfig("high_rating_threshold must be finite".into()));
        }
        Ok(())
    }
}

/// One user's preference pairs over the shared transaction index.
pub struct UserPreferenceSet {
    pub user: String,
    pub db: PreferenceDatabase,
}

/// Input record layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceFormat {
    /// `user::item::rating::timestamp` and `item::title::attr|attr|...`
    MovieLens,
    /// `user,item,rating[,timestamp]` and `item,attr|attr|...`
    Csv,
}

/// How the attribute universe is obtained while loading.
pub enum UniversePolicy {
    /// Union of all attributes in the items source, sorted.
    FromItems,
    /// A caller-supplied universe; unknown attributes are an error.
    Fixed(Arc<AttributeUniverse>),
}

struct RatingRow {
    user: String,
    item: String,
    rating: f64,
    timestamp: i64,
}

fn parse_items(
    reader: impl BufRead,
    format: SourceFormat,
) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (item, attrs) = match format {
            SourceFormat::MovieLens => {
                // item::title::attr|attr
                let mut parts = trimmed.splitn(3, "::");
                let item = parts.next().unwrap_or_default();
                let _title = parts.next().ok_or_else(|| Error::MalformedRow {
                    line: lineno,
                    reason: "expected item::title::attributes".into(),
                })?;
                let attrs = parts.next().ok_or_else(|| Error::MalformedRow {
                    line: lineno,
                    reason: "expected item::title::attributes".into(),
                })?;
                (item.to_string(), attrs)
            }
            SourceFormat::Csv => {
                let (item, attrs) = trimmed.split_once(',').ok_or_else(|| Error::MalformedRow {
                    line: lineno,
                    reason: "expected item,attr|attr".into(),
                })?;
                (item.trim().to_string(), attrs)
            }
        };
        if item.is_empty() {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: "empty item id".into(),
            });
        }
        let attrs: Vec<String> = attrs
            .split('|')
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty())
            .collect();
        out.push((item, attrs));
    }
    Ok(out)
}

fn parse_ratings(reader: impl BufRead, format: SourceFormat) -> Result<Vec<RatingRow>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match format {
            SourceFormat::MovieLens => trimmed.split("::").collect(),
            SourceFormat::Csv => trimmed.split(',').collect(),
        };
        if fields.len() < 3 {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: "expected user, item, rating".into(),
            });
        }
        let rating: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedRow {
            line: lineno,
            reason: format!("bad rating `{}`", fields[2]),
        })?;
        let timestamp: i64 = match fields.get(3) {
            Some(ts) => ts.trim().parse().map_err(|_| Error::MalformedRow {
                line: lineno,
                reason: format!("bad timestamp `{}`", ts),
            })?,
            None => 0,
        };
        out.push(RatingRow {
            user: fields[0].trim().to_string(),
            item: fields[1].trim().to_string(),
            rating,
            timestamp,
        });
    }
    Ok(out)
}

/// Loads rating events into transactions.
///
/// One transaction per (user, item); duplicate ratings keep the one with
/// the latest timestamp (last row wins on ties). The universe is the union
/// of all attributes in the items source, so unrated items still contribute
/// their attributes.
pub fn load_transactions(
    ratings: impl BufRead,
    items: impl BufRead,
    format: SourceFormat,
    policy: UniversePolicy,
) -> Result<(Arc<AttributeUniverse>, Vec<Transaction>)> {
    let item_rows = parse_items(items, format)?;
    let universe = match policy {
        UniversePolicy::FromItems => Arc::new(AttributeUniverse::new(
            item_rows.iter().flat_map(|(_, attrs)| attrs.iter().cloned()),
        )?),
        UniversePolicy::Fixed(u) => u,
    };
    let mut item_sets = BTreeMap::new();
    for (item, attrs) in &item_rows {
        item_sets.insert(item.clone(), universe.encode(attrs)?);
    }

    let rating_rows = parse_ratings(ratings, format)?;
    // (user, item) -> (slot in first-seen order, best row index, timestamp)
    let mut latest: BTreeMap<(String, String), (usize, usize, i64)> = BTreeMap::new();
    let mut order = 0usize;
    for (row_idx, row) in rating_rows.iter().enumerate() {
        let key = (row.user.clone(), row.item.clone());
        match latest.get_mut(&key) {
            Some(entry) => {
                if row.timestamp >= entry.2 {
                    entry.1 = row_idx;
                    entry.2 = row.timestamp;
                }
            }
            None => {
                latest.insert(key, (order, row_idx, row.timestamp));
                order += 1;
            }
        }
    }

    let mut kept: Vec<(usize, usize)> = latest.values().map(|&(slot, row, _)| (slot, row)).collect();
    kept.sort_unstable();
    let mut transactions = Vec::with_capacity(kept.len());
    for (slot, row_idx) in kept {
        let row = &rating_rows[row_idx];
        let items = item_sets
            .get(&row.item)
            .ok_or_else(|| Error::UnknownItem(row.item.clone()))?;
        transactions.push(Transaction::new(
            TransactionId(slot as u64),
            row.user.clone(),
            items.clone(),
            row.rating,
        )?);
    }
    Ok((universe, transactions))
}

/// The two emission conditions for a candidate pair `<t, u>`.
pub fn pair_qualifies(t: &Transaction, u: &Transaction, cfg: &IngestConfig) -> bool {
    t.rating >= cfg.high_rating_threshold && t.rating - u.rating > cfg.min_gap
}

fn derived_rng(seed: u64, user: &str, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0]);
    hasher.update(user.as_bytes());
    hasher.update([0]);
    hasher.update(label.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Builds one preference database per user.
///
/// Pairs are generated in transaction-id order; when a user exceeds
/// `max_pairs_per_user` a uniform sample is drawn with a seed derived from
/// `(cfg.seed, user)` and the surviving pairs keep their original order.
pub fn build_preferences(
    universe: Arc<AttributeUniverse>,
    transactions: Vec<Transaction>,
    cfg: &IngestConfig,
) -> Result<Vec<UserPreferenceSet>> {
    cfg.validate()?;
    let mut table = TransactionTable::new();
    for txn in transactions {
        if let Some(existing) = table.get(&txn.id) {
            if *existing != txn {
                return Err(Error::ConflictingTransaction(txn.id.0));
            }
            continue;
        }
        table.insert(txn.id, txn);
    }
    let table = Arc::new(table);

    let mut by_user: BTreeMap<&str, Vec<TransactionId>> = BTreeMap::new();
    for txn in table.values() {
        by_user.entry(txn.user.as_str()).or_default().push(txn.id);
    }

    let mut sets = Vec::new();
    for (user, ids) in by_user {
        let mut pairs = Vec::new();
        for &pref in &ids {
            let t = &table[&pref];
            if t.rating < cfg.high_rating_threshold {
                continue;
            }
            for &dom in &ids {
                if pref == dom {
                    continue;
                }
                if pair_qualifies(t, &table[&dom], cfg) {
                    pairs.push(PreferencePair::new(pref, dom)?);
                }
            }
        }
        if let Some(cap) = cfg.max_pairs_per_user {
            if pairs.len() > cap {
                let mut rng = derived_rng(cfg.seed, user, "pair-cap");
                let mut keep = rand::seq::index::sample(&mut rng, pairs.len(), cap).into_vec();
                keep.sort_unstable();
                pairs = keep.into_iter().map(|i| pairs[i]).collect();
            }
        }
        sets.push(UserPreferenceSet {
            user: user.to_string(),
            db: PreferenceDatabase::new(Arc::clone(&universe), Arc::clone(&table), pairs)?,
        });
    }
    Ok(sets)
}

/// Concatenates per-user databases into one consensus database.
pub fn merge_users(sets: &[UserPreferenceSet]) -> Result<PreferenceDatabase> {
    let first = sets.first().ok_or(Error::EmptyDatabase)?;
    let universe = Arc::clone(first.db.universe());
    let mut table: Option<Arc<TransactionTable>> = None;
    let mut pairs = Vec::new();
    for set in sets {
        if set.db.universe().as_ref() != universe.as_ref() {
            return Err(Error::UniverseMismatch);
        }
        table = Some(match table {
            None => Arc::clone(set.db.transactions()),
            Some(existing) => {
                if Arc::ptr_eq(&existing, set.db.transactions()) {
                    existing
                } else {
                    let mut merged = (*existing).clone();
                    for (id, txn) in set.db.transactions().iter() {
                        match merged.get(id) {
                            Some(old) if old != txn => {
                                return Err(Error::ConflictingTransaction(id.0));
                            }
                            Some(_) => {}
                            None => {
                                merged.insert(*id, txn.clone());
                            }
                        }
                    }
                    Arc::new(merged)
                }
            }
        });
        pairs.extend_from_slice(set.db.pairs());
    }
    PreferenceDatabase::new(universe, table.expect("at least one set"), pairs)
}

/// Disjoint train/test partition of one user's pairs; the train side gets
/// `ceil(split_ratio * n)` pairs. Deterministic for a fixed seed; both
/// sides keep the original pair order.
pub fn split(
    set: &UserPreferenceSet,
    cfg: &IngestConfig,
) -> Result<(PreferenceDatabase, PreferenceDatabase)> {
    cfg.validate()?;
    let n = set.db.len();
    let raw = cfg.split_ratio * n as f64;
    // Guard against floating dust on exact products such as 0.8 * 5.
    let train_n = if (raw - raw.round()).abs() < 1e-9 {
        raw.round() as usize
    } else {
        raw.ceil() as usize
    };
    let train_n = train_n.min(n);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = derived_rng(cfg.seed, &set.user, "split");
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = indices[..train_n].to_vec();
    let mut test_idx: Vec<usize> = indices[train_n..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick = |idx: &[usize]| -> Result<PreferenceDatabase> {
        PreferenceDatabase::new(
            Arc::clone(set.db.universe()),
            Arc::clone(set.db.transactions()),
            idx.iter().map(|&i| set.db.pairs()[i]).collect(),
        )
    };
    Ok((pick(&train_idx)?, pick(&test_idx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures;
    use crate::model::Rule;
    use crate::synth::demo;
    use std::io::Cursor;

    const DEMO_RATINGS: &str = "\
u1,i1,9.5
u1,i2,7.4
u1,i3,6.4
u1,i4,8.6
u1,i5,7.9
";
    const DEMO_ITEMS: &str = "\
i1,A|B|D
i2,B|C|E
i3,B|C
i4,D|E
i5,B|E
";

    #[test]
    fn movielens_rows_parse() {
        let ratings = Cursor::new("1::10::4.5::1234\n");
        let items = Cursor::new("10::Some Title::Drama|Crime\n");
        let (universe, txns) =
            load_transactions(ratings, items, SourceFormat::MovieLens, UniversePolicy::FromItems)
                .unwrap();
        assert_eq!(universe.names(), ["Crime", "Drama"]);
        assert_eq!(txns.len(), 1);
        assert_eq!(txns[0].user, "1");
        assert_eq!(txns[0].rating, 4.5);
        assert_eq!(txns[0].items.bit_string(), "11");
    }

    #[test]
    fn empty_ratings_keep_items_universe() {
        let (universe, txns) = load_transactions(
            Cursor::new(""),
            Cursor::new("10::T::Drama|Crime\n11::T2::Comedy\n"),
            SourceFormat::MovieLens,
            UniversePolicy::FromItems,
        )
        .unwrap();
        assert_eq!(universe.names(), ["Comedy", "Crime", "Drama"]);
        assert!(txns.is_empty());
    }

    #[test]
    fn csv_fixture_loads_five_transactions() {
        let (universe, txns) = load_transactions(
            Cursor::new(DEMO_RATINGS),
            Cursor::new(DEMO_ITEMS),
            SourceFormat::Csv,
            UniversePolicy::FromItems,
        )
        .unwrap();
        assert_eq!(universe.names(), ["A", "B", "C", "D", "E"]);
        let ratings: Vec<f64> = txns.iter().map(|t| t.rating).collect();
        assert_eq!(ratings, [9.5, 7.4, 6.4, 8.6, 7.9]);
        assert_eq!(txns[0].items.bit_string(), "11010");
    }

    #[test]
    fn duplicate_ratings_keep_latest_timestamp() {
        let ratings = Cursor::new("u,i,3.0,100\nu,i,4.5,200\nu,i,2.0,50\n");
        let items = Cursor::new("i,A\n");
        let (_, txns) =
            load_transactions(ratings, items, SourceFormat::Csv, UniversePolicy::FromItems)
                .unwrap();
        assert_eq!(txns.len(), 1);
        assert_eq!(txns[0].rating, 4.5);
    }

    #[test]
    fn unknown_item_and_malformed_rows_error() {
        let err = load_transactions(
            Cursor::new("u,missing,4.0\n"),
            Cursor::new("i,A\n"),
            SourceFormat::Csv,
            UniversePolicy::FromItems,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownItem(item) if item == "missing"));

        let err = load_transactions(
            Cursor::new("u,i,not-a-number\n"),
            Cursor::new("i,A\n"),
            SourceFormat::Csv,
            UniversePolicy::FromItems,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 1, .. }));
    }

    fn demo_sets(cfg: &IngestConfig) -> Vec<UserPreferenceSet> {
        let (universe, txns) = load_transactions(
            Cursor::new(DEMO_RATINGS),
            Cursor::new(DEMO_ITEMS),
            SourceFormat::Csv,
            UniversePolicy::FromItems,
        )
        .unwrap();
        build_preferences(universe, txns, cfg).unwrap()
    }

    #[test]
    fn demo_thresholds_reproduce_the_five_pairs() {
        let cfg = IngestConfig {
            high_rating_threshold: 8.0,
            min_gap: 1.0,
            max_pairs_per_user: None,
            split_ratio: 0.8,
            seed: 1,
        };
        let sets = demo_sets(&cfg);
        assert_eq!(sets.len(), 1);
        let db = &sets[0].db;
        assert_eq!(db.len(), 5);
        // t1 dominates t2, t3, t5; t4 dominates t2, t3.
        let got: Vec<(u64, u64)> = db
            .pairs()
            .iter()
            .map(|p| (p.preferred.0, p.dominated.0))
            .collect();
        assert_eq!(got, [(0, 1), (0, 2), (0, 4), (3, 1), (3, 2)]);
        for pair in db.pairs() {
            let t = db.transaction(pair.preferred).unwrap();
            let u = db.transaction(pair.dominated).unwrap();
            assert!(pair_qualifies(t, u, &cfg));
        }
    }

    #[test]
    fn raising_threshold_drops_t4_pairs() {
        let cfg = IngestConfig {
            high_rating_threshold: 9.0,
            min_gap: 1.0,
            max_pairs_per_user: None,
            split_ratio: 0.8,
            seed: 1,
        };
        let sets = demo_sets(&cfg);
        let got: Vec<(u64, u64)> = sets[0]
            .db
            .pairs()
            .iter()
            .map(|p| (p.preferred.0, p.dominated.0))
            .collect();
        assert_eq!(got, [(0, 1), (0, 2), (0, 4)]);
    }

    #[test]
    fn equal_ratings_yield_no_pairs() {
        let ratings = "u,a,4.0\nu,b,4.0\nu,c,4.0\n";
        let items = "a,A\nb,B\nc,C\n";
        let (universe, txns) = load_transactions(
            Cursor::new(ratings),
            Cursor::new(items),
            SourceFormat::Csv,
            UniversePolicy::FromItems,
        )
        .unwrap();
        let sets = build_preferences(universe, txns, &IngestConfig::five_point(1)).unwrap();
        assert_eq!(sets.len(), 1);
        assert!(sets[0].db.is_empty());
    }

    #[test]
    fn pair_cap_samples_deterministically() {
        let cfg = IngestConfig {
            high_rating_threshold: 8.0,
            min_gap: 1.0,
            max_pairs_per_user: Some(3),
            split_ratio: 0.8,
            seed: 42,
        };
        let a = demo_sets(&cfg);
        let b = demo_sets(&cfg);
        assert_eq!(a[0].db.len(), 3);
        assert_eq!(a[0].db.pairs(), b[0].db.pairs());
    }

    #[test]
    fn merge_concatenates_and_preserves_agreement() {
        let db = demo::database();
        let universe = Arc::clone(db.universe());
        let table = Arc::clone(db.transactions());
        let mk = |user: &str, pairs: &[PreferencePair]| UserPreferenceSet {
            user: user.into(),
            db: PreferenceDatabase::new(Arc::clone(&universe), Arc::clone(&table), pairs.to_vec())
                .unwrap(),
        };
        let s1 = mk("a", &db.pairs()[..3]);
        let s2 = mk("b", &db.pairs()[3..]);
        let merged = merge_users(&[s1, s2]).unwrap();
        assert_eq!(merged.len(), 5);

        let rule = Rule::from_names(&universe, &["D"], &["C"], &[]).unwrap();
        let merged_count = measures::agree_count(&rule, &merged);
        let split_sets = [mk("a", &db.pairs()[..3]), mk("b", &db.pairs()[3..])];
        let sum: usize = split_sets
            .iter()
            .map(|s| measures::agree_count(&rule, &s.db))
            .sum();
        assert_eq!(merged_count, sum);

        let single = merge_users(&split_sets[..1]).unwrap();
        assert_eq!(single.pairs(), &db.pairs()[..3]);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let db = demo::database();
        let set = UserPreferenceSet {
            user: "u1".into(),
            db: PreferenceDatabase::new(
                Arc::clone(db.universe()),
                Arc::clone(db.transactions()),
                db.pairs().to_vec(),
            )
            .unwrap(),
        };
        let cfg = IngestConfig {
            split_ratio: 0.8,
            ..IngestConfig::ten_point(9)
        };
        let (train, test) = split(&set, &cfg).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 1);
        let (train2, test2) = split(&set, &cfg).unwrap();
        assert_eq!(train.pairs(), train2.pairs());
        assert_eq!(test.pairs(), test2.pairs());

        let mut union: Vec<PreferencePair> = train
            .pairs()
            .iter()
            .chain(test.pairs())
            .copied()
            .collect();
        union.sort();
        let mut all = db.pairs().to_vec();
        all.sort();
        assert_eq!(union, all);
    }
}
