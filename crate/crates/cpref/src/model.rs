//! Domain types: attribute universe, itemset encoding, transactions,
//! preference pairs and databases, and contextual preference rules.
//!
//! A contextual preference rule `i+ > i- | X` states that under context `X`
//! the plus itemset is preferred over the minus itemset. A preference pair
//! `<t, u>` agrees with the rule when `X ∪ i+ ⊆ t`, `X ∪ i- ⊆ u`,
//! `i- ∩ t = ∅` and `i+ ∩ u = ∅`.
//!
//! All types are immutable after construction and safe to share across
//! threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::bits::Bitset;
use crate::error::{Error, Result};

/// Globally ordered attribute vocabulary. Names are unique and sorted
/// lexicographically, which fixes the bit position of every attribute and
/// makes itemset encodings reproducible across runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeUniverse {
    names: Vec<String>,
}

impl AttributeUniverse {
    pub fn new(names: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        for name in &names {
            if name.is_empty() {
                return Err(Error::InvalidAttribute {
                    name: name.clone(),
                    reason: "empty name",
                });
            }
            if name == "NULL" {
                return Err(Error::InvalidAttribute {
                    name: name.clone(),
                    reason: "NULL is reserved for the empty context",
                });
            }
            if name.contains(',') || name.contains('|') || name.contains('>') {
                return Err(Error::InvalidAttribute {
                    name: name.clone(),
                    reason: "name may not contain ',', '|' or '>'",
                });
            }
        }
        Ok(AttributeUniverse { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Encodes attribute names into a bit vector over this universe.
    pub fn encode(&self, names: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Itemset> {
        let mut bits = Bitset::new(self.len());
        for name in names {
            let name = name.as_ref();
            let idx = self
                .position(name)
                .ok_or_else(|| Error::UnknownAttribute(name.to_string()))?;
            bits.set(idx);
        }
        Ok(Itemset { bits })
    }

    /// Decodes an itemset back into sorted attribute names.
    pub fn decode<'a>(&'a self, itemset: &'a Itemset) -> impl Iterator<Item = &'a str> + 'a {
        itemset.bits.ones().map(move |i| self.name(i))
    }
}

/// Attribute set over a fixed universe, stored as a bit vector whose k-th
/// bit marks presence of the k-th attribute in lexicographic order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Itemset {
    bits: Bitset,
}

impl Itemset {
    pub fn empty(width: usize) -> Self {
        Itemset {
            bits: Bitset::new(width),
        }
    }

    pub fn from_bits(bits: Bitset) -> Self {
        Itemset { bits }
    }

    pub fn bits(&self) -> &Bitset {
        &self.bits
    }

    pub fn width(&self) -> usize {
        self.bits.width()
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn union(&self, other: &Itemset) -> Itemset {
        Itemset {
            bits: self.bits.union(&other.bits),
        }
    }

    pub fn is_subset_of(&self, other: &Itemset) -> bool {
        self.bits.is_subset_of(&other.bits)
    }

    pub fn is_disjoint_from(&self, other: &Itemset) -> bool {
        self.bits.is_disjoint_from(&other.bits)
    }

    /// Positional bit string, e.g. `11010` over a five-attribute universe.
    pub fn bit_string(&self) -> String {
        self.bits.bit_string()
    }
}

impl fmt::Debug for Itemset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Itemset({})", self.bit_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TransactionId(pub u64);

impl fmt::Display for TransactionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// A rated event: one user, one item set, one rating.
#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub id: TransactionId,
    pub user: String,
    pub items: Itemset,
    pub rating: f64,
}

impl Transaction {
    pub fn new(id: TransactionId, user: impl Into<String>, items: Itemset, rating: f64) -> Result<Self> {
        if !rating.is_finite() {
            return Err(Error::InvalidRating);
        }
        Ok(Transaction {
            id,
            user: user.into(),
            items,
            rating,
        })
    }
}

pub type TransactionTable = BTreeMap<TransactionId, Transaction>;

/// Ordered pair asserting the first transaction is preferred to the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PreferencePair {
    pub preferred: TransactionId,
    pub dominated: TransactionId,
}

impl PreferencePair {
    pub fn new(preferred: TransactionId, dominated: TransactionId) -> Result<Self> {
        if preferred == dominated {
            return Err(Error::SelfPair);
        }
        Ok(PreferencePair {
            preferred,
            dominated,
        })
    }
}

/// A set of preference pairs plus the transaction index they resolve in.
///
/// Internally keeps a dense copy of the referenced transactions' item bits
/// so that agreement scans run over flat memory.
pub struct PreferenceDatabase {
    universe: Arc<AttributeUniverse>,
    transactions: Arc<TransactionTable>,
    pairs: Vec<PreferencePair>,
    // Dense layout for agreement scans.
    dense_ids: Vec<TransactionId>,
    dense_blocks: Vec<u64>,
    blocks_per_txn: usize,
    pair_refs: Vec<(u32, u32)>,
}

impl PreferenceDatabase {
    pub fn new(
        universe: Arc<AttributeUniverse>,
        transactions: Arc<TransactionTable>,
        pairs: Vec<PreferencePair>,
    ) -> Result<Self> {
        let width = universe.len();
        let blocks_per_txn = width.div_ceil(64).max(1);

        let mut dense_index: BTreeMap<TransactionId, u32> = BTreeMap::new();
        let mut dense_ids = Vec::new();
        let mut dense_blocks = Vec::new();
        let mut pair_refs = Vec::with_capacity(pairs.len());

        let resolve = |id: TransactionId,
                           dense_index: &mut BTreeMap<TransactionId, u32>,
                           dense_ids: &mut Vec<TransactionId>,
                           dense_blocks: &mut Vec<u64>|
         -> Result<u32> {
            if let Some(&at) = dense_index.get(&id) {
                return Ok(at);
            }
            let txn = transactions.get(&id).ok_or(Error::DanglingPair(id.0))?;
            if txn.items.width() != width {
                return Err(Error::WidthMismatch {
                    got: txn.items.width(),
                    expected: width,
                });
            }
            let at = dense_ids.len() as u32;
            dense_ids.push(id);
            let blocks = txn.items.bits().blocks();
            dense_blocks.extend_from_slice(blocks);
            dense_blocks.resize(dense_ids.len() * blocks_per_txn, 0);
            dense_index.insert(id, at);
            Ok(at)
        };

        for pair in &pairs {
            let t = resolve(pair.preferred, &mut dense_index, &mut dense_ids, &mut dense_blocks)?;
            let u = resolve(pair.dominated, &mut dense_index, &mut dense_ids, &mut dense_blocks)?;
            pair_refs.push((t, u));
        }

        Ok(PreferenceDatabase {
            universe,
            transactions,
            pairs,
            dense_ids,
            dense_blocks,
            blocks_per_txn,
            pair_refs,
        })
    }

    pub fn universe(&self) -> &Arc<AttributeUniverse> {
        &self.universe
    }

    pub fn transactions(&self) -> &Arc<TransactionTable> {
        &self.transactions
    }

    pub fn transaction(&self, id: TransactionId) -> Option<&Transaction> {
        self.transactions.get(&id)
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The two transactions of pair `index`.
    pub fn pair_transactions(&self, index: usize) -> (&Transaction, &Transaction) {
        let pair = &self.pairs[index];
        (
            self.transactions.get(&pair.preferred).expect("validated"),
            self.transactions.get(&pair.dominated).expect("validated"),
        )
    }

    pub(crate) fn blocks_per_txn(&self) -> usize {
        self.blocks_per_txn
    }

    pub(crate) fn dense_transaction_count(&self) -> usize {
        self.dense_ids.len()
    }

    pub(crate) fn dense_txn_blocks(&self, dense: usize) -> &[u64] {
        let start = dense * self.blocks_per_txn;
        &self.dense_blocks[start..start + self.blocks_per_txn]
    }

    pub(crate) fn pair_refs(&self) -> &[(u32, u32)] {
        &self.pair_refs
    }
}

impl fmt::Debug for PreferenceDatabase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreferenceDatabase")
            .field("pairs", &self.pairs.len())
            .field("transactions", &self.dense_ids.len())
            .field("attributes", &self.universe.len())
            .finish()
    }
}

/// Contextual preference rule `i+ > i- | X`. The three slots are pairwise
/// disjoint; plus and minus are non-empty.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    plus: Itemset,
    minus: Itemset,
    context: Itemset,
}

impl Rule {
    pub fn new(plus: Itemset, minus: Itemset, context: Itemset) -> Result<Self> {
        if plus.width() != minus.width() || plus.width() != context.width() {
            return Err(Error::WidthMismatch {
                got: minus.width(),
                expected: plus.width(),
            });
        }
        if plus.is_empty() || minus.is_empty() {
            return Err(Error::EmptySide);
        }
        if !plus.is_disjoint_from(&minus)
            || !plus.is_disjoint_from(&context)
            || !minus.is_disjoint_from(&context)
        {
            return Err(Error::OverlappingSlots);
        }
        Ok(Rule {
            plus,
            minus,
            context,
        })
    }

    /// Convenience constructor from attribute names.
    pub fn from_names(
        universe: &AttributeUniverse,
        plus: &[&str],
        minus: &[&str],
        context: &[&str],
    ) -> Result<Self> {
        Rule::new(
            universe.encode(plus)?,
            universe.encode(minus)?,
            universe.encode(context)?,
        )
    }

    pub fn plus(&self) -> &Itemset {
        &self.plus
    }

    pub fn minus(&self) -> &Itemset {
        &self.minus
    }

    pub fn context(&self) -> &Itemset {
        &self.context
    }

    pub fn width(&self) -> usize {
        self.plus.width()
    }

    /// The swapped rule `i- > i+ | X`. Agreement with the inverse is what
    /// counts against the original rule.
    pub fn inverse(&self) -> Rule {
        Rule {
            plus: self.minus.clone(),
            minus: self.plus.clone(),
            context: self.context.clone(),
        }
    }

    /// Canonical text form: `i+ > i- | X`, items comma-separated and
    /// lexicographically sorted inside each slot, `NULL` for an empty
    /// context.
    pub fn canonical_text(&self, universe: &AttributeUniverse) -> String {
        let slot = |s: &Itemset| -> String {
            let names: Vec<&str> = universe.decode(s).collect();
            names.join(",")
        };
        let ctx = if self.context.is_empty() {
            "NULL".to_string()
        } else {
            slot(&self.context)
        };
        format!("{} > {} | {}", slot(&self.plus), slot(&self.minus), ctx)
    }

    /// Parses the canonical text form back into a rule.
    pub fn parse(text: &str, universe: &AttributeUniverse) -> Result<Self> {
        let bad = || Error::InvalidRuleText(text.to_string());
        let (sides, ctx) = text.rsplit_once(" | ").ok_or_else(bad)?;
        let (plus, minus) = sides.split_once(" > ").ok_or_else(bad)?;
        let split = |slot: &str| -> Vec<String> {
            slot.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let ctx_names = if ctx.trim() == "NULL" {
            Vec::new()
        } else {
            split(ctx)
        };
        Rule::new(
            universe.encode(split(plus))?,
            universe.encode(split(minus))?,
            universe.encode(ctx_names)?,
        )
    }
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Rule({} > {} | {})",
            self.plus.bit_string(),
            self.minus.bit_string(),
            self.context.bit_string()
        )
    }
}

/// Does the pair support the rule? Pure bit logic over the two transactions.
pub fn rule_agrees(rule: &Rule, pair: &PreferencePair, db: &PreferenceDatabase) -> Result<bool> {
    let t = db
        .transaction(pair.preferred)
        .ok_or(Error::DanglingPair(pair.preferred.0))?;
    let u = db
        .transaction(pair.dominated)
        .ok_or(Error::DanglingPair(pair.dominated.0))?;
    Ok(agrees_with_items(rule, &t.items, &u.items))
}

pub(crate) fn agrees_with_items(rule: &Rule, t: &Itemset, u: &Itemset) -> bool {
    rule.context().is_subset_of(t)
        && rule.plus().is_subset_of(t)
        && rule.context().is_subset_of(u)
        && rule.minus().is_subset_of(u)
        && rule.minus().is_disjoint_from(t)
        && rule.plus().is_disjoint_from(u)
}

/// An ordered, duplicate-free collection of rules.
///
/// The constructors preserve the caller's order after de-duplication; the
/// canonical order (support descending, then lexicographic on the text form)
/// is produced by [`crate::measures::canonical_ruleset`], which is what the
/// miner and the aggregation use.
#[derive(Clone, Debug, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: impl IntoIterator<Item = Rule>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let rules = rules
            .into_iter()
            .filter(|r| seen.insert(r.clone()))
            .collect();
        RuleSet { rules }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rule> {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn contains(&self, rule: &Rule) -> bool {
        self.rules.contains(rule)
    }
}

impl IntoIterator for RuleSet {
    type Item = Rule;
    type IntoIter = std::vec::IntoIter<Rule>;

    fn into_iter(self) -> Self::IntoIter {
        self.rules.into_iter()
    }
}

impl<'a> IntoIterator for &'a RuleSet {
    type Item = &'a Rule;
    type IntoIter = std::slice::Iter<'a, Rule>;

    fn into_iter(self) -> Self::IntoIter {
        self.rules.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::demo;

    #[test]
    fn universe_is_sorted_and_indexed() {
        let u = AttributeUniverse::new(["E", "B", "A", "D", "C", "B"]).unwrap();
        assert_eq!(u.names(), ["A", "B", "C", "D", "E"]);
        assert_eq!(u.position("D"), Some(3));
        assert_eq!(u.position("Z"), None);
    }

    #[test]
    fn universe_rejects_reserved_names() {
        assert!(AttributeUniverse::new(["NULL"]).is_err());
        assert!(AttributeUniverse::new(["a,b"]).is_err());
        assert!(AttributeUniverse::new([""]).is_err());
    }

    #[test]
    fn encode_matches_positional_layout() {
        let u = AttributeUniverse::new(["A", "B", "C", "D", "E"]).unwrap();
        // {A,B,D} over (A,B,C,D,E) encodes as 11010.
        let t1 = u.encode(["A", "B", "D"]).unwrap();
        assert_eq!(t1.bit_string(), "11010");
        assert_eq!(u.encode(Vec::<&str>::new()).unwrap().bit_string(), "00000");
        assert_eq!(u.encode(["E"]).unwrap().bit_string(), "00001");
        assert!(matches!(
            u.encode(["F"]),
            Err(Error::UnknownAttribute(name)) if name == "F"
        ));
    }

    #[test]
    fn encode_decode_roundtrip() {
        let u = AttributeUniverse::new(["A", "B", "C", "D", "E"]).unwrap();
        let set = u.encode(["B", "E"]).unwrap();
        let names: Vec<&str> = u.decode(&set).collect();
        assert_eq!(names, ["B", "E"]);
    }

    #[test]
    fn rule_construction_enforces_invariants() {
        let u = AttributeUniverse::new(["A", "B", "C"]).unwrap();
        let a = u.encode(["A"]).unwrap();
        let b = u.encode(["B"]).unwrap();
        let c = u.encode(["C"]).unwrap();
        let empty = Itemset::empty(3);
        assert!(Rule::new(a.clone(), b.clone(), c.clone()).is_ok());
        assert!(matches!(
            Rule::new(a.clone(), a.clone(), empty.clone()),
            Err(Error::OverlappingSlots)
        ));
        assert!(matches!(
            Rule::new(a.clone(), empty.clone(), c.clone()),
            Err(Error::EmptySide)
        ));
        assert!(matches!(
            Rule::new(empty.clone(), b, c),
            Err(Error::EmptySide)
        ));
    }

    #[test]
    fn inverse_swaps_sides() {
        let u = AttributeUniverse::new(["A", "B", "C", "D", "E"]).unwrap();
        let r = Rule::from_names(&u, &["D"], &["E"], &["B"]).unwrap();
        let inv = r.inverse();
        assert_eq!(inv.canonical_text(&u), "E > D | B");
        assert_eq!(inv.inverse(), r);

        let r2 = Rule::from_names(&u, &["A"], &["C"], &[]).unwrap();
        assert_eq!(r2.inverse().canonical_text(&u), "C > A | NULL");
    }

    #[test]
    fn canonical_text_roundtrip() {
        let u = AttributeUniverse::new(["A", "B", "C", "D", "E"]).unwrap();
        let r = Rule::from_names(&u, &["A", "D"], &["E"], &["B", "C"]).unwrap();
        let text = r.canonical_text(&u);
        assert_eq!(text, "A,D > E | B,C");
        assert_eq!(Rule::parse(&text, &u).unwrap(), r);

        let ctx_free = Rule::from_names(&u, &["D"], &["C"], &[]).unwrap();
        assert_eq!(ctx_free.canonical_text(&u), "D > C | NULL");
        assert_eq!(Rule::parse("D > C | NULL", &u).unwrap(), ctx_free);
        assert!(Rule::parse("gibberish", &u).is_err());
    }

    #[test]
    fn rule_agreement_on_demo_pairs() {
        let db = demo::database();
        let u = db.universe();
        let rule = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        // <t1,t2> agrees, <t1,t3> does not (t3 lacks E).
        assert!(rule_agrees(&rule, &db.pairs()[0], &db).unwrap());
        assert!(!rule_agrees(&rule, &db.pairs()[1], &db).unwrap());
    }

    #[test]
    fn dangling_pair_is_reported() {
        let db = demo::database();
        let u = db.universe();
        let rule = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let pair = PreferencePair::new(TransactionId(99), TransactionId(1)).unwrap();
        assert!(matches!(
            rule_agrees(&rule, &pair, &db),
            Err(Error::DanglingPair(99))
        ));
    }

    #[test]
    fn ruleset_dedups_preserving_order() {
        let u = AttributeUniverse::new(["A", "B", "C"]).unwrap();
        let r1 = Rule::from_names(&u, &["A"], &["B"], &[]).unwrap();
        let r2 = Rule::from_names(&u, &["B"], &["C"], &[]).unwrap();
        let set = RuleSet::new(vec![r1.clone(), r2.clone(), r1.clone()]);
        assert_eq!(set.len(), 2);
        assert_eq!(set.rules()[0], r1);
        assert_eq!(set.rules()[1], r2);
    }
}
