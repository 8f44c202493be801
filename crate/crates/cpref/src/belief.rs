//! Belief systems and the interestingness machinery.
//!
//! A belief system holds the aggregated consensus ruleset as its evidence.
//! A rule's belief degree towards the system is its maximum rule-to-rule
//! belief against any evidence rule; its deviation degree is the mean
//! belief minus one. Interestingness keeps the belief when it dominates
//! the absolute deviation (a generalized rule) and the signed deviation
//! otherwise (a personalized rule).
//!
//! Rule-to-rule belief functions are pluggable. Two are built in:
//!
//! * weighted cosine over the slot-wise bit vectors (structural, ignores
//!   the database),
//! * absolute Pearson correlation of the pair-agreement indicators.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::measures::{self, MeasureCache};
use crate::model::{PreferenceDatabase, Rule, RuleSet};

/// Everything a belief function may need about one rule: the rule itself
/// and its agreement statistics over the evidence database.
#[derive(Clone, Debug)]
pub struct RuleEvidence {
    pub rule: Rule,
    pub text: String,
    pub bitmap: Bitset,
    pub agree: usize,
    pub pairs: usize,
}

/// Prepares the agreement evidence of a rule over `db`.
pub fn prepare_evidence(rule: &Rule, db: &PreferenceDatabase) -> RuleEvidence {
    let bitmap = measures::agreement_bitmap(rule, db);
    RuleEvidence {
        text: rule.canonical_text(db.universe()),
        agree: bitmap.count_ones(),
        bitmap,
        rule: rule.clone(),
        pairs: db.len(),
    }
}

/// A pure rule-to-rule belief degree.
pub trait BeliefFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn belief(&self, a: &RuleEvidence, b: &RuleEvidence) -> Result<f64>;
}

/// Slot weights for the cosine belief. The empty-context regime replaces
/// the standard weights when BOTH compared rules have an empty context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineWeights {
    pub standard: [f64; 3],
    pub empty_context: [f64; 3],
}

impl CosineWeights {
    /// The sample weights: (1.2, 1.5, 0.6), switching to (1.5, 1.5, 0)
    /// when both contexts are empty.
    pub fn paper() -> Self {
        CosineWeights {
            standard: [1.2, 1.5, 0.6],
            empty_context: [1.5, 1.5, 0.0],
        }
    }

    /// One weight triple for both regimes. `uniform(1.0)` reduces the
    /// belief to plain cosine similarity of the concatenated slot vectors.
    pub fn uniform(k: f64) -> Self {
        CosineWeights {
            standard: [k, k, k],
            empty_context: [k, k, k],
        }
    }

    pub fn new(k1: f64, k2: f64, k3: f64) -> Self {
        CosineWeights {
            standard: [k1, k2, k3],
            empty_context: [k1, k2, k3],
        }
    }

    pub fn with_empty_context(mut self, k1: f64, k2: f64, k3: f64) -> Self {
        self.empty_context = [k1, k2, k3];
        self
    }

    fn validate(&self) -> Result<()> {
        for k in self.standard.iter().chain(self.empty_context.iter()) {
            if !(k.is_finite() && *k >= 0.0) {
                return Err(Error::InvalidBeliefParameter {
                    function: "cos".into(),
                    reason: "weights must be finite and non-negative".into(),
                });
            }
        }
        Ok(())
    }
}

/// Weighted cosine belief:
/// `(k1*<p1,p2> + k2*<m1,m2> + k3*<x1,x2>) / (|r1| * |r2|)` where the dot
/// products are popcounts of slot intersections and `|r|` is the Euclidean
/// norm of the concatenated slot vector. Purely structural; the database
/// plays no role. Note that self-belief may exceed 1 under non-uniform
/// weights; deviation handles that through its absolute value.
pub fn cosine_belief(r1: &Rule, r2: &Rule, weights: &CosineWeights) -> Result<f64> {
    weights.validate()?;
    let n1 = r1.plus().len() + r1.minus().len() + r1.context().len();
    let n2 = r2.plus().len() + r2.minus().len() + r2.context().len();
    if n1 == 0 || n2 == 0 {
        return Err(Error::ZeroNorm);
    }
    let ks = if r1.context().is_empty() && r2.context().is_empty() {
        weights.empty_context
    } else {
        weights.standard
    };
    let dot_plus = r1.plus().bits().intersection_count(r2.plus().bits()) as f64;
    let dot_minus = r1.minus().bits().intersection_count(r2.minus().bits()) as f64;
    let dot_ctx = r1.context().bits().intersection_count(r2.context().bits()) as f64;
    let numer = ks[0] * dot_plus + ks[1] * dot_minus + ks[2] * dot_ctx;
    Ok(numer / ((n1 as f64).sqrt() * (n2 as f64).sqrt()))
}

/// Absolute Pearson correlation of the two pair-agreement indicators:
/// `|P12 - P1*P2| / sqrt(P1(1-P1) * P2(1-P2))`, or 0 when either indicator
/// is constant. The population and unbiased estimators give the same value
/// because the `n/(n-1)` factors cancel in the ratio.
pub fn correlation_belief(r1: &Rule, r2: &Rule, db: &PreferenceDatabase) -> Result<f64> {
    if db.len() < 2 {
        return Err(Error::DatabaseTooSmall(db.len()));
    }
    let a = prepare_evidence(r1, db);
    let b = prepare_evidence(r2, db);
    correlation_from_evidence(&a, &b)
}

fn correlation_from_evidence(a: &RuleEvidence, b: &RuleEvidence) -> Result<f64> {
    debug_assert_eq!(a.pairs, b.pairs, "evidence from different databases");
    let n = a.pairs;
    if n < 2 {
        return Err(Error::DatabaseTooSmall(n));
    }
    let (n, a1, a2) = (n as i128, a.agree as i128, b.agree as i128);
    let var1 = (a1 * (n - a1)) as f64;
    let var2 = (a2 * (n - a2)) as f64;
    if var1 == 0.0 || var2 == 0.0 {
        return Ok(0.0);
    }
    let joint = a.bitmap.intersection_count(&b.bitmap) as i128;
    let numer = (n * joint - a1 * a2).unsigned_abs() as f64;
    Ok(numer / (var1.sqrt() * var2.sqrt()))
}

/// Cosine belief as a [`BeliefFunction`].
pub struct CosineBelief {
    weights: CosineWeights,
}

impl CosineBelief {
    pub fn new(weights: CosineWeights) -> Result<Self> {
        weights.validate()?;
        Ok(CosineBelief { weights })
    }

    pub fn paper() -> Self {
        CosineBelief {
            weights: CosineWeights::paper(),
        }
    }
}

impl BeliefFunction for CosineBelief {
    fn name(&self) -> &'static str {
        "cos"
    }

    fn belief(&self, a: &RuleEvidence, b: &RuleEvidence) -> Result<f64> {
        cosine_belief(&a.rule, &b.rule, &self.weights)
    }
}

/// Correlation belief as a [`BeliefFunction`].
#[derive(Default)]
pub struct CorrelationBelief;

impl BeliefFunction for CorrelationBelief {
    fn name(&self) -> &'static str {
        "cov"
    }

    fn belief(&self, a: &RuleEvidence, b: &RuleEvidence) -> Result<f64> {
        correlation_from_evidence(a, b)
    }
}

/// Named belief function plus parameters, the registry's lookup key.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BeliefFunctionSpec {
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

impl BeliefFunctionSpec {
    pub fn named(name: impl Into<String>) -> Self {
        BeliefFunctionSpec {
            name: name.into(),
            parameters: BTreeMap::new(),
        }
    }
}

/// Instantiates a registered belief function.
///
/// `cos` (alias `cosine`) accepts `k1,k2,k3` and `ek1,ek2,ek3` for the
/// empty-context regime; unset parameters default to the sample weights.
/// `cov` (alias `correlation`) has no parameters.
pub fn build_belief_function(spec: &BeliefFunctionSpec) -> Result<Box<dyn BeliefFunction>> {
    match spec.name.as_str() {
        "cos" | "cosine" => {
            for key in spec.parameters.keys() {
                if !matches!(key.as_str(), "k1" | "k2" | "k3" | "ek1" | "ek2" | "ek3") {
                    return Err(Error::InvalidBeliefParameter {
                        function: spec.name.clone(),
                        reason: format!("unknown parameter `{key}`"),
                    });
                }
            }
            let paper = CosineWeights::paper();
            let get = |key: &str, fallback: f64| spec.parameters.get(key).copied().unwrap_or(fallback);
            let weights = CosineWeights {
                standard: [
                    get("k1", paper.standard[0]),
                    get("k2", paper.standard[1]),
                    get("k3", paper.standard[2]),
                ],
                empty_context: [
                    get("ek1", paper.empty_context[0]),
                    get("ek2", paper.empty_context[1]),
                    get("ek3", paper.empty_context[2]),
                ],
            };
            Ok(Box::new(CosineBelief::new(weights)?))
        }
        "cov" | "correlation" => {
            if let Some(key) = spec.parameters.keys().next() {
                return Err(Error::InvalidBeliefParameter {
                    function: spec.name.clone(),
                    reason: format!("unknown parameter `{key}`"),
                });
            }
            Ok(Box::new(CorrelationBelief))
        }
        other => Err(Error::UnknownBeliefFunction(other.to_string())),
    }
}

/// The evidence side of scoring: the aggregated consensus rules with their
/// cached agreement statistics over the consensus database. Immutable
/// after construction.
pub struct BeliefSystem {
    rules: RuleSet,
    evidences: Vec<RuleEvidence>,
    db: Arc<PreferenceDatabase>,
}

impl BeliefSystem {
    pub fn new(rules: RuleSet, db: Arc<PreferenceDatabase>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::EmptySystem);
        }
        if db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let cache = MeasureCache::new(&db);
        let evidences = rules
            .iter()
            .map(|rule| {
                let stats = cache.stats(rule);
                RuleEvidence {
                    text: rule.canonical_text(db.universe()),
                    bitmap: stats.bitmap.clone(),
                    agree: stats.agree,
                    rule: rule.clone(),
                    pairs: db.len(),
                }
            })
            .collect();
        Ok(BeliefSystem {
            rules,
            evidences,
            db,
        })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn evidences(&self) -> &[RuleEvidence] {
        &self.evidences
    }

    pub fn db(&self) -> &Arc<PreferenceDatabase> {
        &self.db
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Maximum belief of `rule` against any evidence rule of the system.
pub fn belief_to_system(
    rule: &Rule,
    system: &BeliefSystem,
    function: &dyn BeliefFunction,
) -> Result<f64> {
    let evidence = prepare_evidence(rule, system.db());
    belief_from_evidence(&evidence, system, function)
}

fn belief_from_evidence(
    evidence: &RuleEvidence,
    system: &BeliefSystem,
    function: &dyn BeliefFunction,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for other in system.evidences() {
        best = best.max(function.belief(evidence, other)?);
    }
    Ok(best)
}

/// How the deviation aggregates the per-rule beliefs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationMode {
    /// `mean(belief) - 1`; the default reading.
    #[default]
    MeanMinusOne,
    /// `(sum(belief) - 1) / n`; compatibility variant, shrinks with the
    /// system size.
    SumMinusOneOverN,
}

/// Mean belief shortfall of `rule` from full agreement with the system.
pub fn deviation_to_system(
    rule: &Rule,
    system: &BeliefSystem,
    function: &dyn BeliefFunction,
) -> Result<f64> {
    deviation_to_system_with(rule, system, function, DeviationMode::MeanMinusOne)
}

pub fn deviation_to_system_with(
    rule: &Rule,
    system: &BeliefSystem,
    function: &dyn BeliefFunction,
    mode: DeviationMode,
) -> Result<f64> {
    let evidence = prepare_evidence(rule, system.db());
    deviation_from_evidence(&evidence, system, function, mode)
}

fn deviation_from_evidence(
    evidence: &RuleEvidence,
    system: &BeliefSystem,
    function: &dyn BeliefFunction,
    mode: DeviationMode,
) -> Result<f64> {
    let mut sum = 0.0;
    for other in system.evidences() {
        sum += function.belief(evidence, other)?;
    }
    let n = system.len() as f64;
    Ok(match mode {
        DeviationMode::MeanMinusOne => sum / n - 1.0,
        DeviationMode::SumMinusOneOverN => (sum - 1.0) / n,
    })
}

/// Which side of the interestingness split a rule falls on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Belief dominates: the rule restates consensus knowledge.
    Generalized,
    /// Deviation dominates: the rule is personal.
    Personalized,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Generalized => write!(f, "generalized"),
            Branch::Personalized => write!(f, "personalized"),
        }
    }
}

/// Interestingness: the belief when `belief >= |deviation|` (ties keep the
/// belief branch), the signed deviation otherwise.
pub fn interestingness(belief: f64, deviation: f64) -> (f64, Branch) {
    if belief >= deviation.abs() {
        (belief, Branch::Generalized)
    } else {
        (deviation, Branch::Personalized)
    }
}

/// One scored rule. Support and confidence are measured on the database
/// the ruleset was mined from; belief and deviation are always taken
/// against the system's evidence database.
#[derive(Clone, Debug)]
pub struct ScoredRule {
    pub rule: Rule,
    pub text: String,
    pub support: f64,
    pub confidence: Option<f64>,
    pub belief: f64,
    pub deviation: f64,
    pub eta: f64,
    pub branch: Branch,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ScoreOptions {
    pub deviation_mode: DeviationMode,
}

/// Scores every rule of `rules` against the system. Output order equals
/// input order; scoring of distinct rules is independent and runs in
/// parallel.
pub fn score_ruleset(
    rules: &RuleSet,
    system: &BeliefSystem,
    function: &dyn BeliefFunction,
    db: &PreferenceDatabase,
    options: ScoreOptions,
) -> Result<Vec<ScoredRule>> {
    if rules.is_empty() {
        return Err(Error::EmptyRuleset);
    }
    // When the measurement database is the system's own evidence database,
    // one bidirectional scan serves both the measures and the evidence.
    let shared_db = std::ptr::eq(db, Arc::as_ptr(system.db()));
    rules
        .rules()
        .par_iter()
        .map(|rule| {
            let evidence_db = system.db();
            let (forward, reverse) = measures::bidirectional_bitmaps(rule, evidence_db);
            let evidence = RuleEvidence {
                text: rule.canonical_text(evidence_db.universe()),
                agree: forward.count_ones(),
                bitmap: forward,
                rule: rule.clone(),
                pairs: evidence_db.len(),
            };
            let record = if shared_db {
                if db.is_empty() {
                    return Err(Error::EmptyDatabase);
                }
                let against = reverse.count_ones();
                crate::measures::MeasureRecord {
                    agree: evidence.agree,
                    against,
                    support: evidence.agree as f64 / db.len() as f64,
                    confidence: if evidence.agree + against > 0 {
                        Some(evidence.agree as f64 / (evidence.agree + against) as f64)
                    } else {
                        None
                    },
                }
            } else {
                measures::measure(rule, db)?
            };
            let belief = belief_from_evidence(&evidence, system, function)?;
            let deviation =
                deviation_from_evidence(&evidence, system, function, options.deviation_mode)?;
            let (eta, branch) = interestingness(belief, deviation);
            Ok(ScoredRule {
                text: evidence.text,
                rule: rule.clone(),
                support: record.support,
                confidence: record.confidence,
                belief,
                deviation,
                eta,
                branch,
            })
        })
        .collect()
}

/// Sort keys for top-k selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankKey {
    /// `|eta|` descending.
    Eta,
    /// Belief descending.
    Belief,
    /// `|deviation|` descending.
    AbsDeviation,
}

/// First `min(k, n)` rules under the key, ties broken by support then by
/// canonical rule text.
pub fn rank_topk(scored: &[ScoredRule], k: usize, key: RankKey) -> Vec<ScoredRule> {
    let mut ranked: Vec<&ScoredRule> = scored.iter().collect();
    let key_of = |r: &ScoredRule| -> f64 {
        match key {
            RankKey::Eta => r.eta.abs(),
            RankKey::Belief => r.belief,
            RankKey::AbsDeviation => r.deviation.abs(),
        }
    };
    ranked.sort_by(|a, b| {
        key_of(b)
            .total_cmp(&key_of(a))
            .then_with(|| b.support.total_cmp(&a.support))
            .then_with(|| a.text.cmp(&b.text))
    });
    ranked.into_iter().take(k).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::demo;

    fn demo_system() -> (Arc<PreferenceDatabase>, BeliefSystem) {
        let db = demo::database();
        let u = db.universe();
        let rules = RuleSet::new(vec![Rule::from_names(u, &["D"], &["C"], &[]).unwrap()]);
        let system = BeliefSystem::new(rules, Arc::clone(&db)).unwrap();
        (db, system)
    }

    #[test]
    fn cosine_self_belief_under_paper_weights() {
        let db = demo::database();
        let u = db.universe();
        let r = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let got = cosine_belief(&r, &r, &CosineWeights::paper()).unwrap();
        assert!((got - 1.1).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_rules_score_zero() {
        let db = demo::database();
        let u = db.universe();
        let r1 = Rule::from_names(u, &["D"], &["E"], &[]).unwrap();
        let r2 = Rule::from_names(u, &["A"], &["C"], &["B"]).unwrap();
        assert_eq!(cosine_belief(&r1, &r2, &CosineWeights::paper()).unwrap(), 0.0);
    }

    #[test]
    fn cosine_cross_belief_with_context_mismatch() {
        let db = demo::database();
        let u = db.universe();
        let r1 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let r2 = Rule::from_names(u, &["D"], &["E"], &[]).unwrap();
        // One context is non-empty, so the standard weights apply:
        // (1.2 + 1.5) / (sqrt(3) * sqrt(2)).
        let got = cosine_belief(&r1, &r2, &CosineWeights::paper()).unwrap();
        assert!((got - 2.7 / 6.0f64.sqrt()).abs() < 1e-12);
        assert!((got - 1.1023).abs() < 5e-5);
    }

    #[test]
    fn cosine_empty_context_regime() {
        let db = demo::database();
        let u = db.universe();
        let r = Rule::from_names(u, &["D"], &["C"], &[]).unwrap();
        // Both contexts empty: weights (1.5, 1.5, 0) over norm 2.
        let got = cosine_belief(&r, &r, &CosineWeights::paper()).unwrap();
        assert!((got - 1.5).abs() < 1e-12);
    }

    #[test]
    fn unit_weight_cosine_is_plain_cosine() {
        let db = demo::database();
        let u = db.universe();
        let r1 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let r2 = Rule::from_names(u, &["D"], &["C"], &[]).unwrap();
        let got = cosine_belief(&r1, &r2, &CosineWeights::uniform(1.0)).unwrap();
        // Concatenated 15-dimensional vectors share exactly the D bit.
        assert!((got - 1.0 / 6.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn correlation_on_demo_rules() {
        let (db, _) = demo_system();
        let u = db.universe();
        let r1 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let r2 = Rule::from_names(u, &["D"], &["C"], &[]).unwrap();
        let got = correlation_belief(&r1, &r2, &db).unwrap();
        assert!((got - 0.6123724356957945).abs() < 1e-12);
        // Symmetry and self-correlation.
        assert_eq!(got, correlation_belief(&r2, &r1, &db).unwrap());
        assert!((correlation_belief(&r1, &r1, &db).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_zero_variance_convention() {
        let (db, _) = demo_system();
        let u = db.universe();
        let never = Rule::from_names(u, &["D"], &["B"], &["C"]).unwrap();
        let other = Rule::from_names(u, &["D"], &["C"], &[]).unwrap();
        assert_eq!(correlation_belief(&never, &other, &db).unwrap(), 0.0);
    }

    #[test]
    fn correlation_requires_two_pairs() {
        let db = demo::database();
        let u = db.universe();
        let tiny = PreferenceDatabase::new(
            Arc::clone(db.universe()),
            Arc::clone(db.transactions()),
            db.pairs()[..1].to_vec(),
        )
        .unwrap();
        let r = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        assert!(matches!(
            correlation_belief(&r, &r, &tiny),
            Err(Error::DatabaseTooSmall(1))
        ));
    }

    #[test]
    fn belief_and_deviation_to_singleton_system() {
        let (db, system) = demo_system();
        let u = db.universe();
        let r0 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let f = CorrelationBelief;
        let belief = belief_to_system(&r0, &system, &f).unwrap();
        assert!((belief - 0.6123724356957945).abs() < 1e-12);
        let deviation = deviation_to_system(&r0, &system, &f).unwrap();
        assert!((deviation - (belief - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn member_rule_maxes_out_the_system() {
        let (db, system) = demo_system();
        let u = db.universe();
        let member = Rule::from_names(u, &["D"], &["C"], &[]).unwrap();
        let f = CorrelationBelief;
        assert!((belief_to_system(&member, &system, &f).unwrap() - 1.0).abs() < 1e-12);
        assert!(deviation_to_system(&member, &system, &f).unwrap().abs() < 1e-12);
    }

    #[test]
    fn adding_evidence_never_decreases_belief() {
        let db = demo::database();
        let u = db.universe();
        let small = RuleSet::new(vec![Rule::from_names(u, &["D"], &["C"], &[]).unwrap()]);
        let large = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["C"], &[]).unwrap(),
            Rule::from_names(u, &["A"], &["C"], &["B"]).unwrap(),
        ]);
        let f = CorrelationBelief;
        let r0 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let b_small = belief_to_system(
            &r0,
            &BeliefSystem::new(small, Arc::clone(&db)).unwrap(),
            &f,
        )
        .unwrap();
        let b_large = belief_to_system(
            &r0,
            &BeliefSystem::new(large, Arc::clone(&db)).unwrap(),
            &f,
        )
        .unwrap();
        assert!(b_large >= b_small);
    }

    #[test]
    fn interestingness_branches() {
        let (eta, branch) = interestingness(0.6124, -0.3876);
        assert_eq!((eta, branch), (0.6124, Branch::Generalized));
        let (eta, branch) = interestingness(0.0, -1.0);
        assert_eq!((eta, branch), (-1.0, Branch::Personalized));
        // Boundary tie keeps the belief branch.
        let (eta, branch) = interestingness(0.5, -0.5);
        assert_eq!((eta, branch), (0.5, Branch::Generalized));
    }

    #[test]
    fn score_ruleset_composes_the_pieces() {
        let (db, system) = demo_system();
        let u = db.universe();
        let rules = RuleSet::new(vec![Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap()]);
        let scored = score_ruleset(
            &rules,
            &system,
            &CorrelationBelief,
            &db,
            ScoreOptions::default(),
        )
        .unwrap();
        assert_eq!(scored.len(), 1);
        let s = &scored[0];
        assert!((s.belief - 0.6123724356957945).abs() < 1e-12);
        assert!((s.deviation + 0.3876275643042055).abs() < 1e-12);
        assert_eq!(s.eta, s.belief);
        assert_eq!(s.branch, Branch::Generalized);
        assert_eq!(s.support, 0.4);
        assert_eq!(s.confidence, Some(1.0));
    }

    #[test]
    fn scoring_the_system_against_itself_is_all_generalized() {
        let db = demo::database();
        let u = db.universe();
        let rules = RuleSet::new(vec![
            Rule::from_names(u, &["D"], &["C"], &[]).unwrap(),
            Rule::from_names(u, &["A"], &["C"], &["B"]).unwrap(),
        ]);
        let system = BeliefSystem::new(rules.clone(), Arc::clone(&db)).unwrap();
        let scored = score_ruleset(
            &rules,
            &system,
            &CorrelationBelief,
            &db,
            ScoreOptions::default(),
        )
        .unwrap();
        for s in &scored {
            assert!((s.belief - 1.0).abs() < 1e-12);
            assert_eq!(s.branch, Branch::Generalized);
        }
    }

    #[test]
    fn scoring_is_pointwise_in_input_order() {
        let (db, system) = demo_system();
        let u = db.universe();
        let r1 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let r2 = Rule::from_names(u, &["A"], &["C"], &["B"]).unwrap();
        let fwd = score_ruleset(
            &RuleSet::new(vec![r1.clone(), r2.clone()]),
            &system,
            &CorrelationBelief,
            &db,
            ScoreOptions::default(),
        )
        .unwrap();
        let rev = score_ruleset(
            &RuleSet::new(vec![r2, r1]),
            &system,
            &CorrelationBelief,
            &db,
            ScoreOptions::default(),
        )
        .unwrap();
        assert_eq!(fwd[0].text, rev[1].text);
        assert_eq!(fwd[0].belief, rev[1].belief);
        assert_eq!(fwd[1].text, rev[0].text);
    }

    #[test]
    fn rank_topk_orders_by_absolute_eta() {
        let mk = |text: &str, eta: f64, support: f64| ScoredRule {
            rule: Rule::from_names(
                &demo::universe(),
                &["D"],
                &["E"],
                &["B"],
            )
            .unwrap(),
            text: text.into(),
            support,
            confidence: Some(1.0),
            belief: eta.max(0.0),
            deviation: if eta < 0.0 { eta } else { 0.0 },
            eta,
            branch: if eta < 0.0 {
                Branch::Personalized
            } else {
                Branch::Generalized
            },
        };
        let scored = vec![mk("a", 0.9, 0.5), mk("b", -0.95, 0.2)];
        let ranked = rank_topk(&scored, 2, RankKey::Eta);
        // |−0.95| outranks 0.9.
        assert_eq!(ranked[0].text, "b");
        assert_eq!(ranked[1].text, "a");
        // k larger than the list returns everything, sorted.
        assert_eq!(rank_topk(&scored, 10, RankKey::Eta).len(), 2);
    }

    #[test]
    fn registry_builds_known_functions() {
        let cos = build_belief_function(&BeliefFunctionSpec::named("cos")).unwrap();
        assert_eq!(cos.name(), "cos");
        let cov = build_belief_function(&BeliefFunctionSpec::named("correlation")).unwrap();
        assert_eq!(cov.name(), "cov");
        assert!(matches!(
            build_belief_function(&BeliefFunctionSpec::named("mystery")),
            Err(Error::UnknownBeliefFunction(_))
        ));
        let mut bad = BeliefFunctionSpec::named("cov");
        bad.parameters.insert("k1".into(), 1.0);
        assert!(matches!(
            build_belief_function(&bad),
            Err(Error::InvalidBeliefParameter { .. })
        ));
    }

    #[test]
    fn legacy_deviation_mode_divides_the_shifted_sum() {
        let (db, system) = demo_system();
        let u = db.universe();
        let r0 = Rule::from_names(u, &["D"], &["E"], &["B"]).unwrap();
        let f = CorrelationBelief;
        let mean = deviation_to_system_with(&r0, &system, &f, DeviationMode::MeanMinusOne).unwrap();
        let legacy =
            deviation_to_system_with(&r0, &system, &f, DeviationMode::SumMinusOneOverN).unwrap();
        // Singleton system: both readings coincide.
        assert!((mean - legacy).abs() < 1e-12);
    }
}
