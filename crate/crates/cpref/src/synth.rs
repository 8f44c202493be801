//! Deterministic sample data: the tiny demo database used across docs and
//! tests, planted-rule corpora for end-to-end checks, rating-file
//! generators shaped like the MovieLens dumps, and large random databases
//! for throughput measurements.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ingest::UserPreferenceSet;
use crate::model::{
    AttributeUniverse, Itemset, PreferenceDatabase, PreferencePair, Rule, Transaction,
    TransactionId, TransactionTable,
};

/// The five-transaction movie example over attributes A..E.
pub mod demo {
    use super::*;

    /// Attributes A, B, C, D, E.
    pub fn universe() -> Arc<AttributeUniverse> {
        Arc::new(AttributeUniverse::new(["A", "B", "C", "D", "E"]).expect("valid names"))
    }

    /// Five transactions of one user:
    /// t0 {A,B,D} 9.5, t1 {B,C,E} 7.4, t2 {B,C} 6.4, t3 {D,E} 8.6,
    /// t4 {B,E} 7.9.
    pub fn transactions(universe: &AttributeUniverse) -> Arc<TransactionTable> {
        let rows: [(&[&str], f64); 5] = [
            (&["A", "B", "D"], 9.5),
            (&["B", "C", "E"], 7.4),
            (&["B", "C"], 6.4),
            (&["D", "E"], 8.6),
            (&["B", "E"], 7.9),
        ];
        let mut table = TransactionTable::new();
        for (i, (names, rating)) in rows.into_iter().enumerate() {
            let txn = Transaction::new(
                TransactionId(i as u64),
                "u1",
                universe.encode(names).expect("demo attrs"),
                rating,
            )
            .expect("finite rating");
            table.insert(txn.id, txn);
        }
        Arc::new(table)
    }

    /// The five preference pairs implied by threshold 8.0 and gap 1.0:
    /// t0 dominates t1, t2, t4; t3 dominates t1, t2.
    pub fn database() -> Arc<PreferenceDatabase> {
        let universe = universe();
        let table = transactions(&universe);
        let pair = |a: u64, b: u64| {
            PreferencePair::new(TransactionId(a), TransactionId(b)).expect("distinct ids")
        };
        let pairs = vec![pair(0, 1), pair(0, 2), pair(0, 4), pair(3, 1), pair(3, 2)];
        Arc::new(PreferenceDatabase::new(universe, table, pairs).expect("pairs resolve"))
    }
}

/// Parameters for [`planted_corpus`]: per-user pair counts for the five
/// shared rules, the personal rule (forward plus reversed evidence) and
/// uniform noise.
#[derive(Clone, Debug)]
pub struct PlantedConfig {
    pub users: usize,
    pub shared_counts: [usize; 5],
    pub unique_forward: usize,
    pub unique_reverse: usize,
    pub noise: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 200,
            shared_counts: [22, 12, 10, 9, 8],
            unique_forward: 14,
            unique_reverse: 5,
            noise: 9,
            seed: 7,
        }
    }
}

pub struct PlantedCorpus {
    pub universe: Arc<AttributeUniverse>,
    pub user_sets: Vec<UserPreferenceSet>,
    /// The five context-free rules every user follows.
    pub shared_rules: Vec<Rule>,
    /// Each user's personal context-bearing rule.
    pub unique_rules: BTreeMap<String, Rule>,
}

/// Generates a corpus of users that all follow five shared context-free
/// rules over g01..g10 and each additionally follow one personal rule
/// between g11 and g12 under a context attribute. Personal directions are
/// balanced across users so no merged context-free variant reaches
/// consensus confidence. A slice of each user's evidence contradicts their
/// personal rule, and a noise share is drawn uniformly.
pub fn planted_corpus(cfg: &PlantedConfig) -> PlantedCorpus {
    let names: Vec<String> = (1..=12).map(|i| format!("g{i:02}")).collect();
    let universe = Arc::new(AttributeUniverse::new(names).expect("valid names"));
    let m = universe.len();

    let shared_rules: Vec<Rule> = (0..5)
        .map(|i| {
            let plus = format!("g{:02}", 2 * i + 1);
            let minus = format!("g{:02}", 2 * i + 2);
            Rule::from_names(&universe, &[plus.as_str()], &[minus.as_str()], &[])
                .expect("disjoint singletons")
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = TransactionTable::new();
    let mut next_id = 0u64;
    let mut user_sets = Vec::with_capacity(cfg.users);
    let mut unique_rules = BTreeMap::new();

    for user_idx in 0..cfg.users {
        let user = format!("u{user_idx:04}");
        let forward = user_idx % 2 == 0;
        let ctx = format!("g{:02}", (user_idx / 2) % 10 + 1);
        let (uplus, uminus) = if forward { ("g11", "g12") } else { ("g12", "g11") };
        let unique_rule = Rule::from_names(&universe, &[uplus], &[uminus], &[ctx.as_str()])
            .expect("disjoint slots");

        let mut pairs = Vec::new();
        let mut emit = |t_names: &[&str], u_names: &[&str],
                        table: &mut TransactionTable,
                        rng: &mut ChaCha8Rng|
         -> PreferencePair {
            let high = 4.2 + rng.gen::<f64>() * 0.8;
            let low = high - (1.2 + rng.gen::<f64>());
            let t = Transaction::new(
                TransactionId(next_id),
                user.clone(),
                universe.encode(t_names).expect("attrs"),
                high,
            )
            .expect("finite");
            let u = Transaction::new(
                TransactionId(next_id + 1),
                user.clone(),
                universe.encode(u_names).expect("attrs"),
                low,
            )
            .expect("finite");
            next_id += 2;
            let pair = PreferencePair::new(t.id, u.id).expect("distinct");
            table.insert(t.id, t);
            table.insert(u.id, u);
            pair
        };

        for (rule_idx, &count) in cfg.shared_counts.iter().enumerate() {
            let plus = format!("g{:02}", 2 * rule_idx + 1);
            let minus = format!("g{:02}", 2 * rule_idx + 2);
            for _ in 0..count {
                pairs.push(emit(&[plus.as_str()], &[minus.as_str()], &mut table, &mut rng));
            }
        }
        for _ in 0..cfg.unique_forward {
            pairs.push(emit(&[ctx.as_str(), uplus], &[ctx.as_str(), uminus], &mut table, &mut rng));
        }
        for _ in 0..cfg.unique_reverse {
            pairs.push(emit(&[ctx.as_str(), uminus], &[ctx.as_str(), uplus], &mut table, &mut rng));
        }
        for _ in 0..cfg.noise {
            let a = rng.gen_range(0..m);
            let b = (a + rng.gen_range(1..m)) % m;
            let mut t_items = vec![a];
            let mut u_items = vec![b];
            if rng.gen_bool(0.5) {
                let extra = rng.gen_range(0..m);
                if extra != a && extra != b {
                    t_items.push(extra);
                    u_items.push(extra);
                }
            }
            let t_names: Vec<&str> = t_items.iter().map(|&i| universe.name(i)).collect();
            let u_names: Vec<&str> = u_items.iter().map(|&i| universe.name(i)).collect();
            pairs.push(emit(&t_names, &u_names, &mut table, &mut rng));
        }

        unique_rules.insert(user.clone(), unique_rule);
        user_sets.push((user, pairs));
    }

    let table = Arc::new(table);
    let user_sets = user_sets
        .into_iter()
        .map(|(user, pairs)| UserPreferenceSet {
            user,
            db: PreferenceDatabase::new(Arc::clone(&universe), Arc::clone(&table), pairs)
                .expect("pairs resolve"),
        })
        .collect();

    PlantedCorpus {
        universe,
        user_sets,
        shared_rules,
        unique_rules,
    }
}

/// Parameters for [`write_movielens_like`].
#[derive(Clone, Debug)]
pub struct RatingsFilesConfig {
    pub users: usize,
    pub movies: usize,
    pub ratings_per_user: std::ops::Range<usize>,
    pub seed: u64,
}

impl Default for RatingsFilesConfig {
    fn default() -> Self {
        RatingsFilesConfig {
            users: 900,
            movies: 1650,
            ratings_per_user: 90..130,
            seed: 11,
        }
    }
}

const GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

// Appeal offsets per genre; users rate movies around these with personal
// jitter, which is what makes genre-over-genre preference rules minable.
// The spread is deliberately wide at both ends so a few dominant rules
// tower over a long tail, as consensus pools do on the real data.
const GENRE_APPEAL: [f64; 18] = [
    -0.35, 0.15, 0.1, -1.0, 0.05, 0.5, 0.7, 1.25, -0.2, 0.9, -1.3, -0.45, 0.35, 0.25, -0.05,
    -0.15, 0.65, -0.55,
];

// Rough popularity weights: a few genres dominate the catalogue the way
// Drama and Comedy dominate the MovieLens one.
const GENRE_WEIGHT: [f64; 18] = [
    10.0, 7.0, 3.0, 5.0, 17.0, 7.0, 2.5, 24.0, 4.0, 1.5, 7.0, 3.0, 4.0, 10.0, 6.0, 11.0, 3.5,
    1.5,
];

/// Writes a `ratings.dat` / `movies.dat` pair in the `::`-delimited layout
/// at MovieLens-100K scale. Ratings follow a noisy global genre appeal, so
/// consensus mining over the result produces a long-tailed genre ruleset.
pub fn write_movielens_like(cfg: &RatingsFilesConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    std::fs::create_dir_all(dir)?;

    let total_weight: f64 = GENRE_WEIGHT.iter().sum();
    let pick_genre = |rng: &mut ChaCha8Rng| -> usize {
        let mut ticket = rng.gen::<f64>() * total_weight;
        for (i, w) in GENRE_WEIGHT.iter().enumerate() {
            ticket -= w;
            if ticket <= 0.0 {
                return i;
            }
        }
        GENRE_WEIGHT.len() - 1
    };

    let movies_path = dir.join("movies.dat");
    let mut movie_genres: Vec<Vec<usize>> = Vec::with_capacity(cfg.movies);
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&movies_path)?);
        for movie in 1..=cfg.movies {
            let count = 2 + rng.gen_range(0..3);
            let mut genres = Vec::with_capacity(count);
            while genres.len() < count {
                let g = pick_genre(&mut rng);
                if !genres.contains(&g) {
                    genres.push(g);
                }
            }
            genres.sort_unstable();
            let names: Vec<&str> = genres.iter().map(|&g| GENRES[g]).collect();
            writeln!(out, "{movie}::Movie {movie} (1999)::{}", names.join("|"))?;
            movie_genres.push(genres);
        }
    }

    let ratings_path = dir.join("ratings.dat");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&ratings_path)?);
        let mut timestamp = 840_000_000i64;
        for user in 1..=cfg.users {
            let bias = (rng.gen::<f64>() - 0.5) * 0.8;
            let count = rng.gen_range(cfg.ratings_per_user.clone());
            let mut seen = std::collections::HashSet::new();
            for _ in 0..count {
                let movie = rng.gen_range(1..=cfg.movies);
                if !seen.insert(movie) {
                    continue;
                }
                let genres = &movie_genres[movie - 1];
                let appeal: f64 =
                    genres.iter().map(|&g| GENRE_APPEAL[g]).sum::<f64>() / genres.len() as f64;
                let noise = (rng.gen::<f64>() - 0.5) * 2.2;
                let raw = 3.1 + appeal + bias + noise;
                let rating = (raw * 2.0).round().clamp(1.0, 10.0) / 2.0;
                timestamp += 1;
                writeln!(out, "{user}::{movie}::{rating:.1}::{timestamp}")?;
            }
        }
    }
    Ok((ratings_path, movies_path))
}

/// A large random database for throughput measurements: `n_pairs` pairs
/// drawn over `n_txns` random transactions.
pub fn benchmark_database(
    n_pairs: usize,
    n_txns: usize,
    attrs: usize,
    seed: u64,
) -> Arc<PreferenceDatabase> {
    let names: Vec<String> = (0..attrs).map(|i| format!("a{i:03}")).collect();
    let universe = Arc::new(AttributeUniverse::new(names).expect("valid names"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut table = TransactionTable::new();
    for id in 0..n_txns as u64 {
        let count = rng.gen_range(3..=6.min(attrs));
        let mut indices = Vec::with_capacity(count);
        while indices.len() < count {
            let i = rng.gen_range(0..attrs);
            if !indices.contains(&i) {
                indices.push(i);
            }
        }
        let items = Itemset::from_bits(crate::bits::Bitset::from_indices(attrs, indices));
        let rating = if id % 2 == 0 { 4.5 } else { 3.0 };
        let txn = Transaction::new(TransactionId(id), format!("u{}", id % 100), items, rating)
            .expect("finite");
        table.insert(txn.id, txn);
    }

    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let a = rng.gen_range(0..n_txns) as u64;
        let b = rng.gen_range(0..n_txns) as u64;
        if a != b {
            pairs.push(PreferencePair::new(TransactionId(a), TransactionId(b)).expect("distinct"));
        }
    }
    Arc::new(
        PreferenceDatabase::new(universe, Arc::new(table), pairs).expect("pairs resolve"),
    )
}

/// `count` distinct random rules with singleton sides and up to two context
/// attributes over `universe`.
pub fn random_rules(count: usize, universe: &AttributeUniverse, seed: u64) -> Vec<Rule> {
    let m = universe.len();
    assert!(m >= 4, "need at least four attributes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut rules = Vec::with_capacity(count);
    while rules.len() < count {
        let plus = rng.gen_range(0..m);
        let minus = rng.gen_range(0..m);
        if plus == minus {
            continue;
        }
        let mut ctx = Vec::new();
        for _ in 0..rng.gen_range(0..=2usize) {
            let c = rng.gen_range(0..m);
            if c != plus && c != minus && !ctx.contains(&c) {
                ctx.push(c);
            }
        }
        let rule = Rule::new(
            Itemset::from_bits(crate::bits::Bitset::from_indices(m, [plus])),
            Itemset::from_bits(crate::bits::Bitset::from_indices(m, [minus])),
            Itemset::from_bits(crate::bits::Bitset::from_indices(m, ctx)),
        )
        .expect("disjoint by construction");
        if seen.insert(rule.clone()) {
            rules.push(rule);
        }
    }
    rules
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures;

    #[test]
    fn demo_database_shape() {
        let db = demo::database();
        assert_eq!(db.len(), 5);
        assert_eq!(db.universe().len(), 5);
        let t0 = db.transaction(TransactionId(0)).unwrap();
        assert_eq!(t0.items.bit_string(), "11010");
        assert_eq!(t0.rating, 9.5);
    }

    #[test]
    fn planted_corpus_is_deterministic_and_supports_planted_rules() {
        let cfg = PlantedConfig {
            users: 6,
            ..PlantedConfig::default()
        };
        let a = planted_corpus(&cfg);
        let b = planted_corpus(&cfg);
        assert_eq!(a.user_sets.len(), 6);
        for (x, y) in a.user_sets.iter().zip(&b.user_sets) {
            assert_eq!(x.user, y.user);
            assert_eq!(x.db.pairs(), y.db.pairs());
        }
        // Every user's database supports shared rule 0 with the planted count.
        for set in &a.user_sets {
            assert_eq!(
                measures::agree_count(&a.shared_rules[0], &set.db),
                cfg.shared_counts[0]
            );
            let unique = &a.unique_rules[&set.user];
            assert!(measures::agree_count(unique, &set.db) >= cfg.unique_forward);
            assert_eq!(
                measures::against_count(unique, &set.db),
                cfg.unique_reverse
            );
        }
    }

    #[test]
    fn benchmark_database_has_requested_size() {
        let db = benchmark_database(1000, 50, 16, 3);
        assert_eq!(db.len(), 1000);
        let rules = random_rules(20, db.universe(), 4);
        assert_eq!(rules.len(), 20);
    }
}
