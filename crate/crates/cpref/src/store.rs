//! Binary snapshot of a preference corpus: the attribute universe, the
//! transaction table, and per-user preference pairs labelled with their
//! train/test split. This is the artifact the pipeline stages exchange;
//! everything else is flat CSV or JSON.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::bits::Bitset;
use crate::error::{Error, Result};
use crate::ingest::UserPreferenceSet;
use crate::model::{
    AttributeUniverse, Itemset, PreferenceDatabase, PreferencePair, Transaction, TransactionId,
    TransactionTable,
};

const MAGIC: &[u8; 8] = b"CPREFDB1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Unsplit,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::Unsplit => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Split::Train,
            1 => Split::Test,
            2 => Split::Unsplit,
            other => {
                return Err(Error::SchemaMismatch {
                    expected: "split code 0..=2".into(),
                    found: other.to_string(),
                })
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct StoredPair {
    pub pair: PreferencePair,
    pub user: String,
    pub split: Split,
}

pub struct PreferenceStore {
    universe: Arc<AttributeUniverse>,
    transactions: Arc<TransactionTable>,
    entries: Vec<StoredPair>,
    config_digest: [u8; 32],
}

impl PreferenceStore {
    pub fn new(
        universe: Arc<AttributeUniverse>,
        transactions: Arc<TransactionTable>,
        entries: Vec<StoredPair>,
        config_digest: [u8; 32],
    ) -> Result<Self> {
        for entry in &entries {
            for id in [entry.pair.preferred, entry.pair.dominated] {
                if !transactions.contains_key(&id) {
                    return Err(Error::DanglingPair(id.0));
                }
            }
        }
        Ok(PreferenceStore {
            universe,
            transactions,
            entries,
            config_digest,
        })
    }

    /// A store with transactions but no pairs yet (the ingest artifact).
    pub fn transactions_only(
        universe: Arc<AttributeUniverse>,
        transactions: Arc<TransactionTable>,
        config_digest: [u8; 32],
    ) -> Self {
        PreferenceStore {
            universe,
            transactions,
            entries: Vec::new(),
            config_digest,
        }
    }

    /// Builds a store from per-user train/test databases.
    pub fn from_user_splits(
        splits: &[(UserPreferenceSet, PreferenceDatabase, PreferenceDatabase)],
        config_digest: [u8; 32],
    ) -> Result<Self> {
        let first = splits.first().ok_or(Error::EmptyDatabase)?;
        let universe = Arc::clone(first.0.db.universe());
        let transactions = Arc::clone(first.0.db.transactions());
        let mut entries = Vec::new();
        for (set, train, test) in splits {
            if set.db.universe().as_ref() != universe.as_ref() {
                return Err(Error::UniverseMismatch);
            }
            for pair in train.pairs() {
                entries.push(StoredPair {
                    pair: *pair,
                    user: set.user.clone(),
                    split: Split::Train,
                });
            }
            for pair in test.pairs() {
                entries.push(StoredPair {
                    pair: *pair,
                    user: set.user.clone(),
                    split: Split::Test,
                });
            }
        }
        PreferenceStore::new(universe, transactions, entries, config_digest)
    }

    pub fn universe(&self) -> &Arc<AttributeUniverse> {
        &self.universe
    }

    pub fn transactions(&self) -> &Arc<TransactionTable> {
        &self.transactions
    }

    pub fn entries(&self) -> &[StoredPair] {
        &self.entries
    }

    pub fn config_digest(&self) -> &[u8; 32] {
        &self.config_digest
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.user.as_str()).collect()
    }

    fn filtered(&self, mut keep: impl FnMut(&StoredPair) -> bool) -> Result<PreferenceDatabase> {
        PreferenceDatabase::new(
            Arc::clone(&self.universe),
            Arc::clone(&self.transactions),
            self.entries
                .iter()
                .filter(|e| keep(e))
                .map(|e| e.pair)
                .collect(),
        )
    }

    /// All users' pairs; `split = None` selects every split.
    pub fn merged(&self, split: Option<Split>) -> Result<PreferenceDatabase> {
        self.filtered(|e| split.map_or(true, |s| e.split == s))
    }

    /// One user's pairs.
    pub fn user_db(&self, user: &str, split: Option<Split>) -> Result<PreferenceDatabase> {
        self.filtered(|e| e.user == user && split.map_or(true, |s| e.split == s))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&self.config_digest)?;

        out.write_u32::<LittleEndian>(self.universe.len() as u32)?;
        for name in self.universe.names() {
            write_str(&mut out, name)?;
        }

        let blocks = self.universe.len().div_ceil(64).max(1);
        out.write_u64::<LittleEndian>(self.transactions.len() as u64)?;
        for txn in self.transactions.values() {
            out.write_u64::<LittleEndian>(txn.id.0)?;
            write_str(&mut out, &txn.user)?;
            out.write_f64::<LittleEndian>(txn.rating)?;
            let raw = txn.items.bits().blocks();
            for b in 0..blocks {
                out.write_u64::<LittleEndian>(raw.get(b).copied().unwrap_or(0))?;
            }
        }

        out.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        for entry in &self.entries {
            out.write_u64::<LittleEndian>(entry.pair.preferred.0)?;
            out.write_u64::<LittleEndian>(entry.pair.dominated.0)?;
            write_str(&mut out, &entry.user)?;
            out.write_u8(entry.split.code())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::SchemaMismatch {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let mut config_digest = [0u8; 32];
        input.read_exact(&mut config_digest)?;

        let n_attrs = input.read_u32::<LittleEndian>()? as usize;
        let mut names = Vec::with_capacity(n_attrs);
        for _ in 0..n_attrs {
            names.push(read_str(&mut input)?);
        }
        let universe = Arc::new(AttributeUniverse::new(names)?);
        let width = universe.len();
        let blocks = width.div_ceil(64).max(1);

        let n_txns = input.read_u64::<LittleEndian>()? as usize;
        let mut table = TransactionTable::new();
        for _ in 0..n_txns {
            let id = TransactionId(input.read_u64::<LittleEndian>()?);
            let user = read_str(&mut input)?;
            let rating = input.read_f64::<LittleEndian>()?;
            let mut raw = vec![0u64; blocks];
            for slot in raw.iter_mut() {
                *slot = input.read_u64::<LittleEndian>()?;
            }
            raw.truncate(width.div_ceil(64));
            let items = Itemset::from_bits(Bitset::from_blocks(width, raw));
            table.insert(id, Transaction::new(id, user, items, rating)?);
        }

        let n_entries = input.read_u64::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let preferred = TransactionId(input.read_u64::<LittleEndian>()?);
            let dominated = TransactionId(input.read_u64::<LittleEndian>()?);
            let user = read_str(&mut input)?;
            let split = Split::from_code(input.read_u8()?)?;
            entries.push(StoredPair {
                pair: PreferencePair::new(preferred, dominated)?,
                user,
                split,
            });
        }
        PreferenceStore::new(universe, Arc::new(table), entries, config_digest)
    }
}

fn write_str(out: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    out.write_u16::<LittleEndian>(bytes.len() as u16)?;
    out.write_all(bytes)?;
    Ok(())
}

fn read_str(input: &mut impl Read) -> Result<String> {
    let len = input.read_u16::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::SchemaMismatch {
        expected: "utf-8 string".into(),
        found: "invalid bytes".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::demo;

    fn demo_store() -> PreferenceStore {
        let db = demo::database();
        let entries: Vec<StoredPair> = db
            .pairs()
            .iter()
            .enumerate()
            .map(|(i, pair)| StoredPair {
                pair: *pair,
                user: "u1".into(),
                split: if i < 4 { Split::Train } else { Split::Test },
            })
            .collect();
        PreferenceStore::new(
            Arc::clone(db.universe()),
            Arc::clone(db.transactions()),
            entries,
            [7u8; 32],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_through_disk() {
        let store = demo_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.db");
        store.save(&path).unwrap();
        let loaded = PreferenceStore::load(&path).unwrap();

        assert_eq!(loaded.universe().names(), store.universe().names());
        assert_eq!(loaded.transactions().len(), store.transactions().len());
        assert_eq!(loaded.entries().len(), store.entries().len());
        assert_eq!(loaded.config_digest(), store.config_digest());
        for (a, b) in loaded.entries().iter().zip(store.entries()) {
            assert_eq!(a.pair, b.pair);
            assert_eq!(a.user, b.user);
            assert_eq!(a.split, b.split);
        }
        let t0 = loaded.transactions().get(&TransactionId(0)).unwrap();
        assert_eq!(t0.items.bit_string(), "11010");
        assert_eq!(t0.rating, 9.5);
    }

    #[test]
    fn split_views_filter_pairs() {
        let store = demo_store();
        assert_eq!(store.merged(None).unwrap().len(), 5);
        assert_eq!(store.merged(Some(Split::Train)).unwrap().len(), 4);
        assert_eq!(store.merged(Some(Split::Test)).unwrap().len(), 1);
        assert_eq!(store.user_db("u1", Some(Split::Train)).unwrap().len(), 4);
        assert_eq!(store.user_db("nobody", None).unwrap().len(), 0);
        assert_eq!(store.users().len(), 1);
    }

    #[test]
    fn bad_magic_is_a_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.db");
        std::fs::write(&path, b"NOTADB!!garbage").unwrap();
        assert!(matches!(
            PreferenceStore::load(&path),
            Err(Error::SchemaMismatch { .. })
        ));
    }
}
