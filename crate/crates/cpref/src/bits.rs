//! Fixed-width bit vectors used for itemset encodings and pair-agreement
//! bitmaps. Width is part of the value: operations combining two bitsets
//! of different widths panic, since that is always a programming error.

const BLOCK_BITS: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitset {
    width: usize,
    blocks: Box<[u64]>,
}

#[inline]
fn block_count(width: usize) -> usize {
    width.div_ceil(BLOCK_BITS)
}

impl Bitset {
    pub fn new(width: usize) -> Self {
        Bitset {
            width,
            blocks: vec![0u64; block_count(width)].into_boxed_slice(),
        }
    }

    /// Builds a bitset from raw blocks; bits beyond `width` are cleared.
    pub fn from_blocks(width: usize, mut blocks: Vec<u64>) -> Self {
        assert_eq!(blocks.len(), block_count(width));
        let tail = width % BLOCK_BITS;
        if tail != 0 {
            if let Some(last) = blocks.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Bitset {
            width,
            blocks: blocks.into_boxed_slice(),
        }
    }

    pub fn from_indices(width: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bs = Bitset::new(width);
        for i in indices {
            bs.set(i);
        }
        bs
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn blocks(&self) -> &[u64] {
        &self.blocks
    }

    pub fn set(&mut self, index: usize) {
        assert!(index < self.width, "bit {index} out of width {}", self.width);
        self.blocks[index / BLOCK_BITS] |= 1u64 << (index % BLOCK_BITS);
    }

    pub fn contains(&self, index: usize) -> bool {
        index < self.width && self.blocks[index / BLOCK_BITS] >> (index % BLOCK_BITS) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    fn check_width(&self, other: &Bitset) {
        assert_eq!(
            self.width, other.width,
            "bitset width mismatch: {} vs {}",
            self.width, other.width
        );
    }

    pub fn union(&self, other: &Bitset) -> Bitset {
        self.check_width(other);
        let blocks = self
            .blocks
            .iter()
            .zip(other.blocks.iter())
            .map(|(a, b)| a | b)
            .collect();
        Bitset {
            width: self.width,
            blocks,
        }
    }

    pub fn intersection(&self, other: &Bitset) -> Bitset {
        self.check_width(other);
        let blocks = self
            .blocks
            .iter()
            .zip(other.blocks.iter())
            .map(|(a, b)| a & b)
            .collect();
        Bitset {
            width: self.width,
            blocks,
        }
    }

    pub fn difference(&self, other: &Bitset) -> Bitset {
        self.check_width(other);
        let blocks = self
            .blocks
            .iter()
            .zip(other.blocks.iter())
            .map(|(a, b)| a & !b)
            .collect();
        Bitset {
            width: self.width,
            blocks,
        }
    }

    pub fn is_subset_of(&self, other: &Bitset) -> bool {
        self.check_width(other);
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint_from(&self, other: &Bitset) -> bool {
        self.check_width(other);
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .all(|(a, b)| a & b == 0)
    }

    /// Popcount of the intersection, without allocating.
    pub fn intersection_count(&self, other: &Bitset) -> usize {
        self.check_width(other);
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().enumerate().flat_map(|(i, &block)| {
            let mut b = block;
            std::iter::from_fn(move || {
                if b == 0 {
                    None
                } else {
                    let tz = b.trailing_zeros() as usize;
                    b &= b - 1;
                    Some(i * BLOCK_BITS + tz)
                }
            })
        })
    }

    /// Positional string, leftmost character = bit 0.
    pub fn bit_string(&self) -> String {
        (0..self.width)
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect()
    }
}

impl std::fmt::Debug for Bitset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitset({})", self.bit_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_and_query() {
        let mut bs = Bitset::new(70);
        bs.set(0);
        bs.set(63);
        bs.set(69);
        assert!(bs.contains(0) && bs.contains(63) && bs.contains(69));
        assert!(!bs.contains(1));
        assert_eq!(bs.count_ones(), 3);
        assert_eq!(bs.ones().collect::<Vec<_>>(), vec![0, 63, 69]);
    }

    #[test]
    fn subset_and_disjoint() {
        let a = Bitset::from_indices(8, [1, 3]);
        let b = Bitset::from_indices(8, [1, 3, 5]);
        let c = Bitset::from_indices(8, [0, 2]);
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        assert!(a.is_disjoint_from(&c));
        assert!(!a.is_disjoint_from(&b));
        assert_eq!(a.intersection_count(&b), 2);
    }

    #[test]
    fn from_blocks_masks_tail() {
        let bs = Bitset::from_blocks(5, vec![u64::MAX]);
        assert_eq!(bs.count_ones(), 5);
        assert_eq!(bs.bit_string(), "11111");
    }

    #[test]
    fn bit_string_is_positional() {
        let bs = Bitset::from_indices(5, [0, 1, 3]);
        assert_eq!(bs.bit_string(), "11010");
    }
}
