//! Byte storage for exposed memory regions, held as 64-bit atomic words.
//!
//! Byte `i` of a slab lives in the little-endian byte `i % 8` of word
//! `i / 8`. Transfers covering exactly one aligned word are a single atomic
//! load/store, so aligned 8-byte puts and gets can never tear; remote
//! atomics (swap, compare-exchange) operate on the very same words. Partial
//! word edges merge via compare-exchange so concurrent writers of disjoint
//! bytes inside one word both land. Overlapping concurrent plain transfers
//! interleave at word granularity: undefined contents, never undefined
//! behavior.

use std::sync::atomic::{AtomicU64, Ordering};

pub(crate) struct Slab {
    words: Box<[AtomicU64]>,
    len: usize,
}

impl Slab {
    pub fn new(len_bytes: usize) -> Slab {
        let n_words = len_bytes.div_ceil(8);
        let mut v = Vec::with_capacity(n_words);
        v.resize_with(n_words, || AtomicU64::new(0));
        Slab {
            words: v.into_boxed_slice(),
            len: len_bytes,
        }
    }

    /// The atomic word backing bytes `[disp, disp + 8)`; `disp` must be
    /// 8-byte aligned and in range.
    pub fn word(&self, disp: usize) -> &AtomicU64 {
        debug_assert!(disp.is_multiple_of(8) && disp + 8 <= self.len.next_multiple_of(8));
        &self.words[disp / 8]
    }

    pub fn write(&self, disp: usize, src: &[u8]) {
        assert!(disp + src.len() <= self.len, "slab write out of range");
        if src.is_empty() {
            return;
        }
        // Aligned single word: one atomic store.
        if disp.is_multiple_of(8) && src.len() == 8 {
            let v = u64::from_le_bytes(src.try_into().unwrap());
            self.words[disp / 8].store(v, Ordering::Relaxed);
            return;
        }
        let mut off = disp;
        let mut i = 0;
        let lead = off % 8;
        if lead != 0 {
            let n = (8 - lead).min(src.len());
            self.merge(off / 8, lead, &src[..n]);
            off += n;
            i += n;
        }
        while src.len() - i >= 8 {
            let v = u64::from_le_bytes(src[i..i + 8].try_into().unwrap());
            self.words[off / 8].store(v, Ordering::Relaxed);
            off += 8;
            i += 8;
        }
        if i < src.len() {
            self.merge(off / 8, 0, &src[i..]);
        }
    }

    pub fn read(&self, disp: usize, dst: &mut [u8]) {
        assert!(disp + dst.len() <= self.len, "slab read out of range");
        if dst.is_empty() {
            return;
        }
        if disp.is_multiple_of(8) && dst.len() == 8 {
            let v = self.words[disp / 8].load(Ordering::Relaxed);
            dst.copy_from_slice(&v.to_le_bytes());
            return;
        }
        for (off, b) in (disp..).zip(dst.iter_mut()) {
            let w = self.words[off / 8].load(Ordering::Relaxed);
            *b = w.to_le_bytes()[off % 8];
        }
    }

    /// Merge `bytes` into word `w` starting at byte lane `start`, leaving the
    /// other lanes untouched even under concurrent merges.
    fn merge(&self, w: usize, start: usize, bytes: &[u8]) {
        debug_assert!(start + bytes.len() <= 8);
        let mut mask = 0u64;
        let mut val = 0u64;
        for (k, b) in bytes.iter().enumerate() {
            mask |= 0xFFu64 << ((start + k) * 8);
            val |= (*b as u64) << ((start + k) * 8);
        }
        self.words[w]
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |old| {
                Some((old & !mask) | val)
            })
            .unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip_at_odd_boundaries() {
        let slab = Slab::new(37);
        let data: Vec<u8> = (0..21u8).collect();
        slab.write(5, &data);
        let mut out = vec![0u8; 21];
        slab.read(5, &mut out);
        assert_eq!(out, data);
        // Neighbours untouched.
        let mut edge = [0u8; 5];
        slab.read(0, &mut edge);
        assert_eq!(edge, [0; 5]);
    }

    #[test]
    fn aligned_word_write_is_visible_via_word() {
        let slab = Slab::new(16);
        slab.write(8, &0xDEAD_BEEF_u64.to_le_bytes());
        assert_eq!(slab.word(8).load(Ordering::Relaxed), 0xDEAD_BEEF);
    }

    #[test]
    fn merges_preserve_sibling_bytes() {
        let slab = Slab::new(8);
        slab.write(0, &[0xAA; 8]);
        slab.write(3, &[0x11, 0x22]);
        let mut out = [0u8; 8];
        slab.read(0, &mut out);
        assert_eq!(out, [0xAA, 0xAA, 0xAA, 0x11, 0x22, 0xAA, 0xAA, 0xAA]);
    }

    #[test]
    fn zero_length_ops_are_noops() {
        let slab = Slab::new(4);
        slab.write(4, &[]);
        let mut out = [];
        slab.read(4, &mut out);
    }
}
