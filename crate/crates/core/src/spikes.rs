//! Packed binary spike trains.

use std::fmt;

const WORD: usize = 64;

/// A binary activity sequence of fixed length, one bit per time step.
///
/// Bits past `len` in the final word are always zero, so derived equality
/// and hashing compare trains by content.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct SpikeTrain {
    words: Vec<u64>,
    len: usize,
}

impl SpikeTrain {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut train = Self::zeros(0);
        for b in bits {
            train.push(b);
        }
        train
    }

    /// Builds a train of length `len` from spike time indices.
    ///
    /// Returns `None` if any index is `>= len`.
    pub fn from_spike_times(len: usize, times: &[usize]) -> Option<Self> {
        let mut train = Self::zeros(len);
        for &t in times {
            if t >= len {
                return None;
            }
            train.set(t, true);
        }
        Some(train)
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(WORD) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, bit);
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, t: usize) -> bool {
        debug_assert!(t < self.len);
        (self.words[t / WORD] >> (t % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, t: usize, bit: bool) {
        assert!(
            t < self.len,
            "spike index {t} out of range for length {}",
            self.len
        );
        let mask = 1u64 << (t % WORD);
        if bit {
            self.words[t / WORD] |= mask;
        } else {
            self.words[t / WORD] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Ascending time indices of every spike.
    pub fn spike_times(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * WORD + bit)
            })
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |t| self.get(t))
    }
}

impl fmt::Debug for SpikeTrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        write!(f, "SpikeTrain({s})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn push_and_get_across_word_boundary() {
        let bits: Vec<bool> = (0..130).map(|t| t % 3 == 0).collect();
        let train = SpikeTrain::from_bools(bits.iter().copied());
        assert_eq!(train.len(), 130);
        for (t, &b) in bits.iter().enumerate() {
            assert_eq!(train.get(t), b);
        }
        assert_eq!(train.count_ones(), bits.iter().filter(|b| **b).count());
    }

    #[test]
    fn out_of_range_spike_time_is_rejected() {
        assert!(SpikeTrain::from_spike_times(10, &[0, 9]).is_some());
        assert!(SpikeTrain::from_spike_times(10, &[10]).is_none());
    }

    proptest! {
        #[test]
        fn spike_times_reconstruct_train(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let train = SpikeTrain::from_bools(bits.iter().copied());
            let times: Vec<usize> = train.spike_times().collect();
            prop_assert!(times.windows(2).all(|w| w[0] < w[1]));
            let back = SpikeTrain::from_spike_times(bits.len(), &times).unwrap();
            prop_assert_eq!(back, train);
        }
    }
}
