/// Dense square boolean relation packed into 64-bit words, one row per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BitMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    pub(crate) fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    #[inline]
    pub(crate) fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.words + col / 64] >> (col % 64) & 1 == 1
    }

    #[inline]
    pub(crate) fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.words + col / 64] |= 1 << (col % 64);
    }

    fn row(&self, row: usize) -> &[u64] {
        &self.bits[row * self.words..(row + 1) * self.words]
    }

    /// `dst |= src` for two distinct rows.
    pub(crate) fn or_row_into(&mut self, src: usize, dst: usize) {
        if src == dst {
            return;
        }
        let w = self.words;
        let (s, d) = (src * w, dst * w);
        for k in 0..w {
            let v = self.bits[s + k];
            self.bits[d + k] |= v;
        }
    }

    pub(crate) fn row_count(&self, row: usize) -> usize {
        self.row(row).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub(crate) fn iter_row(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n;
        self.row(row)
            .iter()
            .enumerate()
            .flat_map(move |(k, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let bit = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(k * 64 + bit)
                })
                .filter(move |&c| c < n)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_get_and_iterate_across_word_boundary() {
        let mut m = BitMatrix::new(130);
        m.set(3, 0);
        m.set(3, 64);
        m.set(3, 129);
        assert!(m.get(3, 64));
        assert!(!m.get(3, 65));
        assert_eq!(m.iter_row(3).collect::<Vec<_>>(), vec![0, 64, 129]);
        assert_eq!(m.row_count(3), 3);
        m.or_row_into(3, 7);
        assert_eq!(m.iter_row(7).collect::<Vec<_>>(), vec![0, 64, 129]);
    }
}
