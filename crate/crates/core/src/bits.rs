//! Dense square bit matrix used for reachability closures.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    n: usize,
    words: usize,
    rows: Vec<u64>,
}

impl BitMatrix {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self {
            n,
            words,
            rows: vec![0; n * words],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.rows[i * self.words + j / 64] |= 1 << (j % 64);
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i * self.words + j / 64] & (1 << (j % 64)) != 0
    }

    /// Warshall closure: row i absorbs row k whenever i reaches k.
    pub fn close(&mut self) {
        for k in 0..self.n {
            let (ks, ke) = (k * self.words, (k + 1) * self.words);
            let row_k: Vec<u64> = self.rows[ks..ke].to_vec();
            for i in 0..self.n {
                if i != k && self.get(i, k) {
                    let base = i * self.words;
                    for (w, bits) in row_k.iter().enumerate() {
                        self.rows[base + w] |= bits;
                    }
                }
            }
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn count(&self) -> usize {
        self.rows.iter().map(|w| w.count_ones() as usize).sum()
    }
}
