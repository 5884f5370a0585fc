//! Colexicographic ranking of sorted multisets.
//!
//! A multiset `s_1 <= ... <= s_p` over slots `0..n` has rank
//! `sum_k C(s_k + k - 1, k)`. Multisets over `0..n` form the prefix
//! `0..C(n + p - 1, p)` of the ranking for every `n`, which lets a shrinking set of
//! active slots reuse the same array.

#[derive(Debug, Clone)]
pub(crate) struct Binomial {
    max_k: usize,
    rows: Vec<Vec<usize>>,
}

impl Binomial {
    /// Table of `C(n, k)` for `n <= max_n`, `k <= max_k`.
    pub fn new(max_n: usize, max_k: usize) -> Self {
        let mut rows = vec![vec![0usize; max_n + 1]; max_k + 1];
        for n in 0..=max_n {
            rows[0][n] = 1;
        }
        for k in 1..=max_k {
            for n in 1..=max_n {
                rows[k][n] = rows[k - 1][n - 1].saturating_add(rows[k][n - 1]);
            }
        }
        Self { max_k, rows }
    }

    #[inline(always)]
    pub fn c(&self, n: usize, k: usize) -> usize {
        self.rows[k][n]
    }

    /// Number of multisets of size `p` over `n` slots.
    pub fn count(&self, n: usize, p: usize) -> usize {
        if p == 0 {
            1
        } else if n == 0 {
            0
        } else {
            self.c(n + p - 1, p)
        }
    }

    pub fn rank(&self, sorted: &[usize]) -> usize {
        debug_assert!(sorted.len() <= self.max_k);
        sorted.iter().enumerate().map(|(i, &s)| self.c(s + i, i + 1)).sum()
    }

    /// Rank of `sorted` with `x` inserted.
    pub fn rank_with(&self, sorted: &[usize], x: usize) -> usize {
        let mut r = 0;
        let mut placed = false;
        let mut pos = 0;
        for &s in sorted {
            if !placed && x < s {
                r += self.c(x + pos, pos + 1);
                pos += 1;
                placed = true;
            }
            r += self.c(s + pos, pos + 1);
            pos += 1;
        }
        if !placed {
            r += self.c(x + pos, pos + 1);
        }
        r
    }
}

/// Sorts a small tuple of slots and returns its rank.
pub(crate) fn rank_unsorted(binom: &Binomial, slots: &mut [usize]) -> usize {
    slots.sort_unstable();
    binom.rank(slots)
}

/// Enumerates size-`p` multisets over `0..n` in rank order.
pub(crate) struct Multisets {
    n: usize,
    cur: Vec<usize>,
    started: bool,
    done: bool,
}

impl Multisets {
    pub fn new(n: usize, p: usize) -> Self {
        Self { n, cur: vec![0; p], started: false, done: n == 0 && p > 0 }
    }

    pub fn next(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.cur);
        }
        let p = self.cur.len();
        for k in 0..p {
            let cap = if k + 1 < p { self.cur[k + 1] } else { self.n - 1 };
            if self.cur[k] < cap {
                self.cur[k] += 1;
                for v in self.cur.iter_mut().take(k) {
                    *v = 0;
                }
                return Some(&self.cur);
            }
        }
        self.done = true;
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_follows_rank() {
        let b = Binomial::new(20, 4);
        for p in 0..=4 {
            for n in 1..=6 {
                let mut it = Multisets::new(n, p);
                let mut i = 0;
                while let Some(s) = it.next() {
                    assert_eq!(b.rank(s), i);
                    i += 1;
                }
                assert_eq!(i, b.count(n, p));
            }
        }
    }

    #[test]
    fn insertion_rank() {
        let b = Binomial::new(30, 5);
        let mut it = Multisets::new(5, 3);
        while let Some(s) = it.next() {
            for x in 0..5 {
                let mut v = s.to_vec();
                v.push(x);
                assert_eq!(b.rank_with(s, x), rank_unsorted(&b, &mut v));
            }
        }
    }
}
