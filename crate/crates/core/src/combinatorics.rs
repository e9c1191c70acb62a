//! Lexicographic k-combinations and binomial counts.

/// `C(n, k)` saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of ordered k-tuples, `n! / (n-k)!`.
pub fn permutations(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (n - k + 1..=n).fold(1u128, |acc, v| acc.saturating_mul(v as u128))
}

/// Streams the k-subsets of `0..n` in lexicographic order without materializing them.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (0..k).collect(),
            done: k > n,
        }
    }

    /// Only the combinations whose smallest element is `first` (k >= 1).
    pub fn starting_with(n: usize, k: usize, first: usize) -> impl Iterator<Item = Vec<usize>> {
        let tail = if k == 0 || first >= n {
            Combinations { n: 0, current: vec![], done: true }
        } else {
            Combinations::new(n - first - 1, k - 1)
        };
        tail.map(move |rest| {
            let mut c = Vec::with_capacity(rest.len() + 1);
            c.push(first);
            c.extend(rest.into_iter().map(|i| i + first + 1));
            c
        })
    }

    /// Advances to the next combination in place; `false` once exhausted.
    pub fn advance(&mut self) -> bool {
        let k = self.current.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.current[i] < self.n - k + i {
                self.current[i] += 1;
                for j in i + 1..k {
                    self.current[j] = self.current[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        if !self.advance() {
            self.done = true;
        }
        Some(out)
    }
}
