//! Envelope (skyline) storage for symmetric positive-definite systems,
//! with reverse Cuthill-McKee ordering to keep the envelope narrow.

use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering of an undirected graph.
///
/// Returns `order` with `order[new] = old`. Each connected component is
/// started from a pseudo-peripheral vertex; ties are broken by index so the
/// result is deterministic.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(adjacency, &degree, seed);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adjacency: &[Vec<usize>], root: usize) -> Vec<Vec<usize>> {
    let mut seen = std::collections::HashSet::from([root]);
    let mut levels = vec![vec![root]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adjacency[v] {
                if seen.insert(w) {
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        next.sort_unstable();
        levels.push(next);
    }
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut root = seed;
    let mut depth = bfs_levels(adjacency, root).len();
    loop {
        let levels = bfs_levels(adjacency, root);
        let candidate = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&v| (degree[v], v))
            .unwrap();
        let cand_depth = bfs_levels(adjacency, candidate).len();
        if cand_depth > depth {
            root = candidate;
            depth = cand_depth;
        } else {
            return root;
        }
    }
}

/// Lower triangle of a symmetric matrix in row-envelope storage.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Creates a zero matrix whose envelope covers every `(i, j)` pair in `pattern`.
    pub fn with_pattern<I>(n: usize, pattern: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in pattern {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            first[r] = first[r].min(c);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Self { first, start, values: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Number of stored entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(col <= row && col >= self.first[row]);
        self.start[row] + col - self.first[row]
    }

    /// Adds `v` to entry `(i, j)` (and by symmetry `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.index(r, c);
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.values[self.index(r, c)]
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let f = self.first[i];
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Cholesky factorization `A = L L^T` inside the envelope.
    ///
    /// Returns `None` if a pivot is not positive.
    pub fn cholesky(&self) -> Option<CholeskyFactor> {
        let n = self.dim();
        let mut l = self.values.clone();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let row_i = &l[si + k0 - fi..si + j - fi];
                let row_j = &l[sj + k0 - fj..sj + j - fj];
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                let diag_j = l[sj + j - fj];
                let idx = si + j - fi;
                l[idx] = (l[idx] - dot) / diag_j;
            }
            let row = &l[si..si + i - fi];
            let dot: f64 = row.iter().map(|a| a * a).sum();
            let d = l[si + i - fi] - dot;
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            l[si + i - fi] = d.sqrt();
        }
        Some(CholeskyFactor { first: self.first.clone(), start: self.start.clone(), values: l })
    }
}

/// Envelope Cholesky factor produced by [`SkylineMatrix::cholesky`].
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        // L y = b
        for i in 0..n {
            let f = self.first[i];
            let s = self.start[i];
            let row = &self.values[s..s + i - f];
            let dot: f64 = row.iter().zip(&y[f..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / self.values[s + i - f];
        }
        // L^T x = y, column sweep
        for i in (0..n).rev() {
            let f = self.first[i];
            let s = self.start[i];
            y[i] /= self.values[s + i - f];
            let xi = y[i];
            for (k, &a) in self.values[s..s + i - f].iter().enumerate() {
                y[f + k] -= a * xi;
            }
        }
        y
    }
}
