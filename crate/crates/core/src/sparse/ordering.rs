use std::collections::VecDeque;

use super::SymSparseMatrix;

/// Fill-reducing ordering applied before factorization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ordering {
    /// Identity permutation.
    #[default]
    Natural,
    /// Reverse Cuthill–McKee on the sparse part, with high-degree rows moved
    /// to the end so that dense couplings (fixed effects) do not widen the
    /// profile.
    Rcm,
}

impl Ordering {
    /// Returns `perm` with `perm[new] = old`.
    pub(crate) fn permutation(self, m: &SymSparseMatrix) -> Vec<usize> {
        match self {
            Ordering::Natural => (0..m.dim()).collect(),
            Ordering::Rcm => rcm(m),
        }
    }
}

fn rcm(m: &SymSparseMatrix) -> Vec<usize> {
    let n = m.dim();
    let mut adj = m.adjacency();
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let dense_cut = (4.0 * (n as f64).sqrt()).max(16.0) as usize;
    let is_dense: Vec<bool> = adj.iter().map(|a| a.len() > dense_cut).collect();
    let degree: Vec<usize> = adj
        .iter()
        .map(|a| a.iter().filter(|&&j| !is_dense[j]).count())
        .collect();

    let mut visited = is_dense.clone();
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).filter(|&i| !is_dense[i]).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = peripheral(seed, &adj, &is_dense, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        let mut nbrs = Vec::new();
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order.extend((0..n).filter(|&i| is_dense[i]));
    order
}

/// Pseudo-peripheral node of the component containing `seed`, found by
/// repeated breadth-first sweeps.
fn peripheral(seed: usize, adj: &[Vec<usize>], is_dense: &[bool], degree: &[usize]) -> usize {
    let mut root = seed;
    let mut best_depth = 0;
    for _ in 0..4 {
        let (depth, last_level) = bfs_levels(root, adj, is_dense);
        if depth <= best_depth && best_depth > 0 {
            break;
        }
        best_depth = depth;
        let next = *last_level.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        if next == root {
            break;
        }
        root = next;
    }
    root
}

fn bfs_levels(root: usize, adj: &[Vec<usize>], is_dense: &[bool]) -> (usize, Vec<usize>) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if !is_dense[w] && level[w] == usize::MAX {
                    level[w] = depth + 1;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> SymSparseMatrix {
        let mut t: Vec<_> = (0..n).map(|i| (i, i, 2.0)).collect();
        t.extend((1..n).map(|i| (i, i - 1, -1.0)));
        SymSparseMatrix::from_triplets(n, t).unwrap()
    }

    #[test]
    fn rcm_is_a_permutation() {
        let m = path_graph(17);
        let mut p = Ordering::Rcm.permutation(&m);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn dense_rows_go_last() {
        let n = 400;
        let mut t: Vec<_> = (0..n).map(|i| (i, i, 4.0)).collect();
        t.extend((2..n).map(|i| (i, i - 1, -1.0)));
        t.extend((1..n).map(|i| (i, 0, 0.01)));
        let m = SymSparseMatrix::from_triplets(n, t).unwrap();
        let p = Ordering::Rcm.permutation(&m);
        assert_eq!(*p.last().unwrap(), 0);
    }
}
