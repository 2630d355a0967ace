//! Sparse symmetric matrix stored as upper-triangle triplets with a
//! prebuilt adjacency list for matvec and traversal.

use crate::error::{Error, Result};

/// Symmetric n×n matrix; entries hold (i, j, weight) with i <= j, the
/// mirrored entry is implied. Weights are finite and non-negative, explicit
/// zeros are dropped at construction.
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub entries: Vec<(u32, u32, f64)>,
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl SparseSym {
    pub fn from_entries(n: usize, mut entries: Vec<(u32, u32, f64)>) -> Result<Self> {
        for &(i, j, w) in &entries {
            if i as usize >= n || j as usize >= n {
                return Err(Error::contract(format!(
                    "entry ({i},{j}) out of bounds for dimension {n}"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::contract(format!(
                    "weight {w} at ({i},{j}) must be finite and non-negative"
                )));
            }
        }
        for e in entries.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0, e.2);
            }
        }
        entries.retain(|e| e.2 != 0.0);
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::contract(format!(
                    "duplicate entry ({},{})",
                    w[0].0, w[0].1
                )));
            }
        }

        let mut adjacency = vec![Vec::new(); n];
        for &(i, j, w) in &entries {
            adjacency[i as usize].push((j, w));
            if i != j {
                adjacency[j as usize].push((i, w));
            }
        }
        for adj in adjacency.iter_mut() {
            adj.sort_unstable_by_key(|&(j, _)| j);
        }
        Ok(SparseSym {
            n,
            entries,
            adjacency,
        })
    }

    /// Neighbors of node i (j, weight), including the diagonal if present.
    pub fn neighbors(&self, i: usize) -> &[(u32, f64)] {
        &self.adjacency[i]
    }

    /// Row sums (degrees for a graph adjacency matrix).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.adjacency[i].iter().map(|&(_, w)| w).sum())
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                self.adjacency[i]
                    .iter()
                    .map(|&(j, w)| w * x[j as usize])
                    .sum()
            })
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for &(i, j, w) in &self.entries {
            s += if i == j { w * w } else { 2.0 * w * w };
        }
        s.sqrt()
    }

    pub fn to_dense(&self) -> crate::numerics::Mat {
        let mut m = crate::numerics::Mat::zeros(self.n, self.n);
        for &(i, j, w) in &self.entries {
            m.set(i as usize, j as usize, w);
            m.set(j as usize, i as usize, w);
        }
        m
    }

    /// Connected components under nonzero off-diagonal entries; returns a
    /// component id per node, ids assigned in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    let v = v as usize;
                    if v != u && comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Accumulates symmetric entries, keeping the maximum weight on collision.
#[derive(Debug, Default)]
pub struct SparseSymBuilder {
    map: std::collections::BTreeMap<(u32, u32), f64>,
}

impl SparseSymBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_max(&mut self, i: usize, j: usize, w: f64) {
        let key = if i <= j {
            (i as u32, j as u32)
        } else {
            (j as u32, i as u32)
        };
        let cur = self.map.entry(key).or_insert(f64::NEG_INFINITY);
        if w > *cur {
            *cur = w;
        }
    }

    pub fn build(self, n: usize) -> Result<SparseSym> {
        let entries = self.map.into_iter().map(|((i, j), w)| (i, j, w)).collect();
        SparseSym::from_entries(n, entries)
    }
}
