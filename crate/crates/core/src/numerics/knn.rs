//! Exact k-nearest-neighbor search under the l2 metric.
//!
//! Brute force for small inputs, a kd-tree for large low-dimensional ones.
//! Both paths return identical results: neighbors sorted by ascending
//! distance with ties broken by the smaller point index.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::mat::{squared_distance, Mat};

#[derive(Debug, Clone)]
pub struct KnnResult {
    /// indices[q] = the k neighbor indices of query q.
    pub indices: Vec<Vec<usize>>,
    /// distances[q] = matching l2 distances, ascending.
    pub distances: Vec<Vec<f64>>,
}

/// (squared distance, index) with the tie rule baked into the ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        self.d2 < other.d2 || (self.d2 == other.d2 && self.idx < other.idx)
    }
}

/// Fixed-capacity worst-first list of the best k candidates seen so far.
struct BestK {
    k: usize,
    heap: Vec<Candidate>, // unsorted; linear ops, k is small
}

impl BestK {
    fn new(k: usize) -> Self {
        BestK {
            k,
            heap: Vec::with_capacity(k + 1),
        }
    }

    fn worst(&self) -> Option<Candidate> {
        self.heap
            .iter()
            .copied()
            .reduce(|a, b| if a.beats(&b) { b } else { a })
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
            return;
        }
        if let Some(w) = self.worst() {
            if c.beats(&w) {
                let pos = self.heap.iter().position(|x| x == &w).unwrap();
                self.heap[pos] = c;
            }
        }
    }

    /// true if a point at squared distance d2 could still enter the list.
    fn admits(&self, d2: f64) -> bool {
        if self.heap.len() < self.k {
            return true;
        }
        match self.worst() {
            // equality admits: an equal-distance lower index wins ties
            Some(w) => d2 <= w.d2,
            None => true,
        }
    }

    fn into_sorted(mut self) -> Vec<Candidate> {
        self.heap
            .sort_by(|a, b| a.d2.total_cmp(&b.d2).then(a.idx.cmp(&b.idx)));
        self.heap
    }
}

fn query_brute(points: &Mat, query: &[f64], k: usize, skip: Option<usize>) -> Vec<Candidate> {
    let mut best = BestK::new(k);
    for i in 0..points.rows {
        if Some(i) == skip {
            continue;
        }
        let d2 = squared_distance(points.row(i), query);
        best.offer(Candidate { d2, idx: i });
    }
    best.into_sorted()
}

// ---------------------------------------------------------------------------
// kd-tree
// ---------------------------------------------------------------------------

struct KdNode {
    axis: usize,
    split: f64,
    /// point indices for leaves; empty for internal nodes
    points: Vec<usize>,
    left: Option<Box<KdNode>>,
    right: Option<Box<KdNode>>,
}

const LEAF_SIZE: usize = 16;

fn build_kd(points: &Mat, mut idx: Vec<usize>, depth: usize) -> KdNode {
    let d = points.cols;
    if idx.len() <= LEAF_SIZE {
        return KdNode {
            axis: 0,
            split: 0.0,
            points: idx,
            left: None,
            right: None,
        };
    }
    let axis = depth % d;
    idx.sort_unstable_by(|&a, &b| {
        points
            .at(a, axis)
            .total_cmp(&points.at(b, axis))
            .then(a.cmp(&b))
    });
    let mid = idx.len() / 2;
    let split = points.at(idx[mid], axis);
    let right_idx = idx.split_off(mid);
    KdNode {
        axis,
        split,
        points: Vec::new(),
        left: Some(Box::new(build_kd(points, idx, depth + 1))),
        right: Some(Box::new(build_kd(points, right_idx, depth + 1))),
    }
}

fn search_kd(
    node: &KdNode,
    points: &Mat,
    query: &[f64],
    skip: Option<usize>,
    best: &mut BestK,
) {
    if node.left.is_none() {
        for &i in &node.points {
            if Some(i) == skip {
                continue;
            }
            let d2 = squared_distance(points.row(i), query);
            best.offer(Candidate { d2, idx: i });
        }
        return;
    }
    let delta = query[node.axis] - node.split;
    let (near, far) = if delta < 0.0 {
        (node.left.as_ref().unwrap(), node.right.as_ref().unwrap())
    } else {
        (node.right.as_ref().unwrap(), node.left.as_ref().unwrap())
    };
    search_kd(near, points, query, skip, best);
    // the far side may hold equal-distance lower indices, so prune only on
    // strict inequality (admits() is <=)
    if best.admits(delta * delta) {
        search_kd(far, points, query, skip, best);
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Exact kNN of every query row among `points`. With `exclude_self`, query q
/// is assumed to be points row q and is excluded from its own neighbor list.
pub fn knn(points: &Mat, queries: &Mat, k: usize, exclude_self: bool) -> Result<KnnResult> {
    if points.cols != queries.cols {
        return Err(Error::contract(format!(
            "points ({}d) and queries ({}d) dimension mismatch",
            points.cols, queries.cols
        )));
    }
    let budget = if exclude_self {
        points.rows.saturating_sub(1)
    } else {
        points.rows
    };
    if k > budget {
        return Err(Error::param(format!(
            "k={k} exceeds available neighbor count {budget}"
        )));
    }
    if exclude_self && queries.rows != points.rows {
        return Err(Error::contract(
            "exclude_self requires queries to be the point set itself",
        ));
    }

    // kd-trees only pay off in low dimension; high-d searches degenerate to
    // scans with extra bookkeeping
    let use_tree = points.rows > 4096 && points.cols <= 12;
    let tree = if use_tree {
        Some(build_kd(points, (0..points.rows).collect(), 0))
    } else {
        None
    };

    let run_query = |q: usize| -> (Vec<usize>, Vec<f64>) {
        let skip = if exclude_self { Some(q) } else { None };
        let sorted = match &tree {
            Some(t) => {
                let mut best = BestK::new(k);
                search_kd(t, points, queries.row(q), skip, &mut best);
                best.into_sorted()
            }
            None => query_brute(points, queries.row(q), k, skip),
        };
        let idx = sorted.iter().map(|c| c.idx).collect();
        let dist = sorted.iter().map(|c| c.d2.sqrt()).collect();
        (idx, dist)
    };

    // query-parallel; each query writes its own slot so the result is
    // identical to sequential execution
    let results: Vec<(Vec<usize>, Vec<f64>)> =
        (0..queries.rows).into_par_iter().map(run_query).collect();

    let mut indices = Vec::with_capacity(queries.rows);
    let mut distances = Vec::with_capacity(queries.rows);
    for (i, d) in results {
        indices.push(i);
        distances.push(d);
    }
    Ok(KnnResult { indices, distances })
}
