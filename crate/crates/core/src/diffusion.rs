//! Spatially regularized diffusion clustering over superpixel
//! representatives: density estimation, representative selection, radius-
//! gated kNN graph, Markov diffusion eigenstructure, diffusion-distance
//! mode seeking, hierarchical label propagation, majority voting.

use crate::error::{Error, Result};
use crate::io::HsiCube;
use crate::numerics::{
    eig_sym_dense, eig_sym_sparse, knn, squared_distance, Mat, SparseSym, SparseSymBuilder,
};
use crate::superpixel::{
    build_pixel_graph, default_lambda, default_sigma_e, ers_segment, SuperpixelSegmentation,
};

/// Graphs up to this many nodes are eigendecomposed densely; larger ones go
/// through the iterative sparse path.
const DENSE_EIG_LIMIT: usize = 512;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// High-density pixels chosen per superpixel, with everything later stages
/// need about them.
#[derive(Debug, Clone)]
pub struct RepresentativeSet {
    /// raster pixel index of each representative
    pub pixel_indices: Vec<usize>,
    /// feature rows aligned with `pixel_indices`
    pub features: Mat,
    /// (row, col) spatial coordinates
    pub coords: Vec<(f64, f64)>,
    /// local density ζ of each representative
    pub densities: Vec<f64>,
    /// owning superpixel id (1-based)
    pub superpixel_of: Vec<u32>,
    /// superpixels that had fewer than k pixels: (id, contributed)
    pub shortfall: Vec<(u32, usize)>,
}

impl RepresentativeSet {
    pub fn len(&self) -> usize {
        self.pixel_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_indices.is_empty()
    }
}

/// Markov diffusion structure on the largest connected component of the
/// representative graph: stationary distribution and π-normalized
/// eigenpairs of the transition matrix P = D⁻¹W, computed through the
/// symmetric conjugate D^{-1/2} W D^{-1/2}.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub adjacency: SparseSym,
    pub degrees: Vec<f64>,
    pub stationary: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// node × n_eigs matrix of ψ_m values, ⟨ψ_m, ψ_m⟩_π = 1
    pub eigenvectors: Mat,
    pub time: f64,
    /// representative index of every model node
    pub node_reps: Vec<usize>,
    /// representative index -> model node (None when off-component)
    pub node_of_rep: Vec<Option<usize>>,
    /// connected-component id of every original graph node
    pub full_components: Vec<usize>,
    /// representatives outside the largest component
    pub n_off_component: usize,
}

impl DiffusionModel {
    pub fn n_nodes(&self) -> usize {
        self.node_reps.len()
    }

    /// Diffusion distance between two model nodes at the model's time.
    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        let n = self.n_nodes();
        if a >= n || b >= n {
            return Err(Error::param(format!(
                "node index out of component (n={n}, got {a}, {b})"
            )));
        }
        let mut sum = 0.0;
        for m in 0..self.eigenvalues.len() {
            let w = self.eigenvalues[m].abs().powf(2.0 * self.time);
            let d = self.eigenvectors.at(a, m) - self.eigenvectors.at(b, m);
            sum += w * d * d;
        }
        Ok(sum.sqrt())
    }

    /// Embedding whose Euclidean distances equal diffusion distances:
    /// row i, column m holds |λ_m|^t ψ_m(i).
    pub fn diffusion_coords(&self) -> Mat {
        let n = self.n_nodes();
        let m = self.eigenvalues.len();
        let mut out = Mat::zeros(n, m);
        for (c, &lambda) in self.eigenvalues.iter().enumerate() {
            let w = lambda.abs().powf(self.time);
            for r in 0..n {
                out.set(r, c, w * self.eigenvectors.at(r, c));
            }
        }
        out
    }
}

pub fn diffusion_distance(model: &DiffusionModel, i: usize, j: usize) -> Result<f64> {
    model.distance(i, j)
}

/// How each pixel's final label arose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Mode,
    Lbb,
    DensityPropagated,
    MajorityVote,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Mode => "mode",
            Stage::Lbb => "lbb",
            Stage::DensityPropagated => "density-propagated",
            Stage::MajorityVote => "majority-vote",
        }
    }
}

/// Final per-pixel labels with mode provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    pub height: usize,
    pub width: usize,
    pub n_clusters: usize,
    pub labels: Vec<u32>,
    /// raster pixel indices of the cluster modes, in label order
    pub mode_pixels: Vec<usize>,
    pub stages: Vec<Stage>,
}

impl ClusterMap {
    pub fn to_label_mask(&self) -> Result<crate::io::LabelMask> {
        if self.n_clusters > u16::MAX as usize {
            return Err(Error::param("more than 65535 clusters cannot be exported"));
        }
        crate::io::LabelMask::new(
            self.height,
            self.width,
            self.labels.iter().map(|&l| l as u16).collect(),
        )
    }
}

/// Everything the clustering stages need beyond the feature cube.
#[derive(Debug, Clone)]
pub struct ClusterParams {
    pub n_superpixels: usize,
    /// representatives per superpixel (k)
    pub reps_per_superpixel: usize,
    /// Gaussian kernel scale; None = self-tuning median heuristic
    pub sigma0: Option<f64>,
    /// neighbor count for density, graph and local backbones (k_n)
    pub k_n: usize,
    /// spatial gating radius (R)
    pub radius: f64,
    pub k_clusters: usize,
    /// diffusion time
    pub t: f64,
    /// eigenpairs retained; None = min(n, 100)
    pub n_eigs: Option<usize>,
    /// ERS balancing weight; None = data-driven heuristic
    pub ers_lambda: Option<f64>,
    /// ERS edge kernel scale; None = edge-difference standard deviation
    pub sigma_e: Option<f64>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            n_superpixels: 100,
            reps_per_superpixel: 3,
            sigma0: None,
            k_n: 10,
            radius: 20.0,
            k_clusters: 2,
            t: 30.0,
            n_eigs: None,
            ers_lambda: None,
            sigma_e: None,
        }
    }
}

/// Diagnostics accumulated across a clustering run.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub sigma0_density: f64,
    pub sigma0_graph: f64,
    pub sigma_e: f64,
    pub ers_lambda: f64,
    pub n_representatives: usize,
    pub n_off_component: usize,
    pub n_eigs: usize,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Local density ζ(x) = Σ_{y ∈ kNN(x)} exp(-|x-y|²/σ₀²), neighbors
/// excluding the point itself.
pub fn local_density(features: &Mat, k_n: usize, sigma0: f64) -> Result<Vec<f64>> {
    if sigma0 <= 0.0 {
        return Err(Error::param("sigma0 must be positive"));
    }
    if k_n == 0 {
        return Err(Error::param("k_n must be at least 1"));
    }
    let res = knn(features, features, k_n, true)?;
    Ok(density_from_knn(&res.distances, sigma0))
}

fn density_from_knn(distances: &[Vec<f64>], sigma0: f64) -> Vec<f64> {
    let inv = 1.0 / (sigma0 * sigma0);
    distances
        .iter()
        .map(|row| row.iter().map(|&d| (-d * d * inv).exp()).sum())
        .collect()
}

/// Median of the flattened kNN distances; the self-tuning σ₀ heuristic.
fn median_distance(distances: &[Vec<f64>]) -> f64 {
    let mut all: Vec<f64> = distances.iter().flatten().copied().collect();
    if all.is_empty() {
        return 1.0;
    }
    all.sort_by(f64::total_cmp);
    let m = all[all.len() / 2];
    if m > 1e-12 {
        m
    } else {
        1.0
    }
}

/// Top-k density maximizers of every superpixel (ties to the lower pixel
/// index); superpixels smaller than k contribute all their pixels.
pub fn select_representatives(
    seg: &SuperpixelSegmentation,
    features: &Mat,
    densities: &[f64],
    k: usize,
) -> Result<RepresentativeSet> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if features.rows != seg.labels.len() || densities.len() != seg.labels.len() {
        return Err(Error::contract(
            "features/densities misaligned with the segmentation",
        ));
    }
    let members = seg.members_by_segment();
    let mut pixel_indices = Vec::new();
    let mut superpixel_of = Vec::new();
    let mut shortfall = Vec::new();
    for (sp, pixels) in members.iter().enumerate() {
        let mut ranked: Vec<usize> = pixels.clone();
        ranked.sort_by(|&a, &b| densities[b].total_cmp(&densities[a]).then(a.cmp(&b)));
        let take = k.min(ranked.len());
        if take < k {
            shortfall.push(((sp + 1) as u32, take));
        }
        for &px in ranked.iter().take(take) {
            pixel_indices.push(px);
            superpixel_of.push((sp + 1) as u32);
        }
    }

    let d = features.cols;
    let mut feat = Mat::zeros(pixel_indices.len(), d);
    let mut coords = Vec::with_capacity(pixel_indices.len());
    let mut dens = Vec::with_capacity(pixel_indices.len());
    for (row, &px) in pixel_indices.iter().enumerate() {
        feat.row_mut(row).copy_from_slice(features.row(px));
        coords.push(((px / seg.width) as f64, (px % seg.width) as f64));
        dens.push(densities[px]);
    }
    Ok(RepresentativeSet {
        pixel_indices,
        features: feat,
        coords,
        densities: dens,
        superpixel_of,
        shortfall,
    })
}

/// Spatially gated kNN graph over the representatives: every node connects
/// to its k_n feature-space nearest neighbors among representatives within
/// spatial radius R, with Gaussian weights exp(-|x_i-x_j|²/σ₀²),
/// symmetrized by elementwise max, plus unit self-loops. Returns the graph
/// and the nodes that had no in-radius neighbor.
pub fn build_graph(
    reps: &RepresentativeSet,
    sigma0: f64,
    radius: f64,
    k_n: usize,
) -> Result<(SparseSym, Vec<usize>)> {
    if radius <= 0.0 {
        return Err(Error::param("radius must be positive"));
    }
    if sigma0 <= 0.0 {
        return Err(Error::param("sigma0 must be positive"));
    }
    let n = reps.len();

    // spatial grid with cell size R: candidates live in the 3×3 cell block
    let cell = |coord: f64| (coord / radius).floor() as i64;
    let mut grid: std::collections::BTreeMap<(i64, i64), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, &(r, c)) in reps.coords.iter().enumerate() {
        grid.entry((cell(r), cell(c))).or_default().push(i);
    }

    let inv_s2 = 1.0 / (sigma0 * sigma0);
    let r2 = radius * radius;
    let mut builder = SparseSymBuilder::new();
    let mut isolated = Vec::new();
    for i in 0..n {
        let (ri, ci) = reps.coords[i];
        let (gr, gc) = (cell(ri), cell(ci));
        // (feature distance², candidate) within the spatial radius
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for dr in -1..=1 {
            for dc in -1..=1 {
                if let Some(bucket) = grid.get(&(gr + dr, gc + dc)) {
                    for &j in bucket {
                        if j == i {
                            continue;
                        }
                        let (rj, cj) = reps.coords[j];
                        let sd = (ri - rj) * (ri - rj) + (ci - cj) * (ci - cj);
                        if sd <= r2 {
                            let fd = squared_distance(reps.features.row(i), reps.features.row(j));
                            cands.push((fd, j));
                        }
                    }
                }
            }
        }
        if cands.is_empty() {
            isolated.push(i);
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(fd, j) in cands.iter().take(k_n) {
            // a selected kNN edge must stay an edge even when the kernel
            // underflows; the floor keeps the walk irreducible
            let w = (-fd * inv_s2).exp().max(1e-300);
            builder.set_max(i, j, w);
        }
    }
    for i in 0..n {
        builder.set_max(i, i, 1.0);
    }
    Ok((builder.build(n)?, isolated))
}

/// Restrict to the largest connected component and compute the diffusion
/// eigenstructure there.
pub fn diffusion_model(w: &SparseSym, n_eigs: usize, t: f64) -> Result<DiffusionModel> {
    if w.n == 0 {
        return Err(Error::contract("empty graph"));
    }
    if t < 0.0 {
        return Err(Error::param("diffusion time must be non-negative"));
    }

    let comp = w.components();
    let n_comp = comp.iter().max().unwrap() + 1;
    let mut sizes = vec![0usize; n_comp];
    for &c in &comp {
        sizes[c] += 1;
    }
    // largest component, first-appearing on ties
    let largest = (0..n_comp)
        .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
        .unwrap();

    let node_reps: Vec<usize> = (0..w.n).filter(|&i| comp[i] == largest).collect();
    let mut node_of_rep = vec![None; w.n];
    for (node, &rep) in node_reps.iter().enumerate() {
        node_of_rep[rep] = Some(node);
    }
    let n = node_reps.len();
    let n_off = w.n - n;

    let mut entries = Vec::new();
    for &(i, j, weight) in &w.entries {
        if let (Some(a), Some(b)) = (node_of_rep[i as usize], node_of_rep[j as usize]) {
            entries.push((a as u32, b as u32, weight));
        }
    }
    let sub = SparseSym::from_entries(n, entries)?;

    let degrees = sub.row_sums();
    if degrees.iter().any(|&d| d <= 0.0) {
        return Err(Error::contract(
            "a node has zero degree; add self-loops before building the model",
        ));
    }
    let total: f64 = degrees.iter().sum();
    let stationary: Vec<f64> = degrees.iter().map(|&d| d / total).collect();

    // symmetric conjugate A = D^{-1/2} W D^{-1/2}
    let inv_sqrt_d: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let conj_entries: Vec<(u32, u32, f64)> = sub
        .entries
        .iter()
        .map(|&(i, j, v)| (i, j, v * inv_sqrt_d[i as usize] * inv_sqrt_d[j as usize]))
        .collect();
    let conj = SparseSym::from_entries(n, conj_entries)?;

    let m = n_eigs.min(n).max(1);
    let pairs = if n <= DENSE_EIG_LIMIT {
        eig_sym_dense(&conj.to_dense(), m)?
    } else {
        eig_sym_sparse(&conj, m)?
    };

    // ψ_m = sqrt(Σd) · D^{-1/2} v_m, so ⟨ψ_m, ψ_m⟩_π = 1
    let scale = total.sqrt();
    let mut eigenvectors = Mat::zeros(n, m);
    for c in 0..m {
        for r in 0..n {
            eigenvectors.set(r, c, scale * inv_sqrt_d[r] * pairs.vectors.at(r, c));
        }
    }

    Ok(DiffusionModel {
        adjacency: sub,
        degrees,
        stationary,
        eigenvalues: pairs.values,
        eigenvectors,
        time: t,
        node_reps,
        node_of_rep,
        full_components: comp,
        n_off_component: n_off,
    })
}

/// Per-node (d_t, Δ_t): the global density argmax gets the maximum
/// diffusion distance over the set, everything else the minimum distance
/// to any point of density at least its own (itself excluded).
pub fn mode_scores(model: &DiffusionModel, densities: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = model.n_nodes();
    if densities.len() != n {
        return Err(Error::contract(
            "density vector misaligned with the diffusion model",
        ));
    }
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let coords = model.diffusion_coords();
    let dist = |a: usize, b: usize| squared_distance(coords.row(a), coords.row(b)).sqrt();

    let mut argmax = 0usize;
    for i in 1..n {
        if densities[i] > densities[argmax] {
            argmax = i;
        }
    }

    let mut d_t = vec![0.0; n];
    for i in 0..n {
        if i == argmax {
            let mut worst = 0.0f64;
            for j in 0..n {
                worst = worst.max(dist(i, j));
            }
            d_t[i] = worst;
        } else {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if j != i && densities[j] >= densities[i] {
                    let d = dist(i, j);
                    if d < best {
                        best = d;
                    }
                }
            }
            d_t[i] = best;
        }
    }
    let delta: Vec<f64> = d_t.iter().zip(densities).map(|(&d, &z)| d * z).collect();
    Ok((d_t, delta))
}

/// Labels over the whole representative set.
#[derive(Debug, Clone)]
pub struct RepLabeling {
    /// 1..=k_clusters per representative
    pub labels: Vec<u32>,
    pub stages: Vec<Stage>,
    /// representative indices of the modes, label order
    pub modes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Hierarchical assignment: Δ_t-maximal modes, local backbones, then
/// density-ordered propagation along diffusion distances. Off-component
/// representatives fall back to feature-space distances.
pub fn assign_labels(
    reps: &RepresentativeSet,
    model: &DiffusionModel,
    delta: &[f64],
    k_clusters: usize,
    k_n: usize,
) -> Result<RepLabeling> {
    let n_reps = reps.len();
    let n_nodes = model.n_nodes();
    if delta.len() != n_nodes {
        return Err(Error::contract("mode scores misaligned with the model"));
    }
    if k_clusters == 0 || k_clusters > n_reps {
        return Err(Error::param(format!(
            "cluster count {k_clusters} out of range 1..={n_reps}"
        )));
    }
    if k_clusters > n_nodes {
        return Err(Error::param(format!(
            "cluster count {k_clusters} exceeds the {n_nodes} nodes of the largest graph component"
        )));
    }
    let mut warnings = Vec::new();

    // stage 1: modes = top-Δ nodes (desc, ties to lower node index)
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    let mut labels = vec![0u32; n_reps];
    let mut stages = vec![Stage::DensityPropagated; n_reps];
    let mut modes = Vec::with_capacity(k_clusters);
    for (rank, &node) in order.iter().take(k_clusters).enumerate() {
        let rep = model.node_reps[node];
        labels[rep] = (rank + 1) as u32;
        stages[rep] = Stage::Mode;
        modes.push(rep);
    }

    // stage 2: local backbones, feature-space kNN over all representatives,
    // first writer wins in mode order
    if n_reps > 1 {
        let lbb_k = k_n.min(n_reps - 1);
        let mode_feats = {
            let mut m = Mat::zeros(modes.len(), reps.features.cols);
            for (r, &rep) in modes.iter().enumerate() {
                m.row_mut(r).copy_from_slice(reps.features.row(rep));
            }
            m
        };
        let nn = knn(&reps.features, &mode_feats, lbb_k + 1, false)?;
        for (rank, &mode_rep) in modes.iter().enumerate() {
            let label = (rank + 1) as u32;
            let mut taken = 0usize;
            for &j in &nn.indices[rank] {
                if j == mode_rep {
                    continue;
                }
                if taken == lbb_k {
                    break;
                }
                taken += 1;
                if labels[j] == 0 {
                    labels[j] = label;
                    stages[j] = Stage::Lbb;
                }
            }
        }
    }

    // graph components: the model covers the largest one; foreign
    // components propagate in feature space
    if model.full_components.len() != n_reps {
        return Err(Error::contract(
            "component map misaligned with the representative set",
        ));
    }
    let comp_of_rep = &model.full_components;
    let n_components = comp_of_rep.iter().max().map_or(0, |&c| c + 1);

    let labeled_feature_nearest = |rep: usize, labels: &[u32]| -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n_reps {
            if j == rep || labels[j] == 0 {
                continue;
            }
            let d = squared_distance(reps.features.row(rep), reps.features.row(j));
            if best.map_or(true, |(bd, bj)| d < bd || (d == bd && j < bj)) {
                best = Some((d, j));
            }
        }
        best.map(|(_, j)| j)
    };

    // stage 3a: a foreign component with no labeled point gets its density
    // argmax labeled from the nearest labeled representative anywhere
    for comp in 0..n_components {
        let members: Vec<usize> = (0..n_reps).filter(|&r| comp_of_rep[r] == comp).collect();
        if members.is_empty() || members.iter().any(|&r| labels[r] != 0) {
            continue;
        }
        let &anchor = members
            .iter()
            .max_by(|&&a, &&b| {
                reps.densities[a]
                    .total_cmp(&reps.densities[b])
                    .then(b.cmp(&a))
            })
            .unwrap();
        if let Some(src) = labeled_feature_nearest(anchor, &labels) {
            labels[anchor] = labels[src];
            stages[anchor] = Stage::DensityPropagated;
            warnings.push(format!(
                "component {comp} had no labeled point; representative {anchor} promoted via \
                 feature-space neighbor {src}"
            ));
        }
    }

    // stage 3b: remaining representatives in decreasing density adopt the
    // label of the nearest already-labeled higher-density point
    let coords = model.diffusion_coords();
    let mut by_density: Vec<usize> = (0..n_reps).filter(|&r| labels[r] == 0).collect();
    by_density.sort_by(|&a, &b| {
        reps.densities[b]
            .total_cmp(&reps.densities[a])
            .then(a.cmp(&b))
    });
    for rep in by_density {
        let in_component = model.node_of_rep[rep].is_some();
        let dist_to = |other: usize| -> Option<f64> {
            if in_component {
                match (model.node_of_rep[rep], model.node_of_rep[other]) {
                    (Some(a), Some(b)) => {
                        Some(squared_distance(coords.row(a), coords.row(b)).sqrt())
                    }
                    _ => None, // different components never mix diffusion distances
                }
            } else if comp_of_rep[other] == comp_of_rep[rep] {
                Some(squared_distance(reps.features.row(rep), reps.features.row(other)).sqrt())
            } else {
                None
            }
        };

        let mut chosen: Option<(f64, usize)> = None;
        // strictly denser labeled neighbors first
        for j in 0..n_reps {
            if j == rep || labels[j] == 0 || reps.densities[j] <= reps.densities[rep] {
                continue;
            }
            if let Some(d) = dist_to(j) {
                if chosen.map_or(true, |(bd, bj)| d < bd || (d == bd && j < bj)) {
                    chosen = Some((d, j));
                }
            }
        }
        if chosen.is_none() {
            // fallback: nearest labeled of any density within reach
            for j in 0..n_reps {
                if j == rep || labels[j] == 0 {
                    continue;
                }
                if let Some(d) = dist_to(j) {
                    if chosen.map_or(true, |(bd, bj)| d < bd || (d == bd && j < bj)) {
                        chosen = Some((d, j));
                    }
                }
            }
            if chosen.is_some() {
                warnings.push(format!(
                    "representative {rep} labeled via any-density fallback"
                ));
            }
        }
        if chosen.is_none() {
            // last resort: global feature-space nearest labeled
            if let Some(j) = labeled_feature_nearest(rep, &labels) {
                chosen = Some((0.0, j));
                warnings.push(format!(
                    "representative {rep} labeled via global feature-space fallback"
                ));
            }
        }
        match chosen {
            Some((_, j)) => {
                labels[rep] = labels[j];
                stages[rep] = Stage::DensityPropagated;
            }
            None => {
                return Err(Error::contract(
                    "no labeled representative reachable; cannot propagate labels",
                ))
            }
        }
    }

    Ok(RepLabeling {
        labels,
        stages,
        modes,
        warnings,
    })
}

/// Per-superpixel majority vote over its representatives' labels (modal
/// ties to the smallest label); every pixel of the superpixel takes the
/// modal label.
pub fn majority_vote(
    seg: &SuperpixelSegmentation,
    reps: &RepresentativeSet,
    labeling: &RepLabeling,
    k_clusters: usize,
) -> Result<ClusterMap> {
    if labeling.labels.len() != reps.len() {
        return Err(Error::contract("labeling misaligned with representatives"));
    }
    // modal label per superpixel
    let mut votes: Vec<Vec<u32>> = vec![Vec::new(); seg.n_segments];
    for (rep, &sp) in reps.superpixel_of.iter().enumerate() {
        votes[(sp - 1) as usize].push(labeling.labels[rep]);
    }
    let mut winner = vec![0u32; seg.n_segments];
    for (sp, vote) in votes.iter().enumerate() {
        if vote.is_empty() {
            return Err(Error::contract(format!(
                "superpixel {} has no labeled representative",
                sp + 1
            )));
        }
        let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
        for &v in vote {
            *counts.entry(v).or_insert(0) += 1;
        }
        // highest count, ties to the smallest label (BTreeMap iterates
        // ascending, strict > keeps the first maximum)
        let mut best_label = 0u32;
        let mut best_count = 0usize;
        for (&label, &count) in &counts {
            if count > best_count {
                best_count = count;
                best_label = label;
            }
        }
        winner[sp] = best_label;
    }

    let mut labels = vec![0u32; seg.labels.len()];
    let mut stages = vec![Stage::MajorityVote; seg.labels.len()];
    for (px, &sp) in seg.labels.iter().enumerate() {
        labels[px] = winner[(sp - 1) as usize];
    }
    // representatives whose own assignment survived the vote keep their
    // provenance stage
    for (rep, &px) in reps.pixel_indices.iter().enumerate() {
        if labeling.labels[rep] == labels[px] {
            stages[px] = labeling.stages[rep];
        }
    }
    let mode_pixels = labeling.modes.iter().map(|&r| reps.pixel_indices[r]).collect();
    Ok(ClusterMap {
        height: seg.height,
        width: seg.width,
        n_clusters: k_clusters,
        labels,
        mode_pixels,
        stages,
    })
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Run the full clustering pipeline. `features` carries the vectors the
/// diffusion stages operate on (the autoencoder latent, or the raw
/// normalized spectra for the baseline); `pc3` is the 3-component false
/// color image driving the superpixel segmentation.
pub fn cluster(
    features: &HsiCube,
    pc3: &HsiCube,
    params: &ClusterParams,
) -> Result<(ClusterMap, RunStats)> {
    if features.height != pc3.height || features.width != pc3.width {
        return Err(Error::contract(
            "feature cube and PC image dimensions differ",
        ));
    }
    let mut stats = RunStats::default();

    // superpixels on the false-color image
    let sigma_e = match params.sigma_e {
        Some(v) => v,
        None => default_sigma_e(pc3)?,
    };
    stats.sigma_e = sigma_e;
    let graph = build_pixel_graph(pc3, sigma_e)?;
    let lambda = params
        .ers_lambda
        .unwrap_or_else(|| default_lambda(&graph, params.n_superpixels));
    stats.ers_lambda = lambda;
    let seg = ers_segment(&graph, params.n_superpixels, lambda)?;

    // density over every pixel in feature space
    let flat = crate::io::flatten(features);
    if params.k_n >= flat.rows {
        return Err(Error::param(format!(
            "k_n={} must be below the pixel count {}",
            params.k_n, flat.rows
        )));
    }
    let nn = knn(&flat, &flat, params.k_n, true)?;
    let sigma0_density = params.sigma0.unwrap_or_else(|| median_distance(&nn.distances));
    stats.sigma0_density = sigma0_density;
    let densities = density_from_knn(&nn.distances, sigma0_density);

    let reps = select_representatives(&seg, &flat, &densities, params.reps_per_superpixel)?;
    stats.n_representatives = reps.len();
    for &(sp, got) in &reps.shortfall {
        stats
            .warnings
            .push(format!("superpixel {sp} contributed only {got} representatives"));
    }

    let sigma0_graph = match params.sigma0 {
        Some(v) => v,
        None => {
            let k = params.k_n.min(reps.len().saturating_sub(1)).max(1);
            let rep_nn = knn(&reps.features, &reps.features, k, true)?;
            median_distance(&rep_nn.distances)
        }
    };
    stats.sigma0_graph = sigma0_graph;

    let (w, isolated) = build_graph(&reps, sigma0_graph, params.radius, params.k_n)?;
    for i in isolated {
        stats
            .warnings
            .push(format!("representative {i} has no neighbor within the spatial radius"));
    }

    let n_eigs = params.n_eigs.unwrap_or_else(|| reps.len().min(100));
    let model = diffusion_model(&w, n_eigs, params.t)?;
    stats.n_off_component = model.n_off_component;
    stats.n_eigs = model.eigenvalues.len();
    if model.n_off_component > 0 {
        stats.warnings.push(format!(
            "{} representatives outside the largest graph component",
            model.n_off_component
        ));
    }

    let node_densities: Vec<f64> = model.node_reps.iter().map(|&r| reps.densities[r]).collect();
    let (_d_t, delta) = mode_scores(&model, &node_densities)?;
    let labeling = assign_labels(&reps, &model, &delta, params.k_clusters, params.k_n)?;
    stats.warnings.extend(labeling.warnings.iter().cloned());

    let map = majority_vote(&seg, &reps, &labeling, params.k_clusters)?;
    debug_assert!(map.labels.iter().all(|&l| l >= 1 && l as usize <= params.k_clusters));
    Ok((map, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_model(entries: Vec<(u32, u32, f64)>, n: usize, t: f64) -> DiffusionModel {
        let w = SparseSym::from_entries(n, entries).unwrap();
        diffusion_model(&w, n, t).unwrap()
    }

    #[test]
    fn density_identical_points() {
        let features = Mat::from_vec(2, 1, vec![4.0, 4.0]).unwrap();
        let z = local_density(&features, 1, 1.0).unwrap();
        assert_eq!(z, vec![1.0, 1.0]);
    }

    #[test]
    fn density_decays_with_isolation() {
        let near = Mat::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let far = Mat::from_vec(2, 1, vec![0.0, 10.0]).unwrap();
        let zn = local_density(&near, 1, 1.0).unwrap()[0];
        let zf = local_density(&far, 1, 1.0).unwrap()[0];
        assert!(zf < zn);
        assert!(zf < 1e-20);
    }

    #[test]
    fn density_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let n = 100;
        let d = 4;
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
        let features = Mat::from_vec(n, d, data).unwrap();
        let sigma0 = 0.7;
        let k_n = 5;
        let got = local_density(&features, k_n, sigma0).unwrap();

        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    (
                        squared_distance(features.row(i), features.row(j)).sqrt(),
                        j,
                    )
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: f64 = dists
                .iter()
                .take(k_n)
                .map(|&(d, _)| (-d * d / (sigma0 * sigma0)).exp())
                .sum();
            assert!(
                (got[i] - expect).abs() <= 1e-12,
                "density mismatch at {i}: {} vs {expect}",
                got[i]
            );
        }
    }

    #[test]
    fn density_monotone_in_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let data: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let features = Mat::from_vec(20, 3, data).unwrap();
        let small = local_density(&features, 4, 0.3).unwrap();
        let large = local_density(&features, 4, 0.9).unwrap();
        for (s, l) in small.iter().zip(&large) {
            assert!(s <= l, "shrinking sigma increased a density");
        }
    }

    fn toy_segmentation() -> SuperpixelSegmentation {
        // 2×4 image, left half segment 1, right half segment 2
        SuperpixelSegmentation {
            height: 2,
            width: 4,
            n_segments: 2,
            labels: vec![1, 1, 2, 2, 1, 1, 2, 2],
        }
    }

    #[test]
    fn representatives_argmax_per_superpixel() {
        let seg = toy_segmentation();
        let features = Mat::from_vec(8, 1, (0..8).map(|v| v as f64).collect()).unwrap();
        let densities = vec![0.1, 0.9, 0.3, 0.8, 0.5, 0.2, 0.4, 0.7];
        let reps = select_representatives(&seg, &features, &densities, 1).unwrap();
        assert_eq!(reps.pixel_indices, vec![1, 3]);
        assert_eq!(reps.superpixel_of, vec![1, 2]);
        assert!(reps.shortfall.is_empty());
    }

    #[test]
    fn representatives_shortfall_recorded() {
        let seg = SuperpixelSegmentation {
            height: 1,
            width: 3,
            n_segments: 2,
            labels: vec![1, 1, 2],
        };
        let features = Mat::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let densities = vec![0.5, 0.4, 0.3];
        let reps = select_representatives(&seg, &features, &densities, 5).unwrap();
        assert_eq!(reps.len(), 3);
        assert_eq!(reps.shortfall, vec![(1, 2), (2, 1)]);
    }

    #[test]
    fn representatives_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // 10 superpixels of 10 pixels each on a 10×10 image
        let labels: Vec<u32> = (0..100).map(|px| (px / 10 + 1) as u32).collect();
        let seg = SuperpixelSegmentation {
            height: 10,
            width: 10,
            n_segments: 10,
            labels,
        };
        let features = Mat::from_vec(100, 2, (0..200).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let densities: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let reps = select_representatives(&seg, &features, &densities, 3).unwrap();
        assert_eq!(reps.len(), 30);
    }

    #[test]
    fn graph_radius_gate() {
        let reps = RepresentativeSet {
            pixel_indices: vec![0, 1],
            features: Mat::from_vec(2, 1, vec![0.0, 0.0]).unwrap(),
            coords: vec![(0.0, 0.0), (0.0, 10.0)],
            densities: vec![1.0, 1.0],
            superpixel_of: vec![1, 2],
            shortfall: vec![],
        };
        let (w, isolated) = build_graph(&reps, 1.0, 3.0, 2).unwrap();
        // only the self-loops survive
        assert_eq!(w.entries, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        assert_eq!(isolated, vec![0, 1]);
    }

    #[test]
    fn graph_identical_features_weight_one() {
        let reps = RepresentativeSet {
            pixel_indices: vec![0, 1],
            features: Mat::from_vec(2, 2, vec![0.3, 0.4, 0.3, 0.4]).unwrap(),
            coords: vec![(0.0, 0.0), (1.0, 1.0)],
            densities: vec![1.0, 1.0],
            superpixel_of: vec![1, 2],
            shortfall: vec![],
        };
        let (w, isolated) = build_graph(&reps, 0.5, 5.0, 1).unwrap();
        assert!(isolated.is_empty());
        assert!(w.entries.contains(&(0, 1, 1.0)));
    }

    #[test]
    fn graph_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 40;
        let mut coords = Vec::new();
        for i in 0..n {
            coords.push(((i / 8) as f64 * 2.0, (i % 8) as f64 * 2.0));
        }
        let features = Mat::from_vec(n, 3, (0..n * 3).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let reps = RepresentativeSet {
            pixel_indices: (0..n).collect(),
            features: features.clone(),
            coords: coords.clone(),
            densities: vec![1.0; n],
            superpixel_of: (0..n as u32).map(|i| i + 1).collect(),
            shortfall: vec![],
        };
        let sigma0 = 0.8;
        let radius = 4.5;
        let k_n = 4;
        let (w, _) = build_graph(&reps, sigma0, radius, k_n).unwrap();

        // oracle: all-pairs candidate scan, same tie rule
        let mut expect = std::collections::BTreeMap::new();
        for i in 0..n {
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .filter(|&j| {
                    let dr = coords[i].0 - coords[j].0;
                    let dc = coords[i].1 - coords[j].1;
                    dr * dr + dc * dc <= radius * radius
                })
                .map(|j| (squared_distance(features.row(i), features.row(j)), j))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(fd, j) in cands.iter().take(k_n) {
                let key = (i.min(j) as u32, i.max(j) as u32);
                let v: f64 = (-fd / (sigma0 * sigma0)).exp();
                let e = expect.entry(key).or_insert(f64::NEG_INFINITY);
                if v > *e {
                    *e = v;
                }
            }
        }
        for i in 0..n as u32 {
            expect.insert((i, i), 1.0);
        }
        let got: std::collections::BTreeMap<(u32, u32), f64> = w
            .entries
            .iter()
            .map(|&(i, j, v)| ((i, j), v))
            .collect();
        assert_eq!(got.len(), expect.len());
        for (k, v) in &expect {
            let g = got.get(k).unwrap_or_else(|| panic!("missing edge {k:?}"));
            assert!((g - v).abs() < 1e-15);
        }
    }

    #[test]
    fn model_closed_form_two_nodes() {
        let model = simple_model(
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)],
            2,
            1.0,
        );
        // P rows are [0.5, 0.5]; λ = {1, 0}; π = (0.5, 0.5)
        assert!((model.stationary[0] - 0.5).abs() < 1e-15);
        assert!((model.stationary[1] - 0.5).abs() < 1e-15);
        assert!((model.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(model.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn stationarity_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 15;
        let mut entries = Vec::new();
        for i in 0..n as u32 {
            entries.push((i, i, 1.0));
            for j in (i + 1)..n as u32 {
                if rng.gen::<f64>() < 0.3 {
                    entries.push((i, j, rng.gen::<f64>()));
                }
            }
        }
        let w = SparseSym::from_entries(n, entries).unwrap();
        let model = diffusion_model(&w, n, 1.0).unwrap();
        // π P = π with P = D^{-1} W on the retained component
        let sub = &model.adjacency;
        let nn = model.n_nodes();
        for j in 0..nn {
            let mut pi_p = 0.0;
            for &(a, b, v) in &sub.entries {
                let (a, b) = (a as usize, b as usize);
                if a == j {
                    pi_p += model.stationary[b] * v / model.degrees[b];
                }
                if b == j && a != b {
                    pi_p += model.stationary[a] * v / model.degrees[a];
                }
            }
            assert!(
                (pi_p - model.stationary[j]).abs() <= 1e-12,
                "stationarity violated at node {j}"
            );
        }
    }

    #[test]
    fn distance_zero_on_diagonal() {
        let model = simple_model(vec![(0, 1, 1.0), (1, 2, 0.5), (0, 0, 1.0)], 3, 2.0);
        for i in 0..model.n_nodes() {
            assert_eq!(model.distance(i, i).unwrap(), 0.0);
        }
        assert!(model.distance(0, 99).is_err());
    }

    /// direct-form oracle: sqrt(Σ_k ((P^t)_ik − (P^t)_jk)² / π_k)
    fn direct_distance(model: &DiffusionModel, t: usize, i: usize, j: usize) -> f64 {
        let n = model.n_nodes();
        let w = model.adjacency.to_dense();
        let mut p = Mat::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                p.set(r, c, w.at(r, c) / model.degrees[r]);
            }
        }
        let mut pt = Mat::identity(n);
        for _ in 0..t {
            pt = pt.matmul(&p);
        }
        let mut sum = 0.0;
        for k in 0..n {
            let d = pt.at(i, k) - pt.at(j, k);
            sum += d * d / model.stationary[k];
        }
        sum.sqrt()
    }

    #[test]
    fn two_node_crossing_graph_distance_two() {
        // no self-loops, full spectrum {1, -1}
        let model = simple_model(vec![(0, 1, 1.0)], 2, 1.0);
        assert!((model.distance(0, 1).unwrap() - 2.0).abs() < 1e-12);
        for t in [1usize, 2, 5, 30] {
            let mut m = model.clone();
            m.time = t as f64;
            let eig_form = m.distance(0, 1).unwrap();
            let direct = direct_distance(&m, t, 0, 1);
            assert!(
                (eig_form - direct).abs() < 1e-10,
                "t={t}: {eig_form} vs {direct}"
            );
            assert!((eig_form - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn path_graph_eigenform_matches_direct() {
        let n = 10;
        let mut entries: Vec<(u32, u32, f64)> = (0..n as u32 - 1).map(|i| (i, i + 1, 1.0)).collect();
        entries.push((0, 0, 1.0)); // a self-loop for aperiodicity
        let model = simple_model(entries, n, 3.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let eig_form = model.distance(i, j).unwrap();
                let direct = direct_distance(&model, 3, i, j);
                assert!(
                    (eig_form - direct).abs() <= 1e-8,
                    "({i},{j}): {eig_form} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn mode_scores_two_points() {
        let model = simple_model(vec![(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.5)], 2, 1.0);
        let densities = vec![2.0, 1.0];
        let (d_t, delta) = mode_scores(&model, &densities).unwrap();
        let d01 = model.distance(0, 1).unwrap();
        assert!((d_t[0] - d01).abs() < 1e-12); // argmax takes the max rule
        assert!((d_t[1] - d01).abs() < 1e-12); // the other measures to the top
        assert!((delta[0] - 2.0 * d01).abs() < 1e-12);
    }

    #[test]
    fn mode_scores_match_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let n = 30;
        let mut entries = Vec::new();
        for i in 0..n as u32 {
            entries.push((i, i, 1.0));
            for j in (i + 1)..n as u32 {
                if rng.gen::<f64>() < 0.25 {
                    entries.push((i, j, rng.gen::<f64>() * 0.9 + 0.05));
                }
            }
        }
        let model = simple_model(entries, n, 2.0);
        let densities: Vec<f64> = (0..model.n_nodes()).map(|_| rng.gen::<f64>()).collect();
        let (d_t, delta) = mode_scores(&model, &densities).unwrap();

        let nn = model.n_nodes();
        let mut argmax = 0;
        for i in 1..nn {
            if densities[i] > densities[argmax] {
                argmax = i;
            }
        }
        for i in 0..nn {
            let expect = if i == argmax {
                (0..nn)
                    .map(|j| model.distance(i, j).unwrap())
                    .fold(0.0f64, f64::max)
            } else {
                (0..nn)
                    .filter(|&j| j != i && densities[j] >= densities[i])
                    .map(|j| model.distance(i, j).unwrap())
                    .fold(f64::INFINITY, f64::min)
            };
            assert!(
                (d_t[i] - expect).abs() <= 1e-10,
                "d_t mismatch at {i}: {} vs {expect}",
                d_t[i]
            );
            assert!((delta[i] - densities[i] * d_t[i]).abs() <= 1e-12);
        }
    }

    fn blob_reps(n_per: usize, seed: u64) -> RepresentativeSet {
        // two well-separated feature blobs laid out on a line
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * n_per;
        let mut feat = Vec::with_capacity(n * 2);
        let mut coords = Vec::with_capacity(n);
        for i in 0..n {
            let blob = i / n_per;
            let cx = if blob == 0 { 0.0 } else { 8.0 };
            feat.push(cx + rng.gen::<f64>() * 0.5);
            feat.push(cx + rng.gen::<f64>() * 0.5);
            coords.push((0.0, i as f64));
        }
        RepresentativeSet {
            pixel_indices: (0..n).collect(),
            features: Mat::from_vec(n, 2, feat).unwrap(),
            coords,
            densities: vec![0.0; n],
            superpixel_of: (0..n as u32).map(|i| i + 1).collect(),
            shortfall: vec![],
        }
    }

    #[test]
    fn assign_labels_every_rep_its_own_mode() {
        let mut reps = blob_reps(3, 2);
        let (w, _) = build_graph(&reps, 1.0, 100.0, 3).unwrap();
        let model = diffusion_model(&w, 6, 1.0).unwrap();
        let node_dens: Vec<f64> = (0..model.n_nodes()).map(|i| 1.0 + i as f64 * 0.1).collect();
        for (node, &rep) in model.node_reps.iter().enumerate() {
            reps.densities[rep] = node_dens[node];
        }
        let (_d, delta) = mode_scores(&model, &node_dens).unwrap();
        let lab = assign_labels(&reps, &model, &delta, model.n_nodes(), 2).unwrap();
        let mut sorted = lab.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=6).collect::<Vec<u32>>());
        assert!(lab.stages.iter().all(|&s| s == Stage::Mode));
    }

    #[test]
    fn assign_labels_two_blobs() {
        let mut reps = blob_reps(10, 4);
        // densities: make node 0 and node 10 the density peaks
        for i in 0..20 {
            reps.densities[i] = if i % 10 == 0 { 2.0 } else { 1.0 - 0.01 * i as f64 };
        }
        // k_n = 12 forces a few (vanishingly weak) cross-blob edges, so the
        // graph is connected and both modes live in one component
        let (w, _) = build_graph(&reps, 1.0, 100.0, 12).unwrap();
        let model = diffusion_model(&w, 20, 8.0).unwrap();
        let node_dens: Vec<f64> = model.node_reps.iter().map(|&r| reps.densities[r]).collect();
        let (_d, delta) = mode_scores(&model, &node_dens).unwrap();
        let lab = assign_labels(&reps, &model, &delta, 2, 3).unwrap();
        // generator truth: first 10 reps are blob 0, rest blob 1
        let first = lab.labels[0];
        let second = lab.labels[10];
        assert_ne!(first, second);
        for i in 0..20 {
            let expect = if i < 10 { first } else { second };
            assert_eq!(lab.labels[i], expect, "rep {i} misassigned");
        }
    }

    #[test]
    fn assign_labels_promotes_unreached_component() {
        // two spatial groups beyond the radius gate form two graph
        // components; modes land in the largest, and the foreign component
        // must still end up fully labeled via the promotion fallback
        let mut feat = Vec::new();
        let mut coords = Vec::new();
        for i in 0..6 {
            feat.extend_from_slice(&[0.1 * i as f64, 0.0]);
            coords.push((0.0, i as f64));
        }
        for i in 0..3 {
            feat.extend_from_slice(&[5.0 + 0.1 * i as f64, 0.0]);
            coords.push((500.0, i as f64)); // far outside any radius
        }
        let reps = RepresentativeSet {
            pixel_indices: (0..9).collect(),
            features: Mat::from_vec(9, 2, feat).unwrap(),
            coords,
            densities: vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            superpixel_of: (1..=9).collect(),
            shortfall: vec![],
        };
        let (w, _) = build_graph(&reps, 1.0, 10.0, 3).unwrap();
        let model = diffusion_model(&w, 9, 2.0).unwrap();
        assert_eq!(model.n_off_component, 3);
        let node_dens: Vec<f64> = model.node_reps.iter().map(|&r| reps.densities[r]).collect();
        let (_d, delta) = mode_scores(&model, &node_dens).unwrap();
        let lab = assign_labels(&reps, &model, &delta, 2, 2).unwrap();
        assert!(lab.labels.iter().all(|&l| l == 1 || l == 2));
        assert!(
            lab.warnings.iter().any(|w| w.contains("promoted")),
            "promotion of the unreached component must be recorded"
        );
        // the foreign trio shares one label (propagated within its component)
        assert_eq!(lab.labels[6], lab.labels[7]);
        assert_eq!(lab.labels[7], lab.labels[8]);
    }

    #[test]
    fn assign_labels_single_cluster() {
        let reps = blob_reps(4, 6);
        let (w, _) = build_graph(&reps, 1.0, 100.0, 3).unwrap();
        let model = diffusion_model(&w, 8, 1.0).unwrap();
        let node_dens = vec![1.0; model.n_nodes()];
        let (_d, delta) = mode_scores(&model, &node_dens).unwrap();
        let lab = assign_labels(&reps, &model, &delta, 1, 2).unwrap();
        assert!(lab.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn majority_vote_rules() {
        let seg = SuperpixelSegmentation {
            height: 1,
            width: 6,
            n_segments: 2,
            labels: vec![1, 1, 1, 2, 2, 2],
        };
        let reps = RepresentativeSet {
            pixel_indices: vec![0, 1, 2, 3, 4],
            features: Mat::zeros(5, 1),
            coords: vec![(0.0, 0.0); 5],
            densities: vec![1.0; 5],
            superpixel_of: vec![1, 1, 1, 2, 2],
            shortfall: vec![],
        };
        let labeling = RepLabeling {
            labels: vec![1, 1, 2, 1, 2], // sp1 votes {1,1,2} -> 1; sp2 ties {1,2} -> 1
            stages: vec![Stage::Mode; 5],
            modes: vec![0],
            warnings: vec![],
        };
        let map = majority_vote(&seg, &reps, &labeling, 2).unwrap();
        assert_eq!(map.labels, vec![1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn cluster_single_mode_uniform_map() {
        let scene = crate::synth::generate(&crate::synth::SynthConfig {
            height: 16,
            width: 16,
            bands: 6,
            classes: 3,
            noise: 0.02,
            seed: 5,
        })
        .unwrap();
        let cube = crate::io::normalize_bands(&scene.cube);
        let flat = crate::io::flatten(&cube);
        let p3 = crate::numerics::pca(&flat, 3).unwrap();
        let pc3 = crate::io::unflatten(&p3.scores, 16, 16).unwrap();
        let params = ClusterParams {
            n_superpixels: 12,
            reps_per_superpixel: 2,
            k_n: 5,
            radius: 8.0,
            k_clusters: 1,
            t: 10.0,
            ..ClusterParams::default()
        };
        let (map, _stats) = cluster(&cube, &pc3, &params).unwrap();
        assert!(map.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn cluster_is_deterministic() {
        let scene = crate::synth::generate(&crate::synth::SynthConfig {
            height: 20,
            width: 20,
            bands: 8,
            classes: 4,
            noise: 0.03,
            seed: 9,
        })
        .unwrap();
        let cube = crate::io::normalize_bands(&scene.cube);
        let flat = crate::io::flatten(&cube);
        let p3 = crate::numerics::pca(&flat, 3).unwrap();
        let pc3 = crate::io::unflatten(&p3.scores, 20, 20).unwrap();
        let params = ClusterParams {
            n_superpixels: 20,
            reps_per_superpixel: 3,
            k_n: 6,
            radius: 10.0,
            k_clusters: 4,
            t: 20.0,
            ..ClusterParams::default()
        };
        let (a, _) = cluster(&cube, &pc3, &params).unwrap();
        let (b, _) = cluster(&cube, &pc3, &params).unwrap();
        assert_eq!(a, b);
    }
}
