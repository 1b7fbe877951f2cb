//! Model state: every random variable of the generative model, with
//! validated invariants. Sampling logic lives in `gibbs` and `countprop`.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdremError};
use crate::randkit::{self, RngStream};

/// Directed binary relation stored as adjacency lists.
///
/// `edges` holds the training positives only; `test_mask` marks held-out
/// dyads (positives and sampled negatives) that must never enter the
/// propagation support or the latent-count aggregates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub in_neighbors: Vec<Vec<usize>>,
    pub directed: bool,
    pub test_mask: HashSet<(usize, usize)>,
    pub self_loops_dropped: usize,
}

impl SparseGraph {
    pub fn new(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        directed: bool,
        test_mask: HashSet<(usize, usize)>,
    ) -> Result<Self> {
        let mut clean: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        let mut dropped = 0usize;
        for (s, d) in edges {
            if s >= n_nodes || d >= n_nodes {
                return Err(SdremError::InvalidParameter(format!(
                    "edge ({s},{d}) out of range for {n_nodes} nodes"
                )));
            }
            if s == d {
                dropped += 1;
                continue;
            }
            clean.push((s, d));
            if !directed {
                clean.push((d, s));
            }
        }
        clean.sort_unstable();
        clean.dedup();
        for e in &clean {
            if test_mask.contains(e) {
                return Err(SdremError::InvalidParameter(format!(
                    "training edge {e:?} overlaps the test mask"
                )));
            }
        }
        let mut in_neighbors = vec![Vec::new(); n_nodes];
        for &(s, d) in &clean {
            in_neighbors[d].push(s);
        }
        Ok(SparseGraph {
            n_nodes,
            edges: clean,
            in_neighbors,
            directed,
            test_mask,
            self_loops_dropped: dropped,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes];
        for &(s, _) in &self.edges {
            deg[s] += 1;
        }
        deg
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        self.in_neighbors.iter().map(|v| v.len()).collect()
    }
}

/// Sparse non-negative node features, one triplet per (node, feature).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_nodes: usize,
    pub n_features: usize,
    /// Per-node sparse rows of (feature index, value), sorted by feature.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl FeatureMatrix {
    pub fn empty(n_nodes: usize) -> Self {
        FeatureMatrix {
            n_nodes,
            n_features: 0,
            rows: vec![Vec::new(); n_nodes],
        }
    }

    pub fn identity(n_nodes: usize) -> Self {
        FeatureMatrix {
            n_nodes,
            n_features: n_nodes,
            rows: (0..n_nodes).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn from_triplets(
        n_nodes: usize,
        n_features: usize,
        triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for (i, d, v) in triplets {
            if i >= n_nodes {
                return Err(SdremError::InvalidParameter(format!(
                    "feature node index {i} >= {n_nodes}"
                )));
            }
            if d >= n_features {
                return Err(SdremError::InvalidParameter(format!(
                    "feature index {d} >= {n_features}"
                )));
            }
            if v < 0.0 || !v.is_finite() {
                return Err(SdremError::InvalidParameter(format!(
                    "feature value {v} must be finite and non-negative"
                )));
            }
            rows[i].push((d, v));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(d, _)| d);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(SdremError::InvalidParameter(format!(
                        "duplicate feature entry at feature {}",
                        w[0].0
                    )));
                }
            }
        }
        Ok(FeatureMatrix {
            n_nodes,
            n_features,
            rows,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.n_features == 0
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }
}

/// Architecture variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Standard,
    /// Identity features, no external feature file.
    Plain,
    /// Diagonal-only propagation: each node propagates only to itself.
    Inde,
    /// Dense off-diagonal propagation support.
    Full,
    /// L = 1, no features; matches the MMSB prior on memberships.
    Mmsb,
}

impl std::str::FromStr for Mode {
    type Err = SdremError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "plain" => Ok(Mode::Plain),
            "inde" => Ok(Mode::Inde),
            "full" => Ok(Mode::Full),
            "mmsb" => Ok(Mode::Mmsb),
            other => Err(SdremError::InvalidParameter(format!(
                "unknown mode '{other}' (expected standard|plain|inde|full|mmsb)"
            ))),
        }
    }
}

/// Fixed hyper-priors and architecture knobs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HyperParams {
    pub k: usize,
    pub l: usize,
    pub mode: Mode,
    pub e0: f64,
    pub f0: f64,
    pub g0: f64,
    pub h0: f64,
    /// Shape for M; `None` means "number of nodes", resolved at init.
    pub k_m: Option<f64>,
    pub theta_m: f64,
    pub k_alpha: f64,
    pub theta_alpha: f64,
    pub k2: f64,
    pub theta2: f64,
    pub k3: f64,
    pub theta3: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub thin: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            k: 20,
            l: 4,
            mode: Mode::Standard,
            e0: 1.0,
            f0: 1.0,
            g0: 1.0,
            h0: 1.0,
            k_m: None,
            theta_m: 1.0,
            k_alpha: 1.0,
            theta_alpha: 1.0,
            k2: 1.0,
            theta2: 1.0,
            k3: 1.0,
            theta3: 1.0,
            iterations: 2000,
            burn_in: 1000,
            seed: 0,
            thin: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(SdremError::InvalidParameter("K must be >= 1".into()));
        }
        if self.l < 1 {
            return Err(SdremError::InvalidParameter("L must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(SdremError::InvalidParameter(format!(
                "burn_in {} must be < iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SdremError::InvalidParameter("thin must be >= 1".into()));
        }
        for (name, v) in [
            ("e0", self.e0),
            ("f0", self.f0),
            ("g0", self.g0),
            ("h0", self.h0),
            ("theta_m", self.theta_m),
            ("k_alpha", self.k_alpha),
            ("theta_alpha", self.theta_alpha),
            ("k2", self.k2),
            ("theta2", self.theta2),
            ("k3", self.k3),
            ("theta3", self.theta3),
        ] {
            if !(v > 0.0) {
                return Err(SdremError::InvalidParameter(format!(
                    "hyper-prior {name} must be > 0, got {v}"
                )));
            }
        }
        if let Some(km) = self.k_m {
            if !(km > 0.0) {
                return Err(SdremError::InvalidParameter("k_m must be > 0".into()));
            }
        }
        if self.mode == Mode::Mmsb && self.l != 1 {
            return Err(SdremError::InvalidParameter(
                "mmsb mode requires L = 1".into(),
            ));
        }
        Ok(())
    }

    pub fn k_m_for(&self, n_nodes: usize) -> f64 {
        self.k_m.unwrap_or(n_nodes as f64)
    }
}

/// Sparse propagation matrix for one layer transition, stored per receiving
/// node. The diagonal entry is always at position 0 of each row.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PropagationMatrix {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl PropagationMatrix {
    /// Build the support for one layer according to the mode: diagonal plus
    /// training in-edges (standard), diagonal only (inde), or dense (full).
    pub fn support(graph: &SparseGraph, mode: Mode) -> Vec<Vec<usize>> {
        (0..graph.n_nodes)
            .map(|i| {
                let mut srcs = vec![i];
                match mode {
                    Mode::Inde => {}
                    Mode::Full => srcs.extend((0..graph.n_nodes).filter(|&j| j != i)),
                    _ => srcs.extend(graph.in_neighbors[i].iter().copied()),
                }
                srcs
            })
            .collect()
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.rows[i][0].1
    }

    pub fn n_offdiag(&self) -> usize {
        self.rows.iter().map(|r| r.len() - 1).sum()
    }

    pub fn total(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(_, v)| v).sum::<f64>())
            .sum()
    }
}

/// All latent variables of the joint distribution.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelState {
    /// D x K feature-to-community transition coefficients.
    pub t: Array2<f64>,
    /// Per-layer N x K membership distributions, layers 1..=L.
    pub pi: Vec<Array2<f64>>,
    /// Propagation matrices B^(l) for l = 1..L-1 (layer l -> l+1).
    pub b: Vec<PropagationMatrix>,
    /// K x K community compatibility matrix.
    pub lambda: Array2<f64>,
    /// N x K latent counts at the output layer.
    pub x: Array2<u64>,
    /// Sum over (j, k2) of Z_{ij,k k2}, per (i, k).
    pub z_row: Array2<u64>,
    /// Sum over (j, k1) of Z_{ji,k1 k}, per (i, k).
    pub z_col: Array2<u64>,
    /// Sum over (i, j) of Z_{ij,k1 k2}, per (k1, k2).
    pub z_block: Array2<u64>,
    /// Total Z mass per training positive edge, aligned with graph.edges.
    pub z_edge_total: Vec<u64>,
    /// Poisson rate scale M for the latent counts.
    pub m_scale: f64,
    /// Supplementary Dirichlet concentration at the input layer.
    pub alpha: f64,
    /// Per-feature shape for T's prior.
    pub gamma_d1: Vec<f64>,
    /// Rate for T's prior.
    pub c1: f64,
    /// Off-diagonal propagation shapes, per layer transition.
    pub gamma1: Vec<f64>,
    /// Diagonal propagation shapes, per layer transition.
    pub gamma0: Vec<f64>,
    /// Propagation rates, per layer transition.
    pub c: Vec<f64>,
    pub k_lambda: f64,
    pub theta_lambda: f64,
}

impl ModelState {
    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_communities(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_layers(&self) -> usize {
        self.pi.len()
    }
}

/// Backward-propagated hidden counts and auxiliaries.
#[derive(Clone, Debug)]
pub struct AugmentedCounts {
    /// Hidden counts per layer, m[l-1] is the layer-l N x K matrix.
    /// m[L-1] equals X.
    pub m: Vec<Array2<u64>>,
    /// CRT table counts per layer, same indexing as m.
    pub y: Vec<Array2<u64>>,
    /// Per layer transition, aligned with PropagationMatrix rows:
    /// h_edge[l][i][s] = sum over k of the split mass routed to source s of
    /// receiver i through B^(l+1... )'s row.
    pub h_edge: Vec<Vec<Vec<u64>>>,
    /// D x K split mass routed to the features at layer 1.
    pub h_feat: Array2<u64>,
    /// Split mass routed to alpha at layer 1.
    pub h_alpha: u64,
    /// Beta auxiliaries per layer, q[l-1][i] in (0, 1].
    pub q: Vec<Vec<f64>>,
}

impl AugmentedCounts {
    pub fn layer_totals(&self) -> Vec<u64> {
        self.m.iter().map(|m| m.iter().sum()).collect()
    }
}

/// Retained post-burn-in averages and diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PosteriorTrace {
    pub n_retained: usize,
    /// Running-average link probability per monitored dyad, sorted by dyad.
    pub mean_link_prob: Vec<((usize, usize), f64)>,
    /// Running-average per-layer latent counts per node, ordered layer L..1.
    pub mean_latent_counts: Vec<f64>,
    pub rng_seed: u64,
}

impl PosteriorTrace {
    pub fn new(dyads: &[(usize, usize)], n_layers: usize, rng_seed: u64) -> Self {
        let mut sorted: Vec<_> = dyads.iter().map(|&d| (d, 0.0)).collect();
        sorted.sort_unstable_by_key(|&(d, _)| d);
        PosteriorTrace {
            n_retained: 0,
            mean_link_prob: sorted,
            mean_latent_counts: vec![0.0; n_layers],
            rng_seed,
        }
    }

    /// Fold one retained draw into the running averages. `probs` must be
    /// aligned with `mean_link_prob`.
    pub fn absorb(&mut self, probs: &[f64], latent_counts: &[f64]) {
        self.n_retained += 1;
        let w = 1.0 / self.n_retained as f64;
        for ((_, avg), &p) in self.mean_link_prob.iter_mut().zip(probs) {
            *avg += (p - *avg) * w;
        }
        for (avg, &c) in self.mean_latent_counts.iter_mut().zip(latent_counts) {
            *avg += (c - *avg) * w;
        }
    }

    pub fn prob_of(&self, dyad: (usize, usize)) -> Option<f64> {
        self.mean_link_prob
            .binary_search_by_key(&dyad, |&(d, _)| d)
            .ok()
            .map(|idx| self.mean_link_prob[idx].1)
    }
}

const PI_ROW_SUM_TOL: f64 = 1e-9;

/// Check every ModelState invariant; violations are returned as data.
pub fn validate_state(
    state: &ModelState,
    graph: &SparseGraph,
    features: &FeatureMatrix,
) -> Vec<String> {
    let mut v = Vec::new();
    let n = graph.n_nodes;
    let k = state.n_communities();
    let l = state.n_layers();

    if state.x.nrows() != n {
        v.push(format!("X has {} rows, graph has {} nodes", state.x.nrows(), n));
        return v;
    }
    if !features.is_empty() && state.t.nrows() != features.n_features {
        v.push(format!(
            "T has {} rows, features have {} columns",
            state.t.nrows(),
            features.n_features
        ));
    }

    for (li, pi) in state.pi.iter().enumerate() {
        if pi.nrows() != n || pi.ncols() != k {
            v.push(format!("pi^({}) has shape {:?}", li + 1, pi.dim()));
            continue;
        }
        for (i, row) in pi.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > PI_ROW_SUM_TOL {
                v.push(format!(
                    "pi row (layer {}, node {}) sums to {sum}",
                    li + 1,
                    i
                ));
            }
            if row.iter().any(|&p| !(p > 0.0)) {
                v.push(format!(
                    "pi row (layer {}, node {}) has a non-positive entry",
                    li + 1,
                    i
                ));
            }
        }
    }

    if state.b.len() != l - 1 {
        v.push(format!("expected {} B matrices, found {}", l - 1, state.b.len()));
    }
    let train_edges = graph.edge_set();
    for (li, b) in state.b.iter().enumerate() {
        if b.rows.len() != n {
            v.push(format!("B^({}) has {} rows", li + 1, b.rows.len()));
            continue;
        }
        // dense (full-mode) support is allowed only if every off-diagonal
        // entry is present; otherwise support must stay within train edges
        let offdiag = b.n_offdiag();
        let dense = offdiag == n * (n - 1);
        for (i, row) in b.rows.iter().enumerate() {
            if row.is_empty() || row[0].0 != i {
                v.push(format!(
                    "B^({}) row {} lacks a leading diagonal entry",
                    li + 1,
                    i
                ));
                continue;
            }
            for &(src, val) in &row[1..] {
                if !dense && !train_edges.contains(&(src, i)) {
                    v.push(format!(
                        "B^({}) mass on non-edge ({src},{i}) violates the support rule",
                        li + 1
                    ));
                }
                if graph.test_mask.contains(&(src, i)) {
                    v.push(format!(
                        "B^({}) mass on held-out dyad ({src},{i})",
                        li + 1
                    ));
                }
                if val < 0.0 {
                    v.push(format!("B^({}) entry ({src},{i}) is negative", li + 1));
                }
            }
        }
    }

    if state.z_edge_total.len() != graph.n_edges() {
        v.push(format!(
            "z_edge_total has {} entries for {} training edges",
            state.z_edge_total.len(),
            graph.n_edges()
        ));
    } else {
        for (e, &tot) in graph.edges.iter().zip(&state.z_edge_total) {
            if tot == 0 {
                v.push(format!("training positive dyad {e:?} carries no Z mass"));
            }
        }
    }
    let sum_row: u64 = state.z_row.iter().sum();
    let sum_col: u64 = state.z_col.iter().sum();
    let sum_block: u64 = state.z_block.iter().sum();
    let sum_edges: u64 = state.z_edge_total.iter().sum();
    if sum_row != sum_edges || sum_col != sum_edges || sum_block != sum_edges {
        v.push(format!(
            "Z aggregates disagree: row {sum_row}, col {sum_col}, block {sum_block}, edges {sum_edges}"
        ));
    }

    for (name, val) in [
        ("M", state.m_scale),
        ("alpha", state.alpha),
        ("c1", state.c1),
        ("k_lambda", state.k_lambda),
        ("theta_lambda", state.theta_lambda),
    ] {
        if !(val > 0.0) || !val.is_finite() {
            v.push(format!("{name} = {val} is not positive finite"));
        }
    }
    for (name, vals) in [
        ("gamma1", &state.gamma1),
        ("gamma0", &state.gamma0),
        ("c", &state.c),
    ] {
        if vals.len() != l - 1 {
            v.push(format!("{name} has {} entries for {} transitions", vals.len(), l - 1));
        }
        if vals.iter().any(|&x| !(x > 0.0)) {
            v.push(format!("{name} has a non-positive entry"));
        }
    }
    if state.lambda.iter().any(|&x| !(x > 0.0)) {
        v.push("Lambda has a non-positive entry".into());
    }
    v
}

/// Draw every variable from its prior: the forward pass of the generative
/// process, with the propagation support taken from the training edges.
pub fn init_state(
    graph: &SparseGraph,
    features: &FeatureMatrix,
    hp: &HyperParams,
    rng: &RngStream,
) -> Result<ModelState> {
    hp.validate()?;
    if !features.is_empty() && features.n_nodes != graph.n_nodes {
        return Err(SdremError::DimensionMismatch(format!(
            "features cover {} nodes, graph has {}",
            features.n_nodes, graph.n_nodes
        )));
    }
    if hp.mode == Mode::Mmsb && !features.is_empty() {
        return Err(SdremError::InvalidParameter(
            "mmsb mode requires empty features".into(),
        ));
    }
    let n = graph.n_nodes;
    let k = hp.k;
    let l = hp.l;
    let d = features.n_features;
    let mut rh = rng.substream(&[0, 0]);

    let alpha = randkit::gamma_sample(hp.k_alpha, 1.0 / hp.theta_alpha, &mut rh)?;
    let m_scale = randkit::gamma_sample(hp.k_m_for(n), 1.0 / hp.theta_m, &mut rh)?;
    let k_lambda = randkit::gamma_sample(hp.k2, 1.0 / hp.theta2, &mut rh)?;
    let theta_lambda = randkit::gamma_sample(hp.k3, 1.0 / hp.theta3, &mut rh)?;
    let c1 = randkit::gamma_sample(hp.g0, 1.0 / hp.h0, &mut rh)?;
    let mut gamma_d1 = Vec::with_capacity(d);
    for _ in 0..d {
        gamma_d1.push(randkit::gamma_sample(hp.e0, 1.0 / hp.f0, &mut rh)?);
    }
    let mut gamma1 = Vec::with_capacity(l - 1);
    let mut gamma0 = Vec::with_capacity(l - 1);
    let mut c = Vec::with_capacity(l - 1);
    for _ in 1..l {
        gamma1.push(randkit::gamma_sample(hp.e0, 1.0 / hp.f0, &mut rh)?);
        gamma0.push(randkit::gamma_sample(hp.e0, 1.0 / hp.f0, &mut rh)?);
        c.push(randkit::gamma_sample(hp.g0, 1.0 / hp.h0, &mut rh)?);
    }

    let mut t = Array2::zeros((d, k));
    for di in 0..d {
        for ki in 0..k {
            t[[di, ki]] = randkit::gamma_sample(gamma_d1[di], 1.0 / c1, &mut rh)?;
        }
    }

    let mut pi: Vec<Array2<f64>> = Vec::with_capacity(l);
    let mut pi1 = Array2::zeros((n, k));
    for i in 0..n {
        let mut conc = vec![alpha; k];
        for &(di, fv) in &features.rows[i] {
            for ki in 0..k {
                conc[ki] += fv * t[[di, ki]];
            }
        }
        let row = randkit::dirichlet_sample(&conc, &mut rh)?;
        for ki in 0..k {
            pi1[[i, ki]] = row[ki];
        }
    }
    pi.push(pi1);

    let supports = PropagationMatrix::support(graph, hp.mode);
    let mut b: Vec<PropagationMatrix> = Vec::with_capacity(l - 1);
    for li in 0..l - 1 {
        let mut rows = Vec::with_capacity(n);
        for srcs in &supports {
            let mut row = Vec::with_capacity(srcs.len());
            for (si, &src) in srcs.iter().enumerate() {
                let shape = if si == 0 { gamma0[li] } else { gamma1[li] };
                row.push((src, randkit::gamma_sample(shape, 1.0 / c[li], &mut rh)?));
            }
            rows.push(row);
        }
        let bm = PropagationMatrix { rows };
        let mut next = Array2::zeros((n, k));
        let prev = &pi[li];
        for i in 0..n {
            let mut conc = vec![0.0f64; k];
            for &(src, val) in &bm.rows[i] {
                for ki in 0..k {
                    conc[ki] += val * prev[[src, ki]];
                }
            }
            let row = randkit::dirichlet_sample(&conc, &mut rh)?;
            for ki in 0..k {
                next[[i, ki]] = row[ki];
            }
        }
        pi.push(next);
        b.push(bm);
    }

    let mut lambda = Array2::zeros((k, k));
    for k1 in 0..k {
        for k2 in 0..k {
            lambda[[k1, k2]] = randkit::gamma_sample(k_lambda, 1.0 / theta_lambda, &mut rh)?;
        }
    }

    let mut x = Array2::zeros((n, k));
    let pi_out = &pi[l - 1];
    for i in 0..n {
        for ki in 0..k {
            x[[i, ki]] = randkit::poisson_sample(m_scale * pi_out[[i, ki]], &mut rh)?;
        }
    }

    let mut state = ModelState {
        t,
        pi,
        b,
        lambda,
        x,
        z_row: Array2::zeros((n, k)),
        z_col: Array2::zeros((n, k)),
        z_block: Array2::zeros((k, k)),
        z_edge_total: vec![0; graph.n_edges()],
        m_scale,
        alpha,
        gamma_d1,
        c1,
        gamma1,
        gamma0,
        c,
        k_lambda,
        theta_lambda,
    };
    // one Z draw given X, Lambda over the training positives
    crate::gibbs::update_z(&mut state, &graph.edges, rng, u64::MAX)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph() -> SparseGraph {
        SparseGraph::new(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)], true, HashSet::new()).unwrap()
    }

    #[test]
    fn graph_drops_self_loops_and_dedups() {
        let g = SparseGraph::new(3, vec![(0, 1), (0, 1), (1, 1), (1, 2)], true, HashSet::new())
            .unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.self_loops_dropped, 1);
        assert_eq!(g.in_neighbors[1], vec![0]);
    }

    #[test]
    fn undirected_graph_is_symmetric() {
        let g = SparseGraph::new(3, vec![(0, 1)], false, HashSet::new()).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn fresh_state_is_valid() {
        let g = tiny_graph();
        let f = FeatureMatrix::empty(4);
        let hp = HyperParams {
            k: 3,
            l: 2,
            ..HyperParams::default()
        };
        let state = init_state(&g, &f, &hp, &RngStream::new(1)).unwrap();
        let violations = validate_state(&state, &g, &f);
        assert!(violations.is_empty(), "{violations:?}");
    }

    #[test]
    fn init_is_deterministic() {
        let g = tiny_graph();
        let f = FeatureMatrix::empty(4);
        let hp = HyperParams {
            k: 3,
            l: 3,
            ..HyperParams::default()
        };
        let a = init_state(&g, &f, &hp, &RngStream::new(9)).unwrap();
        let b = init_state(&g, &f, &hp, &RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_pi_row_is_reported() {
        let g = tiny_graph();
        let f = FeatureMatrix::empty(4);
        let hp = HyperParams {
            k: 2,
            l: 2,
            ..HyperParams::default()
        };
        let mut state = init_state(&g, &f, &hp, &RngStream::new(2)).unwrap();
        state.pi[0][[1, 0]] = 0.4;
        state.pi[0][[1, 1]] = 0.5;
        let violations = validate_state(&state, &g, &f);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("layer 1, node 1"), "{violations:?}");
    }

    #[test]
    fn b_mass_off_support_is_reported() {
        let g = tiny_graph();
        let f = FeatureMatrix::empty(4);
        let hp = HyperParams {
            k: 2,
            l: 2,
            ..HyperParams::default()
        };
        let mut state = init_state(&g, &f, &hp, &RngStream::new(3)).unwrap();
        // (0,2) is not an edge
        state.b[0].rows[2].push((0, 0.5));
        let violations = validate_state(&state, &g, &f);
        assert_eq!(violations.len(), 1);
        assert!(violations[0].contains("support rule"), "{violations:?}");
    }

    #[test]
    fn mmsb_init_draws_flat_dirichlet() {
        // with no features the layer-1 concentration is alpha everywhere,
        // so component means over many nodes are ~1/K
        let edges: Vec<(usize, usize)> = (0..200).map(|i| (i, (i + 1) % 200)).collect();
        let g = SparseGraph::new(200, edges, true, HashSet::new()).unwrap();
        let f = FeatureMatrix::empty(200);
        let hp = HyperParams {
            k: 4,
            l: 1,
            mode: Mode::Mmsb,
            ..HyperParams::default()
        };
        let state = init_state(&g, &f, &hp, &RngStream::new(4)).unwrap();
        let mean0: f64 = state.pi[0].column(0).sum() / 200.0;
        assert!(mean0 > 0.05 && mean0 < 0.6, "mean0 {mean0}");
    }

    #[test]
    fn inde_mode_has_diagonal_b() {
        let g = tiny_graph();
        let f = FeatureMatrix::empty(4);
        let hp = HyperParams {
            k: 2,
            l: 3,
            mode: Mode::Inde,
            ..HyperParams::default()
        };
        let state = init_state(&g, &f, &hp, &RngStream::new(5)).unwrap();
        for b in &state.b {
            assert_eq!(b.n_offdiag(), 0);
        }
    }

    #[test]
    fn k1_pi_is_unit() {
        let g = tiny_graph();
        let f = FeatureMatrix::empty(4);
        let hp = HyperParams {
            k: 1,
            l: 2,
            ..HyperParams::default()
        };
        let state = init_state(&g, &f, &hp, &RngStream::new(6)).unwrap();
        for pi in &state.pi {
            for &p in pi.iter() {
                assert_eq!(p, 1.0);
            }
        }
    }

    #[test]
    fn feature_dimension_mismatch_errors() {
        let g = tiny_graph();
        let f = FeatureMatrix::from_triplets(3, 2, vec![(0, 0, 1.0)]).unwrap();
        let hp = HyperParams {
            k: 2,
            l: 2,
            ..HyperParams::default()
        };
        assert!(init_state(&g, &f, &hp, &RngStream::new(7)).is_err());
    }
}
