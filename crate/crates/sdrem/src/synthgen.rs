//! Synthetic data generation with known ground truth.
//!
//! The generative process is circular at first sight: the propagation support is
//! the observed edge set, which the model itself produces. Generation
//! resolves this in two phases: a provisional forward pass with
//! self-propagation only produces the relation, then the truth state is
//! regenerated conditioned on the realized edges so it satisfies the same
//! support invariants the sampler maintains.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdremError};
use crate::model::{
    FeatureMatrix, HyperParams, Mode, ModelState, PropagationMatrix, SparseGraph,
};
use crate::randkit::{self, RngStream};

/// Ground-truth generator settings. `None` fields are drawn from the
/// hyper-priors; planted values override the prior draw.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    /// Planted compatibility diagonal; pairs with `lambda_offdiag`.
    pub lambda_diag: Option<f64>,
    pub lambda_offdiag: Option<f64>,
    pub m_scale: Option<f64>,
    pub alpha: Option<f64>,
    pub n_features: usize,
    /// Bernoulli density of the binary feature matrix.
    pub feature_density: f64,
    /// Abort if the realized relation exceeds this many edges.
    pub max_edges: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_nodes: 100,
            k: 4,
            l: 2,
            seed: 0,
            lambda_diag: None,
            lambda_offdiag: None,
            m_scale: None,
            alpha: None,
            n_features: 0,
            feature_density: 0.05,
            max_edges: None,
        }
    }
}

/// A generated dataset: realized edges, features, and the truth state that
/// produced the final latent counts.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub graph: SparseGraph,
    pub features: FeatureMatrix,
    pub truth: ModelState,
}

fn hyper_params(spec: &SynthSpec) -> HyperParams {
    HyperParams {
        k: spec.k,
        l: spec.l,
        seed: spec.seed,
        ..HyperParams::default()
    }
}

/// Plant or redraw the overridable scalars on a freshly drawn state.
fn apply_overrides(state: &mut ModelState, spec: &SynthSpec) {
    if let Some(d) = spec.lambda_diag {
        let off = spec.lambda_offdiag.unwrap_or(d / 100.0);
        for ((k1, k2), v) in state.lambda.indexed_iter_mut() {
            *v = if k1 == k2 { d } else { off };
        }
    }
    if let Some(m) = spec.m_scale {
        state.m_scale = m;
    }
    if let Some(a) = spec.alpha {
        state.alpha = a;
    }
}

/// Bernoulli relation from the Ber-Poisson link: R_ij = 1 with probability
/// 1 - exp(-X_i^T Lambda X_j), over all ordered dyads.
fn draw_relation(
    x: &Array2<u64>,
    lambda: &Array2<f64>,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let (n, k) = x.dim();
    // y = X Lambda, so the exponent for (i, j) is y_i . x_j
    let mut y = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        for k2 in 0..k {
            let mut s = 0.0;
            for k1 in 0..k {
                s += x[[i, k1]] as f64 * lambda[[k1, k2]];
            }
            y[[i, k2]] = s;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let exponent: f64 = (0..k).map(|k2| y[[i, k2]] * x[[j, k2]] as f64).sum();
            let p = -(-exponent).exp_m1();
            if p > 0.0 && rng.random_bool(p.min(1.0)) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Generate a dataset with ground truth.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let hp = hyper_params(spec);
    hp.validate()?;
    let stream = RngStream::new(spec.seed);
    let n = spec.n_nodes;

    let features = if spec.n_features > 0 {
        let mut r = stream.substream(&[100]);
        let mut triplets = Vec::new();
        for i in 0..n {
            for d in 0..spec.n_features {
                if r.random_bool(spec.feature_density) {
                    triplets.push((i, d, 1.0));
                }
            }
        }
        FeatureMatrix::from_triplets(n, spec.n_features, triplets)?
    } else {
        FeatureMatrix::empty(n)
    };

    // Phase 1: provisional state with diagonal-only propagation, just to
    // realize a relation.
    let empty = SparseGraph::new(n, vec![], true, HashSet::new())?;
    let hp_prov = HyperParams {
        mode: Mode::Inde,
        ..hp.clone()
    };
    let mut provisional =
        crate::model::init_state(&empty, &features, &hp_prov, &stream)?;
    apply_overrides(&mut provisional, spec);
    // X depends on the planted M, so redraw it
    let mut r = stream.substream(&[101]);
    let pi_out = provisional.pi.last().unwrap().clone();
    for i in 0..n {
        for ki in 0..spec.k {
            provisional.x[[i, ki]] =
                randkit::poisson_sample(provisional.m_scale * pi_out[[i, ki]], &mut r)?;
        }
    }
    let edges = draw_relation(&provisional.x, &provisional.lambda, &mut r);
    if let Some(cap) = spec.max_edges {
        if edges.len() > cap {
            return Err(SdremError::InvalidParameter(format!(
                "realized {} edges, cap is {cap}; lower m_scale or lambda",
                edges.len()
            )));
        }
    }
    if edges.is_empty() {
        eprintln!("generate: realized an empty relation (weak lambda or m_scale)");
    }
    let graph = SparseGraph::new(n, edges, true, HashSet::new())?;

    // Phase 2: regenerate the deep part of the truth conditioned on the
    // realized support. Input-layer quantities and the planted scalars are
    // kept from phase 1.
    let mut truth = provisional;
    let mut r = stream.substream(&[102]);
    let supports = PropagationMatrix::support(&graph, Mode::Standard);
    for li in 0..spec.l - 1 {
        let mut rows = Vec::with_capacity(n);
        for srcs in &supports {
            let mut row = Vec::with_capacity(srcs.len());
            for (si, &src) in srcs.iter().enumerate() {
                let shape = if si == 0 {
                    truth.gamma0[li]
                } else {
                    truth.gamma1[li]
                };
                row.push((src, randkit::gamma_sample(shape, 1.0 / truth.c[li], &mut r)?));
            }
            rows.push(row);
        }
        let bm = PropagationMatrix { rows };
        let k = spec.k;
        let prev = truth.pi[li].clone();
        let next = &mut truth.pi[li + 1];
        for i in 0..n {
            let mut conc = vec![0.0f64; k];
            for &(src, val) in &bm.rows[i] {
                for ki in 0..k {
                    conc[ki] += val * prev[[src, ki]];
                }
            }
            let row = randkit::dirichlet_sample(&conc, &mut r)?;
            for ki in 0..k {
                next[[i, ki]] = row[ki];
            }
        }
        truth.b[li] = bm;
    }
    let pi_out = truth.pi.last().unwrap().clone();
    for i in 0..n {
        for ki in 0..spec.k {
            truth.x[[i, ki]] =
                randkit::poisson_sample(truth.m_scale * pi_out[[i, ki]], &mut r)?;
        }
    }
    truth.z_edge_total = vec![0; graph.n_edges()];
    crate::gibbs::update_z(&mut truth, &graph.edges, &stream, u64::MAX - 1)?;

    Ok(SynthData {
        graph,
        features,
        truth,
    })
}

/// Dump the ground truth next to the dataset: planted compatibility,
/// per-layer memberships, latent counts, and the generator settings.
pub fn save_truth(data: &SynthData, spec: &SynthSpec, out_dir: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let io_err = |path: &std::path::Path| {
        let p = path.display().to_string();
        move |e: std::io::Error| SdremError::Io { path: p, source: e }
    };
    let write_matrix = |path: &std::path::Path, rows: Vec<Vec<String>>| -> Result<()> {
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
        for row in rows {
            writeln!(w, "{}", row.join(",")).map_err(io_err(path))?;
        }
        Ok(())
    };
    write_matrix(
        &out_dir.join("truth_lambda.csv"),
        data.truth
            .lambda
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| format!("{v:.16e}")).collect())
            .collect(),
    )?;
    for (li, pi) in data.truth.pi.iter().enumerate() {
        write_matrix(
            &out_dir.join(format!("truth_pi_layer_{}.csv", li + 1)),
            pi.rows()
                .into_iter()
                .map(|r| r.iter().map(|v| format!("{v:.16e}")).collect())
                .collect(),
        )?;
    }
    write_matrix(
        &out_dir.join("truth_x.csv"),
        data.truth
            .x
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect())
            .collect(),
    )?;
    let meta = serde_json::json!({
        "spec": spec,
        "m_scale": data.truth.m_scale,
        "alpha": data.truth.alpha,
        "n_edges": data.graph.n_edges(),
    });
    let path = out_dir.join("truth_meta.json");
    std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&meta).unwrap()))
        .map_err(io_err(&path))?;
    Ok(())
}

/// Uniform random directed graph with exactly `n_edges` distinct non-loop
/// edges; used for scaling studies.
pub fn random_graph(n_nodes: usize, n_edges: usize, seed: u64) -> Result<SparseGraph> {
    if n_edges > n_nodes * n_nodes.saturating_sub(1) {
        return Err(SdremError::InvalidParameter(format!(
            "{n_edges} edges do not fit in {n_nodes} nodes"
        )));
    }
    let mut r = RngStream::new(seed).substream(&[200]);
    let mut seen = HashSet::with_capacity(n_edges);
    let mut edges = Vec::with_capacity(n_edges);
    while edges.len() < n_edges {
        let i = r.random_range(0..n_nodes);
        let j = r.random_range(0..n_nodes);
        if i == j || !seen.insert((i, j)) {
            continue;
        }
        edges.push((i, j));
    }
    SparseGraph::new(n_nodes, edges, true, HashSet::new())
}
