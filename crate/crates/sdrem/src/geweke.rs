//! Joint-distribution testing of the sampler (Geweke-style).
//!
//! Two ways of sampling from the same joint over (parameters, data) must
//! agree: the marginal-conditional arm draws fresh forward samples, while
//! the successive-conditional arm alternates the Gibbs transition kernel
//! with a data redraw. The propagation support is frozen to a fixed graph
//! in both arms so the support rule stays well defined while the relation
//! itself is random.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Result, SdremError};
use crate::gibbs;
use crate::model::{self, FeatureMatrix, HyperParams, ModelState, SparseGraph};
use crate::randkit::RngStream;

/// Transition kernel used by the successive-conditional arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// The full Gibbs sweep.
    Gibbs,
    /// Fresh joint forward draw; validates the comparison harness itself
    /// (both arms become iid samples from the same joint).
    Identity,
    /// Deliberately broken sweep (X update rate halved); the self-test
    /// that must fail.
    CorruptedX,
}

#[derive(Clone, Debug)]
pub struct GewekeConfig {
    pub n_nodes: usize,
    pub k: usize,
    pub l: usize,
    /// Retained samples per arm.
    pub n_samples: usize,
    /// Kernel steps between retained successive-conditional samples.
    pub thin: usize,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            n_nodes: 8,
            k: 3,
            l: 2,
            n_samples: 4000,
            // the compatibility-scale hyper pair mixes slowly under its
            // heavy-tailed prior; light thinning leaves residual
            // autocorrelation that the batch-means error bars then absorb
            thin: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StatResult {
    pub name: &'static str,
    pub mean_forward: f64,
    pub mean_chain: f64,
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct GewekeReport {
    pub stats: Vec<StatResult>,
    pub max_abs_z: f64,
}

const STAT_NAMES: [&str; 7] = [
    "mean_pi_out_k0",
    "mean_pi_out_sq",
    "mean_x",
    "mean_lambda_bounded",
    "m_scale",
    "alpha",
    "n_positives",
];

fn statistics(state: &ModelState, positives: &[(usize, usize)]) -> [f64; 7] {
    let n = state.n_nodes() as f64;
    let k = state.n_communities() as f64;
    let pi_out = &state.pi[state.n_layers() - 1];
    let mean_pi0 = pi_out.column(0).sum() / n;
    let mean_pi_sq = pi_out.iter().map(|&p| p * p).sum::<f64>() / n;
    let mean_x = state.x.iter().map(|&x| x as f64).sum::<f64>() / (n * k);
    // Lambda's prior marginal is heavy-tailed (k, theta themselves gamma),
    // so compare a bounded transform instead of the raw mean
    let mean_lambda = state.lambda.iter().map(|&v| v / (1.0 + v)).sum::<f64>() / (k * k);
    [
        mean_pi0,
        mean_pi_sq,
        mean_x,
        mean_lambda,
        state.m_scale,
        state.alpha,
        positives.len() as f64,
    ]
}

/// Draw the relation R | X, Lambda over all ordered dyads, then the latent
/// Z aggregates given R. Returns the positive dyads.
fn redraw_data(
    state: &mut ModelState,
    rng: &mut impl Rng,
    stream: &RngStream,
    iter: u64,
) -> Result<Vec<(usize, usize)>> {
    let n = state.n_nodes();
    let k = state.n_communities();
    let mut positives = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut exponent = 0.0;
            for k1 in 0..k {
                let xi = state.x[[i, k1]] as f64;
                if xi == 0.0 {
                    continue;
                }
                for k2 in 0..k {
                    exponent += xi * state.lambda[[k1, k2]] * state.x[[j, k2]] as f64;
                }
            }
            let p = -(-exponent).exp_m1();
            if p > 0.0 && rng.random_bool(p.min(1.0)) {
                positives.push((i, j));
            }
        }
    }
    // high bit keeps this Z substream disjoint from the sweep's own Z phase
    gibbs::update_z(state, &positives, stream, (1 << 63) | iter)?;
    Ok(positives)
}

/// Standard error of an autocorrelated series via non-overlapping batch
/// means.
fn batch_means_se(series: &[f64]) -> f64 {
    let n = series.len();
    let n_batches = (n as f64).sqrt().floor() as usize;
    let batch = n / n_batches.max(1);
    let mut means = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let slice = &series[b * batch..(b + 1) * batch];
        means.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let var = means
        .iter()
        .map(|&m| (m - grand) * (m - grand))
        .sum::<f64>()
        / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

fn iid_se(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

fn support_graph(n_nodes: usize, seed: u64) -> Result<SparseGraph> {
    // ring plus a few chords: sparse but connected, a realistic support
    let mut edges: Vec<(usize, usize)> = (0..n_nodes).map(|i| (i, (i + 1) % n_nodes)).collect();
    let mut r = RngStream::new(seed).substream(&[300]);
    for _ in 0..n_nodes {
        let i = r.random_range(0..n_nodes);
        let j = r.random_range(0..n_nodes);
        if i != j {
            edges.push((i, j));
        }
    }
    SparseGraph::new(n_nodes, edges, true, HashSet::new())
}

/// Run both arms and compare the statistics with z-scores.
pub fn run(config: &GewekeConfig, kernel: Kernel) -> Result<GewekeReport> {
    let hp = HyperParams {
        k: config.k,
        l: config.l,
        // M's shape defaults to N, which makes X counts large and the
        // Touchard caps expensive; a small fixed shape keeps the joint light
        k_m: Some(2.0),
        theta_m: 1.0,
        iterations: 2,
        burn_in: 1,
        seed: config.seed,
        ..HyperParams::default()
    };
    hp.validate()?;
    let graph = support_graph(config.n_nodes, config.seed)?;
    let features = FeatureMatrix::empty(config.n_nodes);
    let n_stats = STAT_NAMES.len();

    // marginal-conditional arm: fresh joint draws
    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_samples); n_stats];
    for s in 0..config.n_samples {
        let stream = RngStream::new(config.seed ^ 0x4d43_0000 ^ s as u64);
        let mut state = model::init_state(&graph, &features, &hp, &stream)?;
        let mut r = stream.substream(&[301]);
        let positives = redraw_data(&mut state, &mut r, &stream, u64::MAX - 2)?;
        for (slot, v) in forward.iter_mut().zip(statistics(&state, &positives)) {
            slot.push(v);
        }
    }

    // successive-conditional arm: Gibbs kernel then data redraw
    let chain_stream = RngStream::new(config.seed ^ 0x5343_0000);
    let mut state = model::init_state(&graph, &features, &hp, &chain_stream)?;
    let mut r = chain_stream.substream(&[302]);
    let mut positives = redraw_data(&mut state, &mut r, &chain_stream, u64::MAX - 2)?;
    let rate_scale = match kernel {
        Kernel::Gibbs | Kernel::Identity => 1.0,
        Kernel::CorruptedX => 0.5,
    };
    let mut chain: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_samples); n_stats];
    let mut iter = 0u64;
    for _ in 0..config.n_samples {
        for _ in 0..config.thin {
            if kernel == Kernel::Identity {
                let fresh = RngStream::new(config.seed ^ 0x4944_0000 ^ iter.wrapping_mul(2654435761));
                state = model::init_state(&graph, &features, &hp, &fresh)?;
                let mut rf = fresh.substream(&[303]);
                positives = redraw_data(&mut state, &mut rf, &fresh, u64::MAX - 2)?;
            } else {
                gibbs::sweep_with_positives(
                    &mut state,
                    &graph,
                    &positives,
                    &features,
                    &hp,
                    &chain_stream,
                    iter,
                    rate_scale,
                )?;
                positives = redraw_data(&mut state, &mut r, &chain_stream, iter)?;
            }
            iter += 1;
        }
        for (slot, v) in chain.iter_mut().zip(statistics(&state, &positives)) {
            slot.push(v);
        }
    }

    let mut stats = Vec::with_capacity(n_stats);
    let mut max_abs_z = 0.0f64;
    for (si, name) in STAT_NAMES.iter().enumerate() {
        let mf = forward[si].iter().sum::<f64>() / forward[si].len() as f64;
        let mc = chain[si].iter().sum::<f64>() / chain[si].len() as f64;
        let se_f = iid_se(&forward[si]);
        let se_c = batch_means_se(&chain[si]);
        let se = (se_f * se_f + se_c * se_c).sqrt();
        if se == 0.0 {
            return Err(SdremError::Other(format!(
                "statistic {name} is degenerate (zero variance)"
            )));
        }
        let z = (mf - mc) / se;
        max_abs_z = max_abs_z.max(z.abs());
        stats.push(StatResult {
            name,
            mean_forward: mf,
            mean_chain: mc,
            z,
        });
    }
    Ok(GewekeReport { stats, max_abs_z })
}
