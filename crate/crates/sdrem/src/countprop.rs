//! Backward pass: propagate hidden counts from the output layer to the
//! input layer, producing the auxiliaries consumed by the Gamma/Dirichlet
//! posteriors.
//!
//! Layer convention: B^(l) connects layer l to layer l+1 for l = 1..L-1.
//! The auxiliaries (q, y, h) at layer l pair with psi^(l) and produce
//! m^(l-1).

use ndarray::Array2;

use crate::error::{Result, SdremError};
use crate::model::{AugmentedCounts, FeatureMatrix, ModelState, SparseGraph};
use crate::par;
use crate::randkit::{self, RngStream};

pub const PHASE_BACKWARD: u64 = 1;

/// Dirichlet concentration of one layer.
#[derive(Clone, Debug)]
pub struct LayerConcentration {
    pub psi: Array2<f64>,
    /// 1-based layer index.
    pub layer_index: usize,
}

/// psi^(l): for l = 1, F_i T + alpha; for l >= 2, the B-weighted sum of the
/// previous layer's memberships over in-neighbors plus self.
pub fn compute_psi(
    state: &ModelState,
    features: &FeatureMatrix,
    layer: usize,
) -> Result<LayerConcentration> {
    let n = state.n_nodes();
    let k = state.n_communities();
    if layer < 1 || layer > state.n_layers() {
        return Err(SdremError::InvalidParameter(format!(
            "layer {layer} out of range 1..={}",
            state.n_layers()
        )));
    }
    let mut psi = Array2::zeros((n, k));
    if layer == 1 {
        for i in 0..n {
            for ki in 0..k {
                psi[[i, ki]] = state.alpha;
            }
            for &(d, fv) in &features.rows[i] {
                for ki in 0..k {
                    psi[[i, ki]] += fv * state.t[[d, ki]];
                }
            }
        }
    } else {
        let b = &state.b[layer - 2];
        let prev = &state.pi[layer - 2];
        for i in 0..n {
            for &(src, val) in &b.rows[i] {
                for ki in 0..k {
                    psi[[i, ki]] += val * prev[[src, ki]];
                }
            }
        }
    }
    Ok(LayerConcentration {
        psi,
        layer_index: layer,
    })
}

struct NodeBackward {
    q: f64,
    y: Vec<u64>,
    /// split mass per source of this receiver, one K-vector per source
    h: Vec<Vec<u64>>,
}

struct NodeInput {
    q: f64,
    y: Vec<u64>,
    /// split mass per nonzero feature of this node
    h_feat: Vec<(usize, Vec<u64>)>,
    h_alpha: u64,
}

fn node_q<R: rand::Rng>(psi_sum: f64, m_sum: u64, rng: &mut R) -> Result<f64> {
    // Beta(a, 0) degenerates to 1 for zero-count nodes
    if m_sum == 0 {
        Ok(1.0)
    } else {
        randkit::beta_sample(psi_sum, m_sum as f64, rng)
    }
}

/// Run the full backward pass for one sweep.
pub fn backward_counts(
    state: &ModelState,
    _graph: &SparseGraph,
    features: &FeatureMatrix,
    rng: &RngStream,
    iter: u64,
) -> Result<AugmentedCounts> {
    let n = state.n_nodes();
    let k = state.n_communities();
    let l = state.n_layers();

    let mut m: Vec<Array2<u64>> = (0..l).map(|_| Array2::zeros((n, k))).collect();
    let mut y: Vec<Array2<u64>> = (0..l).map(|_| Array2::zeros((n, k))).collect();
    let mut q: Vec<Vec<f64>> = vec![vec![1.0; n]; l];
    let mut h_edge: Vec<Vec<Vec<u64>>> = state
        .b
        .iter()
        .map(|b| b.rows.iter().map(|r| vec![0u64; r.len()]).collect())
        .collect();
    let mut h_feat: Array2<u64> = Array2::zeros((features.n_features, k));
    let mut h_alpha = 0u64;

    // m^(L) is X
    m[l - 1].assign(&state.x);

    for layer in (2..=l).rev() {
        let conc = compute_psi(state, features, layer)?;
        let b = &state.b[layer - 2];
        let prev = &state.pi[layer - 2];
        let m_cur = m[layer - 1].clone();
        let results: Vec<Result<NodeBackward>> = par::map_indexed(n, |i| {
            let mut r = rng.substream(&[iter, PHASE_BACKWARD, layer as u64, i as u64]);
            let psi_row: Vec<f64> = (0..k).map(|ki| conc.psi[[i, ki]]).collect();
            let psi_sum: f64 = psi_row.iter().sum();
            let m_sum: u64 = (0..k).map(|ki| m_cur[[i, ki]]).sum();
            let qi = node_q(psi_sum, m_sum, &mut r)?;
            let srcs = &b.rows[i];
            let mut y_row = vec![0u64; k];
            let mut h = vec![vec![0u64; k]; srcs.len()];
            for ki in 0..k {
                let yk = randkit::crt_sample(m_cur[[i, ki]], psi_row[ki], &mut r)?;
                y_row[ki] = yk;
                if yk > 0 {
                    let weights: Vec<f64> = srcs
                        .iter()
                        .map(|&(src, val)| val * prev[[src, ki]])
                        .collect();
                    let split = randkit::multinomial_split(yk, &weights, &mut r)?;
                    for (hs, cnt) in h.iter_mut().zip(split) {
                        hs[ki] = cnt;
                    }
                }
            }
            Ok(NodeBackward { q: qi, y: y_row, h })
        });
        for (i, res) in results.into_iter().enumerate() {
            let nb = res?;
            q[layer - 1][i] = nb.q;
            for ki in 0..k {
                y[layer - 1][[i, ki]] = nb.y[ki];
            }
            for ((&(src, _), hs), acc) in state.b[layer - 2].rows[i]
                .iter()
                .zip(&nb.h)
                .zip(h_edge[layer - 2][i].iter_mut())
            {
                let mut tot = 0u64;
                for ki in 0..k {
                    m[layer - 2][[src, ki]] += hs[ki];
                    tot += hs[ki];
                }
                *acc += tot;
            }
        }
    }

    // layer 1: split over (features, alpha)
    {
        let conc = compute_psi(state, features, 1)?;
        let m_cur = m[0].clone();
        let alpha = state.alpha;
        let results: Vec<Result<NodeInput>> = par::map_indexed(n, |i| {
            let mut r = rng.substream(&[iter, PHASE_BACKWARD, 1, i as u64]);
            let psi_row: Vec<f64> = (0..k).map(|ki| conc.psi[[i, ki]]).collect();
            let psi_sum: f64 = psi_row.iter().sum();
            let m_sum: u64 = (0..k).map(|ki| m_cur[[i, ki]]).sum();
            let qi = node_q(psi_sum, m_sum, &mut r)?;
            let feats = &features.rows[i];
            let mut y_row = vec![0u64; k];
            let mut hf: Vec<(usize, Vec<u64>)> =
                feats.iter().map(|&(d, _)| (d, vec![0u64; k])).collect();
            let mut ha = 0u64;
            for ki in 0..k {
                let yk = randkit::crt_sample(m_cur[[i, ki]], psi_row[ki], &mut r)?;
                y_row[ki] = yk;
                if yk > 0 {
                    let mut weights: Vec<f64> = feats
                        .iter()
                        .map(|&(d, fv)| fv * state.t[[d, ki]])
                        .collect();
                    weights.push(alpha);
                    let split = randkit::multinomial_split(yk, &weights, &mut r)?;
                    for (slot, cnt) in hf.iter_mut().zip(&split) {
                        slot.1[ki] = *cnt;
                    }
                    ha += split[feats.len()];
                }
            }
            Ok(NodeInput {
                q: qi,
                y: y_row,
                h_feat: hf,
                h_alpha: ha,
            })
        });
        for (i, res) in results.into_iter().enumerate() {
            let ni = res?;
            q[0][i] = ni.q;
            for ki in 0..k {
                y[0][[i, ki]] = ni.y[ki];
            }
            for (d, counts) in ni.h_feat {
                for ki in 0..k {
                    h_feat[[d, ki]] += counts[ki];
                }
            }
            h_alpha = h_alpha.checked_add(ni.h_alpha).ok_or_else(|| {
                SdremError::CountOverflow("h_alpha accumulator overflowed".into())
            })?;
        }
    }

    Ok(AugmentedCounts {
        m,
        y,
        h_edge,
        h_feat,
        h_alpha,
        q,
    })
}

/// Per-layer average latent counts per node, ordered layer L down to 1.
pub fn latent_count_report(counts: &AugmentedCounts, n_nodes: usize) -> Vec<f64> {
    counts
        .m
        .iter()
        .rev()
        .map(|m| m.iter().sum::<u64>() as f64 / n_nodes as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_state, HyperParams, Mode};
    use std::collections::HashSet;

    fn setup(
        n: usize,
        edges: Vec<(usize, usize)>,
        k: usize,
        l: usize,
        seed: u64,
    ) -> (SparseGraph, FeatureMatrix, ModelState) {
        let g = SparseGraph::new(n, edges, true, HashSet::new()).unwrap();
        let f = FeatureMatrix::empty(n);
        let hp = HyperParams {
            k,
            l,
            ..HyperParams::default()
        };
        let s = init_state(&g, &f, &hp, &RngStream::new(seed)).unwrap();
        (g, f, s)
    }

    #[test]
    fn psi_layer1_no_features_is_alpha() {
        let (g, f, s) = setup(3, vec![(0, 1), (1, 2)], 4, 1, 1);
        let conc = compute_psi(&s, &f, 1).unwrap();
        let _ = &g;
        for &v in conc.psi.iter() {
            assert!((v - s.alpha).abs() < 1e-15);
        }
    }

    #[test]
    fn psi_is_direct_linear_sum() {
        // 2 nodes, edge 0 -> 1, B_{01}=2, B_{11}=1, pi_0=(1,0), pi_1=(0,1)
        let (_g, f, mut s) = setup(2, vec![(0, 1)], 2, 2, 2);
        s.b[0].rows[1] = vec![(1, 1.0), (0, 2.0)];
        s.pi[0][[0, 0]] = 1.0 - 1e-12;
        s.pi[0][[0, 1]] = 1e-12;
        s.pi[0][[1, 0]] = 1e-12;
        s.pi[0][[1, 1]] = 1.0 - 1e-12;
        let conc = compute_psi(&s, &f, 2).unwrap();
        assert!((conc.psi[[1, 0]] - 2.0).abs() < 1e-9);
        assert!((conc.psi[[1, 1]] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psi_inde_mode_uses_diagonal_only() {
        let g = SparseGraph::new(3, vec![(0, 1), (1, 2)], true, HashSet::new()).unwrap();
        let f = FeatureMatrix::empty(3);
        let hp = HyperParams {
            k: 2,
            l: 2,
            mode: Mode::Inde,
            ..HyperParams::default()
        };
        let s = init_state(&g, &f, &hp, &RngStream::new(3)).unwrap();
        let conc = compute_psi(&s, &f, 2).unwrap();
        for i in 0..3 {
            let bii = s.b[0].diag(i);
            for ki in 0..2 {
                assert!((conc.psi[[i, ki]] - bii * s.pi[0][[i, ki]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_x_gives_zero_counts_and_unit_q() {
        let (g, f, mut s) = setup(4, vec![(0, 1), (1, 2), (2, 3)], 3, 2, 4);
        s.x.fill(0);
        let counts = backward_counts(&s, &g, &f, &RngStream::new(4), 0).unwrap();
        for m in &counts.m {
            assert_eq!(m.iter().sum::<u64>(), 0);
        }
        for y in &counts.y {
            assert_eq!(y.iter().sum::<u64>(), 0);
        }
        for ql in &counts.q {
            assert!(ql.iter().all(|&q| q == 1.0));
        }
        assert_eq!(counts.h_alpha, 0);
        assert_eq!(latent_count_report(&counts, 4), vec![0.0, 0.0]);
    }

    #[test]
    fn counts_are_conserved_and_monotone() {
        let (g, f, s) = setup(6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)], 3, 3, 5);
        let counts = backward_counts(&s, &g, &f, &RngStream::new(5), 1).unwrap();
        let totals = counts.layer_totals();
        // m^(L) aliases X
        assert_eq!(totals[2], s.x.iter().sum::<u64>());
        for l in (1..3).rev() {
            let y_tot: u64 = counts.y[l].iter().sum();
            assert_eq!(totals[l - 1], y_tot, "split conserves y at layer {}", l + 1);
            assert!(totals[l - 1] <= totals[l]);
        }
        // y bounds: 0 <= y <= m, and y >= 1 iff m >= 1
        for l in 0..3 {
            for (yv, mv) in counts.y[l].iter().zip(counts.m[l].iter()) {
                assert!(yv <= mv);
                assert_eq!(*yv == 0, *mv == 0);
            }
        }
        // h_edge totals equal m^(l-1) totals for l >= 2
        for bl in 0..2 {
            let h_tot: u64 = counts.h_edge[bl]
                .iter()
                .flat_map(|r| r.iter())
                .sum();
            assert_eq!(h_tot, totals[bl]);
        }
    }

    #[test]
    fn single_node_crt_mean_matches() {
        // N=1, K=1, m^(2)=5, psi^(2)=2 -> MC mean of m^(1) ≈ 2.9
        let g = SparseGraph::new(1, vec![], true, HashSet::new()).unwrap();
        let f = FeatureMatrix::empty(1);
        let hp = HyperParams {
            k: 1,
            l: 2,
            ..HyperParams::default()
        };
        let mut s = init_state(&g, &f, &hp, &RngStream::new(6)).unwrap();
        s.x[[0, 0]] = 5;
        s.b[0].rows[0] = vec![(0, 2.0)];
        // pi is (1.0) for K=1, so psi^(2) = 2.0
        let stream = RngStream::new(7);
        let n = 20_000;
        let mut sum = 0u64;
        for it in 0..n {
            let counts = backward_counts(&s, &g, &f, &stream, it).unwrap();
            sum += counts.m[0][[0, 0]];
        }
        let mean = sum as f64 / n as f64;
        let expect = 2.0 * (0.5 + 1.0 / 3.0 + 0.25 + 0.2 + 1.0 / 6.0); // 2.9
        assert!((mean - expect).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn backward_is_deterministic() {
        let (g, f, s) = setup(5, vec![(0, 1), (1, 2), (2, 0), (3, 4)], 3, 2, 8);
        let a = backward_counts(&s, &g, &f, &RngStream::new(11), 3).unwrap();
        let b = backward_counts(&s, &g, &f, &RngStream::new(11), 3).unwrap();
        assert_eq!(a.m, b.m);
        assert_eq!(a.y, b.y);
        assert_eq!(a.q, b.q);
        assert_eq!(a.h_edge, b.h_edge);
    }

    #[test]
    fn feature_split_respects_sparsity() {
        let g = SparseGraph::new(3, vec![(0, 1), (1, 2)], true, HashSet::new()).unwrap();
        let f =
            FeatureMatrix::from_triplets(3, 2, vec![(0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        let hp = HyperParams {
            k: 2,
            l: 2,
            ..HyperParams::default()
        };
        let s = init_state(&g, &f, &hp, &RngStream::new(12)).unwrap();
        let counts = backward_counts(&s, &g, &f, &RngStream::new(13), 0).unwrap();
        // node 2 has no features: all its layer-1 mass must go to alpha
        let m1_tot: u64 = counts.m[0].iter().sum();
        let hf_tot: u64 = counts.h_feat.iter().sum();
        let y1_tot: u64 = counts.y[0].iter().sum();
        assert_eq!(hf_tot + counts.h_alpha, y1_tot);
        assert!(m1_tot >= y1_tot || y1_tot == 0 || m1_tot > 0);
    }
}
