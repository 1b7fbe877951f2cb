//! Link probabilities, AUC and held-out negative log-likelihood.

use ndarray::Array2;

use crate::error::{Result, SdremError};
use crate::model::PosteriorTrace;

/// Probability floor/ceiling applied before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Evaluation summary for a test split.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EvalResult {
    /// None when the test set lacks both label classes.
    pub auc: Option<f64>,
    pub mean_nll: f64,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
}

/// 1 - exp(-(X_i)^T Lambda (X_j)).
pub fn link_prob(x: &Array2<u64>, lambda: &Array2<f64>, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(SdremError::InvalidParameter(
            "link_prob is undefined for self-dyads".into(),
        ));
    }
    let k = lambda.nrows();
    let mut exponent = 0.0;
    for k1 in 0..k {
        let xi = x[[i, k1]] as f64;
        if xi == 0.0 {
            continue;
        }
        for k2 in 0..k {
            exponent += xi * lambda[[k1, k2]] * x[[j, k2]] as f64;
        }
    }
    Ok(-(-exponent).exp_m1())
}

/// Rao-Blackwellized link probability: the running average over retained
/// draws stored in the trace.
pub fn posterior_link_prob(trace: &PosteriorTrace, dyad: (usize, usize)) -> Result<f64> {
    if trace.n_retained == 0 {
        return Err(SdremError::InvalidParameter(
            "posterior_link_prob on an empty trace".into(),
        ));
    }
    trace.prob_of(dyad).ok_or_else(|| {
        SdremError::InvalidParameter(format!("dyad {dyad:?} is not monitored by the trace"))
    })
}

/// Mann-Whitney AUC with midrank tie handling.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(SdremError::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SdremError::InvalidParameter(
            "auc requires at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let mut end = idx + 1;
        while end < order.len() && scores[order[end]] == scores[order[idx]] {
            end += 1;
        }
        // midrank of the tie group, 1-based ranks
        let midrank = (idx + 1 + end) as f64 / 2.0;
        for &o in &order[idx..end] {
            if labels[o] {
                rank_sum_pos += midrank;
            }
        }
        idx = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average negative log-likelihood over test dyads, with probabilities
/// clamped to [PROB_CLAMP, 1 - PROB_CLAMP].
pub fn mean_nll(trace: &PosteriorTrace, test_dyads: &[((usize, usize), bool)]) -> Result<f64> {
    if test_dyads.is_empty() {
        return Err(SdremError::InvalidParameter(
            "mean_nll on an empty test set".into(),
        ));
    }
    let mut total = 0.0;
    for &(dyad, label) in test_dyads {
        let p = posterior_link_prob(trace, dyad)?;
        let p = if label { p } else { 1.0 - p };
        total -= p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
    }
    Ok(total / test_dyads.len() as f64)
}

/// Evaluate a trace against labelled test dyads.
pub fn evaluate(trace: &PosteriorTrace, test_dyads: &[((usize, usize), bool)]) -> Result<EvalResult> {
    let n_test_pos = test_dyads.iter().filter(|&&(_, l)| l).count();
    let n_test_neg = test_dyads.len() - n_test_pos;
    let scores: Vec<f64> = test_dyads
        .iter()
        .map(|&(d, _)| posterior_link_prob(trace, d))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = test_dyads.iter().map(|&(_, l)| l).collect();
    let auc_val = if n_test_pos > 0 && n_test_neg > 0 {
        Some(auc(&scores, &labels)?)
    } else {
        None
    };
    Ok(EvalResult {
        auc: auc_val,
        mean_nll: mean_nll(trace, test_dyads)?,
        n_test_pos,
        n_test_neg,
    })
}
