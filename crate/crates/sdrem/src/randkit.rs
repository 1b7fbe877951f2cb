//! Exact samplers for the non-standard distributions the Gibbs sweep needs.
//!
//! Every sampler is driven by an explicit RNG so draws are reproducible from
//! an [`RngStream`] substream key.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdremError};

/// Gamma draws are floored at this value so downstream logs and rates never
/// see an exact zero (tiny shapes underflow otherwise).
pub const GAMMA_FLOOR: f64 = 1e-300;

/// CRT draws beyond this count are refused rather than approximated.
pub const CRT_MAX_COUNT: u64 = 1_000_000;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded root of a family of independent RNG substreams.
///
/// Substreams are keyed by small integer tuples (iteration, phase, unit), so
/// per-node or per-edge draws are identical whether executed serially or in
/// parallel.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent ChaCha substream for `key`.
    pub fn substream(&self, key: &[u64]) -> ChaCha8Rng {
        let mut s = splitmix64(self.seed ^ 0x5851_f42d_4c95_7f2d);
        for &k in key {
            s = splitmix64(s ^ splitmix64(k));
        }
        let mut bytes = [0u8; 32];
        let mut v = s;
        for chunk in bytes.chunks_mut(8) {
            v = splitmix64(v);
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Draw from Gamma(shape, scale); mean is shape*scale. Result is floored at
/// [`GAMMA_FLOOR`] so it is strictly positive.
pub fn gamma_sample<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(SdremError::InvalidParameter(format!(
            "gamma_sample requires positive finite shape/scale, got ({shape}, {scale})"
        )));
    }
    let g = Gamma::new(shape, scale)
        .map_err(|e| SdremError::InvalidParameter(format!("gamma_sample: {e}")))?;
    Ok(g.sample(rng).max(GAMMA_FLOOR))
}

/// Draw from Beta(a, b).
pub fn beta_sample<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(SdremError::InvalidParameter(format!(
            "beta_sample requires positive parameters, got ({a}, {b})"
        )));
    }
    let d =
        Beta::new(a, b).map_err(|e| SdremError::InvalidParameter(format!("beta_sample: {e}")))?;
    Ok(d.sample(rng).clamp(GAMMA_FLOOR, 1.0))
}

/// Draw a simplex vector from Dirichlet(concentration).
pub fn dirichlet_sample<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if concentration.is_empty() {
        return Err(SdremError::InvalidParameter(
            "dirichlet_sample: empty concentration".into(),
        ));
    }
    let mut out = Vec::with_capacity(concentration.len());
    for &c in concentration {
        if !(c > 0.0) {
            return Err(SdremError::InvalidParameter(format!(
                "dirichlet_sample: non-positive concentration entry {c}"
            )));
        }
        out.push(gamma_sample(c, 1.0, rng)?);
    }
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v = (*v / sum).max(GAMMA_FLOOR);
    }
    // renormalize after flooring
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Chinese Restaurant Table draw: number of tables among `m` customers with
/// concentration `r`, as the sum of Bernoulli(r/(r+t-1)) over t = 1..=m.
pub fn crt_sample<R: Rng + ?Sized>(m: u64, r: f64, rng: &mut R) -> Result<u64> {
    if !(r > 0.0) {
        return Err(SdremError::InvalidParameter(format!(
            "crt_sample requires r > 0, got {r}"
        )));
    }
    if m > CRT_MAX_COUNT {
        return Err(SdremError::CountOverflow(format!(
            "crt_sample count {m} exceeds exact-sampling limit {CRT_MAX_COUNT}"
        )));
    }
    let mut tables = 0u64;
    for t in 1..=m {
        if rng.random_bool(r / (r + (t - 1) as f64)) {
            tables += 1;
        }
    }
    Ok(tables)
}

/// Poisson draw; a zero rate yields zero.
pub fn poisson_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if rate < 0.0 || !rate.is_finite() {
        return Err(SdremError::InvalidParameter(format!(
            "poisson_sample requires finite rate >= 0, got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(rate)
        .map_err(|e| SdremError::InvalidParameter(format!("poisson_sample: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Zero-truncated Poisson draw: Poisson(rate) conditioned on a positive
/// outcome. Inversion from the truncated CDF below rate 30; rejection of
/// zeros above.
pub fn ztp_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(SdremError::InvalidParameter(format!(
            "ztp_sample requires finite rate > 0, got {rate}"
        )));
    }
    if rate < 30.0 {
        // p(z) = rate^z e^{-rate} / (z! (1 - e^{-rate})), z >= 1
        let norm = -(-rate).exp_m1(); // 1 - e^{-rate}, accurate for small rates
        let u: f64 = rng.random::<f64>() * norm;
        let mut z = 1u64;
        let mut term = rate * (-rate).exp();
        let mut cum = term;
        while cum < u && z < 10_000 {
            z += 1;
            term *= rate / z as f64;
            cum += term;
        }
        Ok(z)
    } else {
        loop {
            let z = poisson_sample(rate, rng)?;
            if z > 0 {
                return Ok(z);
            }
        }
    }
}

/// Draw from the pmf P(x) ∝ lam^x x^n / x!, the conditional of a Poisson
/// variable that appears both as a prior count and a likelihood rate.
///
/// For n >= 1, P(0) = 0 exactly. Weights are evaluated in log space and the
/// support is truncated at ceil(lam + n + 12*sqrt(lam+n) + 20), past which
/// the neglected tail mass is below 1e-10.
pub fn touchard_conditional_sample<R: Rng + ?Sized>(lam: f64, n: u64, rng: &mut R) -> Result<u64> {
    if !lam.is_finite() || lam < 0.0 {
        return Err(SdremError::InvalidParameter(format!(
            "touchard_conditional_sample requires finite lam >= 0, got {lam}"
        )));
    }
    if lam == 0.0 {
        if n >= 1 {
            return Err(SdremError::InconsistentState(
                "touchard conditional with zero rate and positive exponent has no support".into(),
            ));
        }
        return Ok(0);
    }
    touchard_conditional_sample_log(lam.ln(), n, rng)
}

/// Same conditional, parameterised by log(lam) so callers can form rates like
/// M*pi*exp(-S) without underflow.
pub fn touchard_conditional_sample_log<R: Rng + ?Sized>(
    log_lam: f64,
    n: u64,
    rng: &mut R,
) -> Result<u64> {
    if !log_lam.is_finite() && log_lam != f64::NEG_INFINITY {
        return Err(SdremError::InvalidParameter(format!(
            "touchard_conditional_sample_log: bad log rate {log_lam}"
        )));
    }
    if log_lam == f64::NEG_INFINITY {
        if n >= 1 {
            return Err(SdremError::InconsistentState(
                "touchard conditional with zero rate and positive exponent has no support".into(),
            ));
        }
        return Ok(0);
    }
    if n == 0 {
        // reduces to Poisson(lam)
        return poisson_sample(log_lam.exp(), rng);
    }
    let lam = log_lam.exp().min(1e12);
    let base = lam + n as f64;
    let x_max = (base + 12.0 * base.sqrt() + 20.0).ceil() as u64;
    let n_f = n as f64;
    // log w(x) = x log lam + n log x - log x!
    let mut log_w = Vec::with_capacity(x_max as usize);
    let mut max_lw = f64::NEG_INFINITY;
    for x in 1..=x_max {
        let xf = x as f64;
        let lw = xf * log_lam + n_f * xf.ln() - libm::lgamma(xf + 1.0);
        max_lw = max_lw.max(lw);
        log_w.push(lw);
    }
    let mut total = 0.0;
    for lw in &log_w {
        total += (lw - max_lw).exp();
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, lw) in log_w.iter().enumerate() {
        cum += (lw - max_lw).exp();
        if cum >= u {
            return Ok(i as u64 + 1);
        }
    }
    Ok(x_max)
}

/// Split `total` into components with marginal means proportional to
/// `weights`, by sequential conditional binomials.
pub fn multinomial_split<R: Rng + ?Sized>(
    total: u64,
    weights: &[f64],
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut out = vec![0u64; weights.len()];
    if total == 0 {
        return Ok(out);
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(SdremError::InvalidParameter(
            "multinomial_split: positive total with non-positive weight sum".into(),
        ));
    }
    let mut remaining = total;
    let mut rest = wsum;
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == weights.len() - 1 {
            out[i] = remaining;
            break;
        }
        let p = (w / rest).clamp(0.0, 1.0);
        let draw = if p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, p)
                .map_err(|e| SdremError::InvalidParameter(format!("multinomial_split: {e}")))?
                .sample(rng)
        };
        out[i] = draw;
        remaining -= draw;
        rest -= w;
    }
    Ok(out)
}
