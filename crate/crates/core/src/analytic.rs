//! Closed-form success probabilities and throughput.
//!
//! For `K` simultaneous packets on distinct sequences, the tagged packet is
//! captured when
//!
//! ```text
//!   r_0 / (noise + (1/N) Σ_{j≠0} r_j) > η_th
//! ```
//!
//! with `r_j` the received power of packet `j` in units of the nominal power.
//! Throughput at arrival rate `λ` averages `K · p_s(K) · Pr{no collision | K}`
//! over a Poisson `K`.

use thiserror::Error;

use crate::model::{noise_term, InversionRule, Scheme, SeqCount, SystemParams};
use crate::numerics::{log_binomial, poisson_pmf_unchecked, poisson_truncation, ErlangLadder, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("packet count must be at least 1")]
    ZeroPackets,
    #[error("non-finite success probability at K = {k}")]
    NonFinite { k: u32 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `1 - (1 - 1/n_seq)^{K-1}`: probability that the tagged packet shares its
/// sequence with at least one of the other `K - 1`.
pub fn collision_prob(n_seq: SeqCount, k: u32) -> Result<f64, AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::ZeroPackets);
    }
    Ok(1.0 - no_collision_prob(n_seq, k))
}

fn no_collision_prob(n_seq: SeqCount, k: u32) -> f64 {
    match n_seq {
        _ if k <= 1 => 1.0,
        SeqCount::Infinite => 1.0,
        SeqCount::Finite(1) => 0.0,
        SeqCount::Finite(n) => ((k - 1) as f64 * (-1.0 / n as f64).ln_1p()).exp(),
    }
}

/// Conventional scheme: `e^{-η·noise} (N / (η + N))^{K-1}`.
pub fn ps_conv(k: u32, params: &SystemParams) -> f64 {
    debug_assert!(k >= 1);
    let eta = params.eta_th;
    let n = params.processing_gain;
    let noise = noise_term(params, Scheme::Conventional);
    (-eta * noise).exp() * ((k.saturating_sub(1)) as f64 * (n / (eta + n)).ln()).exp()
}

/// Geometry of the two-case split for the adaptive constant-power scheme.
///
/// Interferer gains are at least `g_th`, so the interference sum `w` starts
/// at `(K-1) g_th`. When that floor is still below `A`, the level at which
/// the capture threshold equals `g_th`, some interference realizations let
/// every transmitting packet through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseSplit {
    /// `1 + (N/g_th)(g_th/η - noise)`.
    pub k_boundary: f64,
    /// `N (g_th/η - noise)`.
    pub a: f64,
    /// `1 + η/N`.
    pub beta: f64,
    g_th: f64,
}

impl CaseSplit {
    pub fn new(params: &SystemParams) -> Self {
        let g_th = params.g_th();
        let n = params.processing_gain;
        let eta = params.eta_th;
        let noise = noise_term(params, Scheme::AdaptiveConstant);
        let a = n * (g_th / eta - noise);
        Self {
            k_boundary: 1.0 + a / g_th,
            a,
            beta: 1.0 + eta / n,
            g_th,
        }
    }

    /// `B = A - (K-1) g_th`.
    pub fn b(&self, k: u32) -> f64 {
        self.a - (k - 1) as f64 * self.g_th
    }

    /// True when `K <= k_boundary`.
    pub fn first_case(&self, k: u32) -> bool {
        k as f64 <= self.k_boundary
    }
}

/// Adaptive scheme with constant transmit power.
///
/// Interferer gains follow the truncated law (exponential tail above `g_th`
/// plus an atom at `g_th`), so the interference sum is a binomial mixture of
/// shifted Erlang laws. `g_th = 0` is the conventional scheme.
pub fn ps_const(k: u32, params: &SystemParams) -> Result<f64, AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::ZeroPackets);
    }
    let g_th = params.g_th();
    if g_th == 0.0 {
        return Ok(ps_conv(k, params));
    }
    let split = CaseSplit::new(params);
    let p = if split.first_case(k) {
        const_first_case(k, params)?
    } else {
        const_second_case(k, params)
    };
    if !p.is_finite() {
        return Err(AnalyticError::NonFinite { k });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Both branch formulas of [`ps_const`] at the same `K`, regardless of which
/// one applies: `(first, second)`. The first branch clamps `B` at zero.
///
/// The branches differ near the boundary by roughly `(1 - e^{-g_th})^K`, the
/// weight of the configuration where every interferer sits on the atom.
pub fn ps_const_branches(k: u32, params: &SystemParams) -> Result<(f64, f64), AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::ZeroPackets);
    }
    Ok((const_first_case(k, params)?, const_second_case(k, params)))
}

/// Probability that the capture threshold exceeds `g_th` when every
/// interferer sits at the gain floor.
fn floor_tail(k: u32, params: &SystemParams) -> f64 {
    let noise = noise_term(params, Scheme::AdaptiveConstant);
    (-params.eta_th * ((k - 1) as f64 * params.g_th() / params.processing_gain + noise)).exp()
}

fn const_second_case(k: u32, params: &SystemParams) -> f64 {
    let eta = params.eta_th;
    let n = params.processing_gain;
    let g_th = params.g_th();
    floor_tail(k, params) * ((k - 1) as f64 * (-(-g_th).exp() * eta / (n + eta)).ln_1p()).exp()
}

fn const_first_case(k: u32, params: &SystemParams) -> Result<f64, AnalyticError> {
    let split = CaseSplit::new(params);
    first_case_sum(k - 1, params.g_th(), &split, floor_tail(k, params))
}

fn first_case_sum(others: u32, g_th: f64, split: &CaseSplit, floor_tail: f64) -> Result<f64, AnalyticError> {
    // ln(1 - e^{-g_th}): log-probability an interferer sits on the atom.
    let ln_atom = (-(-g_th).exp_m1()).ln();
    let mut p = (others as f64 * ln_atom).exp();
    if others == 0 {
        return Ok(p);
    }
    let b = split.b(others + 1).max(0.0);
    let lower = ErlangLadder::new(others, b)?.lower;
    let upper = ErlangLadder::new(others, b * split.beta)?.upper;
    let ln_beta = split.beta.ln();
    for v in 1..=others {
        let ln_w = log_binomial(others as u64, v as u64) - v as f64 * g_th + (others - v) as f64 * ln_atom;
        let i = v as usize - 1;
        let inner = lower[i] + floor_tail * (-(v as f64) * ln_beta).exp() * upper[i];
        p += ln_w.exp() * inner;
    }
    Ok(p)
}

/// Largest `K` captured under channel inversion, where every packet arrives
/// at the same power and the SINR is `1 / (noise + (K-1)/N)`.
pub fn inversion_capacity(params: &SystemParams) -> u32 {
    let eta = params.eta_th;
    let n = params.processing_gain;
    let noise = noise_term(params, Scheme::AdaptiveInversion);
    let bound = 1.0 + n * (1.0 / eta - noise);
    if bound.is_nan() || bound < 1.0 {
        return 0;
    }
    let floor = bound.floor().min(u32::MAX as f64) as u32;
    match params.inversion_rule {
        InversionRule::Floor => floor.saturating_sub(1),
        InversionRule::Sinr => {
            let captured = |k: u32| 1.0 / (noise + (k - 1) as f64 / n) > eta;
            // The float predicate may disagree with the real bound by one step.
            let mut k = floor.saturating_sub(2).max(1);
            while k > 0 && !captured(k) {
                k -= 1;
            }
            if k == 0 {
                return 0;
            }
            while k < u32::MAX && captured(k + 1) {
                k += 1;
            }
            k
        }
    }
}

/// Adaptive scheme with channel inversion: deterministic in `K`.
pub fn ps_inv(k: u32, params: &SystemParams) -> f64 {
    if k >= 1 && k <= inversion_capacity(params) {
        1.0
    } else {
        0.0
    }
}

/// `p_s(K)` for any scheme.
pub fn success_prob(k: u32, params: &SystemParams, scheme: Scheme) -> Result<f64, AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::ZeroPackets);
    }
    match scheme {
        Scheme::Conventional => Ok(ps_conv(k, params)),
        Scheme::AdaptiveConstant => ps_const(k, params),
        Scheme::AdaptiveInversion => Ok(ps_inv(k, params)),
    }
}

/// Throughput as a function of `λ` for fixed parameters and scheme.
///
/// The per-`K` weights `K · p_s(K) · (1 - p_coll(K))` do not depend on `λ`,
/// so they are tabulated once up to the truncation point of `lambda_max`.
#[derive(Debug, Clone)]
pub struct ThroughputCurve {
    params: SystemParams,
    scheme: Scheme,
    weights: Vec<f64>,
}

impl ThroughputCurve {
    pub fn new(params: &SystemParams, scheme: Scheme, lambda_max: f64) -> Result<Self, AnalyticError> {
        let params = *params;
        let len = truncation_cap(&params, lambda_max.max(0.0));
        let weights = (1..=len)
            .map(|k| weight(k, &params, scheme))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params,
            scheme,
            weights,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// `S(λ) = Σ_{k=1}^{min(M, K_trunc)} w_k · Pr{K = k}`.
    pub fn eval(&self, lambda: f64) -> Result<f64, AnalyticError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(NumericsError::InvalidRate(lambda).into());
        }
        let cap = truncation_cap(&self.params, lambda);
        let mut s = 0.0;
        for k in 1..=cap {
            let w = match self.weights.get(k as usize - 1) {
                Some(&w) => w,
                None => weight(k, &self.params, self.scheme)?,
            };
            if w != 0.0 {
                s += w * poisson_pmf_unchecked(k as u64, lambda);
            }
        }
        Ok(s)
    }
}

fn truncation_cap(params: &SystemParams, lambda: f64) -> u32 {
    poisson_truncation(lambda).min(params.stations as u64) as u32
}

fn weight(k: u32, params: &SystemParams, scheme: Scheme) -> Result<f64, AnalyticError> {
    Ok(k as f64 * success_prob(k, params, scheme)? * no_collision_prob(params.n_seq, k))
}

/// Generic throughput sum at a single arrival rate.
pub fn throughput_sum(lambda: f64, params: &SystemParams, scheme: Scheme) -> Result<f64, AnalyticError> {
    ThroughputCurve::new(params, scheme, lambda)?.eval(lambda)
}

/// Poisson mass beyond the truncation point used by [`throughput_sum`].
pub fn truncation_tail(lambda: f64) -> f64 {
    let cap = poisson_truncation(lambda);
    // Sum the tail directly; 1 - cdf would be lost to rounding.
    let mut term = poisson_pmf_unchecked(cap + 1, lambda);
    let mut sum = 0.0;
    let mut k = cap + 1;
    while term > 0.0 && term >= sum * 1e-17 {
        sum += term;
        k += 1;
        term *= lambda / k as f64;
    }
    sum
}

/// Conventional throughput in closed form (infinite Poisson sum):
/// `λ exp(-η(λ/(η+N) + noise)) exp(-Nλ / ((η+N) n_seq))`.
pub fn throughput_conv_closed(lambda: f64, params: &SystemParams) -> f64 {
    let eta = params.eta_th;
    let n = params.processing_gain;
    let noise = noise_term(params, Scheme::Conventional);
    let collision = match params.n_seq {
        SeqCount::Finite(q) => n * lambda / ((eta + n) * q as f64),
        SeqCount::Infinite => 0.0,
    };
    lambda * (-eta * (lambda / (eta + n) + noise)).exp() * (-collision).exp()
}

/// Channel-inversion throughput in closed form:
/// `λ e^{-λ} Σ_{k=1}^{k_max} (λ (1 - 1/n_seq))^{k-1} / (k-1)!`.
pub fn throughput_inv_closed(lambda: f64, params: &SystemParams) -> f64 {
    let k_max = inversion_capacity(params);
    if k_max == 0 {
        return 0.0;
    }
    let x = lambda * params.n_seq.distinct_prob();
    let mut term = (-lambda).exp();
    let mut c = term;
    for j in 1..k_max {
        term *= x / j as f64;
        if term == 0.0 {
            break;
        }
        c += term;
    }
    lambda * c
}
