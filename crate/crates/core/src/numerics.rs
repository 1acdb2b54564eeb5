//! Special functions, probability kernels, a bracketed 1-D maximizer and the
//! deterministic random stream used by the simulator.
//!
//! The incomplete gamma functions here are restricted to positive integer
//! order, where both regularized forms reduce to finite Poisson sums:
//!
//! ```text
//!   Q(v, x) = Γ(v, x) / (v-1)! = e^{-x} Σ_{m=0}^{v-1} x^m / m!
//!   P(v, x) = γ(v, x) / (v-1)! = 1 - Q(v, x)
//! ```
//!
//! `P` is accumulated from the tail series when `x` is small relative to `v`
//! so that tiny values are not lost to cancellation.

use std::sync::OnceLock;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("Poisson rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("incomplete gamma order must be at least 1")]
    ZeroOrder,
    #[error("incomplete gamma argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("invalid search interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("objective returned a non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

const LN_FACT_TABLE: usize = 256;

fn ln_fact_table() -> &'static [f64; LN_FACT_TABLE] {
    static TABLE: OnceLock<[f64; LN_FACT_TABLE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; LN_FACT_TABLE];
        for n in 2..LN_FACT_TABLE {
            t[n] = t[n - 1] + (n as f64).ln();
        }
        t
    })
}

/// `ln(n!)`.
///
/// Tabulated for `n < 256`; Stirling's series beyond that, where the
/// truncation error of the four correction terms is far below `f64`
/// resolution.
pub fn log_factorial(n: u64) -> f64 {
    if (n as usize) < LN_FACT_TABLE {
        return ln_fact_table()[n as usize];
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + series
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn log_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

fn check_rate(lambda: f64) -> Result<(), NumericsError> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(NumericsError::InvalidRate(lambda))
    }
}

/// Poisson probability mass `λ^k e^{-λ} / k!`, evaluated in log space.
pub fn poisson_pmf(k: u64, lambda: f64) -> Result<f64, NumericsError> {
    check_rate(lambda)?;
    Ok(poisson_pmf_unchecked(k, lambda))
}

#[inline]
pub(crate) fn poisson_pmf_unchecked(k: u64, lambda: f64) -> f64 {
    if k == 0 {
        return (-lambda).exp();
    }
    (k as f64 * lambda.ln() - lambda - log_factorial(k)).exp()
}

/// `Pr{K <= k}` for `K ~ Poisson(λ)`.
pub fn poisson_cdf(k: u64, lambda: f64) -> Result<f64, NumericsError> {
    check_rate(lambda)?;
    let sum: f64 = (0..=k).map(|j| poisson_pmf_unchecked(j, lambda)).sum();
    Ok(sum.min(1.0))
}

/// Truncation point `⌈λ + 12√λ + 30⌉` for sums over a Poisson count.
pub fn poisson_truncation(lambda: f64) -> u64 {
    (lambda + 12.0 * lambda.sqrt() + 30.0).ceil() as u64
}

fn check_gamma_args(v: u32, x: f64) -> Result<(), NumericsError> {
    if v == 0 {
        return Err(NumericsError::ZeroOrder);
    }
    if x.is_nan() || x < 0.0 {
        return Err(NumericsError::NegativeArgument(x));
    }
    Ok(())
}

/// `Σ_{m >= start} e^{-x} x^m / m!` for `x < start + 1`, where the ratio of
/// consecutive terms is below one.
fn poisson_tail_series(start: u64, x: f64) -> f64 {
    let mut term = poisson_pmf_unchecked(start, x);
    let mut sum = term;
    let mut m = start;
    while term > sum * 1e-17 && m < start + 100_000 {
        m += 1;
        term *= x / m as f64;
        sum += term;
    }
    sum
}

/// Regularized lower incomplete gamma `γ(v, x) / (v-1)!` for integer `v >= 1`.
pub fn erlang_gamma_lower(v: u32, x: f64) -> Result<f64, NumericsError> {
    check_gamma_args(v, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < v as f64 {
        Ok(poisson_tail_series(v as u64, x).min(1.0))
    } else {
        Ok((1.0 - upper_sum(v, x)).clamp(0.0, 1.0))
    }
}

/// Regularized upper incomplete gamma `Γ(v, x) / (v-1)!` for integer `v >= 1`.
pub fn erlang_gamma_upper(v: u32, x: f64) -> Result<f64, NumericsError> {
    check_gamma_args(v, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < v as f64 {
        Ok((1.0 - poisson_tail_series(v as u64, x)).clamp(0.0, 1.0))
    } else {
        Ok(upper_sum(v, x).min(1.0))
    }
}

fn upper_sum(v: u32, x: f64) -> f64 {
    (0..v as u64).map(|m| poisson_pmf_unchecked(m, x)).sum()
}

/// Both regularized incomplete gammas for every order `1..=max_order` at a
/// fixed argument. Index `v - 1` holds order `v`.
///
/// Used by the per-K success probability sums, which need the whole ladder
/// of orders at once.
#[derive(Debug, Clone)]
pub struct ErlangLadder {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ErlangLadder {
    pub fn new(max_order: u32, x: f64) -> Result<Self, NumericsError> {
        if max_order == 0 {
            return Ok(Self {
                lower: Vec::new(),
                upper: Vec::new(),
            });
        }
        check_gamma_args(max_order, x)?;
        let n = max_order as usize;
        if x == 0.0 {
            return Ok(Self {
                lower: vec![0.0; n],
                upper: vec![1.0; n],
            });
        }
        let pmf: Vec<f64> = (0..n as u64).map(|m| poisson_pmf_unchecked(m, x)).collect();
        let mut upper = Vec::with_capacity(n);
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            upper.push(acc.min(1.0));
        }
        // lower(v) = Σ_{m >= v} pmf(m), built backwards from the tail past max_order.
        let mut tail = if x < n as f64 + 1.0 {
            poisson_tail_series(n as u64, x)
        } else {
            (1.0 - upper[n - 1]).max(0.0)
        };
        let mut lower = vec![0.0; n];
        for v in (1..=n).rev() {
            lower[v - 1] = tail.min(1.0);
            tail += pmf[v - 1];
        }
        Ok(Self { lower, upper })
    }
}

const GRID_POINTS: usize = 512;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes `f` on `[lo, hi]`: a uniform grid scan brackets the best point,
/// then golden-section search narrows the bracket to width `tol`.
///
/// The returned maximum is never below any grid sample.
pub fn maximize_1d<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64), NumericsError>
where
    F: FnMut(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(NumericsError::InvalidInterval { lo, hi });
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(NumericsError::InvalidTolerance(tol));
    }
    let mut eval = |x: f64| -> Result<f64, NumericsError> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::NonFinite { x })
        }
    };

    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid_x = |i: usize| if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 };
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..GRID_POINTS {
        let x = grid_x(i);
        let y = eval(x)?;
        if y > best.1 {
            best = (x, y);
            best_i = i;
        }
    }

    let mut a = grid_x(best_i.saturating_sub(1));
    let mut b = grid_x((best_i + 1).min(GRID_POINTS - 1));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    for (x, y) in [(c, fc), (d, fd)] {
        if y > best.1 {
            best = (x, y);
        }
    }
    Ok(best)
}

/// Seeded substream of random draws.
///
/// `(seed, stream_index)` selects a ChaCha8 keystream: the seed sets the key
/// and the index sets the 64-bit stream id, so distinct indices never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        Self {
            seed,
            stream_index,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits.
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unit-mean exponential draw.
    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }

    /// Poisson count with mean `lambda > 0`.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        let dist = Poisson::new(lambda).expect("Poisson rate validated by caller");
        dist.sample(&mut self.rng) as u64
    }

    /// Uniform index in `0..n`, `n >= 1`.
    pub fn index(&mut self, n: u32) -> u32 {
        debug_assert!(n > 0);
        // Lemire's widening multiply with rejection; unbiased.
        let n64 = n as u64;
        loop {
            let m = (self.rng.next_u32() as u64) * n64;
            let low = m as u32;
            if low >= n || low >= (n.wrapping_neg() % n) {
                return (m >> 32) as u32;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
