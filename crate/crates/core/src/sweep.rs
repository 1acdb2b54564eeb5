//! λ-maximization, collision-free limits and parameter sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{truncation_tail, AnalyticError, ThroughputCurve};
use crate::model::{db_to_linear, ParamError, Scheme, SeqCount, SystemParams};
use crate::numerics::{maximize_1d, NumericsError};
use crate::simulator::{estimate_throughput, SimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("maximum still at the upper λ bracket {hi} after widening")]
    BracketFailure { hi: f64 },
    #[error("no sign change of the throughput difference on [{lo}, {hi}]")]
    NoCrossing { lo: f64, hi: f64 },
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Location and value of the throughput peak over λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub lambda_star: f64,
    pub s_star: f64,
}

const LAMBDA_LO: f64 = 0.01;
const LAMBDA_TOL: f64 = 1e-4;

/// Upper λ bracket `4 (N/η + 10)`.
pub fn lambda_bracket(params: &SystemParams) -> f64 {
    4.0 * (params.processing_gain / params.eta_th + 10.0)
}

/// `max_λ S(λ)`, by grid scan and golden-section refinement.
pub fn max_throughput(params: &SystemParams, scheme: Scheme) -> Result<Peak, SweepError> {
    let params = params.validate()?;
    let mut hi = lambda_bracket(&params);
    for attempt in 0..2 {
        let curve = ThroughputCurve::new(&params, scheme, hi)?;
        let mut failure = None;
        let (x, y) = maximize_1d(
            |lam| match curve.eval(lam) {
                Ok(s) => s,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            LAMBDA_LO,
            hi,
            LAMBDA_TOL,
        )
        .map_err(|e| match failure.take() {
            Some(a) => SweepError::Analytic(a),
            None => SweepError::Numerics(e),
        })?;
        let at_edge = x >= hi - (hi - LAMBDA_LO) / 256.0;
        if !at_edge {
            return Ok(Peak {
                lambda_star: x,
                s_star: y,
            });
        }
        if attempt == 0 {
            hi *= 2.0;
        }
    }
    Err(SweepError::BracketFailure { hi })
}

/// Collision-free peak throughput (`n_seq → ∞`).
pub fn limit_throughput(params: &SystemParams, scheme: Scheme) -> Result<f64, SweepError> {
    Ok(max_throughput(&params.with_n_seq(SeqCount::Infinite), scheme)?.s_star)
}

/// Smallest power-of-two sequence count reaching a fraction of the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceRequirement {
    /// Smallest probed `n_seq` with `max S >= fraction · limit`, or the
    /// largest probed value when none qualifies.
    pub n_seq: u32,
    pub reached: bool,
    /// Bracketing pair `(n_seq / 2, n_seq)`; equal entries at the smallest probe.
    pub bracket: (u32, u32),
    /// Crossing interpolated linearly in `log2 n_seq` between the bracket ends.
    pub interpolated: f64,
    pub limit: f64,
}

pub const MIN_SEQ_EXP: u32 = 1;
pub const MAX_SEQ_EXP: u32 = 14;

/// Binary search over `n_seq ∈ {2^1, …, 2^14}` for the first count whose
/// peak throughput reaches `fraction` of the collision-free limit.
pub fn sequences_for_fraction(
    params: &SystemParams,
    scheme: Scheme,
    fraction: f64,
) -> Result<SequenceRequirement, SweepError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SweepError::InvalidSpec(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let limit = limit_throughput(params, scheme)?;
    let target = fraction * limit;
    let ratio_at = |e: u32| -> Result<f64, SweepError> {
        Ok(max_throughput(&params.with_n_seq(SeqCount::Finite(1 << e)), scheme)?.s_star / limit)
    };

    let (mut lo, mut hi) = (MIN_SEQ_EXP, MAX_SEQ_EXP);
    if ratio_at(hi)? * limit < target {
        let n = 1 << hi;
        return Ok(SequenceRequirement {
            n_seq: n,
            reached: false,
            bracket: (n, n),
            interpolated: f64::NAN,
            limit,
        });
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if ratio_at(mid)? * limit >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let n = 1u32 << lo;
    if lo == MIN_SEQ_EXP {
        return Ok(SequenceRequirement {
            n_seq: n,
            reached: true,
            bracket: (n, n),
            interpolated: n as f64,
            limit,
        });
    }
    let (r_lo, r_hi) = (ratio_at(lo - 1)?, ratio_at(lo)?);
    let t = if r_hi > r_lo {
        (fraction - r_lo) / (r_hi - r_lo)
    } else {
        1.0
    };
    let interpolated = 2f64.powf((lo - 1) as f64 + t.clamp(0.0, 1.0));
    Ok(SequenceRequirement {
        n_seq: n,
        reached: true,
        bracket: (n / 2, n),
        interpolated,
        limit,
    })
}

/// Root of `S_a(λ) - S_b(λ)` on `[lo, hi]` by bisection.
pub fn crossover_lambda(params: &SystemParams, a: Scheme, b: Scheme, lo: f64, hi: f64) -> Result<f64, SweepError> {
    let params = params.validate()?;
    let ca = ThroughputCurve::new(&params, a, hi)?;
    let cb = ThroughputCurve::new(&params, b, hi)?;
    let diff = |x: f64| -> Result<f64, SweepError> { Ok(ca.eval(x)? - cb.eval(x)?) };
    let (mut x0, mut x1) = (lo, hi);
    let (mut f0, f1) = (diff(x0)?, diff(x1)?);
    if f0 == 0.0 {
        return Ok(x0);
    }
    if f0.signum() == f1.signum() {
        return Err(SweepError::NoCrossing { lo, hi });
    }
    while x1 - x0 > 1e-10 {
        let m = 0.5 * (x0 + x1);
        let fm = diff(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == f0.signum() {
            x0 = m;
            f0 = fm;
        } else {
            x1 = m;
        }
    }
    Ok(0.5 * (x0 + x1))
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Arrival rate; rows carry `S(λ)`.
    Lambda,
    /// Outage probability; rows carry the λ-peak.
    Outage,
    /// Sequence count; rows carry the λ-peak.
    NSeq,
    /// SINR threshold in dB; rows carry the λ-peak.
    EtaDb,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::Outage => "outage",
            Axis::NSeq => "n_seq",
            Axis::EtaDb => "eta_db",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(Axis::Lambda),
            "outage" => Ok(Axis::Outage),
            "n_seq" | "nseq" => Ok(Axis::NSeq),
            "eta_db" | "eta-db" => Ok(Axis::EtaDb),
            _ => Err(format!("unknown axis `{s}` (expected lambda, outage, nseq or eta-db)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analytic,
    Simulated,
    Both,
}

impl Mode {
    fn analytic(self) -> bool {
        matches!(self, Mode::Analytic | Mode::Both)
    }

    fn simulated(self) -> bool {
        matches!(self, Mode::Simulated | Mode::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub schemes: Vec<Scheme>,
    pub axis: Axis,
    /// Strictly increasing.
    pub values: Vec<f64>,
    pub params: SystemParams,
    pub mode: Mode,
    pub sim: SimConfig,
}

impl SweepSpec {
    pub fn check(&self) -> Result<(), SweepError> {
        if self.schemes.is_empty() {
            return Err(SweepError::InvalidSpec("no schemes selected".into()));
        }
        if self.values.is_empty() {
            return Err(SweepError::InvalidSpec("no axis values".into()));
        }
        // An unbounded sequence pool is a legitimate n_seq value.
        let allowed = |v: &f64| v.is_finite() || (self.axis == Axis::NSeq && *v == f64::INFINITY);
        if !self.values.iter().all(allowed) {
            return Err(SweepError::InvalidSpec("axis values must be finite".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SweepError::InvalidSpec(
                "axis values must be strictly increasing".into(),
            ));
        }
        if self.mode.simulated() && self.sim.slots == 0 {
            return Err(SweepError::InvalidSpec("simulation needs at least one slot".into()));
        }
        self.params.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub axis_value: f64,
    /// Arrival rate of the row: the axis value on a λ axis, the peak
    /// location otherwise.
    pub lambda: Option<f64>,
    pub s_analytic: Option<f64>,
    pub s_simulated: Option<f64>,
    pub stderr: Option<f64>,
    /// `(S_sim - S_analytic) / stderr`, `Both` mode only.
    pub z: Option<f64>,
    pub seed: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub tool: String,
    pub version: String,
    pub axis: Axis,
    pub mode: Mode,
    pub params: SystemParams,
    pub seed: u64,
    pub slots: u64,
    /// Largest Poisson mass dropped by truncation over the rows' λ values.
    pub truncation_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub meta: SweepMeta,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows with a finite z-score.
    pub fn z_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter_map(|r| r.z)
    }
}

/// Per-row seed: SplitMix64 of `(base, row)`.
pub fn row_seed(base: u64, row: u64) -> u64 {
    let mut z = base ^ row.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn apply_axis(params: &SystemParams, axis: Axis, value: f64) -> Result<SystemParams, SweepError> {
    let p = match axis {
        Axis::Lambda => *params,
        Axis::Outage => params.with_outage(value),
        Axis::NSeq if value == f64::INFINITY => params.with_n_seq(SeqCount::Infinite),
        Axis::NSeq => {
            if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                return Err(SweepError::InvalidSpec(format!(
                    "n_seq must be a positive integer, got {value}"
                )));
            }
            params.with_n_seq(SeqCount::Finite(value as u32))
        }
        Axis::EtaDb => SystemParams {
            eta_th: db_to_linear(value),
            ..*params
        },
    };
    Ok(p.validate()?)
}

fn run_row(
    spec: &SweepSpec,
    scheme: Scheme,
    value: f64,
    seed: u64,
    curve: Option<&ThroughputCurve>,
) -> Result<SweepRow, SweepError> {
    let mut row = SweepRow {
        scheme,
        axis_value: value,
        lambda: None,
        s_analytic: None,
        s_simulated: None,
        stderr: None,
        z: None,
        seed: None,
        error: None,
    };
    let params = apply_axis(&spec.params, spec.axis, value)?;
    let lambda = match spec.axis {
        Axis::Lambda => {
            if spec.mode.analytic() {
                let s = match curve {
                    Some(c) => c.eval(value)?,
                    None => crate::analytic::throughput_sum(value, &params, scheme)?,
                };
                row.s_analytic = Some(s);
            }
            value
        }
        _ => {
            let peak = max_throughput(&params, scheme)?;
            if spec.mode.analytic() {
                row.s_analytic = Some(peak.s_star);
            }
            peak.lambda_star
        }
    };
    row.lambda = Some(lambda);
    if spec.mode.simulated() {
        let cfg = SimConfig {
            slots: spec.sim.slots,
            seed,
            threads: None,
        };
        let est = estimate_throughput(&params, scheme, lambda, &cfg);
        row.s_simulated = Some(est.mean);
        row.stderr = Some(est.stderr);
        row.seed = Some(seed);
        if let Some(a) = row.s_analytic {
            row.z = Some(est.z_score(a));
        }
    }
    Ok(row)
}

/// Runs every (axis value, scheme) cell. Cell failures are recorded in the
/// row and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    spec.check()?;
    let cells: Vec<(usize, f64, Scheme)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.schemes.iter().map(move |&s| (v, s)))
        .enumerate()
        .map(|(i, (v, s))| (i, v, s))
        .collect();

    let curves: Vec<Option<ThroughputCurve>> = if spec.axis == Axis::Lambda && spec.mode.analytic() {
        let top = spec.values.last().copied().unwrap_or(1.0);
        spec.schemes
            .iter()
            .map(|&s| ThroughputCurve::new(&spec.params, s, top).ok())
            .collect()
    } else {
        spec.schemes.iter().map(|_| None).collect()
    };
    let curve_for = |s: Scheme| {
        spec.schemes
            .iter()
            .position(|&x| x == s)
            .and_then(|i| curves[i].as_ref())
    };

    let work = |&(i, v, s): &(usize, f64, Scheme)| -> SweepRow {
        let seed = row_seed(spec.sim.seed, i as u64);
        run_row(spec, s, v, seed, curve_for(s)).unwrap_or_else(|e| SweepRow {
            scheme: s,
            axis_value: v,
            lambda: None,
            s_analytic: None,
            s_simulated: None,
            stderr: None,
            z: None,
            seed: None,
            error: Some(e.to_string()),
        })
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<SweepRow> = {
        use rayon::prelude::*;
        let go = || cells.par_iter().map(work).collect::<Vec<_>>();
        match spec.sim.threads {
            Some(n) if n > 1 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(go),
                Err(_) => cells.iter().map(work).collect(),
            },
            Some(_) => cells.iter().map(work).collect(),
            None => go(),
        }
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<SweepRow> = cells.iter().map(work).collect();

    let truncation_tail = rows
        .iter()
        .filter_map(|r| r.lambda)
        .map(truncation_tail)
        .fold(0.0, f64::max);
    Ok(SweepResult {
        meta: SweepMeta {
            tool: "cdmara".into(),
            version: crate::VERSION.into(),
            axis: spec.axis,
            mode: spec.mode,
            params: spec.params,
            seed: spec.sim.seed,
            slots: if spec.mode.simulated() { spec.sim.slots } else { 0 },
            truncation_tail,
        },
        rows,
    })
}

/// `start, start + step, …` up to `stop` inclusive (within 1e-9).
pub fn linspace_step(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if step.is_nan() || step <= 0.0 || stop < start {
        return vec![start];
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}
