//! Seeded Monte Carlo slot simulator.
//!
//! Each slot draws a Poisson number of transmitters, a sequence and a channel
//! gain for each, then applies the capture rule directly to the sampled
//! received powers. Interference is the `1/N`-scaled sum of the other
//! received powers, the same level of abstraction as the closed forms.
//!
//! Work is cut into fixed batches of [`BATCH_SIZE`] slots; batch `b` draws
//! from `RngStream(seed, b)`. Per-batch tallies are integer sums, so the
//! estimate does not depend on how batches are scheduled across threads.

use serde::{Deserialize, Serialize};

use crate::model::{noise_term, Scheme, SeqCount, SystemParams};
use crate::numerics::RngStream;

pub const BATCH_SIZE: u64 = 1024;

/// Tallies for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub k: u32,
    pub successes: u32,
    /// Packets sharing their sequence with another packet.
    pub collided: u32,
    /// Packets on a unique sequence whose SINR did not clear the threshold.
    pub capture_failed: u32,
}

/// Sample mean of a per-slot (or per-trial) count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(slots)`; zero when `slots == 1`.
    pub stderr: f64,
    pub slots: u64,
    pub seed: u64,
}

impl SimEstimate {
    /// `(mean - reference) / stderr`. Zero when both the difference and the
    /// standard error vanish; infinite when only the standard error does.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.mean - reference;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d.abs() <= 1e-12 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }

    /// Score statistic for a Bernoulli mean against hypothesized success
    /// probability `p0`, using the null variance `p0 (1 - p0) / n`. Stays
    /// finite when every trial agrees but `p0` is merely close to 0 or 1.
    pub fn z_score_bernoulli(&self, p0: f64) -> f64 {
        let var = p0 * (1.0 - p0) / self.slots as f64;
        if var > 0.0 {
            (self.mean - p0) / var.sqrt()
        } else {
            self.z_score(p0)
        }
    }
}

/// Slot count, base seed and worker count for an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub slots: u64,
    pub seed: u64,
    /// `None` runs on the ambient thread pool; `Some(n)` on a dedicated
    /// pool of `n` workers. Never affects results.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(slots: u64, seed: u64) -> Self {
        Self {
            slots,
            seed,
            threads: None,
        }
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::new(100_000, 42)
    }
}

/// Small-scale power gain seen by a transmitting station.
///
/// Adaptive stations wait for `g >= g_th`; a station that triggered below the
/// threshold transmits when the gain first reaches it, which puts an atom of
/// mass `1 - e^{-g_th}` exactly at `g_th`.
pub fn sample_gain(rng: &mut RngStream, scheme: Scheme, g_th: f64) -> f64 {
    let u = rng.exp1();
    if scheme.is_adaptive() {
        u.max(g_th)
    } else {
        u
    }
}

#[derive(Default)]
struct Scratch {
    seq: Vec<u32>,
    sorted: Vec<u32>,
    power: Vec<f64>,
}

struct SlotModel {
    scheme: Scheme,
    n_seq: SeqCount,
    g_th: f64,
    noise: f64,
    eta: f64,
    inv_n: f64,
}

impl SlotModel {
    fn new(params: &SystemParams, scheme: Scheme) -> Self {
        Self {
            scheme,
            n_seq: params.n_seq,
            g_th: params.g_th(),
            noise: noise_term(params, scheme),
            eta: params.eta_th,
            inv_n: 1.0 / params.processing_gain,
        }
    }

    fn draw_powers(&self, rng: &mut RngStream, k: usize, power: &mut Vec<f64>) {
        power.clear();
        match self.scheme {
            Scheme::AdaptiveInversion => power.resize(k, 1.0),
            s => power.extend((0..k).map(|_| sample_gain(rng, s, self.g_th))),
        }
    }

    fn captured(&self, own: f64, total: f64) -> bool {
        own / (self.noise + (total - own) * self.inv_n) > self.eta
    }

    fn run(&self, rng: &mut RngStream, k: u32, scratch: &mut Scratch) -> SlotOutcome {
        let ku = k as usize;
        scratch.seq.clear();
        if let SeqCount::Finite(n) = self.n_seq {
            scratch.seq.extend((0..ku).map(|_| rng.index(n)));
            scratch.sorted.clear();
            scratch.sorted.extend_from_slice(&scratch.seq);
            scratch.sorted.sort_unstable();
        }
        self.draw_powers(rng, ku, &mut scratch.power);
        let total: f64 = scratch.power.iter().sum();

        let mut out = SlotOutcome {
            k,
            ..SlotOutcome::default()
        };
        for i in 0..ku {
            let unique = match self.n_seq {
                SeqCount::Infinite => true,
                SeqCount::Finite(_) => {
                    let s = scratch.seq[i];
                    let lo = scratch.sorted.partition_point(|&x| x < s);
                    lo + 1 == ku || scratch.sorted[lo + 1] != s
                }
            };
            if !unique {
                out.collided += 1;
            } else if self.captured(scratch.power[i], total) {
                out.successes += 1;
            } else {
                out.capture_failed += 1;
            }
        }
        out
    }
}

fn draw_arrivals(rng: &mut RngStream, lambda: f64, stations: u32) -> u32 {
    loop {
        let k = rng.poisson(lambda);
        if k <= stations as u64 {
            return k as u32;
        }
    }
}

/// One random access slot at arrival rate `lambda`.
pub fn simulate_slot(rng: &mut RngStream, params: &SystemParams, scheme: Scheme, lambda: f64) -> SlotOutcome {
    let model = SlotModel::new(params, scheme);
    let k = draw_arrivals(rng, lambda, params.stations);
    model.run(rng, k, &mut Scratch::default())
}

/// One slot with exactly `k` transmitters.
pub fn simulate_slot_with_k(rng: &mut RngStream, params: &SystemParams, scheme: Scheme, k: u32) -> SlotOutcome {
    SlotModel::new(params, scheme).run(rng, k, &mut Scratch::default())
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    sum: u64,
    sum_sq: u64,
}

impl Moments {
    fn push(&mut self, x: u64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            count: self.count + o.count,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }

    fn estimate(self, seed: u64) -> SimEstimate {
        let n = self.count as f64;
        let mean = self.sum as f64 / n;
        let stderr = if self.count > 1 {
            let ss = self.sum_sq as f64 - self.sum as f64 * mean;
            (ss.max(0.0) / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        SimEstimate {
            mean,
            stderr,
            slots: self.count,
            seed,
        }
    }
}

fn run_batches<F>(total: u64, threads: Option<usize>, batch: F) -> Moments
where
    F: Fn(u64, u64) -> Moments + Sync + Send,
{
    let n_batches = total.div_ceil(BATCH_SIZE);
    let size = |b: u64| BATCH_SIZE.min(total - b * BATCH_SIZE);

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let work = || {
            (0..n_batches)
                .into_par_iter()
                .map(|b| batch(b, size(b)))
                .reduce(Moments::default, Moments::merge)
        };
        match threads {
            Some(1) => {}
            Some(n) => {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    return pool.install(work);
                }
            }
            None => return work(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;

    (0..n_batches)
        .map(|b| batch(b, size(b)))
        .fold(Moments::default(), Moments::merge)
}

/// Mean successes per slot at arrival rate `lambda` over `config.slots` slots.
pub fn estimate_throughput(params: &SystemParams, scheme: Scheme, lambda: f64, config: &SimConfig) -> SimEstimate {
    assert!(config.slots >= 1, "at least one slot is required");
    let model = SlotModel::new(params, scheme);
    let stations = params.stations;
    let m = run_batches(config.slots, config.threads, |b, n| {
        let mut rng = RngStream::new(config.seed, b);
        let mut scratch = Scratch::default();
        let mut acc = Moments::default();
        for _ in 0..n {
            let k = draw_arrivals(&mut rng, lambda, stations);
            acc.push(model.run(&mut rng, k, &mut scratch).successes as u64);
        }
        acc
    });
    m.estimate(config.seed)
}

/// Capture rate of one tagged packet among exactly `k` transmitters on
/// distinct sequences; `config.slots` is the trial count.
pub fn estimate_ps_given_k(params: &SystemParams, scheme: Scheme, k: u32, config: &SimConfig) -> SimEstimate {
    assert!(k >= 1, "k must be at least 1");
    assert!(config.slots >= 1, "at least one trial is required");
    let model = SlotModel::new(params, scheme);
    let ku = k as usize;
    let m = run_batches(config.slots, config.threads, |b, n| {
        let mut rng = RngStream::new(config.seed, b);
        let mut power = Vec::with_capacity(ku);
        let mut acc = Moments::default();
        for _ in 0..n {
            model.draw_powers(&mut rng, ku, &mut power);
            let total: f64 = power.iter().sum();
            acc.push(model.captured(power[0], total) as u64);
        }
        acc
    });
    m.estimate(config.seed)
}
