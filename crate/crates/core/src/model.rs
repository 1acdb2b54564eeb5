//! System parameters, scheme selector and the shared unit conversions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of random access sequences; `Infinite` removes sequence collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqCount {
    Finite(u32),
    Infinite,
}

impl SeqCount {
    /// `1 - 1/n_seq`, the per-interferer probability of picking another sequence.
    pub fn distinct_prob(self) -> f64 {
        match self {
            SeqCount::Finite(n) => 1.0 - 1.0 / n as f64,
            SeqCount::Infinite => 1.0,
        }
    }
}

impl fmt::Display for SeqCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqCount::Finite(n) => write!(f, "{n}"),
            SeqCount::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for SeqCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinite" | "∞" => Ok(SeqCount::Infinite),
            t => t
                .parse::<u32>()
                .map(SeqCount::Finite)
                .map_err(|_| format!("expected a positive integer or `inf`, got `{s}`")),
        }
    }
}

/// Random access scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Constant transmit power, transmit on every trigger.
    #[serde(rename = "conv")]
    Conventional,
    /// Defer until the gain reaches `g_th`, then transmit at constant power.
    #[serde(rename = "const")]
    AdaptiveConstant,
    /// Defer until the gain reaches `g_th`, then invert the channel.
    #[serde(rename = "inv")]
    AdaptiveInversion,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [
        Scheme::Conventional,
        Scheme::AdaptiveConstant,
        Scheme::AdaptiveInversion,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Scheme::Conventional => "conv",
            Scheme::AdaptiveConstant => "const",
            Scheme::AdaptiveInversion => "inv",
        }
    }

    pub fn is_adaptive(self) -> bool {
        !matches!(self, Scheme::Conventional)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv" | "conventional" => Ok(Scheme::Conventional),
            "const" | "constant" | "adaptive-constant" => Ok(Scheme::AdaptiveConstant),
            "inv" | "inversion" | "adaptive-inversion" => Ok(Scheme::AdaptiveInversion),
            _ => Err(format!("unknown scheme `{s}` (expected conv, const or inv)")),
        }
    }
}

/// How the channel-inversion received power relates to the configured SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerNorm {
    /// `P_I T_p / N_0 = snr`: the constant received power sets the SNR.
    #[default]
    Received,
    /// `E[P_I / g | transmit] T_p / N_0 = snr`: the mean transmit power sets the SNR.
    AverageTx,
}

impl fmt::Display for PowerNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerNorm::Received => "received",
            PowerNorm::AverageTx => "average-tx",
        })
    }
}

impl FromStr for PowerNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "received" => Ok(PowerNorm::Received),
            "average-tx" => Ok(PowerNorm::AverageTx),
            _ => Err(format!(
                "unknown power normalization `{s}` (expected received or average-tx)"
            )),
        }
    }
}

/// Capture rule under channel inversion, where every packet arrives with the
/// same power and the SINR depends on `K` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionRule {
    /// Success iff `1 / (noise + (K-1)/N) > η_th`.
    #[default]
    Sinr,
    /// Success iff `K < ⌊1 + N (1/η_th - noise)⌋`. One packet stricter than
    /// `Sinr` whenever the bracket is not an integer.
    Floor,
}

impl fmt::Display for InversionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InversionRule::Sinr => "sinr",
            InversionRule::Floor => "floor",
        })
    }
}

impl FromStr for InversionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sinr" => Ok(InversionRule::Sinr),
            "floor" => Ok(InversionRule::Floor),
            _ => Err(format!("unknown inversion rule `{s}` (expected sinr or floor)")),
        }
    }
}

/// Physical and protocol constants of one scenario.
///
/// `eta_th` and `snr` are linear. The transmission threshold `g_th` is not
/// stored; it is always derived from `outage`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Total remote stations `M`; caps the arrival count.
    pub stations: u32,
    /// Processing gain `N`.
    pub processing_gain: f64,
    pub n_seq: SeqCount,
    /// Minimum SINR for capture.
    pub eta_th: f64,
    /// Average `P T_p / N_0`.
    pub snr: f64,
    /// `Pr{g < g_th}` for a fresh Rayleigh draw.
    pub outage: f64,
    #[serde(default)]
    pub power_norm: PowerNorm,
    #[serde(default)]
    pub inversion_rule: InversionRule,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl SystemParams {
    /// Reference scenario: 8192 stations, N = 64, 128 sequences, η = 5 dB,
    /// 30 dB SNR, outage 0.7.
    pub fn reference() -> Self {
        Self {
            stations: 8192,
            processing_gain: 64.0,
            n_seq: SeqCount::Finite(128),
            eta_th: db_to_linear(5.0),
            snr: db_to_linear(30.0),
            outage: 0.7,
            power_norm: PowerNorm::Received,
            inversion_rule: InversionRule::Sinr,
        }
    }

    /// Transmission threshold `-ln(1 - P_o)`.
    ///
    /// Only meaningful on validated parameters (`outage < 1`).
    pub fn g_th(&self) -> f64 {
        -(-self.outage).ln_1p()
    }

    pub fn with_outage(mut self, outage: f64) -> Self {
        self.outage = outage;
        self
    }

    pub fn with_n_seq(mut self, n_seq: SeqCount) -> Self {
        self.n_seq = n_seq;
        self
    }

    pub fn with_eta_db(mut self, eta_db: f64) -> Self {
        self.eta_th = db_to_linear(eta_db);
        self
    }

    /// Checks every invariant and returns the parameters unchanged, or the
    /// full list of violations.
    pub fn validate(self) -> Result<SystemParams, ParamError> {
        let mut v = Vec::new();
        if self.stations == 0 {
            v.push(Violation::new("stations", "must be at least 1"));
        }
        if !(self.processing_gain.is_finite() && self.processing_gain >= 1.0) {
            v.push(Violation::new(
                "processing_gain",
                format!("must be a finite value >= 1, got {}", self.processing_gain),
            ));
        }
        if self.n_seq == SeqCount::Finite(0) {
            v.push(Violation::new("n_seq", "must be at least 1"));
        }
        if !(self.eta_th.is_finite() && self.eta_th > 0.0) {
            v.push(Violation::new(
                "eta_th",
                format!("must be positive and finite, got {}", self.eta_th),
            ));
        }
        if self.snr.is_nan() || self.snr <= 0.0 {
            v.push(Violation::new("snr", format!("must be positive, got {}", self.snr)));
        }
        if !(0.0..1.0).contains(&self.outage) {
            v.push(Violation::new(
                "outage",
                format!("must lie in [0, 1), got {}", self.outage),
            ));
        } else if self.power_norm == PowerNorm::AverageTx && self.outage == 0.0 {
            v.push(Violation::new(
                "power_norm",
                "average-tx normalization needs outage > 0 (E[1/g] diverges without a gain threshold)",
            ));
        }
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ParamError { violations: v })
        }
    }
}

/// One violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid parameters: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ParamError {
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("outage probability must lie in [0, 1), got {0}")]
pub struct OutageError(pub f64);

/// `-ln(1 - p_o)`: the gain threshold leaving a fraction `p_o` of Rayleigh
/// draws below it.
pub fn gth_from_outage(p_o: f64) -> Result<f64, OutageError> {
    if (0.0..1.0).contains(&p_o) {
        Ok(-(-p_o).ln_1p())
    } else {
        Err(OutageError(p_o))
    }
}

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `N_0 / (P T_p)` for the scheme's power allocation: the additive noise
/// term in the SINR denominator, relative to the desired-signal power unit.
pub fn noise_term(params: &SystemParams, scheme: Scheme) -> f64 {
    let base = 1.0 / params.snr;
    match (scheme, params.power_norm) {
        (Scheme::AdaptiveInversion, PowerNorm::AverageTx) => base * mean_inverse_gain(params.g_th()),
        _ => base,
    }
}

/// `E[1/g]` under the truncated gain law: Exp(1) above `g_th` plus an atom of
/// mass `1 - e^{-g_th}` at `g_th`.
fn mean_inverse_gain(g_th: f64) -> f64 {
    if g_th <= 0.0 {
        return f64::INFINITY;
    }
    -(-g_th).exp_m1() / g_th + exp_integral_e1(g_th)
}

/// Exponential integral `E1(x) = ∫_x^∞ e^{-t}/t dt`, `x > 0`.
fn exp_integral_e1(x: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Source of a throughput value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Analytic,
    Simulated,
}

/// Throughput at one arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub lambda: f64,
    pub value: f64,
    pub source: Source,
    /// Zero for analytic values.
    pub stderr: f64,
}

impl ThroughputPoint {
    pub fn analytic(lambda: f64, value: f64) -> Self {
        Self {
            lambda,
            value,
            source: Source::Analytic,
            stderr: 0.0,
        }
    }

    pub fn simulated(lambda: f64, value: f64, stderr: f64) -> Self {
        Self {
            lambda,
            value,
            source: Source::Simulated,
            stderr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_is_valid() {
        let p = SystemParams::reference();
        let v = p.validate().unwrap();
        assert_eq!(v.stations, 8192);
        assert_eq!(v.processing_gain, 64.0);
        assert_eq!(v.n_seq, SeqCount::Finite(128));
        assert!((v.eta_th - 3.16228).abs() < 1e-5);
        assert!((v.snr - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn validate_lists_every_violation() {
        let p = SystemParams {
            n_seq: SeqCount::Finite(0),
            outage: 1.0,
            eta_th: -1.0,
            processing_gain: 0.5,
            ..SystemParams::reference()
        };
        let err = p.validate().unwrap_err();
        let fields: Vec<_> = err.violations.iter().map(|v| v.field).collect();
        assert_eq!(fields, ["processing_gain", "n_seq", "eta_th", "outage"]);
        assert!(SystemParams::reference().with_outage(1.0).validate().is_err());
        assert!(SystemParams::reference()
            .with_n_seq(SeqCount::Finite(0))
            .validate()
            .is_err());
    }

    #[test]
    fn average_tx_needs_threshold() {
        let p = SystemParams {
            power_norm: PowerNorm::AverageTx,
            outage: 0.0,
            ..SystemParams::reference()
        };
        assert_eq!(p.validate().unwrap_err().violations[0].field, "power_norm");
    }

    #[test]
    fn gth_examples() {
        assert_eq!(gth_from_outage(0.0).unwrap(), 0.0);
        assert!((gth_from_outage(1.0 - (-1f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        assert!((gth_from_outage(0.7).unwrap() - 1.203_972_804_325_936).abs() < 1e-12);
        assert!(gth_from_outage(1.0).is_err());
        assert!(gth_from_outage(-0.1).is_err());
    }

    #[test]
    fn db_examples() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(30.0) - 1000.0).abs() < 1e-9);
        assert!((db_to_linear(5.0) - 10f64.sqrt()).abs() < 1e-15);
        assert!((linear_to_db(1000.0) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn noise_term_examples() {
        let p = SystemParams::reference();
        for s in Scheme::ALL {
            assert!((noise_term(&p, s) - 0.001).abs() < 1e-15);
        }
        let p = SystemParams {
            snr: f64::INFINITY,
            ..p
        };
        assert_eq!(noise_term(&p, Scheme::AdaptiveConstant), 0.0);
        let p = SystemParams { snr: 1.0, ..p };
        assert_eq!(noise_term(&p, Scheme::Conventional), 1.0);
    }

    #[test]
    fn exp_integral_reference_values() {
        // Abramowitz & Stegun table 5.1.
        assert!((exp_integral_e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-13);
        assert!((exp_integral_e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-13);
        assert!((exp_integral_e1(2.0) - 0.048_900_510_708_061_12).abs() < 1e-13);
    }

    #[test]
    fn average_tx_inversion_noise() {
        let p = SystemParams {
            power_norm: PowerNorm::AverageTx,
            ..SystemParams::reference()
        };
        let g = p.g_th();
        // Midpoint quadrature of E[1/g | g >= g_th] on the exponential tail.
        let h = 1e-4;
        let mut tail = 0.0;
        let mut t = g + 0.5 * h;
        while t < g + 60.0 {
            tail += (-t).exp() / t * h;
            t += h;
        }
        let want = ((1.0 - (-g).exp()) / g + tail) / p.snr;
        assert!((noise_term(&p, Scheme::AdaptiveInversion) - want).abs() < 1e-8);
        assert_eq!(noise_term(&p, Scheme::Conventional), 0.001);
    }

    #[test]
    fn parse_display_round_trips() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        for n in [SeqCount::Finite(1), SeqCount::Finite(16384), SeqCount::Infinite] {
            assert_eq!(n.to_string().parse::<SeqCount>().unwrap(), n);
        }
        assert!("0x".parse::<SeqCount>().is_err());
    }

    proptest! {
        #[test]
        fn gth_inverts_outage(p in 0.0f64..0.999) {
            let g = gth_from_outage(p).unwrap();
            prop_assert!((-(-g).exp_m1() - p).abs() < 1e-12);
        }

        #[test]
        fn validate_is_idempotent(outage in -0.5f64..1.5, eta in -1.0f64..20.0, n in 0u32..300, gain in 0.0f64..200.0) {
            let p = SystemParams { outage, eta_th: eta, n_seq: SeqCount::Finite(n), processing_gain: gain, ..SystemParams::reference() };
            match p.validate() {
                Ok(v) => prop_assert_eq!(v.validate(), Ok(v)),
                Err(e) => prop_assert!(!e.violations.is_empty()),
            }
        }
    }
}
