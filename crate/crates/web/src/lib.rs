//! WebAssembly bindings for the browser demo.
//!
//! Each export returns a JSON string shaped as [`Chart`]; the page plots it
//! on a canvas. The plain Rust functions behind the exports are public so
//! they can be tested natively.

use cdmara::analytic::{AnalyticError, ThroughputCurve};
use cdmara::model::ParamError;
use cdmara::sweep::{limit_throughput, linspace_step, max_throughput, SweepError};
use cdmara::{Scheme, SeqCount, SystemParams};
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("{0}")]
    Input(String),
}

/// One line per scheme over a shared x axis.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Chart {
    pub x_label: String,
    pub x: Vec<f64>,
    pub series: Vec<Series>,
    /// Horizontal reference lines, e.g. collision-free limits.
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Series {
    pub scheme: &'static str,
    pub y: Vec<f64>,
    pub peak_x: f64,
    pub peak_y: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Mark {
    pub scheme: &'static str,
    pub y: f64,
}

/// `n_seq == 0` selects an unbounded sequence pool.
fn params(eta_db: f64, outage: f64, n_seq: u32) -> Result<SystemParams, DemoError> {
    let n_seq = if n_seq == 0 {
        SeqCount::Infinite
    } else {
        SeqCount::Finite(n_seq)
    };
    Ok(SystemParams::reference()
        .with_eta_db(eta_db)
        .with_outage(outage)
        .with_n_seq(n_seq)
        .validate()?)
}

fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, DemoError> {
    if !(step > 0.0 && lo <= hi && (hi - lo) / step <= 10_000.0) {
        return Err(DemoError::Input(format!("bad grid {lo}..{hi} step {step}")));
    }
    Ok(linspace_step(lo, hi, step))
}

fn series_peak(scheme: Scheme, x: &[f64], y: Vec<f64>) -> Series {
    let (i, _) = y
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    Series {
        scheme: scheme.short_name(),
        peak_x: x[i],
        peak_y: y[i],
        y,
    }
}

/// Throughput of every scheme against the arrival rate.
pub fn curves(eta_db: f64, outage: f64, n_seq: u32, lambda_max: f64, step: f64) -> Result<Chart, DemoError> {
    let p = params(eta_db, outage, n_seq)?;
    let x = grid(step, lambda_max, step)?;
    let series = Scheme::ALL
        .iter()
        .map(|&s| {
            let curve = ThroughputCurve::new(&p, s, lambda_max)?;
            let y = x.iter().map(|&l| curve.eval(l)).collect::<Result<Vec<_>, _>>()?;
            let peak = max_throughput(&p, s)?;
            Ok(Series {
                scheme: s.short_name(),
                y,
                peak_x: peak.lambda_star,
                peak_y: peak.s_star,
            })
        })
        .collect::<Result<_, DemoError>>()?;
    Ok(Chart {
        x_label: "arrival rate λ".into(),
        x,
        series,
        marks: Vec::new(),
    })
}

/// Maximum throughput over λ as the outage probability varies.
pub fn maxima_vs_outage(eta_db: f64, n_seq: u32, step: f64) -> Result<Chart, DemoError> {
    let x = grid(0.0, 0.99, step)?;
    let series = Scheme::ALL
        .iter()
        .map(|&s| {
            let y = x
                .iter()
                .map(|&o| Ok(max_throughput(&params(eta_db, o, n_seq)?, s)?.s_star))
                .collect::<Result<Vec<_>, DemoError>>()?;
            Ok(series_peak(s, &x, y))
        })
        .collect::<Result<_, DemoError>>()?;
    Ok(Chart {
        x_label: "outage probability".into(),
        x,
        series,
        marks: Vec::new(),
    })
}

/// Maximum throughput over λ for 2¹ … 2¹⁴ sequences, with the
/// collision-free limits as marks.
pub fn maxima_vs_sequences(eta_db: f64, outage: f64) -> Result<Chart, DemoError> {
    let counts: Vec<u32> = (1..=14).map(|e| 1u32 << e).collect();
    let x: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let mut series = Vec::new();
    let mut marks = Vec::new();
    for s in Scheme::ALL {
        let y = counts
            .iter()
            .map(|&n| Ok(max_throughput(&params(eta_db, outage, n)?, s)?.s_star))
            .collect::<Result<Vec<_>, DemoError>>()?;
        series.push(series_peak(s, &x, y));
        marks.push(Mark {
            scheme: s.short_name(),
            y: limit_throughput(&params(eta_db, outage, 0)?, s)?,
        });
    }
    Ok(Chart {
        x_label: "number of sequences".into(),
        x,
        series,
        marks,
    })
}

fn to_js(chart: Result<Chart, DemoError>) -> Result<String, JsError> {
    let chart = chart.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&chart).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = throughputCurves)]
pub fn throughput_curves_js(
    eta_db: f64,
    outage: f64,
    n_seq: u32,
    lambda_max: f64,
    step: f64,
) -> Result<String, JsError> {
    to_js(curves(eta_db, outage, n_seq, lambda_max, step))
}

#[wasm_bindgen(js_name = maximaVsOutage)]
pub fn maxima_vs_outage_js(eta_db: f64, n_seq: u32, step: f64) -> Result<String, JsError> {
    to_js(maxima_vs_outage(eta_db, n_seq, step))
}

#[wasm_bindgen(js_name = maximaVsSequences)]
pub fn maxima_vs_sequences_js(eta_db: f64, outage: f64) -> Result<String, JsError> {
    to_js(maxima_vs_sequences(eta_db, outage))
}
