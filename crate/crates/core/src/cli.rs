//! Command-line front end.
//!
//! Subcommands print one table each (CSV or JSON) to stdout or a file; all
//! diagnostics go to stderr. Exit codes: 0 success, 1 statistical or runtime
//! failure, 2 usage or parameter error.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analytic::{inversion_capacity, success_prob, throughput_sum};
use crate::model::{db_to_linear, linear_to_db, noise_term, InversionRule, PowerNorm, Scheme, SeqCount, SystemParams};
use crate::simulator::{estimate_ps_given_k, estimate_throughput, SimConfig};
use crate::sweep::{
    crossover_lambda, limit_throughput, linspace_step, max_throughput, run_sweep, sequences_for_fraction, Axis, Mode,
    SweepResult, SweepSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Fully resolved command line.
#[derive(Parser, Debug, Clone, PartialEq)]
#[command(
    name = "cdmara",
    version,
    about = "Throughput of CDM-based random access with SINR capture"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Closed-form throughput over a λ grid.
    Analytic(AnalyticArgs),
    /// Monte Carlo throughput over a λ grid.
    Simulate(SimulateArgs),
    /// Sweep one parameter, maximizing over λ unless the axis is λ.
    Sweep(SweepArgs),
    /// Regenerate every figure table plus a summary of headline values.
    Figures(FiguresArgs),
    /// Compare closed forms against the simulator and gate on |z| < 4.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct ParamArgs {
    /// `all`, or a comma-separated subset of conv, const, inv.
    #[arg(long, default_value = "all")]
    pub scheme: SchemeSet,
    /// SINR threshold in dB.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub eta_db: f64,
    /// Average P T_p / N_0 in dB.
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    /// Outage probability defining the transmission threshold.
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    pub outage: f64,
    /// Number of sequences, or `inf`.
    #[arg(long, default_value = "128")]
    pub nseq: SeqCount,
    /// Number of remote stations.
    #[arg(long, default_value_t = 8192)]
    pub m: u32,
    /// Processing gain.
    #[arg(long, default_value_t = 64.0)]
    pub n: f64,
    #[arg(long, default_value = "received")]
    pub power_norm: PowerNorm,
    /// Capture rule for channel inversion.
    #[arg(long, default_value = "sinr")]
    pub inv_rule: InversionRule,
}

impl Default for ParamArgs {
    fn default() -> Self {
        Self {
            scheme: SchemeSet::all(),
            eta_db: 5.0,
            snr_db: 30.0,
            outage: 0.7,
            nseq: SeqCount::Finite(128),
            m: 8192,
            n: 64.0,
            power_norm: PowerNorm::Received,
            inv_rule: InversionRule::Sinr,
        }
    }
}

impl ParamArgs {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            stations: self.m,
            processing_gain: self.n,
            n_seq: self.nseq,
            eta_th: db_to_linear(self.eta_db),
            snr: db_to_linear(self.snr_db),
            outage: self.outage,
            power_norm: self.power_norm,
            inversion_rule: self.inv_rule,
        }
    }

    fn render(&self, out: &mut Vec<String>) {
        push(out, "--scheme", &self.scheme);
        push(out, "--eta-db", self.eta_db);
        push(out, "--snr-db", self.snr_db);
        push(out, "--outage", self.outage);
        push(out, "--nseq", self.nseq);
        push(out, "--m", self.m);
        push(out, "--n", self.n);
        push(out, "--power-norm", self.power_norm);
        push(out, "--inv-rule", self.inv_rule);
    }
}

#[derive(Args, Debug, Clone, PartialEq, Default)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl OutputArgs {
    fn render(&self, out: &mut Vec<String>) {
        push(out, "--format", self.format.name());
        if let Some(p) = &self.output {
            push(out, "--output", p.display());
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    pub slots: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Default for SimArgs {
    fn default() -> Self {
        Self {
            slots: 100_000,
            seed: 42,
            threads: None,
        }
    }
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig::new(self.slots, self.seed).with_threads(self.threads)
    }

    fn render(&self, out: &mut Vec<String>) {
        push(out, "--slots", self.slots);
        push(out, "--seed", self.seed);
        if let Some(t) = self.threads {
            push(out, "--threads", t);
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct AnalyticArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// `start:stop:step` (inclusive), a single value, or a comma list.
    #[arg(long, default_value = "0.25:40:0.25")]
    pub lambda: Grid,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value = "0.25:40:0.25")]
    pub lambda: Grid,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct SweepArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// lambda, outage, nseq or eta-db.
    #[arg(long)]
    pub axis: Axis,
    #[arg(long)]
    pub values: Grid,
    #[arg(long, value_enum, default_value_t = ModeArg::Analytic)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct FiguresArgs {
    /// Directory receiving fig3.csv … fig9.csv and summary.json.
    #[arg(long, default_value = "figures")]
    pub out: PathBuf,
    /// Skip simulation columns.
    #[arg(long)]
    pub analytic_only: bool,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Probe a single packet count instead of the default K grid.
    #[arg(long)]
    pub k: Option<u32>,
    /// Trials per success-probability cell.
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: u64,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Multiplies the analytic noise term (sensitivity check of the gate).
    #[arg(long, hide = true)]
    pub noise_scale: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Analytic,
    Simulated,
    Both,
}

impl ModeArg {
    fn mode(self) -> Mode {
        match self {
            ModeArg::Analytic => Mode::Analytic,
            ModeArg::Simulated => Mode::Simulated,
            ModeArg::Both => Mode::Both,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModeArg::Analytic => "analytic",
            ModeArg::Simulated => "simulated",
            ModeArg::Both => "both",
        }
    }
}

/// Ordered, de-duplicated scheme selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemeSet(pub Vec<Scheme>);

impl SchemeSet {
    pub fn all() -> Self {
        SchemeSet(Scheme::ALL.to_vec())
    }
}

impl FromStr for SchemeSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let mut v = s.split(',').map(str::parse).collect::<Result<Vec<Scheme>, _>>()?;
        v.sort();
        v.dedup();
        Ok(SchemeSet(v))
    }
}

impl fmt::Display for SchemeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == Scheme::ALL {
            return f.write_str("all");
        }
        let names: Vec<_> = self.0.iter().map(|s| s.short_name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Axis values: `start:stop:step` (both ends inclusive within 1e-9), a
/// single number, or a comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Range { start: f64, stop: f64, step: f64 },
    List(Vec<f64>),
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Range { start, stop, step } => linspace_step(*start, *stop, *step),
            Grid::List(v) => v.clone(),
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.len() {
            3 => {
                let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
                if !(step > 0.0 && step.is_finite()) {
                    return Err(format!("step must be positive, got {step}"));
                }
                if !(start.is_finite() && stop.is_finite() && start <= stop) {
                    return Err(format!("range start {start} must not exceed stop {stop}"));
                }
                Ok(Grid::Range { start, stop, step })
            }
            1 => Ok(Grid::List(s.split(',').map(num).collect::<Result<_, _>>()?)),
            _ => Err(format!("expected start:stop:step or a comma list, got `{s}`")),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grid::Range { start, stop, step } => write!(f, "{start}:{stop}:{step}"),
            Grid::List(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&s.join(","))
            }
        }
    }
}

fn push(out: &mut Vec<String>, flag: &str, value: impl fmt::Display) {
    out.push(flag.to_string());
    out.push(value.to_string());
}

impl RunConfig {
    /// Renders the configuration back to an argument vector (without the
    /// program name) that parses to an equal `RunConfig`.
    pub fn to_args(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.command {
            Command::Analytic(a) => {
                out.push("analytic".into());
                a.params.render(&mut out);
                push(&mut out, "--lambda", &a.lambda);
                a.output.render(&mut out);
            }
            Command::Simulate(a) => {
                out.push("simulate".into());
                a.params.render(&mut out);
                push(&mut out, "--lambda", &a.lambda);
                a.sim.render(&mut out);
                a.output.render(&mut out);
            }
            Command::Sweep(a) => {
                out.push("sweep".into());
                a.params.render(&mut out);
                push(&mut out, "--axis", a.axis.name());
                push(&mut out, "--values", &a.values);
                push(&mut out, "--mode", a.mode.name());
                a.sim.render(&mut out);
                a.output.render(&mut out);
            }
            Command::Figures(a) => {
                out.push("figures".into());
                push(&mut out, "--out", a.out.display());
                if a.analytic_only {
                    out.push("--analytic-only".into());
                }
                a.sim.render(&mut out);
            }
            Command::Validate(a) => {
                out.push("validate".into());
                a.params.render(&mut out);
                if let Some(k) = a.k {
                    push(&mut out, "--k", k);
                }
                push(&mut out, "--trials", a.trials);
                a.sim.render(&mut out);
                if let Some(s) = a.noise_scale {
                    push(&mut out, "--noise-scale", s);
                }
                a.output.render(&mut out);
            }
        }
        out
    }

    fn command_name(&self) -> &'static str {
        match self.command {
            Command::Analytic(_) => "analytic",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Figures(_) => "figures",
            Command::Validate(_) => "validate",
        }
    }
}

/// One output value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn opt(v: Option<f64>) -> Cell {
        v.map_or(Cell::Empty, Cell::Num)
    }

    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => x.to_string(),
            Cell::Int(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            // Non-finite z-scores have no JSON number form.
            Cell::Num(x) if x.is_finite() => json!(x),
            Cell::Num(x) => json!(x.to_string()),
            Cell::Int(x) => json!(x),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

/// Column-ordered table plus the provenance block written with it.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub meta: Value,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# tool: cdmara {}\n", crate::VERSION));
        if let Some(cfg) = self.meta.get("config").and_then(Value::as_str) {
            out.push_str(&format!("# config: {cfg}\n"));
        }
        if let Some(seed) = self.meta.get("seed") {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv)).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv"));
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj = self
                    .columns
                    .iter()
                    .zip(r)
                    .map(|(c, v)| (c.to_string(), v.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let doc = json!({ "meta": self.meta, "columns": self.columns, "rows": rows });
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable table");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

fn meta_for(cfg: &RunConfig, params: Option<&SystemParams>, seed: u64, slots: Option<u64>) -> Value {
    let mut m = json!({
        "tool": "cdmara",
        "version": crate::VERSION,
        "command": cfg.command_name(),
        "config": cfg.to_args().join(" "),
        "seed": seed,
    });
    if let Some(p) = params {
        m["params"] = params_json(p);
    }
    if let Some(s) = slots {
        m["slots"] = json!(s);
    }
    m
}

fn params_json(p: &SystemParams) -> Value {
    json!({
        "stations": p.stations,
        "processing_gain": p.processing_gain,
        "n_seq": p.n_seq.to_string(),
        "eta_th": p.eta_th,
        "eta_th_db": linear_to_db(p.eta_th),
        "snr": p.snr,
        "snr_db": linear_to_db(p.snr),
        "outage": p.outage,
        "g_th": p.g_th(),
        "power_norm": p.power_norm.to_string(),
        "inversion_rule": p.inversion_rule.to_string(),
    })
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn failure(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::failure(format!("I/O error: {e}"))
    }
}

fn validated(args: &ParamArgs) -> Result<SystemParams, CliError> {
    args.params().validate().map_err(|e| {
        let lines: Vec<String> = e.violations.iter().map(|v| format!("invalid parameter {v}")).collect();
        CliError::usage(lines.join("\n"))
    })
}

fn lambdas(grid: &Grid) -> Result<Vec<f64>, CliError> {
    let v = grid.values();
    if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(CliError::usage(
            "invalid parameter lambda: every arrival rate must be positive",
        ));
    }
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::usage(
            "invalid parameter lambda: values must be strictly increasing",
        ));
    }
    Ok(v)
}

fn sweep_err(e: crate::sweep::SweepError) -> CliError {
    match e {
        crate::sweep::SweepError::InvalidSpec(_) | crate::sweep::SweepError::Params(_) => {
            CliError::usage(e.to_string())
        }
        other => CliError::failure(other.to_string()),
    }
}

/// `analytic`: columns `lambda,scheme,throughput`.
pub fn cmd_analytic(cfg: &RunConfig, args: &AnalyticArgs) -> Result<Table, CliError> {
    let params = validated(&args.params)?;
    let spec = SweepSpec {
        schemes: args.params.scheme.0.clone(),
        axis: Axis::Lambda,
        values: lambdas(&args.lambda)?,
        params,
        mode: Mode::Analytic,
        sim: SimConfig::default(),
    };
    let res = run_sweep(&spec).map_err(sweep_err)?;
    let rows = res
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Num(r.axis_value),
                Cell::Text(r.scheme.to_string()),
                Cell::opt(r.s_analytic),
            ]
        })
        .collect();
    let mut meta = meta_for(cfg, Some(&params), 0, None);
    meta["truncation_tail"] = json!(res.meta.truncation_tail);
    Ok(Table {
        columns: vec!["lambda", "scheme", "throughput"],
        rows,
        meta,
    })
}

/// `simulate`: columns `lambda,scheme,throughput,stderr,slots,seed,warning`.
pub fn cmd_simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<Table, CliError> {
    let params = validated(&args.params)?;
    if args.sim.slots == 0 {
        return Err(CliError::usage("invalid parameter slots: must be at least 1"));
    }
    let spec = SweepSpec {
        schemes: args.params.scheme.0.clone(),
        axis: Axis::Lambda,
        values: lambdas(&args.lambda)?,
        params,
        mode: Mode::Simulated,
        sim: args.sim.config(),
    };
    let res = run_sweep(&spec).map_err(sweep_err)?;
    let warning = if args.sim.slots == 1 {
        "single-slot: stderr undefined and reported as 0"
    } else {
        ""
    };
    let rows = res
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::Num(r.axis_value),
                Cell::Text(r.scheme.to_string()),
                Cell::opt(r.s_simulated),
                Cell::opt(r.stderr),
                Cell::Int(args.sim.slots),
                r.seed.map_or(Cell::Empty, Cell::Int),
                Cell::Text(warning.into()),
            ]
        })
        .collect();
    Ok(Table {
        columns: vec!["lambda", "scheme", "throughput", "stderr", "slots", "seed", "warning"],
        rows,
        meta: meta_for(cfg, Some(&params), args.sim.seed, Some(args.sim.slots)),
    })
}

fn sweep_table(res: &SweepResult, include_params: bool) -> (Vec<&'static str>, Vec<Vec<Cell>>) {
    let axis = res.meta.axis;
    let p = &res.meta.params;
    let simulated = res.meta.mode != Mode::Analytic;
    let mut columns = vec!["scheme"];
    match axis {
        Axis::EtaDb => columns.extend(["eta_th", "eta_th_db"]),
        a => columns.push(a.name()),
    }
    let context: Vec<(&'static str, Cell)> = if include_params {
        let mut c = Vec::new();
        if axis != Axis::Outage {
            c.push(("outage", Cell::Num(p.outage)));
        }
        if axis != Axis::NSeq {
            c.push(("n_seq", Cell::Text(p.n_seq.to_string())));
        }
        if axis != Axis::EtaDb {
            c.push(("eta_th", Cell::Num(p.eta_th)));
            c.push(("eta_th_db", Cell::Num(linear_to_db(p.eta_th))));
        }
        c
    } else {
        Vec::new()
    };
    columns.extend(context.iter().map(|c| c.0));
    if axis != Axis::Lambda {
        columns.push("lambda_star");
    }
    columns.push("s_analytic");
    if simulated {
        columns.extend(["s_simulated", "stderr", "z", "seed"]);
    }
    columns.push("error");
    let rows = res
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![Cell::Text(r.scheme.to_string())];
            match axis {
                Axis::EtaDb => row.extend([Cell::Num(db_to_linear(r.axis_value)), Cell::Num(r.axis_value)]),
                _ => row.push(Cell::Num(r.axis_value)),
            }
            row.extend(context.iter().map(|c| c.1.clone()));
            if axis != Axis::Lambda {
                row.push(Cell::opt(r.lambda));
            }
            row.push(Cell::opt(r.s_analytic));
            if simulated {
                row.extend([
                    Cell::opt(r.s_simulated),
                    Cell::opt(r.stderr),
                    Cell::opt(r.z),
                    r.seed.map_or(Cell::Empty, Cell::Int),
                ]);
            }
            row.push(r.error.clone().map_or(Cell::Empty, Cell::Text));
            row
        })
        .collect();
    (columns, rows)
}

/// `sweep`: one row per (axis value, scheme).
pub fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<Table, CliError> {
    let params = validated(&args.params)?;
    let spec = SweepSpec {
        schemes: args.params.scheme.0.clone(),
        axis: args.axis,
        values: args.values.values(),
        params,
        mode: args.mode.mode(),
        sim: args.sim.config(),
    };
    let res = run_sweep(&spec).map_err(sweep_err)?;
    let (columns, rows) = sweep_table(&res, false);
    let mut meta = meta_for(cfg, Some(&params), args.sim.seed, Some(res.meta.slots));
    meta["truncation_tail"] = json!(res.meta.truncation_tail);
    Ok(Table { columns, rows, meta })
}

/// Headline numbers of one figure set, always computed from the closed forms.
#[derive(Debug, Clone, Serialize)]
struct PeakSummary {
    scheme: Scheme,
    lambda_star: f64,
    s_star: f64,
}

fn peaks(params: &SystemParams) -> Result<Vec<PeakSummary>, CliError> {
    Scheme::ALL
        .iter()
        .map(|&s| {
            let p = max_throughput(params, s).map_err(sweep_err)?;
            Ok(PeakSummary {
                scheme: s,
                lambda_star: p.lambda_star,
                s_star: p.s_star,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::failure(format!("writing {}: {e}", path.display())))
}

/// `figures`: fig3.csv … fig9.csv plus summary.json in `args.out`.
pub fn cmd_figures(cfg: &RunConfig, args: &FiguresArgs, log: &mut dyn Write) -> Result<Value, CliError> {
    let started = Instant::now();
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::failure(format!("creating {}: {e}", args.out.display())))?;
    let mode = if args.analytic_only { Mode::Analytic } else { Mode::Both };
    let sim = args.sim.config();
    let base = SystemParams::reference();
    let lambda_grid = linspace_step(0.25, 40.0, 0.25);
    let mut z_all: Vec<f64> = Vec::new();

    let mut emit =
        |name: &str, results: &[SweepResult], include_params: bool, z_all: &mut Vec<f64>| -> Result<(), CliError> {
            let mut table: Option<Table> = None;
            for res in results {
                z_all.extend(res.z_scores());
                let (columns, rows) = sweep_table(res, include_params);
                match table.as_mut() {
                    Some(t) => t.rows.extend(rows),
                    None => {
                        let mut meta = meta_for(cfg, Some(&res.meta.params), args.sim.seed, Some(res.meta.slots));
                        meta["figure"] = json!(name);
                        table = Some(Table { columns, rows, meta });
                    }
                }
            }
            let table = table.expect("at least one sweep per figure");
            write_file(&args.out.join(format!("{name}.csv")), &table.to_csv())?;
            let _ = writeln!(log, "wrote {}", args.out.join(format!("{name}.csv")).display());
            Ok(())
        };
    let sweep =
        |params: SystemParams, axis: Axis, values: Vec<f64>, seed_offset: u64| -> Result<SweepResult, CliError> {
            let spec = SweepSpec {
                schemes: Scheme::ALL.to_vec(),
                axis,
                values,
                params,
                mode,
                sim: SimConfig {
                    seed: sim.seed.wrapping_add(seed_offset),
                    ..sim
                },
            };
            run_sweep(&spec).map_err(sweep_err)
        };

    let fig3_params = base.with_outage(0.2);
    let fig4_params = base.with_outage(0.7);
    emit(
        "fig3",
        &[sweep(fig3_params, Axis::Lambda, lambda_grid.clone(), 3)?],
        true,
        &mut z_all,
    )?;
    emit(
        "fig4",
        &[sweep(fig4_params, Axis::Lambda, lambda_grid.clone(), 4)?],
        true,
        &mut z_all,
    )?;
    let outages = linspace_step(0.0, 0.99, 0.01);
    let fig5 = sweep(base, Axis::Outage, outages.clone(), 5)?;
    emit("fig5", std::slice::from_ref(&fig5), true, &mut z_all)?;
    let fig6: Vec<SweepResult> = [64u32, 128, 256]
        .iter()
        .map(|&n| {
            sweep(
                base.with_n_seq(SeqCount::Finite(n)),
                Axis::Lambda,
                lambda_grid.clone(),
                6 + n as u64,
            )
        })
        .collect::<Result<_, _>>()?;
    emit("fig6", &fig6, true, &mut z_all)?;
    let seq_axis: Vec<f64> = (1..=14).map(|e| (1u32 << e) as f64).collect();
    for (name, eta_db) in [("fig7", 1.0), ("fig8", 5.0), ("fig9", 10.0)] {
        let res = sweep(
            base.with_eta_db(eta_db),
            Axis::NSeq,
            seq_axis.clone(),
            eta_db as u64 * 100,
        )?;
        emit(name, &[res], true, &mut z_all)?;
    }

    // Headline values from the closed forms.
    let fig3_peaks = peaks(&fig3_params)?;
    let fig4_peaks = peaks(&fig4_params)?;
    let const_max: Vec<(f64, f64)> = fig5
        .rows
        .iter()
        .filter(|r| r.scheme == Scheme::AdaptiveConstant)
        .filter_map(|r| r.s_analytic.map(|s| (r.axis_value, s)))
        .collect();
    let inv_max: Vec<f64> = fig5
        .rows
        .iter()
        .filter(|r| r.scheme == Scheme::AdaptiveInversion)
        .filter_map(|r| r.s_analytic)
        .collect();
    let (min_outage, min_value) =
        const_max
            .iter()
            .copied()
            .fold((f64::NAN, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let inv_spread =
        inv_max.iter().copied().fold(f64::MIN, f64::max) - inv_max.iter().copied().fold(f64::MAX, f64::min);
    let conv_128 = fig4_peaks[0].s_star;
    let fig6_summary: Vec<Value> = [64u32, 128, 256]
        .iter()
        .map(|&n| {
            let p = base.with_n_seq(SeqCount::Finite(n));
            let pk = peaks(&p)?;
            Ok(json!({
                "n_seq": n,
                "conv_max": pk[0].s_star,
                "const_ratio": pk[1].s_star / pk[0].s_star,
                "inv_ratio": pk[2].s_star / pk[0].s_star,
            }))
        })
        .collect::<Result<_, CliError>>()?;
    let limits: Vec<Value> = [1.0, 5.0, 10.0]
        .iter()
        .map(|&eta_db| {
            let p = base.with_eta_db(eta_db);
            let mut entry = json!({ "eta_db": eta_db });
            for s in Scheme::ALL {
                let lim = limit_throughput(&p, s).map_err(sweep_err)?;
                let req = sequences_for_fraction(&p, s, 0.8).map_err(sweep_err)?;
                entry[format!("t_{}", s.short_name())] = json!(lim);
                entry[format!("seq80_{}", s.short_name())] = json!({
                    "n_seq": req.n_seq,
                    "reached": req.reached,
                    "bracket": [req.bracket.0, req.bracket.1],
                    "interpolated": req.interpolated,
                });
            }
            Ok(entry)
        })
        .collect::<Result<_, CliError>>()?;
    let crossover = crossover_lambda(
        &fig3_params,
        Scheme::AdaptiveInversion,
        Scheme::Conventional,
        16.0,
        30.0,
    )
    .ok();
    let finite_z: Vec<f64> = z_all.iter().copied().filter(|z| !z.is_nan()).collect();
    let below = finite_z.iter().filter(|z| z.abs() < 4.0).count();
    let z_health = if finite_z.is_empty() {
        Value::Null
    } else {
        json!({
            "rows": finite_z.len(),
            "fraction_abs_z_below_4": below as f64 / finite_z.len() as f64,
            "max_abs_z": finite_or_inf(finite_z.iter().map(|z| z.abs()).fold(0.0, f64::max)),
        })
    };

    let summary = json!({
        "meta": meta_for(cfg, Some(&base), args.sim.seed, if args.analytic_only { None } else { Some(args.sim.slots) }),
        "fig3": fig3_peaks,
        "fig4": fig4_peaks,
        "fig5": {
            "const_min": min_value,
            "const_min_outage": min_outage,
            "const_at_max_outage": const_max.last().map(|x| x.1),
            "inv_spread": inv_spread,
            "inv_conv_ratio": fig4_peaks[2].s_star / conv_128,
        },
        "fig6": fig6_summary,
        "limits": limits,
        "crossover_lambda": crossover,
        "z_health": z_health,
        "runtime_seconds": started.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("serializable summary") + "\n";
    write_file(&args.out.join("summary.json"), &text)?;
    let _ = writeln!(log, "wrote {}", args.out.join("summary.json").display());
    Ok(summary)
}

fn finite_or_inf(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!("inf")
    }
}

/// Outcome of the oracle grid.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub table: Table,
    pub max_abs_z: f64,
    pub worst: String,
    pub notes: Vec<String>,
}

pub const VALIDATION_KS: [u32; 6] = [1, 2, 5, 10, 20, 50];
pub const VALIDATION_LAMBDAS: [f64; 3] = [5.0, 15.0, 25.0];
pub const Z_GATE: f64 = 4.0;

/// `validate`: simulator vs closed forms over the K grid (success
/// probability) and a λ grid (throughput).
pub fn cmd_validate(cfg: &RunConfig, args: &ValidateArgs) -> Result<ValidationReport, CliError> {
    let params = validated(&args.params)?;
    if args.trials == 0 || args.sim.slots == 0 {
        return Err(CliError::usage("invalid parameter trials/slots: must be at least 1"));
    }
    let analytic_params = match args.noise_scale {
        Some(s) if s > 0.0 => SystemParams {
            snr: params.snr / s,
            ..params
        },
        Some(s) => {
            return Err(CliError::usage(format!(
                "invalid parameter noise_scale: must be positive, got {s}"
            )))
        }
        None => params,
    };
    let ks: Vec<u32> = match args.k {
        Some(0) => return Err(CliError::usage("invalid parameter k: must be at least 1")),
        Some(k) => vec![k],
        None => VALIDATION_KS.to_vec(),
    };
    let schemes = &args.params.scheme.0;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut worst = (0.0f64, String::from("none"));
    let mut cell_index = 0u64;
    let mut record = |kind: &str,
                      scheme: Scheme,
                      x: f64,
                      analytic: f64,
                      est: &crate::simulator::SimEstimate,
                      note: String,
                      rows: &mut Vec<Vec<Cell>>| {
        let z = if kind == "ps" {
            est.z_score_bernoulli(analytic)
        } else {
            est.z_score(analytic)
        };
        if z.abs() > worst.0 || (worst.1 == "none" && z.abs() >= worst.0) {
            worst = (z.abs(), format!("{kind} scheme={scheme} x={x}"));
        }
        rows.push(vec![
            Cell::Text(kind.into()),
            Cell::Text(scheme.to_string()),
            Cell::Num(x),
            Cell::Num(analytic),
            Cell::Num(est.mean),
            Cell::Num(est.stderr),
            Cell::Num(z),
            Cell::Int(est.seed),
            Cell::Text(note),
        ]);
    };

    for &scheme in schemes {
        for &k in &ks {
            let analytic = success_prob(k, &analytic_params, scheme).map_err(|e| CliError::failure(e.to_string()))?;
            let seed = crate::sweep::row_seed(args.sim.seed, cell_index);
            cell_index += 1;
            let est = estimate_ps_given_k(
                &params,
                scheme,
                k,
                &SimConfig::new(args.trials, seed).with_threads(args.sim.threads),
            );
            let mut note = String::new();
            if scheme == Scheme::AdaptiveInversion {
                let other_rule = match params.inversion_rule {
                    InversionRule::Sinr => InversionRule::Floor,
                    InversionRule::Floor => InversionRule::Sinr,
                };
                let alt = SystemParams {
                    inversion_rule: other_rule,
                    ..analytic_params
                };
                let alt_ps = success_prob(k, &alt, scheme).unwrap_or(f64::NAN);
                if alt_ps != analytic {
                    let bound =
                        1.0 + params.processing_gain * (1.0 / params.eta_th - noise_term(&analytic_params, scheme));
                    note = format!(
                        "inversion boundary: {} rule gives p_s={analytic}, {} rule gives p_s={alt_ps} at K={k}; floor(1+N(1/eta-noise))={} while SINR(K)={:.6} vs eta={:.6}",
                        params.inversion_rule,
                        other_rule,
                        bound.floor(),
                        1.0 / (noise_term(&analytic_params, scheme) + (k - 1) as f64 / params.processing_gain),
                        params.eta_th,
                    );
                    notes.push(note.clone());
                }
            }
            record("ps", scheme, k as f64, analytic, &est, note, &mut rows);
        }
        if args.k.is_none() {
            for &lam in &VALIDATION_LAMBDAS {
                let analytic =
                    throughput_sum(lam, &analytic_params, scheme).map_err(|e| CliError::failure(e.to_string()))?;
                let seed = crate::sweep::row_seed(args.sim.seed, cell_index);
                cell_index += 1;
                let est = estimate_throughput(
                    &params,
                    scheme,
                    lam,
                    &SimConfig::new(args.sim.slots, seed).with_threads(args.sim.threads),
                );
                record("throughput", scheme, lam, analytic, &est, String::new(), &mut rows);
            }
        }
    }
    if schemes.contains(&Scheme::AdaptiveInversion) {
        notes.push(format!(
            "inversion capacity under the {} rule: K <= {}",
            params.inversion_rule,
            inversion_capacity(&params)
        ));
    }
    let mut meta = meta_for(cfg, Some(&params), args.sim.seed, Some(args.sim.slots));
    meta["trials"] = json!(args.trials);
    meta["max_abs_z"] = finite_or_inf(worst.0);
    Ok(ValidationReport {
        table: Table {
            columns: vec![
                "kind",
                "scheme",
                "x",
                "analytic",
                "simulated",
                "stderr",
                "z",
                "seed",
                "note",
            ],
            rows,
            meta,
        },
        max_abs_z: worst.0,
        worst: worst.1,
        notes,
    })
}

fn emit_table(table: &Table, out: &OutputArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = table.render(out.format);
    match &out.output {
        Some(path) => write_file(path, &text),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = stdout.write_all(text.as_bytes());
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        EXIT_USAGE
                    } else {
                        EXIT_OK
                    }
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cfg.command {
        Command::Analytic(a) => cmd_analytic(&cfg, a)
            .and_then(|t| emit_table(&t, &a.output, stdout))
            .map(|_| EXIT_OK),
        Command::Simulate(a) => cmd_simulate(&cfg, a)
            .and_then(|t| {
                if a.sim.slots == 1 {
                    let _ = writeln!(
                        stderr,
                        "warning: a single slot gives no standard error; stderr column is 0"
                    );
                }
                emit_table(&t, &a.output, stdout)
            })
            .map(|_| EXIT_OK),
        Command::Sweep(a) => cmd_sweep(&cfg, a)
            .and_then(|t| emit_table(&t, &a.output, stdout))
            .map(|_| EXIT_OK),
        Command::Figures(a) => cmd_figures(&cfg, a, stderr).map(|_| EXIT_OK),
        Command::Validate(a) => cmd_validate(&cfg, a).and_then(|rep| {
            emit_table(&rep.table, &a.output, stdout)?;
            for n in &rep.notes {
                let _ = writeln!(stderr, "note: {n}");
            }
            let _ = writeln!(stderr, "max |z| = {:.3} at {}", rep.max_abs_z, rep.worst);
            if rep.max_abs_z < Z_GATE {
                Ok(EXIT_OK)
            } else {
                let _ = writeln!(stderr, "validation failed: |z| >= {Z_GATE} at {}", rep.worst);
                Ok(EXIT_FAILURE)
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(args: &[&str]) -> RunConfig {
        RunConfig::try_parse_from(std::iter::once("cdmara").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_match_reference_scenario() {
        let cfg = parse(&["simulate"]);
        let Command::Simulate(a) = &cfg.command else { panic!() };
        assert_eq!(a.params, ParamArgs::default());
        assert_eq!(a.sim, SimArgs::default());
        let p = a.params.params();
        assert_eq!(p, SystemParams::reference());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!("1:40:0.5".parse::<Grid>().unwrap().values().len(), 79);
        assert_eq!("12.9".parse::<Grid>().unwrap().values(), vec![12.9]);
        assert_eq!("64,128,256".parse::<Grid>().unwrap().values(), vec![64.0, 128.0, 256.0]);
        assert!("1:2".parse::<Grid>().is_err());
        assert!("3:1:1".parse::<Grid>().is_err());
        assert!("1:3:0".parse::<Grid>().is_err());
        // Inclusive endpoint despite accumulated rounding.
        assert_eq!(
            *"0.1:0.3:0.1".parse::<Grid>().unwrap().values().last().unwrap(),
            0.30000000000000004
        );
    }

    #[test]
    fn scheme_set_parsing() {
        assert_eq!("all".parse::<SchemeSet>().unwrap(), SchemeSet::all());
        assert_eq!(
            "inv,conv,inv".parse::<SchemeSet>().unwrap().0,
            vec![Scheme::Conventional, Scheme::AdaptiveInversion]
        );
        assert!("foo".parse::<SchemeSet>().is_err());
    }

    #[test]
    fn csv_has_header_and_quotes() {
        let t = Table {
            columns: vec!["a", "b"],
            rows: vec![vec![Cell::Num(0.5), Cell::Text("x,\"y\"".into())]],
            meta: json!({"config": "analytic", "seed": 1}),
        };
        let csv = t.to_csv();
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, ["a,b", "0.5,\"x,\"\"y\"\"\""]);
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        let params = (
            prop::sample::subsequence(Scheme::ALL.to_vec(), 1..=3),
            -5.0f64..15.0,
            0.0f64..40.0,
            0.0f64..0.99,
            prop_oneof![(1u32..20000).prop_map(SeqCount::Finite), Just(SeqCount::Infinite)],
            1u32..100_000,
            1.0f64..512.0,
            prop_oneof![Just(PowerNorm::Received), Just(PowerNorm::AverageTx)],
            prop_oneof![Just(InversionRule::Sinr), Just(InversionRule::Floor)],
        )
            .prop_map(
                |(s, eta_db, snr_db, outage, nseq, m, n, power_norm, inv_rule)| ParamArgs {
                    scheme: SchemeSet(s),
                    eta_db,
                    snr_db,
                    outage,
                    nseq,
                    m,
                    n,
                    power_norm,
                    inv_rule,
                },
            );
        let grid = prop_oneof![
            (0.01f64..10.0, 0.0f64..30.0, 0.01f64..2.0).prop_map(|(a, w, s)| Grid::Range {
                start: a,
                stop: a + w,
                step: s
            }),
            prop::collection::vec(0.01f64..100.0, 1..4).prop_map(Grid::List),
        ];
        let sim = (1u64..10_000_000, any::<u64>(), prop::option::of(1usize..64))
            .prop_map(|(slots, seed, threads)| SimArgs { slots, seed, threads });
        let output = (
            prop_oneof![Just(Format::Csv), Just(Format::Json)],
            prop::option::of("[a-z]{1,8}\\.csv"),
        )
            .prop_map(|(format, p)| OutputArgs {
                format,
                output: p.map(PathBuf::from),
            });
        (params, grid, sim, output, 0usize..3, prop::option::of(1u32..100)).prop_map(
            |(params, grid, sim, output, which, k)| {
                let command = match which {
                    0 => Command::Analytic(AnalyticArgs {
                        params,
                        lambda: grid,
                        output,
                    }),
                    1 => Command::Simulate(SimulateArgs {
                        params,
                        lambda: grid,
                        sim,
                        output,
                    }),
                    _ => Command::Validate(ValidateArgs {
                        params,
                        k,
                        trials: 1000,
                        sim,
                        noise_scale: None,
                        output,
                    }),
                };
                RunConfig { command }
            },
        )
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(cfg in arb_config()) {
            let args = cfg.to_args();
            let back = RunConfig::try_parse_from(std::iter::once("cdmara".to_string()).chain(args.clone())).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_args(), args);
        }
    }
}
