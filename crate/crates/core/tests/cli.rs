use std::path::Path;

use cdmara::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cdmara(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("cdmara").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema").join(name);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn analytic_columns_and_metadata() {
    let o = cdmara(&[
        "analytic", "--scheme", "all", "--eta-db", "5", "--nseq", "128", "--outage", "0.2", "--lambda", "1:40:0.5",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.starts_with("# tool: cdmara "));
    assert!(o.stdout.contains("# config: analytic --scheme all --eta-db 5 "));
    let lines = data_lines(&o.stdout);
    assert_eq!(lines[0], "lambda,scheme,throughput");
    assert_eq!(lines.len(), 1 + 79 * 3);
    assert!(lines[1].starts_with("1,conv,"));
    assert!(lines.last().unwrap().starts_with("40,inv,"));
}

#[test]
fn analytic_is_byte_identical() {
    let args = ["analytic", "--lambda", "0.5:20:0.5", "--format", "json"];
    assert_eq!(cdmara(&args).stdout, cdmara(&args).stdout);
}

#[test]
fn single_sequence_inversion_is_slotted_aloha() {
    let o = cdmara(&["analytic", "--scheme", "inv", "--nseq", "1", "--lambda", "1:10:1"]);
    assert_eq!(o.code, EXIT_OK);
    for line in &data_lines(&o.stdout)[1..] {
        let f: Vec<&str> = line.split(',').collect();
        let (l, s): (f64, f64) = (f[0].parse().unwrap(), f[2].parse().unwrap());
        let expected = l * (-l).exp();
        assert!(
            (s - expected).abs() < 1e-12 * expected.max(1.0),
            "λ={l}: {s} vs {expected}"
        );
    }
}

#[test]
fn invalid_parameters_exit_2_with_field_diagnostics() {
    let o = cdmara(&["analytic", "--outage", "1.0", "--nseq", "0", "--lambda", "1"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stdout.is_empty());
    assert!(o.stderr.contains("outage"), "{}", o.stderr);
    assert!(o.stderr.contains("n_seq"), "{}", o.stderr);

    for bad in [
        &["analytic", "--lambda", "0:5:1"][..],
        &["analytic", "--lambda", "5:1:1"],
        &["analytic", "--scheme", "aloha"],
        &["simulate", "--slots", "0", "--lambda", "1"],
        &["sweep", "--axis", "speed", "--values", "1"],
        &["validate", "--k", "0"],
        &["frobnicate"],
    ] {
        assert_eq!(cdmara(bad).code, EXIT_USAGE, "{bad:?}");
    }
}

#[test]
fn negative_db_values_parse() {
    let o = cdmara(&["analytic", "--eta-db", "-3", "--snr-db", "-1", "--lambda", "2"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
}

#[test]
fn simulate_is_deterministic_across_reruns_and_threads() {
    let base = ["simulate", "--lambda", "2:20:6", "--slots", "5000", "--seed", "9"];
    let with = |t: &str| {
        let mut a = base.to_vec();
        a.extend(["--threads", t]);
        cdmara(&a).stdout
    };
    let one = with("1");
    assert_eq!(one, with("1"));
    assert_eq!(data_lines(&one), data_lines(&with("8")));
    assert_eq!(data_lines(&one), data_lines(&cdmara(&base).stdout));
    assert_eq!(
        data_lines(&one)[0],
        "lambda,scheme,throughput,stderr,slots,seed,warning"
    );
}

#[test]
fn different_seeds_differ() {
    let a = cdmara(&["simulate", "--lambda", "10", "--slots", "2000", "--seed", "1"]).stdout;
    let b = cdmara(&["simulate", "--lambda", "10", "--slots", "2000", "--seed", "2"]).stdout;
    assert_ne!(data_lines(&a), data_lines(&b));
}

#[test]
fn single_slot_flags_zero_stderr() {
    let o = cdmara(&["simulate", "--lambda", "3", "--scheme", "conv", "--slots", "1"]);
    assert_eq!(o.code, EXIT_OK);
    let row: Vec<&str> = data_lines(&o.stdout)[1].split(',').collect();
    assert_eq!(row[3], "0");
    assert!(row[6].starts_with("single-slot"));
    assert!(o.stderr.contains("warning"));
}

#[test]
fn simulated_constant_power_peak_near_ten() {
    let o = cdmara(&[
        "simulate", "--scheme", "const", "--outage", "0.7", "--lambda", "12.9", "--slots", "100000", "--seed", "42",
    ]);
    let row: Vec<&str> = data_lines(&o.stdout)[1].split(',').collect();
    let (s, se): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
    assert!((s - 10.0).abs() < 3.0 * se + 0.03 * 10.0, "{s} ± {se}");
    let analytic = cdmara(&["analytic", "--scheme", "const", "--lambda", "12.9"]);
    let a: f64 = data_lines(&analytic.stdout)[1]
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((s - a).abs() < 4.0 * se, "simulated {s} ± {se} vs analytic {a}");
}

#[test]
fn sweep_eta_axis_reports_linear_and_db() {
    let o = cdmara(&["sweep", "--axis", "eta-db", "--values", "1,10", "--scheme", "inv"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let lines = data_lines(&o.stdout);
    assert_eq!(lines[0], "scheme,eta_th,eta_th_db,lambda_star,s_analytic,error");
    assert!(lines[2].starts_with("inv,10,10,"));
}

#[test]
fn sweep_accepts_unbounded_sequence_pool() {
    let o = cdmara(&[
        "sweep", "--axis", "nseq", "--values", "64,inf", "--scheme", "conv", "--eta-db", "10",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let last: Vec<&str> = data_lines(&o.stdout)[2].split(',').collect();
    assert_eq!(last[1], "inf");
    assert!((last[3].parse::<f64>().unwrap() - 2.695).abs() < 0.01);
}

#[test]
fn validate_defaults_pass_the_gate() {
    let o = cdmara(&["validate", "--trials", "200000", "--slots", "20000"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stderr.contains("max |z|"));
}

#[test]
fn validate_detects_corrupted_noise() {
    let o = cdmara(&[
        "validate",
        "--trials",
        "200000",
        "--slots",
        "20000",
        "--noise-scale",
        "3",
    ]);
    assert_eq!(o.code, EXIT_FAILURE);
    assert!(o.stderr.contains("validation failed"), "{}", o.stderr);
    assert!(o.stderr.contains("scheme="), "{}", o.stderr);
}

#[test]
fn validate_boundary_probe_reports_rule_discrepancy() {
    let o = cdmara(&["validate", "--scheme", "inv", "--k", "21", "--trials", "10000"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(
        o.stderr
            .contains("sinr rule gives p_s=1, floor rule gives p_s=0 at K=21"),
        "{}",
        o.stderr
    );
    // The simulator applies the SINR test itself, so the floor rule is
    // contradicted at the boundary.
    let o = cdmara(&[
        "validate",
        "--scheme",
        "inv",
        "--k",
        "21",
        "--trials",
        "10000",
        "--inv-rule",
        "floor",
    ]);
    assert_eq!(o.code, EXIT_FAILURE, "{}", o.stderr);
    assert!(o.stderr.contains("ps scheme=inv x=21"), "{}", o.stderr);
}

#[test]
fn json_outputs_match_schema() {
    let table = schema("table.schema.json");
    for args in [
        &["analytic", "--lambda", "1:5:1", "--format", "json"][..],
        &["simulate", "--lambda", "3", "--slots", "100", "--format", "json"],
        &[
            "sweep", "--axis", "nseq", "--values", "16,inf", "--mode", "both", "--slots", "200", "--format", "json",
        ],
        &["validate", "--k", "5", "--trials", "1000", "--format", "json"],
    ] {
        let o = cdmara(args);
        assert_eq!(o.code, EXIT_OK, "{args:?}: {}", o.stderr);
        let doc: Value = serde_json::from_str(&o.stdout).unwrap();
        assert_valid(&table, &doc);
    }
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    let o = cdmara(&["analytic", "--lambda", "1,2", "--output", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.is_empty());
    assert_eq!(data_lines(&std::fs::read_to_string(path).unwrap()).len(), 7);
}

#[test]
fn figures_analytic_only() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let o = cdmara(&["figures", "--analytic-only", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(start.elapsed().as_secs() < 60);
    for n in 3..=9 {
        let csv = std::fs::read_to_string(dir.path().join(format!("fig{n}.csv"))).unwrap();
        let header = data_lines(&csv)[0];
        assert!(!header.contains("stderr"), "fig{n}: {header}");
        assert!(header.contains("s_analytic"));
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_valid(&schema("summary.schema.json"), &summary);
    let conv = summary["fig3"][0]["s_star"].as_f64().unwrap();
    assert!((6.57..=6.83).contains(&conv), "{conv}");
    let ratio = summary["fig5"]["inv_conv_ratio"].as_f64().unwrap();
    assert!((1.76..=1.94).contains(&ratio), "{ratio}");
}

#[test]
fn figures_into_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let o = cdmara(&["figures", "--analytic-only", "--out", file.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_FAILURE);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(cdmara(&["--help"]).code, EXIT_OK);
    assert!(cdmara(&["--version"]).stdout.contains(cdmara::VERSION));
}
