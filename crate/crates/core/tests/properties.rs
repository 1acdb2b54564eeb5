use cdmara::analytic::{ps_const, ps_conv, ps_inv, throughput_sum};
use cdmara::numerics::{erlang_gamma_lower, maximize_1d, poisson_pmf, poisson_truncation, RngStream};
use cdmara::simulator::{estimate_throughput, SimConfig};
use cdmara::sweep::{limit_throughput, linspace_step, max_throughput, run_sweep, Axis, Mode, SweepSpec};
use cdmara::{Scheme, SeqCount, SystemParams};
use proptest::prelude::*;
use rand::RngCore;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn poisson_mass_sums_to_one(lambda in 0.01f64..200.0) {
        let kmax = poisson_truncation(lambda);
        let total: f64 = (0..=kmax).map(|k| poisson_pmf(k, lambda).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10, "λ={lambda}: {total}");
    }

    #[test]
    fn erlang_lower_monotone(v in 1u32..120, x in 0.0f64..150.0, dx in 0.0f64..5.0) {
        let a = erlang_gamma_lower(v, x).unwrap();
        prop_assert!(erlang_gamma_lower(v, x + dx).unwrap() >= a - 1e-15);
        prop_assert!(erlang_gamma_lower(v + 1, x).unwrap() <= a + 1e-15);
    }

    #[test]
    fn maximizer_beats_every_grid_point(c in -5.0f64..5.0, w in 0.1f64..3.0, phase in 0.0f64..6.0) {
        let f = |x: f64| -(x - c).powi(2) / w + (phase + x).sin();
        let (_, fmax) = maximize_1d(f, -8.0, 8.0, 1e-10).unwrap();
        for x in linspace_step(-8.0, 8.0, 0.01) {
            prop_assert!(fmax >= f(x) - 1e-9);
        }
    }

    #[test]
    fn rng_streams_reproduce(seed in any::<u64>(), stream in 0u64..1000) {
        let mut a = RngStream::new(seed, stream);
        let mut b = RngStream::new(seed, stream);
        for _ in 0..64 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn throughput_bounded_by_offered_load(lambda in 0.05f64..60.0, outage in 0.0f64..0.95, eta_db in -2.0f64..12.0) {
        let p = SystemParams::reference().with_outage(outage).with_eta_db(eta_db);
        for s in Scheme::ALL {
            let t = throughput_sum(lambda, &p, s).unwrap();
            prop_assert!((-1e-12..=lambda * (1.0 + 1e-12)).contains(&t), "{s} λ={lambda}: {t}");
        }
    }
}

fn reference_grid() -> Vec<SystemParams> {
    let mut grid = Vec::new();
    for outage in [0.0, 0.2, 0.5, 0.7, 0.9] {
        for eta_db in [1.0, 5.0, 10.0] {
            grid.push(SystemParams::reference().with_outage(outage).with_eta_db(eta_db));
        }
    }
    grid
}

#[test]
fn success_probability_nonincreasing_in_k() {
    for p in reference_grid() {
        let (mut conv, mut cnst, mut inv) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for k in 1..=200 {
            let (a, b, c) = (ps_conv(k, &p), ps_const(k, &p).unwrap(), ps_inv(k, &p));
            assert!(a <= conv + 1e-12 && b <= cnst + 1e-12 && c <= inv, "k={k} {p:?}");
            (conv, cnst, inv) = (a, b, c);
        }
    }
}

#[test]
fn throughput_nondecreasing_in_sequences() {
    let base = SystemParams::reference();
    for s in Scheme::ALL {
        for lambda in [1.0, 8.0, 16.0, 30.0] {
            let mut prev = 0.0;
            for e in 0..=14 {
                let t = throughput_sum(lambda, &base.with_n_seq(SeqCount::Finite(1 << e)), s).unwrap();
                assert!(t >= prev - 1e-12, "{s} λ={lambda} n=2^{e}");
                prev = t;
            }
            assert!(throughput_sum(lambda, &base.with_n_seq(SeqCount::Infinite), s).unwrap() >= prev - 1e-12);
        }
    }
}

#[test]
fn maximum_monotone_in_sequences_and_threshold() {
    for s in Scheme::ALL {
        for outage in [0.2, 0.7] {
            let base = SystemParams::reference().with_outage(outage);
            let mut prev = 0.0;
            for e in (1..=14).step_by(2) {
                let m = max_throughput(&base.with_n_seq(SeqCount::Finite(1 << e)), s)
                    .unwrap()
                    .s_star;
                assert!(m >= prev - 1e-9, "{s} n=2^{e}");
                prev = m;
            }
            assert!(limit_throughput(&base, s).unwrap() >= prev - 1e-9);
            let mut prev = f64::INFINITY;
            for eta_db in [0.0, 1.0, 3.0, 5.0, 7.0, 10.0, 12.0] {
                let m = max_throughput(&base.with_eta_db(eta_db), s).unwrap().s_star;
                assert!(m <= prev + 1e-9, "{s} η={eta_db} dB");
                prev = m;
            }
        }
    }
}

/// Counts cells where constant-power deferral loses to the conventional
/// scheme at equal noise. Interferers defer too, so this can happen; the
/// count is printed rather than asserted.
#[test]
fn constant_power_dominance_report() {
    let mut violations = Vec::new();
    for p in reference_grid().into_iter().filter(|p| p.g_th() > 0.0) {
        for k in 2..=200 {
            let (c, v) = (ps_const(k, &p).unwrap(), ps_conv(k, &p));
            if c < v - 1e-12 {
                violations.push(format!(
                    "outage {} η {:.3} K={k}: const {c:.6} < conv {v:.6}",
                    p.outage, p.eta_th
                ));
            }
        }
    }
    println!("constant-power dominance: {} violating cells", violations.len());
    for v in violations.iter().take(20) {
        println!("  {v}");
    }
}

#[test]
fn inversion_throughput_independent_of_threshold() {
    let base = SystemParams::reference();
    for lambda in [8.0, 15.7, 22.0] {
        let cfg = SimConfig::new(100_000, 7);
        let a = estimate_throughput(&base.with_outage(0.0), Scheme::AdaptiveInversion, lambda, &cfg);
        let b = estimate_throughput(
            &base.with_outage(0.7),
            Scheme::AdaptiveInversion,
            lambda,
            &SimConfig { seed: 8, ..cfg },
        );
        let combined = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(
            (a.mean - b.mean).abs() < 3.0 * combined,
            "λ={lambda}: {} vs {} ± {combined}",
            a.mean,
            b.mean
        );
    }
}

#[test]
fn both_mode_z_scores_are_healthy() {
    let spec = SweepSpec {
        schemes: Scheme::ALL.to_vec(),
        axis: Axis::Lambda,
        values: linspace_step(1.0, 40.0, 1.0),
        params: SystemParams::reference(),
        mode: Mode::Both,
        sim: SimConfig::new(100_000, 42),
    };
    let res = run_sweep(&spec).unwrap();
    let z: Vec<f64> = res.z_scores().collect();
    assert_eq!(z.len(), 120);
    let good = z.iter().filter(|z| z.abs() < 4.0).count();
    assert!(good as f64 >= 0.99 * z.len() as f64, "{good}/{}", z.len());
}
