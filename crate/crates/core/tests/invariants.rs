use m2m_uplink::channel::{sample_devices, PoissonTable, Scenario};
use m2m_uplink::coordinated::{allocation_cost, coordinated_max_load, fdma_schedule, CoordKind, LoadPolicy, Mode};
use m2m_uplink::montecarlo::{run_sweep, write_sweep_csv, Strategy};
use m2m_uplink::uncoordinated::{
    cdma_failure_probability, collision_probability, ra_max_load, CdmaDesign, RaKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 77;

#[test]
fn distance_squared_is_uniform() {
    let s = Scenario::default();
    let n = 100_000;
    let (a, b) = (s.r_inner.powi(2), s.r_outer.powi(2));
    let mut u: Vec<f64> = sample_devices(&s, n, SEED)
        .iter()
        .map(|d| (d.distance * d.distance - a) / (b - a))
        .collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    for dev in sample_devices(&s, 1000, SEED) {
        assert!(dev.distance >= s.r_inner && dev.distance <= s.r_outer);
    }
}

#[test]
fn failure_probability_matches_protocol_simulation() {
    // Slots overflow with the Poisson tail beyond N_bar; otherwise a tagged
    // device shares the code pool with N_bar - 1 others.
    let s = Scenario::default();
    let lambda = 100.0;
    let design = CdmaDesign::for_load(&s, lambda, 0.05, 0.01, 0.0).unwrap();
    let m = design.num_codes as u64;
    let eps = PoissonTable::new(lambda * s.tau_slot).tail(design.n_bar);
    let predicted = cdma_failure_probability(eps, collision_probability(m as f64, design.n_bar), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let runs = 200_000;
    let mut failures = 0;
    for _ in 0..runs {
        if rng.random::<f64>() < eps {
            failures += 1;
            continue;
        }
        let mine = rng.random_range(0..m);
        if (1..design.n_bar).any(|_| rng.random_range(0..m) == mine) {
            failures += 1;
        }
    }
    let freq = failures as f64 / runs as f64;
    let se = (predicted * (1.0 - predicted) / runs as f64).sqrt();
    assert!((freq - predicted).abs() <= 3.0 * se, "simulated {freq}, predicted {predicted}, se {se}");
}

#[test]
fn ra_max_load_monotone_in_payload_and_bandwidth() {
    let base = Scenario::default();
    let run = |s: &Scenario| ra_max_load(RaKind::Cdma, s, 0.05, 0.01, 0.0, 20_000, SEED).unwrap().lambda_max;
    let loads: Vec<f64> = [500.0, 1000.0, 2000.0]
        .iter()
        .map(|&l| run(&Scenario { payload_bits: l, ..base.clone() }))
        .collect();
    assert!(loads.windows(2).all(|w| w[1] <= w[0]), "{loads:?}");
    let bands: Vec<f64> = [0.5e6, 1e6, 2e6]
        .iter()
        .map(|&w| run(&Scenario { w_total: w, ..base.clone() }))
        .collect();
    assert!(bands.windows(2).all(|w| w[1] >= w[0]), "{bands:?}");
    assert!(ra_max_load(RaKind::Cdma, &base, 0.01, 0.01, 0.0, 10, SEED).is_err());
}

#[test]
fn max_loads_insensitive_to_inner_radius() {
    let policy = LoadPolicy::new(0.0, 0.01, 0.01).unwrap();
    for r_inner in [10.0, 50.0, 100.0] {
        let s = Scenario {
            r_inner,
            ..Scenario::default()
        };
        let cdma = ra_max_load(RaKind::Cdma, &s, 0.05, 0.01, 0.0, 100_000, SEED).unwrap().lambda_max;
        assert!((1215.0..=1485.0).contains(&cdma), "r_inner {r_inner}: cdma {cdma}");
        let tdma = coordinated_max_load(CoordKind::Tdma, &s, &policy, 500, SEED).unwrap();
        assert!((1080.0..=1320.0).contains(&tdma.lambda_max), "r_inner {r_inner}: tdma {}", tdma.lambda_max);
        assert!((1080.0..=1320.0).contains(&tdma.slln_lambda));
    }
}

#[test]
fn coordinated_fdma_outlasts_tdma() {
    let policy = LoadPolicy::new(0.0, 0.01, 0.01).unwrap();
    for (payload, mu_db) in [(1000.0, -3.0), (4000.0, -3.0), (1000.0, 3.0)] {
        let s = Scenario {
            payload_bits: payload,
            mu_ref: 10f64.powf(mu_db / 10.0),
            ..Scenario::default()
        };
        let t = coordinated_max_load(CoordKind::Tdma, &s, &policy, 200, SEED).unwrap();
        let f = coordinated_max_load(CoordKind::Fdma, &s, &policy, 200, SEED).unwrap();
        assert!(f.lambda_max > t.lambda_max, "L={payload} mu={mu_db} dB: {} vs {}", f.lambda_max, t.lambda_max);
    }
}

#[test]
fn coordinated_drops_lower_the_bar() {
    let s = Scenario::default();
    let strict = LoadPolicy::new(0.0, 0.01, 0.05).unwrap();
    let lenient = LoadPolicy::new(0.03, 0.01, 0.05).unwrap();
    let a = coordinated_max_load(CoordKind::Tdma, &s, &strict, 200, SEED).unwrap();
    let b = coordinated_max_load(CoordKind::Tdma, &s, &lenient, 200, SEED).unwrap();
    assert!(b.lambda_max >= a.lambda_max, "{} < {}", b.lambda_max, a.lambda_max);
}

#[test]
fn equal_fdma_total_matches_direct_sum() {
    // K = 1000 devices, L/(W tau_s) = 1e-3: each device gets W/K and needs
    // (2^(K a) - 1) / (K mu g).
    let s = Scenario::default();
    let gains: Vec<f64> = sample_devices(&s, 1000, SEED).iter().map(|d| d.gain).collect();
    let alloc = fdma_schedule(&gains, &s, Mode::Equal).unwrap();
    let total = allocation_cost(&alloc, &gains, &s).total_power;
    let direct: f64 = gains
        .iter()
        .map(|g| (2f64.powf(1000.0 * 1e-3) - 1.0) / (1000.0 * s.mu_ref * g))
        .sum();
    assert!((total - direct).abs() <= 1e-12 * direct);
    // mean of (r/r0)^3 over the annulus is close to 2/5
    let expected = 1.0 / s.mu_ref * 0.4;
    assert!((total - expected).abs() < 0.05 * expected, "{total} vs {expected}");
}

#[test]
fn sweep_csv_is_reproducible() {
    let s = Scenario::default();
    let csv = |seed| {
        let rows = run_sweep(&s, &[50.0, 400.0], &Strategy::ALL, 40, seed).unwrap();
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        out
    };
    let a = csv(5);
    assert_eq!(a, csv(5));
    assert_ne!(a, csv(6));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "strategy,lambda,trials,seed,mean_power_w,p95_power_w,mean_eb_j,p95_eb_j,outage_frac"
    );
    assert_eq!(text.lines().count(), 1 + 2 * Strategy::ALL.len());
}

#[test]
fn strategy_ordering_stable_across_seeds() {
    let s = Scenario::default();
    let order = [Strategy::Sic, Strategy::FdmaOpt, Strategy::FdmaEqual];
    for seed in 0..5 {
        let rows = run_sweep(&s, &[300.0, 1000.0], &order, 500, seed).unwrap();
        for chunk in rows.chunks(3) {
            assert!(
                chunk[0].mean_power_w <= chunk[1].mean_power_w && chunk[1].mean_power_w <= chunk[2].mean_power_w,
                "seed {seed}: {chunk:?}"
            );
            for r in chunk {
                assert!(r.p95_power_w >= 0.0 && (0.0..=1.0).contains(&r.outage_frac));
            }
        }
    }
}

#[test]
fn cdma_close_to_fdma_at_light_load() {
    let s = Scenario::default();
    let rows = run_sweep(&s, &[50.0, 100.0, 200.0], &[Strategy::CdmaRa, Strategy::FdmaOpt], 300, SEED).unwrap();
    for pair in rows.chunks(2) {
        let gap = 10.0 * (pair[0].mean_power_w / pair[1].mean_power_w).log10();
        assert!(gap.abs() <= 3.0, "lambda {}: gap {gap:.2} dB", pair[0].lambda);
    }
}

#[test]
fn light_load_is_nearly_free() {
    let rows = run_sweep(&Scenario::default(), &[0.01], &Strategy::ALL, 200, SEED).unwrap();
    for r in rows {
        assert!(r.mean_power_w < 1e-3, "{}: {}", r.strategy, r.mean_power_w);
    }
}
