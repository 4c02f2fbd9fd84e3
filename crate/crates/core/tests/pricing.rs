use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_credit::pricing::{
    bond_lower_bound, bond_upper_bound, mc_price, robust_price_interval, series_price, McSettings, SeriesGate, SeriesParams,
    ShortRate,
};
use robust_credit::{Execution, JacobiParams};

fn quick(seed: u64) -> McSettings {
    McSettings {
        n_paths: 4_000,
        steps_per_year: 50,
        seed,
        execution: Execution::Parallel,
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> (JacobiParams, f64, f64) {
    let lo = rng.gen_range(0.001..0.05);
    let hi = lo + rng.gen_range(0.02..0.2);
    let mean = lo + rng.gen_range(0.05..0.95) * (hi - lo);
    let alpha = rng.gen_range(0.2..3.0);
    let beta = rng.gen_range(0.0..0.8);
    let start = lo + rng.gen::<f64>() * (hi - lo);
    let tau = rng.gen_range(0.0..6.0);
    (JacobiParams::new(lo, hi, alpha, beta, mean, start).unwrap(), start, tau)
}

#[test]
fn twenty_intervals_are_ordered_and_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for k in 0..20 {
        let (p, start, tau) = random_params(&mut rng);
        let iv = robust_price_interval(&p, start, &ShortRate::Constant(0.01), 0.5, 0.5 + tau, &SeriesParams::default(), &quick(k)).unwrap();
        assert!(iv.lower <= iv.upper, "{iv:?}");
        assert!(iv.mc_consistent(3.0), "{p:?} tau {tau}: {iv:?}");
        assert!(iv.upper <= iv.discount * (1.0 + 1e-15));
    }
}

#[test]
fn zero_order_series_dominates_the_simulated_price() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..10 {
        let (p, start, tau) = random_params(&mut rng);
        let b0 = series_price(&p, start, 0.0, tau, &SeriesParams::new(0, 12).unwrap()).unwrap();
        let mc = mc_price(&p, 0.0, tau, &quick(100 + k)).unwrap();
        assert!(b0 >= mc.mean - 3.0 * mc.stderr);
    }
}

#[test]
fn deterministic_intensity_interval_collapses_onto_the_lower_bound() {
    let p = JacobiParams::new(0.01, 0.10, 0.5, 0.0, 0.02, 0.08).unwrap();
    let s = McSettings {
        steps_per_year: 1000,
        ..Default::default()
    };
    let iv = robust_price_interval(&p, 0.08, &ShortRate::Constant(0.0), 0.0, 2.0, &SeriesParams::default(), &s).unwrap();
    assert!((iv.mc - iv.lower).abs() < 1e-4);
    assert_eq!(iv.mc_stderr, 0.0);
    // the series is exact for a deterministic path
    assert!((iv.series.unwrap() - iv.lower).abs() < 1e-6);
}

#[test]
fn prices_fall_as_the_starting_intensity_rises() {
    let base = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
    let starts = [0.01, 0.03, 0.05, 0.08, 0.10];
    let mut previous: Option<(f64, f64, f64, f64)> = None;
    for &l in &starts {
        let p = base.with_start(l).unwrap();
        let lo = bond_lower_bound(&p, l, 0.0, 3.0).unwrap();
        let hi = bond_upper_bound(&p, l, 0.0, 3.0).unwrap();
        let mc = mc_price(&p, 0.0, 3.0, &quick(5)).unwrap();
        if let Some((plo, phi, pmc, pse)) = previous {
            assert!(lo <= plo && hi <= phi);
            assert!(mc.mean <= pmc + 3.0 * (pse + mc.stderr));
        }
        previous = Some((lo, hi, mc.mean, mc.stderr));
    }
}

#[test]
fn series_gate_accepts_moderate_parameters() {
    for (alpha, beta, start) in [(1.0, 0.3, 0.04), (0.5, 0.6, 0.01), (2.0, 0.1, 0.1)] {
        let p = JacobiParams::new(0.01, 0.10, alpha, beta, 0.04, start).unwrap();
        let mc = mc_price(&p, 0.0, 2.0, &McSettings { n_paths: 20_000, steps_per_year: 100, seed: 3, ..Default::default() }).unwrap();
        let gate = SeriesGate::check(series_price(&p, start, 0.0, 2.0, &SeriesParams::default()), mc.mean, mc.stderr);
        assert!(gate.pass, "{gate:?}");
    }
}

#[test]
fn interval_does_not_depend_on_execution_mode() {
    let p = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
    let mut s = quick(11);
    let a = robust_price_interval(&p, 0.06, &ShortRate::Constant(0.02), 0.0, 3.0, &SeriesParams::default(), &s).unwrap();
    s.execution = Execution::Sequential;
    let b = robust_price_interval(&p, 0.06, &ShortRate::Constant(0.02), 0.0, 3.0, &SeriesParams::default(), &s).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.csv_row(), b.csv_row());
}
