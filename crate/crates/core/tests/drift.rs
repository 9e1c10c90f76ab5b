use xfpt_core::diagnostics::{diffusive_reference_arrivals, estimate_drift};
use xfpt_core::graph::{BetheSpec, Model};
use xfpt_core::mc::{run_trials, McConfig, WalkerCount};

#[test]
fn bethe_drift_is_subballistic() {
    let mut cfg = McConfig::new(
        Model::Bethe(BetheSpec::new(3, 10).unwrap()),
        WalkerCount::Count(1),
    );
    cfg.trials = 2_000_000;
    cfg.seed = 5;
    let res = run_trials(&cfg).unwrap();
    let samples = res.samples();
    assert!(samples.len() >= 1000, "{} arrivals", samples.len());
    let est = estimate_drift(10, &samples, 500, 6).unwrap();
    assert!(est.v_drift > 0.0 && est.v_drift < 1.0, "{est:?}");
    assert!(est.ci_low < est.v_drift && est.v_drift < est.ci_high);
    assert!(est.ci_high < 1.0);
}

#[test]
fn diffusive_drift_vanishes_with_distance() {
    let mut previous = f64::INFINITY;
    let mut first = None;
    for d in [4_usize, 16, 32] {
        let t_max = 50 * (d * d) as u64;
        let arrivals = diffusive_reference_arrivals(d, 2000, t_max, d as u64).unwrap();
        let est = estimate_drift(d, &arrivals, 200, 1).unwrap();
        assert!(est.v_drift < previous, "d = {d}: {est:?}");
        previous = est.v_drift;
        first.get_or_insert(est.v_drift);
    }
    assert!(previous < 0.5 * first.unwrap());
}
