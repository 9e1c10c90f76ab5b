use xfpt_core::evt::ExtremeQuery;
use xfpt_core::fpt::model_fpt;
use xfpt_core::graph::{build_clique_head, build_leaky_loop, BetheSpec, CometSpec, Model};
use xfpt_core::mc::{run_trials, McConfig, McResult, SamplingMode, WalkerCount};

fn leaky(s: f64, mu: f64, d: usize) -> Model {
    Model::LeakyLoop(build_leaky_loop(s, mu, d).unwrap())
}

fn run(model: &Model, walkers: u64, trials: u64, seed: u64, mode: SamplingMode) -> McResult {
    let mut cfg = McConfig::new(model.clone(), WalkerCount::Count(walkers));
    cfg.trials = trials;
    cfg.seed = seed;
    cfg.mode = mode;
    run_trials(&cfg).unwrap()
}

fn within(observed: f64, expected: f64, trials: u64, sigmas: f64) -> bool {
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    (observed - expected).abs() <= sigmas * se.max(1e-12)
}

#[test]
fn single_walker_pmf() {
    let res = run(
        &leaky(0.5, 1.0, 2),
        1,
        1_000_000,
        11,
        SamplingMode::DirectWalk,
    );
    for (k, &count) in res.histogram.iter().take(8).enumerate() {
        let p = 0.5_f64.powi(k as i32 + 1);
        assert!(
            within(count as f64 / 1e6, p, 1_000_000, 3.0),
            "k = {k}: {count}"
        );
    }
}

#[test]
fn bethe_shortest_path_frequency() {
    let model = Model::Bethe(BetheSpec::new(3, 2).unwrap());
    let res = run(&model, 1, 1_000_000, 12, SamplingMode::DirectWalk);
    let hits = res.histogram[0] as f64 / 1e6;
    assert!(within(hits, 1.0 / 9.0, 1_000_000, 3.0), "{hits}");
    assert!(res.histogram.iter().skip(1).step_by(2).all(|&c| c == 0));
}

#[test]
fn large_lambda_hits_the_edge() {
    let model = leaky(0.5, 0.9, 50);
    let dist = model_fpt(&model, 0).unwrap();
    let walkers = (4.0 / dist.p_d()).round() as u64;
    let q = ExtremeQuery::new(&dist, walkers).unwrap();
    let res = run(&model, walkers, 5_000, 13, SamplingMode::DirectWalk);
    let expected = 1.0 - q.tail(0).unwrap();
    assert!((expected - (1.0 - (-4.0_f64).exp())).abs() < 1e-3);
    assert!(within(res.histogram[0] as f64 / 5e3, expected, 5_000, 3.0));
}

#[test]
fn sampling_modes_agree() {
    let comet = Model::Comet(CometSpec::new(build_clique_head(4, 0, 3).unwrap(), 8, 0.9).unwrap());
    let cases = [
        (leaky(0.5, 0.9, 12), 30),
        (comet, 20),
        (Model::Bethe(BetheSpec::new(3, 4).unwrap()), 81),
    ];
    let trials = 100_000;
    for (i, (model, walkers)) in cases.iter().enumerate() {
        let direct = run(
            model,
            *walkers,
            trials,
            100 + i as u64,
            SamplingMode::DirectWalk,
        );
        let inverse = run(
            model,
            *walkers,
            trials,
            200 + i as u64,
            SamplingMode::InverseCdf,
        );
        for (a, b) in direct.tail.iter().zip(&inverse.tail) {
            let se = (a.se * a.se + b.se * b.se).sqrt();
            assert!(
                (a.p_hat - b.p_hat).abs() <= 3.0 * se.max(1e-12),
                "{} k = {}: {} vs {}",
                model.kind(),
                a.k,
                a.p_hat,
                b.p_hat
            );
        }
    }
}

#[test]
fn no_arrival_rate_matches_defect() {
    let model = leaky(0.5, 0.9, 50);
    let dist = model_fpt(&model, 200).unwrap();
    let q = ExtremeQuery::new(&dist, 349).unwrap();
    let expected = q.never_arrives();
    assert!((expected - (1.0 - 0.9_f64.powi(49)).powi(349)).abs() < 1e-12);
    let res = run(&model, 349, 20_000, 14, SamplingMode::DirectWalk);
    assert!(within(
        res.no_arrival_count as f64 / 2e4,
        expected,
        20_000,
        3.0
    ));
    assert_eq!(res.horizon_censored, 0);
}

#[test]
fn thread_count_does_not_change_results() {
    let model = Model::Bethe(BetheSpec::new(3, 3).unwrap());
    let mut cfg = McConfig::new(model, WalkerCount::Lambda(1.0));
    cfg.trials = 3000;
    cfg.seed = 99;
    cfg.threads = Some(1);
    let one = serde_json::to_string(&run_trials(&cfg).unwrap()).unwrap();
    cfg.threads = Some(4);
    let four = serde_json::to_string(&run_trials(&cfg).unwrap()).unwrap();
    assert_eq!(one, four);
    cfg.seed = 100;
    assert_ne!(
        one,
        serde_json::to_string(&run_trials(&cfg).unwrap()).unwrap()
    );
}
