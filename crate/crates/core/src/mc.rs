//! Seeded Monte Carlo of the min-of-N first-passage process.
//!
//! Every walker owns an independent ChaCha8 stream keyed by
//! `(master seed, trial index, walker index)`: the seed fixes the key, the
//! trial selects the 64-bit stream id and the walker selects a disjoint
//! block range of the counter. A trial's outcome therefore does not depend
//! on how trials are scheduled across threads, and per-trial results are
//! merged as integer histograms.
//!
//! Walkers of one trial run one after another, each cut off as soon as it
//! can no longer beat the best arrival so far (`t + distance_left ≥ best`).
//! Since each walker's path is a fixed function of its stream, this returns
//! the same minimum as stepping all `N` walkers in lockstep; the trial stops
//! outright once some walker arrives at the hard edge.

use std::time::{Duration, Instant};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evt::n_for_lambda;
use crate::fpt::{model_fpt, FptDistribution};
use crate::graph::{Model, StepTarget};
use crate::numeric::{bootstrap, sample_variance};

/// Bits of counter space (in 32-bit words) reserved for each walker.
const WALKER_WORD_SHIFT: u32 = 36;

/// Default number of steps past the hard edge a trial is followed.
pub const DEFAULT_EXTRA_STEPS: u64 = 200;

/// Hands out the per-walker streams of one master seed.
#[derive(Debug, Clone)]
pub struct StreamFactory {
    template: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self {
            template: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn walker_stream(&self, trial: u64, walker: u64) -> ChaCha8Rng {
        debug_assert!(walker < 1 << 32);
        let mut rng = self.template.clone();
        rng.set_stream(trial);
        rng.set_word_pos(u128::from(walker) << WALKER_WORD_SHIFT);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Step each walker through the model.
    #[default]
    DirectWalk,
    /// Invert the exact single-walker CDF, defect included.
    InverseCdf,
}

/// What became of one walker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkOutcome {
    Arrived(u64),
    /// Absorbed in the cemetery (killed on the tail).
    Killed,
    /// Stopped because it could no longer arrive by the limit.
    Censored,
}

#[derive(Debug, Clone)]
struct CometWalker {
    /// Per node: cumulative step probabilities, `None` marking the tail edge.
    steps: Vec<Vec<(Option<usize>, f64)>>,
    /// Fewest steps from each node to the target, tail included.
    steps_to_target: Vec<u64>,
    start: usize,
    tail_hops: u64,
    survival: f64,
}

#[derive(Debug, Clone)]
enum Kind {
    Comet(CometWalker),
    DistanceChain { toward: f64, distance: u64 },
    InverseCdf { cumulative: Vec<f64>, arrival: f64 },
}

/// A model prepared for sampling single walkers.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: Kind,
    hard_edge: u64,
}

impl Sampler {
    /// Direct stochastic stepping per the model rules.
    pub fn direct(model: &Model) -> Result<Self> {
        model_ok(model)?;
        let hard_edge = model.distance() as u64;
        let kind = match model {
            Model::Comet(spec) => Kind::Comet(CometWalker::new(spec)),
            Model::LeakyLoop(spec) => Kind::Comet(CometWalker::new(&spec.to_comet()?)),
            Model::Bethe(spec) => Kind::DistanceChain {
                toward: 1.0 / spec.coordination as f64,
                distance: hard_edge,
            },
        };
        Ok(Self { kind, hard_edge })
    }

    /// Inverse transform of the exact law; needs masses up to `t_max`.
    pub fn inverse_cdf(dist: &FptDistribution, t_max: u64) -> Result<Self> {
        let d = dist.hard_edge() as u64;
        if t_max < d {
            return Err(Error::InvalidArgument(format!(
                "t_max = {t_max} below the hard edge {d}"
            )));
        }
        let span = (t_max - d) as usize;
        if span > dist.horizon() {
            return Err(Error::HorizonExceeded {
                requested: span as i64,
                horizon: dist.horizon(),
            });
        }
        let cumulative = (0..=span)
            .map(|k| dist.cumulative(k).expect("within horizon"))
            .collect();
        Ok(Self {
            kind: Kind::InverseCdf {
                cumulative,
                arrival: dist.arrival_probability(),
            },
            hard_edge: d,
        })
    }

    /// Distance chain for any `z ≥ 2`; `z = 2` is the diffusive reference.
    pub(crate) fn distance_chain(z: usize, distance: usize) -> Result<Self> {
        if z < 2 || distance < 1 {
            return Err(Error::InvalidArgument(format!(
                "distance chain needs z >= 2 and d >= 1, got z = {z}, d = {distance}"
            )));
        }
        Ok(Self {
            kind: Kind::DistanceChain {
                toward: 1.0 / z as f64,
                distance: distance as u64,
            },
            hard_edge: distance as u64,
        })
    }

    pub fn hard_edge(&self) -> u64 {
        self.hard_edge
    }

    /// Runs one walker, giving up once it cannot arrive by `limit`.
    pub fn walk<R: Rng>(&self, rng: &mut R, limit: u64) -> WalkOutcome {
        match &self.kind {
            Kind::Comet(comet) => comet.walk(rng, limit),
            Kind::DistanceChain { toward, distance } => {
                let (mut r, mut t) = (*distance, 0_u64);
                loop {
                    if t + r > limit {
                        return WalkOutcome::Censored;
                    }
                    t += 1;
                    if rng.random::<f64>() < *toward {
                        r -= 1;
                        if r == 0 {
                            return WalkOutcome::Arrived(t);
                        }
                    } else {
                        r += 1;
                    }
                }
            }
            Kind::InverseCdf {
                cumulative,
                arrival,
            } => {
                let u: f64 = rng.random();
                let last = *cumulative.last().expect("nonempty");
                if u < last {
                    let k = cumulative.partition_point(|&c| c <= u) as u64;
                    let t = self.hard_edge + k;
                    if t <= limit {
                        WalkOutcome::Arrived(t)
                    } else {
                        WalkOutcome::Censored
                    }
                } else if u < *arrival {
                    WalkOutcome::Censored
                } else {
                    WalkOutcome::Killed
                }
            }
        }
    }
}

impl CometWalker {
    fn new(spec: &crate::graph::CometSpec) -> Self {
        let head = &spec.head;
        let tail_hops = spec.tail_hops as u64;
        let steps = (0..head.node_count())
            .map(|u| {
                let mut acc = 0.0;
                let mut row: Vec<(Option<usize>, f64)> = head
                    .steps(u)
                    .iter()
                    .map(|&(target, p)| {
                        acc += p;
                        let next = match target {
                            StepTarget::Node(v) => Some(v),
                            StepTarget::Tail => None,
                        };
                        (next, acc)
                    })
                    .collect();
                if let Some(last) = row.last_mut() {
                    last.1 = f64::INFINITY;
                }
                row
            })
            .collect();
        let steps_to_target = (0..head.node_count())
            .map(|u| {
                head.exit_distance(u)
                    .map_or(u64::MAX / 4, |h| h as u64 + 1 + tail_hops)
            })
            .collect();
        Self {
            steps,
            steps_to_target,
            start: head.start(),
            tail_hops,
            survival: spec.survival,
        }
    }

    fn walk<R: Rng>(&self, rng: &mut R, limit: u64) -> WalkOutcome {
        let mut node = self.start;
        let mut t = 0_u64;
        loop {
            if t + self.steps_to_target[node] > limit {
                return WalkOutcome::Censored;
            }
            let u: f64 = rng.random();
            t += 1;
            let row = &self.steps[node];
            let pick = row
                .iter()
                .find(|(_, c)| u < *c)
                .expect("last entry is +inf");
            match pick.0 {
                Some(next) => node = next,
                None => break,
            }
        }
        for _ in 0..self.tail_hops {
            if rng.random::<f64>() >= self.survival {
                return WalkOutcome::Killed;
            }
        }
        WalkOutcome::Arrived(t + self.tail_hops)
    }
}

fn model_ok(model: &Model) -> Result<()> {
    let violations = model.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(violations))
    }
}

/// One walker's first-passage time, `None` if killed or past `t_max`.
pub fn simulate_walker<R: Rng>(sampler: &Sampler, rng: &mut R, t_max: u64) -> Option<u64> {
    match sampler.walk(rng, t_max) {
        WalkOutcome::Arrived(t) => Some(t),
        WalkOutcome::Killed | WalkOutcome::Censored => None,
    }
}

/// Result of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    /// `T_N`, or `None` if no walker arrived by `t_max`.
    pub min_time: Option<u64>,
    /// No arrival, and at least one walker was still alive at `t_max`.
    pub censored: bool,
}

/// Samples `T_N` for trial `trial`.
pub fn sample_min_of_n(
    sampler: &Sampler,
    walkers: u64,
    streams: &StreamFactory,
    trial: u64,
    t_max: u64,
) -> TrialOutcome {
    let d = sampler.hard_edge();
    let mut best: Option<u64> = None;
    let mut censored = false;
    for walker in 0..walkers {
        let limit = best.map_or(t_max, |b| b - 1);
        if limit < d {
            break;
        }
        let mut rng = streams.walker_stream(trial, walker);
        match sampler.walk(&mut rng, limit) {
            WalkOutcome::Arrived(t) => {
                assert!(t >= d, "arrival at {t} below the hard edge {d}");
                best = Some(t);
            }
            WalkOutcome::Censored => censored |= best.is_none(),
            WalkOutcome::Killed => {}
        }
    }
    TrialOutcome {
        min_time: best,
        censored: censored && best.is_none(),
    }
}

/// Number of walkers per trial, given directly or through `λ = N p_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WalkerCount {
    Count(u64),
    Lambda(f64),
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub model: Model,
    pub walkers: WalkerCount,
    pub trials: u64,
    pub seed: u64,
    /// Defaults to `d + 200`.
    pub t_max: Option<u64>,
    pub mode: SamplingMode,
    /// Largest `k` reported in the empirical tail.
    pub tail_k_max: usize,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl McConfig {
    pub fn new(model: Model, walkers: WalkerCount) -> Self {
        Self {
            model,
            walkers,
            trials: 10_000,
            seed: 0,
            t_max: None,
            mode: SamplingMode::default(),
            tail_k_max: 20,
            threads: None,
        }
    }

    pub fn resolved_t_max(&self) -> u64 {
        self.t_max
            .unwrap_or(self.model.distance() as u64 + DEFAULT_EXTRA_STEPS)
    }

    pub fn resolved_walkers(&self) -> Result<u64> {
        match self.walkers {
            WalkerCount::Count(n) => Ok(n),
            WalkerCount::Lambda(lambda) => n_for_lambda(&model_fpt(&self.model, 0)?, lambda),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub k: usize,
    pub p_hat: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub wall: Duration,
    pub walkers_per_second: f64,
}

/// Aggregated trials. Serializes without the timing block so that output
/// bytes depend only on `(config, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub model: &'static str,
    pub hard_edge: u64,
    pub walkers: u64,
    pub trials: u64,
    pub seed: u64,
    pub t_max: u64,
    pub mode: SamplingMode,
    pub arrivals: u64,
    pub no_arrival_count: u64,
    pub horizon_censored: u64,
    /// `P̂(T_N > d + k)` over all trials; no-arrival trials count as `> t`.
    pub tail: Vec<TailPoint>,
    /// Conditional on arrival.
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    /// `histogram[k]` trials ended with `T_N = d + k`.
    pub histogram: Vec<u64>,
    #[serde(skip)]
    pub timing: Timing,
}

impl McResult {
    /// Arrival times of the arrived trials, in increasing order.
    pub fn samples(&self) -> Vec<f64> {
        self.histogram
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n((self.hard_edge + k as u64) as f64, c as usize))
            .collect()
    }

    /// Bootstrap standard error of the conditional sample variance.
    pub fn variance_bootstrap_se(&self, resamples: usize, seed: u64) -> f64 {
        let reps = bootstrap(&self.samples(), sample_variance, resamples, seed);
        sample_variance(&reps).sqrt()
    }
}

#[derive(Debug, Clone)]
struct Tally {
    histogram: Vec<u64>,
    no_arrival: u64,
    censored: u64,
}

impl Tally {
    fn new(bins: usize) -> Self {
        Self {
            histogram: vec![0; bins],
            no_arrival: 0,
            censored: 0,
        }
    }

    fn record(mut self, outcome: TrialOutcome, d: u64) -> Self {
        match outcome.min_time {
            Some(t) => self.histogram[(t - d) as usize] += 1,
            None => self.no_arrival += 1,
        }
        self.censored += u64::from(outcome.censored);
        self
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
        self.no_arrival += other.no_arrival;
        self.censored += other.censored;
        self
    }
}

/// Runs all trials and aggregates them.
pub fn run_trials(config: &McConfig) -> Result<McResult> {
    model_ok(&config.model)?;
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let walkers = config.resolved_walkers()?;
    if walkers == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    if walkers > 1 << 32 {
        return Err(Error::InvalidArgument(format!(
            "N = {walkers} exceeds the 2^32 walker streams per trial"
        )));
    }
    let d = config.model.distance() as u64;
    let t_max = config.resolved_t_max();
    if t_max <= d {
        return Err(Error::InvalidArgument(format!(
            "t_max = {t_max} must exceed d = {d}"
        )));
    }
    let sampler = match config.mode {
        SamplingMode::DirectWalk => Sampler::direct(&config.model)?,
        SamplingMode::InverseCdf => {
            let dist = model_fpt(&config.model, (t_max - d) as usize)?;
            Sampler::inverse_cdf(&dist, t_max)?
        }
    };
    let streams = StreamFactory::new(config.seed);
    let bins = (t_max - d + 1) as usize;

    let started = Instant::now();
    let run = || {
        (0..config.trials)
            .into_par_iter()
            .fold(
                || Tally::new(bins),
                |tally, trial| {
                    let outcome = sample_min_of_n(&sampler, walkers, &streams, trial, t_max);
                    tally.record(outcome, d)
                },
            )
            .reduce(|| Tally::new(bins), Tally::merge)
    };
    let tally = match config.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let wall = started.elapsed();

    let arrivals = config.trials - tally.no_arrival;
    if arrivals == 0 {
        return Err(Error::NoArrivals {
            no_arrival: tally.no_arrival,
            trials: config.trials,
        });
    }
    if tally.censored > 0 {
        warn!(
            "{} of {} trials reached t_max = {t_max} with walkers still alive; counted as no arrival",
            tally.censored, config.trials
        );
    }

    let n = config.trials as f64;
    let mut beyond = tally.no_arrival + tally.histogram.iter().sum::<u64>();
    let tail = (0..=config.tail_k_max)
        .map(|k| {
            beyond -= tally.histogram.get(k).copied().unwrap_or(0);
            let p_hat = beyond as f64 / n;
            TailPoint {
                k,
                p_hat,
                se: (p_hat * (1.0 - p_hat) / n).sqrt(),
            }
        })
        .collect();

    let (mean_k, variance) = histogram_moments(&tally.histogram, arrivals);
    let mut histogram = tally.histogram;
    while histogram.len() > 1 && histogram.last() == Some(&0) {
        histogram.pop();
    }
    Ok(McResult {
        model: config.model.kind(),
        hard_edge: d,
        walkers,
        trials: config.trials,
        seed: config.seed,
        t_max,
        mode: config.mode,
        arrivals,
        no_arrival_count: tally.no_arrival,
        horizon_censored: tally.censored,
        tail,
        mean: d as f64 + mean_k,
        mean_se: (variance / arrivals as f64).sqrt(),
        variance,
        histogram,
        timing: Timing {
            wall,
            walkers_per_second: (config.trials * walkers) as f64 / wall.as_secs_f64().max(1e-9),
        },
    })
}

/// Mean offset `k` and `n - 1` variance of an arrival histogram.
fn histogram_moments(histogram: &[u64], arrivals: u64) -> (f64, f64) {
    let n = arrivals as f64;
    let mean = histogram
        .iter()
        .enumerate()
        .map(|(k, &c)| k as f64 * c as f64)
        .sum::<f64>()
        / n;
    if arrivals < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = histogram
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * (k as f64 - mean).powi(2))
        .sum();
    (mean, ss / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpt::leaky_loop_fpt;
    use crate::graph::{build_leaky_loop, BetheSpec};

    fn leaky(s: f64, mu: f64, d: usize) -> Model {
        Model::LeakyLoop(build_leaky_loop(s, mu, d).unwrap())
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let f = StreamFactory::new(7);
        let a: Vec<u64> = (0..4).map(|_| f.walker_stream(3, 5).random()).collect();
        let mut r = f.walker_stream(3, 5);
        let b: Vec<u64> = (0..4).map(|_| r.random()).collect();
        assert_eq!(a[0], b[0]);
        let mut other = f.walker_stream(3, 6);
        assert_ne!(b[0], other.random::<u64>());
        let mut other_trial = f.walker_stream(4, 5);
        assert_ne!(b[0], other_trial.random::<u64>());
    }

    #[test]
    fn deterministic_walker() {
        let sampler = Sampler::direct(&leaky(0.0, 1.0, 5)).unwrap();
        let f = StreamFactory::new(1);
        for w in 0..100 {
            assert_eq!(
                simulate_walker(&sampler, &mut f.walker_stream(0, w), 300),
                Some(5)
            );
        }
    }

    #[test]
    fn censoring_and_killing() {
        let sampler = Sampler::direct(&leaky(0.0, 1.0, 5)).unwrap();
        let mut rng = StreamFactory::new(1).walker_stream(0, 0);
        assert_eq!(sampler.walk(&mut rng, 4), WalkOutcome::Censored);

        let model = leaky(0.0, 0.5, 30);
        let dist = leaky_loop_fpt(&build_leaky_loop(0.0, 0.5, 30).unwrap(), 10).unwrap();
        let inverse = Sampler::inverse_cdf(&dist, 40).unwrap();
        let direct = Sampler::direct(&model).unwrap();
        let f = StreamFactory::new(2);
        for w in 0..200 {
            assert_eq!(
                direct.walk(&mut f.walker_stream(0, w), 100),
                WalkOutcome::Killed
            );
            assert_eq!(
                inverse.walk(&mut f.walker_stream(0, w), 100),
                WalkOutcome::Killed
            );
        }
    }

    #[test]
    fn single_trial_has_degenerate_variance() {
        let mut cfg = McConfig::new(leaky(0.5, 1.0, 3), WalkerCount::Count(2));
        cfg.trials = 1;
        let res = run_trials(&cfg).unwrap();
        assert_eq!(res.arrivals, 1);
        assert_eq!(res.variance, 0.0);
    }

    #[test]
    fn all_killed_is_an_error() {
        let mut cfg = McConfig::new(leaky(0.0, 0.01, 40), WalkerCount::Count(1));
        cfg.trials = 50;
        assert!(matches!(
            run_trials(&cfg),
            Err(Error::NoArrivals {
                no_arrival: 50,
                trials: 50
            })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = McConfig::new(leaky(0.5, 1.0, 3), WalkerCount::Count(2));
        cfg.t_max = Some(3);
        assert!(run_trials(&cfg).is_err());
        cfg.t_max = None;
        cfg.trials = 0;
        assert!(run_trials(&cfg).is_err());
        let bad = Model::Bethe(BetheSpec {
            coordination: 2,
            distance: 3,
        });
        assert!(Sampler::direct(&bad).is_err());
    }

    #[test]
    fn lambda_resolves_walkers() {
        let cfg = McConfig::new(leaky(0.5, 0.9, 50), WalkerCount::Lambda(1.0));
        assert_eq!(cfg.resolved_walkers().unwrap(), 349);
        assert_eq!(cfg.resolved_t_max(), 250);
    }
}
