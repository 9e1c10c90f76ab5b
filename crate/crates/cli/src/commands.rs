use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::Serialize;
use xfpt_core::diagnostics::{classify, estimate_drift, DriftEstimate, Family, Regime};
use xfpt_core::evt::{
    default_truncation, extreme_hit_prob, f_from_pmf, moment_asymptotic, moment_exact,
    n_for_lambda, tail_asymptotic, AsymptoticMode, ExtremeQuery, MeanMode,
};
use xfpt_core::fpt::{model_fpt, model_fpt_auto, FptDistribution};
use xfpt_core::mc::{run_trials, McConfig, McResult, WalkerCount};
use xfpt_core::{EntropicProfile, Model};

use crate::config::{AsymptoticChoice, RunConfig, WalkerSpec};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Header, Sink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Exact,
    Simulate,
    Compare,
    Diagnose,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Exact => "exact",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Diagnose => "diagnose",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ComparisonFailed,
}

/// Runs one subcommand, writing its artifacts into `out`.
pub fn run(
    command: Command,
    config: &RunConfig,
    out: &Path,
    threads: Option<usize>,
) -> CliResult<Outcome> {
    let sink = Sink::new(out, Header::new(command.name(), config), &config.output)?;
    let model = config.model.build()?;
    match command {
        Command::Exact => cmd_exact(config, &model, &sink).map(|_| Outcome::Success),
        Command::Simulate => cmd_simulate(config, &model, &sink, threads).map(|_| Outcome::Success),
        Command::Compare => cmd_compare(config, &model, &sink, threads),
        Command::Diagnose => cmd_diagnose(config, &model, &sink, threads).map(|_| Outcome::Success),
        Command::Sweep => cmd_sweep(config, &model, &sink, threads).map(|_| Outcome::Success),
    }
}

/// `N` and the nominal `λ`: as given when `λ` is configured, else `N p_d`.
fn resolve_walkers(model: &Model, spec: WalkerSpec) -> CliResult<(u64, f64)> {
    let shortest = model_fpt(model, 0)?;
    match spec {
        WalkerSpec::Lambda(lambda) => Ok((n_for_lambda(&shortest, lambda)?, lambda)),
        WalkerSpec::Count(0) => Err(CliError::Config("statistics.n must be at least 1".into())),
        WalkerSpec::Count(n) => Ok((n, n as f64 * shortest.p_d())),
    }
}

/// Exact and asymptotic quantities for one walker count.
struct Theory {
    dist: FptDistribution,
    walkers: u64,
    lambda: f64,
    /// `F(0..=K)` over the whole horizon, for the asymptotic series.
    profile: EntropicProfile,
    asymptotic_mode: AsymptoticMode,
}

impl Theory {
    fn new(config: &RunConfig, model: &Model, spec: WalkerSpec) -> CliResult<Self> {
        let stats = &config.statistics;
        let (walkers, lambda) = resolve_walkers(model, spec)?;
        let asymptotic_mode = match stats.asymptotic {
            AsymptoticChoice::Conditional => AsymptoticMode::Conditional,
            AsymptoticChoice::Truncated => AsymptoticMode::Truncated(
                stats
                    .truncation
                    .unwrap_or_else(|| default_truncation(walkers)),
            ),
        };
        let needed = match asymptotic_mode {
            AsymptoticMode::Truncated(cutoff) => stats.k_max.max(cutoff),
            AsymptoticMode::Conditional => stats.k_max,
        };
        let dist = match stats.horizon {
            Some(h) => model_fpt(model, h.max(needed))?,
            None => {
                let auto = model_fpt_auto(model, walkers)?;
                if auto.horizon() >= needed {
                    auto
                } else {
                    model_fpt(model, needed)?
                }
            }
        };
        let profile = f_from_pmf(&dist, dist.horizon())?;
        Ok(Self {
            dist,
            walkers,
            lambda,
            profile,
            asymptotic_mode,
        })
    }

    fn query(&self) -> ExtremeQuery<'_> {
        ExtremeQuery::new(&self.dist, self.walkers).expect("walkers >= 1")
    }

    fn tail_exact(&self, k: usize) -> CliResult<f64> {
        Ok(self.query().tail(k as i64)?)
    }

    fn tail_asymptotic(&self, k: usize) -> CliResult<f64> {
        Ok(tail_asymptotic(self.lambda, &self.profile, k as i64)?)
    }

    fn moments_exact(&self, mode: MeanMode, orders: &[u32]) -> CliResult<Moments> {
        let q = self.query();
        let first = moment_exact(&q, 1, mode)?;
        let second = moment_exact(&q, 2, mode)?;
        let mut by_order = BTreeMap::new();
        for &m in orders {
            by_order.insert(m.to_string(), moment_exact(&q, m, mode)?.value);
        }
        Ok(Moments {
            mean: self.dist.hard_edge() as f64 + first.value,
            variance: (second.value - first.value * first.value).max(0.0),
            offset_moments: by_order,
            series_residual: Some(first.residual.max(second.residual)),
        })
    }

    fn moments_asymptotic(&self, orders: &[u32]) -> CliResult<Moments> {
        let m = |order| moment_asymptotic(order, self.lambda, &self.profile, self.asymptotic_mode);
        let first = m(1)?;
        let second = m(2)?;
        let mut by_order = BTreeMap::new();
        for &order in orders {
            by_order.insert(order.to_string(), m(order)?);
        }
        Ok(Moments {
            mean: self.dist.hard_edge() as f64 + first,
            variance: (second - first * first).max(0.0),
            offset_moments: by_order,
            series_residual: None,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct Moments {
    mean: f64,
    variance: f64,
    /// `⟨(T_N - d)^m⟩` keyed by `m`.
    offset_moments: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    series_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ProfileSummary {
    values: Vec<f64>,
    limit: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ExactSummary {
    model: &'static str,
    d: usize,
    p_d: f64,
    walkers: u64,
    lambda: f64,
    lambda_effective: f64,
    horizon: usize,
    defect: f64,
    residual_bound: f64,
    hit_probability: f64,
    never_arrives: f64,
    mean_mode: MeanMode,
    asymptotic_mode: AsymptoticMode,
    exact: Moments,
    asymptotic: Moments,
    entropic_profile: ProfileSummary,
}

fn moment_orders(config: &RunConfig) -> CliResult<Vec<u32>> {
    let orders = config.statistics.moments.clone();
    if orders.contains(&0) {
        return Err(CliError::Config(
            "statistics.moments: orders start at 1".into(),
        ));
    }
    Ok(orders)
}

fn cmd_exact(config: &RunConfig, model: &Model, sink: &Sink) -> CliResult<()> {
    let stats = &config.statistics;
    let theory = Theory::new(config, model, stats.walker_spec()?)?;
    let orders = moment_orders(config)?;
    let dist = &theory.dist;
    let d = dist.hard_edge();

    let fpt_header = serde_json::to_string(&dist.header()).expect("serializes");
    sink.csv(
        "distribution.csv",
        &[format!("fpt: {fpt_header}")],
        &["t", "p", "S"],
        (0..=d + dist.horizon()).map(|t| {
            vec![
                Cell::from(t),
                Cell::from(dist.mass_at(t).expect("within horizon")),
                Cell::from(dist.survival(t).expect("within horizon")),
            ]
        }),
    )?;

    let rows = (0..=stats.k_max)
        .map(|k| {
            Ok(vec![
                Cell::from(k),
                Cell::from(theory.tail_exact(k)?),
                Cell::from(theory.tail_asymptotic(k)?),
            ])
        })
        .collect::<CliResult<Vec<_>>>()?;
    sink.csv(
        "tail.csv",
        &[],
        &["k", "tail_exact", "tail_asymptotic"],
        rows,
    )?;

    let q = theory.query();
    let summary = ExactSummary {
        model: model.kind(),
        d,
        p_d: dist.p_d(),
        walkers: theory.walkers,
        lambda: theory.lambda,
        lambda_effective: q.lambda(),
        horizon: dist.horizon(),
        defect: dist.defect(),
        residual_bound: dist.residual_bound(),
        hit_probability: extreme_hit_prob(&q),
        never_arrives: q.never_arrives(),
        mean_mode: stats.mean_mode,
        asymptotic_mode: theory.asymptotic_mode,
        exact: theory.moments_exact(stats.mean_mode, &orders)?,
        asymptotic: theory.moments_asymptotic(&orders)?,
        entropic_profile: ProfileSummary {
            values: theory.profile.values()[..=stats.k_max].to_vec(),
            limit: theory.profile.limit(),
        },
    };
    sink.json("summary.json", &summary)?;
    Ok(())
}

fn mc_config(
    config: &RunConfig,
    model: &Model,
    walkers: u64,
    threads: Option<usize>,
) -> CliResult<McConfig> {
    let mc_model = match &config.mc.model {
        Some(m) => m.build()?,
        None => model.clone(),
    };
    let mut mc = McConfig::new(mc_model, WalkerCount::Count(walkers));
    mc.trials = config.mc.trials;
    mc.seed = config.mc.seed;
    mc.t_max = config.mc.t_max;
    mc.mode = config.mc.mode;
    mc.tail_k_max = config.statistics.k_max;
    mc.threads = threads;
    Ok(mc)
}

fn simulate(mc: &McConfig) -> CliResult<McResult> {
    let result = run_trials(mc)?;
    eprintln!(
        "xfpt: {} trials x {} walkers in {:.3} s ({:.3e} walkers/s)",
        result.trials,
        result.walkers,
        result.timing.wall.as_secs_f64(),
        result.timing.walkers_per_second
    );
    Ok(result)
}

fn write_mc_tail(sink: &Sink, result: &McResult) -> CliResult<()> {
    sink.csv(
        "mc_tail.csv",
        &[],
        &["k", "p_hat", "se", "n_trials"],
        result.tail.iter().map(|p| {
            vec![
                Cell::from(p.k),
                Cell::from(p.p_hat),
                Cell::from(p.se),
                Cell::from(result.trials),
            ]
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateBody<'a> {
    result: &'a McResult,
}

fn cmd_simulate(
    config: &RunConfig,
    model: &Model,
    sink: &Sink,
    threads: Option<usize>,
) -> CliResult<()> {
    let (walkers, _) = resolve_walkers(model, config.statistics.walker_spec()?)?;
    let result = simulate(&mc_config(config, model, walkers, threads)?)?;
    sink.json("mc_result.json", &SimulateBody { result: &result })?;
    write_mc_tail(sink, &result)
}

/// `(observed - expected) / sqrt(expected (1 - expected) / n)`.
fn binomial_z(observed: f64, expected: f64, trials: u64) -> (f64, f64) {
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    (se, ratio_or_inf(observed - expected, se))
}

fn ratio_or_inf(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

#[derive(Debug, Clone, Serialize)]
struct CompareReport {
    pass: bool,
    walkers: u64,
    lambda: f64,
    trials: u64,
    seed: u64,
    no_arrival_count: u64,
    z_max: f64,
    mean_sigma: f64,
    max_abs_z: f64,
    worst_k: usize,
    mean_exact: f64,
    mean_mc: f64,
    mean_se: f64,
    mean_z: f64,
    variance_exact: f64,
    variance_mc: f64,
    mean_asymptotic: f64,
    asymptotic_max_abs_z: f64,
    asymptotic_mean_z: f64,
    /// The asymptotic law is statistically distinguishable from the MC run.
    asymptotic_divergence: bool,
}

fn cmd_compare(
    config: &RunConfig,
    model: &Model,
    sink: &Sink,
    threads: Option<usize>,
) -> CliResult<Outcome> {
    let stats = &config.statistics;
    let theory = Theory::new(config, model, stats.walker_spec()?)?;
    let result = simulate(&mc_config(config, model, theory.walkers, threads)?)?;
    let trials = result.trials;

    let mut rows = Vec::with_capacity(stats.k_max + 1);
    let (mut max_abs_z, mut worst_k, mut asym_max_abs_z) = (0.0_f64, 0, 0.0_f64);
    for point in &result.tail {
        let exact = theory.tail_exact(point.k)?;
        let asym = theory.tail_asymptotic(point.k)?;
        let (se, z) = binomial_z(point.p_hat, exact, trials);
        let (_, z_asym) = binomial_z(point.p_hat, asym, trials);
        if z.abs() > max_abs_z {
            max_abs_z = z.abs();
            worst_k = point.k;
        }
        asym_max_abs_z = asym_max_abs_z.max(z_asym.abs());
        rows.push(vec![
            Cell::from(point.k),
            Cell::from(exact),
            Cell::from(asym),
            Cell::from(point.p_hat),
            Cell::from(se),
            Cell::from(z),
        ]);
    }
    sink.csv(
        "compare.csv",
        &[],
        &[
            "k",
            "tail_exact",
            "tail_asymptotic",
            "tail_mc",
            "se",
            "z_score",
        ],
        rows,
    )?;

    let exact = theory.moments_exact(MeanMode::Conditional, &[1])?;
    let asymptotic = theory.moments_asymptotic(&[1])?;
    let mean_z = ratio_or_inf(result.mean - exact.mean, result.mean_se);
    let asymptotic_mean_z = ratio_or_inf(result.mean - asymptotic.mean, result.mean_se);
    let cmp = config.compare;
    let pass = max_abs_z <= cmp.z_max && mean_z.abs() <= cmp.mean_sigma;
    let report = CompareReport {
        pass,
        walkers: theory.walkers,
        lambda: theory.lambda,
        trials,
        seed: result.seed,
        no_arrival_count: result.no_arrival_count,
        z_max: cmp.z_max,
        mean_sigma: cmp.mean_sigma,
        max_abs_z,
        worst_k,
        mean_exact: exact.mean,
        mean_mc: result.mean,
        mean_se: result.mean_se,
        mean_z,
        variance_exact: exact.variance,
        variance_mc: result.variance,
        mean_asymptotic: asymptotic.mean,
        asymptotic_max_abs_z: asym_max_abs_z,
        asymptotic_mean_z,
        asymptotic_divergence: asym_max_abs_z > cmp.z_max
            || asymptotic_mean_z.abs() > cmp.mean_sigma,
    };
    sink.json("compare_report.json", &report)?;
    eprintln!(
        "xfpt compare: {} (max |z| = {:.3} at k = {}, mean z = {:.3}{})",
        if pass { "PASS" } else { "FAIL" },
        max_abs_z,
        worst_k,
        mean_z,
        if report.asymptotic_divergence {
            "; asymptotic law diverges from MC"
        } else {
            ""
        }
    );
    Ok(if pass {
        Outcome::Success
    } else {
        Outcome::ComparisonFailed
    })
}

fn cmd_diagnose(
    config: &RunConfig,
    model: &Model,
    sink: &Sink,
    threads: Option<usize>,
) -> CliResult<()> {
    let diag = &config.diagnose;
    let k_max = diag.k_max.unwrap_or(config.statistics.k_max);
    let family = Family::from_model(model);
    let mut report = classify(&family, &diag.d_list, k_max, &diag.classify_options())?;

    if let (Some(trials), Regime::BulkLimited) = (diag.drift_trials, report.classification) {
        let d = *report.d_values.last().expect("at least three distances");
        report.drift = drift(config, &family, d, trials, threads)?;
    }

    let mut columns = vec!["k".to_string()];
    columns.extend(report.d_values.iter().map(|d| d.to_string()));
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    sink.csv(
        "entropic_profile.csv",
        &[],
        &columns,
        (0..=k_max).map(|k| {
            let mut row = vec![Cell::from(k)];
            row.extend(report.f_matrix.iter().map(|f| Cell::from(f[k])));
            row
        }),
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        report: &'a xfpt_core::diagnostics::RegimeReport,
    }
    sink.json("regime_report.json", &Body { report: &report })?;
    Ok(())
}

fn drift(
    config: &RunConfig,
    family: &Family,
    distance: usize,
    trials: u64,
    threads: Option<usize>,
) -> CliResult<Option<DriftEstimate>> {
    let mut mc = McConfig::new(family.model_at(distance)?, WalkerCount::Count(1));
    mc.trials = trials;
    mc.seed = config.mc.seed;
    mc.t_max = config.mc.t_max;
    mc.threads = threads;
    let samples = match run_trials(&mc) {
        Ok(result) => result.samples(),
        Err(xfpt_core::Error::NoArrivals { .. }) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    match estimate_drift(
        distance,
        &samples,
        config.diagnose.drift_resamples,
        config.mc.seed,
    ) {
        Ok(est) => Ok(Some(est)),
        Err(e @ xfpt_core::Error::TooFewSamples { .. }) => {
            warn!("drift estimate skipped at d = {distance}: {e}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    lambda: f64,
    n: u64,
    mean_exact: f64,
    mean_asymptotic: f64,
    var_exact: f64,
    var_asymptotic: f64,
    mean_mc: f64,
    mean_mc_se: f64,
    var_mc: f64,
    var_mc_se: f64,
    no_arrival_fraction: f64,
}

fn cmd_sweep(
    config: &RunConfig,
    model: &Model,
    sink: &Sink,
    threads: Option<usize>,
) -> CliResult<()> {
    let sweep = &config.sweep;
    let grid: Vec<WalkerSpec> = match (sweep.lambda.is_empty(), sweep.n.is_empty()) {
        (false, true) => sweep
            .lambda
            .iter()
            .map(|&l| WalkerSpec::Lambda(l))
            .collect(),
        (true, false) => sweep.n.iter().map(|&n| WalkerSpec::Count(n)).collect(),
        (true, true) => return Err(CliError::Config("sweep: parameter grid is empty".into())),
        (false, false) => {
            return Err(CliError::Config(
                "sweep: give either a lambda grid or an n grid, not both".into(),
            ))
        }
    };
    let mean_mode = config.statistics.mean_mode;
    let mut rows = Vec::with_capacity(grid.len());
    for spec in grid {
        let theory = Theory::new(config, model, spec)?;
        let exact = theory.moments_exact(mean_mode, &[1])?;
        let asymptotic = theory.moments_asymptotic(&[1])?;
        let mut row = SweepRow {
            lambda: theory.lambda,
            n: theory.walkers,
            mean_exact: exact.mean,
            mean_asymptotic: asymptotic.mean,
            var_exact: exact.variance,
            var_asymptotic: asymptotic.variance,
            mean_mc: f64::NAN,
            mean_mc_se: f64::NAN,
            var_mc: f64::NAN,
            var_mc_se: f64::NAN,
            no_arrival_fraction: f64::NAN,
        };
        if sweep.mc {
            let result = simulate(&mc_config(config, model, theory.walkers, threads)?)?;
            row.mean_mc = result.mean;
            row.mean_mc_se = result.mean_se;
            row.var_mc = result.variance;
            row.var_mc_se = result.variance_bootstrap_se(sweep.variance_resamples, config.mc.seed);
            row.no_arrival_fraction = result.no_arrival_count as f64 / result.trials as f64;
        }
        rows.push(row);
    }
    sink.csv(
        "sweep.csv",
        &[],
        &[
            "lambda",
            "n",
            "mean_exact",
            "mean_asymptotic",
            "var_exact",
            "var_asymptotic",
            "mean_mc",
            "mean_mc_se",
            "var_mc",
            "var_mc_se",
            "no_arrival_fraction",
        ],
        rows.iter().map(|r| {
            vec![
                Cell::from(r.lambda),
                Cell::from(r.n),
                Cell::from(r.mean_exact),
                Cell::from(r.mean_asymptotic),
                Cell::from(r.var_exact),
                Cell::from(r.var_asymptotic),
                Cell::from(r.mean_mc),
                Cell::from(r.mean_mc_se),
                Cell::from(r.var_mc),
                Cell::from(r.var_mc_se),
                Cell::from(r.no_arrival_fraction),
            ]
        }),
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [SweepRow],
    }
    // NaN has no JSON form; serde_json writes null for it.
    sink.json("sweep.json", &Body { rows: &rows })?;
    Ok(())
}
