//! Distance sweeps of the entropic function and regime classification.
//!
//! Sweeps use exact distributions only; Monte Carlo enters through the
//! optional drift estimate.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evt::{f_from_pmf, EntropicProfile};
use crate::fpt::{distance_chain_fpt, model_fpt, FptDistribution};
use crate::graph::{build_leaky_loop, BetheSpec, CometSpec, HeadGraph, Model};
use crate::mc::{Sampler, StreamFactory, WalkOutcome};
use crate::numeric::{bootstrap, linear_fit, mean, quantile, LinearFit};

/// A model family with the source–target distance left free.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    LeakyLoop {
        stay: f64,
        survival: f64,
    },
    /// Distance varies through the tail length only.
    Comet {
        head: HeadGraph,
        survival: f64,
    },
    Bethe {
        coordination: usize,
    },
}

impl Family {
    pub fn from_model(model: &Model) -> Self {
        match model {
            Model::LeakyLoop(l) => Family::LeakyLoop {
                stay: l.stay,
                survival: l.survival,
            },
            Model::Comet(c) => Family::Comet {
                head: c.head.clone(),
                survival: c.survival,
            },
            Model::Bethe(b) => Family::Bethe {
                coordination: b.coordination,
            },
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Family::LeakyLoop { .. } => "leaky-loop",
            Family::Comet { .. } => "comet",
            Family::Bethe { .. } => "bethe",
        }
    }

    pub fn model_at(&self, distance: usize) -> Result<Model> {
        match self {
            Family::LeakyLoop { stay, survival } => Ok(Model::LeakyLoop(build_leaky_loop(
                *stay, *survival, distance,
            )?)),
            Family::Comet { head, survival } => {
                let d_head = head.shortest_exit_steps();
                if distance < d_head {
                    return Err(Error::InvalidArgument(format!(
                        "comet distance {distance} below the head distance {d_head}"
                    )));
                }
                Ok(Model::Comet(CometSpec::new(
                    head.clone(),
                    distance - d_head,
                    *survival,
                )?))
            }
            Family::Bethe { coordination } => {
                Ok(Model::Bethe(BetheSpec::new(*coordination, distance)?))
            }
        }
    }

    pub fn fpt(&self, distance: usize, k_max: usize) -> Result<FptDistribution> {
        model_fpt(&self.model_at(distance)?, k_max)
    }
}

/// `F(k; d)` for every `d` in `d_list`, from exact masses.
pub fn entropic_profile(
    family: &Family,
    d_list: &[usize],
    k_max: usize,
) -> Result<BTreeMap<usize, EntropicProfile>> {
    d_list
        .par_iter()
        .map(|&d| Ok((d, f_from_pmf(&family.fpt(d, k_max)?, k_max)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    /// Largest range of `F(k; ·)` over `d` still called invariant.
    pub invariance_tol: f64,
    /// Growth-slope significance, in standard errors, for bulk-limited.
    pub slope_sigma: f64,
    /// Offset `k` whose `F(k; d)` is regressed on `d`.
    pub fit_k: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            invariance_tol: 1e-9,
            slope_sigma: 5.0,
            fit_k: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    InjectionLimited,
    BulkLimited,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFit {
    pub k: usize,
    #[serde(flatten)]
    pub fit: LinearFit,
    pub significance: f64,
}

/// `p_{d+2ℓ} / p_d` across the probed distances, with a linear fit in `d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionCoefficient {
    pub ell: usize,
    pub ratios: Vec<f64>,
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub distance: usize,
    pub samples: usize,
    pub mean_arrival: f64,
    pub v_drift: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub family: &'static str,
    pub d_values: Vec<usize>,
    pub k_max: usize,
    /// `f_matrix[i][k] = F(k; d_values[i])`.
    pub f_matrix: Vec<Vec<f64>>,
    /// `max_k (max_d F(k; d) - min_d F(k; d))`.
    pub invariance_score: f64,
    pub growth_fit: GrowthFit,
    pub excursions: Vec<ExcursionCoefficient>,
    pub options: ClassifyOptions,
    pub classification: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftEstimate>,
}

fn distinct_sorted(d_list: &[usize]) -> Result<Vec<usize>> {
    let mut ds = d_list.to_vec();
    ds.sort_unstable();
    ds.dedup();
    if ds.len() < 3 {
        return Err(Error::TooFewDistances {
            needed: 3,
            got: ds.len(),
        });
    }
    Ok(ds)
}

/// Builds the `F(k; d)` matrix and classifies the family.
pub fn classify(
    family: &Family,
    d_list: &[usize],
    k_max: usize,
    options: &ClassifyOptions,
) -> Result<RegimeReport> {
    let d_values = distinct_sorted(d_list)?;
    if options.fit_k > k_max {
        return Err(Error::InvalidArgument(format!(
            "fit_k = {} exceeds k_max = {k_max}",
            options.fit_k
        )));
    }
    let dists: Vec<FptDistribution> = d_values
        .par_iter()
        .map(|&d| family.fpt(d, k_max))
        .collect::<Result<_>>()?;
    let f_matrix: Vec<Vec<f64>> = dists
        .iter()
        .map(|dist| Ok(f_from_pmf(dist, k_max)?.values().to_vec()))
        .collect::<Result<_>>()?;

    let invariance_score = (0..=k_max)
        .map(|k| {
            let column = f_matrix.iter().map(|row| row[k]);
            let hi = column.clone().fold(f64::NEG_INFINITY, f64::max);
            let lo = column.fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max);

    let xs: Vec<f64> = d_values.iter().map(|&d| d as f64).collect();
    let ys: Vec<f64> = f_matrix.iter().map(|row| row[options.fit_k]).collect();
    let fit = linear_fit(&xs, &ys).expect("at least three distinct distances");
    let growth_fit = GrowthFit {
        k: options.fit_k,
        fit,
        significance: fit.significance(),
    };

    let excursions = (1..=k_max / 2)
        .map(|ell| {
            let ratios: Vec<f64> = dists
                .iter()
                .map(|dist| dist.masses()[2 * ell] / dist.p_d())
                .collect();
            ExcursionCoefficient {
                ell,
                fit: linear_fit(&xs, &ratios),
                ratios,
            }
        })
        .collect();

    let classification = if invariance_score <= options.invariance_tol {
        Regime::InjectionLimited
    } else if fit.slope > 0.0 && growth_fit.significance >= options.slope_sigma {
        Regime::BulkLimited
    } else {
        Regime::Inconclusive
    };

    Ok(RegimeReport {
        family: family.id(),
        d_values,
        k_max,
        f_matrix,
        invariance_score,
        growth_fit,
        excursions,
        options: *options,
        classification,
        drift: None,
    })
}

/// Least-squares fit of `p_{d+gap} / p_d` against `d`.
pub fn ratio_slope(family: &Family, d_list: &[usize], gap: usize) -> Result<LinearFit> {
    let d_values = distinct_sorted(d_list)?;
    let ratios: Vec<f64> = d_values
        .iter()
        .map(|&d| {
            let dist = family.fpt(d, gap)?;
            Ok(dist.masses()[gap] / dist.p_d())
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = d_values.iter().map(|&d| d as f64).collect();
    Ok(linear_fit(&xs, &ratios).expect("at least three distinct distances"))
}

/// `p_{d+2} / p_d` against `d` on the Bethe lattice.
pub fn bethe_ratio_slope(coordination: usize, d_list: &[usize]) -> Result<LinearFit> {
    ratio_slope(&Family::Bethe { coordination }, d_list, 2)
}

/// Minimum number of conditional arrivals for a drift estimate.
pub const MIN_DRIFT_SAMPLES: usize = 1000;

/// `v̂ = d / mean arrival time` with a 95% percentile bootstrap interval.
pub fn estimate_drift(
    distance: usize,
    samples: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<DriftEstimate> {
    if samples.len() < MIN_DRIFT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_DRIFT_SAMPLES,
            got: samples.len(),
        });
    }
    let d = distance as f64;
    let mean_arrival = mean(samples);
    let reps = bootstrap(samples, |xs| d / mean(xs), resamples, seed);
    Ok(DriftEstimate {
        distance,
        samples: samples.len(),
        mean_arrival,
        v_drift: d / mean_arrival,
        ci_low: quantile(&reps, 0.025),
        ci_high: quantile(&reps, 0.975),
    })
}

/// Test-only: exact law of the unbiased (`z = 2`) distance chain.
pub fn diffusive_reference_fpt(distance: usize, k_max: usize) -> Result<FptDistribution> {
    distance_chain_fpt(2, distance, k_max)
}

/// Test-only: first-passage times of the unbiased distance chain.
/// Walkers not arrived by `t_max` are dropped.
pub fn diffusive_reference_arrivals(
    distance: usize,
    walkers: u64,
    t_max: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = Sampler::distance_chain(2, distance)?;
    let streams = StreamFactory::new(seed);
    Ok((0..walkers)
        .into_par_iter()
        .filter_map(
            |w| match sampler.walk(&mut streams.walker_stream(0, w), t_max) {
                WalkOutcome::Arrived(t) => Some(t as f64),
                _ => None,
            },
        )
        .collect())
}
