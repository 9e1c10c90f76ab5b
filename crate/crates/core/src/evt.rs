//! Statistics of `T_N = min(τ_1, …, τ_N)` for i.i.d. walkers.
//!
//! Exact forms use `P(T_N > t) = S(t)^N`. Asymptotic forms replace the
//! power by `exp(-λ F(k))` with `λ = N p_d` and the entropic function
//! `F(k) = Σ_{j ≤ k} p_{d+j} / p_d`.
//!
//! When the single-walker law is defective (walkers can be killed or escape)
//! `P(T_N = ∞) = S_∞^N > 0` and the unconditional mean is infinite. The
//! conditional-on-arrival statistics are then the primary output; the
//! truncated exponential sum is kept as the literal asymptotic form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpt::FptDistribution;
use crate::numeric::CompensatedSum;

/// Terms below this are dropped from survival series.
const TERM_CUTOFF: f64 = 1e-15;
/// Largest tolerated extrapolated remainder of a truncated series.
const MAX_SERIES_RESIDUAL: f64 = 1e-10;

/// `N` walkers drawn from one single-walker law.
#[derive(Debug, Clone, Copy)]
pub struct ExtremeQuery<'a> {
    dist: &'a FptDistribution,
    walkers: u64,
}

impl<'a> ExtremeQuery<'a> {
    pub fn new(dist: &'a FptDistribution, walkers: u64) -> Result<Self> {
        if walkers == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        Ok(Self { dist, walkers })
    }

    /// Query with `N = n_for_lambda(dist, λ)`.
    pub fn from_lambda(dist: &'a FptDistribution, lambda: f64) -> Result<Self> {
        Self::new(dist, n_for_lambda(dist, lambda)?)
    }

    pub fn dist(&self) -> &'a FptDistribution {
        self.dist
    }

    pub fn walkers(&self) -> u64 {
        self.walkers
    }

    /// `λ = N p_d`.
    pub fn lambda(&self) -> f64 {
        self.walkers as f64 * self.dist.p_d()
    }

    fn n(&self) -> f64 {
        self.walkers as f64
    }

    /// `S_∞^N`, the probability that no walker ever arrives.
    pub fn never_arrives(&self) -> f64 {
        let defect = self.dist.defect();
        if defect <= 0.0 {
            0.0
        } else {
            (self.n() * defect.ln()).exp()
        }
    }

    /// `P(T_N > d + k)`.
    pub fn tail(&self, k: i64) -> Result<f64> {
        if k < 0 {
            return Ok(1.0);
        }
        let log_s = self
            .dist
            .log_survival(self.dist.hard_edge() + k as usize)
            .ok_or(Error::HorizonExceeded {
                requested: k,
                horizon: self.dist.horizon(),
            })?;
        Ok((self.n() * log_s).exp())
    }

    /// `P(T_N > d + k | T_N < ∞)`.
    ///
    /// With `D` the defect and `R` the arrival mass after `d + k`, this is
    /// `D^N ((1 + R/D)^N - 1) / (1 - D^N)`, evaluated in logs so that a
    /// defect close to 1 does not cancel.
    pub fn conditional_tail(&self, k: i64) -> Result<f64> {
        let dist = self.dist;
        let defect = dist.defect();
        if k < 0 || defect <= 0.0 {
            return self.tail(k);
        }
        let remaining = dist
            .later_arrival(k as usize)
            .ok_or(Error::HorizonExceeded {
                requested: k,
                horizon: dist.horizon(),
            })?;
        let arrival = dist.arrival_probability();
        if remaining == 0.0 {
            return Ok(0.0);
        }
        let log_defect = if defect > 0.5 {
            (-arrival).ln_1p()
        } else {
            defect.ln()
        };
        let x = self.n() * (remaining / defect).ln_1p();
        let log_growth = if x > 1.0 {
            x + (-(-x).exp()).ln_1p()
        } else {
            x.exp_m1().ln()
        };
        let log_norm = (-(self.n() * log_defect).exp_m1()).ln();
        Ok((self.n() * log_defect + log_growth - log_norm)
            .exp()
            .clamp(0.0, 1.0))
    }

    /// Exact tail table for `k = 0..=k_max`.
    pub fn tail_table(&self, k_max: usize) -> Result<Vec<f64>> {
        (0..=k_max as i64).map(|k| self.tail(k)).collect()
    }
}

/// `P(T_N > d + k) = S(d + k)^N`, computed from the exact masses.
pub fn extreme_tail_exact(query: &ExtremeQuery<'_>, k: i64) -> Result<f64> {
    query.tail(k)
}

/// `P(T_N = d) = 1 - (1 - p_d)^N`, the complement of the tail at `k = 0`.
pub fn extreme_hit_prob(query: &ExtremeQuery<'_>) -> f64 {
    1.0 - query.tail(0).expect("k = 0 is always within the horizon")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    Unconditional,
    Conditional,
}

/// A truncated series and an estimate of what the truncation dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub residual: f64,
}

/// `⟨(T_N - d)^m⟩ = Σ_k [(k+1)^m - k^m] P(T_N - d > k)` over exact tails.
pub fn moment_exact(query: &ExtremeQuery<'_>, m: u32, mode: MeanMode) -> Result<SeriesValue> {
    if m == 0 {
        return Err(Error::InvalidArgument("moment order must be >= 1".into()));
    }
    let dist = query.dist;
    if mode == MeanMode::Unconditional && dist.defect() > 0.0 {
        return Err(Error::DivergentMean {
            defect: dist.defect(),
        });
    }
    let terms =
        (0..=dist.horizon()).map(|k| query.conditional_tail(k as i64).expect("k within horizon"));
    sum_survival_series(terms, m)
}

/// `⟨T_N⟩` from the exact survival.
pub fn mean_exact(query: &ExtremeQuery<'_>, mode: MeanMode) -> Result<SeriesValue> {
    let first = moment_exact(query, 1, mode)?;
    Ok(SeriesValue {
        value: query.dist.hard_edge() as f64 + first.value,
        residual: first.residual,
    })
}

/// `Var[T_N]` from the exact first and second moments.
pub fn variance_exact(query: &ExtremeQuery<'_>, mode: MeanMode) -> Result<f64> {
    let m1 = moment_exact(query, 1, mode)?.value;
    let m2 = moment_exact(query, 2, mode)?.value;
    Ok((m2 - m1 * m1).max(0.0))
}

fn moment_weight(k: usize, m: u32) -> f64 {
    let k = k as f64;
    (k + 1.0).powi(m as i32) - k.powi(m as i32)
}

/// Sums `Σ_k w_m(k) P_k` for a nonincreasing tail sequence, stopping once
/// the tails fall below the cutoff.
fn sum_survival_series<I: Iterator<Item = f64>>(tails: I, m: u32) -> Result<SeriesValue> {
    let mut acc = CompensatedSum::new();
    let mut previous: Option<f64> = None;
    let mut last_ratio = 1.0;
    let mut last_k = 0;
    let mut last_tail = 0.0;
    for (k, tail) in tails.enumerate() {
        acc.add(moment_weight(k, m) * tail);
        if let Some(prev) = previous {
            if prev > 0.0 {
                last_ratio = tail / prev;
            }
        }
        previous = Some(tail);
        last_k = k;
        last_tail = tail;
        if tail * moment_weight(k, m) < TERM_CUTOFF && tail < TERM_CUTOFF {
            return Ok(SeriesValue {
                value: acc.value(),
                residual: geometric_remainder(last_tail, last_ratio, last_k, m),
            });
        }
    }
    let residual = geometric_remainder(last_tail, last_ratio, last_k, m);
    if residual > MAX_SERIES_RESIDUAL {
        return Err(Error::HorizonTooSmall { residual });
    }
    Ok(SeriesValue {
        value: acc.value(),
        residual,
    })
}

/// Remainder of `Σ_{j>k} w_m(j) P_j` assuming `P_j` keeps shrinking by `ratio`.
fn geometric_remainder(tail: f64, ratio: f64, k: usize, m: u32) -> f64 {
    if tail == 0.0 {
        return 0.0;
    }
    if ratio.is_nan() || ratio >= 1.0 {
        return f64::INFINITY;
    }
    let mut rest = 0.0;
    let mut p = tail;
    for j in k + 1..k + 2000 {
        p *= ratio;
        let term = moment_weight(j, m) * p;
        rest += term;
        if term < 1e-300 || term < rest * 1e-17 {
            break;
        }
    }
    rest
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileSource {
    ClosedForm,
    FromPmf,
}

/// Entropic function `F(0..=K)`, with `F(0) = 1` and `F` nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropicProfile {
    values: Vec<f64>,
    source: ProfileSource,
    limit: Option<f64>,
}

impl EntropicProfile {
    /// `limit` is `F(∞)` when known.
    pub fn new(values: Vec<f64>, source: ProfileSource, limit: Option<f64>) -> Result<Self> {
        if values.first() != Some(&1.0) {
            return Err(Error::InvalidArgument("F(0) must equal 1".into()));
        }
        if values.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument("F must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("F must be nondecreasing".into()));
        }
        Ok(Self {
            values,
            source,
            limit,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.values.get(k).copied()
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn source(&self) -> ProfileSource {
        self.source
    }

    pub fn limit(&self) -> Option<f64> {
        self.limit
    }
}

/// `F(k) = Σ_{j ≤ k} p_{d+j} / p_d` for `k = 0..=k_max`.
pub fn f_from_pmf(dist: &FptDistribution, k_max: usize) -> Result<EntropicProfile> {
    if k_max > dist.horizon() {
        return Err(Error::HorizonExceeded {
            requested: k_max as i64,
            horizon: dist.horizon(),
        });
    }
    let p_d = dist.p_d();
    let mut acc = CompensatedSum::new();
    let mut values: Vec<f64> = dist.masses()[..=k_max]
        .iter()
        .map(|&p| {
            acc.add(p / p_d);
            acc.value()
        })
        .collect();
    values[0] = 1.0;
    for i in 1..values.len() {
        values[i] = values[i].max(values[i - 1]);
    }
    let limit = dist.arrival_probability() / p_d;
    EntropicProfile::new(values, ProfileSource::FromPmf, Some(limit.max(acc.value())))
}

/// Leaky-loop closed form `F(k) = (1 - s^{k+1}) / (1 - s)`.
pub fn f_leaky_closed(stay: f64, k: usize) -> f64 {
    if stay == 0.0 {
        return 1.0;
    }
    -(stay.ln() * (k as f64 + 1.0)).exp_m1() / (1.0 - stay)
}

/// `F(∞) = 1 / (1 - s)`.
pub fn f_leaky_limit(stay: f64) -> f64 {
    1.0 / (1.0 - stay)
}

pub fn leaky_profile(stay: f64, k_max: usize) -> Result<EntropicProfile> {
    if !(0.0..1.0).contains(&stay) {
        return Err(Error::InvalidArgument(format!(
            "stay {stay} outside [0, 1)"
        )));
    }
    let values = (0..=k_max).map(|k| f_leaky_closed(stay, k)).collect();
    EntropicProfile::new(values, ProfileSource::ClosedForm, Some(f_leaky_limit(stay)))
}

/// `P(T_N > d + k) ≈ exp(-λ F(k))`.
pub fn tail_asymptotic(lambda: f64, profile: &EntropicProfile, k: i64) -> Result<f64> {
    check_lambda(lambda)?;
    if k < 0 {
        return Ok(1.0);
    }
    let f = profile.get(k as usize).ok_or(Error::HorizonExceeded {
        requested: k,
        horizon: profile.horizon(),
    })?;
    Ok((-lambda * f).exp())
}

/// How to make the asymptotic survival sum finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AsymptoticMode {
    /// `Σ_{k=0}^{K}` of the raw exponential terms.
    Truncated(usize),
    /// Conditional on arrival: subtract and renormalize by `exp(-λ F(∞))`.
    Conditional,
}

/// Default truncation `K = ⌈ln N⌉`.
pub fn default_truncation(walkers: u64) -> usize {
    (walkers.max(1) as f64).ln().ceil() as usize
}

/// `⟨(T_N - d)^m⟩ ≈ Σ_k [(k+1)^m - k^m] exp(-λ F(k))`.
pub fn moment_asymptotic(
    m: u32,
    lambda: f64,
    profile: &EntropicProfile,
    mode: AsymptoticMode,
) -> Result<f64> {
    check_lambda(lambda)?;
    if m == 0 {
        return Err(Error::InvalidArgument("moment order must be >= 1".into()));
    }
    match mode {
        AsymptoticMode::Truncated(cutoff) => {
            if cutoff > profile.horizon() {
                return Err(Error::HorizonExceeded {
                    requested: cutoff as i64,
                    horizon: profile.horizon(),
                });
            }
            let mut acc = CompensatedSum::new();
            for (k, f) in profile.values()[..=cutoff].iter().enumerate() {
                acc.add(moment_weight(k, m) * (-lambda * f).exp());
            }
            Ok(acc.value())
        }
        AsymptoticMode::Conditional => {
            let limit = profile.limit().ok_or(Error::UnboundedProfile)?;
            let floor = (-lambda * limit).exp();
            let norm = -(-lambda * limit).exp_m1();
            let tails = profile
                .values()
                .iter()
                .map(|f| (((-lambda * f).exp() - floor) / norm).max(0.0));
            Ok(sum_survival_series(tails, m)?.value)
        }
    }
}

pub fn mean_asymptotic(
    d: usize,
    lambda: f64,
    profile: &EntropicProfile,
    mode: AsymptoticMode,
) -> Result<f64> {
    Ok(d as f64 + moment_asymptotic(1, lambda, profile, mode)?)
}

pub fn variance_asymptotic(
    lambda: f64,
    profile: &EntropicProfile,
    mode: AsymptoticMode,
) -> Result<f64> {
    let m1 = moment_asymptotic(1, lambda, profile, mode)?;
    let m2 = moment_asymptotic(2, lambda, profile, mode)?;
    Ok((m2 - m1 * m1).max(0.0))
}

/// `N = max(1, round(λ / p_d))`.
pub fn n_for_lambda(dist: &FptDistribution, lambda: f64) -> Result<u64> {
    check_lambda(lambda)?;
    let n = (lambda / dist.p_d()).round();
    if n.is_nan() || n >= u64::MAX as f64 {
        return Err(Error::InvalidArgument(format!(
            "λ / p_d = {n:e} walkers does not fit in 64 bits"
        )));
    }
    Ok((n as u64).max(1))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && !lambda.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "λ must be positive, got {lambda}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpt::{bethe_fpt, leaky_loop_fpt};
    use crate::graph::{build_leaky_loop, BetheSpec};

    fn reference_leaky() -> FptDistribution {
        leaky_loop_fpt(&build_leaky_loop(0.5, 0.9, 50).unwrap(), 400).unwrap()
    }

    #[test]
    fn tail_edges() {
        let dist = reference_leaky();
        let one = ExtremeQuery::new(&dist, 1).unwrap();
        for k in 0..10 {
            assert_eq!(
                one.tail(k).unwrap(),
                dist.survival(50 + k as usize).unwrap()
            );
        }
        assert_eq!(one.tail(-1).unwrap(), 1.0);
        assert!(matches!(one.tail(401), Err(Error::HorizonExceeded { .. })));
        assert!(ExtremeQuery::new(&dist, 0).is_err());
    }

    #[test]
    fn reference_walker_count_and_tail() {
        let dist = reference_leaky();
        assert_eq!(n_for_lambda(&dist, 1.0).unwrap(), 349);
        let q = ExtremeQuery::from_lambda(&dist, 1.0).unwrap();
        let expected = (1.0 - dist.p_d()).powi(349);
        assert!((q.tail(0).unwrap() - expected).abs() < 1e-14);
        assert!((q.tail(0).unwrap() - (-1.0_f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn hit_probability() {
        let dist = reference_leaky();
        let q = ExtremeQuery::new(&dist, 1).unwrap();
        assert!((extreme_hit_prob(&q) - dist.p_d()).abs() < 1e-16);
        let q = ExtremeQuery::new(&dist, 349).unwrap();
        assert!((extreme_hit_prob(&q) - (1.0 - (-1.0_f64).exp())).abs() < 2e-3);
        let sure = leaky_loop_fpt(&build_leaky_loop(0.0, 1.0, 4).unwrap(), 3).unwrap();
        assert_eq!(
            extreme_hit_prob(&ExtremeQuery::new(&sure, 17).unwrap()),
            1.0
        );
    }

    #[test]
    fn exact_means() {
        let sure = leaky_loop_fpt(&build_leaky_loop(0.0, 1.0, 7).unwrap(), 5).unwrap();
        for n in [1, 2, 1000] {
            let q = ExtremeQuery::new(&sure, n).unwrap();
            assert_eq!(mean_exact(&q, MeanMode::Unconditional).unwrap().value, 7.0);
        }

        let dist = leaky_loop_fpt(&build_leaky_loop(0.5, 1.0, 2).unwrap(), 80).unwrap();
        let q = ExtremeQuery::new(&dist, 1).unwrap();
        let mean = mean_exact(&q, MeanMode::Unconditional).unwrap();
        assert!((mean.value - 3.0).abs() < 1e-14);

        let dist = reference_leaky();
        let q = ExtremeQuery::new(&dist, 349).unwrap();
        assert!(matches!(
            mean_exact(&q, MeanMode::Unconditional),
            Err(Error::DivergentMean { .. })
        ));
        let cond = mean_exact(&q, MeanMode::Conditional).unwrap();
        assert!(cond.value > 50.0 && cond.value < 51.0);
    }

    #[test]
    fn short_horizon_is_rejected() {
        let dist = leaky_loop_fpt(&build_leaky_loop(0.9, 1.0, 2).unwrap(), 5).unwrap();
        let q = ExtremeQuery::new(&dist, 1).unwrap();
        assert!(matches!(
            mean_exact(&q, MeanMode::Unconditional),
            Err(Error::HorizonTooSmall { .. })
        ));
    }

    #[test]
    fn profile_values() {
        let dist = reference_leaky();
        let f = f_from_pmf(&dist, 5).unwrap();
        assert_eq!(f.get(0), Some(1.0));
        assert!((f.get(1).unwrap() - 1.5).abs() < 1e-15);
        assert!((f.get(2).unwrap() - 1.75).abs() < 1e-15);
        assert!((f.limit().unwrap() - 2.0).abs() < 1e-12);

        let bethe = bethe_fpt(&BetheSpec::new(3, 2).unwrap(), 4).unwrap();
        let f = f_from_pmf(&bethe, 2).unwrap();
        assert!((f.get(2).unwrap() - (1.0 + 4.0 / 9.0)).abs() < 1e-15);
        assert!(f_from_pmf(&bethe, 5).is_err());
    }

    #[test]
    fn closed_form_profile() {
        assert!((f_leaky_closed(0.5, 3) - 1.875).abs() < 1e-15);
        assert!((f_leaky_closed(0.5, 200) - 2.0).abs() < 1e-15);
        assert_eq!(f_leaky_limit(0.5), 2.0);
        assert_eq!(f_leaky_closed(0.0, 9), 1.0);
        assert!(EntropicProfile::new(vec![1.0, 0.5], ProfileSource::FromPmf, None).is_err());
        assert!(EntropicProfile::new(vec![2.0], ProfileSource::FromPmf, None).is_err());
    }

    #[test]
    fn asymptotic_tails() {
        let f = leaky_profile(0.5, 200).unwrap();
        assert!((tail_asymptotic(1.0, &f, 0).unwrap() - 0.36787944117144233).abs() < 1e-15);
        assert!((tail_asymptotic(1.0, &f, 200).unwrap() - (-2.0_f64).exp()).abs() < 1e-15);
        assert_eq!(tail_asymptotic(1e300, &f, 3).unwrap(), 0.0);
        assert_eq!(tail_asymptotic(1.0, &f, -2).unwrap(), 1.0);
        assert!(tail_asymptotic(0.0, &f, 0).is_err());
        assert!(tail_asymptotic(1.0, &f, 201).is_err());
    }

    #[test]
    fn asymptotic_means() {
        let f = leaky_profile(0.5, 200).unwrap();
        let floor = (-2.0_f64).exp();
        let expected: f64 = (0..200)
            .map(|k| ((-f_leaky_closed(0.5, k)).exp() - floor) / (1.0 - floor))
            .sum();
        let mean = mean_asymptotic(50, 1.0, &f, AsymptoticMode::Conditional).unwrap();
        assert!((mean - 50.0 - expected).abs() < 1e-13);

        let sharp = mean_asymptotic(50, 5.0, &f, AsymptoticMode::Conditional).unwrap();
        assert!(sharp - 50.0 < 5.0 * (-5.0_f64).exp());

        let truncated = mean_asymptotic(50, 1.0, &f, AsymptoticMode::Truncated(6)).unwrap();
        let direct: f64 = (0..=6).map(|k| (-f_leaky_closed(0.5, k)).exp()).sum();
        assert!((truncated - 50.0 - direct).abs() < 1e-14);

        let m1 = moment_asymptotic(1, 1.0, &f, AsymptoticMode::Conditional).unwrap();
        assert!((m1 - (mean - 50.0)).abs() < 1e-13);
        let unbounded = EntropicProfile::new(vec![1.0, 1.5], ProfileSource::FromPmf, None).unwrap();
        assert!(matches!(
            moment_asymptotic(1, 1.0, &unbounded, AsymptoticMode::Conditional),
            Err(Error::UnboundedProfile)
        ));
    }

    #[test]
    fn large_lambda_moments_vanish() {
        let f = leaky_profile(0.5, 100).unwrap();
        for m in 1..=3 {
            let v = moment_asymptotic(m, 60.0, &f, AsymptoticMode::Truncated(100)).unwrap();
            assert!(v < 1e-20);
        }
    }

    #[test]
    fn walker_counts() {
        let dist = reference_leaky();
        assert_eq!(n_for_lambda(&dist, dist.p_d()).unwrap(), 1);
        let bethe = bethe_fpt(&BetheSpec::new(3, 8).unwrap(), 0).unwrap();
        assert_eq!(n_for_lambda(&bethe, 1.0).unwrap(), 6561);
        assert_eq!(default_truncation(349), 6);
        assert_eq!(default_truncation(1), 0);
    }
}
