//! Exact single-walker first-passage laws.
//!
//! Every solver returns an [`FptDistribution`]: the hard edge `d`, the masses
//! `p_{d+k}` for `k = 0..=K`, the probability of never arriving (`defect`)
//! and the arrival probability left beyond the horizon (`residual_bound`).

mod oracle;

pub use oracle::{brute_force_fpt, ENUMERATION_LIMIT};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{BetheSpec, CometSpec, HeadGraph, LeakyLoopSpec, Model, StepTarget};
use crate::numeric::{compensated_sum, CompensatedSum};

#[derive(Debug, Clone, PartialEq)]
pub struct FptDistribution {
    hard_edge: usize,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
    /// `later[k] = Σ_{j > k} p_{d+j} + residual`, summed from the far end.
    later: Vec<f64>,
    defect: f64,
    residual_bound: f64,
}

/// Metadata block written ahead of a distribution table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FptHeader {
    pub d: usize,
    #[serde(rename = "K")]
    pub horizon: usize,
    pub defect: f64,
    pub residual_bound: f64,
}

impl FptDistribution {
    /// `masses[k]` is `P(τ = hard_edge + k)`.
    pub fn new(
        hard_edge: usize,
        masses: Vec<f64>,
        defect: f64,
        residual_bound: f64,
    ) -> Result<Self> {
        let Some(&p_d) = masses.first() else {
            return Err(Error::InvalidArgument("distribution has no masses".into()));
        };
        if masses.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "masses must be finite and nonnegative".into(),
            ));
        }
        if p_d < f64::MIN_POSITIVE {
            return Err(Error::Underflow(format!(
                "shortest-path probability p_d = {p_d:e} at d = {hard_edge}"
            )));
        }
        let mut acc = CompensatedSum::new();
        let cumulative = masses
            .iter()
            .map(|&p| {
                acc.add(p);
                acc.value()
            })
            .collect();
        let residual_bound = residual_bound.max(0.0);
        let mut acc = CompensatedSum::new();
        acc.add(residual_bound);
        let mut later = vec![0.0; masses.len()];
        for (k, &p) in masses.iter().enumerate().rev() {
            later[k] = acc.value();
            acc.add(p);
        }
        Ok(Self {
            hard_edge,
            masses,
            cumulative,
            later,
            defect: defect.max(0.0),
            residual_bound,
        })
    }

    /// `d`, the smallest possible arrival time.
    pub fn hard_edge(&self) -> usize {
        self.hard_edge
    }

    /// `K`: masses are known for `t = d..=d+K`.
    pub fn horizon(&self) -> usize {
        self.masses.len() - 1
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn p_d(&self) -> f64 {
        self.masses[0]
    }

    /// `P(τ = t)`; `None` beyond the horizon.
    pub fn mass_at(&self, t: usize) -> Option<f64> {
        if t < self.hard_edge {
            Some(0.0)
        } else {
            self.masses.get(t - self.hard_edge).copied()
        }
    }

    /// `Σ_{j ≤ k} p_{d+j}` for `k ≤ K`.
    pub fn cumulative(&self, k: usize) -> Option<f64> {
        self.cumulative.get(k).copied()
    }

    /// Probability of never arriving.
    pub fn defect(&self) -> f64 {
        self.defect
    }

    /// Arrival probability beyond `d + K`.
    pub fn residual_bound(&self) -> f64 {
        self.residual_bound
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().expect("nonempty")
    }

    /// Total arrival probability, `Σ masses + residual`.
    pub fn arrival_probability(&self) -> f64 {
        self.total_mass() + self.residual_bound
    }

    /// `S(t) = P(τ > t)`; exactly 1 below the hard edge, `None` beyond the
    /// horizon.
    pub fn survival(&self, t: usize) -> Option<f64> {
        if t < self.hard_edge {
            return Some(1.0);
        }
        let k = t - self.hard_edge;
        self.cumulative(k).map(|c| {
            if c <= 0.5 {
                1.0 - c
            } else {
                self.defect + self.later[k]
            }
        })
    }

    /// Arrival probability after `d + k`, without cancellation against the
    /// arrived mass.
    pub fn later_arrival(&self, k: usize) -> Option<f64> {
        self.later.get(k).copied()
    }

    /// `ln S(t)` computed as `ln(1 - cum)` without cancellation.
    pub fn log_survival(&self, t: usize) -> Option<f64> {
        if t < self.hard_edge {
            return Some(0.0);
        }
        let k = t - self.hard_edge;
        self.cumulative(k).map(|c| {
            if c <= 0.5 {
                (-c).ln_1p()
            } else {
                (self.defect + self.later[k]).ln()
            }
        })
    }

    pub fn header(&self) -> FptHeader {
        FptHeader {
            d: self.hard_edge,
            horizon: self.horizon(),
            defect: self.defect,
            residual_bound: self.residual_bound,
        }
    }
}

/// First-exit law of the head: `π_n` is the probability that the first hop
/// onto the tail happens at step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitPmf {
    /// `pmf[n - 1] = π_n`.
    pub pmf: Vec<f64>,
    /// Probability still inside the head after `n_max` steps.
    pub remaining: f64,
}

impl ExitPmf {
    pub fn get(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.pmf.get(n - 1).copied().unwrap_or(0.0)
        }
    }

    /// `d_H`, the first `n` with `π_n > 0`.
    pub fn first_exit(&self) -> Option<usize> {
        self.pmf.iter().position(|&p| p > 0.0).map(|i| i + 1)
    }
}

/// Propagates the head occupancy under the substochastic head operator,
/// treating the tail edge as absorbing.
pub fn exit_time_pmf(head: &HeadGraph, n_max: usize) -> Result<ExitPmf> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let n = head.node_count();
    let mut occupancy = vec![0.0; n];
    occupancy[head.start()] = 1.0;
    let mut next = vec![0.0; n];
    let mut pmf = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut exited = CompensatedSum::new();
        for (u, &mass) in occupancy.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for &(target, p) in head.steps(u) {
                match target {
                    StepTarget::Node(v) => next[v] += mass * p,
                    StepTarget::Tail => exited.add(mass * p),
                }
            }
        }
        pmf.push(exited.value());
        std::mem::swap(&mut occupancy, &mut next);
    }
    Ok(ExitPmf {
        pmf,
        remaining: compensated_sum(occupancy.iter().copied()),
    })
}

/// `p_{d+k} = π_{d_H + k} · μ^L`.
pub fn comet_fpt(spec: &CometSpec, k_max: usize) -> Result<FptDistribution> {
    spec.ensure_valid()?;
    let head_distance = spec.head_distance();
    let exit = exit_time_pmf(&spec.head, head_distance + k_max)?;
    debug_assert_eq!(exit.first_exit(), Some(head_distance));
    let tail_factor = survival_power(spec.survival, spec.tail_hops)?;
    let masses = exit.pmf[head_distance - 1..]
        .iter()
        .map(|&pi| pi * tail_factor)
        .collect();
    // Symmetric adjacency: every node reachable from g₀ reaches h_exit, so
    // the walker leaves the head almost surely and only the tail kills.
    FptDistribution::new(
        spec.distance(),
        masses,
        1.0 - tail_factor,
        exit.remaining * tail_factor,
    )
}

/// Closed form `p_{d+k} = s^k (1 - s) μ^{d-1}`.
pub fn leaky_loop_fpt(spec: &LeakyLoopSpec, k_max: usize) -> Result<FptDistribution> {
    spec.ensure_valid()?;
    let s = spec.stay;
    let arrival = survival_power(spec.survival, spec.distance - 1)?;
    let mut mass = (1.0 - s) * arrival;
    let mut masses = Vec::with_capacity(k_max + 1);
    for _ in 0..=k_max {
        masses.push(mass);
        mass *= s;
    }
    // mass now holds p_{d+K+1}; the geometric remainder sums to it / (1 - s)
    let residual = mass / (1.0 - s);
    FptDistribution::new(spec.distance, masses, 1.0 - arrival, residual)
}

/// Dynamic programming on the distance-to-target chain.
pub fn bethe_fpt(spec: &BetheSpec, k_max: usize) -> Result<FptDistribution> {
    spec.ensure_valid()?;
    distance_chain_fpt(spec.coordination, spec.distance, k_max)
}

/// Distance chain with step toward the target `1/z` and away `(z-1)/z`.
///
/// Admits `z = 2` (the recurrent, diffusive chain) for diagnostics.
pub(crate) fn distance_chain_fpt(z: usize, d: usize, k_max: usize) -> Result<FptDistribution> {
    if z < 2 || d < 1 {
        return Err(Error::InvalidArgument(format!(
            "distance chain needs z >= 2 and d >= 1, got z = {z}, d = {d}"
        )));
    }
    let toward = 1.0 / z as f64;
    let away = (z - 1) as f64 / z as f64;
    let t_end = d + k_max;
    // From r > d + k_max + 1 - t no arrival by t_end is possible; the
    // occupied band never reaches the cap within the horizon.
    let cap = d + k_max + 1;
    let mut occupancy = vec![0.0; cap + 1];
    occupancy[d] = 1.0;
    let mut next = vec![0.0; cap + 1];
    let mut dropped = 0.0;
    let mut masses = Vec::with_capacity(k_max + 1);
    for t in 1..=t_end {
        next.iter_mut().for_each(|x| *x = 0.0);
        let arrived = occupancy[1] * toward;
        for r in 1..=cap {
            let mass = occupancy[r];
            if mass == 0.0 {
                continue;
            }
            if r > 1 {
                next[r - 1] += mass * toward;
            }
            if r < cap {
                next[r + 1] += mass * away;
            } else {
                dropped += mass * away;
            }
        }
        if t >= d {
            masses.push(arrived);
        }
        std::mem::swap(&mut occupancy, &mut next);
    }

    // Hitting probability of 0 from r is (z-1)^{-r}: gambler's ruin with
    // drift away from the target (identically 1 for z = 2).
    let ratio = 1.0 / (z - 1) as f64;
    let hit = |r: usize| ratio.powi(r as i32);
    let mut residual = CompensatedSum::new();
    for (r, &mass) in occupancy.iter().enumerate().skip(1) {
        if mass > 0.0 {
            residual.add(mass * hit(r));
        }
    }
    residual.add(dropped * hit(cap + 1));
    let defect = 1.0 - hit(d);
    FptDistribution::new(d, masses, defect, residual.value())
}

pub fn model_fpt(model: &Model, k_max: usize) -> Result<FptDistribution> {
    match model {
        Model::Comet(c) => comet_fpt(c, k_max),
        Model::LeakyLoop(l) => leaky_loop_fpt(l, k_max),
        Model::Bethe(b) => bethe_fpt(b, k_max),
    }
}

/// Largest horizon [`model_fpt_auto`] will try.
pub const MAX_AUTO_HORIZON: usize = 1 << 17;

/// Doubles the horizon from 256 until `walkers · residual_bound ≤ 1e-15`,
/// enough for min-of-`walkers` survival sums to converge.
pub fn model_fpt_auto(model: &Model, walkers: u64) -> Result<FptDistribution> {
    let target = 1e-15 / walkers.max(1) as f64;
    let mut horizon = 256;
    loop {
        let dist = model_fpt(model, horizon)?;
        if dist.residual_bound() <= target || horizon >= MAX_AUTO_HORIZON {
            return Ok(dist);
        }
        horizon *= 2;
    }
}

fn survival_power(mu: f64, hops: usize) -> Result<f64> {
    let value = mu.powi(
        i32::try_from(hops)
            .map_err(|_| Error::InvalidArgument(format!("tail length {hops} too large")))?,
    );
    if value < f64::MIN_POSITIVE {
        return Err(Error::Underflow(format!("μ^L = {mu}^{hops}")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_clique_head, build_leaky_loop};

    #[test]
    fn leaky_exit_pmf_is_geometric() {
        let head = HeadGraph::single_node(0.5).unwrap();
        let pmf = exit_time_pmf(&head, 3).unwrap();
        assert_eq!(pmf.pmf, vec![0.5, 0.25, 0.125]);
        assert_eq!(pmf.first_exit(), Some(1));
        assert_eq!(pmf.remaining, 0.125);

        let forced = exit_time_pmf(&HeadGraph::single_node(0.0).unwrap(), 4).unwrap();
        assert_eq!(forced.pmf, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(exit_time_pmf(&head, 0).is_err());
    }

    #[test]
    fn leaky_half_stay_masses() {
        let spec = build_leaky_loop(0.5, 0.9, 50).unwrap();
        let dist = leaky_loop_fpt(&spec, 200).unwrap();
        let p_d = 0.5 * 0.9_f64.powi(49);
        assert!((dist.p_d() / p_d - 1.0).abs() < 1e-14);
        assert!((dist.p_d() - 2.863e-3).abs() < 1e-6);
        assert!((dist.masses()[1] / dist.masses()[0] - 0.5).abs() < 1e-15);
        assert!((dist.arrival_probability() - 0.9_f64.powi(49)).abs() < 1e-15);
        assert!((dist.arrival_probability() - 5.726e-3).abs() < 1e-6);
    }

    #[test]
    fn deterministic_ballistic_walk() {
        let spec = build_leaky_loop(0.0, 1.0, 3).unwrap();
        let dist = leaky_loop_fpt(&spec, 4).unwrap();
        assert_eq!(dist.hard_edge(), 3);
        assert_eq!(dist.masses(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(dist.defect(), 0.0);
        assert_eq!(dist.survival(2), Some(1.0));
        assert_eq!(dist.survival(3), Some(0.0));
    }

    #[test]
    fn leaky_small_cases() {
        let dist = leaky_loop_fpt(&build_leaky_loop(0.5, 1.0, 2).unwrap(), 2).unwrap();
        assert_eq!(dist.masses(), &[0.5, 0.25, 0.125]);
        let dist = leaky_loop_fpt(&build_leaky_loop(0.0, 0.9, 2).unwrap(), 3).unwrap();
        assert_eq!(dist.masses(), &[0.9, 0.0, 0.0, 0.0]);
        assert!((dist.defect() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn comet_matches_leaky_closed_form() {
        for &(s, mu, d) in &[
            (0.5, 0.9, 50),
            (0.3, 0.7, 4),
            (0.0, 1.0, 1),
            (0.9, 0.95, 12),
        ] {
            let spec = build_leaky_loop(s, mu, d).unwrap();
            let closed = leaky_loop_fpt(&spec, 60).unwrap();
            let comet = comet_fpt(&spec.to_comet().unwrap(), 60).unwrap();
            assert_eq!(closed.hard_edge(), comet.hard_edge());
            for (a, b) in closed.masses().iter().zip(comet.masses()) {
                assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
            }
            assert!((closed.defect() - comet.defect()).abs() <= 1e-14);
            assert!((closed.residual_bound() - comet.residual_bound()).abs() <= 1e-14);
        }
    }

    #[test]
    fn comet_factorizes_through_exit_pmf() {
        let head = build_clique_head(4, 0, 3).unwrap();
        let spec = CometSpec::new(head.clone(), 6, 0.8).unwrap();
        let dist = comet_fpt(&spec, 10).unwrap();
        let exit = exit_time_pmf(&head, 12).unwrap();
        let scale = 0.8_f64.powi(6);
        assert_eq!(dist.hard_edge(), 8);
        for k in 0..=10 {
            let expected = exit.get(2 + k) * scale;
            assert!((dist.masses()[k] - expected).abs() <= 1e-15 * expected);
        }
        let total = dist.total_mass() + dist.residual_bound() + dist.defect();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bethe_examples() {
        let dist = bethe_fpt(&BetheSpec::new(3, 4).unwrap(), 6).unwrap();
        assert!((dist.p_d() - 1.0 / 81.0).abs() < 1e-15);

        let dist = bethe_fpt(&BetheSpec::new(3, 2).unwrap(), 4).unwrap();
        assert_eq!(dist.mass_at(3), Some(0.0));
        assert!((dist.mass_at(4).unwrap() - 4.0 / 81.0).abs() < 1e-15);
        for k in (1..=4).step_by(2) {
            assert_eq!(dist.masses()[k], 0.0);
        }
    }

    #[test]
    fn bethe_mass_balance() {
        for z in [3, 4, 5] {
            for d in [1, 2, 5, 9] {
                let dist = bethe_fpt(&BetheSpec::new(z, d).unwrap(), 40).unwrap();
                let total = dist.total_mass() + dist.residual_bound() + dist.defect();
                assert!((total - 1.0).abs() < 1e-12, "z={z} d={d}: {total}");
                let expected = ((z - 1) as f64).powi(-(d as i32));
                assert!((dist.arrival_probability() - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn survival_beyond_horizon_is_unknown() {
        let dist = leaky_loop_fpt(&build_leaky_loop(0.5, 0.9, 5).unwrap(), 3).unwrap();
        assert_eq!(dist.survival(8), Some(1.0 - dist.total_mass()));
        assert_eq!(dist.survival(9), None);
        assert_eq!(dist.mass_at(9), None);
    }

    #[test]
    fn underflow_is_reported() {
        let spec = BetheSpec::new(4, 520).unwrap();
        assert!(matches!(bethe_fpt(&spec, 0), Err(Error::Underflow(_))));
    }

    #[test]
    fn auto_horizon_shrinks_residual() {
        let model = Model::Bethe(BetheSpec::new(3, 8).unwrap());
        let dist = model_fpt_auto(&model, 6561).unwrap();
        assert!(dist.residual_bound() * 6561.0 <= 1e-15);
    }

    #[test]
    fn deep_survival_keeps_decaying() {
        // No killing, so 1 - cumulative would stall at rounding level.
        let head = build_clique_head(3, 0, 0).unwrap();
        let dist = comet_fpt(&CometSpec::new(head, 0, 0.5).unwrap(), 400).unwrap();
        let deep = dist.survival(400).unwrap();
        assert!(deep > 0.0 && deep < 1e-18);
        assert!(deep < dist.survival(399).unwrap());
        let log = dist.log_survival(400).unwrap();
        assert!((log - deep.ln()).abs() < 1e-12);
    }
}
