//! Exhaustive trajectory enumeration, used as an independent oracle for the
//! solvers in tests.
//!
//! Comet trajectories are enumerated on the explicit head-plus-tail graph.
//! Bethe trajectories are enumerated on the explicit tree, encoded as the
//! Cayley graph of the free product of `z` copies of `Z/2`: a vertex is a
//! reduced word over `z` letters, and a step by letter `a` cancels a
//! trailing `a` or appends it.

use crate::error::{Error, Result};
use crate::fpt::FptDistribution;
use crate::graph::{CometSpec, LeakyLoopSpec, Model, StepTarget};

/// Maximum number of path-probability terms one enumeration may visit.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

#[derive(Default)]
struct Tally {
    arrivals: Vec<f64>,
    killed: f64,
    alive_at_horizon: f64,
    terms: u64,
}

impl Tally {
    fn new(t_max: usize) -> Self {
        Self {
            arrivals: vec![0.0; t_max + 1],
            ..Self::default()
        }
    }

    fn visit(&mut self) -> Result<()> {
        self.terms += 1;
        if self.terms > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(())
    }

    fn finish(self) -> Result<FptDistribution> {
        let Some(d) = self.arrivals.iter().position(|&p| p > 0.0) else {
            return Err(Error::InvalidArgument(
                "no trajectory reaches the target within t_max".into(),
            ));
        };
        FptDistribution::new(
            d,
            self.arrivals[d..].to_vec(),
            self.killed,
            self.alive_at_horizon,
        )
    }
}

/// Exact masses up to `t_max` by summing the probability of every
/// trajectory. `defect` holds the killed mass and `residual_bound` the mass
/// still walking at `t_max`.
pub fn brute_force_fpt(model: &Model, t_max: usize) -> Result<FptDistribution> {
    let mut tally = Tally::new(t_max);
    match model {
        Model::Comet(spec) => {
            spec.ensure_valid()?;
            enumerate_comet(spec, t_max, &mut tally)?;
        }
        Model::LeakyLoop(spec) => {
            spec.ensure_valid()?;
            enumerate_leaky(spec, t_max, &mut tally)?;
        }
        Model::Bethe(spec) => {
            spec.ensure_valid()?;
            let mut word = Vec::with_capacity(t_max + spec.distance);
            let target: Vec<u8> = (0..spec.distance).map(|i| (i % 2) as u8).collect();
            enumerate_tree(
                spec.coordination as u8,
                &target,
                &mut word,
                0,
                1.0,
                t_max,
                &mut tally,
            )?;
        }
    }
    tally.finish()
}

#[derive(Clone, Copy)]
enum Place {
    Head(usize),
    /// Hops completed after the tail entry node.
    Tail(usize),
}

fn enumerate_comet(spec: &CometSpec, t_max: usize, tally: &mut Tally) -> Result<()> {
    fn walk(
        spec: &CometSpec,
        place: Place,
        t: usize,
        prob: f64,
        t_max: usize,
        tally: &mut Tally,
    ) -> Result<()> {
        tally.visit()?;
        if let Place::Tail(j) = place {
            if j == spec.tail_hops {
                tally.arrivals[t] += prob;
                return Ok(());
            }
        }
        if t == t_max {
            tally.alive_at_horizon += prob;
            return Ok(());
        }
        match place {
            Place::Head(u) => {
                for &(target, p) in spec.head.steps(u) {
                    let next = match target {
                        StepTarget::Node(v) => Place::Head(v),
                        StepTarget::Tail => Place::Tail(0),
                    };
                    walk(spec, next, t + 1, prob * p, t_max, tally)?;
                }
            }
            Place::Tail(j) => {
                tally.killed += prob * (1.0 - spec.survival);
                walk(
                    spec,
                    Place::Tail(j + 1),
                    t + 1,
                    prob * spec.survival,
                    t_max,
                    tally,
                )?;
            }
        }
        Ok(())
    }
    walk(spec, Place::Head(spec.head.start()), 0, 1.0, t_max, tally)
}

fn enumerate_leaky(spec: &LeakyLoopSpec, t_max: usize, tally: &mut Tally) -> Result<()> {
    // State: None while looping at g₀, Some(j) after j tail hops past entry.
    fn walk(
        spec: &LeakyLoopSpec,
        place: Option<usize>,
        t: usize,
        prob: f64,
        t_max: usize,
        tally: &mut Tally,
    ) -> Result<()> {
        tally.visit()?;
        if place == Some(spec.distance - 1) {
            tally.arrivals[t] += prob;
            return Ok(());
        }
        if t == t_max {
            tally.alive_at_horizon += prob;
            return Ok(());
        }
        match place {
            None => {
                if spec.stay > 0.0 {
                    walk(spec, None, t + 1, prob * spec.stay, t_max, tally)?;
                }
                walk(spec, Some(0), t + 1, prob * (1.0 - spec.stay), t_max, tally)
            }
            Some(j) => {
                tally.killed += prob * (1.0 - spec.survival);
                walk(spec, Some(j + 1), t + 1, prob * spec.survival, t_max, tally)
            }
        }
    }
    walk(spec, None, 0, 1.0, t_max, tally)
}

fn enumerate_tree(
    z: u8,
    target: &[u8],
    word: &mut Vec<u8>,
    t: usize,
    prob: f64,
    t_max: usize,
    tally: &mut Tally,
) -> Result<()> {
    tally.visit()?;
    if word.as_slice() == target {
        tally.arrivals[t] += prob;
        return Ok(());
    }
    if t == t_max {
        tally.alive_at_horizon += prob;
        return Ok(());
    }
    let step = prob / f64::from(z);
    for letter in 0..z {
        if word.last() == Some(&letter) {
            word.pop();
            enumerate_tree(z, target, word, t + 1, step, t_max, tally)?;
            word.push(letter);
        } else {
            word.push(letter);
            enumerate_tree(z, target, word, t + 1, step, t_max, tally)?;
            word.pop();
        }
    }
    Ok(())
}
