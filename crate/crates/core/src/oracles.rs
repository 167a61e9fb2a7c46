//! Brute-force and stochastic references for validating the measures and
//! the best-response routine.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use serde::Serialize;

use crate::delegation::{augment, check_agent, DelegationMatrix, DelegationProfile, WeightSource};
use crate::error::{Error, Result};
use crate::game::utility;
use crate::generate::pure_from_targets;
use crate::measures::for_each_outcome;

/// Number of batches used for the batch-means standard error.
pub const BATCHES: u64 = 50;
/// Largest agent count the simplex grid accepts.
pub const GRID_MAX_AGENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleEstimate {
    /// Mean consumption per unit time, one entry per agent plus the
    /// artificial agent.
    pub rates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub steps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival(usize),
    Move(usize),
}

/// Simulates the discrete-time particle process on the penalized system.
///
/// Per step of length `dt`, agent i receives a particle with probability
/// `dt f_i`, and every particle fires with probability `dt`: it then moves
/// to i with probability `P^eps(i, j)` or is consumed where it sits with
/// probability `P^eps(j, j)`. Waiting times are drawn as geometric
/// variables, so only events cost time. Rates are averaged over the second
/// half of the horizon, with standard errors from batch means.
pub fn particle_estimate(
    p: &DelegationMatrix,
    f: &WeightSource,
    epsilon: f64,
    dt: f64,
    t_max: f64,
    seed: u64,
) -> Result<ParticleEstimate> {
    let n = p.n();
    f.check_agents(n)?;
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::ParameterOutOfRange {
            name: "dt",
            value: dt,
        });
    }
    if let Some(&bad) = f.values().iter().find(|&&x| !(x >= 0.0 && x * dt <= 1.0)) {
        return Err(Error::ParameterOutOfRange {
            name: "f",
            value: bad,
        });
    }
    let steps = (t_max / dt).ceil();
    if !(steps.is_finite() && steps >= (4 * BATCHES) as f64 && steps < 1e18) {
        return Err(Error::ParameterOutOfRange {
            name: "t_max",
            value: t_max,
        });
    }
    let steps = steps as u64;
    let aug = augment(p, epsilon)?;
    let columns: Vec<WeightedIndex<f64>> = (0..=n)
        .map(|j| {
            WeightedIndex::new(aug.entries().column(j).iter().copied())
                .expect("columns of the augmented matrix are distributions")
        })
        .collect();
    let fire = Geometric::new(dt).expect("dt in (0, 1]");
    let arrivals: Vec<Option<Geometric>> = f
        .values()
        .iter()
        .map(|&fi| (fi > 0.0).then(|| Geometric::new(fi * dt).expect("rate in (0, 1]")))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<_>, step: u64, ev: Event| {
        seq += 1;
        queue.push(Reverse((step, seq, ev)));
    };
    for (i, g) in arrivals.iter().enumerate() {
        if let Some(g) = g {
            let at = 1 + g.sample(&mut rng);
            push(&mut queue, at, Event::Arrival(i));
        }
    }

    let burn = steps / 2;
    let window = steps - burn;
    let mut counts = vec![vec![0u64; n + 1]; BATCHES as usize];
    while let Some(Reverse((step, _, ev))) = queue.pop() {
        if step > steps {
            break;
        }
        match ev {
            Event::Arrival(i) => {
                let g = arrivals[i].as_ref().expect("only positive rates arrive");
                let next = step + 1 + g.sample(&mut rng);
                push(&mut queue, next, Event::Arrival(i));
                let fires = step + 1 + fire.sample(&mut rng);
                push(&mut queue, fires, Event::Move(i));
            }
            Event::Move(j) => {
                let dest = columns[j].sample(&mut rng);
                if dest == j {
                    if step > burn {
                        let b = (step - burn - 1) * BATCHES / window;
                        counts[b as usize][j] += 1;
                    }
                } else {
                    let fires = step + 1 + fire.sample(&mut rng);
                    push(&mut queue, fires, Event::Move(dest));
                }
            }
        }
    }

    // batch b covers offsets o in [0, window) with o * B / window == b
    let start = |b: u64| (b * window).div_ceil(BATCHES);
    let lengths: Vec<f64> = (0..BATCHES)
        .map(|b| (start(b + 1) - start(b)) as f64 * dt)
        .collect();
    let span = window as f64 * dt;
    let mut rates = vec![0.0; n + 1];
    let mut std_errors = vec![0.0; n + 1];
    for j in 0..=n {
        let total: u64 = counts.iter().map(|c| c[j]).sum();
        rates[j] = total as f64 / span;
        let batch: Vec<f64> = counts
            .iter()
            .zip(&lengths)
            .map(|(c, len)| c[j] as f64 / len)
            .collect();
        let mean = batch.iter().sum::<f64>() / BATCHES as f64;
        let var =
            batch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        std_errors[j] = (var / BATCHES as f64).sqrt();
    }
    Ok(ParticleEstimate {
        rates,
        std_errors,
        steps,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub profile: DelegationProfile,
    pub value: f64,
    /// Number of grid points evaluated.
    pub points: usize,
}

fn compositions(total: usize, parts: usize, visit: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(
        left: usize,
        slot: usize,
        cur: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if slot + 1 == cur.len() {
            cur[slot] = left;
            return visit(cur);
        }
        for k in 0..=left {
            cur[slot] = k;
            rec(left - k, slot + 1, cur, visit)?;
        }
        Ok(())
    }
    rec(total, 0, &mut vec![0; parts], visit)
}

/// Best profile for `agent` over the simplex grid with spacing `step`.
/// Ties keep the first point in lexicographic order of the counts.
pub fn grid_best_response(
    p: &DelegationMatrix,
    agent: usize,
    w: &[f64],
    epsilon: f64,
    step: f64,
) -> Result<GridOptimum> {
    let n = p.n();
    check_agent(agent, n)?;
    if n > GRID_MAX_AGENTS {
        return Err(Error::GridTooLarge { agents: n, step });
    }
    let m = (1.0 / step).round();
    if !(step > 0.0 && (1.0..=20.0).contains(&m) && (m * step - 1.0).abs() <= 1e-9) {
        return Err(Error::ParameterOutOfRange {
            name: "step",
            value: step,
        });
    }
    let m = m as usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut points = 0;
    compositions(m, n, &mut |counts| {
        points += 1;
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / m as f64).collect();
        let q = p.with_profile(&DelegationProfile::from_trusted(agent, weights.clone()))?;
        let u = utility(&q, agent, w, epsilon)?;
        if best.as_ref().is_none_or(|(_, b)| u > *b) {
            best = Some((weights, u));
        }
        Ok(())
    })?;
    let (weights, value) = best.expect("grid is never empty");
    Ok(GridOptimum {
        profile: DelegationProfile::from_trusted(agent, weights),
        value,
        points,
    })
}

/// One pure delegation outcome: agent j hands everything to `targets[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PureOutcome {
    pub targets: Vec<usize>,
    pub probability: f64,
}

impl PureOutcome {
    pub fn matrix(&self) -> DelegationMatrix {
        pure_from_targets(&self.targets)
    }
}

/// Every pure outcome in the product of the agents' supports, with the
/// probability of drawing it when each agent samples its own profile.
pub fn enumerate_pure_support(p: &DelegationMatrix) -> Result<Vec<PureOutcome>> {
    let mut out = Vec::new();
    for_each_outcome(p, |targets, probability| {
        out.push(PureOutcome {
            targets: targets.to_vec(),
            probability,
        });
        Ok(())
    })?;
    Ok(out)
}
