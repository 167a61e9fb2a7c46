//! The delegation game: each agent picks a delegation profile and is paid
//! by how its own vote ends up being consumed.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::delegation::{check_agent, check_epsilon, DelegationMatrix, DelegationProfile, WeightSource};
use crate::error::{Error, Result};
use crate::measures::power_eps;

/// Vertices whose utilities differ by at most this are tied.
pub const TIE_TOL: f64 = 1e-10;
pub const DEFAULT_REGRET_TOL: f64 = 1e-6;

/// `w[i][j]`: agent i's satisfaction per unit of its vote consumed by j;
/// the last entry weights dissipated vote.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceProfile {
    rows: Vec<Vec<f64>>,
}

impl PreferenceProfile {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n + 1 {
                return Err(Error::DimensionMismatch {
                    what: "preference row",
                    expected: n + 1,
                    found: row.len(),
                });
            }
            if row.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinitePreference { agent: i });
            }
        }
        Ok(Self { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.rows[agent]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Per-agent sets of admissible delegation targets.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpace {
    neighborhoods: Vec<Vec<usize>>,
}

impl StrategySpace {
    pub fn full(n: usize) -> Self {
        Self {
            neighborhoods: vec![(0..n).collect(); n],
        }
    }

    /// 0-based neighborhoods, one per agent; each is sorted and deduplicated.
    pub fn restricted(neighborhoods: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighborhoods.len();
        let mut out = Vec::with_capacity(n);
        for (i, mut nb) in neighborhoods.into_iter().enumerate() {
            if nb.is_empty() {
                return Err(Error::EmptyNeighborhood { agent: i });
            }
            for &t in &nb {
                check_agent(t, n)?;
            }
            nb.sort_unstable();
            nb.dedup();
            out.push(nb);
        }
        Ok(Self { neighborhoods: out })
    }

    pub fn n(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn allowed(&self, agent: usize) -> &[usize] {
        &self.neighborhoods[agent]
    }

    pub fn neighborhoods(&self) -> &[Vec<usize>] {
        &self.neighborhoods
    }

    pub fn admits(&self, profile: &DelegationProfile) -> bool {
        let nb = self.allowed(profile.owner());
        profile.support().all(|t| nb.binary_search(&t).is_ok())
    }
}

fn check_dims(p: &DelegationMatrix, w_len: usize) -> Result<()> {
    if w_len != p.n() + 1 {
        return Err(Error::DimensionMismatch {
            what: "preference row",
            expected: p.n() + 1,
            found: w_len,
        });
    }
    Ok(())
}

fn check_space(p: &DelegationMatrix, space: &StrategySpace) -> Result<()> {
    if space.n() != p.n() {
        return Err(Error::DimensionMismatch {
            what: "strategy space",
            expected: p.n(),
            found: space.n(),
        });
    }
    Ok(())
}

/// `w_i . V^eps(P, delta_i)`: agent i's payoff from where its own unit of
/// vote is consumed.
pub fn utility(p: &DelegationMatrix, agent: usize, w: &[f64], epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_agent(agent, p.n())?;
    check_dims(p, w.len())?;
    let v = power_eps(p, &WeightSource::basis(p.n(), agent), epsilon)?;
    Ok(v.power.values().iter().zip(w).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    pub agent: usize,
    /// Targets `j` whose vertex `e_j` attains the optimum, ascending.
    pub argmax_vertices: Vec<usize>,
    pub value: f64,
}

/// Best response of `agent` against the other columns of `p`.
///
/// Along any segment of the agent's own strategy simplex the utility is a
/// monotone linear-fractional function, so the optimum is attained at a
/// vertex and only the `|N_i|` pure profiles need evaluating.
pub fn best_response(
    p: &DelegationMatrix,
    agent: usize,
    w: &[f64],
    epsilon: f64,
    space: &StrategySpace,
) -> Result<BestResponse> {
    check_epsilon(epsilon)?;
    check_agent(agent, p.n())?;
    check_space(p, space)?;
    let targets = space.allowed(agent);
    if targets.is_empty() {
        return Err(Error::EmptyNeighborhood { agent });
    }
    let values = targets
        .iter()
        .map(|&t| {
            let q = p.with_profile(&DelegationProfile::vertex(agent, p.n(), t))?;
            utility(&q, agent, w, epsilon)
        })
        .collect::<Result<Vec<f64>>>()?;
    let value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let argmax_vertices = targets
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v >= value - TIE_TOL)
        .map(|(&t, _)| t)
        .collect();
    Ok(BestResponse {
        agent,
        argmax_vertices,
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub regrets: Vec<f64>,
    pub max_regret: f64,
    pub tol: f64,
}

impl RegretReport {
    pub fn is_epsilon_nash(&self, tol: f64) -> bool {
        self.max_regret <= tol
    }
}

/// Regret of every agent: best-response value minus current utility.
pub fn verify_equilibrium(
    p: &DelegationMatrix,
    w: &PreferenceProfile,
    epsilon: f64,
    space: &StrategySpace,
    tol: f64,
) -> Result<RegretReport> {
    check_epsilon(epsilon)?;
    check_space(p, space)?;
    if w.n() != p.n() {
        return Err(Error::DimensionMismatch {
            what: "preference profile",
            expected: p.n(),
            found: w.n(),
        });
    }
    let mut regrets = Vec::with_capacity(p.n());
    for i in 0..p.n() {
        if !space.admits(&p.profile(i)) {
            return Err(Error::OutsideNeighborhood { agent: i });
        }
        let br = best_response(p, i, w.row(i), epsilon, space)?;
        regrets.push(br.value - utility(p, i, w.row(i), epsilon)?);
    }
    let max_regret = regrets.iter().copied().fold(0.0_f64, f64::max);
    Ok(RegretReport {
        regrets,
        max_regret,
        tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    CycleDetected,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub round: usize,
    pub agent: usize,
    /// The vertex the agent switched to.
    pub target: usize,
    pub max_regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub status: Status,
    /// Completed rounds, the final (switch-free or repeating) one included.
    pub rounds: usize,
    /// Update order used in every round.
    pub order: Vec<usize>,
    pub final_matrix: DelegationMatrix,
    pub final_regret: RegretReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: DEFAULT_REGRET_TOL,
            seed: 0,
        }
    }
}

/// Sequential best-response dynamics with inertia.
///
/// Agents move in a round-robin order shuffled once from `seed`. An agent
/// switches only when the best vertex beats its current utility by more
/// than `tol`, and then to the lowest-index best vertex. A round without
/// switches ends the run as converged; a repeated end-of-round state ends
/// it as a cycle.
pub fn br_dynamics(
    p0: &DelegationMatrix,
    w: &PreferenceProfile,
    epsilon: f64,
    space: &StrategySpace,
    config: DynamicsConfig,
) -> Result<Trajectory> {
    check_epsilon(epsilon)?;
    check_space(p0, space)?;
    let n = p0.n();
    if w.n() != n {
        return Err(Error::DimensionMismatch {
            what: "preference profile",
            expected: n,
            found: w.n(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut p = p0.clone();
    // vertex each agent currently plays, None while still on its start profile
    let mut state: Vec<Option<usize>> = vec![None; n];
    let mut seen = HashSet::new();
    let mut steps = Vec::new();
    let mut status = Status::MaxIters;
    let mut rounds = 0;
    while rounds < config.max_iters {
        rounds += 1;
        let mut switched = false;
        for &i in &order {
            let br = best_response(&p, i, w.row(i), epsilon, space)?;
            let current = utility(&p, i, w.row(i), epsilon)?;
            if br.value - current > config.tol {
                let target = br.argmax_vertices[0];
                p = p.with_profile(&DelegationProfile::vertex(i, n, target))?;
                state[i] = Some(target);
                switched = true;
                let report = verify_equilibrium(&p, w, epsilon, space, config.tol)?;
                steps.push(Step {
                    round: rounds,
                    agent: i,
                    target,
                    max_regret: report.max_regret,
                });
            }
        }
        if !switched {
            status = Status::Converged;
            break;
        }
        if !seen.insert(state.clone()) {
            status = Status::CycleDetected;
            break;
        }
    }
    let final_regret = verify_equilibrium(&p, w, epsilon, space, config.tol)?;
    Ok(Trajectory {
        steps,
        status,
        rounds,
        order,
        final_matrix: p,
        final_regret,
    })
}
