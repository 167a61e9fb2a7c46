//! Delegation profiles, the delegation matrix and its graph structure.
//!
//! Orientation is fixed throughout the crate: the matrix is column-stochastic
//! and entry `(i, j)` is the share agent `j` hands to agent `i`. Column `j` is
//! therefore the delegation profile of agent `j`, and a vote sitting at `j`
//! moves to `i` at rate `P(i, j)`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{Error, Result};

/// Allowed deviation of a profile's sum from 1.
pub const SUM_TOL: f64 = 1e-9;
/// Negative shares down to `-CLAMP_TOL` are treated as serialization noise.
pub const CLAMP_TOL: f64 = 1e-12;
/// A self-share at or below this is treated as zero.
pub const ZERO_TOL: f64 = 1e-12;

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::EpsilonOutOfRange(epsilon))
    }
}

pub(crate) fn check_agent(agent: usize, n: usize) -> Result<()> {
    if agent < n {
        Ok(())
    } else {
        Err(Error::AgentOutOfRange { agent, n })
    }
}

/// How agent `owner` splits its vote over all `n` agents (itself included).
#[derive(Debug, Clone, PartialEq)]
pub struct DelegationProfile {
    owner: usize,
    weights: Vec<f64>,
}

impl DelegationProfile {
    /// Validates and normalizes raw shares.
    ///
    /// Entries in `[-1e-12, 0)` are clamped to zero. The sum must lie within
    /// `1e-9` of one; the entries are then rescaled so that the sum is one up
    /// to rounding. A vector that already sums to one within a few ulps is
    /// left untouched, which makes normalization idempotent.
    pub fn new(owner: usize, raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyProfile { agent: owner });
        }
        let mut weights = Vec::with_capacity(raw.len());
        for (target, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteShare { agent: owner });
            }
            if value < -CLAMP_TOL {
                return Err(Error::NegativeShare {
                    agent: owner,
                    target,
                    value,
                });
            }
            weights.push(value.max(0.0));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::NotNormalized { agent: owner, sum });
        }
        let slack = 4.0 * weights.len() as f64 * f64::EPSILON;
        if (sum - 1.0).abs() > slack {
            for w in &mut weights {
                *w /= sum;
            }
        }
        Ok(Self { owner, weights })
    }

    /// The pure profile sending everything to `target`.
    pub fn vertex(owner: usize, n: usize, target: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[target] = 1.0;
        Self { owner, weights }
    }

    pub(crate) fn from_trusted(owner: usize, weights: Vec<f64>) -> Self {
        Self { owner, weights }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Agents receiving a strictly positive share.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
    }
}

/// Validates a raw share vector for agent `owner` (0-based).
pub fn validate_profile(owner: usize, raw: &[f64]) -> Result<DelegationProfile> {
    DelegationProfile::new(owner, raw)
}

/// Column-stochastic `n x n` matrix whose column `j` is agent `j`'s profile.
#[derive(Debug, Clone, PartialEq)]
pub struct DelegationMatrix {
    p: DMatrix<f64>,
}

impl DelegationMatrix {
    /// Assembles the matrix from one profile per agent, in any order.
    pub fn from_profiles(profiles: Vec<DelegationProfile>) -> Result<Self> {
        let n = profiles.len();
        if n == 0 {
            return Err(Error::EmptyProfile { agent: 0 });
        }
        let mut p = DMatrix::zeros(n, n);
        let mut seen = vec![false; n];
        for profile in &profiles {
            if profile.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "delegation profile",
                    expected: n,
                    found: profile.len(),
                });
            }
            let owner = profile.owner();
            check_agent(owner, n)?;
            if std::mem::replace(&mut seen[owner], true) {
                return Err(Error::DuplicateOwner { agent: owner });
            }
            for (i, &w) in profile.weights().iter().enumerate() {
                p[(i, owner)] = w;
            }
        }
        Ok(Self { p })
    }

    /// Builds the matrix from agent-major rows: `rows[i]` is the profile of
    /// agent `i`. This is the layout used by instance files.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let profiles = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "delegation profile",
                        expected: n,
                        found: row.len(),
                    });
                }
                DelegationProfile::new(i, row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_profiles(profiles)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            p: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Share agent `from` hands to agent `to`.
    pub fn share(&self, to: usize, from: usize) -> f64 {
        self.p[(to, from)]
    }

    pub fn self_share(&self, agent: usize) -> f64 {
        self.p[(agent, agent)]
    }

    /// True when `from` hands a positive share to a different agent `to`.
    pub fn delegates_to(&self, from: usize, to: usize) -> bool {
        from != to && self.p[(to, from)] > 0.0
    }

    pub fn profile(&self, agent: usize) -> DelegationProfile {
        DelegationProfile::from_trusted(agent, self.p.column(agent).iter().copied().collect())
    }

    pub fn profiles(&self) -> Vec<DelegationProfile> {
        (0..self.n()).map(|j| self.profile(j)).collect()
    }

    /// Agent-major rows, the inverse of [`DelegationMatrix::from_rows`].
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|j| self.p.column(j).iter().copied().collect())
            .collect()
    }

    /// Copy of the matrix with `profile` swapped in for its owner's column.
    pub fn with_profile(&self, profile: &DelegationProfile) -> Result<Self> {
        let n = self.n();
        check_agent(profile.owner(), n)?;
        if profile.len() != n {
            return Err(Error::DimensionMismatch {
                what: "delegation profile",
                expected: n,
                found: profile.len(),
            });
        }
        let mut p = self.p.clone();
        for (i, &w) in profile.weights().iter().enumerate() {
            p[(i, profile.owner())] = w;
        }
        Ok(Self { p })
    }

    /// Every self-share is 0 or 1.
    pub fn is_class_b(&self) -> bool {
        (0..self.n()).all(|i| {
            let d = self.self_share(i);
            d == 0.0 || d == 1.0
        })
    }

    /// Every entry is 0 or 1: classic single-proxy delegation.
    pub fn is_pure(&self) -> bool {
        self.p.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    pub(crate) fn without_diagonal(&self) -> DMatrix<f64> {
        let mut t = self.p.clone();
        t.fill_diagonal(0.0);
        t
    }
}

/// Assembles a delegation matrix from `n` profiles (see
/// [`DelegationMatrix::from_profiles`]).
pub fn assemble_matrix(profiles: Vec<DelegationProfile>) -> Result<DelegationMatrix> {
    DelegationMatrix::from_profiles(profiles)
}

/// Split of the agents into self-retainers, agents with a delegation path to
/// a self-retainer, and agents whose vote can only circulate in cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPartition {
    pub n1: Vec<usize>,
    pub n2: Vec<usize>,
    pub n3: Vec<usize>,
}

impl AgentPartition {
    /// Agents in `n1` or `n2`, ascending.
    pub fn reaching(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.n1.iter().chain(&self.n2).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn is_trapped(&self, agent: usize) -> bool {
        self.n3.binary_search(&agent).is_ok()
    }
}

/// Classifies agents by reverse breadth-first search from the self-retainers.
pub fn partition_agents(p: &DelegationMatrix) -> AgentPartition {
    let n = p.n();
    let mut reaches = vec![false; n];
    let mut queue = VecDeque::new();
    let mut n1 = Vec::new();
    for i in 0..n {
        if p.self_share(i).abs() > ZERO_TOL {
            reaches[i] = true;
            queue.push_back(i);
            n1.push(i);
        }
    }
    while let Some(t) = queue.pop_front() {
        for j in 0..n {
            if !reaches[j] && p.delegates_to(j, t) {
                reaches[j] = true;
                queue.push_back(j);
            }
        }
    }
    let n1_set: BTreeSet<usize> = n1.iter().copied().collect();
    let n2 = (0..n)
        .filter(|i| reaches[*i] && !n1_set.contains(i))
        .collect();
    let n3 = (0..n).filter(|i| !reaches[*i]).collect();
    AgentPartition { n1, n2, n3 }
}

/// Tests whether `set` is closed under delegation and retains nothing.
pub fn is_delegation_cycle(p: &DelegationMatrix, set: &[usize]) -> Result<bool> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = p.n();
    let mut member = vec![false; n];
    for &i in set {
        check_agent(i, n)?;
        member[i] = true;
    }
    for &i in set {
        if p.self_share(i).abs() > ZERO_TOL {
            return Ok(false);
        }
        if (0..n).any(|j| !member[j] && p.share(j, i) > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Minimal delegation cycles: closed strongly connected classes without
/// self-retention. Each returned set is sorted ascending.
pub fn delegation_cycles(p: &DelegationMatrix) -> Vec<Vec<usize>> {
    let n = p.n();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for from in 0..n {
        for to in 0..n {
            if p.delegates_to(from, to) {
                graph.add_edge(nodes[from], nodes[to], ());
            }
        }
    }
    let mut cycles: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|scc| {
            let mut members: Vec<usize> = scc.into_iter().map(|ix| ix.index()).collect();
            members.sort_unstable();
            members
        })
        .filter(|members| is_delegation_cycle(p, members).unwrap_or(false))
        .collect();
    cycles.sort();
    cycles
}

/// The `(n+1) x (n+1)` matrix with a leak of rate `epsilon` from every agent
/// into an absorbing artificial agent `n+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMatrix {
    entries: DMatrix<f64>,
    epsilon: f64,
}

impl AugmentedMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dimension(&self) -> usize {
        self.entries.nrows()
    }
}

/// Scales `P` by `1 - epsilon` and routes the remaining `epsilon` of every
/// column to the absorbing agent.
pub fn augment(p: &DelegationMatrix, epsilon: f64) -> Result<AugmentedMatrix> {
    check_epsilon(epsilon)?;
    let n = p.n();
    let mut entries = DMatrix::zeros(n + 1, n + 1);
    entries
        .view_mut((0, 0), (n, n))
        .copy_from(&(p.as_matrix() * (1.0 - epsilon)));
    for j in 0..n {
        entries[(n, j)] = epsilon;
    }
    entries[(n, n)] = 1.0;
    Ok(AugmentedMatrix { entries, epsilon })
}

/// Inherent voting weight per agent, plus an entry for the artificial agent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSource {
    values: Vec<f64>,
}

impl WeightSource {
    /// Any vector is admitted; see [`WeightSource::warnings`].
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// One unit per agent and nothing for the artificial agent.
    pub fn uniform(n: usize) -> Self {
        let mut values = vec![1.0; n + 1];
        values[n] = 0.0;
        Self { values }
    }

    /// A single unit injected at `agent`.
    pub fn basis(n: usize, agent: usize) -> Self {
        let mut values = vec![0.0; n + 1];
        values[agent] = 1.0;
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&x| x >= 0.0)
    }

    pub(crate) fn check_agents(&self, n: usize) -> Result<()> {
        if self.values.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                what: "weight source",
                expected: n + 1,
                found: self.values.len(),
            });
        }
        Ok(())
    }

    /// Entries the measures compute with but do not interpret.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let last = self.values.len().saturating_sub(1);
        for (i, &v) in self.values.iter().enumerate() {
            if i < last && v < 0.0 {
                out.push(format!("agent {} has negative inherent weight {v}", i + 1));
            }
        }
        if let Some(&v) = self.values.last() {
            if v != 0.0 {
                out.push(format!("artificial agent {} has nonzero weight {v}", last + 1));
            }
        }
        out
    }
}
