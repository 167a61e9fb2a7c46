//! Voting-power measures.
//!
//! All vectors returned here have `n + 1` entries unless noted: one per
//! agent followed by the artificial agent that absorbs dissipated weight.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::delegation::{
    augment, check_agent, partition_agents, DelegationMatrix, DelegationProfile, WeightSource,
    ZERO_TOL,
};
use crate::error::{Error, ReductionClause, Result};
use crate::linalg::solve;

/// Enumeration guard for the mixed-strategy measure.
pub const MAX_OUTCOMES: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Entries of the real agents.
    pub fn agents(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    /// Weight dissipated into the artificial agent.
    pub fn loss(&self) -> f64 {
        *self.0.last().expect("power vector is never empty")
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &PowerVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Epsilon { epsilon: f64 },
    Exact,
    Series { k_used: usize },
    Classic,
    StandardGeneralization { k_used: usize, converged: bool },
    MixedStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureResult {
    pub power: PowerVector,
    pub method: Method,
    /// Solver residual, or the last change for iterative methods.
    pub residual: f64,
}

fn diag(p: &DelegationMatrix) -> Vec<f64> {
    (0..p.n()).map(|i| p.self_share(i)).collect()
}

fn penalized_solve(
    p: &DelegationMatrix,
    f: &WeightSource,
    epsilon: f64,
) -> Result<(DMatrix<f64>, crate::linalg::Solution)> {
    f.check_agents(p.n())?;
    let e = augment(p, epsilon)?.entries().clone();
    let mut a = -e.clone();
    a.fill_diagonal(1.0);
    let sol = solve(&a, &DVector::from_column_slice(f.values()))?;
    Ok((e, sol))
}

/// Penalized measure `V^eps`: one solve on the augmented system.
pub fn power_eps(p: &DelegationMatrix, f: &WeightSource, epsilon: f64) -> Result<MeasureResult> {
    let (e, sol) = penalized_solve(p, f, epsilon)?;
    let values = (0..e.nrows()).map(|i| e[(i, i)] * sol.x[i]).collect();
    Ok(MeasureResult {
        power: PowerVector(values),
        method: Method::Epsilon { epsilon },
        residual: sol.residual,
    })
}

/// Total weight passing through each agent (the unmasked solution `u`
/// behind [`power_eps`]), `n + 1` entries.
pub fn flux_eps(p: &DelegationMatrix, f: &WeightSource, epsilon: f64) -> Result<Vec<f64>> {
    let (_, sol) = penalized_solve(p, f, epsilon)?;
    Ok(sol.x.iter().copied().collect())
}

/// Exact measure `V`: solve restricted to the agents whose vote reaches a
/// self-retainer; everything else is loss.
pub fn power_exact(p: &DelegationMatrix, f: &WeightSource) -> Result<MeasureResult> {
    let n = p.n();
    f.check_agents(n)?;
    let idx = partition_agents(p).reaching();
    let fv = f.values();
    let mut values = vec![0.0; n + 1];
    let mut residual = 0.0;
    if !idx.is_empty() {
        let m = idx.len();
        let a = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                1.0
            } else {
                -p.share(idx[r], idx[c])
            }
        });
        let b = DVector::from_iterator(m, idx.iter().map(|&i| fv[i]));
        let sol = solve(&a, &b)?;
        for (r, &i) in idx.iter().enumerate() {
            values[i] = p.self_share(i) * sol.x[r];
        }
        residual = sol.residual;
    }
    values[n] = f.total() - values[..n].iter().sum::<f64>();
    Ok(MeasureResult {
        power: PowerVector(values),
        method: Method::Exact,
        residual,
    })
}

/// Exact measure via partial sums of `sum_l Pt^l f`, masked by the
/// self-shares. `f` holds the agents' weights only.
pub fn power_series(
    p: &DelegationMatrix,
    f: &[f64],
    tol: f64,
    k_max: usize,
) -> Result<MeasureResult> {
    let n = p.n();
    if f.len() != n {
        return Err(Error::DimensionMismatch {
            what: "weight vector",
            expected: n,
            found: f.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::ParameterOutOfRange {
            name: "tol",
            value: tol,
        });
    }
    if k_max == 0 {
        return Err(Error::ParameterOutOfRange {
            name: "k_max",
            value: 0.0,
        });
    }
    let pt = p.without_diagonal();
    let d = DVector::from_vec(diag(p));
    let n1 = partition_agents(p).n1;
    let mut term = DVector::from_column_slice(f);
    let mut sum = term.clone();
    let mut prev = sum.component_mul(&d);
    let mut change = f64::INFINITY;
    for k in 1..=k_max {
        term = &pt * &term;
        sum += &term;
        let masked = sum.component_mul(&d);
        change = n1
            .iter()
            .fold(0.0_f64, |m, &i| m.max((masked[i] - prev[i]).abs()));
        prev = masked;
        if change < tol {
            let mut values: Vec<f64> = prev.iter().copied().collect();
            values.push(f.iter().sum::<f64>() - values.iter().sum::<f64>());
            return Ok(MeasureResult {
                power: PowerVector(values),
                method: Method::Series { k_used: k },
                residual: change,
            });
        }
    }
    Err(Error::NoConvergence {
        k_used: k_max,
        change,
    })
}

fn check_class_b(p: &DelegationMatrix) -> Result<()> {
    for i in 0..p.n() {
        let d = p.self_share(i);
        if d.abs() > ZERO_TOL && (d - 1.0).abs() > ZERO_TOL {
            return Err(Error::NotInClassB { agent: i, value: d });
        }
    }
    Ok(())
}

/// Classic measure `lim (P^k 1) * diag(P)` for matrices whose self-shares
/// are all 0 or 1. Returns `n` entries.
///
/// Pure single-proxy matrices settle within `n` hops, so `2n` products are
/// exact. Fractional delegation among non-candidates only converges
/// geometrically, so there the limit is taken by repeated squaring.
pub fn classic_power(p: &DelegationMatrix) -> Result<Vec<f64>> {
    check_class_b(p)?;
    let n = p.n();
    let d = DVector::from_vec(diag(p));
    let ones = DVector::from_element(n, 1.0);
    if p.is_pure() {
        let mut v = ones;
        for _ in 0..2 * n {
            v = p.as_matrix() * v;
        }
        return Ok(v.component_mul(&d).iter().copied().collect());
    }
    let mut m = p.as_matrix().clone();
    let mut prev = (&m * &ones).component_mul(&d);
    let settle = 4.0 * f64::EPSILON * n as f64;
    for _ in 0..64 {
        m = &m * &m;
        let cur = (&m * &ones).component_mul(&d);
        let change = (&cur - &prev).amax();
        prev = cur;
        if change <= settle * prev.amax().max(1.0) {
            break;
        }
    }
    Ok(prev.iter().copied().collect())
}

/// The entrywise-masked power iteration applied to arbitrary matrices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardGeneralization {
    pub power: Vec<f64>,
    pub k_used: usize,
    pub converged: bool,
    pub change: f64,
}

/// Iterates `(P^k 1) * diag(P)` until the masked entries move by less than
/// `tol` for `n` consecutive products, or `k_max` products have been taken.
///
/// A single small step is not enough: the masked entries can stall for a
/// step and then move again. Each masked entry follows a linear recurrence
/// of order at most `n`, so `n` consecutive zero steps mean it has settled.
pub fn standard_generalization(
    p: &DelegationMatrix,
    k_max: usize,
    tol: f64,
) -> StandardGeneralization {
    let n = p.n();
    let d = DVector::from_vec(diag(p));
    let mut v = DVector::from_element(n, 1.0);
    let mut prev = v.component_mul(&d);
    let mut change = f64::INFINITY;
    let mut quiet = 0;
    for k in 1..=k_max {
        v = p.as_matrix() * v;
        let cur = v.component_mul(&d);
        change = (&cur - &prev).amax();
        prev = cur;
        quiet = if change < tol { quiet + 1 } else { 0 };
        if quiet >= n {
            return StandardGeneralization {
                power: prev.iter().copied().collect(),
                k_used: k,
                converged: true,
                change,
            };
        }
    }
    StandardGeneralization {
        power: prev.iter().copied().collect(),
        k_used: k_max,
        converged: false,
        change,
    }
}

/// Per-agent supports, checked against the enumeration guard.
pub(crate) fn supports(p: &DelegationMatrix) -> Result<Vec<Vec<usize>>> {
    let s: Vec<Vec<usize>> = (0..p.n()).map(|j| p.profile(j).support().collect()).collect();
    let size: f64 = s.iter().map(|x| x.len() as f64).product();
    if size > MAX_OUTCOMES {
        return Err(Error::SupportTooLarge { size });
    }
    Ok(s)
}

/// Visits every pure outcome in the product of supports, agent 0 varying
/// slowest, with its probability accumulated over agents in index order.
pub(crate) fn for_each_outcome(
    p: &DelegationMatrix,
    mut visit: impl FnMut(&[usize], f64) -> Result<()>,
) -> Result<()> {
    let s = supports(p)?;
    let n = s.len();
    let mut pos = vec![0usize; n];
    let mut targets = vec![0usize; n];
    loop {
        let mut prob = 1.0;
        for j in 0..n {
            targets[j] = s[j][pos[j]];
            prob *= p.share(targets[j], j);
        }
        visit(&targets, prob)?;
        let mut j = n;
        loop {
            if j == 0 {
                return Ok(());
            }
            j -= 1;
            pos[j] += 1;
            if pos[j] < s[j].len() {
                break;
            }
            pos[j] = 0;
        }
    }
}

/// Expected classic power when each agent independently delegates to a
/// single target drawn from its profile. Returns `n` entries.
pub fn mixed_strategy_power(p: &DelegationMatrix) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; p.n()];
    for_each_outcome(p, |targets, prob| {
        let a = crate::generate::pure_from_targets(targets);
        for (x, v) in acc.iter_mut().zip(classic_power(&a)?) {
            *x += prob * v;
        }
        Ok(())
    })?;
    Ok(acc)
}

/// The replication transform: agent `k` replaces its delegation to the
/// proxies in `d` by a direct copy of their profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionSpec {
    pub k: usize,
    pub d: Vec<usize>,
    pub x_star_k: DelegationProfile,
    /// `1 - sum_{i in D} x_ki x_ik`.
    pub denominator: f64,
}

fn reduction_denominator(p: &DelegationMatrix, k: usize, d: &[usize]) -> Result<f64> {
    let n = p.n();
    check_agent(k, n)?;
    if d.is_empty() {
        return Err(Error::PreconditionViolated(ReductionClause::EmptyProxySet));
    }
    for &i in d {
        check_agent(i, n)?;
    }
    if d.contains(&k) {
        return Err(Error::PreconditionViolated(ReductionClause::AgentInProxySet));
    }
    for &i in d {
        if p.self_share(i) > ZERO_TOL {
            return Err(Error::PreconditionViolated(ReductionClause::ProxyRetains {
                proxy: i,
            }));
        }
    }
    for j in 0..n {
        let share = p.share(j, k);
        if d.contains(&j) {
            if share <= 0.0 {
                return Err(Error::PreconditionViolated(
                    ReductionClause::MissingProxyShare { proxy: j },
                ));
            }
        } else if share > 0.0 {
            return Err(Error::PreconditionViolated(
                ReductionClause::SupportOutsideProxies { target: j },
            ));
        }
    }
    let back: f64 = d.iter().map(|&i| p.share(i, k) * p.share(k, i)).sum();
    let denominator = 1.0 - back;
    if denominator <= 1e-12 {
        return Err(Error::DegenerateDenominator(denominator));
    }
    if partition_agents(p).is_trapped(k) {
        return Err(Error::PreconditionViolated(ReductionClause::AgentInCycle));
    }
    Ok(denominator)
}

fn proxy_set(d: &[usize]) -> Vec<usize> {
    d.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Replaces agent `k`'s profile by the replication of its proxies' profiles.
pub fn delegation_reduction(
    p: &DelegationMatrix,
    k: usize,
    d: &[usize],
) -> Result<(DelegationMatrix, ReductionSpec)> {
    let d = proxy_set(d);
    let denominator = reduction_denominator(p, k, &d)?;
    let n = p.n();
    let mut x = vec![0.0; n];
    for &i in &d {
        let w = p.share(i, k);
        for (j, xj) in x.iter_mut().enumerate() {
            if j != k {
                *xj += w * p.share(j, i);
            }
        }
    }
    for xj in &mut x {
        *xj /= denominator;
    }
    let x_star_k = DelegationProfile::from_trusted(k, x);
    let reduced = p.with_profile(&x_star_k)?;
    Ok((
        reduced,
        ReductionSpec {
            k,
            d,
            x_star_k,
            denominator,
        },
    ))
}

/// Proxies of `k`: the other agents in the support of its profile.
pub fn proxies_of(p: &DelegationMatrix, k: usize) -> Vec<usize> {
    p.profile(k).support().filter(|&j| j != k).collect()
}

/// Bound constant for the penalized replication gap:
/// `(n + 1) * sum(f) / (1 - sum_{i in D} x_ki x_ik)`.
pub fn delta_delegation_constant(
    p: &DelegationMatrix,
    f: &WeightSource,
    k: usize,
    d: &[usize],
) -> Result<f64> {
    f.check_agents(p.n())?;
    let denominator = reduction_denominator(p, k, &proxy_set(d))?;
    Ok((p.n() + 1) as f64 * f.total() / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{self, Shape};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(r: &[&[f64]]) -> DelegationMatrix {
        DelegationMatrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    // a->b->c->d, d and e keep their votes
    fn intro_chain() -> DelegationMatrix {
        generate::pure_from_targets(&[1, 2, 3, 3, 4])
    }

    fn two_agent() -> DelegationMatrix {
        rows(&[&[0.5, 0.5], &[0.0, 1.0]])
    }

    fn swap() -> DelegationMatrix {
        rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    fn left() -> DelegationMatrix {
        rows(&[&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.5], &[0.0, 1.0, 0.0]])
    }

    fn right() -> DelegationMatrix {
        rows(&[&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.5], &[1.0, 0.0, 0.0]])
    }

    fn ms_left() -> DelegationMatrix {
        rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.5, 0.0, 0.25, 0.25],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])
    }

    fn ms_right() -> DelegationMatrix {
        rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.5, 0.0, 0.25, 0.25],
            &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0],
            &[0.0, 0.0, 0.0, 1.0],
        ])
    }

    #[test]
    fn eps_single_agent() {
        for eps in [0.1, 0.5, 0.9] {
            let r = power_eps(&DelegationMatrix::identity(1), &WeightSource::uniform(1), eps)
                .unwrap();
            assert!(close(r.power.values(), &[1.0 - eps, eps], 1e-14));
            assert!(r.residual <= 1e-9);
        }
    }

    #[test]
    fn eps_chain() {
        let p = generate::pure_from_targets(&[1, 1]);
        for eps in [0.1, 0.3] {
            let r = power_eps(&p, &WeightSource::uniform(2), eps).unwrap();
            let want = [0.0, (1.0 - eps) * (2.0 - eps), eps * (3.0 - eps)];
            assert!(close(r.power.values(), &want, 1e-12));
        }
    }

    #[test]
    fn eps_swap_cycle_loses_everything() {
        for eps in [0.01, 0.5] {
            let r = power_eps(&swap(), &WeightSource::uniform(2), eps).unwrap();
            assert!(close(r.power.values(), &[0.0, 0.0, 2.0], 1e-12));
        }
        assert_eq!(
            power_eps(&swap(), &WeightSource::uniform(2), 0.0),
            Err(Error::EpsilonOutOfRange(0.0))
        );
    }

    #[test]
    fn exact_examples() {
        let v = power_exact(&intro_chain(), &WeightSource::uniform(5)).unwrap();
        assert!(close(v.power.values(), &[0.0, 0.0, 0.0, 4.0, 1.0, 0.0], 1e-12));
        let v = power_exact(&two_agent(), &WeightSource::uniform(2)).unwrap();
        assert!(close(v.power.values(), &[0.5, 1.5, 0.0], 1e-12));
        for p in [left(), right()] {
            let v = power_exact(&p, &WeightSource::uniform(3)).unwrap();
            assert!(close(v.power.values(), &[3.0, 0.0, 0.0, 0.0], 1e-12));
        }
        let v = power_exact(&swap(), &WeightSource::uniform(2)).unwrap();
        assert_eq!(v.power.values(), &[0.0, 0.0, 2.0]);
        assert_eq!(v.method, Method::Exact);
    }

    #[test]
    fn exact_intro_variants() {
        // b delegates to e instead of c
        let p = generate::pure_from_targets(&[1, 4, 3, 3, 4]);
        let v = power_exact(&p, &WeightSource::uniform(5)).unwrap();
        assert!(close(v.power.values(), &[0.0, 0.0, 0.0, 2.0, 3.0, 0.0], 1e-12));
        // e delegates to a, closing the cycle a->b->e->a
        let p = generate::pure_from_targets(&[1, 4, 3, 3, 0]);
        let v = power_exact(&p, &WeightSource::uniform(5)).unwrap();
        assert!(close(v.power.values(), &[0.0, 0.0, 0.0, 2.0, 0.0, 3.0], 1e-12));
    }

    #[test]
    fn series_examples() {
        let r = power_series(&DelegationMatrix::identity(3), &[1.0; 3], 1e-10, 10).unwrap();
        assert_eq!(r.power.values(), &[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(r.method, Method::Series { k_used: 1 });
        let r = power_series(&two_agent(), &[1.0, 1.0], 1e-10, 100).unwrap();
        assert!(close(r.power.values(), &[0.5, 1.5, 0.0], 1e-10));
        assert!(matches!(
            power_series(&two_agent(), &[1.0, 1.0], 0.0, 10),
            Err(Error::ParameterOutOfRange { .. })
        ));
    }

    #[test]
    fn series_reports_non_convergence() {
        // long slow leak: 0.999 circulates between two agents
        let p = rows(&[&[0.001, 0.999], &[0.999, 0.001]]);
        assert!(matches!(
            power_series(&p, &[1.0, 1.0], 1e-12, 5),
            Err(Error::NoConvergence { k_used: 5, .. })
        ));
    }

    #[test]
    fn classic_examples() {
        let v = classic_power(&intro_chain()).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 4.0, 1.0]);
        let v = classic_power(&generate::pure_from_targets(&[1, 4, 3, 3, 4])).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 2.0, 3.0]);
        let v = classic_power(&generate::pure_from_targets(&[1, 4, 3, 3, 0])).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 2.0, 0.0]);
        assert!(matches!(
            classic_power(&two_agent()),
            Err(Error::NotInClassB { agent: 0, .. })
        ));
    }

    #[test]
    fn classic_fractional_class_b() {
        // agent 1 splits between candidates 2 and 3 via a detour through 4
        let p = rows(&[
            &[0.0, 0.5, 0.0, 0.5],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.5, 0.0, 0.5, 0.0],
        ]);
        let v = classic_power(&p).unwrap();
        let exact = power_exact(&p, &WeightSource::uniform(4)).unwrap();
        assert!(close(&v, exact.power.agents(), 1e-12));
    }

    #[test]
    fn standard_generalization_examples() {
        let s = standard_generalization(&two_agent(), 10_000, 1e-14);
        assert!(s.converged);
        assert!(close(&s.power, &[0.0, 2.0], 1e-12));
        // The limits of the masked iteration on the two three-agent settings.
        let s = standard_generalization(&left(), 10_000, 1e-13);
        assert!(s.converged && close(&s.power, &[0.6, 0.0, 0.0], 1e-12));
        let s = standard_generalization(&right(), 10_000, 1e-13);
        assert!(s.converged && close(&s.power, &[6.0 / 7.0, 0.0, 0.0], 1e-12));
        // Too small a budget is reported, not thrown.
        let s = standard_generalization(
            &rows(&[&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]),
            5,
            1e-30,
        );
        assert!(!s.converged);
    }

    #[test]
    fn standard_generalization_third_iterate() {
        // Stopping after three products gives 9/16 and 13/16 exactly.
        let s = standard_generalization(&left(), 3, 0.0);
        assert_eq!(s.power, vec![9.0 / 16.0, 0.0, 0.0]);
        let s = standard_generalization(&right(), 3, 0.0);
        assert_eq!(s.power, vec![13.0 / 16.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_strategy_examples() {
        let v = mixed_strategy_power(&ms_left()).unwrap();
        assert!(close(&v, &[2.0, 0.0, 0.0, 1.5], 1e-12));
        let v = mixed_strategy_power(&ms_right()).unwrap();
        assert!(close(&v, &[7.0 / 3.0, 0.0, 0.0, 5.0 / 3.0], 1e-12));
        let a = intro_chain();
        assert_eq!(mixed_strategy_power(&a).unwrap(), classic_power(&a).unwrap());
    }

    #[test]
    fn mixed_strategy_guard() {
        let n = 24;
        let cols: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0 / n as f64; n]).collect();
        let p = DelegationMatrix::from_rows(&cols).unwrap();
        assert!(matches!(
            mixed_strategy_power(&p),
            Err(Error::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn reduction_figure_one() {
        // agent 3 hands everything to agent 2, who splits between 1 and 4
        let p = rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.5, 0.0, 0.0, 0.5],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ]);
        let (reduced, spec) = delegation_reduction(&p, 2, &[1]).unwrap();
        assert_eq!(spec.x_star_k.weights(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(spec.denominator, 1.0);
        let f = WeightSource::uniform(4);
        let a = power_exact(&p, &f).unwrap();
        let b = power_exact(&reduced, &f).unwrap();
        assert!(a.power.max_abs_diff(&b.power) <= 1e-12);
        assert_eq!(delta_delegation_constant(&p, &f, 2, &[1]).unwrap(), 20.0);
    }

    #[test]
    fn reduction_figure_two() {
        let p = ms_left();
        let (reduced, spec) = delegation_reduction(&p, 2, &[1]).unwrap();
        assert_eq!(spec.x_star_k.weights(), &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
        assert_eq!(reduced.profile(2).weights(), &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
        let f = WeightSource::uniform(4);
        let c = delta_delegation_constant(&p, &f, 2, &[1]).unwrap();
        assert!((c - 80.0 / 3.0).abs() < 1e-12);
        let zero = WeightSource::new(vec![0.0; 5]);
        assert_eq!(delta_delegation_constant(&p, &zero, 2, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn reduction_preconditions() {
        let p = ms_left();
        let v = |r| Err::<(), _>(Error::PreconditionViolated(r));
        let check = |d: &[usize], k| delegation_reduction(&p, k, d).map(|_| ());
        assert_eq!(check(&[], 2), v(ReductionClause::EmptyProxySet));
        assert_eq!(check(&[2], 2), v(ReductionClause::AgentInProxySet));
        // agent 1 keeps its whole vote
        assert_eq!(
            check(&[0], 1),
            v(ReductionClause::ProxyRetains { proxy: 0 })
        );
        // agent 2 gives to 1, 3 and 4
        assert_eq!(
            check(&[2], 1),
            v(ReductionClause::SupportOutsideProxies { target: 0 })
        );
        assert_eq!(
            check(&[1, 3], 2),
            v(ReductionClause::ProxyRetains { proxy: 3 })
        );
        let chain = generate::pure_from_targets(&[1, 2, 2]);
        assert_eq!(
            delegation_reduction(&chain, 0, &[1, 2]).map(|_| ()),
            v(ReductionClause::ProxyRetains { proxy: 2 })
        );
        let chain = generate::pure_from_targets(&[2, 2, 2]);
        assert_eq!(
            delegation_reduction(&chain, 0, &[1]).map(|_| ()),
            v(ReductionClause::MissingProxyShare { proxy: 1 })
        );
        // two agents handing everything to each other
        assert!(matches!(
            delegation_reduction(&swap(), 0, &[1]),
            Err(Error::DegenerateDenominator(_))
        ));
        // a trapped agent whose proxy has a positive-denominator loop elsewhere
        let trapped = rows(&[
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0],
        ]);
        assert_eq!(
            delegation_reduction(&trapped, 0, &[1]).map(|_| ()),
            v(ReductionClause::AgentInCycle)
        );
    }

    // Replication gap bound in terms of the actual flux through k:
    // (n + 1) eps u_k (1 - (1-eps)^2 b) / (1 - b), b the direct back-flow.
    fn flux_bound(p: &DelegationMatrix, f: &WeightSource, k: usize, d: &[usize], eps: f64) -> f64 {
        let u = flux_eps(p, f, eps).unwrap();
        let back: f64 = d.iter().map(|&i| p.share(i, k) * p.share(k, i)).sum();
        let uk = u[k] * (1.0 - (1.0 - eps).powi(2) * back);
        (p.n() + 1) as f64 * eps * uk / (1.0 - back)
    }

    #[test]
    fn replication_gap_can_exceed_weight_bound() {
        // 1 -> 2 -> 3 -> 1 with agent 3 keeping 1%: agent 1's vote returns to
        // it many times, so the gap is governed by the flux through 1, not by
        // the total inherent weight.
        let p = rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.99, 0.0, 0.01]]);
        let f = WeightSource::new(vec![1.0, 1.0, 1.0, 0.0]);
        let (reduced, spec) = delegation_reduction(&p, 0, &[1]).unwrap();
        assert_eq!(spec.x_star_k.weights(), &[0.0, 0.0, 1.0]);
        let c = delta_delegation_constant(&p, &f, 0, &[1]).unwrap();
        assert_eq!(c, 12.0);
        for eps in [1e-2, 1e-3] {
            let a = power_eps(&p, &f, eps).unwrap();
            let b = power_eps(&reduced, &f, eps).unwrap();
            let gap = a.power.max_abs_diff(&b.power);
            assert!(gap > c * eps, "eps {eps}: gap {gap}");
            assert!(gap <= flux_bound(&p, &f, 0, &[1], eps));
        }
        // exact power is unaffected
        let a = power_exact(&p, &f).unwrap();
        let b = power_exact(&reduced, &f).unwrap();
        assert!(a.power.max_abs_diff(&b.power) <= 1e-12);
    }

    #[test]
    fn limit_gap_scales_with_path_length() {
        // Five-agent chain into a single candidate: every unit of weight pays
        // eps per hop, so the gap is about 15 eps.
        let p = generate::pure_from_targets(&[1, 2, 3, 4, 4]);
        let f = WeightSource::uniform(5);
        let exact = power_exact(&p, &f).unwrap();
        for eps in [1e-3, 1e-4, 1e-5] {
            let gap = power_eps(&p, &f, eps).unwrap().power.max_abs_diff(&exact.power);
            assert!((gap / eps - 15.0).abs() < 0.1, "eps {eps}: gap {gap}");
        }
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        #[test]
        fn conservation(seed in any::<u64>(), n in 1usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::matrix(&mut rng, n, &Shape::mixed());
            let f = generate::source(&mut rng, n, true);
            for eps in [0.5, 0.1, 0.01] {
                let r = power_eps(&p, &f, eps).unwrap();
                prop_assert!((r.power.total() - f.total()).abs() <= 1e-9);
            }
            let r = power_exact(&p, &f).unwrap();
            prop_assert!((r.power.total() - f.total()).abs() <= 1e-9);
        }

        #[test]
        fn consistency_and_nonnegativity(seed in any::<u64>(), n in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::matrix(&mut rng, n, &Shape::mixed());
            let f = generate::source(&mut rng, n, false);
            for eps in [0.5, 0.1, 0.01] {
                let r = power_eps(&p, &f, eps).unwrap();
                let v = r.power.values();
                for i in 0..n {
                    let d = p.self_share(i);
                    if d == 0.0 {
                        prop_assert_eq!(v[i], 0.0);
                    }
                    prop_assert!(v[i] >= (1.0 - eps) * d * f.values()[i] - 1e-12);
                }
                prop_assert!(v.iter().all(|&x| x >= -1e-12));
            }
        }

        #[test]
        fn exact_matches_classic_on_class_b(seed in any::<u64>(), n in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::class_b(&mut rng, n);
            let c = classic_power(&p).unwrap();
            let v = power_exact(&p, &WeightSource::uniform(n)).unwrap();
            prop_assert!(max_diff(&c, v.power.agents()) <= 1e-9);
        }

        #[test]
        fn penalized_approaches_classic_on_pure(seed in any::<u64>(), n in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::pure(&mut rng, n);
            let c = classic_power(&p).unwrap();
            let mut last = f64::INFINITY;
            for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                let v = power_eps(&p, &WeightSource::uniform(n), eps).unwrap();
                let err = max_diff(&c, v.power.agents());
                prop_assert!(err < last);
                last = err;
            }
        }

        #[test]
        fn replication_preserves_power(seed in any::<u64>(), n in 3usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, k) = generate::reduction(&mut rng, n);
            let f = generate::source(&mut rng, n, false);
            let d = proxies_of(&p, k);
            let (reduced, _) = delegation_reduction(&p, k, &d).unwrap();
            let a = power_exact(&p, &f).unwrap();
            let b = power_exact(&reduced, &f).unwrap();
            prop_assert!(a.power.max_abs_diff(&b.power) <= 1e-8);
            for eps in [1e-2, 1e-3] {
                let a = power_eps(&p, &f, eps).unwrap();
                let b = power_eps(&reduced, &f, eps).unwrap();
                prop_assert!(a.power.max_abs_diff(&b.power) <= flux_bound(&p, &f, k, &d, eps) + 1e-12);
            }
        }

        #[test]
        fn penalized_converges_to_exact(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::matrix(&mut rng, n, &Shape::anchored());
            let f = WeightSource::uniform(n);
            let exact = power_exact(&p, &f).unwrap();
            let mut last = f64::INFINITY;
            for eps in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
                let err = power_eps(&p, &f, eps).unwrap().power.max_abs_diff(&exact.power);
                prop_assert!(err < last, "eps {} err {} last {}", eps, err, last);
                last = err;
            }
        }

        #[test]
        fn series_matches_solve(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::acyclic(&mut rng, n);
            let f = generate::source(&mut rng, n, false);
            let s = power_series(&p, &f.values()[..n], 1e-13, 100_000).unwrap();
            let e = power_exact(&p, &f).unwrap();
            prop_assert!(s.power.max_abs_diff(&e.power) <= 1e-8);
        }

        #[test]
        fn mixed_strategy_is_classic_on_pure(seed in any::<u64>(), n in 1usize..=7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = generate::pure(&mut rng, n);
            prop_assert_eq!(mixed_strategy_power(&p).unwrap(), classic_power(&p).unwrap());
        }
    }
}
