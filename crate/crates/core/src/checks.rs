//! Randomized invariant suites. Each trial draws its instance from its own
//! ChaCha stream (seed, trial), so trials can run in parallel and any
//! single trial can be regenerated or replayed from its serialized file.

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::delegation::{partition_agents, DelegationMatrix, DelegationProfile, WeightSource};
use crate::game::{
    best_response, br_dynamics, utility, verify_equilibrium, DynamicsConfig, PreferenceProfile,
    Status,
};
use crate::generate::{self, Shape};
use crate::instance::{Instance, InstanceFile};
use crate::measures::{
    classic_power, delegation_reduction, delta_delegation_constant, flux_eps, power_eps,
    power_exact, proxies_of,
};
use crate::oracles::grid_best_response;

pub const DEFAULT_SEED: u64 = 20240607;
pub const EPS_CONSERVATION: [f64; 3] = [0.5, 0.1, 0.01];
pub const EPS_GENERALIZATION: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const EPS_DELTA_DELEGATION: [f64; 2] = [1e-2, 1e-3];
pub const EPS_LIMIT: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
pub const GRID_STEP: f64 = 0.05;
pub const GAME_MAX_AGENTS: usize = 4;
const NONNEG_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Conservation,
    Consistency,
    Generalization,
    Delegation,
    DeltaDelegation,
    Limit,
    GameVertex,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown suite {0:?} (expected one of: conservation, consistency, generalization, delegation, delta-delegation, limit, game-vertex)")]
pub struct UnknownSuite(pub String);

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Conservation,
        Suite::Consistency,
        Suite::Generalization,
        Suite::Delegation,
        Suite::DeltaDelegation,
        Suite::Limit,
        Suite::GameVertex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Conservation => "conservation",
            Suite::Consistency => "consistency",
            Suite::Generalization => "generalization",
            Suite::Delegation => "delegation",
            Suite::DeltaDelegation => "delta-delegation",
            Suite::Limit => "limit",
            Suite::GameVertex => "game-vertex",
        }
    }

    /// Pass threshold for the suite's main comparison.
    pub fn default_tol(self) -> f64 {
        match self {
            Suite::Conservation | Suite::Generalization => 1e-9,
            Suite::Consistency => NONNEG_SLACK,
            Suite::Delegation => 1e-8,
            // additive slack on top of C * eps
            Suite::DeltaDelegation => 0.0,
            Suite::Limit => 1e-4,
            Suite::GameVertex => 1e-6,
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Suite::Conservation => 12,
            Suite::Consistency => 12,
            Suite::Generalization => 10,
            Suite::Delegation | Suite::DeltaDelegation => 8,
            Suite::Limit => 5,
            Suite::GameVertex => GAME_MAX_AGENTS,
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Conservation | Suite::Consistency => 300,
            Suite::Generalization | Suite::Delegation | Suite::DeltaDelegation => 200,
            Suite::Limit | Suite::GameVertex => 100,
        }
    }

    fn min_n(self) -> usize {
        match self {
            Suite::Delegation | Suite::DeltaDelegation => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Largest instance size; each trial draws its size up to this.
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
}

impl SuiteConfig {
    pub fn defaults(suite: Suite) -> Self {
        Self {
            n: suite.default_n(),
            trials: suite.default_trials(),
            seed: DEFAULT_SEED,
            tol: suite.default_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
    pub instance: InstanceFile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub n: usize,
    pub trials: usize,
    pub tol: f64,
    /// Worst value of the suite's main statistic over all trials.
    pub worst: f64,
    pub failures: Vec<TrialFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// The instance used by `trial` of `suite` under `config`.
pub fn generate_instance(suite: Suite, config: &SuiteConfig, trial: usize) -> Instance {
    let mut rng = trial_rng(config.seed, trial);
    let max_n = config.n.max(suite.min_n());
    let n = rng.random_range(suite.min_n()..=max_n);
    match suite {
        Suite::Conservation => {
            let mut inst = Instance::new(generate::matrix(&mut rng, n, &Shape::mixed()));
            inst.source = generate::source(&mut rng, n, true);
            inst
        }
        Suite::Consistency => {
            let mut inst = Instance::new(generate::matrix(&mut rng, n, &Shape::mixed()));
            inst.source = generate::source(&mut rng, n, false);
            inst
        }
        Suite::Generalization => {
            let p = if rng.random_bool(0.5) {
                generate::class_b(&mut rng, n)
            } else {
                generate::pure(&mut rng, n)
            };
            Instance::new(p)
        }
        Suite::Delegation | Suite::DeltaDelegation => {
            let (p, _) = generate::reduction(&mut rng, n);
            let mut inst = Instance::new(p);
            inst.source = generate::source(&mut rng, n, false);
            inst
        }
        Suite::Limit => Instance::new(generate::matrix(&mut rng, n, &Shape::anchored())),
        Suite::GameVertex => {
            let n = n.min(GAME_MAX_AGENTS);
            let kind = rng.random_range(0..3);
            let (p, w) = if kind == 0 && n >= 3 {
                let (p, w, _) = generate::tie(&mut rng, n);
                (p, w)
            } else if kind == 1 {
                let p = generate::matrix(&mut rng, n, &Shape::mixed());
                (p, generate::dominant_preferences(&mut rng, n))
            } else {
                let p = generate::matrix(&mut rng, n, &Shape::mixed());
                (p, generate::preferences(&mut rng, n))
            };
            let mut inst = Instance::new(p);
            inst.preferences = Some(PreferenceProfile::new(w).expect("finite preferences"));
            inst.epsilon = Some(rng.random_range(0.05..0.5));
            inst
        }
    }
}

/// Runs one suite's checks on a single instance. Returns the instance's
/// value of the suite statistic, or a description of the violation.
pub fn check_instance(suite: Suite, inst: &Instance, tol: f64) -> Result<f64, String> {
    match suite {
        Suite::Conservation => check_conservation(inst, tol),
        Suite::Consistency => check_consistency(inst, tol),
        Suite::Generalization => check_generalization(inst, tol),
        Suite::Delegation => check_delegation(inst, tol),
        Suite::DeltaDelegation => check_delta_delegation(inst, tol),
        Suite::Limit => check_limit(inst, tol),
        Suite::GameVertex => check_game_vertex(inst, tol),
    }
}

pub fn run_suite(suite: Suite, config: &SuiteConfig) -> SuiteReport {
    let results: Vec<(Instance, Result<f64, String>)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let inst = generate_instance(suite, config, t);
            let r = check_instance(suite, &inst, config.tol);
            (inst, r)
        })
        .collect();
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for (trial, (inst, r)) in results.into_iter().enumerate() {
        match r {
            Ok(v) => worst = worst.max(v),
            Err(message) => failures.push(TrialFailure {
                trial,
                message,
                instance: inst.to_file(),
            }),
        }
    }
    SuiteReport {
        suite,
        seed: config.seed,
        n: config.n,
        trials: config.trials,
        tol: config.tol,
        worst,
        failures,
    }
}

fn err<E: fmt::Display>(context: &str) -> impl Fn(E) -> String + '_ {
    move |e| format!("{context}: {e}")
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn check_conservation(inst: &Instance, tol: f64) -> Result<f64, String> {
    let (p, f) = (&inst.matrix, &inst.source);
    let mut worst = 0.0_f64;
    for eps in EPS_CONSERVATION {
        let v = power_eps(p, f, eps).map_err(err("power_eps"))?;
        let dev = (v.power.total() - f.total()).abs();
        if dev > tol {
            return Err(format!("eps {eps}: sum of power {} vs sum of f {} (|diff| {dev:e})", v.power.total(), f.total()));
        }
        worst = worst.max(dev);
    }
    let v = power_exact(p, f).map_err(err("power_exact"))?;
    let dev = (v.power.total() - f.total()).abs();
    if dev > tol {
        return Err(format!("exact: sum of power {} vs sum of f {} (|diff| {dev:e})", v.power.total(), f.total()));
    }
    Ok(worst.max(dev))
}

fn check_consistency(inst: &Instance, tol: f64) -> Result<f64, String> {
    let (p, f) = (&inst.matrix, &inst.source);
    if !f.is_nonnegative() {
        return Err("consistency requires a nonnegative source".into());
    }
    let n = p.n();
    let mut worst = 0.0_f64;
    for eps in EPS_CONSERVATION {
        let v = power_eps(p, f, eps).map_err(err("power_eps"))?;
        let v = v.power.values();
        for i in 0..n {
            let d = p.self_share(i);
            if d == 0.0 && v[i] != 0.0 {
                return Err(format!("eps {eps}: agent {} keeps nothing but has power {}", i + 1, v[i]));
            }
            let floor = (1.0 - eps) * d * f.values()[i];
            worst = worst.max(floor - v[i]);
            if v[i] < floor - tol {
                return Err(format!("eps {eps}: agent {} has power {} below its retained share {floor}", i + 1, v[i]));
            }
        }
        if let Some((i, x)) = v.iter().enumerate().find(|(_, &x)| x < -tol) {
            return Err(format!("eps {eps}: entry {} is negative ({x})", i + 1));
        }
    }
    Ok(worst.max(0.0))
}

fn check_generalization(inst: &Instance, tol: f64) -> Result<f64, String> {
    let p = &inst.matrix;
    let n = p.n();
    let classic = classic_power(p).map_err(err("classic_power"))?;
    let exact = power_exact(p, &WeightSource::uniform(n)).map_err(err("power_exact"))?;
    let dev = max_diff(&classic, exact.power.agents());
    if dev > tol {
        return Err(format!("exact {:?} vs classic {classic:?} (max diff {dev:e})", exact.power.agents()));
    }
    if p.is_pure() && !all_weight_trapped(p, &WeightSource::uniform(n)) {
        let mut last = f64::INFINITY;
        for eps in EPS_GENERALIZATION {
            let v = power_eps(p, &WeightSource::uniform(n), eps).map_err(err("power_eps"))?;
            let e = max_diff(&classic, v.power.agents());
            if !(e < last) {
                return Err(format!("penalized gap not decreasing: {e:e} at eps {eps} after {last:e}"));
            }
            last = e;
        }
    }
    Ok(dev)
}

/// No weight reaches a self-retainer, so every penalized measure equals
/// the limit and the gap ladder is identically zero.
fn all_weight_trapped(p: &DelegationMatrix, f: &WeightSource) -> bool {
    partition_agents(p)
        .reaching()
        .iter()
        .all(|&i| f.values()[i] == 0.0)
}

/// Agents that satisfy the replication preconditions with their own
/// support as proxy set.
pub fn replicating_agents(p: &DelegationMatrix) -> Vec<(usize, Vec<usize>)> {
    (0..p.n())
        .filter_map(|k| {
            let d = proxies_of(p, k);
            (!d.is_empty() && delegation_reduction(p, k, &d).is_ok()).then_some((k, d))
        })
        .collect()
}

fn check_delegation(inst: &Instance, tol: f64) -> Result<f64, String> {
    let (p, f) = (&inst.matrix, &inst.source);
    let agents = replicating_agents(p);
    if agents.is_empty() {
        return Err("no agent satisfies the replication preconditions".into());
    }
    let base = power_exact(p, f).map_err(err("power_exact"))?;
    let mut worst = 0.0_f64;
    for (k, d) in agents {
        let (reduced, _) = delegation_reduction(p, k, &d).map_err(err("reduction"))?;
        let v = power_exact(&reduced, f).map_err(err("power_exact"))?;
        let dev = base.power.max_abs_diff(&v.power);
        if dev > tol {
            return Err(format!("agent {}: replication changes power by {dev:e}", k + 1));
        }
        worst = worst.max(dev);
    }
    Ok(worst)
}

fn check_delta_delegation(inst: &Instance, tol: f64) -> Result<f64, String> {
    let (p, f) = (&inst.matrix, &inst.source);
    let agents = replicating_agents(p);
    if agents.is_empty() {
        return Err("no agent satisfies the replication preconditions".into());
    }
    let mut worst = 0.0_f64;
    for (k, d) in agents {
        let (reduced, spec) = delegation_reduction(p, k, &d).map_err(err("reduction"))?;
        let c = delta_delegation_constant(p, f, k, &d).map_err(err("constant"))?;
        for eps in EPS_DELTA_DELEGATION {
            let a = power_eps(p, f, eps).map_err(err("power_eps"))?;
            let b = power_eps(&reduced, f, eps).map_err(err("power_eps"))?;
            let dev = a.power.max_abs_diff(&b.power);
            let bound = c * eps;
            if bound > 0.0 {
                worst = worst.max(dev / bound);
            }
            if dev > bound + tol {
                let u = flux_eps(p, f, eps).map_err(err("flux"))?;
                return Err(format!(
                    "agent {}: eps {eps}: gap {dev:e} exceeds C*eps = {bound:e} \
                     (sum f = {}, flux through agent = {:.4}, denominator = {})",
                    k + 1,
                    f.total(),
                    u[k],
                    spec.denominator
                ));
            }
        }
    }
    Ok(worst)
}

fn check_limit(inst: &Instance, tol: f64) -> Result<f64, String> {
    let (p, f) = (&inst.matrix, &inst.source);
    let exact = power_exact(p, f).map_err(err("power_exact"))?;
    let mut errors = Vec::with_capacity(EPS_LIMIT.len());
    for eps in EPS_LIMIT {
        let v = power_eps(p, f, eps).map_err(err("power_eps"))?;
        errors.push(v.power.max_abs_diff(&exact.power));
    }
    if all_weight_trapped(p, f) {
        let worst = errors.iter().copied().fold(0.0_f64, f64::max);
        if worst > tol {
            return Err(format!("all weight is trapped yet the gap reaches {worst:e}"));
        }
        return Ok(worst);
    }
    if let Some(w) = errors.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(format!(
            "gap not strictly decreasing at eps {}: {errors:?}",
            EPS_LIMIT[w + 1]
        ));
    }
    let last = *errors.last().expect("ladder is nonempty");
    if !(last < tol) {
        return Err(format!(
            "gap {last:e} at eps {} not below {tol:e} (gap / eps = {:.2}): {errors:?}",
            EPS_LIMIT[EPS_LIMIT.len() - 1],
            last / EPS_LIMIT[EPS_LIMIT.len() - 1]
        ));
    }
    Ok(last)
}

/// Own-consumption dominates: keeping beats every delegation outcome,
/// whose utility is a convex combination of the other entries of `w_i`.
pub fn is_dominant(w: &PreferenceProfile, epsilon: f64) -> bool {
    let n = w.n();
    (0..n).all(|i| {
        let row = w.row(i);
        let keep = (1.0 - epsilon) * row[i] + epsilon * row[n];
        let other = (0..=n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        keep > other
    })
}

fn check_game_vertex(inst: &Instance, tol: f64) -> Result<f64, String> {
    let p = &inst.matrix;
    let n = p.n();
    let w = inst
        .preferences
        .as_ref()
        .ok_or("game-vertex needs preferences")?;
    let eps = inst.epsilon.ok_or("game-vertex needs epsilon")?;
    let space = inst.space_or_full();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let br = best_response(p, i, w.row(i), eps, &space).map_err(err("best_response"))?;
        if inst.space.is_none() {
            let g = grid_best_response(p, i, w.row(i), eps, GRID_STEP).map_err(err("grid"))?;
            if br.value < g.value - tol {
                return Err(format!("agent {}: vertex value {} below grid value {}", i + 1, br.value, g.value));
            }
            if g.value > br.value + 1e-9 {
                return Err(format!("agent {}: grid value {} beats vertex value {}", i + 1, g.value, br.value));
            }
            worst = worst.max(g.value - br.value);
        }
        if br.argmax_vertices.len() >= 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            for _ in 0..10 {
                let raw: Vec<f64> = br.argmax_vertices.iter().map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let mut x = vec![0.0; n];
                for (&t, r) in br.argmax_vertices.iter().zip(&raw) {
                    x[t] = r / s;
                }
                let q = p
                    .with_profile(&DelegationProfile::new(i, &x).map_err(err("mix"))?)
                    .map_err(err("mix"))?;
                let u = utility(&q, i, w.row(i), eps).map_err(err("utility"))?;
                if (u - br.value).abs() > 1e-8 {
                    return Err(format!(
                        "agent {}: mixture of tied vertices {:?} has utility {u}, optimum {}",
                        i + 1,
                        br.argmax_vertices,
                        br.value
                    ));
                }
            }
        }
        let c = 3.0;
        let shifted: Vec<f64> = w.row(i).iter().map(|x| x + c).collect();
        let sb = best_response(p, i, &shifted, eps, &space).map_err(err("best_response"))?;
        if sb.argmax_vertices != br.argmax_vertices || (sb.value - br.value - c).abs() > 1e-10 {
            return Err(format!("agent {}: best response not invariant under a constant shift", i + 1));
        }
    }
    let report = verify_equilibrium(p, w, eps, &space, tol).map_err(err("verify"))?;
    if let Some((i, r)) = report.regrets.iter().enumerate().find(|(_, &r)| r < -NONNEG_SLACK) {
        return Err(format!("agent {}: negative regret {r}", i + 1));
    }
    let cfg = DynamicsConfig {
        max_iters: 100,
        tol,
        seed: 0,
    };
    let t = br_dynamics(p, w, eps, &space, cfg).map_err(err("dynamics"))?;
    if t.status == Status::Converged {
        let r = verify_equilibrium(&t.final_matrix, w, eps, &space, tol).map_err(err("verify"))?;
        if !r.is_epsilon_nash(tol) {
            return Err(format!("converged dynamics ends with regret {}", r.max_regret));
        }
    }
    if inst.space.is_none() && is_dominant(w, eps) {
        let ok = t.status == Status::Converged
            && t.rounds <= 2
            && t.final_matrix == DelegationMatrix::identity(n)
            && t.final_regret.max_regret <= tol;
        if !ok {
            return Err(format!(
                "dominant preferences: dynamics ended {:?} after {} rounds with regret {}",
                t.status, t.rounds, t.final_regret.max_regret
            ));
        }
    }
    Ok(worst)
}
