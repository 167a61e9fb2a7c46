//! Random instance generators shared by the property tests, the check
//! suites and the acceptance harness. Every generator draws only from the
//! supplied RNG, so a seed pins the instance.

use rand::seq::SliceRandom;
use rand::{Rng, RngExt};

use crate::delegation::{partition_agents, DelegationMatrix, WeightSource, ZERO_TOL};

/// Knobs for [`matrix`].
#[derive(Debug, Clone)]
pub struct Shape {
    /// Probability that an agent keeps part of its vote.
    pub retain_prob: f64,
    /// Smallest self-share of a retaining agent.
    pub min_retain: f64,
    /// Maximum number of other agents in a profile's support.
    pub max_support: usize,
    /// Probability of planting a closed delegation cycle.
    pub cycle_prob: f64,
    /// Force at least one self-retainer outside any planted cycle.
    pub ensure_retainer: bool,
}

impl Shape {
    pub fn mixed() -> Self {
        Self {
            retain_prob: 0.45,
            min_retain: 0.1,
            max_support: 3,
            cycle_prob: 0.3,
            ensure_retainer: false,
        }
    }

    /// Cyclic structure allowed, but the exact measure is never all loss.
    pub fn anchored() -> Self {
        Self {
            ensure_retainer: true,
            ..Self::mixed()
        }
    }
}

/// Positive shares over `targets` summing to `total`.
fn split<R: Rng + ?Sized>(rng: &mut R, targets: &[usize], total: f64, col: &mut [f64]) {
    let raw: Vec<f64> = targets.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    for (&t, r) in targets.iter().zip(raw) {
        col[t] += total * r / s;
    }
}

fn others<R: Rng + ?Sized>(rng: &mut R, n: usize, agent: usize, max: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).filter(|&t| t != agent).collect();
    pool.shuffle(rng);
    let k = rng.random_range(1..=max.min(pool.len()).max(1));
    pool.truncate(k);
    pool
}

fn from_columns(cols: Vec<Vec<f64>>) -> DelegationMatrix {
    DelegationMatrix::from_rows(&cols).expect("generated profiles are valid")
}

/// General fractional delegation matrix, optionally with a planted cycle.
pub fn matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, shape: &Shape) -> DelegationMatrix {
    assert!(n >= 1);
    let mut cols = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter_mut().enumerate() {
        if n == 1 {
            col[0] = 1.0;
            continue;
        }
        let targets = others(rng, n, j, shape.max_support);
        if rng.random_bool(shape.retain_prob) {
            let keep = rng.random_range(shape.min_retain..=1.0);
            col[j] = keep;
            if keep < 1.0 {
                split(rng, &targets, 1.0 - keep, col);
            }
        } else {
            split(rng, &targets, 1.0, col);
        }
    }
    let room = if shape.ensure_retainer { n - 1 } else { n };
    let mut planted = Vec::new();
    if room >= 2 && rng.random_bool(shape.cycle_prob) {
        let m = rng.random_range(2..=room.min(3));
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(rng);
        planted = pool[..m].to_vec();
        for &j in &planted {
            let col = &mut cols[j];
            col.iter_mut().for_each(|w| *w = 0.0);
            let inside: Vec<usize> = planted.iter().copied().filter(|&t| t != j).collect();
            split(rng, &inside, 1.0, col);
        }
    }
    if shape.ensure_retainer && (0..n).all(|i| cols[i][i] <= ZERO_TOL) {
        let free: Vec<usize> = (0..n).filter(|i| !planted.contains(i)).collect();
        let r = free[rng.random_range(0..free.len())];
        cols[r] = vec![0.0; n];
        cols[r][r] = 1.0;
    }
    from_columns(cols)
}

/// Matrix in which every self-share is exactly 0 or 1.
pub fn class_b<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DelegationMatrix {
    let mut cols = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter_mut().enumerate() {
        if n == 1 || rng.random_bool(0.35) {
            col[j] = 1.0;
        } else {
            let targets = others(rng, n, j, 3);
            split(rng, &targets, 1.0, col);
        }
    }
    from_columns(cols)
}

/// Classic single-proxy delegation; at least one agent keeps its vote.
pub fn pure<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DelegationMatrix {
    let mut targets: Vec<usize> = (0..n)
        .map(|j| {
            if rng.random_bool(0.3) {
                j
            } else {
                rng.random_range(0..n)
            }
        })
        .collect();
    if targets.iter().enumerate().all(|(j, &t)| t != j) {
        let r = rng.random_range(0..n);
        targets[r] = r;
    }
    pure_from_targets(&targets)
}

pub fn pure_from_targets(targets: &[usize]) -> DelegationMatrix {
    let n = targets.len();
    let cols = targets
        .iter()
        .map(|&t| {
            let mut c = vec![0.0; n];
            c[t] = 1.0;
            c
        })
        .collect();
    from_columns(cols)
}

/// Matrix whose delegation graph has no cycles: agents only delegate
/// forward in a random order and the last agent keeps everything.
pub fn acyclic<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DelegationMatrix {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cols = vec![vec![0.0; n]; n];
    for (pos, &j) in order.iter().enumerate() {
        let ahead = &order[pos + 1..];
        let col = &mut cols[j];
        if ahead.is_empty() {
            col[j] = 1.0;
            continue;
        }
        let mut pool = ahead.to_vec();
        pool.shuffle(rng);
        pool.truncate(rng.random_range(1..=pool.len().min(3)));
        if rng.random_bool(0.5) {
            let keep = rng.random_range(0.1..=1.0);
            col[j] = keep;
            if keep < 1.0 {
                split(rng, &pool, 1.0 - keep, col);
            }
        } else {
            split(rng, &pool, 1.0, col);
        }
    }
    from_columns(cols)
}

/// Nonnegative inherent weights; the artificial entry is drawn too when
/// `with_loss` is set and is zero otherwise.
pub fn source<R: Rng + ?Sized>(rng: &mut R, n: usize, with_loss: bool) -> WeightSource {
    let mut values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    values.push(if with_loss {
        rng.random_range(0.0..1.0)
    } else {
        0.0
    });
    WeightSource::new(values)
}

/// Preference rows with entries in `[-1, 1)`.
pub fn preferences<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Preferences in which every agent values its own consumption far above
/// anything else.
pub fn dominant_preferences<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let mut w = preferences(rng, n);
    for (i, row) in w.iter_mut().enumerate() {
        row[i] = rng.random_range(10.0..20.0);
    }
    w
}

/// An instance for the replication transform: a matrix and an agent `k`
/// whose proxies (the support of its profile) retain nothing and whose
/// vote reaches a self-retainer.
pub fn reduction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (DelegationMatrix, usize) {
    assert!(n >= 3, "replication instances need at least three agents");
    loop {
        let base = matrix(rng, n, &Shape::mixed());
        let mut cols: Vec<Vec<f64>> = base.rows();
        let k = rng.random_range(0..n);
        let mut pool: Vec<usize> = (0..n).filter(|&t| t != k).collect();
        pool.shuffle(rng);
        let d_len = rng.random_range(1..=(n - 2).min(3));
        let d: Vec<usize> = pool[..d_len].to_vec();
        let rest: Vec<usize> = pool[d_len..].to_vec();

        cols[k] = vec![0.0; n];
        split(rng, &d, 1.0, &mut cols[k]);
        for &i in &d {
            let keep = std::mem::replace(&mut cols[i][i], 0.0);
            if keep > 0.0 {
                let mut targets: Vec<usize> = (0..n).filter(|&t| t != i).collect();
                targets.shuffle(rng);
                targets.truncate(2);
                split(rng, &targets, keep, &mut cols[i]);
            }
        }
        // route one proxy to a retainer outside D so k cannot be trapped
        let r = rest[rng.random_range(0..rest.len())];
        if cols[r][r] <= ZERO_TOL {
            cols[r] = vec![0.0; n];
            cols[r][r] = 1.0;
        }
        let link = d[rng.random_range(0..d.len())];
        let share = rng.random_range(0.2..0.8);
        for w in cols[link].iter_mut() {
            *w *= 1.0 - share;
        }
        cols[link][r] += share;

        let p = from_columns(cols);
        let back: f64 = d.iter().map(|&i| p.share(i, k) * p.share(k, i)).sum();
        if partition_agents(&p).is_trapped(k) || 1.0 - back <= 1e-6 {
            continue;
        }
        return (p, k);
    }
}

/// Instance with two full self-retainers `a`, `b` that agent `i` values
/// equally and above everything else, so `i`'s best response ties.
pub fn tie<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (DelegationMatrix, Vec<Vec<f64>>, usize) {
    assert!(n >= 3);
    let mut cols = matrix(rng, n, &Shape::mixed()).rows();
    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(rng);
    let (i, a, b) = (pool[0], pool[1], pool[2]);
    for t in [a, b] {
        cols[t] = vec![0.0; n];
        cols[t][t] = 1.0;
    }
    let mut w = preferences(rng, n);
    w[i][a] = 10.0;
    w[i][b] = 10.0;
    (from_columns(cols), w, i)
}
