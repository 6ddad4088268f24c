//! Shared helpers for the integration tests: an exact decomposition oracle
//! for aggregate trajectories and small scenario builders.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2g_sim::allocation::AllocationConfig;
use v2g_sim::env::{EnvConfig, GridProfiles, RewardWeights, V2gEnv, HOURS};
use v2g_sim::fleet::{sample_fleet, EvBounds, EvSession, FleetConfig, Horizon, ReachSpec};

/// Dense Edmonds-Karp max flow on real capacities.
struct MaxFlow {
    cap: Vec<Vec<f64>>,
}

impl MaxFlow {
    fn new(n: usize) -> Self {
        Self { cap: vec![vec![0.0; n]; n] }
    }

    fn add(&mut self, a: usize, b: usize, c: f64) {
        self.cap[a][b] += c.max(0.0);
    }

    fn run(&mut self, s: usize, t: usize) -> f64 {
        const EPS: f64 = 1e-12;
        let n = self.cap.len();
        let mut total = 0.0;
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for (v, pv) in prev.iter_mut().enumerate() {
                    if *pv == usize::MAX && self.cap[u][v] > EPS {
                        *pv = u;
                        queue.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                push = push.min(self.cap[prev[v]][v]);
                v = prev[v];
            }
            let mut v = t;
            while v != s {
                let u = prev[v];
                self.cap[u][v] -= push;
                self.cap[v][u] += push;
                v = u;
            }
            total += push;
        }
    }
}

/// Circulation with lower and upper arc bounds, reduced to max flow.
struct Circulation {
    n: usize,
    arcs: Vec<(usize, usize, f64, f64)>,
}

impl Circulation {
    fn new(n: usize) -> Self {
        Self { n, arcs: Vec::new() }
    }

    fn arc(&mut self, a: usize, b: usize, lo: f64, hi: f64) {
        self.arcs.push((a, b, lo, hi));
    }

    fn feasible(&self, tol: f64) -> bool {
        if self.arcs.iter().any(|&(_, _, lo, hi)| lo > hi + tol) {
            return false;
        }
        let (src, snk) = (self.n, self.n + 1);
        let mut g = MaxFlow::new(self.n + 2);
        let mut excess = vec![0.0; self.n];
        for &(a, b, lo, hi) in &self.arcs {
            g.add(a, b, hi - lo);
            excess[b] += lo;
            excess[a] -= lo;
        }
        let mut demand = 0.0;
        for (v, e) in excess.iter().enumerate() {
            if *e > 0.0 {
                g.add(src, v, *e);
                demand += e;
            } else {
                g.add(v, snk, -e);
            }
        }
        g.run(src, snk) >= demand - tol
    }
}

/// Whether an aggregate energy trajectory splits into per-EV trajectories
/// that each respect their reachable sets and energy-rate limits.
pub fn decomposable(bounds: &[EvBounds], traj: &[f64], tol: f64) -> bool {
    let k_max = traj.len() - 1;
    let n = bounds.len();
    let e0: f64 = bounds.iter().map(|b| b.e_lower[0]).sum();
    if (traj[0] - e0).abs() > tol {
        return false;
    }
    // Nodes: source, sink, one per slot, one per (EV, point).
    let (s, t) = (0, 1);
    let slot = |k: usize| 2 + k;
    let ev = |i: usize, k: usize| 2 + k_max + i * (k_max + 1) + k;
    let mut c = Circulation::new(2 + k_max + n * (k_max + 1));
    for k in 0..k_max {
        let d = traj[k + 1] - traj[k];
        c.arc(s, slot(k), d, d);
    }
    // Total energy is never negative; a tight cap keeps the reduction free
    // of large offsets that would swamp the tolerance.
    let big = 1.0 + bounds.iter().map(|b| b.e_upper[k_max]).sum::<f64>();
    for (i, b) in bounds.iter().enumerate() {
        c.arc(s, ev(i, 0), b.e_lower[0], b.e_lower[0]);
        for k in 0..k_max {
            c.arc(ev(i, k), ev(i, k + 1), b.e_lower[k], b.e_upper[k]);
            let (lo, hi) = b.energy_rate(k);
            c.arc(slot(k), ev(i, k + 1), lo, hi);
        }
        c.arc(ev(i, k_max), t, b.e_lower[k_max], b.e_upper[k_max]);
    }
    c.arc(t, s, 0.0, big);
    c.feasible(tol)
}

pub fn short_horizon(slots: usize) -> Horizon {
    Horizon { start_hour: 15, slots, slot_hours: 1.0 }
}

/// Random per-EV reachable sets on a short horizon, common efficiency.
pub fn random_bounds(rng: &mut ChaCha8Rng, n: usize, h: &Horizon) -> Vec<EvBounds> {
    let eta = 0.9 + 0.1 * rng.random::<f64>();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let q = rng.random_range(10.0..30.0);
        let first = rng.random_range(0..h.slots);
        let last = rng.random_range(first..h.slots);
        let spec = ReachSpec {
            e_init: q * rng.random_range(0.2..0.9),
            first_slot: first,
            last_slot: last,
            p_min: -rng.random_range(1.0..7.0),
            p_max: rng.random_range(1.0..7.0),
            efficiency: eta,
            floor: 0.2 * q,
            ceiling: 0.9 * q,
            target_min: q * rng.random_range(0.2..0.7),
            target_max: q * 0.9,
        };
        if let Ok(b) = EvBounds::reachable(out.len(), &spec, h) {
            out.push(b);
        }
    }
    out
}

/// Per-EV energy trajectories that take, in every connected slot, the
/// lowest, middle or highest next energy still inside the reachable set.
pub fn extreme_trajectories(b: &EvBounds, k_max: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![b.e_lower[0]]];
    for k in 0..k_max {
        let mut next = Vec::with_capacity(out.len() * 3);
        for tr in &out {
            let e = tr[k];
            let (rl, rh) = b.energy_rate(k);
            let lo = (e + rl).max(b.e_lower[k + 1]);
            let hi = (e + rh).min(b.e_upper[k + 1]);
            assert!(lo <= hi + 1e-9, "dead end in reachable set at point {}", k + 1);
            if !b.is_connected(k) || hi - lo < 1e-12 {
                let mut t = tr.clone();
                t.push(if b.is_connected(k) { lo } else { e });
                next.push(t);
                continue;
            }
            for v in [lo, 0.5 * (lo + hi), hi] {
                let mut t = tr.clone();
                t.push(v);
                next.push(t);
            }
        }
        out = next;
    }
    out
}

pub fn flat_profiles(base: f64, tariff: f64) -> GridProfiles {
    GridProfiles {
        baseload_kw: vec![base; HOURS],
        pv_kw: vec![0.0; HOURS],
        wind_kw: vec![0.0; HOURS],
        tariff: vec![tariff; HOURS],
    }
}

pub fn synthetic_scenario(n: usize, seed: u64) -> (GridProfiles, Vec<EvSession>) {
    let cfg = EnvConfig::default();
    let profiles = GridProfiles::synthetic(&cfg.profiles, seed);
    let sessions = sample_fleet(n, seed, &FleetConfig::default(), &cfg.horizon).expect("fleet");
    (profiles, sessions)
}

pub fn make_env(profiles: GridProfiles, sessions: Vec<EvSession>) -> V2gEnv {
    V2gEnv::new(EnvConfig::default(), RewardWeights::default(), AllocationConfig::default(), profiles, sessions)
        .expect("env")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
