//! Exact simulation of latency-shifted Hawkes processes.
//!
//! Two independent generators are provided:
//!
//! * [`simulate_thinning`]: Ogata thinning. A shifted kernel makes the
//!   intensity jump *up* at the activation times `tₖ + τ`, so the upper bound
//!   is only valid until the next activation. Candidates that overshoot the
//!   next activation are discarded and the clock moves to the activation
//!   instead (memorylessness makes this exact).
//! * [`simulate_cluster`]: the immigrant/offspring construction. Immigrants
//!   arrive as homogeneous Poisson processes, each event at node `n` spawns a
//!   Poisson(αᵐⁿ/βᵐⁿ) number of children at node `m` delayed by
//!   `τᵐⁿ + Exp(βᵐⁿ)`.
//!
//! Every path draws from its own ChaCha stream (`seed`, path index), so
//! output does not depend on how paths are scheduled across threads.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Poisson};
use rayon::prelude::*;

use crate::error::{HawkesError, Result};
use crate::model::{EventSeries, ModelMD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMethod {
    Thinning,
    Cluster,
}

impl SimMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SimMethod::Thinning => "thinning",
            SimMethod::Cluster => "cluster",
        }
    }
}

impl std::str::FromStr for SimMethod {
    type Err = HawkesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thinning" => Ok(SimMethod::Thinning),
            "cluster" => Ok(SimMethod::Cluster),
            other => Err(HawkesError::InvalidParameter(format!(
                "unknown simulation method '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub end_time: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub method: SimMethod,
}

impl SimConfig {
    pub fn new(end_time: f64, n_paths: usize, seed: u64, method: SimMethod) -> Result<Self> {
        if !(end_time.is_finite() && end_time > 0.0) {
            return Err(HawkesError::InvalidParameter(format!(
                "end time must be positive, got {end_time}"
            )));
        }
        if n_paths == 0 {
            return Err(HawkesError::InvalidParameter(
                "at least one path is required".into(),
            ));
        }
        Ok(Self {
            end_time,
            n_paths,
            seed,
            method,
        })
    }
}

/// Simulated paths; `paths[p][m]` is node `m` of path `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Vec<EventSeries>>,
    pub dim: usize,
    pub config: SimConfig,
    /// Generated times that collided with the previous event of the same
    /// node and were moved up by one ulp.
    pub collisions: usize,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Event count of every path at node `m`.
    pub fn counts(&self, m: usize) -> Vec<usize> {
        self.paths.iter().map(|p| p[m].len()).collect()
    }
}

/// The RNG of path `index` under master seed `seed`.
pub fn path_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn check_model(model: &ModelMD) -> Result<()> {
    let st = model.stationarity();
    if !st.stable {
        return Err(HawkesError::NonStationary {
            spectral_radius: st.spectral_radius,
        });
    }
    Ok(())
}

pub fn simulate(model: &ModelMD, config: &SimConfig) -> Result<PathSet> {
    match config.method {
        SimMethod::Thinning => simulate_thinning(model, config),
        SimMethod::Cluster => simulate_cluster(model, config),
    }
}

fn simulate_with<F>(model: &ModelMD, config: &SimConfig, gen: F) -> Result<PathSet>
where
    F: Fn(&ModelMD, f64, &mut ChaCha8Rng) -> (Vec<Vec<f64>>, usize) + Sync,
{
    check_model(model)?;
    let config = SimConfig::new(config.end_time, config.n_paths, config.seed, config.method)?;
    let raw: Vec<(Vec<Vec<f64>>, usize)> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| gen(model, config.end_time, &mut path_rng(config.seed, p)))
        .collect();
    let mut collisions = 0;
    let mut paths = Vec::with_capacity(raw.len());
    for (nodes, c) in raw {
        collisions += c;
        let series = nodes
            .into_iter()
            .map(EventSeries::new)
            .collect::<Result<Vec<_>>>()?;
        paths.push(series);
    }
    Ok(PathSet {
        paths,
        dim: model.dim(),
        config,
        collisions,
    })
}

pub fn simulate_thinning(model: &ModelMD, config: &SimConfig) -> Result<PathSet> {
    simulate_with(model, config, |m, t, rng| {
        let (nodes, collisions, _) = thinning_core(m, t, rng, false);
        (nodes, collisions)
    })
}

pub fn simulate_cluster(model: &ModelMD, config: &SimConfig) -> Result<PathSet> {
    simulate_with(model, config, |m, t, rng| {
        let genealogy = cluster_genealogy(m, t, rng);
        genealogy.into_series(m.dim())
    })
}

/// One accepted thinning candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinningStep {
    pub time: f64,
    pub node: usize,
    /// Intensity of `node` used in the acceptance test.
    pub intensity: f64,
}

/// A single thinning path together with the intensity at every accepted
/// event, for checking the sampler against the model's intensity function.
pub fn thinning_path_traced(
    model: &ModelMD,
    end_time: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<EventSeries>, Vec<ThinningStep>)> {
    check_model(model)?;
    let (nodes, _, trace) = thinning_core(model, end_time, rng, true);
    let series = nodes
        .into_iter()
        .map(EventSeries::new)
        .collect::<Result<Vec<_>>>()?;
    Ok((series, trace))
}

fn thinning_core(
    model: &ModelMD,
    end_time: f64,
    rng: &mut ChaCha8Rng,
    keep_trace: bool,
) -> (Vec<Vec<f64>>, usize, Vec<ThinningStep>) {
    let dim = model.dim();
    let pairs = dim * dim;
    let alpha: Vec<f64> = (0..pairs).map(|k| model.alpha(k / dim, k % dim)).collect();
    let beta: Vec<f64> = (0..pairs).map(|k| model.beta(k / dim, k % dim)).collect();
    let tau: Vec<f64> = (0..pairs).map(|k| model.tau(k / dim, k % dim)).collect();
    let lambda0 = model.lambda0();

    // excitation of pair (m, n) at time `now`, and activations still to come
    let mut exc = vec![0.0; pairs];
    let mut pending: Vec<VecDeque<f64>> = vec![VecDeque::new(); pairs];
    let mut node_rate = vec![0.0; dim];
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); dim];
    let mut trace = Vec::new();
    let mut collisions = 0;
    let mut now = 0.0;

    let advance = |exc: &mut [f64], now: &mut f64, to: f64| {
        let dt = to - *now;
        if dt > 0.0 {
            for (e, b) in exc.iter_mut().zip(&beta) {
                if *e != 0.0 {
                    *e *= (-b * dt).exp();
                }
            }
        }
        *now = to;
    };
    let rates = |exc: &[f64], node_rate: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for m in 0..dim {
            let r = lambda0[m] + exc[m * dim..(m + 1) * dim].iter().sum::<f64>();
            node_rate[m] = r;
            total += r;
        }
        total
    };

    loop {
        let next_act = pending
            .iter()
            .filter_map(|q| q.front().copied())
            .fold(f64::INFINITY, f64::min);
        let bound = rates(&exc, &mut node_rate);

        let cand = if bound > 0.0 {
            let w: f64 = rng.sample(Exp1);
            now + w / bound
        } else {
            f64::INFINITY
        };

        if cand >= next_act {
            if next_act > end_time {
                break;
            }
            advance(&mut exc, &mut now, next_act);
            for (k, q) in pending.iter_mut().enumerate() {
                while q.front().is_some_and(|&a| a <= now) {
                    q.pop_front();
                    exc[k] += alpha[k];
                }
            }
            continue;
        }
        if cand > end_time {
            break;
        }

        advance(&mut exc, &mut now, cand);
        let total = rates(&exc, &mut node_rate);
        let u: f64 = rng.random::<f64>() * bound;
        if u >= total {
            continue;
        }

        let mut acc = 0.0;
        let mut node = dim - 1;
        for (m, &r) in node_rate.iter().enumerate() {
            acc += r;
            if u < acc {
                node = m;
                break;
            }
        }

        let mut t = cand;
        if let Some(&last) = out[node].last() {
            if t <= last {
                t = last.next_up();
                collisions += 1;
            }
        }
        out[node].push(t);
        if keep_trace {
            trace.push(ThinningStep {
                time: t,
                node,
                intensity: node_rate[node],
            });
        }
        for target in 0..dim {
            let k = target * dim + node;
            if alpha[k] > 0.0 {
                pending[k].push_back(t + tau[k]);
            }
        }
    }
    (out, collisions, trace)
}

/// An event of the cluster construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterEvent {
    pub time: f64,
    pub node: usize,
    /// Index of the parent event, `None` for immigrants.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Genealogy {
    pub events: Vec<ClusterEvent>,
}

impl Genealogy {
    /// Sorted per-node timestamps and the number of ties that were broken.
    pub fn into_series(self, dim: usize) -> (Vec<Vec<f64>>, usize) {
        let mut nodes: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for e in self.events {
            nodes[e.node].push(e.time);
        }
        let mut collisions = 0;
        for v in &mut nodes {
            v.sort_by(f64::total_cmp);
            for j in 1..v.len() {
                if v[j] <= v[j - 1] {
                    v[j] = v[j - 1].next_up();
                    collisions += 1;
                }
            }
        }
        (nodes, collisions)
    }

    /// Number of direct children of every event.
    pub fn offspring_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.events.len()];
        for e in &self.events {
            if let Some(p) = e.parent {
                counts[p] += 1;
            }
        }
        counts
    }
}

/// One cluster-construction path on `[0, end_time]` with its family tree.
pub fn cluster_genealogy(model: &ModelMD, end_time: f64, rng: &mut ChaCha8Rng) -> Genealogy {
    let dim = model.dim();
    let mut events = Vec::new();
    for (m, &l0) in model.lambda0().iter().enumerate() {
        let mean = l0 * end_time;
        if mean <= 0.0 {
            continue;
        }
        let k = Poisson::new(mean)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0);
        for _ in 0..k {
            events.push(ClusterEvent {
                time: rng.random::<f64>() * end_time,
                node: m,
                parent: None,
            });
        }
    }

    let mut i = 0;
    while i < events.len() {
        let parent = events[i];
        for m in 0..dim {
            let kernel = model.kernel(m, parent.node);
            let mean = kernel.branching_ratio();
            if mean <= 0.0 {
                continue;
            }
            let k = Poisson::new(mean)
                .map(|d| d.sample(rng) as usize)
                .unwrap_or(0);
            let delay = Exp::new(kernel.beta).expect("beta is positive");
            for _ in 0..k {
                let t = parent.time + kernel.tau + delay.sample(rng);
                if t <= end_time {
                    events.push(ClusterEvent {
                        time: t,
                        node: m,
                        parent: Some(i),
                    });
                }
            }
        }
        i += 1;
    }
    Genealogy { events }
}

/// Events per unit time at node `m`, pooled over all paths.
pub fn empirical_rate(paths: &PathSet, m: usize) -> Result<f64> {
    if m >= paths.dim {
        return Err(HawkesError::NodeOutOfRange {
            index: m,
            dim: paths.dim,
        });
    }
    if paths.paths.is_empty() {
        return Err(HawkesError::InsufficientData("empty path set".into()));
    }
    let total: usize = paths.counts(m).iter().sum();
    Ok(total as f64 / (paths.n_paths() as f64 * paths.config.end_time))
}
