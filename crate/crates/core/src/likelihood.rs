//! Negative log-likelihoods of the latency-shifted exponential Hawkes model.
//!
//! Everything that depends only on the data (consecutive gaps, distances to
//! the horizon, latency windows) is computed once in a `PrecomputedDiffs*`
//! value; evaluations then cost O(N + Σ|windows|) per parameter vector.
//!
//! With `Rτ(1) = 0`,
//!
//! ```text
//! Rτ(i) = Rτ(i−1)·exp(−β(tᵢ − tᵢ₋₁)) + Σ_{tᵢ₋₁−τ ≤ tₖ < tᵢ−τ} exp(−β(tᵢ − τ − tₖ))
//! LL    = H·(1 − λ₀) − (α/β)·Σ_{tᵢ < H−τ} (1 − exp(−β(H − τ − tᵢ))) + Σᵢ ln(λ₀ + α·Rτ(i))
//! ```
//!
//! where the horizon `H` defaults to the last event time.

use crate::error::{HawkesError, Result};
use crate::model::{EventSeries, Latency, Model1D};

/// Default size limit of the O(N²) reference evaluation.
pub const BRUTE_FORCE_CAP: usize = 5000;

/// `(λ₀, α, β)` of a univariate likelihood evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params1D {
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Params1D {
    pub fn new(lambda0: f64, alpha: f64, beta: f64) -> Self {
        Self {
            lambda0,
            alpha,
            beta,
        }
    }

    fn validate(&self) -> Result<()> {
        validate_triplet(self.lambda0, self.alpha, self.beta)
    }
}

impl From<&Model1D> for Params1D {
    fn from(m: &Model1D) -> Self {
        Self::new(m.lambda0, m.alpha, m.beta)
    }
}

fn validate_triplet(lambda0: f64, alpha: f64, beta: f64) -> Result<()> {
    if !(lambda0.is_finite() && lambda0 >= 0.0) {
        return Err(HawkesError::InvalidParameter(format!(
            "lambda0 = {lambda0}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(HawkesError::InvalidParameter(format!("alpha = {alpha}")));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(HawkesError::InvalidParameter(format!("beta = {beta}")));
    }
    Ok(())
}

#[inline]
fn one_minus_exp(x: f64) -> f64 {
    -(-x).exp_m1()
}

#[inline]
fn log_term(index: usize, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value.ln())
    } else {
        Err(HawkesError::LogDomain { index, value })
    }
}

/// Flattened list of variable-length windows.
#[derive(Debug, Clone, PartialEq, Default)]
struct Windows {
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl Windows {
    /// Window `i` holds `tᵢ − τ − tₖ` for every source `tₖ` in
    /// `[tᵢ₋₁ − τ, tᵢ − τ)`; window 0 is empty.
    fn build(targets: &[f64], sources: &[f64], tau: f64) -> Self {
        let mut offsets = Vec::with_capacity(targets.len() + 1);
        let mut values = Vec::new();
        offsets.push(0);
        if !targets.is_empty() {
            offsets.push(0);
        }
        for i in 1..targets.len() {
            let lo_edge = targets[i - 1] - tau;
            let hi_edge = targets[i] - tau;
            let lo = sources.partition_point(|&s| s < lo_edge);
            let hi = sources.partition_point(|&s| s < hi_edge);
            values.extend(sources[lo..hi].iter().map(|&s| hi_edge - s));
            offsets.push(values.len());
        }
        Self { offsets, values }
    }

    #[inline]
    fn get(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// `H − τ − tᵢ` for every `tᵢ < H − τ`.
fn horizon_gaps(sources: &[f64], horizon: f64, tau: f64) -> Vec<f64> {
    let edge = horizon - tau;
    let end = sources.partition_point(|&s| s < edge);
    sources[..end].iter().map(|&s| edge - s).collect()
}

fn resolve_horizon(last: f64, horizon: Option<f64>) -> Result<f64> {
    match horizon {
        None => Ok(last),
        Some(h) if h.is_finite() && h >= last => Ok(h),
        Some(h) => Err(HawkesError::InvalidParameter(format!(
            "horizon {h} precedes the last event {last}"
        ))),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(HawkesError::InvalidParameter(format!("tau = {tau}")))
    }
}

/// Data-dependent parts of the univariate likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedDiffs1D {
    tau: f64,
    horizon: f64,
    n_events: usize,
    dt: Vec<f64>,
    ddt: Vec<f64>,
    windows: Windows,
}

impl PrecomputedDiffs1D {
    pub fn new(events: &EventSeries, tau: f64) -> Result<Self> {
        Self::build(events, tau, None)
    }

    /// Same as [`new`](Self::new) with the observation window ending at
    /// `horizon ≥ t_N` instead of the last event.
    pub fn with_horizon(events: &EventSeries, tau: f64, horizon: f64) -> Result<Self> {
        Self::build(events, tau, Some(horizon))
    }

    fn build(events: &EventSeries, tau: f64, horizon: Option<f64>) -> Result<Self> {
        check_tau(tau)?;
        let t = events.times();
        let last = events.last().ok_or(HawkesError::EmptySeries)?;
        let horizon = resolve_horizon(last, horizon)?;
        Ok(Self {
            tau,
            horizon,
            n_events: t.len(),
            dt: t.windows(2).map(|w| w[1] - w[0]).collect(),
            ddt: horizon_gaps(t, horizon, tau),
            windows: Windows::build(t, t, tau),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// `tᵢ − tᵢ₋₁` for `i ≥ 2` (length N−1).
    pub fn dt(&self) -> &[f64] {
        &self.dt
    }

    /// `H − τ − tᵢ` over events with `tᵢ < H − τ`.
    pub fn ddt(&self) -> &[f64] {
        &self.ddt
    }

    /// Latency window of event `i` (0-based); window 0 is always empty.
    pub fn window(&self, i: usize) -> &[f64] {
        self.windows.get(i)
    }

    fn compensator(&self, p: &Params1D) -> f64 {
        let kernel_mass: f64 = self.ddt.iter().map(|&d| one_minus_exp(p.beta * d)).sum();
        p.lambda0 * self.horizon + p.alpha / p.beta * kernel_mass
    }
}

/// The recursion values `Rτ(i)`, `i = 1..N`, for decay `beta`.
pub fn recursion_1d(beta: f64, pre: &PrecomputedDiffs1D) -> Vec<f64> {
    let mut out = Vec::with_capacity(pre.n_events);
    let mut r = 0.0;
    out.push(r);
    for i in 1..pre.n_events {
        let fresh: f64 = pre.window(i).iter().map(|&w| (-beta * w).exp()).sum();
        r = r * (-beta * pre.dt[i - 1]).exp() + fresh;
        out.push(r);
    }
    out
}

/// Negative log-likelihood of the zero-latency model through the classic
/// recursion `R(i) = exp(−β·Δtᵢ)·(1 + R(i−1))`.
pub fn negll_1d(params: &Params1D, pre: &PrecomputedDiffs1D) -> Result<f64> {
    params.validate()?;
    if pre.tau != 0.0 {
        return Err(HawkesError::InvalidParameter(format!(
            "zero-latency likelihood needs differences built with tau = 0, got {}",
            pre.tau
        )));
    }
    let Params1D {
        lambda0,
        alpha,
        beta,
    } = *params;
    let mut r = 0.0;
    let mut log_sum = log_term(0, lambda0)?;
    for (i, &dt) in pre.dt.iter().enumerate() {
        r = (-beta * dt).exp() * (1.0 + r);
        log_sum += log_term(i + 1, lambda0 + alpha * r)?;
    }
    Ok(-(pre.horizon - pre.compensator(params) + log_sum))
}

/// Negative log-likelihood with latency.
pub fn negll_1d_latency(params: &Params1D, pre: &PrecomputedDiffs1D) -> Result<f64> {
    params.validate()?;
    let Params1D {
        lambda0,
        alpha,
        beta,
    } = *params;
    let mut r = 0.0;
    let mut log_sum = log_term(0, lambda0)?;
    for i in 1..pre.n_events {
        let fresh: f64 = pre.window(i).iter().map(|&w| (-beta * w).exp()).sum();
        r = r * (-beta * pre.dt[i - 1]).exp() + fresh;
        log_sum += log_term(i, lambda0 + alpha * r)?;
    }
    Ok(-(pre.horizon - pre.compensator(params) + log_sum))
}

/// Direct O(N²) evaluation of the same objective, used as a reference.
pub fn negll_bruteforce(
    model: &Model1D,
    events: &EventSeries,
    horizon: Option<f64>,
) -> Result<f64> {
    negll_bruteforce_with_cap(model, events, horizon, BRUTE_FORCE_CAP)
}

pub fn negll_bruteforce_with_cap(
    model: &Model1D,
    events: &EventSeries,
    horizon: Option<f64>,
    cap: usize,
) -> Result<f64> {
    let t = events.times();
    if t.len() > cap {
        return Err(HawkesError::CapExceeded { n: t.len(), cap });
    }
    validate_triplet(model.lambda0, model.alpha, model.beta)?;
    check_tau(model.tau)?;
    let last = events.last().ok_or(HawkesError::EmptySeries)?;
    let h = resolve_horizon(last, horizon)?;
    let Model1D {
        lambda0,
        alpha,
        beta,
        tau,
    } = *model;

    let mut compensator = lambda0 * h;
    for &ti in t {
        if ti < h - tau {
            compensator += alpha / beta * (1.0 - (-beta * (h - tau - ti)).exp());
        }
    }
    let mut log_sum = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        let mut lam = lambda0;
        for &tk in t {
            if tk < ti - tau {
                lam += alpha * (-beta * (ti - tau - tk)).exp();
            }
        }
        log_sum += log_term(i, lam)?;
    }
    Ok(-(h - compensator + log_sum))
}

/// Per-node parameter slice `{λ₀ᵐ, αᵐ·, βᵐ·}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub lambda0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl NodeParams {
    /// Slice node `m` out of a full `[λ₀, α, β]` vector.
    pub fn from_theta(theta: &[f64], dim: usize, m: usize) -> Self {
        let a0 = dim + m * dim;
        let b0 = dim + dim * dim + m * dim;
        Self {
            lambda0: theta[m],
            alpha: theta[a0..a0 + dim].to_vec(),
            beta: theta[b0..b0 + dim].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PairDiffs {
    ddt: Vec<f64>,
    windows: Windows,
    dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeDiffs {
    n_events: usize,
    horizon: f64,
    dt: Vec<f64>,
    pairs: Vec<PairDiffs>,
}

/// Data-dependent parts of the multivariate likelihood, one block per target
/// node and one sub-block per `(target, source)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedDiffsMD {
    dim: usize,
    latency: Latency,
    nodes: Vec<NodeDiffs>,
}

impl PrecomputedDiffsMD {
    /// Each node's horizon is its own last event.
    pub fn new(events: &[EventSeries], tau: &Latency) -> Result<Self> {
        Self::build(events, tau, None)
    }

    /// All nodes observed up to a common `horizon`; empty nodes are allowed.
    pub fn with_horizon(events: &[EventSeries], tau: &Latency, horizon: f64) -> Result<Self> {
        Self::build(events, tau, Some(horizon))
    }

    fn build(events: &[EventSeries], tau: &Latency, horizon: Option<f64>) -> Result<Self> {
        let dim = events.len();
        if dim == 0 {
            return Err(HawkesError::InvalidEvents("no event series".into()));
        }
        if let Latency::Matrix(mat) = tau {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(HawkesError::InvalidParameter(format!(
                    "latency matrix must be {dim}x{dim}"
                )));
            }
        }
        let mut nodes = Vec::with_capacity(dim);
        for (m, target) in events.iter().enumerate() {
            let tm = target.times();
            let h = match (target.last(), horizon) {
                (Some(last), h) => resolve_horizon(last, h)?,
                (None, Some(h)) if h.is_finite() && h >= 0.0 => h,
                (None, _) => return Err(HawkesError::EmptySeries),
            };
            let mut pairs = Vec::with_capacity(dim);
            for source in events {
                let tn = source.times();
                let tau_mn = tau.get(m, pairs.len());
                check_tau(tau_mn)?;
                let dropped = match tm.first() {
                    Some(&first) => tn.partition_point(|&s| s < first - tau_mn),
                    None => 0,
                };
                pairs.push(PairDiffs {
                    ddt: horizon_gaps(tn, h, tau_mn),
                    windows: Windows::build(tm, tn, tau_mn),
                    dropped,
                });
            }
            debug_assert_eq!(m, nodes.len());
            nodes.push(NodeDiffs {
                n_events: tm.len(),
                horizon: h,
                dt: tm.windows(2).map(|w| w[1] - w[0]).collect(),
                pairs,
            });
        }
        Ok(Self {
            dim,
            latency: tau.clone(),
            nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn latency(&self) -> &Latency {
        &self.latency
    }

    pub fn horizon(&self, m: usize) -> f64 {
        self.nodes[m].horizon
    }

    pub fn n_events(&self, m: usize) -> usize {
        self.nodes[m].n_events
    }

    pub fn dt(&self, m: usize) -> &[f64] {
        &self.nodes[m].dt
    }

    pub fn ddt(&self, m: usize, n: usize) -> &[f64] {
        &self.nodes[m].pairs[n].ddt
    }

    /// Window of target event `i` (0-based) for the pair `(m, n)`.
    pub fn window(&self, m: usize, n: usize, i: usize) -> &[f64] {
        self.nodes[m].pairs[n].windows.get(i)
    }

    /// Source events of `n` that precede the first event of `m` by more than
    /// the latency. With `R(1) = 0` they never reach a window, so their
    /// excitation is missing from the log terms of node `m`.
    pub fn dropped_events(&self, m: usize, n: usize) -> usize {
        self.nodes[m].pairs[n].dropped
    }
}

/// Negative log-likelihood of node `m` (0-based).
pub fn negll_node_md(params: &NodeParams, pre: &PrecomputedDiffsMD, m: usize) -> Result<f64> {
    let dim = pre.dim;
    if m >= dim {
        return Err(HawkesError::NodeOutOfRange { index: m, dim });
    }
    if params.alpha.len() != dim || params.beta.len() != dim {
        return Err(HawkesError::InvalidParameter(format!(
            "node parameters must have {dim} alpha and beta entries"
        )));
    }
    for n in 0..dim {
        validate_triplet(params.lambda0, params.alpha[n], params.beta[n])?;
    }
    let node = &pre.nodes[m];

    let mut compensator = params.lambda0 * node.horizon;
    for (n, pair) in node.pairs.iter().enumerate() {
        let beta = params.beta[n];
        let mass: f64 = pair.ddt.iter().map(|&d| one_minus_exp(beta * d)).sum();
        compensator += params.alpha[n] / beta * mass;
    }

    let mut r = vec![0.0; dim];
    let mut log_sum = 0.0;
    if node.n_events > 0 {
        log_sum += log_term(0, params.lambda0)?;
    }
    for i in 1..node.n_events {
        let dt = node.dt[i - 1];
        let mut lam = params.lambda0;
        for (n, pair) in node.pairs.iter().enumerate() {
            let beta = params.beta[n];
            let fresh: f64 = pair.windows.get(i).iter().map(|&w| (-beta * w).exp()).sum();
            r[n] = r[n] * (-beta * dt).exp() + fresh;
            lam += params.alpha[n] * r[n];
        }
        log_sum += log_term(i, lam)?;
    }
    Ok(-(node.horizon - compensator + log_sum))
}

/// Sum of the per-node negative log-likelihoods for a full
/// `[λ₀ (M), α (M², row-major), β (M², row-major)]` vector.
pub fn negll_joint_md(theta: &[f64], pre: &PrecomputedDiffsMD) -> Result<f64> {
    let dim = pre.dim;
    if theta.len() != crate::model::theta_len(dim) {
        return Err(HawkesError::InvalidParameter(format!(
            "parameter vector has {} entries, expected {}",
            theta.len(),
            crate::model::theta_len(dim)
        )));
    }
    (0..dim).try_fold(0.0, |acc, m| {
        Ok(acc + negll_node_md(&NodeParams::from_theta(theta, dim, m), pre, m)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(t: &[f64]) -> EventSeries {
        EventSeries::new(t.to_vec()).unwrap()
    }

    #[test]
    fn precompute_zero_latency() {
        let pre = PrecomputedDiffs1D::new(&series(&[1.0, 2.0, 4.0]), 0.0).unwrap();
        assert_eq!(pre.dt(), &[1.0, 2.0]);
        assert!(pre.window(0).is_empty());
        assert_eq!(pre.window(1), &[1.0]);
        assert_eq!(pre.window(2), &[2.0]);
        // t_N itself sits on the strict bound and would contribute 1 − e⁰ = 0
        assert_eq!(pre.ddt(), &[3.0, 2.0]);
    }

    #[test]
    fn precompute_with_latency() {
        let pre = PrecomputedDiffs1D::new(&series(&[0.0, 1.0, 2.0]), 0.5).unwrap();
        assert_eq!(pre.window(1), &[0.5]);
        assert_eq!(pre.window(2), &[0.5]);

        let pre = PrecomputedDiffs1D::new(&series(&[0.0, 0.2]), 1.0).unwrap();
        assert!((0..2).all(|i| pre.window(i).is_empty()));
        assert!(pre.ddt().is_empty());

        assert_eq!(
            PrecomputedDiffs1D::new(&EventSeries::empty(), 0.0),
            Err(HawkesError::EmptySeries)
        );
    }

    #[test]
    fn negll_poisson_and_hand_values() {
        let pre = PrecomputedDiffs1D::new(&series(&[1.0]), 0.0).unwrap();
        let v = negll_1d(&Params1D::new(1.0, 0.0, 1.0), &pre).unwrap();
        assert_eq!(v, 0.0);

        // R(2) = e⁻¹, compensator 0.5·(1 − e⁻¹)
        let pre = PrecomputedDiffs1D::new(&series(&[0.0, 1.0]), 0.0).unwrap();
        let v = negll_1d(&Params1D::new(1.0, 0.5, 1.0), &pre).unwrap();
        let e1 = (-1.0f64).exp();
        let hand = -(-0.5 * (1.0 - e1) + (1.0 + 0.5 * e1).ln());
        assert!((v - hand).abs() < 1e-15);
        assert!((v - 0.147213).abs() < 1e-6);
    }

    #[test]
    fn negll_domain_errors() {
        let pre = PrecomputedDiffs1D::new(&series(&[0.0, 1.0]), 0.0).unwrap();
        assert!(matches!(
            negll_1d(&Params1D::new(0.0, 0.0, 1.0), &pre),
            Err(HawkesError::LogDomain { index: 0, .. })
        ));
        assert!(matches!(
            negll_1d(&Params1D::new(1.0, 0.5, 0.0), &pre),
            Err(HawkesError::InvalidParameter(_))
        ));
        let lat = PrecomputedDiffs1D::new(&series(&[0.0, 1.0]), 0.5).unwrap();
        assert!(negll_1d(&Params1D::new(1.0, 0.5, 1.0), &lat).is_err());
    }

    #[test]
    fn latency_recursion_by_hand() {
        let pre = PrecomputedDiffs1D::new(&series(&[0.0, 1.0, 2.0]), 0.5).unwrap();
        let r = recursion_1d(1.0, &pre);
        let e = |x: f64| (-x).exp();
        let hand = [0.0, e(0.5), e(0.5) * e(1.0) + e(0.5)];
        for (a, b) in r.iter().zip(hand) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((r[1] - 0.60653).abs() < 1e-5);
        assert!((r[2] - 0.82966).abs() < 1e-5);
    }

    #[test]
    fn bruteforce_cap_and_poisson() {
        let m = Model1D::new(1.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(negll_bruteforce(&m, &series(&[1.0]), None).unwrap(), 0.0);
        let ev = series(&[0.0, 1.0, 2.0]);
        assert_eq!(
            negll_bruteforce_with_cap(&m, &ev, None, 2),
            Err(HawkesError::CapExceeded { n: 3, cap: 2 })
        );
    }

    #[test]
    fn horizon_override_extends_compensator() {
        let ev = series(&[0.5, 1.0, 3.0]);
        let pre = PrecomputedDiffs1D::with_horizon(&ev, 0.25, 10.0).unwrap();
        let p = Params1D::new(0.4, 0.3, 1.5);
        let m = Model1D::new(0.4, 0.3, 1.5, 0.25).unwrap();
        let direct = negll_bruteforce(&m, &ev, Some(10.0)).unwrap();
        assert!((negll_1d_latency(&p, &pre).unwrap() - direct).abs() < 1e-12);
        assert!(PrecomputedDiffs1D::with_horizon(&ev, 0.25, 2.0).is_err());
    }

    #[test]
    fn md_poisson_reduction() {
        let ev = vec![series(&[0.5, 1.5, 2.0]), series(&[0.1, 3.0])];
        let pre = PrecomputedDiffsMD::new(&ev, &Latency::Scalar(0.3)).unwrap();
        let p = NodeParams {
            lambda0: 0.7,
            alpha: vec![0.0, 0.0],
            beta: vec![1.0, 2.0],
        };
        let v = negll_node_md(&p, &pre, 0).unwrap();
        let expect = -(2.0 * (1.0 - 0.7) + 3.0 * 0.7f64.ln());
        assert!((v - expect).abs() < 1e-14);
        assert!(matches!(
            negll_node_md(&p, &pre, 2),
            Err(HawkesError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn md_dropped_events_diagnostic() {
        let ev = vec![series(&[5.0, 6.0]), series(&[0.5, 1.0, 4.9, 5.8])];
        let pre = PrecomputedDiffsMD::new(&ev, &Latency::Scalar(0.5)).unwrap();
        // 0.5 and 1.0 precede 5.0 − 0.5
        assert_eq!(pre.dropped_events(0, 1), 2);
        assert_eq!(pre.window(0, 1, 1), &[6.0 - 0.5 - 4.9]);
        assert_eq!(pre.dropped_events(1, 1), 0);
    }

    #[test]
    fn md_empty_node_needs_horizon() {
        let ev = vec![series(&[1.0, 2.0]), EventSeries::empty()];
        assert_eq!(
            PrecomputedDiffsMD::new(&ev, &Latency::Scalar(0.0)),
            Err(HawkesError::EmptySeries)
        );
        let pre = PrecomputedDiffsMD::with_horizon(&ev, &Latency::Scalar(0.0), 4.0).unwrap();
        let p = NodeParams {
            lambda0: 0.5,
            alpha: vec![0.2, 0.1],
            beta: vec![1.0, 1.0],
        };
        // no log terms; compensator 0.5·4 + 0.2·[(1 − e⁻³) + (1 − e⁻²)]
        let comp = 2.0 + 0.2 * ((1.0 - (-3.0f64).exp()) + (1.0 - (-2.0f64).exp()));
        let v = negll_node_md(&p, &pre, 1).unwrap();
        assert!((v - -(4.0 - comp)).abs() < 1e-14);
    }

    fn arb_events(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001..3.0f64, 1..max_n).prop_map(|gaps| {
            let mut t = 0.0;
            gaps.iter()
                .map(|g| {
                    t += g;
                    t
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn recursion_matches_bruteforce(
            times in arb_events(120),
            l0 in 0.05..3.0f64, a in 0.0..3.0f64, b in 0.05..5.0f64,
            tau_pick in 0usize..3,
        ) {
            let tau = [0.0, 0.1, 2.0][tau_pick];
            let ev = EventSeries::new(times).unwrap();
            let pre = PrecomputedDiffs1D::new(&ev, tau).unwrap();
            let p = Params1D::new(l0, a, b);
            let rec = negll_1d_latency(&p, &pre).unwrap();
            let direct = negll_bruteforce(&Model1D::new(l0, a, b, tau).unwrap(), &ev, None).unwrap();
            prop_assert!((rec - direct).abs() / direct.abs().max(1.0) < 1e-9);
            if tau == 0.0 {
                let classic = negll_1d(&p, &pre).unwrap();
                prop_assert!((classic - rec).abs() / rec.abs().max(1.0) < 1e-12);
            }
        }

        #[test]
        fn recursion_is_bounded(times in arb_events(80), b in 0.01..5.0f64, tau in 0.0..2.0f64) {
            let ev = EventSeries::new(times).unwrap();
            let pre = PrecomputedDiffs1D::new(&ev, tau).unwrap();
            for (i, r) in recursion_1d(b, &pre).into_iter().enumerate() {
                prop_assert!(r >= 0.0);
                prop_assert!(r <= i as f64 + 1e-12);
            }
        }

        #[test]
        fn windows_partition_sources(
            target in arb_events(40), source in arb_events(60), tau in 0.0..2.0f64,
        ) {
            let ev = vec![EventSeries::new(target.clone()).unwrap(), EventSeries::new(source.clone()).unwrap()];
            let pre = PrecomputedDiffsMD::new(&ev, &Latency::Scalar(tau)).unwrap();
            let first = target[0] - tau;
            let last = target[target.len() - 1] - tau;
            let mut seen = 0usize;
            for (i, &ti) in target.iter().enumerate() {
                for &w in pre.window(0, 1, i) {
                    prop_assert!(w > 0.0);
                    prop_assert!(w <= ti - tau);
                    seen += 1;
                }
            }
            let expected = source.iter().filter(|&&s| s >= first && s < last).count();
            prop_assert_eq!(seen, expected);
            let before = source.iter().filter(|&&s| s < first).count();
            prop_assert_eq!(pre.dropped_events(0, 1), before);
        }

        #[test]
        fn central_differences_are_stable(
            times in arb_events(60),
            l0 in 0.2..2.0f64, a in 0.1..1.0f64, b in 0.5..3.0f64, tau in 0.0..1.0f64,
        ) {
            let ev = EventSeries::new(times).unwrap();
            let pre = PrecomputedDiffs1D::new(&ev, tau).unwrap();
            let f = |x: [f64; 3]| negll_1d_latency(&Params1D::new(x[0], x[1], x[2]), &pre).unwrap();
            let x = [l0, a, b];
            for k in 0..3 {
                let grad = |h: f64| {
                    let mut up = x;
                    let mut dn = x;
                    up[k] += h;
                    dn[k] -= h;
                    (f(up) - f(dn)) / (2.0 * h)
                };
                let g1 = grad(1e-4);
                let g2 = grad(1e-5);
                prop_assert!((g1 - g2).abs() <= 1e-4 * g1.abs().max(1.0));
            }
        }
    }
}
