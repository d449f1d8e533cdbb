//! Maximum-likelihood fitting under box bounds, parameter tying and the
//! stationarity constraint.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{HawkesError, Result};
use crate::likelihood::{
    negll_1d, negll_1d_latency, negll_joint_md, negll_node_md, NodeParams, Params1D,
    PrecomputedDiffs1D, PrecomputedDiffsMD,
};
use crate::model::{spectral_radius, theta_len, EventSeries, Latency, Model1D, ModelMD};
use crate::optim::{minimize_box, minimize_positive, Method, OptimOptions, OptimResult};

/// Bounds of the logistic coordinate that carries `α/β` in univariate fits.
const U_MIN: f64 = -50.0;
const U_MAX: f64 = 20.0;
/// Distance from 1 at which the joint-fit stationarity penalty starts.
const STATIONARITY_MARGIN: f64 = 1e-3;
const PENALTY_WEIGHT: f64 = 1e6;
/// A parameter within this log-distance of a bound is reported as a hit.
const BOUND_HIT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Lambda0,
    Alpha,
    Beta,
}

/// Kind of entry `idx` in the flat `[λ₀, α, β]` vector.
pub fn param_kind(dim: usize, idx: usize) -> ParamKind {
    if idx < dim {
        ParamKind::Lambda0
    } else if idx < dim + dim * dim {
        ParamKind::Alpha
    } else {
        ParamKind::Beta
    }
}

/// Name of entry `idx` in the flat parameter vector, e.g. `alpha[0,1]`.
pub fn param_name(dim: usize, idx: usize) -> String {
    match param_kind(dim, idx) {
        ParamKind::Lambda0 => format!("lambda0[{idx}]"),
        ParamKind::Alpha => {
            let k = idx - dim;
            format!("alpha[{},{}]", k / dim, k % dim)
        }
        ParamKind::Beta => {
            let k = idx - dim - dim * dim;
            format!("beta[{},{}]", k / dim, k % dim)
        }
    }
}

/// Inverse of [`param_name`]; accepts `[..]` or `(..)` around the indices.
pub fn parse_param_name(dim: usize, name: &str) -> Result<usize> {
    let bad = || HawkesError::Tying(format!("cannot parse parameter name '{name}'"));
    let name = name.trim();
    let open = name.find(['[', '(']).ok_or_else(bad)?;
    let close = name.rfind([']', ')']).ok_or_else(bad)?;
    if close != name.len() - 1 || close < open {
        return Err(bad());
    }
    let head = name[..open].trim();
    let idx: Vec<usize> = name[open + 1..close]
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let out_of_range =
        |i: usize| HawkesError::Tying(format!("index {i} in '{name}' exceeds dimension {dim}"));
    if let Some(&i) = idx.iter().find(|&&i| i >= dim) {
        return Err(out_of_range(i));
    }
    match (head, idx.as_slice()) {
        ("lambda0", [m]) => Ok(*m),
        ("alpha", [m, n]) => Ok(dim + m * dim + n),
        ("beta", [m, n]) => Ok(dim + dim * dim + m * dim + n),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lambda0: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lambda0: (1e-10, 1e3),
            alpha: (1e-10, 1e6),
            beta: (1e-10, 1e6),
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lambda0", self.lambda0),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(HawkesError::InvalidParameter(format!(
                    "bounds for {name} must satisfy 0 < lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn for_kind(&self, kind: ParamKind) -> (f64, f64) {
        match kind {
            ParamKind::Lambda0 => self.lambda0,
            ParamKind::Alpha => self.alpha,
            ParamKind::Beta => self.beta,
        }
    }
}

fn at_bound(x: f64, (lo, hi): (f64, f64)) -> bool {
    (x.ln() - lo.ln()).abs() <= BOUND_HIT_TOL || (x.ln() - hi.ln()).abs() <= BOUND_HIT_TOL
}

/// Many-to-one map from the full parameter vector onto free parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TyingScheme {
    dim: usize,
    n_free: usize,
    map: Vec<usize>,
}

impl TyingScheme {
    /// Every parameter free.
    pub fn identity(dim: usize) -> Self {
        let n = theta_len(dim);
        Self {
            dim,
            n_free: n,
            map: (0..n).collect(),
        }
    }

    /// Ties each group of full-vector indices to one free parameter;
    /// indices that appear in no group stay free. Free parameters are numbered
    /// in order of their first full-vector index.
    pub fn from_groups(dim: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let n = theta_len(dim);
        let mut group_of = vec![None; n];
        for (g, group) in groups.iter().enumerate() {
            let Some(&first) = group.first() else {
                return Err(HawkesError::Tying("empty group".into()));
            };
            for &idx in group {
                if idx >= n {
                    return Err(HawkesError::Tying(format!(
                        "index {idx} outside a parameter vector of length {n}"
                    )));
                }
                if group_of[idx].is_some() {
                    return Err(HawkesError::Tying(format!(
                        "{} appears in more than one group",
                        param_name(dim, idx)
                    )));
                }
                if param_kind(dim, idx) != param_kind(dim, first) {
                    return Err(HawkesError::Tying(format!(
                        "cannot tie {} to {}",
                        param_name(dim, idx),
                        param_name(dim, first)
                    )));
                }
                group_of[idx] = Some(g);
            }
        }
        let mut free_of_group = vec![None; groups.len()];
        let mut map = Vec::with_capacity(n);
        let mut n_free = 0;
        for g in group_of {
            let slot = match g {
                Some(g) => *free_of_group[g].get_or_insert_with(|| {
                    n_free += 1;
                    n_free - 1
                }),
                None => {
                    n_free += 1;
                    n_free - 1
                }
            };
            map.push(slot);
        }
        Ok(Self { dim, n_free, map })
    }

    /// Parses one group per line, names joined by `=`; `#` starts a comment.
    ///
    /// ```text
    /// alpha[0,0] = alpha[1,1]
    /// beta[0,0] = beta[0,1] = beta[1,0] = beta[1,1]
    /// ```
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let group = line
                .split('=')
                .map(|name| parse_param_name(dim, name))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| HawkesError::Tying(format!("line {}: {e}", lineno + 1)))?;
            groups.push(group);
        }
        Self::from_groups(dim, &groups)
    }

    /// Bid/ask mirror symmetry for nodes `[P_up, P_down, T_ask, T_bid]`:
    /// within each 2x2 target/source block the diagonal and anti-diagonal
    /// intensities are tied, and each block shares one decay.
    pub fn bund() -> Self {
        let dim = 4;
        let a = |m: usize, n: usize| dim + m * dim + n;
        let b = |m: usize, n: usize| dim + dim * dim + m * dim + n;
        let mut groups = Vec::new();
        for tb in [0, 2] {
            for sb in [0, 2] {
                groups.push(vec![a(tb, sb), a(tb + 1, sb + 1)]);
                groups.push(vec![a(tb, sb + 1), a(tb + 1, sb)]);
                groups.push(vec![
                    b(tb, sb),
                    b(tb, sb + 1),
                    b(tb + 1, sb),
                    b(tb + 1, sb + 1),
                ]);
            }
        }
        Self::from_groups(dim, &groups).expect("preset groups are consistent")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn free_kind(&self, j: usize) -> ParamKind {
        let idx = self
            .map
            .iter()
            .position(|&f| f == j)
            .expect("map is surjective");
        param_kind(self.dim, idx)
    }

    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.map.iter().map(|&j| free[j]).collect()
    }

    /// Free vector whose entries are the means of their tied groups.
    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_free];
        let mut count = vec![0usize; self.n_free];
        for (&j, &v) in self.map.iter().zip(full) {
            sum[j] += v;
            count[j] += 1;
        }
        sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    pub bounds: Bounds,
    pub optim: OptimOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::Powell,
            bounds: Bounds::default(),
            optim: OptimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<P> {
    pub params: P,
    pub neg_ll: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub runtime_s: f64,
    pub method: String,
    pub bound_hits: Vec<String>,
    /// Best objective value after each optimizer iteration.
    pub trace: Vec<f64>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// `λ₀ = N/(2T)`, `β = 1/median(Δt)` and `α = β/(2M)`, with `β = 1` when
/// there are fewer than two events.
fn default_node_init(n_events: usize, horizon: f64, dt: &[f64], dim: usize) -> (f64, f64, f64) {
    let lambda0 = if horizon > 0.0 {
        n_events as f64 / (2.0 * horizon)
    } else {
        1.0
    };
    let beta = match median(&mut dt.to_vec()) {
        Some(m) if m > 0.0 => 1.0 / m,
        _ => 1.0,
    };
    (lambda0, beta / (2.0 * dim as f64), beta)
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Univariate fit with `α < β` built into the parameterization.
pub fn fit_1d(
    pre: &PrecomputedDiffs1D,
    init: Option<Params1D>,
    opts: &FitOptions,
) -> Result<FitResult<Model1D>> {
    fit_1d_pooled(std::slice::from_ref(pre), init, opts)
}

fn fit_1d_pooled(
    pres: &[PrecomputedDiffs1D],
    init: Option<Params1D>,
    opts: &FitOptions,
) -> Result<FitResult<Model1D>> {
    opts.bounds.validate()?;
    let first = pres.first().ok_or(HawkesError::EmptySeries)?;
    if pres.iter().any(|p| p.tau() != first.tau()) {
        return Err(HawkesError::InvalidParameter(
            "pooled series must share the latency".into(),
        ));
    }
    let start = Instant::now();
    let b = opts.bounds;
    let init = init.unwrap_or_else(|| {
        let n: usize = pres.iter().map(|p| p.n_events()).sum();
        let h: f64 = pres.iter().map(|p| p.horizon()).sum();
        let dt: Vec<f64> = pres.iter().flat_map(|p| p.dt().iter().copied()).collect();
        let (lambda0, alpha, beta) = default_node_init(n, h, &dt, 1);
        Params1D::new(lambda0, alpha, beta)
    });

    let lambda0 = init.lambda0.clamp(b.lambda0.0, b.lambda0.1);
    let beta = init.beta.clamp(b.beta.0, b.beta.1);
    let ratio = (init.alpha / beta).clamp(sigmoid(U_MIN), sigmoid(U_MAX));
    let z0 = [lambda0.ln(), logit(ratio), beta.ln()];
    let lower = [b.lambda0.0.ln(), U_MIN, b.beta.0.ln()];
    let upper = [b.lambda0.1.ln(), U_MAX, b.beta.1.ln()];
    let decode = |z: &[f64]| {
        let beta = z[2].exp().clamp(b.beta.0, b.beta.1);
        Params1D::new(
            z[0].exp().clamp(b.lambda0.0, b.lambda0.1),
            (beta * sigmoid(z[1])).clamp(b.alpha.0, b.alpha.1),
            beta,
        )
    };
    let negll = |p: &Params1D| -> Result<f64> {
        pres.iter().try_fold(0.0, |acc, pre| {
            let v = if pre.tau() == 0.0 {
                negll_1d(p, pre)?
            } else {
                negll_1d_latency(p, pre)?
            };
            Ok(acc + v)
        })
    };
    let res = minimize_box(
        |z| negll(&decode(z)).unwrap_or(f64::INFINITY),
        &lower,
        &upper,
        &z0,
        opts.method,
        &opts.optim,
    )?;
    let p = decode(&res.x);
    let mut bound_hits = Vec::new();
    for (name, v, bnd) in [
        ("lambda0", p.lambda0, b.lambda0),
        ("alpha", p.alpha, b.alpha),
        ("beta", p.beta, b.beta),
    ] {
        if at_bound(v, bnd) {
            bound_hits.push(name.to_string());
        }
    }
    Ok(FitResult {
        params: Model1D::new(p.lambda0, p.alpha, p.beta, first.tau())?,
        neg_ll: res.fx,
        n_evals: res.n_evals,
        converged: res.converged,
        runtime_s: start.elapsed().as_secs_f64(),
        method: opts.method.name().to_string(),
        bound_hits,
        trace: res.trace,
    })
}

/// Fits the parameters of target node `m` alone, under box bounds only.
pub fn fit_node_md(
    pre: &PrecomputedDiffsMD,
    m: usize,
    init: Option<NodeParams>,
    opts: &FitOptions,
) -> Result<FitResult<NodeParams>> {
    opts.bounds.validate()?;
    let dim = pre.dim();
    if m >= dim {
        return Err(HawkesError::NodeOutOfRange { index: m, dim });
    }
    let start = Instant::now();
    let init = init.unwrap_or_else(|| {
        let (l, a, b) = default_node_init(pre.n_events(m), pre.horizon(m), pre.dt(m), dim);
        NodeParams {
            lambda0: l,
            alpha: vec![a; dim],
            beta: vec![b; dim],
        }
    });
    if init.alpha.len() != dim || init.beta.len() != dim {
        return Err(HawkesError::InvalidParameter(format!(
            "initial node parameters must have {dim} alpha and beta entries"
        )));
    }
    let mut kinds = vec![ParamKind::Lambda0];
    kinds.extend(std::iter::repeat_n(ParamKind::Alpha, dim));
    kinds.extend(std::iter::repeat_n(ParamKind::Beta, dim));
    let bounds: Vec<(f64, f64)> = kinds.iter().map(|&k| opts.bounds.for_kind(k)).collect();
    let mut x0 = vec![init.lambda0];
    x0.extend(&init.alpha);
    x0.extend(&init.beta);
    for (v, &(lo, hi)) in x0.iter_mut().zip(&bounds) {
        *v = v.clamp(lo, hi);
    }
    let unpack = |x: &[f64]| NodeParams {
        lambda0: x[0],
        alpha: x[1..1 + dim].to_vec(),
        beta: x[1 + dim..].to_vec(),
    };
    let res = minimize_positive(
        |x| negll_node_md(&unpack(x), pre, m).unwrap_or(f64::INFINITY),
        &bounds,
        &x0,
        opts.method,
        &opts.optim,
    )?;
    let bound_hits = res
        .x
        .iter()
        .zip(&bounds)
        .enumerate()
        .filter(|(_, (v, b))| at_bound(**v, **b))
        .map(|(k, _)| {
            let full = match k {
                0 => m,
                k if k <= dim => dim + m * dim + (k - 1),
                k => dim + dim * dim + m * dim + (k - 1 - dim),
            };
            param_name(dim, full)
        })
        .collect();
    Ok(FitResult {
        params: unpack(&res.x),
        neg_ll: res.fx,
        n_evals: res.n_evals,
        converged: res.converged,
        runtime_s: start.elapsed().as_secs_f64(),
        method: opts.method.name().to_string(),
        bound_hits,
        trace: res.trace,
    })
}

/// Zero inside the stationary region short of the margin, quadratic within
/// the margin and infinite at or beyond spectral radius 1.
fn stationarity_penalty(dim: usize, theta: &[f64]) -> f64 {
    let a = &theta[dim..dim + dim * dim];
    let b = &theta[dim + dim * dim..];
    let gamma = nalgebra::DMatrix::from_fn(dim, dim, |m, n| a[m * dim + n] / b[m * dim + n]);
    let rho = spectral_radius(&gamma);
    if rho.is_nan() || rho >= 1.0 {
        return f64::INFINITY;
    }
    let excess = (rho - 1.0 + STATIONARITY_MARGIN).max(0.0);
    PENALTY_WEIGHT * excess * excess
}

fn default_theta_md(pres: &[PrecomputedDiffsMD]) -> Vec<f64> {
    let dim = pres[0].dim();
    let mut theta = vec![0.0; theta_len(dim)];
    for m in 0..dim {
        let n: usize = pres.iter().map(|p| p.n_events(m)).sum();
        let h: f64 = pres.iter().map(|p| p.horizon(m)).sum();
        let dt: Vec<f64> = pres.iter().flat_map(|p| p.dt(m).iter().copied()).collect();
        let (l, a, b) = default_node_init(n, h, &dt, dim);
        theta[m] = l;
        for k in 0..dim {
            theta[dim + m * dim + k] = a;
            theta[dim + dim * dim + m * dim + k] = b;
        }
    }
    theta
}

/// Joint multivariate fit over the free parameters of `tying`, keeping the
/// model stationary.
pub fn fit_joint_md(
    pre: &PrecomputedDiffsMD,
    init: Option<&ModelMD>,
    tying: &TyingScheme,
    opts: &FitOptions,
) -> Result<FitResult<ModelMD>> {
    fit_joint_pooled(std::slice::from_ref(pre), init, tying, opts)
}

fn fit_joint_pooled(
    pres: &[PrecomputedDiffsMD],
    init: Option<&ModelMD>,
    tying: &TyingScheme,
    opts: &FitOptions,
) -> Result<FitResult<ModelMD>> {
    opts.bounds.validate()?;
    let first = pres.first().ok_or(HawkesError::EmptySeries)?;
    let dim = first.dim();
    if tying.dim() != dim {
        return Err(HawkesError::Tying(format!(
            "scheme is for dimension {}, data has {dim}",
            tying.dim()
        )));
    }
    if pres
        .iter()
        .any(|p| p.dim() != dim || p.latency() != first.latency())
    {
        return Err(HawkesError::InvalidParameter(
            "pooled paths must share dimension and latency".into(),
        ));
    }
    if let Some(model) = init {
        if model.dim() != dim {
            return Err(HawkesError::InvalidParameter(format!(
                "initial model has dimension {}, data has {dim}",
                model.dim()
            )));
        }
    }
    let start = Instant::now();
    let full0 = match init {
        Some(model) => model.theta(),
        None => default_theta_md(pres),
    };
    let bounds: Vec<(f64, f64)> = (0..tying.n_free())
        .map(|j| opts.bounds.for_kind(tying.free_kind(j)))
        .collect();
    let mut x0 = tying.project(&full0);
    for (v, &(lo, hi)) in x0.iter_mut().zip(&bounds) {
        *v = v.clamp(lo, hi);
    }
    let negll = |theta: &[f64]| -> Result<f64> {
        pres.iter()
            .try_fold(0.0, |acc, pre| Ok(acc + negll_joint_md(theta, pre)?))
    };
    let objective = |x: &[f64]| {
        let theta = tying.expand(x);
        let penalty = stationarity_penalty(dim, &theta);
        if !penalty.is_finite() {
            return f64::INFINITY;
        }
        negll(&theta).map_or(f64::INFINITY, |v| v + penalty)
    };
    let res: OptimResult = minimize_positive(objective, &bounds, &x0, opts.method, &opts.optim)?;
    let theta = tying.expand(&res.x);
    let neg_ll = negll(&theta)?;
    let bound_hits = theta
        .iter()
        .enumerate()
        .filter(|&(k, &v)| at_bound(v, opts.bounds.for_kind(param_kind(dim, k))))
        .map(|(k, _)| param_name(dim, k))
        .collect();
    Ok(FitResult {
        params: ModelMD::from_theta(dim, &theta, first.latency().clone())?,
        neg_ll,
        n_evals: res.n_evals,
        converged: res.converged,
        runtime_s: start.elapsed().as_secs_f64(),
        method: opts.method.name().to_string(),
        bound_hits,
        trace: res.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// One independent fit per path.
    PerPath,
    /// One fit of the summed likelihood over all paths.
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFit<P> {
    pub fits: Vec<FitResult<P>>,
    /// Statistics over converged fits, in parameter order.
    pub summary: Vec<ParamSummary>,
    /// Number of fits left out of the summary because they did not converge.
    pub excluded: usize,
}

/// Mean, sample standard deviation and median of each column of `rows`.
pub fn summarize(names: Vec<String>, rows: &[Vec<f64>]) -> Vec<ParamSummary> {
    names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = if col.len() > 1 {
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let median = median(&mut col).unwrap_or(f64::NAN);
            ParamSummary {
                name,
                mean,
                sd,
                median,
            }
        })
        .collect()
}

fn path_options(opts: &FitOptions, index: usize) -> FitOptions {
    let mut o = *opts;
    o.optim.seed = opts.optim.seed.wrapping_add(index as u64);
    o
}

/// Fits every univariate path (or their pooled likelihood).
pub fn fit_multipath_1d(
    paths: &[EventSeries],
    tau: f64,
    horizon: Option<f64>,
    init: Option<Params1D>,
    opts: &FitOptions,
    mode: PoolMode,
) -> Result<MultiFit<Model1D>> {
    if paths.is_empty() {
        return Err(HawkesError::InsufficientData("no paths to fit".into()));
    }
    let pres = paths
        .iter()
        .map(|p| match horizon {
            Some(h) => PrecomputedDiffs1D::with_horizon(p, tau, h),
            None => PrecomputedDiffs1D::new(p, tau),
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = match mode {
        PoolMode::Pooled => vec![fit_1d_pooled(&pres, init, opts)?],
        PoolMode::PerPath => pres
            .par_iter()
            .enumerate()
            .map(|(i, pre)| fit_1d(pre, init, &path_options(opts, i)))
            .collect::<Result<Vec<_>>>()?,
    };
    let rows: Vec<Vec<f64>> = fits
        .iter()
        .filter(|f| f.converged)
        .map(|f| vec![f.params.lambda0, f.params.alpha, f.params.beta])
        .collect();
    let names = ["lambda0", "alpha", "beta"].map(String::from).to_vec();
    Ok(MultiFit {
        excluded: fits.len() - rows.len(),
        summary: summarize(names, &rows),
        fits,
    })
}

/// Joint fits of every multivariate path (or their pooled likelihood).
pub fn fit_multipath_md(
    paths: &[Vec<EventSeries>],
    tau: &Latency,
    horizon: Option<f64>,
    init: Option<&ModelMD>,
    tying: &TyingScheme,
    opts: &FitOptions,
    mode: PoolMode,
) -> Result<MultiFit<ModelMD>> {
    if paths.is_empty() {
        return Err(HawkesError::InsufficientData("no paths to fit".into()));
    }
    let pres = paths
        .iter()
        .map(|p| match horizon {
            Some(h) => PrecomputedDiffsMD::with_horizon(p, tau, h),
            None => PrecomputedDiffsMD::new(p, tau),
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = pres[0].dim();
    let fits = match mode {
        PoolMode::Pooled => vec![fit_joint_pooled(&pres, init, tying, opts)?],
        PoolMode::PerPath => pres
            .par_iter()
            .enumerate()
            .map(|(i, pre)| fit_joint_md(pre, init, tying, &path_options(opts, i)))
            .collect::<Result<Vec<_>>>()?,
    };
    let rows: Vec<Vec<f64>> = fits
        .iter()
        .filter(|f| f.converged)
        .map(|f| f.params.theta())
        .collect();
    let names = (0..theta_len(dim)).map(|k| param_name(dim, k)).collect();
    Ok(MultiFit {
        excluded: fits.len() - rows.len(),
        summary: summarize(names, &rows),
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimConfig, SimMethod};

    fn simulate_1d(model: Model1D, end: f64, n_paths: usize, seed: u64) -> Vec<EventSeries> {
        let cfg = SimConfig::new(end, n_paths, seed, SimMethod::Thinning).unwrap();
        simulate(&ModelMD::from(model), &cfg)
            .unwrap()
            .paths
            .into_iter()
            .map(|mut p| p.remove(0))
            .collect()
    }

    #[test]
    fn param_names_round_trip() {
        for dim in 1..4 {
            for k in 0..theta_len(dim) {
                assert_eq!(parse_param_name(dim, &param_name(dim, k)).unwrap(), k);
            }
        }
        assert_eq!(parse_param_name(2, "alpha(1, 0)").unwrap(), 2 + 2);
        assert!(parse_param_name(2, "alpha[2,0]").is_err());
        assert!(parse_param_name(2, "gamma[0,0]").is_err());
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::default().validate().is_ok());
        for alpha in [(0.0, 1.0), (2.0, 1.0)] {
            let b = Bounds {
                alpha,
                ..Default::default()
            };
            assert!(b.validate().is_err());
        }
    }

    #[test]
    fn identity_scheme_is_total() {
        let t = TyingScheme::identity(3);
        assert_eq!(t.n_free(), theta_len(3));
        let full: Vec<f64> = (0..theta_len(3)).map(|k| k as f64).collect();
        assert_eq!(t.expand(&t.project(&full)), full);
    }

    #[test]
    fn bund_scheme_layout() {
        let t = TyingScheme::bund();
        assert_eq!(t.n_free(), 4 + 8 + 4);
        let free: Vec<f64> = (0..t.n_free()).map(|k| k as f64 + 0.5).collect();
        let th = t.expand(&free);
        let a = |m: usize, n: usize| th[4 + m * 4 + n];
        let b = |m: usize, n: usize| th[20 + m * 4 + n];
        assert_eq!(a(0, 2), a(1, 3));
        assert_eq!(a(0, 3), a(1, 2));
        assert_eq!(a(0, 0), a(1, 1));
        assert_eq!(a(2, 0), a(3, 1));
        assert_eq!(a(2, 2), a(3, 3));
        assert_ne!(a(0, 0), a(0, 1));
        assert_eq!(b(0, 2), b(1, 3));
        assert_eq!(b(0, 2), b(0, 3));
        assert_ne!(b(0, 0), b(0, 2));
        assert_ne!(b(2, 2), b(2, 0));
        let l: Vec<f64> = th[..4].to_vec();
        assert!(l.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn tying_text_parses_and_rejects_mixed_kinds() {
        let t = TyingScheme::parse(
            2,
            "# mirror\nalpha[0,0] = alpha[1,1]\n\nbeta[0,0]=beta(0,1)=beta[1,0]=beta[1,1]\n",
        )
        .unwrap();
        assert_eq!(t.n_free(), theta_len(2) - 1 - 3);
        let err = TyingScheme::parse(2, "alpha[0,0] = beta[0,0]").unwrap_err();
        assert!(matches!(err, HawkesError::Tying(_)));
        let err = TyingScheme::parse(2, "alpha[0,0] = alpha[1,1]\nalpha[1,1] = alpha[0,1]");
        assert!(err.is_err());
        let err = TyingScheme::parse(2, "\nalpha[0,0] = alfa[1,1]").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn poisson_data_puts_alpha_on_its_lower_bound() {
        let truth = Model1D::new(2.0, 0.0, 1.0, 0.0).unwrap();
        let path = &simulate_1d(truth, 2000.0, 1, 3)[0];
        let pre = PrecomputedDiffs1D::new(path, 0.0).unwrap();
        let fit = fit_1d(&pre, None, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.params.alpha, Bounds::default().alpha.0);
        assert!(fit.bound_hits.contains(&"alpha".to_string()));
        let rate = path.len() as f64 / path.last().unwrap();
        assert!(
            (fit.params.lambda0 - rate).abs() / rate < 1e-3,
            "{:?}",
            fit.params
        );
    }

    #[test]
    fn estimates_respect_bounds_and_stationarity() {
        let truth = Model1D::new(1.2, 0.6, 0.8, 0.0).unwrap();
        let path = &simulate_1d(truth, 300.0, 1, 11)[0];
        let pre = PrecomputedDiffs1D::new(path, 0.0).unwrap();
        let opts = FitOptions {
            bounds: Bounds {
                lambda0: (0.5, 1.0),
                alpha: (1e-3, 0.5),
                beta: (0.1, 10.0),
            },
            ..Default::default()
        };
        let fit = fit_1d(&pre, None, &opts).unwrap();
        let p = fit.params;
        assert!((0.5..=1.0).contains(&p.lambda0));
        assert!((1e-3..=0.5).contains(&p.alpha));
        assert!((0.1..=10.0).contains(&p.beta));
        assert!(p.alpha < p.beta);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn identity_joint_fit_matches_univariate_fit() {
        let truth = Model1D::new(1.2, 0.6, 0.8, 0.5).unwrap();
        let path = simulate_1d(truth, 1000.0, 1, 21).remove(0);
        let pre1 = PrecomputedDiffs1D::new(&path, 0.5).unwrap();
        let fit1 = fit_1d(&pre1, None, &FitOptions::default()).unwrap();
        let pre = PrecomputedDiffsMD::new(&[path], &Latency::Scalar(0.5)).unwrap();
        let joint = fit_joint_md(
            &pre,
            None,
            &TyingScheme::identity(1),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(joint.converged && fit1.converged);
        let rel = (joint.neg_ll - fit1.neg_ll).abs() / fit1.neg_ll.abs();
        assert!(rel < 1e-6, "{} vs {}", joint.neg_ll, fit1.neg_ll);
    }

    #[test]
    fn single_node_fit_matches_univariate_likelihood() {
        let truth = Model1D::new(1.0, 0.5, 1.0, 0.0).unwrap();
        let path = simulate_1d(truth, 800.0, 1, 8).remove(0);
        let pre =
            PrecomputedDiffsMD::new(std::slice::from_ref(&path), &Latency::Scalar(0.0)).unwrap();
        let node = fit_node_md(&pre, 0, None, &FitOptions::default()).unwrap();
        let fit1 = fit_1d(
            &PrecomputedDiffs1D::new(&path, 0.0).unwrap(),
            None,
            &FitOptions::default(),
        )
        .unwrap();
        // the per-node fit has no α < β constraint, so it can only do better
        assert!(node.neg_ll <= fit1.neg_ll + 1e-6 * fit1.neg_ll.abs());
        assert!(matches!(
            fit_node_md(&pre, 1, None, &FitOptions::default()),
            Err(HawkesError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn tied_parameters_are_bitwise_equal() {
        let model = ModelMD::from_row_major(
            vec![0.5, 0.5],
            &[0.3, 0.2, 0.2, 0.3],
            &[1.5, 1.5, 1.5, 1.5],
            Latency::Scalar(0.1),
        )
        .unwrap();
        let cfg = SimConfig::new(500.0, 1, 4, SimMethod::Thinning).unwrap();
        let path = simulate(&model, &cfg).unwrap().paths.remove(0);
        let pre = PrecomputedDiffsMD::new(&path, &Latency::Scalar(0.1)).unwrap();
        let tying = TyingScheme::parse(
            2,
            "alpha[0,0]=alpha[1,1]\nalpha[0,1]=alpha[1,0]\nbeta[0,0]=beta[0,1]=beta[1,0]=beta[1,1]",
        )
        .unwrap();
        let fit = fit_joint_md(&pre, None, &tying, &FitOptions::default()).unwrap();
        let m = &fit.params;
        assert_eq!(m.alpha(0, 0).to_bits(), m.alpha(1, 1).to_bits());
        assert_eq!(m.alpha(0, 1).to_bits(), m.alpha(1, 0).to_bits());
        assert_eq!(m.beta(0, 0).to_bits(), m.beta(1, 1).to_bits());
        assert!(m.stationarity().stable);
    }

    #[test]
    fn single_path_summary_equals_the_fit() {
        let truth = Model1D::new(1.2, 0.6, 0.8, 0.0).unwrap();
        let paths = simulate_1d(truth, 200.0, 1, 2);
        let multi = fit_multipath_1d(
            &paths,
            0.0,
            None,
            None,
            &FitOptions::default(),
            PoolMode::PerPath,
        )
        .unwrap();
        let f = &multi.fits[0];
        let values = [f.params.lambda0, f.params.alpha, f.params.beta];
        for (s, v) in multi.summary.iter().zip(values) {
            assert_eq!(s.mean, v);
            assert_eq!(s.median, v);
            assert_eq!(s.sd, 0.0);
        }
    }

    #[test]
    fn seeded_fits_are_identical() {
        let truth = Model1D::new(1.2, 0.6, 0.8, 0.0).unwrap();
        let paths = simulate_1d(truth, 200.0, 3, 9);
        let opts = FitOptions {
            method: Method::GlobalThenLocal,
            ..Default::default()
        };
        let run = || {
            let m = fit_multipath_1d(&paths, 0.0, None, None, &opts, PoolMode::PerPath).unwrap();
            m.fits
                .into_iter()
                .map(|f| (f.params, f.neg_ll, f.n_evals, f.trace))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pooled_fit_uses_all_paths() {
        let truth = Model1D::new(1.2, 0.6, 0.8, 0.0).unwrap();
        let paths = simulate_1d(truth, 300.0, 4, 6);
        let opts = FitOptions::default();
        let pooled = fit_multipath_1d(&paths, 0.0, None, None, &opts, PoolMode::Pooled).unwrap();
        assert_eq!(pooled.fits.len(), 1);
        let p = pooled.fits[0].params;
        let total: f64 = paths
            .iter()
            .map(|path| {
                let pre = PrecomputedDiffs1D::new(path, 0.0).unwrap();
                negll_1d(&Params1D::from(&p), &pre).unwrap()
            })
            .sum();
        assert!((total - pooled.fits[0].neg_ll).abs() < 1e-9 * total.abs());
    }
}
