//! Box-constrained derivative-free minimizers.
//!
//! All methods work on a closed box `[lower, upper]`; candidate points are
//! projected onto it, so the returned point is always feasible. Non-finite
//! objective values are treated as `+∞`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HawkesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Nelder–Mead simplex.
    Simplex,
    /// Powell's conjugate directions with bounded Brent line searches.
    Powell,
    /// Differential evolution followed by a Powell polish.
    GlobalThenLocal,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Simplex => "simplex",
            Method::Powell => "powell",
            Method::GlobalThenLocal => "global",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HawkesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" | "nelder-mead" => Ok(Method::Simplex),
            "powell" => Ok(Method::Powell),
            "global" | "global_then_local" | "de" => Ok(Method::GlobalThenLocal),
            other => Err(HawkesError::InvalidParameter(format!(
                "unknown optimizer '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_evals: usize,
    /// Relative change of the objective between iterations.
    pub ftol: f64,
    /// Change of the (transformed) parameters between iterations.
    pub xtol: f64,
    /// Seed of the population search.
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_evals: 100_000,
            ftol: 1e-8,
            xtol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Best objective value after every iteration.
    pub trace: Vec<f64>,
}

struct Objective<'a> {
    f: &'a mut dyn FnMut(&[f64]) -> f64,
    evals: usize,
    max_evals: usize,
}

impl Objective<'_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

fn check_box(lower: &[f64], upper: &[f64], x0: &[f64]) -> Result<()> {
    if lower.len() != x0.len() || upper.len() != x0.len() || x0.is_empty() {
        return Err(HawkesError::InvalidParameter(
            "bounds and start point must have the same non-zero length".into(),
        ));
    }
    for (k, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(HawkesError::InvalidParameter(format!(
                "bad bounds [{lo}, {hi}] for coordinate {k}"
            )));
        }
    }
    Ok(())
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0` (projected
/// onto the box first).
pub fn minimize_box<F>(
    mut f: F,
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    method: Method,
    opts: &OptimOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    check_box(lower, upper, x0)?;
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut obj = Objective {
        f: &mut f,
        evals: 0,
        max_evals: opts.max_evals.max(1),
    };
    let fx = obj.eval(&x);
    if !fx.is_finite() {
        return Err(HawkesError::NonFiniteInit);
    }
    let (x, fx, converged, trace) = match method {
        Method::Powell => powell(&mut obj, lower, upper, x, fx, opts),
        Method::Simplex => {
            // projected simplices can collapse onto a face; restart until stable
            let (mut x, mut fx, mut conv, mut trace) =
                nelder_mead(&mut obj, lower, upper, x, fx, opts);
            for _ in 0..10 {
                if !conv || obj.exhausted() {
                    break;
                }
                let (x2, f2, c2, t2) = nelder_mead(&mut obj, lower, upper, x.clone(), fx, opts);
                let improved = !small_change(fx, f2, opts.ftol) && f2 < fx;
                trace.extend(t2.into_iter().map(|v| v.min(fx)));
                if f2 <= fx {
                    x = x2;
                    fx = f2;
                }
                conv = c2;
                if !improved {
                    break;
                }
            }
            (x, fx, conv, trace)
        }
        Method::GlobalThenLocal => {
            let (xg, fg, mut trace) = differential_evolution(&mut obj, lower, upper, x, fx, opts);
            let (xp, fp, conv, tp) = powell(&mut obj, lower, upper, xg, fg, opts);
            trace.extend(tp);
            (xp, fp, conv, trace)
        }
    };
    Ok(OptimResult {
        x,
        fx,
        n_evals: obj.evals,
        converged,
        trace,
    })
}

/// Minimizes `f` over positive box bounds, searching in `ln x`.
pub fn minimize_positive<F>(
    mut f: F,
    bounds: &[(f64, f64)],
    x0: &[f64],
    method: Method,
    opts: &OptimOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if bounds.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo)) {
        return Err(HawkesError::InvalidParameter(
            "log-space search needs 0 < lower <= upper".into(),
        ));
    }
    if x0.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(HawkesError::InvalidParameter(
            "log-space search needs a positive start point".into(),
        ));
    }
    let lower: Vec<f64> = bounds.iter().map(|b| b.0.ln()).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| b.1.ln()).collect();
    let z0: Vec<f64> = x0.iter().map(|v| v.ln()).collect();
    let decode = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .zip(bounds)
            .map(|(v, &(lo, hi))| v.exp().clamp(lo, hi))
            .collect()
    };
    let mut res = minimize_box(|z| f(&decode(z)), &lower, &upper, &z0, method, opts)?;
    res.x = decode(&res.x);
    Ok(res)
}

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

/// Minimizes `f(x + t·d)` over the feasible range of `t`, updating `x`/`fx`
/// in place when a better point is found.
fn line_search(
    obj: &mut Objective<'_>,
    x: &mut Vec<f64>,
    fx: &mut f64,
    d: &[f64],
    lower: &[f64],
    upper: &[f64],
) {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for k in 0..x.len() {
        if d[k] != 0.0 {
            let a = (lower[k] - x[k]) / d[k];
            let b = (upper[k] - x[k]) / d[k];
            tmin = tmin.max(a.min(b));
            tmax = tmax.min(a.max(b));
        }
    }
    if tmax <= tmin || !tmin.is_finite() || !tmax.is_finite() {
        return;
    }
    let tmin = tmin.min(0.0);
    let tmax = tmax.max(0.0);
    let base = x.clone();
    let point = |t: f64| -> Vec<f64> {
        let mut p: Vec<f64> = base.iter().zip(d).map(|(b, dk)| b + t * dk).collect();
        project(&mut p, lower, upper);
        p
    };
    let mut phi = |t: f64| obj.eval(&point(t));

    let f0 = *fx;
    let clampt = |t: f64| t.clamp(tmin, tmax);

    let mut best = (0.0, f0);
    let mut downhill = None;
    let mut uphill = Vec::new();
    for probe in [1.0, -1.0] {
        let t = clampt(probe);
        if t == 0.0 {
            continue;
        }
        let ft = phi(t);
        if ft < f0 {
            downhill = Some((t, ft));
            break;
        }
        uphill.push(t);
    }

    match downhill {
        Some(mut b) => {
            // expand until the function turns up or the box ends
            let mut a = (0.0, f0);
            for _ in 0..200 {
                let c_t = clampt(b.0 + GOLD * (b.0 - a.0));
                if c_t == b.0 {
                    break;
                }
                let fc = phi(c_t);
                if fc >= b.1 {
                    let (lo, hi) = if a.0 < c_t { (a.0, c_t) } else { (c_t, a.0) };
                    let r = brent(&mut phi, lo, hi, b.0, b.1);
                    if r.1 < b.1 {
                        b = r;
                    }
                    break;
                }
                a = b;
                b = (c_t, fc);
            }
            best = b;
        }
        None if uphill.len() == 2 => {
            best = brent(&mut phi, uphill[1], uphill[0], 0.0, f0);
        }
        None => {}
    }

    if best.1 < f0 {
        *x = point(best.0);
        *fx = best.1;
    }
}

/// Brent minimization on `[lo, hi]` starting from the interior point `x`.
fn brent<F: FnMut(f64) -> f64>(phi: &mut F, lo: f64, hi: f64, x: f64, fx: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let (mut x, mut w, mut v) = (x, x, x);
    let (mut fxv, mut fw, mut fv) = (fx, fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..100 {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-7 * x.abs() + 1e-9;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fxv - fv);
            let mut q = (x - v) * (fxv - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = phi(u);
        if fu <= fxv {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fxv;
            x = u;
            fxv = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fxv)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn small_change(f_old: f64, f_new: f64, ftol: f64) -> bool {
    2.0 * (f_old - f_new).abs() <= ftol * (f_old.abs() + f_new.abs()) + 1e-300
}

fn powell(
    obj: &mut Objective<'_>,
    lower: &[f64],
    upper: &[f64],
    mut x: Vec<f64>,
    mut fx: f64,
    opts: &OptimOptions,
) -> (Vec<f64>, f64, bool, Vec<f64>) {
    let n = x.len();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut trace = Vec::new();
    let mut stalls = 0;
    let mut converged = false;

    while !obj.exhausted() {
        let x_start = x.clone();
        let f_start = fx;
        let mut biggest = 0.0;
        let mut biggest_idx = 0;
        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            line_search(obj, &mut x, &mut fx, d, lower, upper);
            if before - fx > biggest {
                biggest = before - fx;
                biggest_idx = i;
            }
            if obj.exhausted() {
                break;
            }
        }
        trace.push(fx);

        if small_change(f_start, fx, opts.ftol) {
            if max_abs_diff(&x, &x_start) <= opts.xtol {
                converged = true;
                break;
            }
            // objective is flat along the moves: accept after a few rounds
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
        if obj.exhausted() {
            break;
        }

        let d: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut xe: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        project(&mut xe, lower, upper);
        let fe = obj.eval(&xe);
        if fe < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - biggest).powi(2)
                - biggest * (f_start - fe).powi(2);
            if t < 0.0 {
                line_search(obj, &mut x, &mut fx, &d, lower, upper);
                dirs[biggest_idx] = dirs[n - 1].clone();
                dirs[n - 1] = d;
            }
        }
    }
    (x, fx, converged, trace)
}

fn nelder_mead(
    obj: &mut Objective<'_>,
    lower: &[f64],
    upper: &[f64],
    x0: Vec<f64>,
    f0: f64,
    opts: &OptimOptions,
) -> (Vec<f64>, f64, bool, Vec<f64>) {
    let n = x0.len();
    let mut simplex = vec![(x0.clone(), f0)];
    for k in 0..n {
        let span = upper[k] - lower[k];
        let step = (0.1 * span).clamp(1e-6, 1.0).min(span.max(1e-12));
        let mut p = x0.clone();
        p[k] = if p[k] + step <= upper[k] {
            p[k] + step
        } else {
            p[k] - step
        };
        project(&mut p, lower, upper);
        let fp = obj.eval(&p);
        simplex.push((p, fp));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));

    while !obj.exhausted() {
        order(&mut simplex);
        trace.push(simplex[0].1);
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| max_abs_diff(p, &simplex[0].0))
            .fold(0.0, f64::max);
        if spread <= opts.ftol * simplex[0].1.abs() + 1e-300 && size <= opts.xtol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            project(&mut p, lower, upper);
            p
        };

        let xr = along(1.0);
        let fr = obj.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = obj.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let p = along(0.5);
            let fp = obj.eval(&p);
            (p, fp)
        } else {
            let p = along(-0.5);
            let fp = obj.eval(&p);
            (p, fp)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for (p, fp) in simplex.iter_mut().skip(1) {
            for (v, b) in p.iter_mut().zip(&best) {
                *v = b + 0.5 * (*v - b);
            }
            *fp = obj.eval(p);
        }
    }
    order(&mut simplex);
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, converged, trace)
}

/// `best/1/bin` differential evolution with dithered mutation; uses at most
/// half of the evaluation budget and keeps `x0` in the initial population.
fn differential_evolution(
    obj: &mut Objective<'_>,
    lower: &[f64],
    upper: &[f64],
    x0: Vec<f64>,
    f0: f64,
    opts: &OptimOptions,
) -> (Vec<f64>, f64, Vec<f64>) {
    let n = x0.len();
    let np = (10 * n).max(20);
    let budget = opts.max_evals / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut pop = vec![(x0, f0)];
    while pop.len() < np {
        let p: Vec<f64> = (0..n)
            .map(|k| lower[k] + rng.random::<f64>() * (upper[k] - lower[k]))
            .collect();
        let fp = obj.eval(&p);
        pop.push((p, fp));
    }
    let mut best = (0..np)
        .min_by(|&a, &b| pop[a].1.total_cmp(&pop[b].1))
        .unwrap();
    let mut trace = vec![pop[best].1];

    while obj.evals + np <= budget {
        let scale = 0.5 + 0.5 * rng.random::<f64>();
        for i in 0..np {
            let (r1, r2) = loop {
                let r1 = rng.random_range(0..np);
                let r2 = rng.random_range(0..np);
                if r1 != r2 && r1 != i && r2 != i {
                    break (r1, r2);
                }
            };
            let forced = rng.random_range(0..n);
            let mut trial = pop[i].0.clone();
            for (k, v) in trial.iter_mut().enumerate() {
                if k == forced || rng.random::<f64>() < 0.7 {
                    *v = pop[best].0[k] + scale * (pop[r1].0[k] - pop[r2].0[k]);
                }
            }
            project(&mut trial, lower, upper);
            let ft = obj.eval(&trial);
            if ft <= pop[i].1 {
                pop[i] = (trial, ft);
                if ft < pop[best].1 {
                    best = i;
                }
            }
        }
        trace.push(pop[best].1);

        let finite: Vec<f64> = pop.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
        if finite.len() == np {
            let mean = finite.iter().sum::<f64>() / np as f64;
            let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / np as f64;
            if var.sqrt() <= 1e-2 * mean.abs() {
                break;
            }
        }
    }
    let (x, fx) = pop.swap_remove(best);
    (x, fx, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn quadratic_bowl_in_log_space() {
        for method in [Method::Powell, Method::Simplex, Method::GlobalThenLocal] {
            let r = minimize_positive(
                |x| (x[0] - 3.0).powi(2),
                &[(1e-10, 10.0)],
                &[0.5],
                method,
                &OptimOptions::default(),
            )
            .unwrap();
            assert!((r.x[0] - 3.0).abs() < 1e-6, "{method:?}: {:?}", r.x);
            assert!(r.converged);
        }
    }

    #[test]
    fn rosenbrock_in_bounds() {
        for method in [Method::Powell, Method::Simplex, Method::GlobalThenLocal] {
            let r = minimize_positive(
                rosenbrock,
                &[(1e-10, 5.0), (1e-10, 5.0)],
                &[0.3, 2.5],
                method,
                &OptimOptions::default(),
            )
            .unwrap();
            assert!((r.x[0] - 1.0).abs() < 1e-4, "{method:?}: {:?}", r.x);
            assert!((r.x[1] - 1.0).abs() < 1e-4, "{method:?}: {:?}", r.x);
        }
    }

    #[test]
    fn minimum_on_the_boundary_is_reached_exactly() {
        for method in [Method::Powell, Method::Simplex] {
            let r = minimize_box(
                |x| x[0] + (x[1] - 0.5).powi(2),
                &[-2.0, -1.0],
                &[3.0, 1.0],
                &[1.0, 0.0],
                method,
                &OptimOptions::default(),
            )
            .unwrap();
            assert!((r.x[0] + 2.0).abs() < 1e-6, "{method:?}: {:?}", r.x);
            assert!((r.x[1] - 0.5).abs() < 1e-4, "{method:?}: {:?}", r.x);
        }
    }

    #[test]
    fn trace_is_monotone_and_points_feasible() {
        for method in [Method::Powell, Method::Simplex, Method::GlobalThenLocal] {
            let lower = [-1.0, -1.0, -1.0];
            let upper = [2.0, 2.0, 2.0];
            let mut outside = false;
            let r = minimize_box(
                |x| {
                    outside |= x
                        .iter()
                        .zip(&lower)
                        .zip(&upper)
                        .any(|((v, l), u)| v < l || v > u);
                    (x[0] - 1.5).powi(2) + (x[1] + 3.0).powi(2) + (x[0] * x[2] - 0.2).powi(2)
                },
                &lower,
                &upper,
                &[0.0, 0.0, 0.0],
                method,
                &OptimOptions::default(),
            )
            .unwrap();
            assert!(!outside);
            assert!(r.trace.windows(2).all(|w| w[1] <= w[0]), "{method:?}");
            assert!((r.x[1] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let opts = OptimOptions {
            max_evals: 30,
            ..Default::default()
        };
        let r = minimize_positive(
            rosenbrock,
            &[(1e-3, 5.0); 2],
            &[3.0, 0.1],
            Method::Powell,
            &opts,
        )
        .unwrap();
        assert!(!r.converged);
        assert!(r.fx < rosenbrock(&[3.0, 0.1]));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = minimize_box(
            |_| f64::INFINITY,
            &[0.0],
            &[1.0],
            &[0.5],
            Method::Powell,
            &OptimOptions::default(),
        );
        assert_eq!(r, Err(HawkesError::NonFiniteInit));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let run = || {
            minimize_box(
                |x| (x[0] - 0.3).powi(2) + (x[1] * 3.0).sin().powi(2) + 0.1 * x[1].abs(),
                &[-3.0, -3.0],
                &[3.0, 3.0],
                &[2.0, 2.5],
                Method::GlobalThenLocal,
                &OptimOptions {
                    seed: 5,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
