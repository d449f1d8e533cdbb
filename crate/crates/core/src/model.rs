//! Domain types and closed-form quantities of the latency-shifted exponential
//! Hawkes model.
//!
//! The intensity of node `m` is
//!
//! ```text
//! λᵐ(t) = λ₀ᵐ + Σₙ Σ_{tₖⁿ < t − τᵐⁿ} αᵐⁿ · exp(−βᵐⁿ · (t − τᵐⁿ − tₖⁿ))
//! ```
//!
//! so an event only starts to excite once `τ` seconds have elapsed, and the
//! excitation it adds is a plain exponential kernel from then on. `τ = 0`
//! gives back the classic exponential Hawkes process.

use nalgebra::DMatrix;

use crate::error::{HawkesError, Result};

/// Strictly increasing, non-negative event timestamps of one event type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSeries {
    times: Vec<f64>,
    origin_label: Option<String>,
}

impl EventSeries {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(HawkesError::InvalidEvents(format!(
                    "timestamp {t} at index {i} must be finite and >= 0"
                )));
            }
            if i > 0 && times[i - 1] >= t {
                return Err(HawkesError::InvalidEvents(format!(
                    "timestamps must be strictly increasing: {} then {} at index {i}",
                    times[i - 1],
                    t
                )));
            }
        }
        Ok(Self {
            times,
            origin_label: None,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.origin_label = Some(label.into());
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn origin_label(&self) -> Option<&str> {
        self.origin_label.as_deref()
    }

    pub fn into_times(self) -> Vec<f64> {
        self.times
    }
}

/// A single exponential kernel shifted right by the latency `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpKernel {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl ExpKernel {
    /// `α·exp(−β(t−τ))` for `t ≥ τ`, zero before.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        if t < self.tau {
            0.0
        } else {
            self.alpha * (-self.beta * (t - self.tau)).exp()
        }
    }

    /// Total mass `α/β`; the shift does not change it.
    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(HawkesError::InvalidParameter(format!(
            "{name} must be finite and >= 0, got {v}"
        )));
    }
    Ok(())
}

fn check_decay(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(HawkesError::InvalidParameter(format!(
            "{name} must be finite and > 0, got {v}"
        )));
    }
    Ok(())
}

/// Univariate model `(λ₀, α, β, τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model1D {
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Model1D {
    pub fn new(lambda0: f64, alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        check_rate("lambda0", lambda0)?;
        check_rate("alpha", alpha)?;
        check_decay("beta", beta)?;
        check_rate("tau", tau)?;
        Ok(Self {
            lambda0,
            alpha,
            beta,
            tau,
        })
    }

    pub fn kernel(&self) -> ExpKernel {
        ExpKernel {
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
        }
    }

    pub fn stationarity(&self) -> Stationarity {
        let rho = self.alpha / self.beta;
        Stationarity {
            stable: rho < 1.0,
            spectral_radius: rho,
        }
    }
}

/// Latency of a multivariate model: one value for every kernel, or one per
/// `(target, source)` pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Latency {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl Latency {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        match self {
            Latency::Scalar(t) => *t,
            Latency::Matrix(mat) => mat[(m, n)],
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Latency::Scalar(_))
    }
}

/// M-dimensional model. Row `m` of `alpha`/`beta`/`tau` is the target node,
/// column `n` the source node.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMD {
    lambda0: Vec<f64>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    tau: Latency,
}

impl ModelMD {
    pub fn new(
        lambda0: Vec<f64>,
        alpha: DMatrix<f64>,
        beta: DMatrix<f64>,
        tau: Latency,
    ) -> Result<Self> {
        let dim = lambda0.len();
        if dim == 0 {
            return Err(HawkesError::InvalidParameter(
                "dimension must be positive".into(),
            ));
        }
        let square = |m: &DMatrix<f64>| m.nrows() == dim && m.ncols() == dim;
        if !square(&alpha) || !square(&beta) {
            return Err(HawkesError::InvalidParameter(format!(
                "alpha and beta must be {dim}x{dim}"
            )));
        }
        for (m, &l) in lambda0.iter().enumerate() {
            check_rate(&format!("lambda0[{m}]"), l)?;
        }
        for m in 0..dim {
            for n in 0..dim {
                check_rate(&format!("alpha[{m},{n}]"), alpha[(m, n)])?;
                check_decay(&format!("beta[{m},{n}]"), beta[(m, n)])?;
            }
        }
        match &tau {
            Latency::Scalar(t) => check_rate("tau", *t)?,
            Latency::Matrix(mat) => {
                if !square(mat) {
                    return Err(HawkesError::InvalidParameter(format!(
                        "tau matrix must be {dim}x{dim}"
                    )));
                }
                for v in mat.iter() {
                    check_rate("tau", *v)?;
                }
            }
        }
        Ok(Self {
            lambda0,
            alpha,
            beta,
            tau,
        })
    }

    /// Builds a model from row-major `alpha`/`beta` slices.
    pub fn from_row_major(
        lambda0: Vec<f64>,
        alpha: &[f64],
        beta: &[f64],
        tau: Latency,
    ) -> Result<Self> {
        let dim = lambda0.len();
        if alpha.len() != dim * dim || beta.len() != dim * dim {
            return Err(HawkesError::InvalidParameter(format!(
                "expected {} alpha and beta entries for dimension {dim}",
                dim * dim
            )));
        }
        Self::new(
            lambda0,
            DMatrix::from_row_slice(dim, dim, alpha),
            DMatrix::from_row_slice(dim, dim, beta),
            tau,
        )
    }

    /// Rebuilds a model from the flat parameter vector
    /// `[λ₀ (M), α (M², row-major), β (M², row-major)]`.
    pub fn from_theta(dim: usize, theta: &[f64], tau: Latency) -> Result<Self> {
        if theta.len() != theta_len(dim) {
            return Err(HawkesError::InvalidParameter(format!(
                "parameter vector has {} entries, expected {}",
                theta.len(),
                theta_len(dim)
            )));
        }
        let (l0, rest) = theta.split_at(dim);
        let (a, b) = rest.split_at(dim * dim);
        Self::from_row_major(l0.to_vec(), a, b, tau)
    }

    pub fn theta(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(theta_len(dim));
        out.extend_from_slice(&self.lambda0);
        for m in 0..dim {
            for n in 0..dim {
                out.push(self.alpha[(m, n)]);
            }
        }
        for m in 0..dim {
            for n in 0..dim {
                out.push(self.beta[(m, n)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.lambda0.len()
    }

    pub fn lambda0(&self) -> &[f64] {
        &self.lambda0
    }

    pub fn alpha(&self, m: usize, n: usize) -> f64 {
        self.alpha[(m, n)]
    }

    pub fn beta(&self, m: usize, n: usize) -> f64 {
        self.beta[(m, n)]
    }

    pub fn tau(&self, m: usize, n: usize) -> f64 {
        self.tau.get(m, n)
    }

    pub fn latency(&self) -> &Latency {
        &self.tau
    }

    pub fn kernel(&self, m: usize, n: usize) -> ExpKernel {
        ExpKernel {
            alpha: self.alpha[(m, n)],
            beta: self.beta[(m, n)],
            tau: self.tau.get(m, n),
        }
    }

    /// Γ with `Γ[m][n] = αᵐⁿ/βᵐⁿ`.
    pub fn branching_matrix(&self) -> DMatrix<f64> {
        self.alpha.component_div(&self.beta)
    }

    pub fn stationarity(&self) -> Stationarity {
        let rho = spectral_radius(&self.branching_matrix());
        Stationarity {
            stable: rho < 1.0,
            spectral_radius: rho,
        }
    }

    /// The univariate view of a one-node model.
    pub fn as_1d(&self) -> Option<Model1D> {
        (self.dim() == 1).then(|| Model1D {
            lambda0: self.lambda0[0],
            alpha: self.alpha[(0, 0)],
            beta: self.beta[(0, 0)],
            tau: self.tau.get(0, 0),
        })
    }
}

impl From<Model1D> for ModelMD {
    fn from(m: Model1D) -> Self {
        ModelMD {
            lambda0: vec![m.lambda0],
            alpha: DMatrix::from_element(1, 1, m.alpha),
            beta: DMatrix::from_element(1, 1, m.beta),
            tau: Latency::Scalar(m.tau),
        }
    }
}

/// Length of the flat parameter vector for dimension `dim`.
pub fn theta_len(dim: usize) -> usize {
    dim + 2 * dim * dim
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    pub stable: bool,
    pub spectral_radius: f64,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)].abs(),
        _ => m
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}

pub fn kernel_value(model: &Model1D, t: f64) -> f64 {
    model.kernel().value(t)
}

/// Sum of `kernel(t − tₖ)` over the events with `tₖ < t − τ`.
fn excitation(kernel: ExpKernel, times: &[f64], t: f64) -> f64 {
    let cutoff = t - kernel.tau;
    let end = times.partition_point(|&tk| tk < cutoff);
    times[..end]
        .iter()
        .map(|&tk| kernel.alpha * (-kernel.beta * (cutoff - tk)).exp())
        .sum()
}

/// Conditional intensity `λ(t)` of a univariate model given its history.
pub fn intensity_at(model: &Model1D, events: &EventSeries, t: f64) -> f64 {
    model.lambda0 + excitation(model.kernel(), events.times(), t)
}

/// Conditional intensity of node `m` (0-based).
pub fn intensity_at_md(model: &ModelMD, events: &[EventSeries], m: usize, t: f64) -> Result<f64> {
    let dim = model.dim();
    if m >= dim {
        return Err(HawkesError::NodeOutOfRange { index: m, dim });
    }
    if events.len() != dim {
        return Err(HawkesError::InvalidEvents(format!(
            "expected {dim} event series, got {}",
            events.len()
        )));
    }
    let sum: f64 = events
        .iter()
        .enumerate()
        .map(|(n, s)| excitation(model.kernel(m, n), s.times(), t))
        .sum();
    Ok(model.lambda0[m] + sum)
}

/// Unconditional expected intensity `λ₀ / (1 − α/β)`.
pub fn expected_intensity(model: &Model1D) -> Result<f64> {
    let st = model.stationarity();
    if !st.stable {
        return Err(HawkesError::NonStationary {
            spectral_radius: st.spectral_radius,
        });
    }
    Ok(model.lambda0 / (1.0 - st.spectral_radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveUnits {
    Seconds,
    /// Abscissa divided by the kernel latency.
    Latency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCurve {
    pub abscissa: Vec<f64>,
    pub ordinate: Vec<f64>,
    /// `(target, source)`.
    pub pair: (usize, usize),
    pub units: CurveUnits,
}

/// Samples kernel `(m, n)` on a uniform grid over `[0, horizon]`.
pub fn kernel_curve(
    model: &ModelMD,
    pair: (usize, usize),
    n_points: usize,
    horizon: f64,
    units: CurveUnits,
) -> Result<KernelCurve> {
    let dim = model.dim();
    let (m, n) = pair;
    if m >= dim || n >= dim {
        return Err(HawkesError::NodeOutOfRange {
            index: m.max(n),
            dim,
        });
    }
    let kernel = model.kernel(m, n);
    if n_points < 2 {
        return Err(HawkesError::InvalidParameter(
            "a kernel curve needs at least 2 points".into(),
        ));
    }
    if !(horizon.is_finite() && horizon > kernel.tau) {
        return Err(HawkesError::InvalidParameter(format!(
            "horizon {horizon} must exceed the latency {}",
            kernel.tau
        )));
    }
    if units == CurveUnits::Latency && kernel.tau <= 0.0 {
        return Err(HawkesError::InvalidParameter(
            "latency units need a positive latency".into(),
        ));
    }
    let step = horizon / (n_points - 1) as f64;
    let grid: Vec<f64> = (0..n_points)
        .map(|i| {
            if i + 1 == n_points {
                horizon
            } else {
                i as f64 * step
            }
        })
        .collect();
    let ordinate = grid.iter().map(|&t| kernel.value(t)).collect();
    let abscissa = match units {
        CurveUnits::Seconds => grid,
        CurveUnits::Latency => grid.iter().map(|&t| t / kernel.tau).collect(),
    };
    Ok(KernelCurve {
        abscissa,
        ordinate,
        pair,
        units,
    })
}
