//! Total-variation regularized reconstruction.
//!
//! Solves `min_x ½‖b − A·x‖² + λ·TV(x)` over `x ∈ [0, 1]ⁿ` where the rows of
//! `A` are the patterns scaled to unit norm and `b` the measurements scaled
//! alike. Outer loop: monotone FISTA; when the accelerated point does not
//! lower the objective the plain proximal step from the current iterate is
//! tried instead and momentum restarts. The TV proximal map is the fast
//! gradient projection on the dual, warm-started across outer iterations.

use ndarray::{Array1, Array2, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::sensing::{MeasurementDomain, MeasurementVector, PatternBank};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvKind {
    #[default]
    Anisotropic,
    Isotropic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1/L` with `L` from power iteration.
    #[default]
    Fixed,
    Backtracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub tv_kind: TvKind,
    pub step_rule: StepRule,
    /// Dual iterations per proximal evaluation.
    pub prox_iters: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            max_iters: 300,
            tol: 1e-6,
            tv_kind: TvKind::Anisotropic,
            step_rule: StepRule::Fixed,
            prox_iters: 30,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("tv.lambda must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 || self.prox_iters == 0 {
            return Err(Error::Config("tv.tol, tv.max_iters and tv.prox_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedImage {
    /// Clipped to `[0, 1]`.
    pub pixels: Array2<f64>,
    pub objective_trace: Vec<f64>,
    pub iters_used: usize,
    pub converged: bool,
}

/// Forward differences with a zero last row (`dx`) / last column (`dy`).
fn gradient(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (m, n) = x.dim();
    let mut dx = Array2::zeros((m, n));
    let mut dy = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            if i + 1 < m {
                dx[[i, j]] = x[[i, j]] - x[[i + 1, j]];
            }
            if j + 1 < n {
                dy[[i, j]] = x[[i, j]] - x[[i, j + 1]];
            }
        }
    }
    (dx, dy)
}

/// Adjoint of [`gradient`].
fn gradient_adjoint(p: &Array2<f64>, q: &Array2<f64>) -> Array2<f64> {
    let (m, n) = p.dim();
    Array2::from_shape_fn((m, n), |(i, j)| {
        let mut v = 0.0;
        if i + 1 < m {
            v += p[[i, j]];
        }
        if i > 0 {
            v -= p[[i - 1, j]];
        }
        if j + 1 < n {
            v += q[[i, j]];
        }
        if j > 0 {
            v -= q[[i, j - 1]];
        }
        v
    })
}

pub fn total_variation(x: &Array2<f64>, kind: TvKind) -> f64 {
    let (dx, dy) = gradient(x);
    match kind {
        TvKind::Anisotropic => dx.iter().chain(dy.iter()).map(|v| v.abs()).sum(),
        TvKind::Isotropic => dx.iter().zip(dy.iter()).map(|(a, b)| a.hypot(*b)).sum(),
    }
}

fn project_dual(p: &mut Array2<f64>, q: &mut Array2<f64>, kind: TvKind) {
    let (m, n) = p.dim();
    match kind {
        TvKind::Anisotropic => {
            p.mapv_inplace(|v| v.clamp(-1.0, 1.0));
            q.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        }
        TvKind::Isotropic => Zip::from(&mut *p).and(&mut *q).for_each(|a, b| {
            let r = a.hypot(*b).max(1.0);
            *a /= r;
            *b /= r;
        }),
    }
    p.row_mut(m - 1).fill(0.0);
    q.column_mut(n - 1).fill(0.0);
}

/// Dual state of the TV proximal map, reused between calls.
#[derive(Clone, Debug)]
struct Dual {
    p: Array2<f64>,
    q: Array2<f64>,
}

/// `argmin_{x∈[0,1]} ½‖x − v‖² + μ·TV(x)` by accelerated dual projection.
fn prox_tv(v: &Array2<f64>, mu: f64, kind: TvKind, iters: usize, dual: &mut Dual) -> Array2<f64> {
    let primal = |p: &Array2<f64>, q: &Array2<f64>| (v - &(gradient_adjoint(p, q) * mu)).mapv(|x| x.clamp(0.0, 1.0));
    if mu <= 0.0 {
        return v.mapv(|x| x.clamp(0.0, 1.0));
    }
    let (mut r, mut s) = (dual.p.clone(), dual.q.clone());
    let mut t = 1.0f64;
    let step = 1.0 / (8.0 * mu);
    for _ in 0..iters {
        let x = primal(&r, &s);
        let (gx, gy) = gradient(&x);
        let mut p_new = &r + &(gx * step);
        let mut q_new = &s + &(gy * step);
        project_dual(&mut p_new, &mut q_new, kind);
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let w = (t - 1.0) / t_new;
        r = &p_new + &((&p_new - &dual.p) * w);
        s = &q_new + &((&q_new - &dual.q) * w);
        dual.p = p_new;
        dual.q = q_new;
        t = t_new;
    }
    primal(&dual.p, &dual.q)
}

/// Normalized system for one pattern bank; reusable across measurements.
#[derive(Clone, Debug)]
pub struct TvProblem {
    dims: (usize, usize),
    /// Unit-norm rows, `N × HW`.
    a: Array2<f64>,
    row_norms: Vec<f64>,
    /// Largest eigenvalue of `AᵀA`.
    lipschitz: f64,
}

impl TvProblem {
    pub fn new(bank: &PatternBank) -> Result<Self> {
        let mut a = bank.to_matrix();
        let mut row_norms = Vec::with_capacity(a.nrows());
        for mut row in a.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
            row_norms.push(n);
        }
        let lipschitz = max_eigenvalue(&a);
        Ok(Self { dims: bank.dims(), a, row_norms, lipschitz })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Measurements scaled like the rows of `A`.
    pub fn rhs(&self, m: &MeasurementVector) -> Result<Array1<f64>> {
        if m.len() != self.row_norms.len() {
            return Err(Error::Shape(format!("{} measurements for a bank of {}", m.len(), self.row_norms.len())));
        }
        if m.domain != MeasurementDomain::Raw {
            return Err(Error::Domain("reconstruction needs raw measurements".into()));
        }
        Ok(m.values.iter().zip(&self.row_norms).map(|(v, n)| if *n > 0.0 { v / n } else { 0.0 }).collect())
    }

    fn residual(&self, x: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
        let xv = x.as_slice().map(ArrayView1::from).expect("standard layout");
        self.a.dot(&xv) - b
    }

    /// `½‖A·x − b‖²`.
    pub fn data_term(&self, x: &Array2<f64>, b: &Array1<f64>) -> f64 {
        let r = self.residual(x, b);
        0.5 * r.dot(&r)
    }

    /// `Aᵀ(A·x − b)` as an image.
    pub fn data_gradient(&self, x: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
        let r = self.residual(x, b);
        self.a.t().dot(&r).into_shape_with_order(self.dims).expect("dims")
    }

    pub fn objective(&self, x: &Array2<f64>, b: &Array1<f64>, lambda: f64, kind: TvKind) -> f64 {
        self.data_term(x, b) + lambda * total_variation(x, kind)
    }

    pub fn solve(&self, m: &MeasurementVector, cfg: &TvConfig) -> Result<ReconstructedImage> {
        cfg.validate()?;
        let b = self.rhs(m)?;
        let objective = |x: &Array2<f64>| self.objective(x, &b, cfg.lambda, cfg.tv_kind);
        let zero_dual = || Dual { p: Array2::zeros(self.dims), q: Array2::zeros(self.dims) };
        let mut lip = match cfg.step_rule {
            StepRule::Fixed => self.lipschitz.max(f64::MIN_POSITIVE),
            StepRule::Backtracking => (self.lipschitz * 0.25).max(1e-12),
        };
        let back_projection = self.a.t().dot(&b) / lip.max(1e-12);
        let mut x = back_projection.into_shape_with_order(self.dims).expect("dims").mapv(|v| v.clamp(0.0, 1.0));
        let mut fx = objective(&x);
        let mut trace = vec![fx];
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut dual = zero_dual();
        let mut converged = false;
        let mut retried = false;
        let mut iters = 0;
        // one proximal-gradient step from `from`, adapting `lip` when backtracking
        let prox_step = |from: &Array2<f64>, lip: &mut f64, dual: &mut Dual| -> (Array2<f64>, f64) {
            let g = self.data_gradient(from, &b);
            let f_from = self.data_term(from, &b);
            loop {
                let v = from - &(&g / *lip);
                let z = prox_tv(&v, cfg.lambda / *lip, cfg.tv_kind, cfg.prox_iters, dual);
                let fz = objective(&z);
                if cfg.step_rule == StepRule::Fixed {
                    return (z, fz);
                }
                let d = &z - from;
                let model = f_from + (&g * &d).sum() + 0.5 * *lip * d.mapv(|v| v * v).sum();
                if self.data_term(&z, &b) <= model * (1.0 + 1e-12) + 1e-15 || *lip > 1e12 {
                    return (z, fz);
                }
                *lip *= 2.0;
            }
        };
        for k in 0..cfg.max_iters {
            iters = k + 1;
            let (z, fz) = prox_step(&y, &mut lip, &mut dual);
            let (x_new, f_new, restart, z_used) = if fz <= fx {
                (z.clone(), fz, false, z)
            } else {
                let (z2, f2) = prox_step(&x, &mut lip, &mut dual);
                if f2 <= fx {
                    (z2.clone(), f2, true, z2)
                } else {
                    (x.clone(), fx, true, x.clone())
                }
            };
            let decrease = (fx - f_new) / fx.abs().max(f64::MIN_POSITIVE);
            if restart {
                t = 1.0;
                y = x_new.clone();
            } else {
                let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
                y = &x_new + &((&z_used - &x_new) * (t / t_new)) + &((&x_new - &x) * ((t - 1.0) / t_new));
                t = t_new;
            }
            x = x_new;
            fx = f_new;
            trace.push(fx);
            if fx <= f64::MIN_POSITIVE {
                converged = true;
                break;
            }
            if k > 0 && decrease < cfg.tol {
                // a stalled restart may be an inexact prox; retry once from a cold dual
                if restart && !retried {
                    retried = true;
                    dual = zero_dual();
                    continue;
                }
                converged = true;
                break;
            }
            retried = false;
        }
        Ok(ReconstructedImage { pixels: x.mapv(|v| v.clamp(0.0, 1.0)), objective_trace: trace, iters_used: iters, converged })
    }
}

/// Power iteration on whichever of `AAᵀ` / `AᵀA` is smaller, with a small
/// safety margin.
fn max_eigenvalue(a: &Array2<f64>) -> f64 {
    let (n, p) = a.dim();
    let dim = n.min(p);
    if dim == 0 {
        return 0.0;
    }
    let apply = |v: &Array1<f64>| if n <= p { a.dot(&a.t().dot(v)) } else { a.t().dot(&a.dot(v)) };
    let mut v = Array1::from_shape_fn(dim, |i| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
    let mut est = 0.0;
    for _ in 0..100 {
        let w = apply(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.dot(&v) / v.dot(&v);
        v = w / norm;
        if (next - est).abs() <= 1e-10 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    est * 1.01
}

/// One-shot convenience: builds the system for `bank` and solves.
pub fn tv_reconstruct(m: &MeasurementVector, bank: &PatternBank, cfg: &TvConfig) -> Result<ReconstructedImage> {
    if m.len() != bank.len() {
        return Err(Error::Shape(format!("{} measurements for a bank of {}", m.len(), bank.len())));
    }
    TvProblem::new(bank)?.solve(m, cfg)
}
