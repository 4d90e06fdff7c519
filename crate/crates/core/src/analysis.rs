//! Existence diagnostics and dual certificates.
//!
//! The existence side computes the kernel constant `φ`, the per-microphone
//! correlations `μ_m`, the discrete amplitude-lower-bound check, and combines
//! them into a verdict. The certificate side builds the vanishing-derivatives
//! precertificate `η_V` for a given support and samples scalar fields on
//! axis-aligned planes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, Observation};
use crate::geometry::Vec3;
use crate::kernels::{kappa, kernel_sums, FilterKernel, SamplingSpec};

/// Relative singular-value floor for the `[γ | ∂γ]` system.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Log-spaced search grid for `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiGrid {
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
}

impl PhiGrid {
    /// `10⁶` points over `[1 µs, 10 · t_max]`.
    pub fn default_for(spec: &SamplingSpec) -> Self {
        let t_max = spec.t_max().max(1.0 / spec.fs);
        PhiGrid { t_lo: 1e-6, t_hi: 10.0 * t_max, points: 1_000_000 }
    }

    fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::invalid("phi search grid is empty"));
        }
        if !(self.t_lo > 0.0 && self.t_hi >= self.t_lo && self.t_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "phi search range [{}, {}] must lie in (0, ∞)",
                self.t_lo, self.t_hi
            )));
        }
        Ok(())
    }

    pub fn node(&self, i: usize) -> f64 {
        if self.points == 1 {
            return self.t_lo;
        }
        let s = i as f64 / (self.points - 1) as f64;
        self.t_lo * (self.t_hi / self.t_lo).powf(s)
    }
}

/// Grid-plus-refinement estimate of `φ`. It is an upper bound on the infimum
/// over `(0, ∞)`, not a certified value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub value: f64,
    pub argmin: f64,
}

struct PhiObjective {
    kernel: FilterKernel,
    c: f64,
    weights: Vec<(f64, f64)>,
}

impl PhiObjective {
    fn new(kernel: &FilterKernel, spec: &SamplingSpec, c: f64) -> Self {
        let weights = (0..spec.n_samples)
            .filter_map(|n| {
                let t = n as f64 / spec.fs;
                let w = kappa(kernel, t);
                (w != 0.0).then_some((t, w))
            })
            .collect();
        PhiObjective { kernel: *kernel, c, weights }
    }

    fn eval(&self, t: f64) -> f64 {
        let s: f64 = self.weights.iter().map(|&(tn, w)| w * kappa(&self.kernel, tn - t)).sum();
        s / (4.0 * PI * self.c * t)
    }
}

/// `φ = inf_t Σ_n κ(n/f_s) κ(n/f_s − t) / (4π c t)` estimated on `grid` and
/// refined by golden-section search around the best node.
pub fn compute_phi(kernel: &FilterKernel, spec: &SamplingSpec, c: f64, grid: &PhiGrid) -> Result<PhiEstimate> {
    kernel.validate()?;
    spec.validate()?;
    grid.validate()?;
    let obj = PhiObjective::new(kernel, spec, c);
    let values: Vec<f64> = (0..grid.points).into_par_iter().map(|i| obj.eval(grid.node(i))).collect();
    let (best, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let lo = grid.node(best.saturating_sub(1));
    let hi = grid.node((best + 1).min(grid.points - 1));
    let (t, v) = golden_section_min(|t| obj.eval(t), lo, hi);
    Ok(if v < values[best] {
        PhiEstimate { value: v, argmin: t }
    } else {
        PhiEstimate { value: values[best], argmin: grid.node(best) }
    })
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a) <= 1e-15 * b.abs() {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `μ_m = Σ_n x_{m,n} κ(n / f_s)`.
pub fn compute_mu(obs: &Observation) -> Vec<f64> {
    let spec = &obs.model.spec;
    let weights: Vec<f64> = (0..spec.n_samples).map(|n| kappa(&obs.model.kernel, n as f64 / spec.fs)).collect();
    (0..obs.n_mics())
        .map(|m| obs.row(m).iter().zip(&weights).map(|(x, w)| x * w).sum())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlbCheck {
    pub ok: bool,
    pub min_sum: f64,
}

/// `Σ_n κ(n / f_s − τ)`.
pub fn alb_sum(kernel: &FilterKernel, spec: &SamplingSpec, tau: f64) -> f64 {
    let ones = vec![1.0; spec.n_samples];
    kernel_sums(kernel, spec.fs, tau, &ones).0
}

/// Checks `Σ_n κ(n / f_s − τ) > 0` at every `τ` of the grid.
pub fn alb_discrete_check(kernel: &FilterKernel, spec: &SamplingSpec, taus: &[f64]) -> AlbCheck {
    let sums: Vec<f64> = taus.par_iter().map(|&t| alb_sum(kernel, spec, t)).collect();
    let min_sum = sums.iter().copied().fold(f64::INFINITY, f64::min);
    AlbCheck { ok: sums.iter().all(|&s| s > 0.0), min_sum }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// `φ < 0` and `μ_m ≤ (2/C) φ ‖x‖` for every microphone.
    ConditionI,
    /// `φ ≥ 0` and `μ_m ≤ 0` for every microphone.
    ConditionII,
    Inconclusive,
}

/// Where the amplitude-lower-bound constant came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlbConstant {
    pub value: f64,
    /// True when the value is a Monte-Carlo estimate, which can only
    /// over-estimate the true constant.
    pub sampled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub phi: f64,
    pub phi_argmin: f64,
    pub mu: Vec<f64>,
    pub x_norm: f64,
    pub alb_ok: bool,
    pub alb_min_sum: f64,
    pub c_alb: AlbConstant,
    pub lambda: f64,
    pub verdict: Verdict,
    /// `μ_m ≤ φ ‖x‖² / (2λ)` for every microphone.
    pub lambda_condition: bool,
}

pub fn verdict(phi: f64, mu: &[f64], x_norm: f64, c_alb: f64) -> Verdict {
    if phi < 0.0 {
        let bound = 2.0 / c_alb * phi * x_norm;
        if mu.iter().all(|&m| m <= bound) {
            return Verdict::ConditionI;
        }
    } else if mu.iter().all(|&m| m <= 0.0) {
        return Verdict::ConditionII;
    }
    Verdict::Inconclusive
}

/// Estimates the amplitude lower-bound constant `inf ‖Γψ‖ / ‖ψ‖_TV` by
/// sampling nonnegative measures with 1 to 5 spikes inside the observable
/// region. The minimum over samples bounds the true constant from above.
pub fn estimate_alb_constant(model: &ForwardModel, samples: usize, eps_excl: f64, seed: u64) -> Result<f64> {
    let center = model.array.center();
    let reach = model.c * model.spec.t_max();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_point = |rng: &mut ChaCha8Rng| -> Option<Vec3> {
        for _ in 0..1000 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if p.norm() > 1.0 {
                continue;
            }
            let r = center + p * reach;
            if model.array.positions.iter().all(|&m| {
                let d = m.distance(r);
                d > eps_excl.max(1e-6) && d <= reach
            }) {
                return Some(r);
            }
        }
        None
    };
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let k = rng.random_range(1..=5usize);
        let mut col = vec![0.0; model.dim()];
        let mut mass = 0.0;
        for _ in 0..k {
            let Some(r) = draw_point(&mut rng) else {
                return Err(Error::invalid("observable region is empty"));
            };
            let a: f64 = rng.random_range(0.05..1.0);
            mass += a;
            for (c, g) in col.iter_mut().zip(model.gamma_column(r)?) {
                *c += a * g;
            }
        }
        let ratio = col.iter().map(|x| x * x).sum::<f64>().sqrt() / mass;
        best = best.min(ratio);
    }
    Ok(best)
}

/// Runs the full existence check on an observation.
pub fn existence_verdict(
    obs: &Observation,
    lambda: f64,
    c_alb: Option<f64>,
    phi_grid: &PhiGrid,
    seed: u64,
) -> Result<ExistenceReport> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let model = &obs.model;
    let phi = compute_phi(&model.kernel, &model.spec, model.c, phi_grid)?;
    let mu = compute_mu(obs);
    let x_norm = obs.norm();
    let taus: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_max = model.spec.t_max();
        (0..10_000).map(|_| rng.random_range(0.0..=t_max)).collect()
    };
    let alb = alb_discrete_check(&model.kernel, &model.spec, &taus);
    let c_alb = match c_alb {
        Some(value) if value > 0.0 => AlbConstant { value, sampled: false },
        Some(value) => return Err(Error::invalid(format!("ALB constant must be positive, got {value}"))),
        None => AlbConstant { value: estimate_alb_constant(model, 500, 0.01, seed)?, sampled: true },
    };
    let v = verdict(phi.value, &mu, x_norm, c_alb.value);
    let lambda_condition = mu.iter().all(|&m| m <= phi.value / (2.0 * lambda) * x_norm * x_norm);
    Ok(ExistenceReport {
        phi: phi.value,
        phi_argmin: phi.argmin,
        mu,
        x_norm,
        alb_ok: alb.ok,
        alb_min_sum: alb.min_sum,
        c_alb,
        lambda,
        verdict: v,
        lambda_condition,
    })
}

/// `[γ(r_1) … γ(r_K) | ∂_x γ(r_1) … | ∂_y … | ∂_z …]`, of size `M·N × 4K`.
pub fn build_gamma_r_matrix(positions: &[Vec3], model: &ForwardModel) -> Result<DMatrix<f64>> {
    let k = positions.len();
    let columns: Vec<_> = positions
        .par_iter()
        .map(|&r| model.gamma_column_with_grad(r))
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(model.dim(), 4 * k);
    for (j, (value, grad)) in columns.into_iter().enumerate() {
        out.column_mut(j).copy_from_slice(&value);
        for a in 0..3 {
            out.column_mut((a + 1) * k + j).copy_from_slice(&grad[a]);
        }
    }
    Ok(out)
}

/// Least-norm `v` with `(Γ*v)(r_k) = s_k` and `∇(Γ*v)(r_k) = 0`.
#[derive(Clone, Debug)]
pub struct Precertificate {
    pub model: ForwardModel,
    pub positions: Vec<Vec3>,
    pub signs: Vec<f64>,
    pub v_star: Vec<f64>,
    /// Smallest singular value of the column-normalized system relative to
    /// the largest.
    pub relative_sigma_min: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub interpolation: f64,
    /// `‖∇η(r_k)‖ / (‖v*‖ · ‖∂γ(r_k)‖_F)`.
    pub scaled_gradient: f64,
}

pub fn precertificate_eta_v(positions: &[Vec3], signs: &[f64], model: &ForwardModel) -> Result<Precertificate> {
    if positions.is_empty() {
        return Err(Error::invalid("precertificate needs at least one spike"));
    }
    if positions.len() != signs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} signs for {} positions",
            signs.len(),
            positions.len()
        )));
    }
    if let Some(s) = signs.iter().find(|s| s.abs() != 1.0) {
        return Err(Error::invalid(format!("signs must be ±1, got {s}")));
    }
    let k = positions.len();
    let mut a = build_gamma_r_matrix(positions, model)?;
    if a.nrows() < a.ncols() {
        return Err(Error::Degenerate { relative_sigma: 0.0, tolerance: RANK_TOLERANCE });
    }
    let scale: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 { 1.0 / n } else { 0.0 }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(*s);
    }
    let svd = a.svd(true, true);
    let sig = &svd.singular_values;
    let smax = sig.max();
    let smin = sig.min();
    let relative = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(relative >= RANK_TOLERANCE) {
        return Err(Error::Degenerate { relative_sigma: relative, tolerance: RANK_TOLERANCE });
    }
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V requested");
    let mut rhs = DVector::zeros(4 * k);
    for j in 0..k {
        rhs[j] = signs[j] * scale[j];
    }
    // v* = U Σ⁻¹ Vᵀ (D b)
    let mut coef = v_t * rhs;
    for (c, s) in coef.iter_mut().zip(svd.singular_values.iter()) {
        *c /= s;
    }
    let v_star = u * coef;
    Ok(Precertificate {
        model: model.clone(),
        positions: positions.to_vec(),
        signs: signs.to_vec(),
        v_star: v_star.as_slice().to_vec(),
        relative_sigma_min: relative,
    })
}

impl Precertificate {
    pub fn eval(&self, r: Vec3) -> Result<f64> {
        Ok(self.model.adjoint_eval(&self.v_star, r)?.0)
    }

    pub fn eval_with_grad(&self, r: Vec3) -> Result<(f64, Vec3)> {
        self.model.adjoint_eval(&self.v_star, r)
    }

    pub fn v_norm(&self) -> f64 {
        self.v_star.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn constraint_residuals(&self) -> Result<Vec<ConstraintResidual>> {
        let vn = self.v_norm();
        self.positions
            .iter()
            .zip(&self.signs)
            .map(|(&r, &s)| {
                let (val, grad) = self.eval_with_grad(r)?;
                let (_, dg) = self.model.gamma_column_with_grad(r)?;
                let fro = dg.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
                Ok(ConstraintResidual {
                    interpolation: (val - s).abs(),
                    scaled_gradient: grad.norm() / (vn * fro),
                })
            })
            .collect()
    }

    /// Hessian of `η_V` at `r` by central differences of the analytic
    /// gradient.
    pub fn hessian(&self, r: Vec3, h: f64) -> Result<[[f64; 3]; 3]> {
        let mut hess = [[0.0; 3]; 3];
        for (i, row) in hess.iter_mut().enumerate() {
            let mut e = [0.0; 3];
            e[i] = h;
            let e = Vec3::from(e);
            let gp = self.eval_with_grad(r + e)?.1;
            let gm = self.eval_with_grad(r - e)?.1;
            for j in 0..3 {
                row[j] = (gp[j] - gm[j]) / (2.0 * h);
            }
        }
        Ok(hess)
    }
}

/// Something that can be sampled pointwise.
pub trait ScalarField: Sync {
    fn value(&self, r: Vec3) -> Result<f64>;
}

impl ScalarField for Precertificate {
    fn value(&self, r: Vec3) -> Result<f64> {
        self.eval(r)
    }
}

/// `r ↦ Σ v γ(r)` for an arbitrary vector `v`, e.g. a scaled residual.
pub struct AdjointField<'a> {
    pub model: &'a ForwardModel,
    pub v: &'a [f64],
}

impl ScalarField for AdjointField<'_> {
    fn value(&self, r: Vec3) -> Result<f64> {
        Ok(self.model.adjoint_eval(self.v, r)?.0)
    }
}

impl<F: Fn(Vec3) -> Result<f64> + Sync> ScalarField for F {
    fn value(&self, r: Vec3) -> Result<f64> {
        self(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Axis-aligned plane `{r : r[normal] = offset}` sampled on a regular grid
/// over its two in-plane coordinates, taken in `x, y, z` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub normal: Axis,
    pub offset: f64,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub resolution: [usize; 2],
}

impl PlaneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution[0] < 2 || self.resolution[1] < 2 {
            return Err(Error::invalid("plane resolution must be at least 2×2"));
        }
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        if !ok(self.u_range) || !ok(self.v_range) || !self.offset.is_finite() {
            return Err(Error::invalid("plane ranges must be finite and increasing"));
        }
        Ok(())
    }

    pub fn coordinates(&self, i: usize, j: usize) -> (f64, f64) {
        let lerp = |r: [f64; 2], k: usize, n: usize| r[0] + (r[1] - r[0]) * k as f64 / (n - 1) as f64;
        (lerp(self.u_range, i, self.resolution[0]), lerp(self.v_range, j, self.resolution[1]))
    }

    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        match self.normal {
            Axis::X => Vec3::new(self.offset, u, v),
            Axis::Y => Vec3::new(u, self.offset, v),
            Axis::Z => Vec3::new(u, v, self.offset),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGrid {
    pub spec: PlaneSpec,
    /// `(u, v, value)` with `u` varying fastest. Nodes on a microphone hold NaN.
    pub samples: Vec<(f64, f64, f64)>,
}

impl PlaneGrid {
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().filter(|s| s.2.is_finite()).fold(0.0, |m: f64, s| m.max(s.2.abs()))
    }
}

pub fn sample_plane<F: ScalarField + ?Sized>(field: &F, plane: &PlaneSpec, absolute: bool) -> Result<PlaneGrid> {
    plane.validate()?;
    let [nu, nv] = plane.resolution;
    let samples = (0..nu * nv)
        .into_par_iter()
        .map(|idx| {
            let (u, v) = plane.coordinates(idx % nu, idx / nu);
            let value = match field.value(plane.point(u, v)) {
                Ok(x) if absolute => x.abs(),
                Ok(x) => x,
                Err(Error::Singular { .. }) => f64::NAN,
                Err(e) => return Err(e),
            };
            Ok((u, v, value))
        })
        .collect::<Result<_>>()?;
    Ok(PlaneGrid { spec: *plane, samples })
}
