//! Frank-Wolfe recovery of image sources with progressive RIR extension.
//!
//! Each iteration locates the maximum of the certificate `η = Γ*res` (grid
//! initialization on time-of-arrival spheres, then BFGS ascent), stops or
//! extends the observation window when `η ≤ λ`, otherwise adds the candidate
//! and re-solves the nonnegative LASSO for all amplitudes. The observation is
//! processed in growing prefixes whose lengths follow equal-energy cutting
//! indices. After the loop, one joint descent on amplitudes and positions
//! ("sliding") is run on the full observation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, Observation, SparseMeasure};
use crate::geometry::{fibonacci_sphere, MicArray, Vec3};
use crate::lasso::{dot, kkt_violation, solve_gram, GramSystem, LassoOptions};
use crate::optim::{minimize, minimize_bounded, BfgsOptions, InitialInverseHessian, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Number of microphones whose time-of-arrival spheres are meshed.
    pub top_mics: usize,
    /// Mean angular spacing of the sphere lattice, in degrees.
    pub angular_spacing_deg: f64,
    /// Offsets added to the time-of-arrival radius, in meters.
    pub radial_offsets: Vec<f64>,
    /// Moving-average window applied to the squared residual, in samples.
    pub moving_average: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            top_mics: 8,
            angular_spacing_deg: 5.0,
            radial_offsets: vec![-0.05, 0.0, 0.05],
            moving_average: 3,
        }
    }
}

/// Default step cap of the sliding descent, in meters (and amplitude units).
pub const SLIDING_MAX_STEP: f64 = 5e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Radius of the exclusion balls around microphones, in meters.
    pub eps_excl: f64,
    pub alpha_min: f64,
    pub i_max: usize,
    /// Iterations after which the window is extended regardless of progress.
    pub i_ext: usize,
    /// Fractional residual-norm decrease since the last extension that
    /// triggers the next one.
    pub resid_drop: f64,
    pub cutting_count: usize,
    pub grid: GridConfig,
    pub ascent: BfgsOptions,
    pub sliding: BfgsOptions,
    pub lasso: LassoOptions,
    /// Candidates closer than this to an existing spike replace it.
    pub merge_radius: f64,
    /// Run the joint descent after every iteration as well as at the end.
    pub per_iteration_sliding: bool,
    /// Spikes closer than this many sample periods of travel (`c / f_s`)
    /// after sliding are tried as a single spike; 0 disables the pass.
    pub fuse_radius_samples: f64,
    /// Seeds the orientation of the initialization lattices.
    pub rng_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 3e-5,
            eps_excl: 0.01,
            alpha_min: 0.01,
            i_max: 2000,
            i_ext: 20,
            resid_drop: 0.7,
            cutting_count: 8,
            grid: GridConfig::default(),
            ascent: BfgsOptions::default(),
            sliding: BfgsOptions { max_iter: 1000, max_step: Some(SLIDING_MAX_STEP), ..BfgsOptions::default() },
            lasso: LassoOptions::default(),
            merge_radius: 1e-3,
            per_iteration_sliding: false,
            fuse_radius_samples: 1.0,
            rng_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.resid_drop > 0.0 && self.resid_drop < 1.0) {
            return bad(format!("resid_drop must lie in (0, 1), got {}", self.resid_drop));
        }
        if !(self.alpha_min > 0.0) {
            return bad(format!("alpha_min must be positive, got {}", self.alpha_min));
        }
        if !(self.eps_excl >= 0.0) || !self.eps_excl.is_finite() {
            return bad(format!("eps_excl must be nonnegative, got {}", self.eps_excl));
        }
        if self.cutting_count == 0 {
            return bad("cutting_count must be at least 1".into());
        }
        if self.grid.top_mics == 0 || self.grid.moving_average == 0 {
            return bad("grid needs at least one microphone and a nonempty moving average".into());
        }
        if !(self.grid.angular_spacing_deg > 0.0 && self.grid.angular_spacing_deg <= 180.0) {
            return bad(format!("angular spacing must lie in (0, 180], got {}", self.grid.angular_spacing_deg));
        }
        if !(self.merge_radius >= 0.0) {
            return bad(format!("merge_radius must be nonnegative, got {}", self.merge_radius));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    CertificateBelowLambda,
    AmplitudeBelowThreshold,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Added,
    Merged,
    /// Certificate maximum at or below `λ`.
    BelowLambda,
    /// The newest amplitude came out below `alpha_min`.
    BelowThreshold,
    /// A merge that did not lower the objective.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub window: usize,
    pub certificate: f64,
    pub candidate: Vec3,
    pub action: Action,
    pub residual_norm: f64,
    /// `T_λ` on the active window before and after this step.
    pub objective_before: f64,
    pub objective_after: f64,
    pub n_spikes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionReason {
    ResidualDrop,
    IterationBudget,
    StopCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionEvent {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
    pub reason: ExtensionReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    #[serde(flatten)]
    pub measure: SparseMeasure,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub extensions: Vec<ExtensionEvent>,
    /// `T_λ` on the full observation around the sliding step.
    pub objective_before_sliding: f64,
    pub objective_after_sliding: f64,
    pub sliding_iterations: usize,
    pub sliding_termination: Termination,
    /// Pairs of spikes fused after sliding.
    pub fused: usize,
    pub final_objective: f64,
    pub final_residual_norm: f64,
    /// Worst optimality-condition violation of the final amplitudes.
    pub kkt_violation: f64,
}

/// Equal-energy cutting indices `j_1 < … < j_L = N − 1`.
///
/// `j_l` is the first sample at which the cumulative energy over all
/// microphones reaches `l / L` of the total.
pub fn cutting_indices(obs: &Observation, l: usize) -> Result<Vec<usize>> {
    if l == 0 {
        return Err(Error::invalid("at least one cutting index is required"));
    }
    let n = obs.n_samples();
    let mut energy = vec![0.0; n];
    for m in 0..obs.n_mics() {
        for (e, x) in energy.iter_mut().zip(obs.row(m)) {
            *e += x * x;
        }
    }
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("observation has zero energy"));
    }
    let mut out = Vec::with_capacity(l);
    let mut cum = 0.0;
    let mut level = 1;
    for (i, e) in energy.iter().enumerate() {
        cum += e;
        while level < l && cum >= level as f64 / l as f64 * total {
            if out.last() != Some(&i) {
                out.push(i);
            }
            level += 1;
        }
    }
    if out.last() != Some(&(n - 1)) {
        out.push(n - 1);
    }
    Ok(out)
}

/// Peak sample of the moving-averaged squared signal of one row, earliest on
/// ties, with its value.
pub fn smoothed_peak(row: &[f64], window: usize) -> (usize, f64) {
    let n = row.len();
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    let sq: Vec<f64> = row.iter().map(|x| x * x).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let lo = i.saturating_sub(half_lo);
        let hi = (i + half_hi).min(n - 1);
        let v = sq[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Pushes `r` out of every exclusion ball.
pub fn project_out_of_balls(r: Vec3, array: &MicArray, eps: f64) -> Vec3 {
    if eps <= 0.0 {
        return r;
    }
    let margin = eps * (1.0 + 1e-12);
    let mut p = r;
    for _ in 0..16 {
        let (m, d) = array.nearest(p);
        if d >= eps {
            return p;
        }
        let mic = array.positions[m];
        let dir = if d > 0.0 { (p - mic) * (1.0 / d) } else { Vec3::new(1.0, 0.0, 0.0) };
        p = mic + dir * margin;
    }
    // overlapping balls: move radially away from the array center instead
    let center = array.center();
    let mut dir = p - center;
    if dir.norm() == 0.0 {
        dir = Vec3::new(1.0, 0.0, 0.0);
    }
    let dir = dir * (1.0 / dir.norm());
    let reach = array.positions.iter().map(|m| m.distance(center)).fold(0.0, f64::max) + margin;
    let mut t = (p - center).norm();
    while array.nearest(center + dir * t).1 < eps && t < reach {
        t = (t + eps * 0.25).min(reach);
    }
    center + dir * t
}

/// Candidate positions for the certificate ascent: lattices on spheres
/// around the microphones with the strongest residual peaks, at the peak
/// propagation distance plus the configured offsets.
pub fn init_grid(res: &Observation, config: &SolverConfig, iteration: u64) -> Vec<Vec3> {
    let model = &res.model;
    let mut peaks: Vec<(usize, usize, f64)> = (0..res.n_mics())
        .map(|m| {
            let (n, v) = smoothed_peak(res.row(m), config.grid.moving_average);
            (m, n, v)
        })
        .collect();
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    peaks.truncate(config.grid.top_mics);

    let theta = config.grid.angular_spacing_deg.to_radians();
    let count = (4.0 * PI / (theta * theta)).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
    ));
    let rot = q.to_rotation_matrix().into_inner();
    let dirs: Vec<Vec3> = fibonacci_sphere(count).into_iter().map(|d| d.rotate(&rot)).collect();

    let mut nodes = Vec::with_capacity(peaks.len() * config.grid.radial_offsets.len() * count);
    for &(m, n, _) in &peaks {
        let center = model.array.positions[m];
        let base = model.c * n as f64 / model.spec.fs;
        for off in &config.grid.radial_offsets {
            let radius = base + off;
            if radius <= 0.0 {
                continue;
            }
            for &d in &dirs {
                let p = center + d * radius;
                if model.array.nearest(p).1 >= config.eps_excl.max(f64::MIN_POSITIVE) {
                    nodes.push(p);
                }
            }
        }
    }
    nodes
}

/// Maximizes `η(r) = Σ res·γ(r)`: grid argmax, then projected BFGS ascent.
pub fn maximize_certificate(res: &Observation, config: &SolverConfig, iteration: u64) -> Result<(Vec3, f64)> {
    let model = &res.model;
    let nodes = init_grid(res, config, iteration);
    if nodes.is_empty() {
        return Ok((model.array.center(), 0.0));
    }
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|&r| model.adjoint_value(&res.data, r))
        .collect::<Result<_>>()?;
    let (best, best_val) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let start = nodes[best];
    let (_, g0) = model.adjoint_eval(&res.data, start)?;
    let gn = g0.norm();
    if gn == 0.0 {
        return Ok((start, best_val));
    }
    let eps = config.eps_excl;
    let result = minimize(
        |x: &[f64]| match model.adjoint_eval(&res.data, Vec3::new(x[0], x[1], x[2])) {
            Ok((v, g)) => (-v, vec![-g.x, -g.y, -g.z]),
            Err(_) => (f64::INFINITY, vec![0.0; 3]),
        },
        |x: &mut [f64]| {
            let p = project_out_of_balls(Vec3::new(x[0], x[1], x[2]), &model.array, eps);
            x.copy_from_slice(&p.to_array());
        },
        start.to_array().to_vec(),
        Some(InitialInverseHessian::Scaled(1e-3 / gn)),
        &config.ascent,
    );
    let r = Vec3::new(result.x[0], result.x[1], result.x[2]);
    let v = -result.f;
    if v >= best_val {
        Ok((r, v))
    } else {
        Ok((start, best_val))
    }
}

/// Active window and the spikes fitted on it.
struct State<'a> {
    full: &'a Observation,
    config: &'a SolverConfig,
    cuts: Vec<usize>,
    level: usize,
    window: Observation,
    positions: Vec<Vec3>,
    amps: Vec<f64>,
    columns: Vec<Vec<f64>>,
    sys: GramSystem,
}

impl<'a> State<'a> {
    fn new(full: &'a Observation, config: &'a SolverConfig) -> Result<Self> {
        let cuts = match cutting_indices(full, config.cutting_count) {
            Ok(c) => c,
            Err(_) => vec![full.n_samples() - 1],
        };
        let window = full.truncate_samples(cuts[0] + 1)?;
        let sys = GramSystem { gram: Vec::new(), rhs: Vec::new(), x_sq: dot(&window.data, &window.data) };
        Ok(State {
            full,
            config,
            cuts,
            level: 0,
            window,
            positions: Vec::new(),
            amps: Vec::new(),
            columns: Vec::new(),
            sys,
        })
    }

    fn can_extend(&self) -> bool {
        self.level + 1 < self.cuts.len()
    }

    fn window_len(&self) -> usize {
        self.window.n_samples()
    }

    fn extend(&mut self) -> Result<()> {
        self.level += 1;
        self.window = self.full.truncate_samples(self.cuts[self.level] + 1)?;
        self.rebuild()
    }

    /// Recomputes columns and the Gram system for the current window.
    fn rebuild(&mut self) -> Result<()> {
        let model = &self.window.model;
        self.columns = self.positions.par_iter().map(|&r| model.gamma_column(r)).collect::<Result<_>>()?;
        self.sys = GramSystem::from_columns(&self.columns, &self.window.data)?;
        Ok(())
    }

    fn push(&mut self, r: Vec3) -> Result<()> {
        let col = self.window.model.gamma_column(r)?;
        let k = self.positions.len();
        let cross: Vec<f64> = self.columns.par_iter().map(|c| dot(c, &col)).collect();
        let mut gram = vec![0.0; (k + 1) * (k + 1)];
        for i in 0..k {
            for j in 0..k {
                gram[i * (k + 1) + j] = self.sys.gram[i * k + j];
            }
            gram[i * (k + 1) + k] = cross[i];
            gram[k * (k + 1) + i] = cross[i];
        }
        gram[k * (k + 1) + k] = dot(&col, &col);
        self.sys.gram = gram;
        self.sys.rhs.push(dot(&col, &self.window.data));
        self.columns.push(col);
        self.positions.push(r);
        self.amps.push(0.0);
        Ok(())
    }

    fn replace(&mut self, k: usize, r: Vec3) -> Result<()> {
        self.positions[k] = r;
        self.rebuild()
    }

    fn remove(&mut self, keep: &[bool]) {
        let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        let k = self.positions.len();
        let n = idx.len();
        let mut gram = vec![0.0; n * n];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                gram[a * n + b] = self.sys.gram[i * k + j];
            }
        }
        self.sys.gram = gram;
        self.sys.rhs = idx.iter().map(|&i| self.sys.rhs[i]).collect();
        self.columns = idx.iter().map(|&i| std::mem::take(&mut self.columns[i])).collect();
        self.positions = idx.iter().map(|&i| self.positions[i]).collect();
        self.amps = idx.iter().map(|&i| self.amps[i]).collect();
    }

    fn resolve(&mut self) {
        self.amps = solve_gram(&self.sys, self.config.lambda, Some(&self.amps), &self.config.lasso);
    }

    /// Drops spikes below `alpha_min`, re-solving until nothing changes.
    fn prune(&mut self) {
        loop {
            let keep: Vec<bool> = self.amps.iter().map(|&a| a >= self.config.alpha_min).collect();
            if keep.iter().all(|&k| k) {
                return;
            }
            self.remove(&keep);
            self.resolve();
        }
    }

    fn residual(&self) -> Vec<f64> {
        let mut r = self.window.data.clone();
        for (col, &a) in self.columns.iter().zip(&self.amps) {
            if a != 0.0 {
                r.iter_mut().zip(col).for_each(|(x, g)| *x -= a * g);
            }
        }
        r
    }

    fn objective(&self, residual: &[f64]) -> f64 {
        0.5 * dot(residual, residual) + self.config.lambda * self.amps.iter().sum::<f64>()
    }
}

/// `T_λ(a, r)` on `obs`.
pub fn objective(obs: &Observation, measure: &SparseMeasure, lambda: f64) -> Result<f64> {
    let res = obs.residual(measure)?;
    Ok(0.5 * dot(&res.data, &res.data) + lambda * measure.total_mass())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideOutcome {
    pub amplitudes: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Inverse of the damped Gauss-Newton matrix `JᵀJ` of the data term, with
/// variables interleaved as `[a, x, y, z]` per spike. Amplitudes below
/// `alpha_min` are raised to it in the position columns so that they keep a
/// nonzero scale. Falls back to the inverse diagonal when the factorization
/// fails.
fn gauss_newton_inverse(
    model: &ForwardModel,
    amps: &[f64],
    positions: &[Vec3],
    alpha_min: f64,
) -> Result<InitialInverseHessian> {
    let k = amps.len();
    let n = 4 * k;
    let cols: Vec<(Vec<f64>, [Vec<f64>; 3])> =
        positions.par_iter().map(|&r| model.gamma_column_with_grad(r)).collect::<Result<_>>()?;
    let column = |j: usize| -> (&[f64], f64) {
        let (v, g) = &cols[j / 4];
        match j % 4 {
            0 => (v.as_slice(), 1.0),
            axis => (g[axis - 1].as_slice(), amps[j / 4].max(alpha_min)),
        }
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let dots: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ((ci, si), (cj, sj)) = (column(i), column(j));
            si * sj * dot(ci, cj)
        })
        .collect();
    let mut jtj = DMatrix::zeros(n, n);
    for (&(i, j), d) in pairs.iter().zip(dots) {
        jtj[(i, j)] = d;
        jtj[(j, i)] = d;
    }
    let diag: Vec<f64> = (0..n).map(|i| jtj[(i, i)]).collect();
    // relative damping keeps the factorization away from near-collinear spikes
    let mut damped = jtj.clone();
    for i in 0..n {
        damped[(i, i)] *= 1.0 + 1e-8;
        damped[(i, i)] += f64::MIN_POSITIVE;
    }
    if let Some(chol) = damped.cholesky() {
        let inv = chol.inverse();
        if inv.iter().all(|x| x.is_finite()) {
            let mut h = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = inv[(i, j)];
                }
            }
            return Ok(InitialInverseHessian::Dense(h));
        }
    }
    Ok(InitialInverseHessian::Diagonal(
        diag.into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect(),
    ))
}

/// Joint projected BFGS on amplitudes and positions over `obs`.
pub fn slide(obs: &Observation, amps: &[f64], positions: &[Vec3], config: &SolverConfig) -> Result<SlideOutcome> {
    let k = amps.len();
    if k == 0 {
        return Ok(SlideOutcome {
            amplitudes: Vec::new(),
            positions: Vec::new(),
            iterations: 0,
            termination: Termination::GradientTolerance,
        });
    }
    let model = &obs.model;
    let lambda = config.lambda;
    let pack = |a: &[f64], r: &[Vec3]| -> Vec<f64> {
        (0..k).flat_map(|i| [a[i], r[i].x, r[i].y, r[i].z]).collect()
    };
    let unpack = |z: &[f64]| -> (Vec<f64>, Vec<Vec3>) {
        let a = (0..k).map(|i| z[4 * i]).collect();
        let r = (0..k).map(|i| Vec3::new(z[4 * i + 1], z[4 * i + 2], z[4 * i + 3])).collect();
        (a, r)
    };
    let fg = |z: &[f64]| -> (f64, Vec<f64>) {
        let (a, r) = unpack(z);
        let Ok(measure) = SparseMeasure::from_parts(&a, &r) else {
            return (f64::INFINITY, vec![0.0; z.len()]);
        };
        let Ok(res) = obs.residual(&measure) else {
            return (f64::INFINITY, vec![0.0; z.len()]);
        };
        let f = 0.5 * dot(&res.data, &res.data) + lambda * a.iter().sum::<f64>();
        let grads: Vec<Result<(f64, Vec3)>> = r.par_iter().map(|&p| model.adjoint_eval(&res.data, p)).collect();
        let mut g = vec![0.0; z.len()];
        for (i, gr) in grads.into_iter().enumerate() {
            let Ok((val, grad)) = gr else {
                return (f64::INFINITY, vec![0.0; z.len()]);
            };
            g[4 * i] = -val + lambda;
            g[4 * i + 1] = -a[i] * grad.x;
            g[4 * i + 2] = -a[i] * grad.y;
            g[4 * i + 3] = -a[i] * grad.z;
        }
        (f, g)
    };
    let eps = config.eps_excl;
    let project = |z: &mut [f64]| {
        for i in 0..k {
            let p = project_out_of_balls(Vec3::new(z[4 * i + 1], z[4 * i + 2], z[4 * i + 3]), &model.array, eps);
            z[4 * i + 1..4 * i + 4].copy_from_slice(&p.to_array());
        }
    };
    let h0 = gauss_newton_inverse(model, amps, positions, config.alpha_min)?;
    let lower: Vec<f64> = (0..4 * k).map(|j| if j % 4 == 0 { 0.0 } else { f64::NEG_INFINITY }).collect();
    let result = minimize_bounded(fg, project, &lower, pack(amps, positions), Some(h0), &config.sliding);
    let (amplitudes, positions) = unpack(&result.x);
    Ok(SlideOutcome { amplitudes, positions, iterations: result.iterations, termination: result.termination })
}

/// Replaces close pairs by one spike when that does not increase `T_λ`.
///
/// Pairs are visited from the closest. The fused spike starts at the
/// amplitude-weighted mean and is refined alone against the residual of the
/// other spikes; the replacement is kept only if the objective does not go up.
pub fn fuse_close_spikes(
    obs: &Observation,
    amps: &[f64],
    positions: &[Vec3],
    radius: f64,
    config: &SolverConfig,
) -> Result<(Vec<f64>, Vec<Vec3>, usize)> {
    let model = &obs.model;
    let mut amps = amps.to_vec();
    let mut positions = positions.to_vec();
    let mut fused = 0;
    let mut rejected: Vec<(Vec3, Vec3)> = Vec::new();
    loop {
        let mut pairs = Vec::new();
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let d = positions[i].distance(positions[j]);
                if d < radius && !rejected.contains(&(positions[i], positions[j])) {
                    pairs.push((d, i, j));
                }
            }
        }
        let Some(&(_, i, j)) = pairs.iter().min_by(|a, b| a.0.total_cmp(&b.0)) else {
            break;
        };
        let others: Vec<usize> = (0..positions.len()).filter(|&k| k != i && k != j).collect();
        let rest = SparseMeasure::from_parts(
            &others.iter().map(|&k| amps[k]).collect::<Vec<_>>(),
            &others.iter().map(|&k| positions[k]).collect::<Vec<_>>(),
        )?;
        let base = obs.residual(&rest)?;
        let local = |a: &[f64], r: &[Vec3]| -> Result<f64> {
            let res = base.residual(&SparseMeasure::from_parts(a, r)?)?;
            Ok(0.5 * dot(&res.data, &res.data) + config.lambda * a.iter().sum::<f64>())
        };
        let current = local(&[amps[i], amps[j]], &[positions[i], positions[j]])?;
        let total = amps[i] + amps[j];
        let start = if total > 0.0 {
            (positions[i] * amps[i] + positions[j] * amps[j]) * (1.0 / total)
        } else {
            (positions[i] + positions[j]) * 0.5
        };
        let start = project_out_of_balls(start, &model.array, config.eps_excl);
        let one = slide(&base, &[total], &[start], config)?;
        let candidate = local(&one.amplitudes, &one.positions)?;
        if candidate <= current {
            amps[i] = one.amplitudes[0];
            positions[i] = one.positions[0];
            amps.remove(j);
            positions.remove(j);
            fused += 1;
        } else {
            rejected.push((positions[i], positions[j]));
        }
    }
    Ok((amps, positions, fused))
}

/// Runs the recovery on `obs`.
pub fn solve(obs: &Observation, config: &SolverConfig) -> Result<RecoveryResult> {
    config.validate()?;
    if obs.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("observation contains non-finite samples"));
    }
    let mut st = State::new(obs, config)?;
    let mut trace = Vec::new();
    let mut extensions = Vec::new();
    let mut i = 0usize;
    let mut last_ext = 0usize;
    let mut res = st.residual();
    let mut norm_at_ext = dot(&res, &res).sqrt();
    let mut stop_reason = StopReason::MaxIterations;
    let mut ext_calls = 0u64;

    let extend = |st: &mut State, extensions: &mut Vec<ExtensionEvent>, i: usize, reason| -> Result<Vec<f64>> {
        let from = st.window_len();
        st.extend()?;
        extensions.push(ExtensionEvent { iteration: i, from, to: st.window_len(), reason });
        Ok(st.residual())
    };

    while i < config.i_max {
        let res_norm = dot(&res, &res).sqrt();
        if st.can_extend() {
            let reason = if res_norm <= (1.0 - config.resid_drop) * norm_at_ext {
                Some(ExtensionReason::ResidualDrop)
            } else if i - last_ext >= config.i_ext {
                Some(ExtensionReason::IterationBudget)
            } else {
                None
            };
            if let Some(reason) = reason {
                res = extend(&mut st, &mut extensions, i, reason)?;
                last_ext = i;
                norm_at_ext = dot(&res, &res).sqrt();
            }
        }

        let before = st.objective(&res);
        let res_obs = Observation { model: st.window.model.clone(), data: res.clone() };
        let (cand, eta) = maximize_certificate(&res_obs, config, i as u64 + (ext_calls << 32))?;
        let mut record = IterationRecord {
            iteration: i,
            window: st.window_len(),
            certificate: eta,
            candidate: cand,
            action: Action::BelowLambda,
            residual_norm: dot(&res, &res).sqrt(),
            objective_before: before,
            objective_after: before,
            n_spikes: st.positions.len(),
        };

        let mut stalled = None;
        if eta > config.lambda {
            let near = st
                .positions
                .iter()
                .enumerate()
                .map(|(k, p)| (k, p.distance(cand)))
                .filter(|&(_, d)| d < config.merge_radius)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let newest = match near {
                Some((k, _)) => {
                    st.replace(k, cand)?;
                    record.action = Action::Merged;
                    k
                }
                None => {
                    st.push(cand)?;
                    record.action = Action::Added;
                    st.positions.len() - 1
                }
            };
            st.resolve();
            res = st.residual();
            let after = st.objective(&res);
            record.objective_after = after;
            if record.action == Action::Merged && !(after < before * (1.0 - 1e-15)) {
                record.action = Action::Stalled;
                stalled = Some(StopReason::CertificateBelowLambda);
            } else if st.amps[newest] < config.alpha_min {
                record.action = Action::BelowThreshold;
                stalled = Some(StopReason::AmplitudeBelowThreshold);
            }
        } else {
            stalled = Some(StopReason::CertificateBelowLambda);
        }
        record.n_spikes = st.positions.len();
        trace.push(record);

        if let Some(reason) = stalled {
            if st.can_extend() {
                st.prune();
                ext_calls += 1;
                res = extend(&mut st, &mut extensions, i, ExtensionReason::StopCheck)?;
                last_ext = i;
                norm_at_ext = dot(&res, &res).sqrt();
                continue;
            }
            stop_reason = reason;
            break;
        }

        let k_before = st.positions.len();
        st.prune();
        if config.per_iteration_sliding && !st.positions.is_empty() {
            let out = slide(&st.window, &st.amps, &st.positions, config)?;
            st.amps = out.amplitudes;
            st.positions = out.positions;
            st.rebuild()?;
            st.resolve();
            st.prune();
        }
        if st.positions.len() != k_before || config.per_iteration_sliding {
            res = st.residual();
        }
        i += 1;
    }

    // final stage on the full observation
    st.prune();
    let measure = SparseMeasure::from_parts(&st.amps, &st.positions)?;
    let objective_before_sliding = objective(obs, &measure, config.lambda)?;
    let sliding = slide(obs, &st.amps, &st.positions, config)?;
    let slid = SparseMeasure::from_parts(&sliding.amplitudes, &sliding.positions)?;
    let objective_after_sliding = objective(obs, &slid, config.lambda)?;

    let mut fin = State {
        full: obs,
        config,
        cuts: vec![obs.n_samples() - 1],
        level: 0,
        window: obs.clone(),
        positions: sliding.positions.clone(),
        amps: sliding.amplitudes.clone(),
        columns: Vec::new(),
        sys: GramSystem { gram: Vec::new(), rhs: Vec::new(), x_sq: 0.0 },
    };
    fin.rebuild()?;
    fin.prune();
    fin.resolve();
    fin.prune();
    let mut fused = 0;
    if config.fuse_radius_samples > 0.0 {
        let radius = config.fuse_radius_samples * obs.model.c / obs.model.spec.fs;
        let (amps, positions, count) = fuse_close_spikes(obs, &fin.amps, &fin.positions, radius, config)?;
        if count > 0 {
            fused = count;
            let again = slide(obs, &amps, &positions, config)?;
            let before = objective(obs, &SparseMeasure::from_parts(&amps, &positions)?, config.lambda)?;
            let after = objective(obs, &SparseMeasure::from_parts(&again.amplitudes, &again.positions)?, config.lambda)?;
            (fin.amps, fin.positions) = if after <= before { (again.amplitudes, again.positions) } else { (amps, positions) };
            fin.rebuild()?;
            fin.resolve();
            fin.prune();
        }
    }
    let res = fin.residual();
    let final_objective = fin.objective(&res);
    let kkt = kkt_violation(&fin.sys, &fin.amps, config.lambda);
    let measure = SparseMeasure::from_parts(&fin.amps, &fin.positions)?;
    Ok(RecoveryResult {
        measure,
        stop_reason,
        iterations: i,
        trace,
        extensions,
        objective_before_sliding,
        objective_after_sliding,
        sliding_iterations: sliding.iterations,
        sliding_termination: sliding.termination,
        fused,
        final_objective,
        final_residual_norm: dot(&res, &res).sqrt(),
        kkt_violation: kkt,
    })
}
