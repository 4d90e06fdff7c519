//! Dense BFGS with a projected Armijo line search.
//!
//! The projection maps a trial point back onto the feasible set after every
//! step. It is used to keep amplitudes nonnegative and spike positions out of
//! the exclusion balls around microphones; with the identity projection this
//! is plain BFGS.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsOptions {
    /// Stop when `‖∇f‖∞` falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Stop when an accepted step changes `f` by less than this, relative.
    pub f_rel_tol: f64,
    /// Stop when an accepted step is shorter than this, relative to `‖x‖∞`.
    pub step_rel_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
    /// Cap on `‖step‖∞` of the initial trial point of each line search.
    pub max_step: Option<f64>,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            grad_tol: 1e-9,
            max_iter: 200,
            f_rel_tol: 1e-15,
            step_rel_tol: 1e-15,
            c1: 1e-4,
            max_backtracks: 60,
            max_step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialInverseHessian {
    /// `h · I`.
    Scaled(f64),
    Diagonal(Vec<f64>),
    /// Row-major symmetric positive definite `n × n` matrix.
    Dense(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    StepTolerance,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

struct InverseHessian {
    n: usize,
    h: Vec<f64>,
}

impl InverseHessian {
    fn from_initial(n: usize, init: Option<&InitialInverseHessian>) -> Self {
        let mut h = vec![0.0; n * n];
        match init {
            None => (0..n).for_each(|i| h[i * n + i] = 1.0),
            Some(InitialInverseHessian::Scaled(s)) => (0..n).for_each(|i| h[i * n + i] = *s),
            Some(InitialInverseHessian::Diagonal(d)) => (0..n).for_each(|i| h[i * n + i] = d[i]),
            Some(InitialInverseHessian::Dense(m)) => h.copy_from_slice(m),
        }
        InverseHessian { n, h }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.h.chunks(self.n).map(|row| dot(row, v)).collect()
    }

    fn scale(&mut self, s: f64) {
        self.h.iter_mut().for_each(|x| *x *= s);
    }

    /// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
    fn update(&mut self, s: &[f64], y: &[f64]) {
        let n = self.n;
        let rho = 1.0 / dot(s, y);
        let hy = self.apply(y);
        let yhy = dot(y, &hy);
        let coef = rho * rho * yhy + rho;
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
            }
        }
    }
}

/// Minimizes `f` starting from `x0`. `fg` returns the value and gradient; it
/// may return a non-finite value to reject a point. `project` is applied to
/// every trial point.
pub fn minimize<F, P>(
    fg: F,
    project: P,
    x0: Vec<f64>,
    h0: Option<InitialInverseHessian>,
    opts: &BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&mut [f64]),
{
    let lower = vec![f64::NEG_INFINITY; x0.len()];
    minimize_bounded(fg, project, &lower, x0, h0, opts)
}

/// [`minimize`] with lower bounds. Variables sitting on their bound with a
/// gradient pushing outward are frozen for the step, and the gradient test
/// only looks at the remaining ones.
pub fn minimize_bounded<F, P>(
    mut fg: F,
    project: P,
    lower: &[f64],
    x0: Vec<f64>,
    h0: Option<InitialInverseHessian>,
    opts: &BfgsOptions,
) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    assert_eq!(lower.len(), n, "one lower bound per variable");
    let project = |x: &mut [f64]| {
        x.iter_mut().zip(lower).for_each(|(v, l)| *v = v.max(*l));
        project(x);
    };
    let mut x = x0;
    project(&mut x);
    let (mut f, mut g) = fg(&x);
    let shanno = h0.is_none();
    let mut hinv = InverseHessian::from_initial(n, h0.as_ref());
    let mut updated = false;
    let mut iterations = 0;
    let termination = loop {
        if !f.is_finite() {
            break Termination::LineSearchFailed;
        }
        let free: Vec<bool> = (0..n).map(|i| !(x[i] <= lower[i] && g[i] > 0.0)).collect();
        let g_free: Vec<f64> = g.iter().zip(&free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
        if inf_norm(&g_free) <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let direction = |h: &InverseHessian| -> Vec<f64> {
            h.apply(&g_free).iter().zip(&free).map(|(&v, &f)| if f { -v } else { 0.0 }).collect()
        };
        let mut d = direction(&hinv);
        if dot(&d, &g_free) >= 0.0 {
            hinv = InverseHessian::from_initial(n, h0.as_ref());
            updated = false;
            d = direction(&hinv);
        }

        let mut t = match opts.max_step {
            Some(cap) if inf_norm(&d) > cap => cap / inf_norm(&d),
            _ => 1.0,
        };
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut trial);
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let slope = dot(&g, &s);
            let (ft, gt) = fg(&trial);
            let ok = ft.is_finite()
                && if slope < 0.0 { ft <= f + opts.c1 * slope } else { ft < f };
            if ok {
                accepted = Some((trial, s, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, s, f_new, g_new)) = accepted else {
            break Termination::LineSearchFailed;
        };

        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if shanno && !updated {
                hinv.scale(sy / dot(&y, &y));
            }
            hinv.update(&s, &y);
            updated = true;
        }

        let f_change = (f - f_new).abs();
        let step = inf_norm(&s);
        let x_scale = inf_norm(&x_new).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if f_change <= opts.f_rel_tol * f.abs().max(f64::MIN_POSITIVE) {
            break Termination::FunctionTolerance;
        }
        if step <= opts.step_rel_tol * x_scale {
            break Termination::StepTolerance;
        }
    };
    BfgsResult { x, f, grad: g, iterations, termination }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(rosenbrock, |_| {}, vec![-1.2, 1.0], None, &BfgsOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{r:?}");
        assert!((r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.f < 1e-12);
    }

    #[test]
    fn quadratic_converges_to_gradient_tolerance() {
        let diag = [1.0, 10.0, 100.0];
        let fg = |x: &[f64]| {
            let f = 0.5 * x.iter().zip(&diag).map(|(v, d)| d * (v - 1.0) * (v - 1.0)).sum::<f64>();
            let g = x.iter().zip(&diag).map(|(v, d)| d * (v - 1.0)).collect();
            (f, g)
        };
        let r = minimize(fg, |_| {}, vec![0.0; 3], Some(InitialInverseHessian::Scaled(0.01)), &BfgsOptions::default());
        assert_eq!(r.termination, Termination::GradientTolerance);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_keeps_iterates_feasible() {
        // minimum of (x + 1)² + (y − 2)² over x ≥ 0 is (0, 2)
        let fg = |x: &[f64]| ((x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2), vec![2.0 * (x[0] + 1.0), 2.0 * (x[1] - 2.0)]);
        let proj = |x: &mut [f64]| x[0] = x[0].max(0.0);
        let r = minimize(fg, proj, vec![3.0, -1.0], None, &BfgsOptions::default());
        assert!(r.x[0] == 0.0);
        assert!((r.x[1] - 2.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn never_increases_objective() {
        let mut seen = Vec::new();
        let fg = |x: &[f64]| {
            let f = x[0].powi(4) + (x[1] - x[0]).powi(2);
            (f, vec![4.0 * x[0].powi(3) - 2.0 * (x[1] - x[0]), 2.0 * (x[1] - x[0])])
        };
        let r = minimize(
            |x: &[f64]| {
                let out = fg(x);
                seen.push(out.0);
                out
            },
            |_| {},
            vec![2.0, -3.0],
            None,
            &BfgsOptions::default(),
        );
        assert!(r.f <= seen[0]);
        assert!(r.f < 1e-6);
    }

    #[test]
    fn bounded_freezes_active_variables() {
        // minimum of (x + 1)² + (x − y)² + (y − 2)² over x ≥ 0 is at x = 0, y = 1
        let fg = |x: &[f64]| {
            let f = (x[0] + 1.0).powi(2) + (x[0] - x[1]).powi(2) + (x[1] - 2.0).powi(2);
            let g = vec![2.0 * (x[0] + 1.0) + 2.0 * (x[0] - x[1]), -2.0 * (x[0] - x[1]) + 2.0 * (x[1] - 2.0)];
            (f, g)
        };
        let r = minimize_bounded(fg, |_| {}, &[0.0, f64::NEG_INFINITY], vec![2.0, -4.0], None, &BfgsOptions::default());
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 1.0).abs() < 1e-7, "{r:?}");
    }

    #[test]
    fn step_cap_limits_first_trial() {
        let mut first = None;
        let fg = |x: &[f64]| {
            if first.is_none() && x[0] != 0.0 {
                first = Some(x[0]);
            }
            (0.5 * (x[0] - 100.0).powi(2), vec![x[0] - 100.0])
        };
        let opts = BfgsOptions { max_step: Some(0.5), ..BfgsOptions::default() };
        let r = minimize(fg, |_| {}, vec![0.0], Some(InitialInverseHessian::Scaled(1.0)), &opts);
        assert_eq!(first, Some(0.5));
        assert!((r.x[0] - 100.0).abs() < 1e-6);
    }
}
