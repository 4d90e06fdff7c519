//! Nonnegative LASSO on a fixed set of columns.
//!
//! Solves `min_{a ≥ 0} ½‖x − G a‖² + λ Σ a_k` in Gram form: only
//! `A = GᵀG` and `b = Gᵀx` are needed. Cyclic coordinate descent with the
//! closed-form update `a_k ← max(0, (b_k − Σ_{j≠k} A_kj a_j − λ) / A_kk)`
//! is followed by a Cholesky solve on the active set, which lands the
//! optimality conditions at rounding level.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Observation;
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    /// Stop when no coordinate moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { tol: 1e-12, max_sweeps: 10_000 }
    }
}

/// Gram-form problem data.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSystem {
    /// Row-major `K × K`.
    pub gram: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `‖x‖²`.
    pub x_sq: f64,
}

impl GramSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn from_columns(columns: &[Vec<f64>], x: &[f64]) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.len() != x.len()) {
            return Err(Error::DimensionMismatch(format!(
                "column of length {} against data of length {}",
                c.len(),
                x.len()
            )));
        }
        let k = columns.len();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
        let dots: Vec<f64> = pairs.par_iter().map(|&(i, j)| dot(&columns[i], &columns[j])).collect();
        let mut gram = vec![0.0; k * k];
        for (&(i, j), d) in pairs.iter().zip(dots) {
            gram[i * k + j] = d;
            gram[j * k + i] = d;
        }
        let rhs = columns.par_iter().map(|c| dot(c, x)).collect();
        Ok(GramSystem { gram, rhs, x_sq: dot(x, x) })
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.len() + j]
    }

    /// `Gᵀ(x − G a) = b − A a`.
    pub fn correlations(&self, amps: &[f64]) -> Vec<f64> {
        let k = self.len();
        (0..k)
            .map(|i| self.rhs[i] - (0..k).map(|j| self.a(i, j) * amps[j]).sum::<f64>())
            .collect()
    }

    /// `½‖x − G a‖² + λ Σ a` evaluated through the Gram form.
    pub fn objective(&self, amps: &[f64], lambda: f64) -> f64 {
        let k = self.len();
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                quad += amps[i] * self.a(i, j) * amps[j];
            }
        }
        0.5 * self.x_sq - dot(&self.rhs, amps) + 0.5 * quad + lambda * amps.iter().sum::<f64>()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst violation of the optimality conditions: `|c_k − λ|` where
/// `a_k > 0`, and `max(0, c_k − λ)` where `a_k = 0`, with `c = b − A a`.
pub fn kkt_violation(sys: &GramSystem, amps: &[f64], lambda: f64) -> f64 {
    sys.correlations(amps)
        .iter()
        .zip(amps)
        .map(|(&c, &a)| if a > 0.0 { (c - lambda).abs() } else { (c - lambda).max(0.0) })
        .fold(0.0, f64::max)
}

/// Solves the Gram-form problem from `warm` (zeros when `None`).
pub fn solve_gram(sys: &GramSystem, lambda: f64, warm: Option<&[f64]>, opts: &LassoOptions) -> Vec<f64> {
    let k = sys.len();
    let mut a: Vec<f64> = match warm {
        Some(w) if w.len() == k => w.iter().map(|v| v.max(0.0)).collect(),
        _ => vec![0.0; k],
    };
    // c = A a
    let mut c: Vec<f64> = (0..k).map(|i| (0..k).map(|j| sys.a(i, j) * a[j]).sum()).collect();
    for _ in 0..opts.max_sweeps {
        let mut max_change: f64 = 0.0;
        for i in 0..k {
            let aii = sys.a(i, i);
            if aii <= 0.0 {
                continue;
            }
            let partial = c[i] - aii * a[i];
            let new = ((sys.rhs[i] - partial - lambda) / aii).max(0.0);
            let delta = new - a[i];
            if delta != 0.0 {
                for j in 0..k {
                    c[j] += sys.a(j, i) * delta;
                }
                a[i] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < opts.tol {
            break;
        }
    }
    polish(sys, lambda, a)
}

/// Re-solves `A_SS a_S = b_S − λ` on the support `S` of `a` and keeps the
/// result when it is feasible and no worse on the optimality conditions.
fn polish(sys: &GramSystem, lambda: f64, a: Vec<f64>) -> Vec<f64> {
    let support: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    if support.is_empty() {
        return a;
    }
    let s = support.len();
    let m = DMatrix::from_fn(s, s, |i, j| sys.a(support[i], support[j]));
    let rhs = DVector::from_fn(s, |i, _| sys.rhs[support[i]] - lambda);
    let Some(chol) = m.cholesky() else {
        return a;
    };
    let sol = chol.solve(&rhs);
    if sol.iter().any(|&v| !(v > 0.0)) {
        return a;
    }
    let mut polished = vec![0.0; a.len()];
    for (i, &k) in support.iter().enumerate() {
        polished[k] = sol[i];
    }
    if kkt_violation(sys, &polished, lambda) <= kkt_violation(sys, &a, lambda) {
        polished
    } else {
        a
    }
}

/// Amplitudes for spikes at `positions` fitted to `obs`.
pub fn lasso_nonneg(obs: &Observation, positions: &[Vec3], lambda: f64, opts: &LassoOptions) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let columns: Vec<Vec<f64>> = positions
        .par_iter()
        .map(|&r| obs.model.gamma_column(r))
        .collect::<Result<_>>()?;
    let sys = GramSystem::from_columns(&columns, &obs.data)?;
    Ok(solve_gram(&sys, lambda, None, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> (GramSystem, Vec<f64>) {
        let cols = vec![
            vec![1.0, 0.2, 0.0, 0.1],
            vec![0.1, 1.0, 0.3, 0.0],
            vec![0.0, 0.1, 1.0, 0.4],
        ];
        let truth = [0.7, 0.0, 0.3];
        let x: Vec<f64> = (0..4).map(|r| (0..3).map(|k| cols[k][r] * truth[k]).sum()).collect();
        (GramSystem::from_columns(&cols, &x).unwrap(), truth.to_vec())
    }

    #[test]
    fn recovers_noiseless_amplitudes_as_lambda_vanishes() {
        let (sys, truth) = system();
        let a = solve_gram(&sys, 1e-12, None, &LassoOptions::default());
        for (x, y) in a.iter().zip(&truth) {
            assert!((x - y).abs() < 1e-6, "{a:?}");
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let cols = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        let sys = GramSystem::from_columns(&cols, &[0.0, 0.0]).unwrap();
        assert_eq!(solve_gram(&sys, 0.1, None, &LassoOptions::default()), vec![0.0, 0.0]);
    }

    #[test]
    fn kkt_holds_after_solve() {
        let (sys, _) = system();
        for lambda in [1e-4, 0.05, 0.3, 2.0] {
            let a = solve_gram(&sys, lambda, None, &LassoOptions::default());
            assert!(a.iter().all(|&v| v >= 0.0));
            assert!(kkt_violation(&sys, &a, lambda) < 1e-12, "lambda={lambda}");
        }
    }

    #[test]
    fn warm_start_reaches_same_point() {
        let (sys, _) = system();
        let cold = solve_gram(&sys, 0.01, None, &LassoOptions::default());
        let warm = solve_gram(&sys, 0.01, Some(&[5.0, -1.0, 0.2]), &LassoOptions::default());
        for (a, b) in cold.iter().zip(&warm) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_matches_direct_residual() {
        let cols = vec![vec![1.0, 0.5, -0.2], vec![0.3, -0.4, 1.0]];
        let x = [0.9, 0.1, 0.5];
        let sys = GramSystem::from_columns(&cols, &x).unwrap();
        let a = [0.4, 0.25];
        let r: Vec<f64> = (0..3).map(|i| x[i] - cols[0][i] * a[0] - cols[1][i] * a[1]).collect();
        let direct = 0.5 * dot(&r, &r) + 0.1 * (a[0] + a[1]);
        assert!((sys.objective(&a, 0.1) - direct).abs() < 1e-15);
    }
}
