//! Observation operator on sparse measures, its adjoint, RIR synthesis and
//! the noise model.
//!
//! Observations are dense `M × N` matrices stored row-major, one row per
//! microphone. The operator maps a measure `Σ a_k δ_{r_k}` to
//! `x_{m,n} = Σ_k a_k γ_{m,n}(r_k)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{enumerate_image_sources, ImageSourceSet, MicArray, Scenario, Vec3};
use crate::kernels::{
    accumulate_kernel_row, kernel_row_with_derivative, kernel_sum_value, kernel_sums, mic_geometry,
    radial_value_and_gradient, FilterKernel, SamplingSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpikeRecord", into = "SpikeRecord")]
pub struct Spike {
    pub amplitude: f64,
    pub position: Vec3,
}

#[derive(Serialize, Deserialize)]
struct SpikeRecord {
    a: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<SpikeRecord> for Spike {
    fn from(r: SpikeRecord) -> Self {
        Spike { amplitude: r.a, position: Vec3::new(r.x, r.y, r.z) }
    }
}

impl From<Spike> for SpikeRecord {
    fn from(s: Spike) -> Self {
        SpikeRecord { a: s.amplitude, x: s.position.x, y: s.position.y, z: s.position.z }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMeasure {
    pub spikes: Vec<Spike>,
}

impl SparseMeasure {
    pub fn new(spikes: Vec<Spike>) -> Result<Self> {
        for s in &spikes {
            if !(s.amplitude >= 0.0) || !s.amplitude.is_finite() {
                return Err(Error::invalid(format!("spike amplitude must be nonnegative, got {}", s.amplitude)));
            }
            if !s.position.is_finite() {
                return Err(Error::invalid(format!("non-finite spike position {}", s.position)));
            }
        }
        Ok(SparseMeasure { spikes })
    }

    pub fn from_parts(amplitudes: &[f64], positions: &[Vec3]) -> Result<Self> {
        if amplitudes.len() != positions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for {} positions",
                amplitudes.len(),
                positions.len()
            )));
        }
        SparseMeasure::new(
            amplitudes
                .iter()
                .zip(positions)
                .map(|(&amplitude, &position)| Spike { amplitude, position })
                .collect(),
        )
    }

    pub fn from_image_sources(set: &ImageSourceSet) -> Self {
        SparseMeasure {
            spikes: set
                .sources
                .iter()
                .map(|s| Spike { amplitude: s.amplitude, position: s.position })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.spikes.iter().map(|s| s.position).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.spikes.iter().map(|s| s.amplitude).collect()
    }

    /// Sum of amplitudes, which is the total-variation norm for a nonnegative
    /// measure.
    pub fn total_mass(&self) -> f64 {
        self.spikes.iter().map(|s| s.amplitude.abs()).sum()
    }
}

/// Everything needed to evaluate `γ`: the array, the filter, the sampling
/// grid and the speed of sound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub array: MicArray,
    pub kernel: FilterKernel,
    pub spec: SamplingSpec,
    pub c: f64,
}

impl ForwardModel {
    pub fn new(array: MicArray, kernel: FilterKernel, spec: SamplingSpec, c: f64) -> Result<Self> {
        kernel.validate()?;
        spec.validate()?;
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("speed of sound must be positive, got {c}")));
        }
        Ok(ForwardModel { array, kernel, spec, c })
    }

    pub fn n_mics(&self) -> usize {
        self.array.len()
    }

    pub fn n_samples(&self) -> usize {
        self.spec.n_samples
    }

    /// `M · N`.
    pub fn dim(&self) -> usize {
        self.n_mics() * self.n_samples()
    }

    /// Same model restricted to the first `j` samples.
    pub fn truncated(&self, j: usize) -> Result<Self> {
        if j == 0 || j > self.spec.n_samples {
            return Err(Error::invalid(format!(
                "sample count {j} outside [1, {}]",
                self.spec.n_samples
            )));
        }
        Ok(ForwardModel { spec: SamplingSpec { n_samples: j, ..self.spec }, ..self.clone() })
    }

    pub fn check_position(&self, r: Vec3) -> Result<()> {
        for &mic in &self.array.positions {
            mic_geometry(mic, r)?;
        }
        Ok(())
    }

    /// `γ(r)` as an `M · N` vector.
    pub fn gamma_column(&self, r: Vec3) -> Result<Vec<f64>> {
        self.check_position(r)?;
        let mut out = vec![0.0; self.dim()];
        self.accumulate(r, 1.0, &mut out);
        Ok(out)
    }

    /// `γ(r)` and its three partial derivatives, each an `M · N` vector.
    pub fn gamma_column_with_grad(&self, r: Vec3) -> Result<(Vec<f64>, [Vec<f64>; 3])> {
        let n = self.n_samples();
        let mut value = vec![0.0; self.dim()];
        let mut grad = [vec![0.0; self.dim()], vec![0.0; self.dim()], vec![0.0; self.dim()]];
        let mut kv = vec![0.0; n];
        let mut kd = vec![0.0; n];
        for (m, &mic) in self.array.positions.iter().enumerate() {
            let (d, dir) = mic_geometry(mic, r)?;
            kernel_row_with_derivative(&self.kernel, self.spec.fs, d / self.c, &mut kv, &mut kd);
            let g = 1.0 / (4.0 * PI * d);
            let row = m * n..(m + 1) * n;
            for (i, idx) in row.enumerate() {
                value[idx] = kv[i] * g;
                let radial = -kd[i] * g / self.c - kv[i] * g / d;
                grad[0][idx] = radial * dir.x;
                grad[1][idx] = radial * dir.y;
                grad[2][idx] = radial * dir.z;
            }
        }
        Ok((value, grad))
    }

    /// `out += a · γ(r)`; `r` must already be checked.
    fn accumulate(&self, r: Vec3, a: f64, out: &mut [f64]) {
        let n = self.n_samples();
        for (m, row) in out.chunks_mut(n).enumerate() {
            let d = self.array.positions[m].distance(r);
            accumulate_kernel_row(&self.kernel, self.spec.fs, d / self.c, a / (4.0 * PI * d), row);
        }
    }

    /// Applies the operator to a measure.
    pub fn apply(&self, measure: &SparseMeasure) -> Result<Observation> {
        for s in &measure.spikes {
            self.check_position(s.position)?;
        }
        let n = self.n_samples();
        let mut data = vec![0.0; self.dim()];
        data.par_chunks_mut(n).enumerate().for_each(|(m, row)| {
            let mic = self.array.positions[m];
            for s in &measure.spikes {
                let d = mic.distance(s.position);
                accumulate_kernel_row(
                    &self.kernel,
                    self.spec.fs,
                    d / self.c,
                    s.amplitude / (4.0 * PI * d),
                    row,
                );
            }
        });
        Ok(Observation { model: self.clone(), data })
    }

    /// `Σ_{m,n} v_{m,n} γ_{m,n}(r)` without the gradient.
    pub fn adjoint_value(&self, v: &[f64], r: Vec3) -> Result<f64> {
        self.check_len(v)?;
        let n = self.n_samples();
        let mut value = 0.0;
        for (m, &mic) in self.array.positions.iter().enumerate() {
            let (d, _) = mic_geometry(mic, r)?;
            let s0 = kernel_sum_value(&self.kernel, self.spec.fs, d / self.c, &v[m * n..(m + 1) * n]);
            value += s0 / (4.0 * PI * d);
        }
        Ok(value)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for a {}×{} observation",
                v.len(),
                self.n_mics(),
                self.n_samples()
            )));
        }
        Ok(())
    }

    /// `Σ_{m,n} v_{m,n} γ_{m,n}(r)` and its gradient with respect to `r`.
    pub fn adjoint_eval(&self, v: &[f64], r: Vec3) -> Result<(f64, Vec3)> {
        self.check_len(v)?;
        let n = self.n_samples();
        let mut value = 0.0;
        let mut grad = Vec3::ZERO;
        for (m, &mic) in self.array.positions.iter().enumerate() {
            let (d, dir) = mic_geometry(mic, r)?;
            let (s0, s1) = kernel_sums(&self.kernel, self.spec.fs, d / self.c, &v[m * n..(m + 1) * n]);
            let (val, g) = radial_value_and_gradient(s0, s1, d, dir, self.c);
            value += val;
            grad += g;
        }
        Ok((value, grad))
    }
}

/// Sampled pressure at every microphone.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub model: ForwardModel,
    /// Row-major `M × N`.
    pub data: Vec<f64>,
}

impl Observation {
    pub fn new(model: ForwardModel, data: Vec<f64>) -> Result<Self> {
        if data.len() != model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}×{} observation",
                data.len(),
                model.n_mics(),
                model.n_samples()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("observation contains non-finite samples"));
        }
        Ok(Observation { model, data })
    }

    pub fn zeros(model: ForwardModel) -> Self {
        let data = vec![0.0; model.dim()];
        Observation { model, data }
    }

    pub fn n_mics(&self) -> usize {
        self.model.n_mics()
    }

    pub fn n_samples(&self) -> usize {
        self.model.n_samples()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let n = self.n_samples();
        &self.data[m * n..(m + 1) * n]
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.n_samples() + n]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    /// `x − Γψ`.
    pub fn residual(&self, measure: &SparseMeasure) -> Result<Observation> {
        let fit = self.model.apply(measure)?;
        let data = self.data.iter().zip(&fit.data).map(|(x, y)| x - y).collect();
        Ok(Observation { model: self.model.clone(), data })
    }

    /// First `j` samples of every row.
    pub fn truncate_samples(&self, j: usize) -> Result<Observation> {
        let model = self.model.truncated(j)?;
        let n = self.n_samples();
        let data = self.data.chunks(n).flat_map(|row| row[..j].iter().copied()).collect();
        Ok(Observation { model, data })
    }

    /// Adds white Gaussian noise with `σ = max|x| · 10^(−psnr/20)`.
    ///
    /// Entry `i` draws from its own ChaCha stream, so the result does not
    /// depend on how the work is split across threads.
    pub fn add_noise(&self, psnr_db: f64, seed: u64) -> Result<Observation> {
        if psnr_db.is_nan() {
            return Err(Error::invalid("PSNR must be a number"));
        }
        let peak = self.max_abs();
        if peak == 0.0 {
            return Err(Error::invalid("cannot scale noise to an all-zero observation"));
        }
        let sigma = noise_sigma(peak, psnr_db);
        let data = self
            .data
            .par_iter()
            .enumerate()
            .map(|(i, &x)| x + sigma * standard_normal_entry(seed, i as u64))
            .collect();
        Ok(Observation { model: self.model.clone(), data })
    }
}

pub fn noise_sigma(peak: f64, psnr_db: f64) -> f64 {
    peak * 10f64.powf(-psnr_db / 20.0)
}

/// The standard normal draw used for entry `index` under `seed`.
pub fn standard_normal_entry(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.sample(StandardNormal)
}

/// Enumerates the image sources of `scenario` up to `max_order` and renders
/// them at the array.
pub fn synthesize_rir(
    scenario: &Scenario,
    kernel: FilterKernel,
    spec: SamplingSpec,
    max_order: u32,
) -> Result<(Observation, ImageSourceSet)> {
    let set = enumerate_image_sources(&scenario.room, scenario.src, max_order)?;
    let model = ForwardModel::new(scenario.array.clone(), kernel, spec, scenario.c)?;
    let obs = model.apply(&SparseMeasure::from_image_sources(&set))?;
    Ok((obs, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gamma, gamma_grad};

    fn model(kernel: FilterKernel, fs: f64, n: usize) -> ForwardModel {
        let array = MicArray::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.02), Vec3::new(0.0, 0.13, -0.05)],
            "test",
        )
        .unwrap();
        ForwardModel::new(array, kernel, SamplingSpec::new(fs, n).unwrap(), 343.0).unwrap()
    }

    fn spikes() -> SparseMeasure {
        SparseMeasure::from_parts(
            &[1.0, 0.4, 0.25],
            &[Vec3::new(1.0, 0.3, 0.2), Vec3::new(-0.7, 1.1, 0.4), Vec3::new(0.5, -2.0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn empty_measure_gives_zeros() {
        let m = model(FilterKernel::SincLowpass { fs: 8000.0 }, 8000.0, 50);
        let obs = m.apply(&SparseMeasure::default()).unwrap();
        assert!(obs.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn apply_matches_pointwise_gamma() {
        for kernel in [
            FilterKernel::SincLowpass { fs: 16000.0 },
            FilterKernel::SincLowpass { fs: 12000.0 },
            FilterKernel::Gaussian { sigma: 3e-5 },
        ] {
            let m = model(kernel, 16000.0, 200);
            let mu = spikes();
            let obs = m.apply(&mu).unwrap();
            for (mi, &mic) in m.array.positions.iter().enumerate() {
                for n in 0..200 {
                    let expected: f64 = mu
                        .spikes
                        .iter()
                        .map(|s| s.amplitude * gamma(&kernel, &m.spec, m.c, mic, n, s.position).unwrap())
                        .sum();
                    assert!((obs.get(mi, n) - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn column_with_grad_matches_pointwise() {
        let kernel = FilterKernel::SincLowpass { fs: 24000.0 };
        let m = model(kernel, 24000.0, 120);
        let r = Vec3::new(0.8, -0.6, 0.3);
        let (v, g) = m.gamma_column_with_grad(r).unwrap();
        let col = m.gamma_column(r).unwrap();
        for (mi, &mic) in m.array.positions.iter().enumerate() {
            for n in 0..120 {
                let idx = mi * 120 + n;
                assert!((v[idx] - col[idx]).abs() < 1e-15);
                let gg = gamma_grad(&kernel, &m.spec, m.c, mic, n, r).unwrap();
                for a in 0..3 {
                    assert!((g[a][idx] - gg[a]).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn adjoint_of_own_column_is_its_squared_norm() {
        let m = model(FilterKernel::SincLowpass { fs: 8000.0 }, 8000.0, 80);
        let r = Vec3::new(0.4, 0.5, 0.6);
        let col = m.gamma_column(r).unwrap();
        let (val, _) = m.adjoint_eval(&col, r).unwrap();
        assert!((m.adjoint_value(&col, r).unwrap() - val).abs() < 1e-15);
        let sq: f64 = col.iter().map(|x| x * x).sum();
        assert!(val > 0.0);
        assert!((val - sq).abs() < 1e-12 * sq);
        let (z, zg) = m.adjoint_eval(&vec![0.0; m.dim()], r).unwrap();
        assert_eq!(z, 0.0);
        assert_eq!(zg, Vec3::ZERO);
    }

    #[test]
    fn residual_of_truth_vanishes() {
        let m = model(FilterKernel::Gaussian { sigma: 5e-5 }, 16000.0, 150);
        let obs = m.apply(&spikes()).unwrap();
        let res = obs.residual(&spikes()).unwrap();
        assert!(res.max_abs() < 1e-12);
        let same = obs.residual(&SparseMeasure::default()).unwrap();
        assert_eq!(same.data, obs.data);
    }

    #[test]
    fn truncation() {
        let m = model(FilterKernel::SincLowpass { fs: 8000.0 }, 8000.0, 40);
        let obs = m.apply(&spikes()).unwrap();
        assert_eq!(obs.truncate_samples(40).unwrap(), obs);
        let first = obs.truncate_samples(1).unwrap();
        assert_eq!(first.data, vec![obs.get(0, 0), obs.get(1, 0), obs.get(2, 0)]);
        assert!(obs.truncate_samples(0).is_err());
        assert!(obs.truncate_samples(41).is_err());
    }

    #[test]
    fn noise_properties() {
        let m = model(FilterKernel::SincLowpass { fs: 8000.0 }, 8000.0, 40);
        let obs = m.apply(&spikes()).unwrap();
        let a = obs.add_noise(30.0, 9).unwrap();
        assert_eq!(a, obs.add_noise(30.0, 9).unwrap());
        assert_ne!(a, obs.add_noise(30.0, 10).unwrap());
        let quiet = obs.add_noise(400.0, 1).unwrap();
        for (x, y) in quiet.data.iter().zip(&obs.data) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((noise_sigma(1.0, 20.0) - 0.1).abs() < 1e-15);
        assert!(Observation::zeros(m).add_noise(20.0, 0).is_err());
    }

    #[test]
    fn singular_spike_is_rejected() {
        let m = model(FilterKernel::SincLowpass { fs: 8000.0 }, 8000.0, 10);
        let bad = SparseMeasure::from_parts(&[1.0], &[m.array.positions[1]]).unwrap();
        assert!(matches!(m.apply(&bad), Err(Error::Singular { .. })));
    }

    #[test]
    fn spike_json_shape() {
        let s = Spike { amplitude: 0.5, position: Vec3::new(1.0, 2.0, 3.0) };
        let j = serde_json::to_value(s).unwrap();
        assert_eq!(j, serde_json::json!({"a": 0.5, "x": 1.0, "y": 2.0, "z": 3.0}));
    }
}
