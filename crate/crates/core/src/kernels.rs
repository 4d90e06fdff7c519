//! Filter kernels and the per-sample observation kernel.
//!
//! The microphone `m` records sample `n` of a unit point source at `r` as
//!
//! ```text
//! γ_{m,n}(r) = κ(n / f_s − d / c) / (4π d),   d = ‖r − mic_m‖
//! ```
//!
//! where `κ` is the acquisition filter. Besides pointwise evaluation this
//! module provides whole-row routines (all `n` for one microphone), which is
//! where the solver spends its time. For a low-pass kernel whose cutoff equals
//! the sampling rate, the row routines use the identity
//! `sin(π(n − u)) = ±sin(π frac(u))` so a row costs one `sin`/`cos` pair
//! instead of one per sample.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Gaussian kernels are treated as exactly zero beyond this many standard
/// deviations (`exp(-38.7² / 2)` underflows to zero in f64).
pub const GAUSSIAN_SUPPORT_SIGMAS: f64 = 38.7;

const SINC_SERIES_LIMIT: f64 = 1e-4;
const SINC_DERIVATIVE_SERIES_LIMIT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterKernel {
    /// Ideal low-pass filter, `κ(t) = sinc(π f_s t)`.
    SincLowpass { fs: f64 },
    /// `κ(t) = exp(−t² / 2σ²)`.
    Gaussian { sigma: f64 },
}

impl FilterKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterKernel::SincLowpass { fs } if fs > 0.0 && fs.is_finite() => Ok(()),
            FilterKernel::Gaussian { sigma } if sigma > 0.0 && sigma.is_finite() => Ok(()),
            _ => Err(Error::invalid(format!("invalid kernel parameters: {self:?}"))),
        }
    }

    pub fn kappa(&self, t: f64) -> f64 {
        kappa(self, t)
    }

    pub fn kappa_prime(&self, t: f64) -> f64 {
        kappa_prime(self, t)
    }

    /// Half-width of the support, if the kernel is numerically compact.
    pub fn support(&self) -> Option<f64> {
        match *self {
            FilterKernel::SincLowpass { .. } => None,
            FilterKernel::Gaussian { sigma } => Some(GAUSSIAN_SUPPORT_SIGMAS * sigma),
        }
    }

    /// True when the integer-shift shortcut applies at sampling rate `fs`.
    fn on_sampling_lattice(&self, fs: f64) -> bool {
        matches!(*self, FilterKernel::SincLowpass { fs: k } if k == fs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub fs: f64,
    pub n_samples: usize,
}

impl SamplingSpec {
    pub fn new(fs: f64, n_samples: usize) -> Result<Self> {
        let spec = SamplingSpec { fs, n_samples };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with `N` chosen so that `(N − 1) / f_s` is the closest lattice
    /// time to `t_max`.
    pub fn from_duration(fs: f64, t_max: f64) -> Result<Self> {
        if !(t_max >= 0.0) || !t_max.is_finite() {
            return Err(Error::invalid(format!("duration must be nonnegative, got {t_max}")));
        }
        SamplingSpec::new(fs, (t_max * fs).round() as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(Error::invalid(format!("sampling rate must be positive, got {}", self.fs)));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("at least one sample is required"));
        }
        Ok(())
    }

    pub fn t_max(&self) -> f64 {
        (self.n_samples - 1) as f64 / self.fs
    }
}

/// `sin(x) / x` with the continuous extension at 0.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < SINC_SERIES_LIMIT {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Derivative of [`sinc`].
pub fn sinc_derivative(x: f64) -> f64 {
    if x.abs() < SINC_DERIVATIVE_SERIES_LIMIT {
        let x2 = x * x;
        x * (-1.0 / 3.0 + x2 * (1.0 / 30.0 - x2 * (1.0 / 840.0 - x2 / 45360.0)))
    } else {
        (x.cos() - x.sin() / x) / x
    }
}

/// Arguments within this many ulps of an integer are treated as lying on it,
/// so `k / f_s · f_s` lands exactly on the sinc zeros despite rounding.
const LATTICE_SNAP_ULPS: f64 = 8.0;

/// Splits `u = k + f` with `k` integer and `|f| ≤ 1/2`.
fn lattice_split(u: f64) -> (f64, f64) {
    let k = u.round();
    let f = u - k;
    if f.abs() <= LATTICE_SNAP_ULPS * f64::EPSILON * u.abs() {
        (k, 0.0)
    } else {
        (k, f)
    }
}

/// Low-pass kernel at `x = f_s t` cycles, exact at the integers.
fn sinc_cycles(x: f64) -> f64 {
    let (k, f) = lattice_split(x);
    if f == 0.0 {
        return if k == 0.0 { 1.0 } else { 0.0 };
    }
    if k == 0.0 {
        return sinc(PI * f);
    }
    // sin(πx) = (−1)^k sin(πf)
    let s = if k.rem_euclid(2.0) == 0.0 { 1.0 } else { -1.0 };
    s * (PI * f).sin() / (PI * x)
}

pub fn kappa(kernel: &FilterKernel, t: f64) -> f64 {
    match *kernel {
        FilterKernel::SincLowpass { fs } => sinc_cycles(fs * t),
        FilterKernel::Gaussian { sigma } => (-t * t / (2.0 * sigma * sigma)).exp(),
    }
}

/// `dκ/dt`.
pub fn kappa_prime(kernel: &FilterKernel, t: f64) -> f64 {
    match *kernel {
        FilterKernel::SincLowpass { fs } => PI * fs * sinc_derivative(PI * fs * t),
        FilterKernel::Gaussian { sigma } => {
            let s2 = sigma * sigma;
            -t / s2 * (-t * t / (2.0 * s2)).exp()
        }
    }
}

/// Sample range `[lo, hi)` where `κ(n / f_s − τ)` can be nonzero.
fn active_range(kernel: &FilterKernel, fs: f64, tau: f64, n: usize) -> (usize, usize) {
    match kernel.support() {
        None => (0, n),
        Some(w) => {
            let lo = ((tau - w) * fs).ceil().max(0.0);
            let hi = ((tau + w) * fs).floor() + 1.0;
            if hi <= 0.0 || lo >= n as f64 {
                (0, 0)
            } else {
                (lo as usize, (hi as usize).min(n))
            }
        }
    }
}

/// `(−1)^(n − k)` at `n = 0`.
fn parity_at_zero(k: f64) -> f64 {
    if k.rem_euclid(2.0) == 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `out[n] += scale · κ(n / f_s − τ)` for every `n`.
pub fn accumulate_kernel_row(kernel: &FilterKernel, fs: f64, tau: f64, scale: f64, out: &mut [f64]) {
    if kernel.on_sampling_lattice(fs) {
        let u = fs * tau;
        let (k, f) = lattice_split(u);
        let amp = -scale * (PI * f).sin() / PI;
        let mut s = parity_at_zero(k);
        for (n, o) in out.iter_mut().enumerate() {
            let w = n as f64 - k - f;
            if n as f64 == k {
                *o += scale * sinc(PI * f);
            } else {
                *o += amp * s / w;
            }
            s = -s;
        }
        return;
    }
    let (lo, hi) = active_range(kernel, fs, tau, out.len());
    for (n, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
        *o += scale * kappa(kernel, n as f64 / fs - tau);
    }
}

/// Fills `value[n] = κ(n / f_s − τ)` and `deriv[n] = κ'(n / f_s − τ)`.
pub fn kernel_row_with_derivative(
    kernel: &FilterKernel,
    fs: f64,
    tau: f64,
    value: &mut [f64],
    deriv: &mut [f64],
) {
    assert_eq!(value.len(), deriv.len());
    value.fill(0.0);
    deriv.fill(0.0);
    if kernel.on_sampling_lattice(fs) {
        let u = fs * tau;
        let (k, f) = lattice_split(u);
        let (sin_f, cos_f) = (PI * f).sin_cos();
        let mut s = parity_at_zero(k);
        for n in 0..value.len() {
            if n as f64 == k {
                value[n] = sinc(PI * f);
                deriv[n] = PI * fs * sinc_derivative(-PI * f);
            } else {
                let iw = 1.0 / (n as f64 - k - f);
                value[n] = -s * sin_f / PI * iw;
                deriv[n] = fs * s * (cos_f * iw + sin_f / PI * iw * iw);
            }
            s = -s;
        }
        return;
    }
    let (lo, hi) = active_range(kernel, fs, tau, value.len());
    for n in lo..hi {
        let t = n as f64 / fs - tau;
        value[n] = kappa(kernel, t);
        deriv[n] = kappa_prime(kernel, t);
    }
}

/// `(Σ_n v_n κ(n / f_s − τ), Σ_n v_n κ'(n / f_s − τ))`.
pub fn kernel_sums(kernel: &FilterKernel, fs: f64, tau: f64, v: &[f64]) -> (f64, f64) {
    if kernel.on_sampling_lattice(fs) {
        let u = fs * tau;
        let (k, f) = lattice_split(u);
        let (sin_f, cos_f) = (PI * f).sin_cos();
        let mut s = parity_at_zero(k);
        let (mut p, mut q, mut vk) = (0.0, 0.0, 0.0);
        for (n, &vn) in v.iter().enumerate() {
            if n as f64 == k {
                vk = vn;
            } else {
                let iw = 1.0 / (n as f64 - k - f);
                let t = s * vn * iw;
                p += t;
                q += t * iw;
            }
            s = -s;
        }
        let s0 = -sin_f / PI * p + vk * sinc(PI * f);
        let s1 = fs * (cos_f * p + sin_f / PI * q) + vk * PI * fs * sinc_derivative(-PI * f);
        return (s0, s1);
    }
    let (lo, hi) = active_range(kernel, fs, tau, v.len());
    let (mut s0, mut s1) = (0.0, 0.0);
    for (n, &vn) in v.iter().enumerate().take(hi).skip(lo) {
        let t = n as f64 / fs - tau;
        s0 += vn * kappa(kernel, t);
        s1 += vn * kappa_prime(kernel, t);
    }
    (s0, s1)
}

/// `Σ_n v_n κ(n / f_s − τ)` alone, for when the derivative is not needed.
pub fn kernel_sum_value(kernel: &FilterKernel, fs: f64, tau: f64, v: &[f64]) -> f64 {
    if kernel.on_sampling_lattice(fs) {
        let u = fs * tau;
        let (k, f) = lattice_split(u);
        let mut s = parity_at_zero(k);
        let (mut p, mut vk) = (0.0, 0.0);
        for (n, &vn) in v.iter().enumerate() {
            if n as f64 == k {
                vk = vn;
            } else {
                p += s * vn / (n as f64 - k - f);
            }
            s = -s;
        }
        return -(PI * f).sin() / PI * p + vk * sinc(PI * f);
    }
    let (lo, hi) = active_range(kernel, fs, tau, v.len());
    v[lo..hi]
        .iter()
        .enumerate()
        .map(|(i, &vn)| vn * kappa(kernel, (lo + i) as f64 / fs - tau))
        .sum()
}

/// Distance and unit direction from `mic` to `r`.
pub fn mic_geometry(mic: Vec3, r: Vec3) -> Result<(f64, Vec3)> {
    let diff = r - mic;
    let d = diff.norm();
    if d == 0.0 {
        return Err(Error::Singular { mic, position: r });
    }
    Ok((d, diff * (1.0 / d)))
}

/// Chain rule from `(Σ vκ, Σ vκ')` at distance `d` to the value and spatial
/// gradient of `Σ v γ`.
pub fn radial_value_and_gradient(s0: f64, s1: f64, d: f64, dir: Vec3, c: f64) -> (f64, Vec3) {
    let g = 1.0 / (4.0 * PI * d);
    let radial = -s1 * g / c - s0 * g / d;
    (s0 * g, dir * radial)
}

/// `γ_{m,n}(r)` for the microphone at `mic`.
pub fn gamma(
    kernel: &FilterKernel,
    spec: &SamplingSpec,
    c: f64,
    mic: Vec3,
    n: usize,
    r: Vec3,
) -> Result<f64> {
    let (d, _) = mic_geometry(mic, r)?;
    Ok(kappa(kernel, n as f64 / spec.fs - d / c) / (4.0 * PI * d))
}

/// `∂γ_{m,n}/∂r`.
pub fn gamma_grad(
    kernel: &FilterKernel,
    spec: &SamplingSpec,
    c: f64,
    mic: Vec3,
    n: usize,
    r: Vec3,
) -> Result<Vec3> {
    let (d, dir) = mic_geometry(mic, r)?;
    let t = n as f64 / spec.fs - d / c;
    Ok(radial_value_and_gradient(kappa(kernel, t), kappa_prime(kernel, t), d, dir, c).1)
}
