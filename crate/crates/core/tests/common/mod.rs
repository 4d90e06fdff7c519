//! Reference implementations shared by the integration tests. They follow
//! the textbook formulas directly and share no code with the library.
#![allow(dead_code)]

use std::f64::consts::PI;

use echoloc::forward::SparseMeasure;
use echoloc::geometry::{MicArray, Vec3};
use echoloc::kernels::FilterKernel;

pub fn naive_kappa(kernel: &FilterKernel, t: f64) -> f64 {
    match *kernel {
        FilterKernel::SincLowpass { fs } => {
            let x = PI * fs * t;
            if x == 0.0 {
                1.0
            } else {
                x.sin() / x
            }
        }
        FilterKernel::Gaussian { sigma } => (-t * t / (2.0 * sigma * sigma)).exp(),
    }
}

pub fn naive_gamma(kernel: &FilterKernel, fs: f64, c: f64, mic: Vec3, n: usize, r: Vec3) -> f64 {
    let dx = r.x - mic.x;
    let dy = r.y - mic.y;
    let dz = r.z - mic.z;
    let d = (dx * dx + dy * dy + dz * dz).sqrt();
    naive_kappa(kernel, n as f64 / fs - d / c) / (4.0 * PI * d)
}

/// Triple loop over microphones, samples and spikes.
pub fn naive_apply(measure: &SparseMeasure, array: &MicArray, kernel: &FilterKernel, fs: f64, n: usize, c: f64) -> Vec<f64> {
    let mut out = vec![0.0; array.len() * n];
    for (m, &mic) in array.positions.iter().enumerate() {
        for k in 0..n {
            let mut acc = 0.0;
            for s in &measure.spikes {
                acc += s.amplitude * naive_gamma(kernel, fs, c, mic, k, s.position);
            }
            out[m * n + k] = acc;
        }
    }
    out
}

/// Number of `(q, ε)` pairs of order at most `k`, counted by brute force over
/// the per-axis 1-D orders.
pub fn brute_force_count(k: u32) -> usize {
    let k = k as i32;
    let order = |q: i32, e: i32| if e == 1 { (2 * q).abs() } else { (2 * q - 1).abs() };
    let mut axis = Vec::new();
    for q in -k..=k + 1 {
        for e in [1, -1] {
            let o = order(q, e);
            if o <= k {
                axis.push(o);
            }
        }
    }
    let mut count = 0;
    for a in &axis {
        for b in &axis {
            for c in &axis {
                if a + b + c <= k {
                    count += 1;
                }
            }
        }
    }
    count
}

pub fn tetrahedral_array(center: Vec3, radius: f64) -> MicArray {
    let s = radius / 3f64.sqrt();
    let dirs = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    MicArray::new(dirs.iter().map(|d| center + Vec3::new(d[0] * s, d[1] * s, d[2] * s)).collect(), "tetra").unwrap()
}
