use std::ffi::{CStr, CString};
use std::ptr;

use echoloc_ffi::*;

const DIMS: [f64; 3] = [4.0, 3.5, 2.8];
const ABSORPTION: [f64; 6] = [0.1, 0.2, 0.15, 0.05, 0.3, 0.25];
const SRC: [f64; 3] = [1.2, 1.1, 1.4];

fn tetra_mics() -> Vec<f64> {
    let c = [2.6, 2.0, 1.3];
    let r = 0.05;
    let dirs = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    dirs.iter()
        .flat_map(|d| (0..3).map(move |i| c[i] + r * d[i] / 3f64.sqrt()))
        .collect()
}

fn last_error() -> String {
    let p = echoloc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulate(fs: f64, t_max: f64, max_order: u32) -> *mut EcholocObservation {
    let mics = tetra_mics();
    let mut obs = ptr::null_mut();
    let status = unsafe {
        echoloc_simulate(
            DIMS.as_ptr(),
            ABSORPTION.as_ptr(),
            SRC.as_ptr(),
            mics.as_ptr(),
            4,
            fs,
            t_max,
            max_order,
            343.0,
            &mut obs,
        )
    };
    assert_eq!(status, EcholocStatus::Ok);
    obs
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(echoloc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn image_source_count_matches_closed_form() {
    let mut n = 0usize;
    for order in [0u32, 1, 2, 20] {
        let s = unsafe { echoloc_image_source_count(DIMS.as_ptr(), ABSORPTION.as_ptr(), SRC.as_ptr(), order, &mut n) };
        assert_eq!(s, EcholocStatus::Ok);
        let k = order as usize;
        assert_eq!(n, (2 * k + 1) * (2 * k * k + 2 * k + 3) / 3);
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut n = 0usize;
    let s = unsafe { echoloc_image_source_count(ptr::null(), ABSORPTION.as_ptr(), SRC.as_ptr(), 1, &mut n) };
    assert_eq!(s, EcholocStatus::NullPointer);
    assert!(last_error().contains("dims"));
    let s = unsafe { echoloc_image_source_count(DIMS.as_ptr(), ABSORPTION.as_ptr(), SRC.as_ptr(), 1, ptr::null_mut()) };
    assert_eq!(s, EcholocStatus::NullPointer);
    let mut shape = (0usize, 0usize);
    let s = unsafe { echoloc_observation_shape(ptr::null(), &mut shape.0, &mut shape.1) };
    assert_eq!(s, EcholocStatus::NullPointer);
    assert_eq!(unsafe { echoloc_result_spike_count(ptr::null()) }, 0);
    assert_eq!(unsafe { echoloc_result_stop_reason(ptr::null()) }, -1);
    assert!(unsafe { echoloc_result_objective(ptr::null()) }.is_nan());
    unsafe {
        echoloc_observation_free(ptr::null_mut());
        echoloc_result_free(ptr::null_mut());
        echoloc_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_room_is_rejected() {
    let mut n = 0usize;
    let bad = [0.1, 0.2, 1.5, 0.05, 0.3, 0.25];
    let s = unsafe { echoloc_image_source_count(DIMS.as_ptr(), bad.as_ptr(), SRC.as_ptr(), 1, &mut n) };
    assert_eq!(s, EcholocStatus::InvalidInput);
    assert!(!last_error().is_empty());
}

#[test]
fn simulate_shape_and_copy() {
    let obs = simulate(8000.0, 0.02, 2);
    let (mut m, mut n) = (0usize, 0usize);
    assert_eq!(unsafe { echoloc_observation_shape(obs, &mut m, &mut n) }, EcholocStatus::Ok);
    assert_eq!(m, 4);
    assert_eq!(n, 161);
    let mut buf = vec![0.0; m * n];
    assert_eq!(unsafe { echoloc_observation_data(obs, buf.as_mut_ptr(), buf.len()) }, EcholocStatus::Ok);
    assert!(buf.iter().all(|v| v.is_finite()));
    assert!(buf.iter().any(|v| *v != 0.0));
    let mut small = vec![0.0; 3];
    let s = unsafe { echoloc_observation_data(obs, small.as_mut_ptr(), small.len()) };
    assert_eq!(s, EcholocStatus::InvalidInput);
    unsafe { echoloc_observation_free(obs) };
}

#[test]
fn observation_round_trips_through_new() {
    let obs = simulate(8000.0, 0.01, 1);
    let mut buf = vec![0.0; 4 * 81];
    assert_eq!(unsafe { echoloc_observation_data(obs, buf.as_mut_ptr(), buf.len()) }, EcholocStatus::Ok);
    let mics = tetra_mics();
    let mut copy = ptr::null_mut();
    let s = unsafe { echoloc_observation_new(mics.as_ptr(), 4, 8000.0, 81, 343.0, buf.as_ptr(), &mut copy) };
    assert_eq!(s, EcholocStatus::Ok);
    let mut back = vec![0.0; buf.len()];
    assert_eq!(unsafe { echoloc_observation_data(copy, back.as_mut_ptr(), back.len()) }, EcholocStatus::Ok);
    assert_eq!(back, buf);
    unsafe {
        echoloc_observation_free(copy);
        echoloc_observation_free(obs);
    }
}

#[test]
fn noise_is_reproducible() {
    let obs = simulate(8000.0, 0.01, 1);
    let draw = |seed| {
        let mut noisy = ptr::null_mut();
        assert_eq!(unsafe { echoloc_observation_add_noise(obs, 20.0, seed, &mut noisy) }, EcholocStatus::Ok);
        let mut buf = vec![0.0; 4 * 81];
        assert_eq!(unsafe { echoloc_observation_data(noisy, buf.as_mut_ptr(), buf.len()) }, EcholocStatus::Ok);
        unsafe { echoloc_observation_free(noisy) };
        buf
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
    unsafe { echoloc_observation_free(obs) };
}

#[test]
fn solve_recovers_direct_path() {
    let obs = simulate(16000.0, 0.008, 0);
    let config = CString::new(r#"{"lambda": 1e-5, "i_max": 20}"#).unwrap();
    let mut res = ptr::null_mut();
    let s = unsafe { echoloc_solve(obs, config.as_ptr(), &mut res) };
    assert_eq!(s, EcholocStatus::Ok, "{}", last_error());
    let k = unsafe { echoloc_result_spike_count(res) };
    assert!(k >= 1);
    let mut amps = vec![0.0; k];
    let mut pos = vec![0.0; 3 * k];
    assert_eq!(unsafe { echoloc_result_spikes(res, amps.as_mut_ptr(), pos.as_mut_ptr(), k) }, EcholocStatus::Ok);
    let best = (0..k).max_by(|&a, &b| amps[a].total_cmp(&amps[b])).unwrap();
    let err = (0..3).map(|i| (pos[3 * best + i] - SRC[i]).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-2, "direct path off by {err} m");
    assert!((0..=2).contains(&unsafe { echoloc_result_stop_reason(res) }));
    assert!(unsafe { echoloc_result_objective(res) }.is_finite());

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { echoloc_result_to_json(res, &mut json) }, EcholocStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(value.get("stop_reason").is_some());
    unsafe {
        echoloc_string_free(json);
        echoloc_result_free(res);
        echoloc_observation_free(obs);
    }
}

#[test]
fn malformed_config_is_invalid_input() {
    let obs = simulate(8000.0, 0.01, 0);
    let config = CString::new("{not json").unwrap();
    let mut res = ptr::null_mut();
    let s = unsafe { echoloc_solve(obs, config.as_ptr(), &mut res) };
    assert_eq!(s, EcholocStatus::InvalidInput);
    assert!(res.is_null());
    assert!(last_error().starts_with("configuration"));
    unsafe { echoloc_observation_free(obs) };
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/echoloc.h")).unwrap();
    for name in [
        "echoloc_version",
        "echoloc_last_error",
        "echoloc_image_source_count",
        "echoloc_simulate",
        "echoloc_observation_new",
        "echoloc_observation_shape",
        "echoloc_observation_data",
        "echoloc_observation_add_noise",
        "echoloc_observation_free",
        "echoloc_solve",
        "echoloc_result_spike_count",
        "echoloc_result_spikes",
        "echoloc_result_stop_reason",
        "echoloc_result_objective",
        "echoloc_result_to_json",
        "echoloc_result_free",
        "echoloc_string_free",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("ECHOLOC_STATUS_PANIC = 5"));
}
