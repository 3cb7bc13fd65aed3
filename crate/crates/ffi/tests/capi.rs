use std::ffi::{CStr, CString};
use std::ptr;

use recseg_ffi::*;

fn last_error() -> String {
    let p = recseg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Problem {
    truth: *mut RecsegImage,
    labels: *mut RecsegLabels,
    kspace: *mut RecsegKspace,
    means: [f64; 4],
    classes: u32,
}

fn disk_problem(n: u32, rate: f64, sigma: f64) -> Problem {
    let mut p = Problem {
        truth: ptr::null_mut(),
        labels: ptr::null_mut(),
        kspace: ptr::null_mut(),
        means: [0.0; 4],
        classes: 0,
    };
    let mut mask = ptr::null_mut();
    unsafe {
        let st = recseg_phantom_new(
            RecsegPhantomKind::TwoRegion,
            n,
            n,
            0,
            0,
            &mut p.truth,
            &mut p.labels,
            p.means.as_mut_ptr(),
            4,
            &mut p.classes,
        );
        assert_eq!(st, RecsegStatus::Ok);
        assert_eq!(recseg_mask_new(RecsegMaskKind::UniformRandom, n, n, rate, 1, false, &mut mask), RecsegStatus::Ok);
        assert_eq!(recseg_simulate_kspace(p.truth, mask, sigma, 3, &mut p.kspace), RecsegStatus::Ok);
        recseg_mask_free(mask);
    }
    p
}

impl Drop for Problem {
    fn drop(&mut self) {
        unsafe {
            recseg_image_free(self.truth);
            recseg_labels_free(self.labels);
            recseg_kspace_free(self.kspace);
        }
    }
}

#[test]
fn image_round_trip_and_dims() {
    let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    let mut img = ptr::null_mut();
    unsafe {
        assert_eq!(recseg_image_new(3, 4, values.as_ptr(), &mut img), RecsegStatus::Ok);
        let (mut n1, mut n2) = (0, 0);
        assert_eq!(recseg_image_dims(img, &mut n1, &mut n2), RecsegStatus::Ok);
        assert_eq!((n1, n2), (3, 4));
        let mut back = vec![0.0; 12];
        assert_eq!(recseg_image_values(img, back.as_mut_ptr(), 12), RecsegStatus::Ok);
        assert_eq!(back, values);
        assert_eq!(recseg_image_values(img, back.as_mut_ptr(), 11), RecsegStatus::ShapeMismatch);
        recseg_image_free(img);
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut img = ptr::null_mut();
    unsafe {
        assert_eq!(recseg_image_new(1, 4, [0.0; 4].as_ptr(), &mut img), RecsegStatus::InvalidArgument);
        assert!(last_error().contains("invalid grid"));
        assert!(img.is_null());
        assert_eq!(recseg_image_new(2, 2, ptr::null(), &mut img), RecsegStatus::NullPointer);
        assert_eq!(recseg_zero_fill(ptr::null(), &mut img), RecsegStatus::NullPointer);
        let mut mask = ptr::null_mut();
        assert_eq!(
            recseg_mask_new(RecsegMaskKind::UniformRandom, 8, 8, 1.5, 0, false, &mut mask),
            RecsegStatus::InvalidArgument
        );
        assert_eq!(recseg_mask_count(ptr::null()), 0);
        recseg_image_free(ptr::null_mut());
    }
}

#[test]
fn invalid_config_is_reported() {
    let p = disk_problem(16, 0.5, 0.0);
    let mut cfg = recseg_config_default();
    cfg.alpha = -1.0;
    let mut img = ptr::null_mut();
    unsafe {
        let st = recseg_tv_reconstruct(p.kspace, &cfg, &mut img);
        assert_ne!(st, RecsegStatus::Ok);
        assert!(img.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn kspace_file_round_trip_and_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.ksp").to_str().unwrap()).unwrap();
    let p = disk_problem(8, 0.5, 0.1);
    let mut back = ptr::null_mut();
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(recseg_kspace_write(p.kspace, path.as_ptr()), RecsegStatus::Ok);
        assert_eq!(recseg_kspace_read(path.as_ptr(), &mut back), RecsegStatus::Ok);
        assert_eq!(recseg_zero_fill(p.kspace, &mut a), RecsegStatus::Ok);
        assert_eq!(recseg_zero_fill(back, &mut b), RecsegStatus::Ok);
        let (mut va, mut vb) = (vec![0.0; 64], vec![0.0; 64]);
        recseg_image_values(a, va.as_mut_ptr(), 64);
        recseg_image_values(b, vb.as_mut_ptr(), 64);
        assert_eq!(va, vb);
        recseg_image_free(a);
        recseg_image_free(b);
        recseg_kspace_free(back);

        std::fs::write(dir.path().join("f.ksp"), b"nonsense").unwrap();
        assert_eq!(recseg_kspace_read(path.as_ptr(), &mut back), RecsegStatus::Parse);
        let missing = CString::new(dir.path().join("none.ksp").to_str().unwrap()).unwrap();
        assert_eq!(recseg_kspace_read(missing.as_ptr(), &mut back), RecsegStatus::Io);
    }
}

#[test]
fn joint_solve_segments_a_disk() {
    let p = disk_problem(32, 0.4, 0.05);
    let mut cfg = recseg_config_default();
    cfg.alpha = 0.05;
    cfg.beta = 0.01;
    cfg.delta = 1e-1;
    cfg.max_outer = 10;
    let (mut img, mut seg) = (ptr::null_mut(), ptr::null_mut());
    let mut iters = 0u32;
    let mut m = RecsegMetrics::default();
    unsafe {
        assert_eq!(p.classes, 2);
        let st = recseg_joint_solve(p.kspace, p.means.as_ptr(), 2, &cfg, &mut img, &mut seg, &mut iters);
        assert_eq!(st, RecsegStatus::Ok, "{}", last_error());
        assert!(iters >= 1);
        assert_eq!(recseg_metrics(img, p.truth, seg, p.labels, &mut m), RecsegStatus::Ok);
        let mut labels = vec![0u32; 32 * 32];
        let mut classes = 0;
        assert_eq!(recseg_labels_values(seg, labels.as_mut_ptr(), labels.len(), &mut classes), RecsegStatus::Ok);
        assert_eq!(classes, 2);
        recseg_image_free(img);
        recseg_labels_free(seg);
    }
    assert!(m.rre < 0.3, "rre {}", m.rre);
    assert!(m.rse < 0.05, "rse {}", m.rse);
}

#[test]
fn sequential_pipeline_runs() {
    let p = disk_problem(32, 0.5, 0.05);
    let mut cfg = recseg_config_default();
    cfg.alpha = 0.05;
    cfg.beta = 0.01;
    cfg.max_outer = 5;
    let (mut tv, mut breg, mut seg) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    let mut k = 0;
    let mut m = RecsegMetrics::default();
    unsafe {
        assert_eq!(recseg_tv_reconstruct(p.kspace, &cfg, &mut tv), RecsegStatus::Ok);
        assert_eq!(recseg_bregman_reconstruct(p.kspace, &cfg, &mut breg, &mut k), RecsegStatus::Ok);
        assert!((1..=5).contains(&k));
        assert_eq!(recseg_segment(breg, p.means.as_ptr(), 2, &cfg, &mut seg), RecsegStatus::Ok);
        assert_eq!(recseg_metrics(breg, p.truth, seg, p.labels, &mut m), RecsegStatus::Ok);
        assert_eq!(recseg_segment(breg, ptr::null(), 2, &cfg, &mut seg), RecsegStatus::NullPointer);
        recseg_image_free(tv);
        recseg_image_free(breg);
        recseg_labels_free(seg);
    }
    assert!(m.rse < 0.05, "rse {}", m.rse);
}

#[test]
fn errors_are_per_thread() {
    let mut img = ptr::null_mut();
    unsafe { recseg_image_new(0, 0, ptr::null(), &mut img) };
    let here = last_error();
    let other = std::thread::spawn(|| recseg_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(!here.is_empty());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/recseg.h")).unwrap();
    for name in [
        "recseg_last_error",
        "recseg_config_default",
        "recseg_image_new",
        "recseg_image_free",
        "recseg_phantom_new",
        "recseg_mask_new",
        "recseg_simulate_kspace",
        "recseg_kspace_read",
        "recseg_zero_fill",
        "recseg_tv_reconstruct",
        "recseg_bregman_reconstruct",
        "recseg_segment",
        "recseg_joint_solve",
        "recseg_metrics",
        "typedef struct RecsegImage RecsegImage",
        "RECSEG_STATUS_SOLVER_DIVERGED",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
