use std::ffi::{CStr, CString};
use std::ptr;

use rydflat_ffi::*;

fn last_error() -> String {
    let p = rf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn honeycomb_bands_through_handle() {
    let name = CString::new("honeycomb").unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(rf_bands_compute(name.as_ptr(), 64, &mut h), RfStatus::Ok);
        let (mut nk, mut nb) = (0, 0);
        assert_eq!(rf_bands_shape(h, &mut nk, &mut nb), RfStatus::Ok);
        assert_eq!((nk, nb), (64, 5));
        let mut buf = vec![0.0; nk * nb];
        assert_eq!(rf_bands_energies(h, buf.as_mut_ptr(), buf.len()), RfStatus::Ok);
        for row in buf.chunks(nb) {
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
            assert!((row[0] + row[4]).abs() < 1e-10);
        }
        let mut flat = 0;
        assert_eq!(rf_bands_flat_count(h, 1e-8, &mut flat), RfStatus::Ok);
        assert_eq!(flat, 1);
        assert_eq!(rf_bands_energies(h, buf.as_mut_ptr(), 3), RfStatus::BufferTooSmall);
        assert!(last_error().contains("need"));
        rf_bands_free(h);
        rf_bands_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_reported() {
    let bad = CString::new("kagome").unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(rf_bands_compute(bad.as_ptr(), 8, &mut h), RfStatus::InvalidArgument);
        assert!(h.is_null());
        assert!(last_error().contains("kagome"));
        assert_eq!(rf_bands_compute(ptr::null(), 8, &mut h), RfStatus::NullPointer);
        let mut d = 0.0;
        assert_eq!(rf_shift_density(0.1, -1.0, 3, &mut d), RfStatus::InvalidArgument);
        // A successful call clears the message.
        assert_eq!(rf_shift_density(0.1, 0.1, 3, &mut d), RfStatus::Ok);
        assert!(rf_last_error().is_null());
        assert!(d > 0.0);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(rf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn localization_and_scaling() {
    let (mut xi, mut err) = ([0.0; 2], [0.0; 2]);
    unsafe {
        let st = rf_localization_lengths(1.8, RfDisorderMode::FlatAllSites, 0.5, 3, 300.0, 100_000, 1, xi.as_mut_ptr(), err.as_mut_ptr());
        assert_eq!(st, RfStatus::Ok);
        assert!(xi[0] > 0.0 && xi[0] <= xi[1] && err[0] > 0.0);
        let st = rf_localization_lengths(1.8, RfDisorderMode::Positional, 1e-3, 4, 300.0, 100_000, 1, xi.as_mut_ptr(), err.as_mut_ptr());
        assert_eq!(st, RfStatus::InvalidArgument);
        let grid = [0.2, 0.3, 0.45, 0.7, 1.0];
        let mut nu = [0.0; 2];
        let st = rf_scaling_exponents(1.8, RfDisorderMode::FlatPairOnly, grid.as_ptr(), grid.len(), 200_000, 3, nu.as_mut_ptr());
        assert_eq!(st, RfStatus::Ok, "{}", last_error());
        assert!(nu[0] > 1.0 && nu[1] > 1.0, "{nu:?}");
        let st = rf_scaling_exponents(1.8, RfDisorderMode::FlatPairOnly, grid.as_ptr(), 3, 200_000, 3, nu.as_mut_ptr());
        assert_eq!(st, RfStatus::Numerical);
    }
}

#[test]
fn evolution_handle() {
    let mut ev = ptr::null_mut();
    unsafe {
        assert_eq!(rf_evolution_new(8, 0.0, 200.0, 3, 5, &mut ev), RfStatus::Ok);
        let mut o = RfObservables::default();
        assert_eq!(rf_evolution_observe(ev, 50.0, &mut o), RfStatus::Ok);
        assert!((o.dx_upper - 0.5).abs() < 1e-12 && (o.mean_lower - 4.5).abs() < 1e-12);
        let (mut up, mut lo) = ([0.0; 8], [0.0; 8]);
        assert_eq!(rf_evolution_profile(ev, 50.0, up.as_mut_ptr(), lo.as_mut_ptr(), 8), RfStatus::Ok);
        assert!((up.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rf_evolution_profile(ev, 50.0, up.as_mut_ptr(), lo.as_mut_ptr(), 4), RfStatus::BufferTooSmall);
        rf_evolution_free(ev);
        assert_eq!(rf_evolution_new(3, 0.0, 200.0, 3, 5, &mut ev), RfStatus::InvalidArgument);
    }
}

#[test]
fn preparation_and_sampling() {
    let mut f = 0.0;
    let mut buf = [0.0; 100];
    unsafe {
        assert_eq!(rf_prepare_fidelity(4, 2, false, 1.0, 200.0, &mut f), RfStatus::Ok);
        assert!((f - 1.0).abs() < 1e-12);
        assert_eq!(rf_sample_shifts(100, 0.05, 3, 9, buf.as_mut_ptr(), buf.len()), RfStatus::Ok);
        assert!(buf.iter().all(|&x| x > -1.0));
        assert_eq!(rf_sample_shifts(101, 0.05, 3, 9, buf.as_mut_ptr(), buf.len()), RfStatus::BufferTooSmall);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/rydflat.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.trim().strip_prefix("pub unsafe extern \"C\" fn ").or_else(|| l.trim().strip_prefix("pub extern \"C\" fn ")))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let tmp = std::env::temp_dir().join("rydflat_header_check.c");
    std::fs::write(&tmp, "#include \"rydflat.h\"\nint main(void) { RfObservables o; (void)o; return rf_version() == 0; }\n").unwrap();
    let status = std::process::Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-I", dir]).arg(&tmp).status().unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
