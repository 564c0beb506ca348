use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use autocurriculum_ffi::*;

fn last_error() -> String {
    let p = ac_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn weight_table_round_trip() {
    let mut table = ptr::null_mut();
    let status = unsafe { ac_weight_table_new(2, 1, 4, 1, 2, &mut table) };
    assert_eq!(status, AcStatus::Ok);
    assert!(ac_last_error_message().is_null());
    unsafe {
        assert_eq!(ac_weight_table_phases(table), 2);
        let mut a = f64::NAN;
        assert_eq!(ac_weight_table_alpha(table, 0, 0, &mut a), AcStatus::Ok);
        assert!((a - 0.75).abs() < 1e-12);
        assert_eq!(ac_weight_table_alpha(table, 1, 1, &mut a), AcStatus::Ok);
        assert!((a - 1.0).abs() < 1e-12);
        assert_eq!(ac_weight_table_alpha_max(table, 1, &mut a), AcStatus::Ok);
        assert!((a - 1.0).abs() < 1e-12);
        assert_eq!(ac_weight_table_acceptance(table, 1, 0, &mut a), AcStatus::Ok);
        assert_eq!(a, 0.0);
        assert_eq!(ac_weight_table_alpha(table, 1, 2, &mut a), AcStatus::OutOfRange);
        assert!(last_error().contains("rank 2"));
        ac_weight_table_free(table);
    }
}

#[test]
fn weight_table_rejects_bad_input() {
    let mut table = ptr::null_mut();
    assert_eq!(
        unsafe { ac_weight_table_new(0, 1, 4, 1, 2, &mut table) },
        AcStatus::InvalidParameter
    );
    assert!(table.is_null());
    assert_eq!(
        unsafe { ac_weight_table_new(4, 1, 0, 1, 2, &mut table) },
        AcStatus::InvalidParameter
    );
    assert_eq!(
        unsafe { ac_weight_table_new(4, 1, 4, 1, 2, ptr::null_mut()) },
        AcStatus::NullPointer
    );
    unsafe { ac_weight_table_free(ptr::null_mut()) };
}

#[test]
fn world_queries() {
    let cfg = CString::new("alphabet_size = 4\nhorizon = 3\ndim = 6\nprompt_universe = 512\n").unwrap();
    let mut world = ptr::null_mut();
    assert_eq!(unsafe { ac_world_new(cfg.as_ptr(), &mut world) }, AcStatus::Ok);
    unsafe {
        assert_eq!(ac_world_prompt_count(world), 512);
        let mut total = 0.0;
        for x in 0..512 {
            let mut m = 0.0;
            assert_eq!(ac_world_prompt_mass(world, x, &mut m), AcStatus::Ok);
            total += m;
        }
        assert!((total - 1.0).abs() < 1e-9);

        let mut acc = 0.0;
        assert_eq!(
            ac_world_accuracy(world, ac_world_teacher_key(world), &mut acc),
            AcStatus::Ok
        );
        assert!((acc - 1.0).abs() < 1e-9);

        let mut buf = [0u8; 8];
        let mut len = 0;
        assert_eq!(
            ac_world_teacher_trace(world, 0, buf.as_mut_ptr(), buf.len(), &mut len),
            AcStatus::Ok
        );
        assert_eq!(len, 3);
        assert_eq!(
            ac_world_teacher_trace(world, 0, ptr::null_mut(), 0, &mut len),
            AcStatus::Ok
        );
        assert_eq!(len, 3);
        assert_eq!(ac_world_prompt_mass(world, 512, &mut acc), AcStatus::OutOfRange);
        ac_world_free(world);
    }
}

#[test]
fn world_config_errors() {
    let mut world = ptr::null_mut();
    let bad = CString::new("alphabet_size = 1\nhorizon = 3\ndim = 6\n").unwrap();
    assert_eq!(
        unsafe { ac_world_new(bad.as_ptr(), &mut world) },
        AcStatus::Configuration
    );
    assert!(last_error().contains("alphabet_size"));
    let garbage = CString::new("alphabet_size = [").unwrap();
    assert_eq!(unsafe { ac_world_new(garbage.as_ptr(), &mut world) }, AcStatus::Parse);
    assert_eq!(unsafe { ac_world_new(ptr::null(), &mut world) }, AcStatus::NullPointer);
    assert!(world.is_null());
}

const EXPERIMENT: &str = r#"
pool_size = 2000

[world]
alphabet_size = 4
horizon = 4
dim = 6
prompt_universe = 1024

[curriculum]
eps = 0.2
delta = 0.1
variant = "det-sft"

[budget]
n_prompt_constant = 0.02
"#;

#[test]
fn experiment_returns_json_record() {
    let cfg = CString::new(EXPERIMENT).unwrap();
    let kind = CString::new("det-sft").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { ac_run_experiment(cfg.as_ptr(), kind.as_ptr(), 3, &mut out) },
        AcStatus::Ok
    );
    let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { ac_string_free(out) };
    assert!(json.contains("\"kind\": \"det-sft\""));
    assert!(json.contains("\"reconciled\": true"));

    let mut again = ptr::null_mut();
    assert_eq!(
        unsafe { ac_run_experiment(cfg.as_ptr(), kind.as_ptr(), 3, &mut again) },
        AcStatus::Ok
    );
    assert_eq!(unsafe { CStr::from_ptr(again) }.to_str().unwrap(), json);
    unsafe { ac_string_free(again) };

    let bogus = CString::new("sft").unwrap();
    assert_eq!(
        unsafe { ac_run_experiment(cfg.as_ptr(), bogus.as_ptr(), 3, &mut out) },
        AcStatus::Parse
    );
}

#[test]
fn header_declares_every_export_and_compiles() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = std::fs::read_to_string(format!("{dir}/include/autocurriculum.h")).unwrap();
    for name in [
        "ac_last_error_message",
        "ac_weight_table_new",
        "ac_weight_table_free",
        "ac_weight_table_phases",
        "ac_weight_table_alpha",
        "ac_weight_table_alpha_max",
        "ac_weight_table_acceptance",
        "ac_world_new",
        "ac_world_free",
        "ac_world_prompt_count",
        "ac_world_teacher_key",
        "ac_world_prompt_mass",
        "ac_world_teacher_trace",
        "ac_world_accuracy",
        "ac_run_experiment",
        "ac_string_free",
        "AC_STATUS_OUT_OF_RANGE",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }

    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg(format!("-I{dir}/include"))
        .stdin(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child
                .stdin
                .take()
                .unwrap()
                .write_all(b"#include \"autocurriculum.h\"\nint main(void) { return 0; }\n")?;
            child.wait()
        })
    else {
        eprintln!("no C compiler available; skipping syntax check");
        return;
    };
    assert!(status.success());
}
