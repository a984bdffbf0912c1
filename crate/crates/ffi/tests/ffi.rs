use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use mbt_core::corpus::TURN_INDICATOR;
use mbt_ffi::*;

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { mbt_string_free(s) };
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mbt_last_error_message()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn corpus() -> *mut MbtModel {
    let src = CString::new(TURN_INDICATOR).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_model_parse(src.as_ptr(), &mut m) },
        MbtStatus::Ok
    );
    assert!(!m.is_null());
    m
}

#[test]
fn parse_validate_and_free() {
    let m = corpus();
    let mut diags = ptr::null_mut();
    assert_eq!(unsafe { mbt_model_validate(m, &mut diags) }, MbtStatus::Ok);
    assert_eq!(take(diags), "");
    assert_eq!(last_error(), "");
    unsafe { mbt_model_free(m) };
    unsafe { mbt_model_free(ptr::null_mut()) };
    unsafe { mbt_string_free(ptr::null_mut()) };

    let bad = CString::new("model {").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_model_parse(bad.as_ptr(), &mut h) },
        MbtStatus::ParseError
    );
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { mbt_model_parse(ptr::null(), &mut h) },
        MbtStatus::NullArgument
    );
    let invalid_utf8 = [0xffu8, 0];
    assert_eq!(
        unsafe { mbt_model_parse(invalid_utf8.as_ptr().cast(), &mut h) },
        MbtStatus::InvalidUtf8
    );
}

#[test]
fn solve_reports_witnesses_and_unsat() {
    let m = corpus();
    let f = CString::new("F (EMER_OFF && EmerFlash)").unwrap();
    let mut log = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_solve_formula(m, f.as_ptr(), 16, &mut log) },
        MbtStatus::Ok
    );
    let text = take(log);
    assert!(text.contains("EmerFlash=1"), "{text}");
    let f = CString::new("F (ON && OFF)").unwrap();
    let mut log = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_solve_formula(m, f.as_ptr(), 4, &mut log) },
        MbtStatus::Unsat
    );
    assert!(log.is_null());
    let f = CString::new("F (Nope)").unwrap();
    assert_eq!(
        unsafe { mbt_solve_formula(m, f.as_ptr(), 4, &mut log) },
        MbtStatus::ParseError
    );
    unsafe { mbt_model_free(m) };
}

#[test]
fn generated_procedures_check_against_their_expectations() {
    let m = corpus();
    let strategies = CString::new("").unwrap();
    let mut procs = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_generate(m, strategies.as_ptr(), 1, 16, 2, &mut procs) },
        MbtStatus::Ok
    );
    let text = take(procs);
    let mut tsv = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_trace_matrix(m, strategies.as_ptr(), 16, 2, &mut tsv) },
        MbtStatus::Ok
    );
    assert!(take(tsv).starts_with("# bound=16"));
    let bad = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { mbt_trace_matrix(m, bad.as_ptr(), 16, 2, &mut tsv) },
        MbtStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { mbt_generate(m, strategies.as_ptr(), 9, 16, 2, &mut procs) },
        MbtStatus::InvalidArgument
    );

    let model = mbt_core::frontend::parse_model(TURN_INDICATOR).unwrap();
    let first = text.split("\n\n").next().unwrap();
    assert!(first.starts_with("procedure req-REQ-"), "{first}");
    let p = mbt_core::procgen::parse_procedure(first, &model).unwrap();
    let good = mbt_core::frontend::print_trace_log(&p.expected_log(), &model);
    let proc_c = CString::new(first).unwrap();
    let mut passed: c_int = -1;
    let mut verdict = ptr::null_mut();
    let obs = CString::new(good.clone()).unwrap();
    assert_eq!(
        unsafe { mbt_check_strict(m, proc_c.as_ptr(), obs.as_ptr(), &mut passed, &mut verdict) },
        MbtStatus::Ok
    );
    assert_eq!((passed, take(verdict)), (1, "PASS".to_string()));

    let lines: Vec<&str> = good.lines().collect();
    assert!(lines.last().unwrap().starts_with("t=") && !lines.last().unwrap().starts_with("t=0 "));
    let missing = lines[..lines.len() - 1].join("\n");
    let obs = CString::new(missing).unwrap();
    assert_eq!(
        unsafe {
            mbt_check_strict(
                m,
                proc_c.as_ptr(),
                obs.as_ptr(),
                &mut passed,
                ptr::null_mut(),
            )
        },
        MbtStatus::Ok
    );
    assert_eq!(passed, 0);
    unsafe { mbt_model_free(m) };
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = tempfile_path("mbt_header_check.c");
    std::fs::write(&src, "#include \"mbt.h\"\nint main(void) { MbtModel *m = 0; return mbt_model_parse(\"\", &m) == MBT_STATUS_OK; }\n").unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(format!("{dir}/include"))
        .arg(&src)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success());
}

fn tempfile_path(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("{}-{name}", std::process::id()))
}
