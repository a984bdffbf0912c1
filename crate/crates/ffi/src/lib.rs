//! C interface to the test generator.
//!
//! Models are opaque handles created by [`mbt_model_parse`] and released by
//! [`mbt_model_free`]. Every call returns an [`MbtStatus`]; on failure the message is
//! available through [`mbt_last_error_message`]. Strings returned through `char **`
//! out-parameters are owned by the caller and released with [`mbt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mbt_core::cli::{parse_strategies, suite_for};
use mbt_core::coverage::{gen, Strategy};
use mbt_core::frontend::{parse_ltl, parse_model, parse_trace_log, print_trace_log};
use mbt_core::model::Model;
use mbt_core::oracle::{check_strict_log, project_log};
use mbt_core::procgen::{emit, parse_procedure, print_procedure, Mode};
use mbt_core::semantics::{build_relation, static_ambiguities};
use mbt_core::solver::{solve, SolveOutcome, SolverConfig};
use mbt_core::tracing::{compile_traceability, AssuranceLevel, TracingResult};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MbtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidModel = 4,
    Unsat = 5,
    SolverError = 6,
    InvalidArgument = 7,
    Internal = 8,
}

/// Parsed model.
pub struct MbtModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(MbtStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MbtStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MbtStatus::Ok,
        Ok(Err(Failure(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            MbtStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MbtStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MbtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(p: *const MbtModel) -> Result<&'a Model, Failure> {
    p.as_ref()
        .map(|h| &h.model)
        .ok_or_else(|| Failure(MbtStatus::NullArgument, "model is null".into()))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(
            MbtStatus::NullArgument,
            "output pointer is null".into(),
        ));
    }
    *out = CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw();
    Ok(())
}

/// Message of the last failed call on this thread; empty after a successful call.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mbt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn mbt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses model text into a new handle stored in `*out`.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mbt_model_parse(
    source: *const c_char,
    out: *mut *mut MbtModel,
) -> MbtStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(
                MbtStatus::NullArgument,
                "output pointer is null".into(),
            ));
        }
        *out = ptr::null_mut();
        let src = text(source, "source")?;
        let model = parse_model(src).map_err(|e| Failure(MbtStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(MbtModel { model }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`mbt_model_parse`] that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn mbt_model_free(model: *mut MbtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Checks the model. Returns `INVALID_MODEL` when there are diagnostics; they are
/// stored one per line in `*diagnostics` when it is not null.
///
/// # Safety
/// `model` must be a live handle; `diagnostics` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mbt_model_validate(
    model: *const MbtModel,
    diagnostics: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        let m = handle(model)?;
        let mut lines: Vec<String> = m.validate().iter().map(|d| d.to_string()).collect();
        lines.extend(static_ambiguities(m).iter().map(|a| a.to_string()));
        if !diagnostics.is_null() {
            put_string(
                diagnostics,
                lines.iter().map(|l| format!("{l}\n")).collect(),
            )?;
        }
        if lines.is_empty() {
            Ok(())
        } else {
            Err(Failure(
                MbtStatus::InvalidModel,
                format!("{} diagnostics", lines.len()),
            ))
        }
    })
}

fn valid(m: &Model) -> Result<(), Failure> {
    if m.validate().is_empty() && static_ambiguities(m).is_empty() {
        Ok(())
    } else {
        Err(Failure(
            MbtStatus::InvalidModel,
            "the model has diagnostics".into(),
        ))
    }
}

fn config(bound: u32) -> SolverConfig {
    SolverConfig {
        max_bound: bound as usize,
        ..SolverConfig::default()
    }
}

/// Searches a witness of an LTL formula up to `bound` steps. On success `*trace_log`
/// holds the inputs and outputs along the witness as a trace log; `UNSAT` means no
/// witness exists up to the bound.
///
/// # Safety
/// `model` must be a live handle, `formula` a NUL-terminated string, `trace_log` writable.
#[no_mangle]
pub unsafe extern "C" fn mbt_solve_formula(
    model: *const MbtModel,
    formula: *const c_char,
    bound: u32,
    trace_log: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        let m = handle(model)?;
        let f = parse_ltl(text(formula, "formula")?, m)
            .map_err(|e| Failure(MbtStatus::ParseError, e.to_string()))?;
        valid(m)?;
        let rel = build_relation(m).map_err(|e| Failure(MbtStatus::InvalidModel, e.to_string()))?;
        match solve(m, &rel, &f, &config(bound)) {
            Ok(SolveOutcome::Witness(w)) => put_string(
                trace_log,
                print_trace_log(&project_log(m, &w.trace, &m.observables()), m),
            ),
            Ok(SolveOutcome::UnsatAtBound(k)) => Err(Failure(
                MbtStatus::Unsat,
                format!("no witness up to bound {k}"),
            )),
            Err(e) => Err(Failure(MbtStatus::SolverError, e.to_string())),
        }
    })
}

unsafe fn tracing_result(
    m: &Model,
    strategies: *const c_char,
    bound: u32,
    jobs: u32,
) -> Result<(Vec<Strategy>, TracingResult), Failure> {
    let strategies = if strategies.is_null() {
        None
    } else {
        Some(text(strategies, "strategies")?)
    };
    let st = parse_strategies(strategies)
        .map_err(|e| Failure(MbtStatus::InvalidArgument, e.message().to_string()))?;
    valid(m)?;
    let rel = build_relation(m).map_err(|e| Failure(MbtStatus::InvalidModel, e.to_string()))?;
    let cases: Vec<_> = st.iter().flat_map(|&s| gen(s, m)).collect();
    let r = compile_traceability(m, &rel, &cases, &config(bound), jobs.max(1) as usize)
        .map_err(|e| Failure(MbtStatus::SolverError, e.to_string()))?;
    Ok((st, r))
}

/// Traceability matrix as tab separated text. `strategies` is a comma separated
/// list of coverage strategies, or null for all of them.
///
/// # Safety
/// `model` must be a live handle, `strategies` null or NUL-terminated, `tsv` writable.
#[no_mangle]
pub unsafe extern "C" fn mbt_trace_matrix(
    model: *const MbtModel,
    strategies: *const c_char,
    bound: u32,
    jobs: u32,
    tsv: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        let m = handle(model)?;
        let (_, r) = tracing_result(m, strategies, bound, jobs)?;
        put_string(tsv, r.matrix.to_tsv())
    })
}

/// Strict test procedures of the suite selected for an assurance level (1, 2, 3 or
/// 45), concatenated in procedure file format and separated by blank lines.
///
/// # Safety
/// `model` must be a live handle, `strategies` null or NUL-terminated, `procedures` writable.
#[no_mangle]
pub unsafe extern "C" fn mbt_generate(
    model: *const MbtModel,
    strategies: *const c_char,
    level: u32,
    bound: u32,
    jobs: u32,
    procedures: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        let m = handle(model)?;
        let level = AssuranceLevel::parse(&level.to_string())
            .ok_or_else(|| Failure(MbtStatus::InvalidArgument, format!("invalid level {level}")))?;
        let (st, r) = tracing_result(m, strategies, bound, jobs)?;
        let mut out = Vec::new();
        for id in suite_for(&r, &st, level) {
            let w = r.witness(&id).expect("selected cases have witnesses");
            let p = emit(
                m,
                &id,
                std::slice::from_ref(&id),
                w,
                Mode::Strict,
                &Default::default(),
            )
            .map_err(|e| Failure(MbtStatus::SolverError, e.to_string()))?;
            out.push(print_procedure(&p, m));
        }
        put_string(procedures, out.join("\n"))
    })
}

/// Strict verdict of an observed trace log against a procedure. `*passed` is 1 on
/// pass and 0 on failure; `*verdict` (when not null) receives the verdict text.
///
/// # Safety
/// `model` must be a live handle, `procedure` and `observed` NUL-terminated,
/// `passed` writable, `verdict` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mbt_check_strict(
    model: *const MbtModel,
    procedure: *const c_char,
    observed: *const c_char,
    passed: *mut c_int,
    verdict: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        let m = handle(model)?;
        if passed.is_null() {
            return Err(Failure(MbtStatus::NullArgument, "passed is null".into()));
        }
        let p = parse_procedure(text(procedure, "procedure")?, m)
            .map_err(|e| Failure(MbtStatus::ParseError, e.to_string()))?;
        let log = parse_trace_log(text(observed, "observed")?, m)
            .map_err(|e| Failure(MbtStatus::ParseError, e.to_string()))?;
        let v = check_strict_log(m, &p.expected_log(), &log);
        *passed = c_int::from(v.passed());
        if !verdict.is_null() {
            put_string(verdict, v.to_string())?;
        }
        Ok(())
    })
}
