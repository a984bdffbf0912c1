use std::fs;
use std::path::{Path, PathBuf};

use mbt_core::cli::main_with;
use mbt_core::corpus::TURN_INDICATOR;
use mbt_core::frontend::{parse_model, print_trace_log};
use mbt_core::procgen::parse_procedure;

const MUTEX: &str = "model Mutex {
  in go : bool init false
  out y : bool init false
  machine M {
    state A initial {
      on go && !go / y := true -> B
      on go -> C
    }
    state B {
    }
    state C {
    }
  }
}
";

const OWNERSHIP: &str = "model Owner {
  in go : bool init false
  out y : bool init false
  machine M {
    state A initial {
      on go / y := true -> A
    }
  }
  machine N {
    state P initial {
      on go / y := false -> P
    }
  }
}
";

fn mbt(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with(
        std::iter::once("mbt").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn write_model(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn validate_reports_through_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_model(dir.path(), "corpus.mbt", TURN_INDICATOR);
    let owner = write_model(dir.path(), "owner.mbt", OWNERSHIP);
    assert_eq!(mbt(&["validate", "--model", &corpus]).0, 0);
    let (code, _, err) = mbt(&["validate", "--model", &owner]);
    assert_eq!(code, 1);
    assert!(err.contains("write-ownership"), "{err}");
    let (code, _, err) = mbt(&["validate", "--model", "/definitely/missing.mbt"]);
    assert_eq!(code, 2);
    assert!(err.contains("not found"), "{err}");
    assert_eq!(mbt(&["frobnicate"]).0, 2);
    assert_eq!(
        mbt(&["generate", "--model", &corpus, "--out", "x", "--level", "7"]).0,
        2
    );
    assert_eq!(
        mbt(&[
            "generate",
            "--model",
            &corpus,
            "--out",
            "x",
            "--strategy",
            "nope"
        ])
        .0,
        2
    );
    assert_eq!(mbt(&["--help"]).0, 0);
}

#[test]
fn generation_is_deterministic_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_model(dir.path(), "corpus.mbt", TURN_INDICATOR);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = [
        "--model",
        &corpus,
        "--strategy",
        "hierarchic-transition,transition",
        "--level",
        "1",
    ];
    let run = |out: &Path, jobs: &str| {
        let mut args = vec!["generate"];
        args.extend(common);
        args.extend(["--out", out.to_str().unwrap(), "--jobs", jobs]);
        mbt(&args)
    };
    assert_eq!(run(&a, "1").0, 0);
    assert_eq!(run(&b, "3").0, 0);
    let fa = files(&a);
    assert!(fa.iter().any(|(p, _)| p.starts_with("procedures")));
    assert_eq!(fa, files(&b));
    for f in [
        "testcases.txt",
        "traceability.tsv",
        "report.txt",
        "manifest.txt",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }

    let a_s = a.to_str().unwrap();
    let (code, out, _) = mbt(&["run", "--model", &corpus, "--out", a_s, "--jobs", "2"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("failed 0 errors 0"), "{out}");
    let (code, out, _) = mbt(&[
        "run",
        "--model",
        &corpus,
        "--out",
        a_s,
        "--mutation",
        "constant-tweak:ON -> OFF:340:300",
    ]);
    assert_eq!(code, 1, "{out}");
    let (code, _, _) = mbt(&[
        "run",
        "--model",
        &corpus,
        "--out",
        a_s,
        "--mutation",
        "guard-negate:NOPE",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn empty_strategy_set_yields_requirement_procedures() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_model(dir.path(), "corpus.mbt", TURN_INDICATOR);
    let out = dir.path().join("r");
    let (code, _, err) = mbt(&[
        "generate",
        "--model",
        &corpus,
        "--strategy",
        "",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let names: Vec<String> = files(&out.join("procedures"))
        .into_iter()
        .map(|(p, _)| p.to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 9);
    assert!(names.iter().all(|n| n.starts_with("req-REQ-")), "{names:?}");
}

#[test]
fn unsolvable_cases_are_marked_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path(), "mutex.mbt", MUTEX);
    let out = dir.path().join("r");
    assert_eq!(
        mbt(&[
            "generate",
            "--model",
            &m,
            "--out",
            out.to_str().unwrap(),
            "--bound",
            "6"
        ])
        .0,
        0
    );
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    let block = report.split("\n\n").nth(1).unwrap();
    let entry = block
        .split("state-")
        .find(|e| e.contains("formula: F B"))
        .unwrap();
    assert!(entry.contains("status: unsat bound=6"), "{entry}");
}

#[test]
fn external_logs_drive_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_model(dir.path(), "corpus.mbt", TURN_INDICATOR);
    let out = dir.path().join("r");
    let out_s = out.to_str().unwrap();
    assert_eq!(
        mbt(&[
            "generate",
            "--model",
            &corpus,
            "--strategy",
            "",
            "--out",
            out_s
        ])
        .0,
        0
    );
    let (code, _, err) = mbt(&[
        "run",
        "--model",
        &corpus,
        "--out",
        out_s,
        "--logs",
        "/definitely/missing",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("adapter failure"), "{err}");

    let model = parse_model(TURN_INDICATOR).unwrap();
    let logs = dir.path().join("logs");
    fs::create_dir(&logs).unwrap();
    for (p, bytes) in files(&out.join("procedures")) {
        let proc_ = parse_procedure(std::str::from_utf8(&bytes).unwrap(), &model).unwrap();
        let log = print_trace_log(&proc_.expected_log(), &model);
        fs::write(logs.join(p.with_extension("log")), log).unwrap();
    }
    let logs_s = logs.to_str().unwrap();
    let (code, text, _) = mbt(&["run", "--model", &corpus, "--out", out_s, "--logs", logs_s]);
    assert_eq!(code, 0, "{text}");
    fs::write(logs.join("req-REQ-002.log"), "garbage\n").unwrap();
    let (code, text, _) = mbt(&["run", "--model", &corpus, "--out", out_s, "--logs", logs_s]);
    assert_eq!(code, 1);
    assert!(text.contains("errors 1"), "{text}");
}

#[test]
fn trace_matrix_prints_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_model(dir.path(), "corpus.mbt", TURN_INDICATOR);
    let (code, out, _) = mbt(&[
        "trace-matrix",
        "--model",
        &corpus,
        "--strategy",
        "hierarchic-transition",
        "--jobs",
        "2",
    ]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# bound="));
    assert!(out.lines().any(|l| l.starts_with("REQ-002\t")));
}
