//! The eight acceptance criteria, run in order. Each prints one PASS/FAIL line.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use mbt_core::cli::main_with;
use mbt_core::corpus::TURN_INDICATOR;
use mbt_core::coverage::{gen, gen_all, Strategy};
use mbt_core::expr::Expr;
use mbt_core::frontend::{parse_expr, parse_model, parse_trace_log, print_model, print_trace_log};
use mbt_core::ltl::{eval_on_trace, expand_bmc, Ltl, Start};
use mbt_core::model::{ElementRef, Model};
use mbt_core::oracle::{Tolerance, ToleranceSpec};
use mbt_core::procgen::{
    emit, execute, mutate, parse_procedure, print_procedure, Adapter, Mode, Mutation, TestProcedure,
};
use mbt_core::semantics::{build_relation, state_satisfiable, step};
use mbt_core::solver::{solve, SolverConfig, ValTrace, Witness};
use mbt_core::tracing::{
    characterize, compile_traceability, has_impact, select_suite, AssuranceLevel,
};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

const LIMIT_1: Duration = Duration::from_secs(5);
const LIMIT_2: Duration = Duration::from_secs(30);
const LIMIT_3: Duration = Duration::from_secs(60);
const LIMIT_4: Duration = Duration::from_secs(60);
const LIMIT_7: Duration = Duration::from_secs(60);
/// Largest event-driven step count allowed for requirement witnesses.
const REQ_BOUND: usize = 12;
const RANDOM_LTL_CASES: u32 = 10_000;
const RANDOM_MODELS: usize = 20;
const BRUTE_DEPTH: usize = 6;
/// Lateness and earliness tolerance of the perturbation grid (ms).
const DELTA: i64 = 10;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    check(e < limit, format!("took {e:?}, limit {limit:?}"))?;
    Ok(e)
}

fn corpus() -> Model {
    parse_model(TURN_INDICATOR).unwrap()
}

/// Equivalence on valuations satisfying `inv`.
fn equivalent_under(m: &Model, a: &Expr, b: &Expr, inv: &Expr) -> bool {
    let diff = Expr::or_all([
        Expr::and_all([a.clone(), b.negate()]),
        Expr::and_all([b.clone(), a.negate()]),
    ]);
    state_satisfiable(m, &Expr::and_all([inv.clone(), diff]), 1 << 22) == Some(false)
}

// ---- 1 ----------------------------------------------------------------------

const TC1_6: [&str; 6] = [
    "EMER_OFF && EmerFlash",
    "EMER_ACTIVE && TurnIndLvr != 0 && ((TurnIndLvr == 1) != Left1 || (TurnIndLvr == 2) != Right1)",
    "EMER_ACTIVE && (Left1 || Right1) && TurnIndLvr == 0",
    "TURN_IND_OVERRIDE && TurnIndLvr == 0",
    "!EmerFlash && EMER_ACTIVE && (TurnIndLvr != 0 && (TurnIndLvr == 1 && Left1 || TurnIndLvr == 2 && Right1) || TurnIndLvr == 0 && !(Left1 || Right1))",
    "!EmerFlash && TURN_IND_OVERRIDE && TurnIndLvr != 0",
];

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let m = corpus();
    let fc = m.machine_by_name("FLASH_CTRL").unwrap();
    let inv = parse_expr("!(Left1 && Right1)", &m).unwrap();
    let cases: Vec<_> = gen(Strategy::HierarchicTransition, &m)
        .into_iter()
        .filter(
            |c| matches!(c.covers[0], ElementRef::Transition(t) if m.transitions[t].machine == fc),
        )
        .collect();
    check(
        cases.len() == 6,
        format!("{} cases instead of 6", cases.len()),
    )?;
    for (i, text) in TC1_6.iter().enumerate() {
        let want = parse_expr(text, &m).unwrap();
        let hits = cases
            .iter()
            .filter(|c| {
                c.goal()
                    .is_some_and(|g| equivalent_under(&m, g, &want, &inv))
            })
            .count();
        check(
            hits == 1,
            format!("tc{} matched {hits} generated cases", i + 1),
        )?;
    }
    let e = within(t, LIMIT_1)?;
    Ok(format!("6/6 formulas, {e:.2?}"))
}

// ---- 2 ----------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let m = corpus();
    let rel = build_relation(&m).unwrap();
    let r = compile_traceability(&m, &rel, &gen_all(&m), &SolverConfig::default(), 1)
        .map_err(|e| e.to_string())?;
    let always = Expr::Bool(true);
    let find = |ids: &[String], text: &str| {
        let want = parse_expr(text, &m).unwrap();
        ids.iter().filter_map(|id| r.case(id)).any(|c| {
            c.goal()
                .is_some_and(|g| equivalent_under(&m, g, &want, &always))
        })
    };
    let linked: Vec<String> = r
        .matrix
        .links_of("REQ-002")
        .iter()
        .map(|l| l.test_case.clone())
        .collect();
    let l1 = select_suite(&r, AssuranceLevel::L1);
    for (i, extra) in [
        "",
        " && TurnIndLvr == 1",
        " && TurnIndLvr == 2",
        " && EMER_ACTIVE",
        " && TURN_IND_OVERRIDE",
    ]
    .iter()
    .enumerate()
    {
        let tc = format!("OFF && elapsed(OFF) >= 320{extra}");
        check(
            find(&linked, &tc),
            format!("tc{} not linked to REQ-002", i + 7),
        )?;
        check(
            find(&l1, &tc),
            format!("tc{} not in the level-1 suite", i + 7),
        )?;
    }
    for lvr in 0..3 {
        let tc = format!("OFF && elapsed(OFF) >= 320 && EMER_ACTIVE && TurnIndLvr == {lvr}");
        check(
            !find(&l1, &tc),
            format!("tc{} selected at level 1", 12 + lvr),
        )?;
    }
    let req2 = characterize(m.requirement("REQ-002").unwrap(), &m).unwrap();
    check(
        !has_impact(&m, m.var_by_name("TurnIndLvr").unwrap(), &req2),
        "TurnIndLvr impacts REQ-002",
    )?;
    let e = within(t, LIMIT_2)?;
    Ok(format!(
        "tc7-tc11 linked and selected, tc12-tc14 excluded, {e:.2?}"
    ))
}

// ---- 3 ----------------------------------------------------------------------

/// Re-executes the witness stimuli with the interpreter.
fn replays(m: &Model, w: &Witness) -> bool {
    w.stimuli.len() + 1 == w.trace.len()
        && w.stimuli.iter().enumerate().all(|(i, s)| {
            let inputs: Vec<_> = s.change.into_iter().collect();
            step(m, &w.trace[i], &inputs, s.time).is_ok_and(|r| r.post == w.trace[i + 1])
        })
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let m = corpus();
    let rel = build_relation(&m).unwrap();
    let cfg = SolverConfig {
        max_bound: REQ_BOUND,
        ..SolverConfig::default()
    };
    let mut longest = 0;
    for r in &m.requirements {
        let f = characterize(r, &m).map_err(|e| e.to_string())?;
        let out = solve(&m, &rel, &f, &cfg).map_err(|e| format!("{}: {e}", r.id))?;
        let w = out
            .witness()
            .ok_or_else(|| format!("{}: no witness within {REQ_BOUND} steps", r.id))?;
        longest = longest.max(w.last());
        check(
            eval_on_trace(
                &f,
                &ValTrace {
                    model: &m,
                    trace: &w.trace,
                },
            ),
            format!("{}: trace evaluation", r.id),
        )?;
        check(replays(&m, w), format!("{}: interpreter replay", r.id))?;
        for (mode, spec) in [
            (Mode::Strict, ToleranceSpec::default()),
            (
                Mode::Tolerant,
                ToleranceSpec::uniform(&m, Tolerance::zero()),
            ),
        ] {
            let p = emit(&m, &r.id, &[], w, mode, &spec).map_err(|e| e.to_string())?;
            let v = execute(&p, &m, &Adapter::Interpreter(&m))
                .map_err(|e| e.to_string())?
                .verdict;
            check(v.passed(), format!("{} {mode}: {v}", r.id))?;
        }
    }
    let e = within(t, LIMIT_3)?;
    Ok(format!(
        "{} witnesses, longest {longest} steps, {e:.2?}",
        m.requirements.len()
    ))
}

// ---- 4 ----------------------------------------------------------------------

/// Example formula `(x = 0) U (y > 0 && X G z = 1)` checked on every trace with `n + 2` states.
fn example_formula(n: usize) -> Result<usize, String> {
    let (x, y, z) = (0, 1, 2);
    let f = Ltl::until(
        Ltl::atom(var_is(x, false)),
        Ltl::and([
            Ltl::atom(var_is(y, true)),
            Ltl::next(Ltl::globally(Ltl::atom(var_is(z, true)))),
        ]),
    );
    let last = n + 1;
    let inst = expand_bmc(&f, last, Start::Formula(Expr::Bool(true))).map_err(|e| e.to_string())?;
    check(inst.len() >= 2, "fewer than two instances")?;
    let states = n + 2;
    let total = 1usize << (3 * states);
    for code in 0..total {
        let t = Bits(
            (0..states)
                .map(|i| (0..3).map(|b| code >> (3 * i + b) & 1 == 1).collect())
                .collect(),
        );
        let any = inst.iter().any(|i| i.goal.eval(&t));
        check(
            any == eval_on_trace(&f, &t),
            format!("n={n}: disagreement on {t:?}"),
        )?;
        let bmc0 = t.0[0][y] && (1..=last).all(|i| t.0[i][z]);
        let bmc1 = !t.0[0][x] && t.0[1][y] && (2..=last).all(|i| t.0[i][z]);
        check(
            inst[0].goal.eval(&t) == bmc0,
            format!("n={n}: first instance differs on {t:?}"),
        )?;
        check(
            inst[1].goal.eval(&t) == bmc1,
            format!("n={n}: second instance differs on {t:?}"),
        )?;
    }
    Ok(total)
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let config = Config {
        cases: RANDOM_LTL_CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let count = std::cell::Cell::new(0u32);
    runner
        .run(&(formula_strategy(3), trace_strategy(2, 6)), |(f, tr)| {
            count.set(count.get() + 1);
            proptest::prop_assert!(agree(&f, &tr), "{f:?} on {tr:?}");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let mut exhaustive = 0;
    for n in [2, 3, 4] {
        exhaustive += example_formula(n)?;
    }
    let e = within(t, LIMIT_4)?;
    Ok(format!(
        "{} random and {exhaustive} exhaustive cases agree, {e:.2?}",
        count.get()
    ))
}

// ---- 5 ----------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let cfg = SolverConfig {
        max_bound: BRUTE_DEPTH,
        ..SolverConfig::default()
    };
    let (mut models, mut goals, mut sat) = (0, 0, 0);
    for seed in 0.. {
        if models == RANDOM_MODELS {
            break;
        }
        let m = parse_model(&random_model_text(seed)).map_err(|e| e.to_string())?;
        let Ok(rel) = build_relation(&m) else {
            continue;
        };
        if !m.validate().is_empty() {
            continue;
        }
        models += 1;
        let reach = brute_reachable_states(&m, BRUTE_DEPTH);
        for s in 0..m.states.len() {
            let f = Ltl::finally(Ltl::atom(Expr::InState(s)));
            let found = solve(&m, &rel, &f, &cfg)
                .map_err(|e| e.to_string())?
                .witness()
                .is_some();
            check(
                found == reach.contains(&s),
                format!(
                    "seed {seed}, state {}: solver {found}, brute force {}",
                    m.states[s].name,
                    reach.contains(&s)
                ),
            )?;
            goals += 1;
            sat += found as usize;
        }
    }
    Ok(format!(
        "{models} models, {goals} goals ({sat} satisfiable) agree at depth {BRUTE_DEPTH}"
    ))
}

// ---- 6 ----------------------------------------------------------------------

fn shifted(p: &TestProcedure, i: usize, d: i64) -> mbt_core::frontend::TraceLog {
    let mut q = p.clone();
    q.expected[i].0 += d;
    q.expected_log()
}

fn with_tolerance(p: &TestProcedure, m: &Model, late: i64, early: i64) -> TestProcedure {
    let mut q = p.clone();
    q.tolerances = ToleranceSpec::uniform(
        m,
        Tolerance {
            dlate: late,
            dearly: early,
            ..Tolerance::zero()
        },
    );
    q
}

fn criterion_6() -> Outcome {
    let m = corpus();
    let rel = build_relation(&m).unwrap();
    let f = characterize(m.requirement("REQ-002").unwrap(), &m).unwrap();
    let w = solve(&m, &rel, &f, &SolverConfig::default())
        .unwrap()
        .witness()
        .cloned()
        .unwrap();
    let spec = ToleranceSpec::uniform(
        &m,
        Tolerance {
            dlate: DELTA,
            dearly: DELTA,
            ..Tolerance::zero()
        },
    );
    let mut tol = emit(&m, "grid", &[], &w, Mode::Tolerant, &spec).map_err(|e| e.to_string())?;
    let strict = emit(&m, "grid", &[], &w, Mode::Strict, &ToleranceSpec::default())
        .map_err(|e| e.to_string())?;
    // An output change with at least 3δ to the neighbouring changes of the same output.
    let gap = 3 * DELTA;
    let i = (0..tol.expected.len())
        .rev()
        .find(|&i| {
            let (t, v, _) = tol.expected[i];
            let same: Vec<i64> = tol
                .expected
                .iter()
                .filter(|e| e.1 == v)
                .map(|e| e.0)
                .collect();
            t >= gap && same.iter().all(|&u| u == t || (u - t).abs() >= gap)
        })
        .ok_or("no isolated output change in the witness")?;
    let change = tol.expected[i].0;
    tol.horizon = tol.horizon.max(change + 4 * DELTA);
    let run = |p: &TestProcedure, log| {
        execute(p, &m, &Adapter::ExternalLog(log)).map(|x| x.verdict.passed())
    };
    let levels = [0, DELTA / 2, DELTA, 2 * DELTA];
    let mut points = 0;
    for d in -2 * DELTA..=2 * DELTA {
        let log = shifted(&tol, i, d);
        let p = run(&tol, log.clone()).map_err(|e| e.to_string())?;
        check(
            p == (d.abs() <= DELTA),
            format!("shift {d}: tolerant verdict {p}"),
        )?;
        let s = run(&strict, log.clone()).map_err(|e| e.to_string())?;
        check(s == (d == 0), format!("shift {d}: strict verdict {s}"))?;
        let mut grid = Vec::new();
        for &late in &levels {
            for &early in &levels {
                let p = run(&with_tolerance(&tol, &m, late, early), log.clone())
                    .map_err(|e| e.to_string())?;
                check(
                    p == (-early <= d && d <= late),
                    format!("shift {d}, dlate {late}, dearly {early}: {p}"),
                )?;
                grid.push((late, early, p));
                points += 1;
            }
        }
        for &(l1, e1, p1) in &grid {
            for &(l2, e2, p2) in &grid {
                check(
                    !(p1 && l1 <= l2 && e1 <= e2) || p2,
                    format!("shift {d}: not monotone"),
                )?;
            }
        }
    }
    Ok(format!(
        "41 shifts of the change at t={change}, {points} tolerance points"
    ))
}

// ---- 7 ----------------------------------------------------------------------

const MUTANTS: [&str; 3] = [
    "constant-tweak:ON -> OFF:340:300",
    "guard-negate:OFF -> ON",
    "action-drop:Idle -> FLASHING:FlashLeft",
];

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let m = corpus();
    let rel = build_relation(&m).unwrap();
    let r = compile_traceability(&m, &rel, &gen_all(&m), &SolverConfig::default(), 1)
        .map_err(|e| e.to_string())?;
    let suite = select_suite(&r, AssuranceLevel::L1);
    let mut procs = Vec::new();
    for id in &suite {
        let w = r.witness(id).ok_or(format!("{id}: no witness"))?;
        procs.push(
            emit(
                &m,
                id,
                std::slice::from_ref(id),
                w,
                Mode::Strict,
                &ToleranceSpec::default(),
            )
            .map_err(|e| e.to_string())?,
        );
    }
    let failing = |sut: &Model| -> Result<Vec<String>, String> {
        let mut out = Vec::new();
        for p in &procs {
            if !execute(p, &m, &Adapter::Interpreter(sut))
                .map_err(|e| e.to_string())?
                .verdict
                .passed()
            {
                out.push(p.id.clone());
            }
        }
        Ok(out)
    };
    let alarms = failing(&m)?;
    check(alarms.is_empty(), format!("false alarms: {alarms:?}"))?;
    let req2: Vec<String> = r
        .matrix
        .links_of("REQ-002")
        .iter()
        .map(|l| l.test_case.clone())
        .collect();
    let mut kills = Vec::new();
    for spec in MUTANTS {
        let mutant = mutate(&m, &Mutation::parse(spec).unwrap()).map_err(|e| e.to_string())?;
        let f = failing(&mutant)?;
        check(!f.is_empty(), format!("{spec} survives"))?;
        if spec.starts_with("constant-tweak") {
            check(
                f.iter().any(|id| req2.contains(id)),
                "no REQ-002 procedure kills the dwell mutant",
            )?;
        }
        kills.push(f.len());
    }
    let e = within(t, LIMIT_7)?;
    Ok(format!(
        "{} procedures, 0 false alarms, kills {kills:?}, {e:.2?}",
        procs.len()
    ))
}

// ---- 8 ----------------------------------------------------------------------

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "procedures"] {
        for e in fs::read_dir(dir.join(sub)).unwrap().flatten() {
            if e.path().is_file() {
                out.push((
                    format!("{sub}/{}", e.file_name().to_string_lossy()),
                    fs::read(e.path()).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model_path = dir.path().join("corpus.mbt");
    fs::write(&model_path, TURN_INDICATOR).unwrap();
    let mp = model_path.to_str().unwrap();
    let mut runs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let args = [
            "mbt",
            "generate",
            "--model",
            mp,
            "--seed",
            "42",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ];
        let code = main_with(args, &mut o, &mut e);
        check(
            code == 0,
            format!(
                "generate exited with {code}: {}",
                String::from_utf8_lossy(&e)
            ),
        )?;
        runs.push(tree(&out));
    }
    check(runs[0] == runs[1], "generated files differ between runs")?;
    let m = corpus();
    let printed = print_model(&m);
    check(
        print_model(&parse_model(&printed).map_err(|e| e.to_string())?) == printed,
        "corpus model round trip",
    )?;
    for seed in 0..50 {
        let r = parse_model(&random_model_text(seed)).unwrap();
        let p = print_model(&r);
        check(
            print_model(&parse_model(&p).unwrap()) == p,
            format!("random model {seed} round trip"),
        )?;
    }
    let mut procs = 0;
    for (name, bytes) in runs[0].iter().filter(|(n, _)| n.ends_with(".proc")) {
        let text = String::from_utf8(bytes.clone()).unwrap();
        let p = parse_procedure(&text, &m).map_err(|e| format!("{name}: {e}"))?;
        check(
            print_procedure(&p, &m) == text,
            format!("{name}: procedure round trip"),
        )?;
        let log = print_trace_log(&p.expected_log(), &m);
        let back = parse_trace_log(&log, &m).map_err(|e| format!("{name}: {e}"))?;
        check(
            print_trace_log(&back, &m) == log && back == p.expected_log(),
            format!("{name}: trace round trip"),
        )?;
        procs += 1;
    }
    Ok(format!(
        "{} identical files, {procs} procedures and traces round trip",
        runs[0].len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("corpus hierarchic coverage", criterion_1),
        ("corpus traceability", criterion_2),
        ("requirement witnesses", criterion_3),
        ("bounded expansion vs trace evaluation", criterion_4),
        ("solver vs brute force", criterion_5),
        ("conformance perturbation grid", criterion_6),
        ("mutation kill", criterion_7),
        ("determinism and round trips", criterion_8),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
