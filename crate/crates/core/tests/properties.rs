mod common;

use std::sync::OnceLock;

use common::*;
use mbt_core::corpus::TURN_INDICATOR;
use mbt_core::frontend::parse_ltl;
use mbt_core::frontend::{parse_model, parse_trace_log, print_model, print_trace_log, TraceLog};
use mbt_core::ltl::{dnf, eval_on_trace, holds_at_end, nnf, progress, Ltl, TraceView};
use mbt_core::model::Model;
use mbt_core::oracle::{parse_tolerances, print_tolerances, Tolerance, ToleranceSpec};
use mbt_core::procgen::{
    emit, execute, parse_procedure, print_procedure, Adapter, Mode, TestProcedure,
};
use mbt_core::semantics::{build_relation, interval_reach, SuccessorConfig, Successors, Valuation};
use mbt_core::solver::{solve, SolverConfig};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| parse_model(TURN_INDICATOR).unwrap())
}

// ---- ltl --------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn bmc_instances_agree_with_trace_evaluation(f in formula_strategy(3), t in trace_strategy(2, 6)) {
        prop_assert!(agree(&f, &t));
    }

    #[test]
    fn nnf_preserves_meaning(f in formula_strategy(3), t in trace_strategy(2, 6)) {
        prop_assert_eq!(eval_on_trace(&nnf(&f), &t), eval_on_trace(&f, &t));
    }

    #[test]
    fn negation_complements(f in formula_strategy(3), t in trace_strategy(2, 6)) {
        prop_assert_eq!(eval_on_trace(&Ltl::negation(f.clone()), &t), !eval_on_trace(&f, &t));
    }

    #[test]
    fn progression_agrees_with_trace_evaluation(f in formula_strategy(3), t in trace_strategy(2, 6)) {
        let k = t.len() - 1;
        let mut cur = f.clone();
        for i in 0..k {
            cur = progress(&cur, &|e| t.holds(i, e));
        }
        prop_assert_eq!(holds_at_end(&cur, &|e| t.holds(k, e)), eval_on_trace(&f, &t));
    }

    #[test]
    fn dnf_is_equivalent(f in formula_strategy(3), t in trace_strategy(2, 6)) {
        if let Ok(ds) = dnf(&f) {
            prop_assert_eq!(ds.iter().any(|d| eval_on_trace(d, &t)), eval_on_trace(&f, &t));
        }
    }
}

// ---- semantics --------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn relation_admits_every_interpreter_step(seed in 0u64..10_000, walk in 0u64..u64::MAX) {
        let m = parse_model(&random_model_text(seed)).unwrap();
        prop_assume!(m.validate().is_empty());
        let Ok(rel) = build_relation(&m) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(walk);
        let mut v = Valuation::initial(&m);
        prop_assert!(rel.holds_initial(&v));
        for _ in 0..10 {
            let next = brute_successors(&m, &v);
            if next.is_empty() {
                break;
            }
            let w = next[rng.gen_range(0..next.len())].clone();
            prop_assert!(rel.holds(&m, &v, &w), "{}\n=>\n{}", v.display(&m), w.display(&m));
            v = w;
        }
    }

    #[test]
    fn corpus_relation_admits_generated_successors(walk in 0u64..u64::MAX) {
        let m = corpus();
        let rel = build_relation(m).unwrap();
        let succ = Successors::new(m, &[], &SuccessorConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(walk);
        let mut v = Valuation::initial(m);
        for _ in 0..12 {
            let next = succ.successors(&v).unwrap();
            if next.is_empty() {
                break;
            }
            let (_, w) = next[rng.gen_range(0..next.len())].clone();
            prop_assert!(rel.holds(m, &v, &w));
            v = w;
        }
    }

    #[test]
    fn interval_abstraction_contains_concrete_runs(walk in 0u64..u64::MAX) {
        let m = corpus();
        let reach = interval_reach(m, &mbt_core::expr::Expr::Bool(true), 10);
        let succ = Successors::new(m, &[], &SuccessorConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(walk);
        let mut v = Valuation::initial(m);
        for d in 0..=10 {
            let st = &reach.depths[d.min(reach.depths.len() - 1)];
            for (x, &(lo, hi)) in st.vars.iter().enumerate() {
                prop_assert!(lo <= v.var(x) && v.var(x) <= hi, "depth {d} var {x}");
            }
            for (k, leaves) in st.leaves.iter().enumerate() {
                prop_assert!(leaves.contains(&v.leaf(m, k)), "depth {d} machine {k}");
            }
            for s in 0..m.states.len() {
                if v.active(m, s) {
                    let e = v.time(m) - v.timer(m, s);
                    let (lo, hi) = st.elapsed[s];
                    prop_assert!(lo <= e && e <= hi, "depth {d} elapsed({s}) = {e} not in [{lo}, {hi}]");
                }
            }
            let next = succ.successors(&v).unwrap();
            if next.is_empty() {
                break;
            }
            v = next[rng.gen_range(0..next.len())].1.clone();
        }
    }
}

// ---- oracle -----------------------------------------------------------------

/// Strict and tolerant procedures for a corpus witness whose output changes at t > 0.
fn corpus_procedures() -> &'static [(TestProcedure, TestProcedure)] {
    static P: OnceLock<Vec<(TestProcedure, TestProcedure)>> = OnceLock::new();
    P.get_or_init(|| {
        let m = corpus();
        let rel = build_relation(m).unwrap();
        [
            "F (OFF && elapsed(OFF) >= 320)",
            "F (EMER_ON && FlashLeft && FlashRight)",
            "F (FlashRight && Voltage <= 80)",
        ]
        .iter()
        .map(|g| {
            let f = parse_ltl(g, m).unwrap();
            let w = solve(m, &rel, &f, &SolverConfig::default())
                .unwrap()
                .witness()
                .cloned()
                .unwrap();
            let s = emit(m, g, &[], &w, Mode::Strict, &ToleranceSpec::default()).unwrap();
            let t = emit(
                m,
                g,
                &[],
                &w,
                Mode::Tolerant,
                &ToleranceSpec::uniform(m, Tolerance::zero()),
            )
            .unwrap();
            (s, t)
        })
        .collect()
    })
}

/// The procedure's expected log with the `idx`-th output change (after t=0) moved by `delta`.
fn perturbed(p: &TestProcedure, idx: usize, delta: i64) -> Option<TraceLog> {
    let m = corpus();
    let changes: Vec<usize> = (0..p.expected.len())
        .filter(|&i| p.expected[i].0 > 0)
        .collect();
    let &i = changes.get(idx % changes.len().max(1))?;
    let mut q = p.clone();
    q.expected[i].0 += delta;
    let t = q.expected[i].0;
    let prev = q.expected[..i]
        .iter()
        .rev()
        .find(|e| e.1 == q.expected[i].1)
        .map_or(0, |e| e.0);
    let next = q.expected[i + 1..]
        .iter()
        .find(|e| e.1 == q.expected[i].1)
        .map(|e| e.0);
    if t <= prev || next.is_some_and(|n| t >= n) || t > p.horizon {
        return None;
    }
    let _ = m;
    Some(q.expected_log())
}

fn with_tolerance(p: &TestProcedure, ms: i64) -> TestProcedure {
    let mut q = p.clone();
    let tol = Tolerance {
        dlate: ms,
        dearly: ms,
        ..Tolerance::zero()
    };
    q.tolerances = ToleranceSpec::uniform(corpus(), tol);
    q.horizon = p.horizon + ms;
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn strict_and_zero_tolerance_agree(which in 0usize..3, idx in 0usize..4, delta in -4i64..=4) {
        let (s, t) = &corpus_procedures()[which];
        let Some(log) = perturbed(s, idx, delta) else { return Ok(()) };
        let m = corpus();
        let strict = execute(s, m, &Adapter::ExternalLog(log.clone())).unwrap().verdict.passed();
        let tolerant = execute(t, m, &Adapter::ExternalLog(log)).unwrap().verdict.passed();
        prop_assert_eq!(strict, tolerant);
        prop_assert_eq!(strict, delta == 0);
    }

    #[test]
    fn verdicts_are_monotone_in_tolerance(which in 0usize..3, idx in 0usize..4, delta in -25i64..=25, a in 0i64..30, b in 0i64..30) {
        let (_, t) = &corpus_procedures()[which];
        let Some(log) = perturbed(t, idx, delta) else { return Ok(()) };
        let m = corpus();
        let (lo, hi) = (a.min(b), a.max(b));
        let pass_lo = execute(&with_tolerance(t, lo), m, &Adapter::ExternalLog(log.clone())).unwrap().verdict.passed();
        let pass_hi = execute(&with_tolerance(t, hi), m, &Adapter::ExternalLog(log)).unwrap().verdict.passed();
        prop_assert!(!pass_lo || pass_hi, "delta {delta}: passes at {lo} but not at {hi}");
    }
}

// ---- round trips ------------------------------------------------------------

fn log_strategy() -> impl Strategy<Value = TraceLog> {
    let m = corpus();
    let vars = m.observables();
    prop::collection::vec((0i64..50, 0usize..vars.len(), any::<u16>()), 0..20).prop_map(
        move |recs| {
            let mut log = TraceLog::default();
            let mut t = 0;
            for (dt, vi, raw) in recs {
                t += dt;
                let v = vars[vi];
                let (lo, hi) = m.variables[v].domain.bounds();
                log.push(t, v, lo + (raw as i64) % (hi - lo + 1));
            }
            log
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_models_print_to_a_fixed_point(seed in 0u64..100_000) {
        let m = parse_model(&random_model_text(seed)).unwrap();
        let text = print_model(&m);
        let again = parse_model(&text).unwrap();
        prop_assert_eq!(print_model(&again), text);
    }

    #[test]
    fn trace_logs_round_trip(log in log_strategy()) {
        let m = corpus();
        prop_assert_eq!(parse_trace_log(&print_trace_log(&log, m), m).unwrap(), log);
    }

    #[test]
    fn tolerances_round_trip(n in 0i64..50, d in 1i64..20, late in 0i64..1000, early in 0i64..1000) {
        let m = corpus();
        let tol = Tolerance { eps: Ratio::new(n, d), dlate: late, dearly: early };
        let spec = ToleranceSpec::uniform(m, tol);
        prop_assert_eq!(parse_tolerances(&print_tolerances(&spec, m), m).unwrap(), spec);
    }

    #[test]
    fn procedures_round_trip(log in log_strategy(), tolerant in any::<bool>(), horizon in 0i64..5000) {
        let m = corpus();
        let inputs = m.inputs();
        let split = |want_input: bool| -> Vec<(i64, usize, i64)> {
            log.records
                .iter()
                .filter(|r| inputs.contains(&r.var) == want_input)
                .map(|r| (r.time, r.var, r.value))
                .collect()
        };
        let p = TestProcedure {
            id: "p-1".into(),
            covers: vec!["trans-3".into(), "req-REQ-002".into()],
            mode: if tolerant { Mode::Tolerant } else { Mode::Strict },
            horizon,
            tolerances: if tolerant { ToleranceSpec::uniform(m, Tolerance::zero()) } else { ToleranceSpec::default() },
            stimuli: split(true),
            expected: split(false),
        };
        let text = print_procedure(&p, m);
        let q = parse_procedure(&text, m).unwrap();
        prop_assert_eq!(print_procedure(&q, m), text);
        prop_assert_eq!(q, p);
    }
}
