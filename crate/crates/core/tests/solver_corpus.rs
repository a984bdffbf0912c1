use mbt_core::corpus::TURN_INDICATOR;
use mbt_core::frontend::{parse_ltl, parse_model};
use mbt_core::semantics::build_relation;
use mbt_core::solver::{solve, solve_suite, SolveOutcome, SolverConfig};

fn solve_text(text: &str) -> SolveOutcome {
    let m = parse_model(TURN_INDICATOR).unwrap();
    let rel = build_relation(&m).unwrap();
    let f = parse_ltl(text, &m).unwrap();
    solve(&m, &rel, &f, &SolverConfig::default()).unwrap()
}

#[test]
fn corpus_goals_have_short_witnesses() {
    for (text, len) in [
        ("F (Voltage <= 80)", 2),
        ("F (EMER_OFF && EmerFlash)", 2),
        ("F (OFF && elapsed(OFF) >= 320)", 0),
        ("F (OFF && elapsed(OFF) >= 320 && TurnIndLvr == 1)", 0),
        ("F (OFF && elapsed(OFF) >= 320 && TURN_IND_OVERRIDE)", 0),
    ] {
        let t = std::time::Instant::now();
        let out = solve_text(text);
        let w = out.witness().unwrap_or_else(|| panic!("{text}: {out:?}"));
        eprintln!(
            "{text}: len {} nodes {} in {:?}",
            w.trace.len(),
            w.stats.nodes,
            t.elapsed()
        );
        if len > 0 {
            assert_eq!(w.trace.len(), len, "{text}");
        }
    }
}

#[test]
fn contradictory_corpus_goal_is_unsat() {
    assert!(matches!(
        solve_text("F (ON && OFF)"),
        SolveOutcome::UnsatAtBound(_)
    ));
}

#[test]
fn suite_reports_cross_discharge() {
    let m = parse_model(TURN_INDICATOR).unwrap();
    let rel = build_relation(&m).unwrap();
    let cases: Vec<(String, _)> = [
        ("tc7", "F (OFF && elapsed(OFF) >= 320)"),
        ("tc8", "F (OFF && elapsed(OFF) >= 320 && TurnIndLvr == 1)"),
    ]
    .iter()
    .map(|(id, t)| (id.to_string(), parse_ltl(t, &m).unwrap()))
    .collect();
    let out = solve_suite(&m, &rel, &cases, &SolverConfig::default(), 2);
    assert_eq!(out.len(), 2);
    assert!(out[1].also_discharges.contains(&"tc7".to_string()));
}
