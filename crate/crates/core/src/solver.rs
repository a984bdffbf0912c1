//! Witness search for symbolic test cases.
//!
//! Breadth-first search over the event-driven successor graph. States are
//! deduplicated on their data variables, active basic states and (capped)
//! timer ages, paired with the formula obligation still open at that point, so
//! the first hit is a shortest witness.

use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;

use crate::expr::{CmpOp, Expr, StateId, VarId};
use crate::ltl::{
    eval_on_trace, expand_bmc_with_budget, holds_at_end, nnf, progress, BmcInstance, Bounded, Ltl,
    LtlError, Start, TraceView, DEFAULT_EXPANSION_BUDGET,
};
use crate::model::{Domain, Model};
use crate::semantics::{
    interval_reach, step, timer_slot, StepError, Stimulus, SuccessorConfig, Successors,
    TransitionRelation, Valuation,
};

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Largest trace index searched (a witness has at most `max_bound + 1` states).
    pub max_bound: usize,
    pub successors: SuccessorConfig,
    /// Search nodes allowed per solve call.
    pub node_budget: usize,
    pub expansion_budget: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_bound: 16,
            successors: SuccessorConfig::default(),
            node_budget: 400_000,
            expansion_budget: DEFAULT_EXPANSION_BUDGET,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub nodes: usize,
    pub max_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub trace: Vec<Valuation>,
    /// `stimuli[i]` leads from `trace[i]` to `trace[i + 1]`.
    pub stimuli: Vec<Stimulus>,
    pub discharge_index: Option<usize>,
    pub stats: SolveStats,
}

impl Witness {
    pub fn last(&self) -> usize {
        self.trace.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveOutcome {
    Witness(Witness),
    /// No witness with at most `bound + 1` states.
    UnsatAtBound(usize),
}

impl SolveOutcome {
    pub fn witness(&self) -> Option<&Witness> {
        match self {
            SolveOutcome::Witness(w) => Some(w),
            SolveOutcome::UnsatAtBound(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("search budget of {0} nodes exceeded")]
    BudgetExceeded(usize),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Ltl(#[from] LtlError),
    #[error("internal error: witness failed re-validation: {0}")]
    InvalidWitness(String),
}

/// A trace of valuations viewed by the LTL evaluator.
pub struct ValTrace<'a> {
    pub model: &'a Model,
    pub trace: &'a [Valuation],
}

impl TraceView for ValTrace<'_> {
    fn len(&self) -> usize {
        self.trace.len()
    }
    fn holds(&self, pos: usize, e: &Expr) -> bool {
        self.trace[pos].holds(self.model, e)
    }
}

/// Dedup key: relevant data (integer variables that are only compared against
/// constants reduced to their comparison class), active basic states and capped
/// ages of timers read by guards or the goal.
struct KeyMaker {
    vars: Vec<(VarId, Option<Vec<i64>>)>,
    timers: Vec<(StateId, i64, bool)>,
}

/// Whether every occurrence of `v` in `e` is a direct comparison with a constant.
fn only_compared(e: &Expr, v: VarId) -> bool {
    match e {
        Expr::Var(x) => *x != v,
        Expr::Cmp(_, a, b) => match (&**a, &**b) {
            (Expr::Var(_), Expr::Int(_)) | (Expr::Int(_), Expr::Var(_)) => true,
            _ => only_compared(a, v) && only_compared(b, v),
        },
        Expr::Not(x) | Expr::Undef(_, x) => only_compared(x, v),
        Expr::And(xs) | Expr::Or(xs) => xs.iter().all(|x| only_compared(x, v)),
        Expr::Arith(_, a, b) => only_compared(a, v) && only_compared(b, v),
        _ => true,
    }
}

impl KeyMaker {
    fn new(model: &Model, goals: &[&Expr]) -> KeyMaker {
        let mut caps: Vec<(StateId, i64, bool)> = Vec::new();
        let mut add = |s: StateId, c: i64, always: bool| match caps.iter_mut().find(|x| x.0 == s) {
            Some(x) => {
                x.1 = x.1.max(c + 2);
                x.2 |= always;
            }
            None => caps.push((s, c + 2, always)),
        };
        for tr in &model.transitions {
            for (s, c) in tr.guard.timer_constants() {
                add(s, c, false);
            }
            for s in tr.guard.timers() {
                add(s, 0, false);
            }
        }
        for g in goals {
            for (s, c) in g.timer_constants() {
                add(s, c, true);
            }
            for s in g.timers() {
                add(s, 0, true);
            }
        }

        let mut relevant: BTreeSet<VarId> = BTreeSet::new();
        for g in goals {
            relevant.extend(g.vars());
        }
        for tr in &model.transitions {
            relevant.extend(tr.guard.vars());
        }
        loop {
            let before = relevant.len();
            for tr in &model.transitions {
                for a in &tr.actions {
                    if relevant.contains(&a.var) {
                        relevant.extend(a.value.vars());
                    }
                }
            }
            if relevant.len() == before {
                break;
            }
        }
        let mut exprs: Vec<&Expr> = goals.to_vec();
        for tr in &model.transitions {
            exprs.push(&tr.guard);
            exprs.extend(tr.actions.iter().map(|a| &a.value));
        }
        let vars = relevant
            .into_iter()
            .map(|v| {
                let is_int = matches!(model.variables[v].domain, Domain::Int { .. });
                let assigned = model
                    .transitions
                    .iter()
                    .any(|t| t.actions.iter().any(|a| a.var == v));
                if !is_int || assigned || !exprs.iter().all(|e| only_compared(e, v)) {
                    return (v, None);
                }
                let mut cuts: BTreeSet<i64> = BTreeSet::new();
                for e in &exprs {
                    for (x, op, c) in e.comparison_constants() {
                        if x == v {
                            match op {
                                CmpOp::Lt | CmpOp::Ge => {
                                    cuts.insert(c);
                                }
                                CmpOp::Le | CmpOp::Gt => {
                                    cuts.insert(c + 1);
                                }
                                CmpOp::Eq | CmpOp::Ne => {
                                    cuts.insert(c);
                                    cuts.insert(c + 1);
                                }
                            }
                        }
                    }
                }
                (v, Some(cuts.into_iter().collect()))
            })
            .collect();
        KeyMaker { vars, timers: caps }
    }

    fn key(&self, model: &Model, v: &Valuation) -> Vec<i64> {
        let mut k: Vec<i64> = Vec::with_capacity(self.vars.len() + 8);
        for (x, cuts) in &self.vars {
            let val = v.var(*x);
            k.push(match cuts {
                Some(cs) => cs.partition_point(|&c| c <= val) as i64,
                None => val,
            });
        }
        let now = v.time(model);
        for m in 0..model.machines.len() {
            k.push(v.leaf(model, m) as i64);
        }
        for &(s, cap, always) in &self.timers {
            if always || v.active(model, s) {
                k.push((now - v.0[timer_slot(model, s)]).min(cap));
            } else {
                k.push(-1);
            }
        }
        k
    }
}

struct Node<R> {
    val: Valuation,
    residual: R,
    parent: Option<(usize, Stimulus)>,
    depth: usize,
}

fn rebuild<R>(nodes: &[Node<R>], mut i: usize) -> (Vec<Valuation>, Vec<Stimulus>) {
    let mut trace = vec![nodes[i].val.clone()];
    let mut stimuli = Vec::new();
    while let Some((p, s)) = nodes[i].parent {
        trace.push(nodes[p].val.clone());
        stimuli.push(s);
        i = p;
    }
    trace.reverse();
    stimuli.reverse();
    (trace, stimuli)
}

fn goal_exprs(f: &Ltl) -> Vec<Expr> {
    let mut out = Vec::new();
    f.visit_exprs(&mut |e| out.push(e.clone()));
    out
}

/// Shortest witness for an LTL test case, starting from the initial valuation.
pub fn solve(
    model: &Model,
    relation: &TransitionRelation,
    formula: &Ltl,
    cfg: &SolverConfig,
) -> Result<SolveOutcome, SolveError> {
    let f = nnf(formula);
    if let Some(goal) = f.eventually_state() {
        if interval_reach(model, goal, cfg.max_bound)
            .lower_bound
            .is_none()
        {
            return Ok(SolveOutcome::UnsatAtBound(cfg.max_bound));
        }
    }
    let goals = goal_exprs(&f);
    let goal_refs: Vec<&Expr> = goals.iter().collect();
    let succ = Successors::new(model, &goal_refs, &cfg.successors);
    let keys = KeyMaker::new(model, &goal_refs);

    let mut residuals: HashMap<Ltl, usize> = HashMap::new();
    let mut residual_list: Vec<Ltl> = Vec::new();
    let mut intern = |r: Ltl, list: &mut Vec<Ltl>| -> usize {
        *residuals.entry(r.clone()).or_insert_with(|| {
            list.push(r);
            list.len() - 1
        })
    };
    let r0 = intern(f.clone(), &mut residual_list);
    let mut nodes: Vec<Node<usize>> = vec![Node {
        val: Valuation::initial(model),
        residual: r0,
        parent: None,
        depth: 0,
    }];
    let mut seen: HashSet<(Vec<i64>, usize)> = HashSet::new();
    seen.insert((keys.key(model, &nodes[0].val), r0));
    let mut head = 0;
    let mut stats = SolveStats::default();
    while head < nodes.len() {
        let i = head;
        head += 1;
        stats.nodes += 1;
        stats.max_depth = stats.max_depth.max(nodes[i].depth);
        if stats.nodes > cfg.node_budget {
            return Err(SolveError::BudgetExceeded(cfg.node_budget));
        }
        let val = nodes[i].val.clone();
        let now = |e: &Expr| val.holds(model, e);
        let res = residual_list[nodes[i].residual].clone();
        if holds_at_end(&res, &now) {
            let (trace, stimuli) = rebuild(&nodes, i);
            let mut w = Witness {
                trace,
                stimuli,
                discharge_index: None,
                stats: stats.clone(),
            };
            if f.eventually_state().is_none() {
                w = refine_discharge(model, relation, &f, w, cfg)?;
            } else {
                w.discharge_index = Some(w.last());
            }
            validate_witness(model, relation, &f, &w)?;
            return Ok(SolveOutcome::Witness(w));
        }
        if nodes[i].depth >= cfg.max_bound {
            continue;
        }
        let next = progress(&res, &now);
        if next.is_false() {
            continue;
        }
        let rid = intern(next, &mut residual_list);
        for (stim, post) in succ.successors(&val)? {
            if seen.insert((keys.key(model, &post), rid)) {
                nodes.push(Node {
                    val: post,
                    residual: rid,
                    parent: Some((i, stim)),
                    depth: nodes[i].depth + 1,
                });
            }
        }
    }
    Ok(SolveOutcome::UnsatAtBound(cfg.max_bound))
}

/// Among witnesses of the same length, prefer the smallest discharge position.
fn refine_discharge(
    model: &Model,
    relation: &TransitionRelation,
    f: &Ltl,
    w: Witness,
    cfg: &SolverConfig,
) -> Result<Witness, SolveError> {
    let last = w.last();
    let Ok(instances) = expand_bmc_with_budget(f, last, Start::Initial, cfg.expansion_budget)
    else {
        return Ok(w);
    };
    let view = ValTrace {
        model,
        trace: &w.trace,
    };
    let Some(hit) = instances.iter().position(|i| i.goal.eval(&view)) else {
        return Ok(w);
    };
    let found = instances[hit].discharge;
    for inst in &instances[..hit] {
        if inst.discharge.is_none() || inst.discharge >= found {
            continue;
        }
        if let SolveOutcome::Witness(better) =
            solve_instances(model, relation, std::slice::from_ref(inst), cfg)?
        {
            return Ok(better);
        }
    }
    Ok(Witness {
        discharge_index: found,
        ..w
    })
}

/// Searches the instances in order and returns a witness for the first satisfiable one.
pub fn solve_instances(
    model: &Model,
    relation: &TransitionRelation,
    instances: &[BmcInstance],
    cfg: &SolverConfig,
) -> Result<SolveOutcome, SolveError> {
    let Some(first) = instances.first() else {
        return Ok(SolveOutcome::UnsatAtBound(0));
    };
    let last = first.last;
    for inst in instances {
        if let Some(w) = solve_instance(model, relation, inst, cfg)? {
            return Ok(SolveOutcome::Witness(w));
        }
    }
    Ok(SolveOutcome::UnsatAtBound(last))
}

fn solve_instance(
    model: &Model,
    relation: &TransitionRelation,
    inst: &BmcInstance,
    cfg: &SolverConfig,
) -> Result<Option<Witness>, SolveError> {
    let init = Valuation::initial(model);
    if !relation.holds_initial(&init) {
        return Ok(None);
    }
    if let Start::Formula(e) = &inst.start {
        if !init.holds(model, e) {
            return Ok(None);
        }
    }
    let mut goals: Vec<Expr> = Vec::new();
    collect_bounded(&inst.goal, &mut goals);
    let goal_refs: Vec<&Expr> = goals.iter().collect();
    let succ = Successors::new(model, &goal_refs, &cfg.successors);
    let keys = KeyMaker::new(model, &goal_refs);
    let mut nodes: Vec<Node<Bounded>> = vec![Node {
        val: init,
        residual: inst.goal.clone(),
        parent: None,
        depth: 0,
    }];
    let mut seen: HashSet<(Vec<i64>, Bounded)> = HashSet::new();
    let mut head = 0;
    let mut nodes_seen = 0;
    while head < nodes.len() {
        let i = head;
        head += 1;
        nodes_seen += 1;
        if nodes_seen > cfg.node_budget {
            return Err(SolveError::BudgetExceeded(cfg.node_budget));
        }
        let val = nodes[i].val.clone();
        let d = nodes[i].depth;
        let res = nodes[i].residual.assign(d, &|e: &Expr| val.holds(model, e));
        if res == Bounded::False {
            continue;
        }
        if d == inst.last {
            if res == Bounded::True {
                let (trace, stimuli) = rebuild(&nodes, i);
                let w = Witness {
                    trace,
                    stimuli,
                    discharge_index: inst.discharge,
                    stats: SolveStats {
                        nodes: nodes_seen,
                        max_depth: d,
                    },
                };
                let view = ValTrace {
                    model,
                    trace: &w.trace,
                };
                if !inst.goal.eval(&view) {
                    return Err(SolveError::InvalidWitness(
                        "instance goal not satisfied".into(),
                    ));
                }
                validate_steps(model, relation, &w)?;
                return Ok(Some(w));
            }
            continue;
        }
        for (stim, post) in succ.successors(&val)? {
            if seen.insert((keys.key(model, &post), res.clone())) {
                nodes.push(Node {
                    val: post,
                    residual: res.clone(),
                    parent: Some((i, stim)),
                    depth: d + 1,
                });
            }
        }
    }
    Ok(None)
}

fn collect_bounded(b: &Bounded, out: &mut Vec<Expr>) {
    match b {
        Bounded::At(_, e) => {
            if !out.contains(e) {
                out.push(e.clone())
            }
        }
        Bounded::And(xs) | Bounded::Or(xs) => xs.iter().for_each(|x| collect_bounded(x, out)),
        _ => {}
    }
}

fn validate_steps(
    model: &Model,
    relation: &TransitionRelation,
    w: &Witness,
) -> Result<(), SolveError> {
    let bad = |m: String| Err(SolveError::InvalidWitness(m));
    if w.stimuli.len() + 1 != w.trace.len() {
        return bad("stimulus count does not match trace length".into());
    }
    if !relation.holds_initial(&w.trace[0]) {
        return bad("trace does not start in the initial valuation".into());
    }
    for i in 0..w.stimuli.len() {
        let (pre, post) = (&w.trace[i], &w.trace[i + 1]);
        if !relation.holds(model, pre, post) {
            return bad(format!("step {i} violates the transition relation"));
        }
        let s = w.stimuli[i];
        let inputs: Vec<_> = s.change.into_iter().collect();
        let replay = step(model, pre, &inputs, s.time)?;
        if replay.post != *post {
            return bad(format!("interpreter replay diverges at step {i}"));
        }
    }
    Ok(())
}

/// Checks a witness against the transition relation, the interpreter and the formula.
pub fn validate_witness(
    model: &Model,
    relation: &TransitionRelation,
    formula: &Ltl,
    w: &Witness,
) -> Result<(), SolveError> {
    validate_steps(model, relation, w)?;
    if !eval_on_trace(
        formula,
        &ValTrace {
            model,
            trace: &w.trace,
        },
    ) {
        return Err(SolveError::InvalidWitness(
            "formula does not hold on the witness".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub id: String,
    pub outcome: Result<SolveOutcome, SolveError>,
    /// Other test cases of the suite that this entry's witness also satisfies.
    pub also_discharges: Vec<String>,
}

/// Solves every case, in parallel on at most `jobs` threads. Results keep the input order.
pub fn solve_suite(
    model: &Model,
    relation: &TransitionRelation,
    cases: &[(String, Ltl)],
    cfg: &SolverConfig,
    jobs: usize,
) -> Vec<SuiteEntry> {
    let mut first_of: HashMap<&Ltl, usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    for (i, (_, f)) in cases.iter().enumerate() {
        first_of.entry(f).or_insert_with(|| {
            unique.push(i);
            i
        });
    }
    let run = || -> Vec<Result<SolveOutcome, SolveError>> {
        unique
            .par_iter()
            .map(|&i| solve(model, relation, &cases[i].1, cfg))
            .collect()
    };
    let solved = match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let by_case: HashMap<usize, &Result<SolveOutcome, SolveError>> =
        unique.iter().copied().zip(solved.iter()).collect();
    cases
        .iter()
        .enumerate()
        .map(|(i, (id, f))| {
            let outcome = by_case[&first_of[f]].clone();
            let also_discharges = match &outcome {
                Ok(SolveOutcome::Witness(w)) => {
                    let view = ValTrace {
                        model,
                        trace: &w.trace,
                    };
                    cases
                        .iter()
                        .enumerate()
                        .filter(|&(j, (_, g))| j != i && eval_on_trace(&nnf(g), &view))
                        .map(|(_, (id2, _))| id2.clone())
                        .collect()
                }
                _ => Vec::new(),
            };
            SuiteEntry {
                id: id.clone(),
                outcome,
                also_discharges,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_ltl, parse_model};
    use crate::semantics::build_relation;

    const TOGGLE: &str = "model t {\n in x : int 0..3 init 0\n out y : bool init false\n machine M {\n state A initial { on x > 0 / y := true -> B }\n state B { on after(B, 10) / y := false -> A }\n }\n}\n";

    #[test]
    fn trivial_goal_is_the_initial_state() {
        let m = parse_model(TOGGLE).unwrap();
        let rel = build_relation(&m).unwrap();
        let out = solve(&m, &rel, &Ltl::finally(Ltl::tt()), &SolverConfig::default()).unwrap();
        let w = out.witness().unwrap();
        assert_eq!(w.trace.len(), 1);
        assert_eq!(w.discharge_index, Some(0));
    }

    #[test]
    fn timed_goal_is_reached() {
        let m = parse_model(TOGGLE).unwrap();
        let rel = build_relation(&m).unwrap();
        let f = parse_ltl("F (B && elapsed(B) >= 10)", &m).unwrap();
        let w = solve(&m, &rel, &f, &SolverConfig::default()).unwrap();
        let w = w.witness().unwrap().clone();
        assert!(w.trace.last().unwrap().holds(&m, &Expr::InState(1)));
    }

    #[test]
    fn exclusive_states_are_unsat() {
        let m = parse_model(TOGGLE).unwrap();
        let rel = build_relation(&m).unwrap();
        let f = parse_ltl("F (A && B)", &m).unwrap();
        let cfg = SolverConfig {
            max_bound: 6,
            ..SolverConfig::default()
        };
        assert_eq!(
            solve(&m, &rel, &f, &cfg).unwrap(),
            SolveOutcome::UnsatAtBound(6)
        );
    }
}
