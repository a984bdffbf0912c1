//! Model coverage strategies, each producing symbolic test cases `F ψ`.

use std::collections::BTreeSet;
use std::fmt;

use crate::expr::{CmpOp, Expr, StateId, VarId};
use crate::ltl::Ltl;
use crate::model::{writer_reader_pairs, Domain, ElementRef, Model, TransitionId, TransitionKind};
use crate::semantics::state_satisfiable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    BasicControlState,
    Transition,
    Mcdc,
    HierarchicTransition,
    EqClassBoundary,
    ControlStatePairs,
    Interface,
    Block,
    /// Characterization of a requirement.
    Requirement,
    /// Conjunction created while tracing requirements.
    Refinement,
}

impl Strategy {
    /// The model coverage strategies, in generation order.
    pub const COVERAGE: [Strategy; 8] = [
        Strategy::BasicControlState,
        Strategy::Transition,
        Strategy::Mcdc,
        Strategy::HierarchicTransition,
        Strategy::EqClassBoundary,
        Strategy::ControlStatePairs,
        Strategy::Interface,
        Strategy::Block,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::BasicControlState => "basic-control-state",
            Strategy::Transition => "transition",
            Strategy::Mcdc => "mcdc",
            Strategy::HierarchicTransition => "hierarchic-transition",
            Strategy::EqClassBoundary => "eqclass-boundary",
            Strategy::ControlStatePairs => "control-state-pairs",
            Strategy::Interface => "interface",
            Strategy::Block => "block",
            Strategy::Requirement => "requirement",
            Strategy::Refinement => "refinement",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Strategy> {
        Strategy::COVERAGE
            .into_iter()
            .chain([Strategy::Requirement, Strategy::Refinement])
            .find(|s| s.tag() == tag)
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Strategy::BasicControlState => "state",
            Strategy::Transition => "trans",
            Strategy::Mcdc => "mcdc",
            Strategy::HierarchicTransition => "hier",
            Strategy::EqClassBoundary => "eqc",
            Strategy::ControlStatePairs => "pair",
            Strategy::Interface => "iface",
            Strategy::Block => "block",
            Strategy::Requirement => "req",
            Strategy::Refinement => "ref",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicTestCase {
    pub id: String,
    pub strategy: Strategy,
    pub formula: Ltl,
    pub covers: Vec<ElementRef>,
    /// Filled in by tracing.
    pub requirements: Vec<String>,
    /// Test cases this one was combined from.
    pub derived_from: Vec<String>,
}

impl SymbolicTestCase {
    pub fn new(id: String, strategy: Strategy, goal: Expr, covers: Vec<ElementRef>) -> Self {
        SymbolicTestCase {
            id,
            strategy,
            formula: Ltl::finally(Ltl::atom(goal)),
            covers,
            requirements: Vec::new(),
            derived_from: Vec::new(),
        }
    }

    /// ψ when the formula is `F ψ`.
    pub fn goal(&self) -> Option<&Expr> {
        self.formula.eventually_state()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McdcObligation {
    /// Index into the condition list of the analysis.
    pub condition: usize,
    pub vector_a: Vec<bool>,
    pub vector_b: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McdcAnalysis {
    pub conditions: Vec<Expr>,
    pub obligations: Vec<McdcObligation>,
    /// Conditions without an independence pair.
    pub infeasible: Vec<usize>,
}

/// Largest number of conditions analysed exhaustively.
pub const MCDC_MAX_CONDITIONS: usize = 16;

/// All independence pairs of condition `i`, ordered with the most `true` values first.
pub fn mcdc_pairs(guard: &Expr, conds: &[Expr], i: usize) -> Vec<McdcObligation> {
    let n = conds.len();
    if n > MCDC_MAX_CONDITIONS {
        return Vec::new();
    }
    let mut out = Vec::new();
    for bits in (0u32..1 << n).rev() {
        if bits & (1 << (n - 1 - i)) == 0 {
            continue;
        }
        let a: Vec<bool> = (0..n).map(|j| bits & (1 << (n - 1 - j)) != 0).collect();
        let mut b = a.clone();
        b[i] = false;
        if guard.eval_conditions(conds, &a) != guard.eval_conditions(conds, &b) {
            out.push(McdcObligation {
                condition: i,
                vector_a: a,
                vector_b: b,
            });
        }
    }
    out
}

/// Masking MC/DC: a condition is covered by a pair of vectors that differ in that condition only
/// and flip the decision.
pub fn mcdc_obligations(guard: &Expr) -> McdcAnalysis {
    let conditions = guard.conditions();
    let mut obligations = Vec::new();
    let mut infeasible = Vec::new();
    for i in 0..conditions.len() {
        match mcdc_pairs(guard, &conditions, i).into_iter().next() {
            Some(o) => obligations.push(o),
            None => infeasible.push(i),
        }
    }
    McdcAnalysis {
        conditions,
        obligations,
        infeasible,
    }
}

fn vector_expr(conds: &[Expr], values: &[bool]) -> Expr {
    Expr::and_all(
        conds
            .iter()
            .zip(values)
            .map(|(c, &v)| if v { c.clone() } else { c.negate() }),
    )
}

fn in_state(s: StateId) -> Expr {
    Expr::InState(s)
}

fn eq(v: VarId, c: i64, model: &Model) -> Expr {
    match model.variables[v].domain {
        Domain::Bool if c == 1 => Expr::Var(v),
        Domain::Bool => Expr::not(Expr::Var(v)),
        _ => Expr::cmp(CmpOp::Eq, Expr::Var(v), Expr::Int(c)),
    }
}

/// Firing condition of a transition entered from `leaf`: its guard, with every
/// higher-priority guard on the way from `leaf` to the source negated.
pub fn firing_condition(model: &Model, t: TransitionId, leaf: StateId) -> Expr {
    let tr = &model.transitions[t];
    let mut parts = vec![in_state(leaf), tr.guard.clone()];
    let rank = model.priority_rank(t);
    for s in model.path_to_root(leaf) {
        if s == tr.source {
            break;
        }
        for (u, other) in model.transitions.iter().enumerate() {
            if other.source == s && model.priority_rank(u) > rank {
                parts.push(other.guard.negate());
            }
        }
    }
    Expr::and_all(parts)
}

/// Transition coverage goal: source active and guard true.
pub fn transition_goal(model: &Model, t: TransitionId) -> Expr {
    let tr = &model.transitions[t];
    Expr::and_all([in_state(tr.source), tr.guard.clone()])
}

struct Builder {
    strategy: Strategy,
    out: Vec<SymbolicTestCase>,
    seen: BTreeSet<Expr>,
}

impl Builder {
    fn new(strategy: Strategy) -> Builder {
        Builder {
            strategy,
            out: Vec::new(),
            seen: BTreeSet::new(),
        }
    }

    fn push(&mut self, goal: Expr, covers: Vec<ElementRef>) {
        self.push_id(None, goal, covers)
    }

    fn push_id(&mut self, suffix: Option<&str>, goal: Expr, covers: Vec<ElementRef>) {
        if !self.seen.insert(goal.clone()) && suffix.is_none() {
            return;
        }
        let n = match suffix {
            Some(_) => self.out.iter().filter(|c| c.id.ends_with('a')).count() + 1,
            None => self.out.len() + 1,
        };
        let id = format!(
            "{}-{}{}",
            self.strategy.id_prefix(),
            n,
            suffix.unwrap_or("")
        );
        self.out
            .push(SymbolicTestCase::new(id, self.strategy, goal, covers));
    }
}

/// Symbolic test cases of one strategy, in model order.
pub fn gen(strategy: Strategy, model: &Model) -> Vec<SymbolicTestCase> {
    let mut b = Builder::new(strategy);
    match strategy {
        Strategy::BasicControlState => {
            for m in 0..model.machines.len() {
                for s in model.states_of_machine(m) {
                    b.push(in_state(s), vec![ElementRef::State(s)]);
                }
            }
        }
        Strategy::Transition => {
            for t in 0..model.transitions.len() {
                b.push(transition_goal(model, t), vec![ElementRef::Transition(t)]);
            }
        }
        Strategy::Mcdc => gen_mcdc(model, &mut b),
        Strategy::HierarchicTransition => {
            for (t, tr) in model.transitions.iter().enumerate() {
                if tr.kind == TransitionKind::Activity {
                    continue;
                }
                for leaf in model.leaves_under(tr.source) {
                    let covers = vec![ElementRef::Transition(t), ElementRef::State(leaf)];
                    b.push(firing_condition(model, t, leaf), covers);
                }
            }
        }
        Strategy::EqClassBoundary => gen_eqclass(model, &mut b),
        Strategy::ControlStatePairs => {
            let machines: BTreeSet<(usize, usize)> = writer_reader_pairs(model)
                .into_iter()
                .filter(|(w, r, _)| w != r)
                .map(|(w, r, _)| (w, r))
                .collect();
            for (w, r) in machines {
                for sw in model.leaves_of_machine(w) {
                    for sr in model.leaves_of_machine(r) {
                        let goal = Expr::and_all([in_state(sw), in_state(sr)]);
                        b.push(goal, vec![ElementRef::State(sw), ElementRef::State(sr)]);
                    }
                }
            }
        }
        Strategy::Interface => {
            for v in model.inputs() {
                for c in interface_values(model, v) {
                    b.push(eq(v, c, model), Vec::new());
                }
            }
        }
        Strategy::Block => {
            for m in 0..model.machines.len() {
                let leaves = model.leaves_of_machine(m);
                let goal = Expr::or_all(leaves.iter().map(|&s| in_state(s)));
                b.push(goal, leaves.into_iter().map(ElementRef::State).collect());
            }
        }
        Strategy::Requirement | Strategy::Refinement => {}
    }
    b.out
}

/// Every coverage strategy, concatenated.
pub fn gen_all(model: &Model) -> Vec<SymbolicTestCase> {
    Strategy::COVERAGE
        .iter()
        .flat_map(|&s| gen(s, model))
        .collect()
}

fn gen_mcdc(model: &Model, b: &mut Builder) {
    for (t, tr) in model.transitions.iter().enumerate() {
        let conds = tr.guard.conditions();
        for i in 0..conds.len() {
            let pairs = mcdc_pairs(&tr.guard, &conds, i);
            let feasible = |o: &McdcObligation| {
                [&o.vector_a, &o.vector_b].iter().all(|v| {
                    let e = Expr::and_all([in_state(tr.source), vector_expr(&conds, v)]);
                    state_satisfiable(model, &e, 1 << 20) != Some(false)
                })
            };
            let Some(o) = pairs.iter().find(|o| feasible(o)).or(pairs.first()) else {
                continue;
            };
            let covers = vec![ElementRef::Transition(t)];
            let ga = Expr::and_all([in_state(tr.source), vector_expr(&conds, &o.vector_a)]);
            let gb = Expr::and_all([in_state(tr.source), vector_expr(&conds, &o.vector_b)]);
            b.push_id(Some("a"), ga, covers.clone());
            let n = b.out.len();
            b.out.push(SymbolicTestCase::new(
                b.out[n - 1].id.trim_end_matches('a').to_string() + "b",
                Strategy::Mcdc,
                gb,
                covers,
            ));
        }
    }
}

fn gen_eqclass(model: &Model, b: &mut Builder) {
    for (t, tr) in model.transitions.iter().enumerate() {
        let covers = vec![ElementRef::Transition(t)];
        for (v, _, c) in tr.guard.comparison_constants() {
            let dom = &model.variables[v].domain;
            for x in [c - 1, c, c + 1] {
                if dom.contains(x) {
                    let goal = Expr::and_all([in_state(tr.source), eq(v, x, model)]);
                    b.push(goal, covers.clone());
                }
            }
        }
        for (s, c) in tr.guard.timer_constants() {
            for x in [c - 1, c, c + 1] {
                if x >= 0 {
                    let age = Expr::cmp(CmpOp::Eq, Expr::Elapsed(s), Expr::Int(x));
                    b.push(Expr::and_all([in_state(tr.source), age]), covers.clone());
                }
            }
        }
    }
}

/// Interface values of an input: the full domain when small, else boundary values.
pub fn interface_values(model: &Model, v: VarId) -> Vec<i64> {
    let dom = &model.variables[v].domain;
    let (lo, hi) = dom.bounds();
    if dom.size() <= 8 {
        return (lo..=hi).collect();
    }
    let mut vals: BTreeSet<i64> = [lo, hi].into_iter().collect();
    for tr in &model.transitions {
        for (x, _, c) in tr.guard.comparison_constants() {
            if x == v {
                vals.extend([c - 1, c, c + 1].into_iter().filter(|&y| dom.contains(y)));
            }
        }
    }
    vals.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcdc_of_conjunction() {
        let a = Expr::Name("a".into());
        let b = Expr::Name("b".into());
        let r = mcdc_obligations(&Expr::and_all([a, b]));
        assert_eq!(r.obligations.len(), 2);
        assert_eq!(r.obligations[0].vector_a, vec![true, true]);
        assert_eq!(r.obligations[0].vector_b, vec![false, true]);
        assert_eq!(r.obligations[1].vector_b, vec![true, false]);
        assert!(r.infeasible.is_empty());
    }

    #[test]
    fn masked_condition_is_infeasible() {
        let a = Expr::Name("a".into());
        let b = Expr::Name("b".into());
        let g = Expr::Or(vec![a.clone(), Expr::And(vec![a, b])]);
        let r = mcdc_obligations(&g);
        assert_eq!(r.infeasible, vec![1]);
        assert_eq!(r.obligations.len(), 1);
    }

    #[test]
    fn tags_round_trip() {
        for s in Strategy::COVERAGE {
            assert_eq!(Strategy::from_tag(s.tag()), Some(s));
        }
    }
}
