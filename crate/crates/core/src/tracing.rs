//! Requirement characterization, traceability and assurance-level suite selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::coverage::{transition_goal, Strategy, SymbolicTestCase};
use crate::expr::{Expr, StateId, VarId};
use crate::ltl::{dnf, eval_on_trace, nnf, Ltl, LtlError};
use crate::model::{ElementRef, Model, Requirement};
use crate::semantics::{state_satisfiable, TransitionRelation};
use crate::solver::{solve, solve_suite, SolveOutcome, SolverConfig, ValTrace, Witness};

const ENUM_LIMIT: u64 = 1 << 22;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("requirement {0} has neither satisfy links nor a constraint")]
    UnlinkedRequirement(String),
    #[error(transparent)]
    Ltl(#[from] LtlError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkKind {
    SatisfyElement,
    Implication,
    ConjunctionRefinement,
    PairwiseCombination,
}

impl LinkKind {
    pub fn tag(self) -> &'static str {
        match self {
            LinkKind::SatisfyElement => "satisfy-element",
            LinkKind::Implication => "implication",
            LinkKind::ConjunctionRefinement => "conjunction-refinement",
            LinkKind::PairwiseCombination => "pairwise-combination",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// How a link was established.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evidence {
    /// ψ ⇒ φ holds in every state.
    Pointwise,
    /// `F ψ ∧ ¬φ` has no witness up to this bound.
    Bounded(usize),
    /// A witness of the given trace length exists.
    Witness(usize),
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Evidence::Pointwise => f.write_str("entails:pointwise"),
            Evidence::Bounded(k) => write!(f, "entails:bounded@{k}"),
            Evidence::Witness(n) => write!(f, "witness:len={n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub test_case: String,
    pub kind: LinkKind,
    /// Index of the DNF disjunct (or satisfied element) the link is about.
    pub disjunct: usize,
    pub evidence: Evidence,
    /// 0 for direct links, 1 or 2 for pairwise refinements.
    pub refinement_level: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceabilityMatrix {
    /// Working bound of the entailment and satisfiability checks.
    pub bound: usize,
    /// Requirements in model order with their links.
    pub links: Vec<(String, Vec<Link>)>,
    pub characterizations: Vec<(String, Ltl)>,
    /// Requirements whose characterization has no witness at the bound.
    pub uncovered: Vec<String>,
}

impl TraceabilityMatrix {
    pub fn links_of(&self, req: &str) -> &[Link] {
        self.links
            .iter()
            .find(|(r, _)| r == req)
            .map(|(_, l)| l.as_slice())
            .unwrap_or(&[])
    }

    /// Test case → linked requirements.
    pub fn reverse(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (r, links) in &self.links {
            for l in links {
                let e = out.entry(l.test_case.clone()).or_default();
                if !e.contains(r) {
                    e.push(r.clone());
                }
            }
        }
        out
    }

    /// Tab-separated export, one line per link.
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "# bound={}\nrequirement\ttest_case\tlink\tevidence\n",
            self.bound
        );
        for (r, links) in &self.links {
            for l in links {
                s += &format!("{r}\t{}\t{}\t{}\n", l.test_case, l.kind, l.evidence);
            }
            if self.uncovered.contains(r) {
                s += &format!("{r}\t-\tuncovered\t-\n");
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TracingResult {
    pub matrix: TraceabilityMatrix,
    /// Input cases followed by requirement and refinement cases, with `requirements` filled in.
    pub cases: Vec<SymbolicTestCase>,
    /// Solver outcome per case id (`None` when the search ran out of budget).
    pub outcomes: BTreeMap<String, Option<SolveOutcome>>,
}

impl TracingResult {
    pub fn case(&self, id: &str) -> Option<&SymbolicTestCase> {
        self.cases.iter().find(|c| c.id == id)
    }

    pub fn witness(&self, id: &str) -> Option<&Witness> {
        self.outcomes.get(id)?.as_ref()?.witness()
    }
}

/// Coverage goal of a model element: `S` for states, source and guard for transitions.
pub fn element_goal(model: &Model, e: ElementRef) -> Expr {
    match e {
        ElementRef::State(s) => Expr::InState(s),
        ElementRef::Transition(t) => transition_goal(model, t),
    }
}

/// The requirement's constraint, or the disjunction of `F` goals of its linked elements.
pub fn characterize(req: &Requirement, model: &Model) -> Result<Ltl, TraceError> {
    if let Some(c) = &req.constraint {
        return Ok(c.clone());
    }
    if req.satisfies.is_empty() {
        return Err(TraceError::UnlinkedRequirement(req.id.clone()));
    }
    Ok(Ltl::or(
        req.satisfies
            .iter()
            .map(|&e| Ltl::finally(Ltl::atom(element_goal(model, e)))),
    ))
}

fn symbols(f: &Ltl) -> (BTreeSet<VarId>, BTreeSet<StateId>) {
    let mut vars = BTreeSet::new();
    let mut states = BTreeSet::new();
    f.visit_exprs(&mut |e| {
        vars.extend(e.vars());
        states.extend(e.states());
        states.extend(e.timers());
    });
    (vars, states)
}

fn share_symbol(a: &Ltl, b: &Ltl) -> bool {
    let (va, sa) = symbols(a);
    let (vb, sb) = symbols(b);
    !va.is_disjoint(&vb) || !sa.is_disjoint(&sb)
}

/// Whether `a ⇒ b` holds in every state, when decidable by enumeration.
fn implies_pointwise(model: &Model, a: &Expr, b: &Expr) -> bool {
    let e = Expr::and_all([a.clone(), b.negate()]);
    state_satisfiable(model, &e, ENUM_LIMIT) == Some(false)
}

/// Variables whose value can flow into `targets` through guards and actions.
pub fn impacting_vars(model: &Model, targets: &BTreeSet<VarId>) -> BTreeSet<VarId> {
    let mut edges: Vec<(VarId, VarId)> = Vec::new();
    for (t, tr) in model.transitions.iter().enumerate() {
        for r in model.transition_reads(t) {
            for a in &tr.actions {
                edges.push((r, a.var));
            }
        }
    }
    let mut out = targets.clone();
    loop {
        let before = out.len();
        for &(r, w) in &edges {
            if out.contains(&w) {
                out.insert(r);
            }
        }
        if out.len() == before {
            return out;
        }
    }
}

/// Pairwise-refinement impact: the added variable reaches a variable of the requirement.
pub fn has_impact(model: &Model, var: VarId, requirement: &Ltl) -> bool {
    impacting_vars(model, &symbols(requirement).0).contains(&var)
}

struct Tracer<'a> {
    model: &'a Model,
    relation: &'a TransitionRelation,
    cfg: &'a SolverConfig,
    jobs: usize,
    cases: Vec<SymbolicTestCase>,
    outcomes: BTreeMap<String, Option<SolveOutcome>>,
    by_formula: HashMap<Ltl, usize>,
    entailed: HashMap<(Ltl, Ltl), Option<Evidence>>,
    next_ref: usize,
}

impl Tracer<'_> {
    fn outcome(&self, i: usize) -> Option<&SolveOutcome> {
        self.outcomes.get(&self.cases[i].id)?.as_ref()
    }

    fn witness(&self, i: usize) -> Option<&Witness> {
        self.outcome(i)?.witness()
    }

    /// Adds and solves cases. With `dedup`, cases whose formula is already known are dropped.
    fn add_solved(&mut self, mut cases: Vec<SymbolicTestCase>, dedup: bool) {
        if dedup {
            let mut seen = std::collections::HashSet::new();
            cases.retain(|c| {
                !self.by_formula.contains_key(&c.formula) && seen.insert(c.formula.clone())
            });
        }
        let work: Vec<(String, Ltl)> = cases
            .iter()
            .filter(|c| !self.by_formula.contains_key(&c.formula))
            .map(|c| (c.id.clone(), c.formula.clone()))
            .collect();
        for e in solve_suite(self.model, self.relation, &work, self.cfg, self.jobs) {
            self.outcomes.insert(e.id, e.outcome.ok());
        }
        for c in cases {
            match self.by_formula.get(&c.formula) {
                Some(&j) => {
                    let known = self.outcomes[&self.cases[j].id].clone();
                    self.outcomes.insert(c.id.clone(), known);
                }
                None => {
                    self.by_formula.insert(c.formula.clone(), self.cases.len());
                }
            }
            self.cases.push(c);
        }
    }

    fn entails(&mut self, i: usize, phi: &Ltl) -> Option<Evidence> {
        let key = (self.cases[i].formula.clone(), phi.clone());
        if let Some(e) = self.entailed.get(&key) {
            return e.clone();
        }
        let e = self.entails_uncached(i, phi);
        self.entailed.insert(key, e.clone());
        e
    }

    /// Bounded entailment `ψ ⇒ φ` for a solvable case ψ.
    fn entails_uncached(&self, i: usize, phi: &Ltl) -> Option<Evidence> {
        let psi = &self.cases[i].formula;
        if let (Some(a), Some(b)) = (psi.eventually_state(), phi.eventually_state()) {
            if implies_pointwise(self.model, a, b) {
                return Some(Evidence::Pointwise);
            }
        }
        let w = self.witness(i)?;
        if !eval_on_trace(
            &nnf(phi),
            &ValTrace {
                model: self.model,
                trace: &w.trace,
            },
        ) {
            return None;
        }
        let counter = Ltl::and([psi.clone(), Ltl::negation(phi.clone())]);
        match solve(self.model, self.relation, &counter, self.cfg) {
            Ok(SolveOutcome::UnsatAtBound(k)) => Some(Evidence::Bounded(k)),
            _ => None,
        }
    }

    fn refinement(&mut self, formula: Ltl, parents: [usize; 2]) -> SymbolicTestCase {
        self.next_ref += 1;
        let mut covers = self.cases[parents[0]].covers.clone();
        for c in &self.cases[parents[1]].covers {
            if !covers.contains(c) {
                covers.push(*c);
            }
        }
        SymbolicTestCase {
            id: format!("ref-{}", self.next_ref),
            strategy: Strategy::Refinement,
            formula,
            covers,
            requirements: Vec::new(),
            derived_from: parents
                .iter()
                .enumerate()
                .filter(|&(k, p)| k == 0 || *p != parents[0])
                .map(|(_, &p)| self.cases[p].id.clone())
                .collect(),
        }
    }

    fn witness_len(&self, f: &Ltl) -> Option<usize> {
        let i = *self.by_formula.get(f)?;
        Some(self.witness(i)?.trace.len())
    }
}

fn and_formula(a: &Ltl, b: &Ltl) -> Ltl {
    match (a.eventually_state(), b.eventually_state()) {
        (Some(x), Some(y)) => Ltl::finally(Ltl::atom(Expr::and_all([x.clone(), y.clone()]))),
        _ => Ltl::and([a.clone(), b.clone()]),
    }
}

const COMBINATION_BASE: [Strategy; 4] = [
    Strategy::Transition,
    Strategy::BasicControlState,
    Strategy::HierarchicTransition,
    Strategy::Requirement,
];

/// Links test cases to requirements and synthesizes refinement cases.
pub fn compile_traceability(
    model: &Model,
    relation: &TransitionRelation,
    cases: &[SymbolicTestCase],
    cfg: &SolverConfig,
    jobs: usize,
) -> Result<TracingResult, TraceError> {
    let mut chars = Vec::new();
    for r in &model.requirements {
        chars.push((r.id.clone(), characterize(r, model)?));
    }
    let mut tr = Tracer {
        model,
        relation,
        cfg,
        jobs,
        cases: Vec::new(),
        outcomes: BTreeMap::new(),
        by_formula: HashMap::new(),
        entailed: HashMap::new(),
        next_ref: 0,
    };
    let mut pool: Vec<SymbolicTestCase> = cases.to_vec();
    for (id, f) in &chars {
        pool.push(SymbolicTestCase {
            id: format!("req-{id}"),
            strategy: Strategy::Requirement,
            formula: f.clone(),
            covers: Vec::new(),
            requirements: Vec::new(),
            derived_from: Vec::new(),
        });
    }
    tr.add_solved(pool, false);
    let base_count = tr.cases.len();

    let mut matrix = TraceabilityMatrix {
        bound: cfg.max_bound,
        characterizations: chars.clone(),
        ..Default::default()
    };
    for (req, (id, phi)) in model.requirements.iter().zip(&chars) {
        let (kind, disjuncts) = match &req.constraint {
            Some(_) => (LinkKind::Implication, dnf(&nnf(phi))?),
            None => (
                LinkKind::SatisfyElement,
                req.satisfies
                    .iter()
                    .map(|&e| Ltl::finally(Ltl::atom(element_goal(model, e))))
                    .collect(),
            ),
        };
        let mut links: Vec<Link> = Vec::new();
        let mut implying: Vec<usize> = Vec::new();
        let mut related = vec![false; base_count];
        for i in 0..base_count {
            if tr.witness(i).is_none() {
                continue;
            }
            for (d, di) in disjuncts.iter().enumerate() {
                if let Some(ev) = tr.entails(i, di) {
                    links.push(Link {
                        test_case: tr.cases[i].id.clone(),
                        kind,
                        disjunct: d,
                        evidence: ev,
                        refinement_level: 0,
                    });
                    implying.push(i);
                    related[i] = true;
                    break;
                }
            }
        }

        if kind == LinkKind::Implication {
            let mut fresh = Vec::new();
            for i in 0..base_count {
                let c = tr.cases[i].clone();
                if related[i] || c.strategy == Strategy::Requirement || tr.witness(i).is_none() {
                    continue;
                }
                for (d, di) in disjuncts.iter().enumerate() {
                    if !share_symbol(&c.formula, di) {
                        continue;
                    }
                    if let (Some(a), Some(b)) =
                        (c.formula.eventually_state(), di.eventually_state())
                    {
                        if implies_pointwise(model, b, a) {
                            continue;
                        }
                        let e = Expr::and_all([a.clone(), b.clone()]);
                        if state_satisfiable(model, &e, ENUM_LIMIT) == Some(false) {
                            continue;
                        }
                    }
                    let f = and_formula(&c.formula, di);
                    fresh.push((tr.refinement(f, [i, i]), d));
                }
            }
            link_refinements(
                &mut tr,
                &mut links,
                fresh,
                LinkKind::ConjunctionRefinement,
                1,
            );
        }

        let partners: Vec<usize> = (0..base_count)
            .filter(|&i| {
                matches!(
                    tr.cases[i].strategy,
                    Strategy::Interface | Strategy::ControlStatePairs
                ) && tr.witness(i).is_some()
            })
            .collect();
        let mut first = Vec::new();
        for &a in &implying {
            if !COMBINATION_BASE.contains(&tr.cases[a].strategy) || tr.cases[a].goal().is_none() {
                continue;
            }
            for &b in &partners {
                if let Some(c) = combine(&mut tr, a, b) {
                    first.push((c, 0));
                }
            }
        }
        let first_ids =
            link_refinements(&mut tr, &mut links, first, LinkKind::PairwiseCombination, 1);

        let mut second = Vec::new();
        for r in first_ids {
            let parent = &tr.cases[r].derived_from[1];
            let from_pair = tr
                .cases
                .iter()
                .any(|c| &c.id == parent && c.strategy == Strategy::ControlStatePairs);
            if !from_pair {
                continue;
            }
            for &b in &partners {
                if tr.cases[b].strategy != Strategy::Interface {
                    continue;
                }
                let impacted = tr.cases[b]
                    .goal()
                    .map(|g| g.vars().iter().any(|&v| has_impact(model, v, phi)))
                    .unwrap_or(false);
                if impacted {
                    if let Some(c) = combine(&mut tr, r, b) {
                        second.push((c, 0));
                    }
                }
            }
        }
        link_refinements(
            &mut tr,
            &mut links,
            second,
            LinkKind::PairwiseCombination,
            2,
        );

        let satisfiable = matches!(tr.by_formula.get(phi).and_then(|&i| tr.witness(i)), Some(_));
        if links.is_empty() || !satisfiable {
            matrix.uncovered.push(id.clone());
        }
        matrix.links.push((id.clone(), links));
    }

    let rev = matrix.reverse();
    for c in &mut tr.cases {
        c.requirements = rev.get(&c.id).cloned().unwrap_or_default();
    }
    Ok(TracingResult {
        matrix,
        cases: tr.cases,
        outcomes: tr.outcomes,
    })
}

/// `F(ψa ∧ ψb)` unless it adds nothing to ψa or is contradictory.
fn combine(tr: &mut Tracer, a: usize, b: usize) -> Option<SymbolicTestCase> {
    let ga = tr.cases[a].goal()?.clone();
    let gb = tr.cases[b].goal()?.clone();
    if implies_pointwise(tr.model, &ga, &gb) {
        return None;
    }
    let e = Expr::and_all([ga, gb]);
    if state_satisfiable(tr.model, &e, ENUM_LIMIT) == Some(false) {
        return None;
    }
    Some(tr.refinement(Ltl::finally(Ltl::atom(e)), [a, b]))
}

/// Solves new refinement cases and links the satisfiable ones. Returns their case indices.
fn link_refinements(
    tr: &mut Tracer,
    links: &mut Vec<Link>,
    fresh: Vec<(SymbolicTestCase, usize)>,
    kind: LinkKind,
    level: u8,
) -> Vec<usize> {
    let disjunct_of: Vec<(Ltl, usize)> =
        fresh.iter().map(|(c, d)| (c.formula.clone(), *d)).collect();
    tr.add_solved(fresh.into_iter().map(|(c, _)| c).collect(), true);
    let mut out = Vec::new();
    for (f, d) in disjunct_of {
        let Some(&i) = tr.by_formula.get(&f) else {
            continue;
        };
        let Some(n) = tr.witness_len(&f) else {
            continue;
        };
        if links.iter().any(|l| l.test_case == tr.cases[i].id) || out.contains(&i) {
            continue;
        }
        links.push(Link {
            test_case: tr.cases[i].id.clone(),
            kind,
            disjunct: d,
            evidence: Evidence::Witness(n),
            refinement_level: level,
        });
        out.push(i);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssuranceLevel {
    L1,
    L2,
    L3,
    L45,
}

impl AssuranceLevel {
    pub fn parse(s: &str) -> Option<AssuranceLevel> {
        match s {
            "1" => Some(AssuranceLevel::L1),
            "2" => Some(AssuranceLevel::L2),
            "3" => Some(AssuranceLevel::L3),
            "4" | "5" | "45" | "4/5" => Some(AssuranceLevel::L45),
            _ => None,
        }
    }
}

impl fmt::Display for AssuranceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssuranceLevel::L1 => "1",
            AssuranceLevel::L2 => "2",
            AssuranceLevel::L3 => "3",
            AssuranceLevel::L45 => "4/5",
        })
    }
}

/// Test case ids selected for an assurance level, in case order.
pub fn select_suite(result: &TracingResult, level: AssuranceLevel) -> Vec<String> {
    let m = &result.matrix;
    let link_level = |id: &str, kind: LinkKind| -> Option<u8> {
        m.links
            .iter()
            .flat_map(|(_, ls)| ls)
            .filter(|l| l.test_case == id && l.kind == kind)
            .map(|l| l.refinement_level)
            .min()
    };
    if level == AssuranceLevel::L45 {
        let mut out = Vec::new();
        for (req, links) in &m.links {
            let own = format!("req-{req}");
            let pick = if result.witness(&own).is_some() {
                Some(own)
            } else {
                links.first().map(|l| l.test_case.clone())
            };
            if let Some(p) = pick {
                out.push(p);
            }
        }
        return out;
    }
    result
        .cases
        .iter()
        .filter(|c| result.witness(&c.id).is_some())
        .filter(|c| match (level, c.strategy) {
            (_, Strategy::Interface) => true,
            (AssuranceLevel::L3, Strategy::BasicControlState) => true,
            (AssuranceLevel::L2, Strategy::Transition) => true,
            (AssuranceLevel::L2 | AssuranceLevel::L3, Strategy::Refinement) => {
                link_level(&c.id, LinkKind::ConjunctionRefinement).is_some()
            }
            (
                AssuranceLevel::L1,
                Strategy::ControlStatePairs | Strategy::Mcdc | Strategy::HierarchicTransition,
            ) => true,
            (AssuranceLevel::L1, Strategy::Refinement) => {
                link_level(&c.id, LinkKind::PairwiseCombination).is_some()
                    || link_level(&c.id, LinkKind::ConjunctionRefinement).is_some()
            }
            _ => false,
        })
        .map(|c| c.id.clone())
        .collect()
}

/// Model elements exercised by a case: its declared elements plus every control
/// state its goal forces to be active.
pub fn covered_elements(model: &Model, case: &SymbolicTestCase) -> BTreeSet<ElementRef> {
    let mut out: BTreeSet<ElementRef> = case.covers.iter().copied().collect();
    if let Some(g) = case.goal() {
        for s in 0..model.states.len() {
            if implies_pointwise(model, g, &Expr::InState(s)) {
                out.insert(ElementRef::State(s));
            }
        }
    }
    out
}
