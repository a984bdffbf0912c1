//! Intermediate model representation: variables, hierarchical machines, requirements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::expr::{Env, Expr, Names, StateId, Type, VarId};
use crate::ltl::Ltl;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub line: u32,
    pub col: u32,
    pub len: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}",
            self.line,
            self.col,
            self.col + self.len.max(1) - 1
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    Input,
    Output,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Bool,
    Int { lo: i64, hi: i64 },
    Enum(Vec<String>),
}

impl Domain {
    pub fn bounds(&self) -> (i64, i64) {
        match self {
            Domain::Bool => (0, 1),
            Domain::Int { lo, hi } => (*lo, *hi),
            Domain::Enum(vs) => (0, vs.len() as i64 - 1),
        }
    }

    pub fn contains(&self, v: i64) -> bool {
        let (lo, hi) = self.bounds();
        lo <= v && v <= hi
    }

    pub fn size(&self) -> u64 {
        let (lo, hi) = self.bounds();
        (hi - lo + 1).max(0) as u64
    }

    pub fn ty(&self) -> Type {
        match self {
            Domain::Bool => Type::Bool,
            _ => Type::Int,
        }
    }

    pub fn format_value(&self, v: i64) -> String {
        match self {
            Domain::Bool => (v != 0).to_string(),
            Domain::Enum(vs) => vs.get(v as usize).cloned().unwrap_or_else(|| v.to_string()),
            Domain::Int { .. } => v.to_string(),
        }
    }

    /// Accepts integers for every domain, `true`/`false` for booleans and literals for enums.
    pub fn parse_value(&self, text: &str) -> Option<i64> {
        match self {
            Domain::Bool => match text {
                "true" => Some(1),
                "false" => Some(0),
                _ => text.parse().ok(),
            },
            Domain::Enum(vs) => vs
                .iter()
                .position(|v| v == text)
                .map(|i| i as i64)
                .or_else(|| text.parse().ok()),
            Domain::Int { .. } => text.parse().ok(),
        }
        .filter(|v| self.contains(*v))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariableDecl {
    pub name: String,
    pub kind: VarKind,
    pub domain: Domain,
    pub initial: i64,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlState {
    pub name: String,
    pub machine: usize,
    pub parent: Option<StateId>,
    pub children: Vec<StateId>,
    /// Set on the state carrying the `initial` marker.
    pub initial: bool,
    pub depth: usize,
    pub span: Span,
}

impl ControlState {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

pub type TransitionId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub var: VarId,
    pub value: Expr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransitionKind {
    /// Leaves the source and enters the target.
    External,
    /// `do` activity: runs its actions without leaving the state, below every external transition.
    Activity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transition {
    pub machine: usize,
    pub source: StateId,
    /// `None` for activities.
    pub target: Option<StateId>,
    pub kind: TransitionKind,
    pub guard: Expr,
    pub actions: Vec<Assignment>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateMachine {
    pub name: String,
    /// Top-level states, in declaration order.
    pub roots: Vec<StateId>,
    pub transitions: Vec<TransitionId>,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementRef {
    State(StateId),
    Transition(TransitionId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Requirement {
    pub id: String,
    pub text: String,
    pub satisfies: Vec<ElementRef>,
    pub constraint: Option<Ltl>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub variables: Vec<VariableDecl>,
    pub states: Vec<ControlState>,
    pub machines: Vec<StateMachine>,
    pub transitions: Vec<Transition>,
    pub requirements: Vec<Requirement>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub path: String,
    pub span: Span,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.path, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("ambiguous transitions in machine {machine}: {first} and {second} are both enabled at depth {depth}")]
pub struct AmbiguityError {
    pub machine: String,
    pub first: String,
    pub second: String,
    pub depth: usize,
}

impl Names for Model {
    fn var_name(&self, v: VarId) -> &str {
        &self.variables[v].name
    }
    fn state_name(&self, s: StateId) -> &str {
        &self.states[s].name
    }
}

impl Model {
    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn machine_by_name(&self, name: &str) -> Option<usize> {
        self.machines.iter().position(|m| m.name == name)
    }

    pub fn requirement(&self, id: &str) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }

    pub fn vars_of_kind(&self, kind: VarKind) -> Vec<VarId> {
        (0..self.variables.len())
            .filter(|&v| self.variables[v].kind == kind)
            .collect()
    }

    pub fn inputs(&self) -> Vec<VarId> {
        self.vars_of_kind(VarKind::Input)
    }

    pub fn outputs(&self) -> Vec<VarId> {
        self.vars_of_kind(VarKind::Output)
    }

    /// Observable variables, inputs first.
    pub fn observables(&self) -> Vec<VarId> {
        let mut v = self.inputs();
        v.extend(self.outputs());
        v
    }

    pub fn is_ancestor_or_self(&self, anc: StateId, s: StateId) -> bool {
        let mut cur = Some(s);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.states[c].parent;
        }
        false
    }

    /// `s` followed by its ancestors up to the root.
    pub fn path_to_root(&self, s: StateId) -> Vec<StateId> {
        let mut out = vec![s];
        let mut cur = self.states[s].parent;
        while let Some(c) = cur {
            out.push(c);
            cur = self.states[c].parent;
        }
        out
    }

    pub fn initial_child(&self, s: StateId) -> Option<StateId> {
        self.states[s]
            .children
            .iter()
            .copied()
            .find(|&c| self.states[c].initial)
    }

    /// Follows initial children down to a basic state. Falls back to the first child.
    pub fn initial_leaf_of(&self, s: StateId) -> StateId {
        let mut cur = s;
        while !self.states[cur].is_leaf() {
            cur = self
                .initial_child(cur)
                .unwrap_or(self.states[cur].children[0]);
        }
        cur
    }

    pub fn machine_initial_root(&self, m: usize) -> StateId {
        let roots = &self.machines[m].roots;
        roots
            .iter()
            .copied()
            .find(|&r| self.states[r].initial)
            .unwrap_or(roots[0])
    }

    pub fn machine_initial_leaf(&self, m: usize) -> StateId {
        self.initial_leaf_of(self.machine_initial_root(m))
    }

    pub fn leaves_of_machine(&self, m: usize) -> Vec<StateId> {
        (0..self.states.len())
            .filter(|&s| self.states[s].machine == m && self.states[s].is_leaf())
            .collect()
    }

    pub fn leaves_under(&self, s: StateId) -> Vec<StateId> {
        (0..self.states.len())
            .filter(|&l| self.states[l].is_leaf() && self.is_ancestor_or_self(s, l))
            .collect()
    }

    pub fn states_of_machine(&self, m: usize) -> Vec<StateId> {
        (0..self.states.len())
            .filter(|&s| self.states[s].machine == m)
            .collect()
    }

    /// States entered when `t` fires: from below the deepest common proper ancestor
    /// of source and target down to the target, then its initial descendants.
    pub fn entered_states(&self, t: TransitionId) -> Vec<StateId> {
        let tr = &self.transitions[t];
        let Some(target) = tr.target else {
            return Vec::new();
        };
        let src_anc: Vec<StateId> = self.path_to_root(tr.source)[1..].to_vec();
        let tgt_path = self.path_to_root(target);
        let mut entered = Vec::new();
        for &s in &tgt_path {
            if s != target && src_anc.contains(&s) {
                break;
            }
            entered.push(s);
        }
        entered.reverse();
        let mut cur = target;
        while !self.states[cur].is_leaf() {
            cur = self
                .initial_child(cur)
                .unwrap_or(self.states[cur].children[0]);
            entered.push(cur);
        }
        entered
    }

    /// Priority rank: higher wins. External transitions beat activities; deeper beats shallower.
    pub fn priority_rank(&self, t: TransitionId) -> usize {
        let tr = &self.transitions[t];
        let depth = self.states[tr.source].depth;
        match tr.kind {
            TransitionKind::External => 1000 + depth,
            TransitionKind::Activity => depth,
        }
    }

    /// Machine index owning each variable by write access (first writer).
    pub fn writers(&self) -> BTreeMap<VarId, BTreeSet<usize>> {
        let mut out: BTreeMap<VarId, BTreeSet<usize>> = BTreeMap::new();
        for tr in &self.transitions {
            for a in &tr.actions {
                out.entry(a.var).or_default().insert(tr.machine);
            }
        }
        out
    }

    pub fn owner(&self, v: VarId) -> Option<usize> {
        self.transitions
            .iter()
            .find(|t| t.actions.iter().any(|a| a.var == v))
            .map(|t| t.machine)
    }

    pub fn element_name(&self, e: ElementRef) -> String {
        match e {
            ElementRef::State(s) => self.states[s].name.clone(),
            ElementRef::Transition(t) => self.transition_name(t),
        }
    }

    /// `SRC -> TGT`, with `#k` for the k-th duplicate (k ≥ 2); activities are `do@SRC`.
    pub fn transition_name(&self, t: TransitionId) -> String {
        let tr = &self.transitions[t];
        let base = match tr.target {
            Some(tg) => format!(
                "{} -> {}",
                self.states[tr.source].name, self.states[tg].name
            ),
            None => format!("do@{}", self.states[tr.source].name),
        };
        let k = self.transitions[..t]
            .iter()
            .filter(|o| o.source == tr.source && o.target == tr.target)
            .count();
        if k == 0 {
            base
        } else {
            format!("{base}#{}", k + 1)
        }
    }

    pub fn transition_by_name(&self, name: &str) -> Option<TransitionId> {
        let norm = |s: &str| s.split_whitespace().collect::<String>();
        let want = norm(name);
        (0..self.transitions.len()).find(|&t| norm(&self.transition_name(t)) == want)
    }

    /// Every variable read by the guard and action right-hand sides of a transition.
    pub fn transition_reads(&self, t: TransitionId) -> Vec<VarId> {
        let tr = &self.transitions[t];
        let mut out = tr.guard.vars();
        for a in &tr.actions {
            for v in a.value.vars() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        validate(self)
    }
}

/// Type of an expression, or a message describing the first type error.
pub fn type_of(model: &Model, e: &Expr) -> Result<Type, String> {
    let want = |e: &Expr, t: Type| -> Result<(), String> {
        let got = type_of(model, e)?;
        if got == t {
            Ok(())
        } else {
            Err(format!(
                "expected {} expression, found `{}`",
                if t == Type::Bool {
                    "boolean"
                } else {
                    "integer"
                },
                e.display(model)
            ))
        }
    };
    match e {
        Expr::Bool(_) | Expr::InState(_) => Ok(Type::Bool),
        Expr::Int(_) | Expr::Elapsed(_) => Ok(Type::Int),
        Expr::Name(n) => Err(format!("undeclared identifier `{n}`")),
        Expr::Var(v) => Ok(model.variables[*v].domain.ty()),
        Expr::Not(x) => want(x, Type::Bool).map(|_| Type::Bool),
        Expr::And(xs) | Expr::Or(xs) => {
            for x in xs {
                want(x, Type::Bool)?;
            }
            Ok(Type::Bool)
        }
        // Booleans compare as 0/1.
        Expr::Cmp(_, a, b) => {
            type_of(model, a)?;
            type_of(model, b)?;
            Ok(Type::Bool)
        }
        // Booleans count as 0/1 in arithmetic.
        Expr::Arith(_, a, b) => {
            type_of(model, a)?;
            type_of(model, b)?;
            Ok(Type::Int)
        }
        Expr::Undef(_, x) => type_of(model, x),
    }
}

fn validate(model: &Model) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |path: String, span: Span, message: String| {
        out.push(Diagnostic {
            path,
            span,
            message,
        })
    };

    for v in &model.variables {
        if !v.domain.contains(v.initial) {
            diag(
                format!("var {}", v.name),
                v.span,
                format!("initial value {} outside domain", v.initial),
            );
        }
        if let Domain::Int { lo, hi } = v.domain {
            if lo > hi {
                diag(
                    format!("var {}", v.name),
                    v.span,
                    "empty integer range".into(),
                );
            }
        }
    }

    for (m, mach) in model.machines.iter().enumerate() {
        let roots = &mach.roots;
        let marked = roots.iter().filter(|&&r| model.states[r].initial).count();
        if roots.is_empty() {
            diag(
                format!("machine {}", mach.name),
                mach.span,
                "machine has no states".into(),
            );
        } else if roots.len() > 1 && marked != 1 {
            diag(
                format!("machine {}", mach.name),
                mach.span,
                format!("expected exactly one initial top-level state, found {marked}"),
            );
        }
        for s in model.states_of_machine(m) {
            let st = &model.states[s];
            if st.is_leaf() {
                continue;
            }
            let n = st
                .children
                .iter()
                .filter(|&&c| model.states[c].initial)
                .count();
            if n != 1 && st.children.len() > 1 {
                diag(
                    format!("{}.{}", mach.name, st.name),
                    st.span,
                    format!("composite state needs exactly one initial child, found {n}"),
                );
            }
        }
    }

    let writers = model.writers();
    for (v, ms) in &writers {
        if ms.len() > 1 {
            let names: Vec<&str> = ms
                .iter()
                .map(|&m| model.machines[m].name.as_str())
                .collect();
            diag(
                format!("var {}", model.variables[*v].name),
                model.variables[*v].span,
                format!("write-ownership violated: written by {}", names.join(", ")),
            );
        }
    }

    for (t, tr) in model.transitions.iter().enumerate() {
        let path = format!(
            "{}.{}",
            model.machines[tr.machine].name,
            model.transition_name(t)
        );
        for n in tr.guard.unbound_names() {
            diag(
                path.clone(),
                tr.span,
                format!("undeclared identifier `{n}`"),
            );
        }
        if tr.guard.unbound_names().is_empty() {
            match type_of(model, &tr.guard) {
                Ok(Type::Bool) => {}
                Ok(Type::Int) => diag(path.clone(), tr.span, "guard is not boolean".into()),
                Err(e) => diag(path.clone(), tr.span, e),
            }
        }
        let on_path = model.path_to_root(tr.source);
        for s in tr.guard.timers() {
            if !on_path.contains(&s) {
                diag(
                    path.clone(),
                    tr.span,
                    format!(
                        "timer of `{}` is not on the path from the root to the source",
                        model.states[s].name
                    ),
                );
            }
        }
        let mut seen = BTreeSet::new();
        for a in &tr.actions {
            let var = &model.variables[a.var];
            if !seen.insert(a.var) {
                diag(
                    path.clone(),
                    tr.span,
                    format!("`{}` assigned twice", var.name),
                );
            }
            if var.kind == VarKind::Input {
                diag(
                    path.clone(),
                    tr.span,
                    format!("assignment to input `{}`", var.name),
                );
            }
            if matches!(a.value, Expr::Undef(..)) && var.kind != VarKind::Output {
                diag(
                    path.clone(),
                    tr.span,
                    format!("undef() is only allowed for outputs, not `{}`", var.name),
                );
            }
            if let Expr::Undef(d, _) = a.value {
                if d < 0 {
                    diag(path.clone(), tr.span, "negative undef duration".into());
                }
            }
            for n in a.value.unbound_names() {
                diag(
                    path.clone(),
                    tr.span,
                    format!("undeclared identifier `{n}`"),
                );
            }
            if a.value.unbound_names().is_empty() {
                match type_of(model, &a.value) {
                    Ok(t)
                        if t == var.domain.ty()
                            || (t == Type::Bool && var.domain.ty() == Type::Int) => {}
                    Ok(_) => diag(
                        path.clone(),
                        tr.span,
                        format!("type mismatch in assignment to `{}`", var.name),
                    ),
                    Err(e) => diag(path.clone(), tr.span, e),
                }
            }
        }
    }

    for r in &model.requirements {
        if r.satisfies.is_empty() && r.constraint.is_none() {
            diag(
                format!("req {}", r.id),
                r.span,
                "requirement has neither a satisfy link nor a constraint".into(),
            );
        }
        if let Some(c) = &r.constraint {
            for n in c.unbound_names() {
                diag(
                    format!("req {}", r.id),
                    r.span,
                    format!("undeclared identifier `{n}`"),
                );
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Unique highest-priority enabled transition of machine `m`, if any.
///
/// `active_leaf` is the machine's current basic state; guards are read through `env`.
pub fn effective_priority(
    model: &Model,
    env: &impl Env,
    m: usize,
    active_leaf: StateId,
) -> Result<Option<TransitionId>, AmbiguityError> {
    let path = model.path_to_root(active_leaf);
    let mut best: Option<(usize, TransitionId)> = None;
    for &t in &model.machines[m].transitions {
        let tr = &model.transitions[t];
        if !path.contains(&tr.source) || !tr.guard.holds(env) {
            continue;
        }
        let rank = model.priority_rank(t);
        match best {
            Some((r, other)) if r == rank => {
                return Err(AmbiguityError {
                    machine: model.machines[m].name.clone(),
                    first: model.transition_name(other),
                    second: model.transition_name(t),
                    depth: model.states[tr.source].depth,
                })
            }
            Some((r, _)) if r > rank => {}
            _ => best = Some((rank, t)),
        }
    }
    Ok(best.map(|(_, t)| t))
}

/// `(writer machine, reader machine, variable)` for every variable a machine writes and
/// a different machine reads in a guard or action.
pub fn writer_reader_pairs(model: &Model) -> BTreeSet<(usize, usize, VarId)> {
    let writers = model.writers();
    let mut out = BTreeSet::new();
    for t in 0..model.transitions.len() {
        let r = model.transitions[t].machine;
        for v in model.transition_reads(t) {
            if let Some(ws) = writers.get(&v) {
                for &w in ws {
                    if w != r {
                        out.insert((w, r, v));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_parse_and_format() {
        let d = Domain::Enum(vec!["Lo".into(), "Hi".into()]);
        assert_eq!(d.parse_value("Hi"), Some(1));
        assert_eq!(d.parse_value("2"), None);
        assert_eq!(d.format_value(0), "Lo");
        assert_eq!(Domain::Bool.parse_value("true"), Some(1));
        assert_eq!(Domain::Int { lo: 0, hi: 2 }.parse_value("3"), None);
    }
}
