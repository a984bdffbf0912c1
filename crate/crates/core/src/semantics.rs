//! Synchronous step semantics: interpreter, transition relation, successor
//! generation and the interval abstraction.
//!
//! One macro-step evaluates every machine's guards on the pre-state (including
//! its inputs and model time). Each machine fires its unique highest-priority
//! enabled transition or stutters; the post-state carries fresh inputs and a
//! model time that does not decrease.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{ArithOp, CmpOp, Env, Expr, StateId, VarId};
use crate::model::{
    effective_priority, AmbiguityError, Model, TransitionId, TransitionKind, VarKind,
};

/// Full valuation. Layout: data variables, model time, active basic state per
/// machine, entry time per control state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Valuation(pub Vec<i64>);

pub fn time_slot(model: &Model) -> usize {
    model.variables.len()
}

pub fn leaf_slot(model: &Model, m: usize) -> usize {
    model.variables.len() + 1 + m
}

pub fn timer_slot(model: &Model, s: StateId) -> usize {
    model.variables.len() + 1 + model.machines.len() + s
}

pub fn slot_count(model: &Model) -> usize {
    model.variables.len() + 1 + model.machines.len() + model.states.len()
}

impl Valuation {
    pub fn initial(model: &Model) -> Valuation {
        let mut v = vec![0; slot_count(model)];
        for (i, d) in model.variables.iter().enumerate() {
            v[i] = d.initial;
        }
        for m in 0..model.machines.len() {
            v[leaf_slot(model, m)] = model.machine_initial_leaf(m) as i64;
        }
        Valuation(v)
    }

    pub fn var(&self, v: VarId) -> i64 {
        self.0[v]
    }

    pub fn time(&self, model: &Model) -> i64 {
        self.0[time_slot(model)]
    }

    pub fn leaf(&self, model: &Model, m: usize) -> StateId {
        self.0[leaf_slot(model, m)] as StateId
    }

    pub fn timer(&self, model: &Model, s: StateId) -> i64 {
        self.0[timer_slot(model, s)]
    }

    pub fn active(&self, model: &Model, s: StateId) -> bool {
        let m = model.states[s].machine;
        model.is_ancestor_or_self(s, self.leaf(model, m))
    }

    pub fn env<'a>(&'a self, model: &'a Model) -> ValEnv<'a> {
        ValEnv {
            model,
            val: self,
            shadow: None,
        }
    }

    pub fn holds(&self, model: &Model, e: &Expr) -> bool {
        e.holds(&self.env(model))
    }

    pub fn display<'a>(&'a self, model: &'a Model) -> ValuationDisplay<'a> {
        ValuationDisplay { model, val: self }
    }
}

pub struct ValuationDisplay<'a> {
    model: &'a Model,
    val: &'a Valuation,
}

impl fmt::Display for ValuationDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.model;
        write!(f, "t={}", self.val.time(m))?;
        for mi in 0..m.machines.len() {
            write!(f, " {}", m.states[self.val.leaf(m, mi)].name)?;
        }
        for (i, d) in m.variables.iter().enumerate() {
            write!(f, " {}={}", d.name, d.domain.format_value(self.val.var(i)))?;
        }
        Ok(())
    }
}

/// Expression environment over a valuation. With a shadow, outputs written by
/// another machine than `shadow.0` are read from the shadow vector instead.
pub struct ValEnv<'a> {
    model: &'a Model,
    val: &'a Valuation,
    shadow: Option<(usize, &'a [i64], &'a [Option<usize>])>,
}

impl Env for ValEnv<'_> {
    fn var(&self, v: VarId) -> i64 {
        if let Some((m, shadow, owners)) = self.shadow {
            if self.model.variables[v].kind == VarKind::Output && owners[v].is_some_and(|o| o != m)
            {
                return shadow[v];
            }
        }
        self.val.0[v]
    }
    fn active(&self, s: StateId) -> bool {
        self.val.active(self.model, s)
    }
    fn elapsed(&self, s: StateId) -> i64 {
        self.val.time(self.model) - self.val.timer(self.model, s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("model time would decrease from {from} to {to}")]
    TimeReversal { from: i64, to: i64 },
    #[error("`{0}` is not an input")]
    NotAnInput(String),
    #[error("value {value} outside the domain of `{var}`")]
    OutOfDomain { var: String, value: i64 },
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub post: Valuation,
    /// Transition fired by each machine, if any.
    pub fired: Vec<Option<TransitionId>>,
}

/// Extra controls used by the tolerant oracle.
#[derive(Clone, Debug, Default)]
pub struct StepControl {
    /// Machines that may not fire in this step.
    pub frozen: Vec<bool>,
    /// Observed output values; a machine reads outputs owned by other machines from here.
    pub shadow: Option<Vec<i64>>,
}

/// One synchronous macro-step.
pub fn step(
    model: &Model,
    pre: &Valuation,
    inputs: &[(VarId, i64)],
    time: i64,
) -> Result<StepResult, StepError> {
    step_with(model, pre, inputs, time, &StepControl::default())
}

pub fn step_with(
    model: &Model,
    pre: &Valuation,
    inputs: &[(VarId, i64)],
    time: i64,
    ctl: &StepControl,
) -> Result<StepResult, StepError> {
    let now = pre.time(model);
    if time < now {
        return Err(StepError::TimeReversal {
            from: now,
            to: time,
        });
    }
    let mut post = pre.clone();
    post.0[time_slot(model)] = time;
    for &(v, x) in inputs {
        let d = &model.variables[v];
        if d.kind != VarKind::Input {
            return Err(StepError::NotAnInput(d.name.clone()));
        }
        if !d.domain.contains(x) {
            return Err(StepError::OutOfDomain {
                var: d.name.clone(),
                value: x,
            });
        }
        post.0[v] = x;
    }
    let owners: Vec<Option<usize>> = match ctl.shadow {
        Some(_) => (0..model.variables.len()).map(|v| model.owner(v)).collect(),
        None => Vec::new(),
    };
    let mut fired = vec![None; model.machines.len()];
    for m in 0..model.machines.len() {
        if ctl.frozen.get(m).copied().unwrap_or(false) {
            continue;
        }
        let env = ValEnv {
            model,
            val: pre,
            shadow: ctl.shadow.as_deref().map(|s| (m, s, owners.as_slice())),
        };
        let Some(t) = effective_priority(model, &env, m, pre.leaf(model, m))? else {
            continue;
        };
        fired[m] = Some(t);
        let tr = &model.transitions[t];
        for a in &tr.actions {
            let x = a.value.eval(&env);
            let d = &model.variables[a.var];
            if !d.domain.contains(x) {
                return Err(StepError::OutOfDomain {
                    var: d.name.clone(),
                    value: x,
                });
            }
            post.0[a.var] = x;
        }
        if tr.target.is_some() {
            let entered = model.entered_states(t);
            post.0[leaf_slot(model, m)] = *entered.last().unwrap() as i64;
            for s in entered {
                post.0[timer_slot(model, s)] = time;
            }
        }
    }
    Ok(StepResult { post, fired })
}

/// True if no machine has an enabled transition.
pub fn is_quiescent(model: &Model, v: &Valuation) -> Result<bool, AmbiguityError> {
    let env = v.env(model);
    for m in 0..model.machines.len() {
        if effective_priority(model, &env, m, v.leaf(model, m))?.is_some() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Earliest time after `now` at which a timer atom of a guard on an active path may flip.
pub fn next_guard_event(model: &Model, v: &Valuation) -> Option<i64> {
    let now = v.time(model);
    let mut best: Option<i64> = None;
    for m in 0..model.machines.len() {
        let path = model.path_to_root(v.leaf(model, m));
        for &t in &model.machines[m].transitions {
            let tr = &model.transitions[t];
            if !path.contains(&tr.source) {
                continue;
            }
            for (s, c) in tr.guard.timer_constants() {
                let base = v.timer(model, s);
                for e in [base + c, base + c + 1] {
                    if e > now {
                        best = Some(best.map_or(e, |b| b.min(e)));
                    }
                }
            }
        }
    }
    best
}

// ---- transition relation ----------------------------------------------------

/// Right-hand side of a post-state equation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rhs {
    Const(i64),
    Pre(Expr),
    PreSlot(usize),
    PostSlot(usize),
}

/// Quantifier-free formula over a (pre, post) valuation pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RelExpr {
    And(Vec<RelExpr>),
    Or(Vec<RelExpr>),
    Not(Box<RelExpr>),
    /// State formula over the pre-state.
    Pre(Expr),
    PostEq(usize, Rhs),
    PostGePre(usize),
    PostIn(usize, i64, i64),
}

impl RelExpr {
    pub fn holds(&self, model: &Model, pre: &Valuation, post: &Valuation) -> bool {
        match self {
            RelExpr::And(xs) => xs.iter().all(|x| x.holds(model, pre, post)),
            RelExpr::Or(xs) => xs.iter().any(|x| x.holds(model, pre, post)),
            RelExpr::Not(x) => !x.holds(model, pre, post),
            RelExpr::Pre(e) => pre.holds(model, e),
            RelExpr::PostEq(slot, rhs) => {
                post.0[*slot]
                    == match rhs {
                        Rhs::Const(c) => *c,
                        Rhs::Pre(e) => e.eval(&pre.env(model)),
                        Rhs::PreSlot(s) => pre.0[*s],
                        Rhs::PostSlot(s) => post.0[*s],
                    }
            }
            RelExpr::PostGePre(slot) => post.0[*slot] >= pre.0[*slot],
            RelExpr::PostIn(slot, lo, hi) => *lo <= post.0[*slot] && post.0[*slot] <= *hi,
        }
    }
}

/// Initial predicate and step predicate of a model.
#[derive(Clone, Debug)]
pub struct TransitionRelation {
    /// Slot equations satisfied exactly by the initial valuation.
    pub initial: Vec<(usize, i64)>,
    pub step: RelExpr,
}

impl TransitionRelation {
    pub fn holds_initial(&self, v: &Valuation) -> bool {
        self.initial.iter().all(|&(s, x)| v.0[s] == x)
    }

    pub fn holds(&self, model: &Model, pre: &Valuation, post: &Valuation) -> bool {
        self.step.holds(model, pre, post)
    }
}

fn fire_condition(model: &Model, t: TransitionId) -> Expr {
    let tr = &model.transitions[t];
    Expr::and_all([Expr::InState(tr.source), tr.guard.clone()])
}

pub fn build_relation(model: &Model) -> Result<TransitionRelation, AmbiguityError> {
    if let Some(e) = static_ambiguities(model).into_iter().next() {
        return Err(e);
    }
    let init = Valuation::initial(model);
    let initial = init.0.iter().copied().enumerate().collect();
    let ts = time_slot(model);
    let mut conj = vec![RelExpr::PostGePre(ts)];
    for v in model.inputs() {
        let (lo, hi) = model.variables[v].domain.bounds();
        conj.push(RelExpr::PostIn(v, lo, hi));
    }
    let writers = model.writers();
    for v in 0..model.variables.len() {
        if model.variables[v].kind != VarKind::Input && !writers.contains_key(&v) {
            conj.push(RelExpr::PostEq(v, Rhs::PreSlot(v)));
        }
    }
    for m in 0..model.machines.len() {
        let owned: Vec<VarId> = writers
            .iter()
            .filter(|(_, ms)| ms.contains(&m))
            .map(|(v, _)| *v)
            .collect();
        let mstates = model.states_of_machine(m);
        let ls = leaf_slot(model, m);
        let frame_all = |skip_vars: &[VarId], skip_states: &[StateId], keep_leaf: bool| {
            let mut f = Vec::new();
            if keep_leaf {
                f.push(RelExpr::PostEq(ls, Rhs::PreSlot(ls)));
            }
            for &v in &owned {
                if !skip_vars.contains(&v) {
                    f.push(RelExpr::PostEq(v, Rhs::PreSlot(v)));
                }
            }
            for &s in &mstates {
                if !skip_states.contains(&s) {
                    let sl = timer_slot(model, s);
                    f.push(RelExpr::PostEq(sl, Rhs::PreSlot(sl)));
                }
            }
            f
        };
        let trans = &model.machines[m].transitions;
        let mut alts = Vec::new();
        for &t in trans {
            let tr = &model.transitions[t];
            let mut c = vec![RelExpr::Pre(fire_condition(model, t))];
            for &h in trans {
                if model.priority_rank(h) > model.priority_rank(t) {
                    c.push(RelExpr::Not(Box::new(RelExpr::Pre(fire_condition(
                        model, h,
                    )))));
                }
            }
            let written: Vec<VarId> = tr.actions.iter().map(|a| a.var).collect();
            for a in &tr.actions {
                c.push(RelExpr::PostEq(a.var, Rhs::Pre(a.value.clone())));
            }
            let entered = if tr.kind == TransitionKind::External {
                model.entered_states(t)
            } else {
                Vec::new()
            };
            if let Some(&leaf) = entered.last() {
                c.push(RelExpr::PostEq(ls, Rhs::Const(leaf as i64)));
            }
            for &s in &entered {
                c.push(RelExpr::PostEq(timer_slot(model, s), Rhs::PostSlot(ts)));
            }
            c.extend(frame_all(&written, &entered, entered.is_empty()));
            alts.push(RelExpr::And(c));
        }
        let mut idle: Vec<RelExpr> = trans
            .iter()
            .map(|&t| RelExpr::Not(Box::new(RelExpr::Pre(fire_condition(model, t)))))
            .collect();
        idle.extend(frame_all(&[], &[], true));
        alts.push(RelExpr::And(idle));
        conj.push(RelExpr::Or(alts));
    }
    Ok(TransitionRelation {
        initial,
        step: RelExpr::And(conj),
    })
}

/// Pairs of same-source, same-priority transitions whose guards may both hold.
/// Conservative: reported unless enumeration proves the guards disjoint.
pub fn static_ambiguities(model: &Model) -> Vec<AmbiguityError> {
    let mut out = Vec::new();
    for m in 0..model.machines.len() {
        let ts = &model.machines[m].transitions;
        for (i, &a) in ts.iter().enumerate() {
            for &b in &ts[i + 1..] {
                let (ta, tb) = (&model.transitions[a], &model.transitions[b]);
                if ta.source != tb.source || model.priority_rank(a) != model.priority_rank(b) {
                    continue;
                }
                let both =
                    Expr::and_all([Expr::InState(ta.source), ta.guard.clone(), tb.guard.clone()]);
                if state_satisfiable(model, &both, 200_000) != Some(false) {
                    out.push(AmbiguityError {
                        machine: model.machines[m].name.clone(),
                        first: model.transition_name(a),
                        second: model.transition_name(b),
                        depth: model.states[ta.source].depth,
                    });
                }
            }
        }
    }
    out
}

/// Decides satisfiability of a state formula by enumerating the variables, basic
/// states and timer values it mentions. `None` if the search space exceeds `limit`.
pub fn state_satisfiable(model: &Model, e: &Expr, limit: u64) -> Option<bool> {
    let mut found = false;
    let done = enumerate_states(model, &[e], limit, &mut |v| {
        if v.holds(model, e) {
            found = true;
            false
        } else {
            true
        }
    })?;
    let _ = done;
    Some(found)
}

/// Calls `f` on valuations covering every combination of the values relevant to
/// `exprs`; stops early when `f` returns false. `None` if the space exceeds `limit`.
pub fn enumerate_states(
    model: &Model,
    exprs: &[&Expr],
    limit: u64,
    f: &mut dyn FnMut(&Valuation) -> bool,
) -> Option<bool> {
    let mut vars: Vec<VarId> = Vec::new();
    let mut machines: Vec<usize> = Vec::new();
    let mut timers: Vec<(StateId, Vec<i64>)> = Vec::new();
    for e in exprs {
        for v in e.vars() {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
        e.visit(&mut |x| {
            if let Expr::InState(s) | Expr::Elapsed(s) = x {
                let m = model.states[*s].machine;
                if !machines.contains(&m) {
                    machines.push(m);
                }
            }
        });
        for s in e.timers() {
            if !timers.iter().any(|(t, _)| *t == s) {
                timers.push((s, vec![0]));
            }
        }
        for (s, c) in e.timer_constants() {
            let entry = timers.iter_mut().find(|(t, _)| *t == s).unwrap();
            for x in [c - 1, c, c + 1] {
                if x >= 0 && !entry.1.contains(&x) {
                    entry.1.push(x);
                }
            }
        }
    }
    let mut axes: Vec<Vec<i64>> = Vec::new();
    for &v in &vars {
        let (lo, hi) = model.variables[v].domain.bounds();
        axes.push((lo..=hi).collect());
    }
    for &m in &machines {
        axes.push(
            model
                .leaves_of_machine(m)
                .into_iter()
                .map(|l| l as i64)
                .collect(),
        );
    }
    for (_, vals) in &timers {
        axes.push(vals.clone());
    }
    let mut total: u64 = 1;
    for a in &axes {
        total = total.saturating_mul(a.len() as u64);
    }
    if total > limit {
        return None;
    }
    let mut base = Valuation::initial(model);
    let t0 = 1_000_000;
    base.0[time_slot(model)] = t0;
    let mut idx = vec![0usize; axes.len()];
    loop {
        let mut v = base.clone();
        let mut k = 0;
        for &var in &vars {
            v.0[var] = axes[k][idx[k]];
            k += 1;
        }
        for &m in &machines {
            v.0[leaf_slot(model, m)] = axes[k][idx[k]];
            k += 1;
        }
        for (s, _) in &timers {
            v.0[timer_slot(model, *s)] = t0 - axes[k][idx[k]];
            k += 1;
        }
        if !f(&v) {
            return Some(false);
        }
        let mut i = 0;
        loop {
            if i == axes.len() {
                return Some(true);
            }
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

// ---- successor generation ---------------------------------------------------

/// Input stimulation applied by one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Stimulus {
    pub time: i64,
    pub change: Option<(VarId, i64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueOrder {
    /// Domain minimum, then comparison boundaries and maximum, then the midpoint.
    Boundary,
    /// Same candidates, shuffled by the seed.
    Shuffled,
}

#[derive(Clone, Debug)]
pub struct SuccessorConfig {
    pub value_order: ValueOrder,
    pub seed: u64,
    /// Upper bound on distinct time stamps tried per step.
    pub max_time_candidates: usize,
}

impl Default for SuccessorConfig {
    fn default() -> Self {
        SuccessorConfig {
            value_order: ValueOrder::Boundary,
            seed: 0,
            max_time_candidates: 8,
        }
    }
}

/// Event-driven successor generator.
///
/// A state with an enabled transition has exactly one successor at the same time
/// with unchanged inputs. From a quiescent state a step changes at most one input
/// and advances time to a point no later than the next guard event.
pub struct Successors<'m> {
    model: &'m Model,
    candidates: Vec<(VarId, Vec<i64>)>,
    goal_timers: Vec<(StateId, i64)>,
    max_times: usize,
}

impl<'m> Successors<'m> {
    /// `goal` contributes timer constants and comparison boundaries.
    pub fn new(model: &'m Model, goal: &[&Expr], cfg: &SuccessorConfig) -> Successors<'m> {
        let mut consts: Vec<(VarId, i64)> = Vec::new();
        let mut push_consts = |e: &Expr| {
            for (v, _, c) in e.comparison_constants() {
                consts.push((v, c));
            }
        };
        for tr in &model.transitions {
            push_consts(&tr.guard);
        }
        for e in goal {
            push_consts(e);
        }
        let mut goal_timers = Vec::new();
        for e in goal {
            for tc in e.timer_constants() {
                if !goal_timers.contains(&tc) {
                    goal_timers.push(tc);
                }
            }
        }
        let mut candidates = Vec::new();
        for v in model.inputs() {
            let d = &model.variables[v].domain;
            let (lo, hi) = d.bounds();
            let mut vals: Vec<i64> = Vec::new();
            let mut add = |x: i64| {
                if lo <= x && x <= hi && !vals.contains(&x) {
                    vals.push(x);
                }
            };
            if d.size() <= 8 {
                (lo..=hi).for_each(&mut add);
            } else {
                add(lo);
                let mut bs: Vec<i64> = consts
                    .iter()
                    .filter(|(x, _)| *x == v)
                    .flat_map(|&(_, c)| [c - 1, c, c + 1])
                    .collect();
                bs.sort();
                bs.into_iter().for_each(&mut add);
                add(hi);
                add(lo + (hi - lo) / 2);
            }
            candidates.push((v, vals));
        }
        if cfg.value_order == ValueOrder::Shuffled {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for (_, vals) in candidates.iter_mut() {
                vals.shuffle(&mut rng);
            }
            candidates.shuffle(&mut rng);
        }
        Successors {
            model,
            candidates,
            goal_timers,
            max_times: cfg.max_time_candidates.max(1),
        }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    /// Candidate time stamps for a step from a quiescent state, and whether each is an event.
    fn times(&self, v: &Valuation) -> Vec<(i64, bool)> {
        let m = self.model;
        let now = v.time(m);
        let next = next_guard_event(m, v);
        let mut out: Vec<(i64, bool)> = Vec::new();
        let mut add = |t: i64, event: bool| {
            if t > now && next.is_none_or(|e| t <= e) {
                if let Some(x) = out.iter_mut().find(|(x, _)| *x == t) {
                    x.1 |= event;
                } else {
                    out.push((t, event));
                }
            }
        };
        add(now + 1, false);
        if let Some(e) = next {
            add(e - 1, false);
            add(e, true);
        }
        for &(s, c) in &self.goal_timers {
            if v.active(m, s) {
                let d = v.timer(m, s) + c;
                add(d - 1, true);
                add(d, true);
                add(d + 1, true);
            }
        }
        out.sort();
        out.truncate(self.max_times);
        out
    }

    pub fn successors(&self, v: &Valuation) -> Result<Vec<(Stimulus, Valuation)>, StepError> {
        let m = self.model;
        let now = v.time(m);
        if !is_quiescent(m, v)? {
            let r = step(m, v, &[], now)?;
            return Ok(vec![(
                Stimulus {
                    time: now,
                    change: None,
                },
                r.post,
            )]);
        }
        let mut out = Vec::new();
        for (t, event) in self.times(v) {
            if event {
                let r = step(m, v, &[], t)?;
                out.push((
                    Stimulus {
                        time: t,
                        change: None,
                    },
                    r.post,
                ));
            }
            for (x, vals) in &self.candidates {
                for &val in vals {
                    if val == v.var(*x) {
                        continue;
                    }
                    let r = step(m, v, &[(*x, val)], t)?;
                    out.push((
                        Stimulus {
                            time: t,
                            change: Some((*x, val)),
                        },
                        r.post,
                    ));
                }
            }
        }
        Ok(out)
    }
}

/// Zero-time steps until no transition is enabled. `None` if `limit` steps do not suffice.
pub fn settle(
    model: &Model,
    v: &Valuation,
    limit: usize,
) -> Result<Option<(Valuation, usize)>, StepError> {
    let mut cur = v.clone();
    for n in 0..=limit {
        if is_quiescent(model, &cur)? {
            return Ok(Some((cur, n)));
        }
        let t = cur.time(model);
        cur = step(model, &cur, &[], t)?.post;
    }
    Ok(None)
}

// ---- interval abstraction -------------------------------------------------

pub const UNBOUNDED: i64 = i64::MAX / 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalState {
    pub vars: Vec<(i64, i64)>,
    /// Possibly active basic states per machine.
    pub leaves: Vec<BTreeSet<StateId>>,
    /// Possible `elapsed` values per control state.
    pub elapsed: Vec<(i64, i64)>,
}

#[derive(Clone, Debug)]
pub struct IntervalReach {
    pub depths: Vec<IntervalState>,
    /// Smallest depth at which the goal may hold, if any up to `max_k`.
    pub lower_bound: Option<usize>,
}

struct IvEnv<'a> {
    model: &'a Model,
    st: &'a IntervalState,
    /// Machine whose basic state is fixed for this evaluation.
    fixed: Option<(usize, StateId)>,
}

impl IvEnv<'_> {
    fn active(&self, s: StateId) -> (i64, i64) {
        let m = self.model.states[s].machine;
        if let Some((fm, leaf)) = self.fixed {
            if fm == m {
                let a = self.model.is_ancestor_or_self(s, leaf) as i64;
                return (a, a);
            }
        }
        let set = &self.st.leaves[m];
        let n = set
            .iter()
            .filter(|&&l| self.model.is_ancestor_or_self(s, l))
            .count();
        if n == 0 {
            (0, 0)
        } else if n == set.len() {
            (1, 1)
        } else {
            (0, 1)
        }
    }

    fn eval(&self, e: &Expr) -> (i64, i64) {
        match e {
            Expr::Bool(b) => (*b as i64, *b as i64),
            Expr::Int(i) => (*i, *i),
            Expr::Name(_) => (i64::MIN / 4, UNBOUNDED),
            Expr::Var(v) => self.st.vars[*v],
            Expr::InState(s) => self.active(*s),
            Expr::Elapsed(s) => self.st.elapsed[*s],
            Expr::Not(x) => {
                let (lo, hi) = self.eval(x);
                (1 - hi.min(1), 1 - lo.min(1))
            }
            Expr::And(xs) => xs.iter().fold((1, 1), |(lo, hi), x| {
                let (a, b) = self.eval(x);
                (lo.min(a.min(1)), hi.min(b.min(1)))
            }),
            Expr::Or(xs) => xs.iter().fold((0, 0), |(lo, hi), x| {
                let (a, b) = self.eval(x);
                (lo.max(a.min(1)), hi.max(b.min(1)))
            }),
            Expr::Cmp(op, a, b) => {
                let (al, ah) = self.eval(a);
                let (bl, bh) = self.eval(b);
                let (t, f) = match op {
                    CmpOp::Eq => (al == ah && bl == bh && al == bl, ah < bl || bh < al),
                    CmpOp::Ne => (ah < bl || bh < al, al == ah && bl == bh && al == bl),
                    CmpOp::Lt => (ah < bl, al >= bh),
                    CmpOp::Le => (ah <= bl, al > bh),
                    CmpOp::Gt => (al > bh, ah <= bl),
                    CmpOp::Ge => (al >= bh, ah < bl),
                };
                if t {
                    (1, 1)
                } else if f {
                    (0, 0)
                } else {
                    (0, 1)
                }
            }
            Expr::Arith(op, a, b) => {
                let (al, ah) = self.eval(a);
                let (bl, bh) = self.eval(b);
                match op {
                    ArithOp::Add => (al.saturating_add(bl), ah.saturating_add(bh)),
                    ArithOp::Sub => (al.saturating_sub(bh), ah.saturating_sub(bl)),
                    ArithOp::Min => (al.min(bl), ah.min(bh)),
                    ArithOp::Max => (al.max(bl), ah.max(bh)),
                }
            }
            Expr::Undef(_, x) => self.eval(x),
        }
    }
}

fn join(a: (i64, i64), b: (i64, i64)) -> (i64, i64) {
    (a.0.min(b.0), a.1.max(b.1))
}

fn abstract_initial(model: &Model) -> IntervalState {
    let v = Valuation::initial(model);
    IntervalState {
        vars: (0..model.variables.len())
            .map(|i| (v.var(i), v.var(i)))
            .collect(),
        leaves: (0..model.machines.len())
            .map(|m| [v.leaf(model, m)].into_iter().collect())
            .collect(),
        elapsed: vec![(0, 0); model.states.len()],
    }
}

fn abstract_step(model: &Model, st: &IntervalState, growth: &mut [u32]) -> IntervalState {
    let mut vars: Vec<Option<(i64, i64)>> = vec![None; model.variables.len()];
    let writers = model.writers();
    let mut leaves = vec![BTreeSet::new(); model.machines.len()];
    let mut keep: Vec<bool> = vec![false; model.variables.len()];
    for m in 0..model.machines.len() {
        let owned: Vec<VarId> = writers
            .iter()
            .filter(|(_, ms)| ms.contains(&m))
            .map(|(v, _)| *v)
            .collect();
        for &leaf in &st.leaves[m] {
            let env = IvEnv {
                model,
                st,
                fixed: Some((m, leaf)),
            };
            let path = model.path_to_root(leaf);
            let mut cands: Vec<(TransitionId, bool)> = Vec::new();
            for &t in &model.machines[m].transitions {
                let tr = &model.transitions[t];
                if !path.contains(&tr.source) {
                    continue;
                }
                let (lo, hi) = env.eval(&tr.guard);
                if hi >= 1 {
                    cands.push((t, lo >= 1));
                }
            }
            let sure = cands
                .iter()
                .filter(|(_, s)| *s)
                .map(|&(t, _)| model.priority_rank(t))
                .max();
            cands.retain(|&(t, _)| sure.is_none_or(|r| model.priority_rank(t) >= r));
            if sure.is_none() {
                leaves[m].insert(leaf);
                owned.iter().for_each(|&v| keep[v] = true);
            }
            for &(t, _) in &cands {
                let tr = &model.transitions[t];
                match tr.kind {
                    TransitionKind::External => {
                        leaves[m].insert(*model.entered_states(t).last().unwrap());
                    }
                    TransitionKind::Activity => {
                        leaves[m].insert(leaf);
                    }
                }
                for &v in &owned {
                    match tr.actions.iter().find(|a| a.var == v) {
                        Some(a) => {
                            let iv = env.eval(&a.value);
                            vars[v] = Some(vars[v].map_or(iv, |x| join(x, iv)));
                        }
                        None => keep[v] = true,
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(model.variables.len());
    for v in 0..model.variables.len() {
        let d = &model.variables[v].domain;
        let (dlo, dhi) = d.bounds();
        let iv = if model.variables[v].kind == VarKind::Input {
            (dlo, dhi)
        } else {
            let mut iv = vars[v];
            if keep[v] || !writers.contains_key(&v) {
                iv = Some(iv.map_or(st.vars[v], |x| join(x, st.vars[v])));
            }
            let iv = iv.unwrap_or(st.vars[v]);
            (iv.0.max(dlo), iv.1.min(dhi))
        };
        let old = st.vars[v];
        let grown = iv.0 < old.0 || iv.1 > old.1;
        if grown {
            growth[v] += 1;
        }
        out.push(if growth[v] >= 3 { (dlo, dhi) } else { iv });
    }
    IntervalState {
        vars: out,
        leaves,
        elapsed: vec![(0, UNBOUNDED); model.states.len()],
    }
}

fn goal_may_hold(model: &Model, st: &IntervalState, goal: &Expr) -> bool {
    let machines: Vec<usize> = (0..model.machines.len()).collect();
    let sets: Vec<Vec<StateId>> = machines
        .iter()
        .map(|&m| st.leaves[m].iter().copied().collect())
        .collect();
    if sets.iter().any(|s| s.is_empty()) {
        return false;
    }
    let mut idx = vec![0usize; sets.len()];
    loop {
        let mut fixed = st.clone();
        for (m, s) in sets.iter().enumerate() {
            fixed.leaves[m] = [s[idx[m]]].into_iter().collect();
        }
        let env = IvEnv {
            model,
            st: &fixed,
            fixed: None,
        };
        if env.eval(goal).1 >= 1 {
            return true;
        }
        let mut i = 0;
        loop {
            if i == sets.len() {
                return false;
            }
            idx[i] += 1;
            if idx[i] < sets[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Over-approximation of the valuations reachable at each depth up to `max_k`.
pub fn interval_reach(model: &Model, goal: &Expr, max_k: usize) -> IntervalReach {
    let mut depths = vec![abstract_initial(model)];
    let mut growth = vec![0u32; model.variables.len()];
    let mut lower_bound = goal_may_hold(model, &depths[0], goal).then_some(0);
    for d in 1..=max_k {
        let prev = depths.last().unwrap();
        let next = abstract_step(model, prev, &mut growth);
        let stable = next == *prev;
        depths.push(next);
        if lower_bound.is_none() && goal_may_hold(model, depths.last().unwrap(), goal) {
            lower_bound = Some(d);
        }
        if stable {
            let last = depths.last().unwrap().clone();
            while depths.len() <= max_k {
                depths.push(last.clone());
            }
            break;
        }
    }
    IntervalReach {
        depths,
        lower_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_model;

    const TOGGLE: &str = "model t {\n in x : int 0..3 init 0\n out y : bool init false\n machine M {\n state A initial { on x > 0 / y := true -> B }\n state B { on after(B, 10) / y := false -> A }\n }\n}\n";

    #[test]
    fn step_fires_on_pre_state() {
        let m = parse_model(TOGGLE).unwrap();
        let v0 = Valuation::initial(&m);
        let v1 = step(&m, &v0, &[(0, 2)], 5).unwrap().post;
        assert_eq!(v1.leaf(&m, 0), m.state_by_name("A").unwrap());
        let v2 = step(&m, &v1, &[], 5).unwrap().post;
        assert_eq!(v2.leaf(&m, 0), m.state_by_name("B").unwrap());
        assert_eq!(v2.var(1), 1);
        assert_eq!(v2.timer(&m, m.state_by_name("B").unwrap()), 5);
    }

    #[test]
    fn relation_agrees_with_step() {
        let m = parse_model(TOGGLE).unwrap();
        let rel = build_relation(&m).unwrap();
        let v0 = Valuation::initial(&m);
        assert!(rel.holds_initial(&v0));
        let v1 = step(&m, &v0, &[(0, 1)], 3).unwrap().post;
        assert!(rel.holds(&m, &v0, &v1));
        let v2 = step(&m, &v1, &[], 3).unwrap().post;
        assert!(rel.holds(&m, &v1, &v2));
        assert!(!rel.holds(&m, &v1, &v1));
    }

    #[test]
    fn time_cannot_go_back() {
        let m = parse_model(TOGGLE).unwrap();
        let v0 = step(&m, &Valuation::initial(&m), &[], 4).unwrap().post;
        assert!(matches!(
            step(&m, &v0, &[], 3),
            Err(StepError::TimeReversal { .. })
        ));
    }

    #[test]
    fn interval_goal_false_is_unreachable() {
        let m = parse_model(TOGGLE).unwrap();
        let r = interval_reach(&m, &Expr::Bool(false), 5);
        assert_eq!(r.lower_bound, None);
        let r = interval_reach(&m, &Expr::InState(m.state_by_name("A").unwrap()), 5);
        assert_eq!(r.lower_bound, Some(0));
    }
}
