//! Test procedures: timed stimulation plus expected outputs, their file format,
//! execution against an adapter, and model mutants standing in for faulty systems.

use std::fmt;

use crate::expr::{Expr, VarId};
use crate::frontend::{format_log_value, TraceLog};
use crate::model::{Model, TransitionId, VarKind};
use crate::oracle::{
    build_oracle, check_strict_log, check_tolerant, parse_tolerances, print_tolerances,
    project_log, OracleError, ToleranceSpec, Verdict,
};
use crate::semantics::{next_guard_event, settle, step, StepError, Valuation};
use crate::solver::Witness;

/// Zero-time steps allowed at one instant.
pub const SETTLE_LIMIT: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Strict,
    Tolerant,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "strict" => Some(Mode::Strict),
            "tolerant" => Some(Mode::Tolerant),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strict => "strict",
            Mode::Tolerant => "tolerant",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestProcedure {
    pub id: String,
    pub covers: Vec<String>,
    pub mode: Mode,
    /// Observation ends at this time (ms).
    pub horizon: i64,
    pub tolerances: ToleranceSpec,
    /// (time, input, value), non-decreasing in time.
    pub stimuli: Vec<(i64, VarId, i64)>,
    /// (time, output, value): initial values, then every change.
    pub expected: Vec<(i64, VarId, i64)>,
}

impl TestProcedure {
    pub fn expected_log(&self) -> TraceLog {
        let mut all: Vec<(i64, u8, VarId, i64)> = self
            .stimuli
            .iter()
            .map(|&(t, v, x)| (t, 0, v, x))
            .chain(self.expected.iter().map(|&(t, v, x)| (t, 1, v, x)))
            .collect();
        all.sort_by_key(|&(t, k, _, _)| (t, k));
        let mut log = TraceLog::default();
        for (t, _, v, x) in all {
            log.push(t, v, x);
        }
        log
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProcError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("adapter failure: {0}")]
    AdapterFailure(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// The witness followed by the zero-time reaction at its last instant.
pub fn settled_trace(model: &Model, witness: &Witness) -> Result<Vec<Valuation>, ProcError> {
    let mut trace = witness.trace.clone();
    let mut cur = trace.last().cloned().expect("witness is non-empty");
    let t = cur.time(model);
    for _ in 0..SETTLE_LIMIT {
        if crate::semantics::is_quiescent(model, &cur).map_err(StepError::from)? {
            return Ok(trace);
        }
        cur = step(model, &cur, &[], t)?.post;
        trace.push(cur.clone());
    }
    Err(ProcError::AdapterFailure(format!(
        "no quiescent state at t={t}"
    )))
}

/// Procedure for a witness: inputs at their stimulation times and the expected outputs.
pub fn emit(
    model: &Model,
    id: &str,
    covers: &[String],
    witness: &Witness,
    mode: Mode,
    tolerances: &ToleranceSpec,
) -> Result<TestProcedure, ProcError> {
    let trace = settled_trace(model, witness)?;
    let first = &trace[0];
    let t0 = first.time(model);
    let mut stimuli: Vec<(i64, VarId, i64)> = model
        .inputs()
        .into_iter()
        .map(|v| (t0, v, first.var(v)))
        .collect();
    for s in &witness.stimuli {
        if let Some((v, x)) = s.change {
            stimuli.push((s.time, v, x));
        }
    }
    let outputs = model.outputs();
    let mut expected: Vec<(i64, VarId, i64)> =
        outputs.iter().map(|&v| (t0, v, first.var(v))).collect();
    let changes = project_log(model, &trace, &outputs);
    for r in changes.records.iter().filter(|r| r.time > t0) {
        expected.push((r.time, r.var, r.value));
    }
    let last = trace.last().unwrap().time(model);
    let slack = match mode {
        Mode::Strict => 0,
        Mode::Tolerant => tolerances
            .outputs
            .values()
            .map(|t| t.dlate.max(t.dearly))
            .max()
            .unwrap_or(0),
    };
    Ok(TestProcedure {
        id: id.to_string(),
        covers: covers.to_vec(),
        mode,
        horizon: last + slack,
        tolerances: tolerances.clone(),
        stimuli,
        expected,
    })
}

pub fn print_procedure(p: &TestProcedure, model: &Model) -> String {
    let name = |v: VarId| model.variables[v].name.as_str();
    let mut s = format!("procedure {}\n", p.id);
    s += &format!("covers {}\n", p.covers.join(" "));
    s += &format!("mode {}\n", p.mode);
    s += &format!("horizon {}\n", p.horizon);
    for line in print_tolerances(&p.tolerances, model).lines() {
        s += &format!("tolerance {line}\n");
    }
    for &(t, v, x) in &p.stimuli {
        s += &format!("stim t={t} {}={}\n", name(v), format_log_value(model, v, x));
    }
    for &(t, v, x) in &p.expected {
        s += &format!(
            "expect t={t} {}={}\n",
            name(v),
            format_log_value(model, v, x)
        );
    }
    s
}

pub fn parse_procedure(text: &str, model: &Model) -> Result<TestProcedure, ProcError> {
    let mut p = TestProcedure {
        id: String::new(),
        covers: Vec::new(),
        mode: Mode::Strict,
        horizon: 0,
        tolerances: ToleranceSpec::default(),
        stimuli: Vec::new(),
        expected: Vec::new(),
    };
    let mut has_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| ProcError::Syntax {
            line: i + 1,
            message: m,
        };
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "procedure" => {
                p.id = rest.trim().to_string();
                has_header = true;
            }
            "covers" => p.covers = rest.split_whitespace().map(str::to_string).collect(),
            "mode" => {
                p.mode =
                    Mode::parse(rest.trim()).ok_or_else(|| err(format!("unknown mode `{rest}`")))?
            }
            "horizon" => {
                p.horizon = rest
                    .trim()
                    .parse()
                    .map_err(|_| err("invalid horizon".into()))?
            }
            "tolerance" => {
                let spec = parse_tolerances(rest, model).map_err(|e| match e {
                    OracleError::Syntax { message, .. } => err(message),
                    other => ProcError::Oracle(other),
                })?;
                p.tolerances.outputs.extend(spec.outputs);
            }
            "stim" | "expect" => {
                let kind = if key == "stim" {
                    VarKind::Input
                } else {
                    VarKind::Output
                };
                let mut words = rest.split_whitespace();
                let (Some(tw), Some(aw), None) = (words.next(), words.next(), words.next()) else {
                    return Err(err(format!("expected `{key} t=<ms> <name>=<value>`")));
                };
                let t: i64 = tw
                    .strip_prefix("t=")
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| err("invalid time stamp".into()))?;
                let (n, x) = aw
                    .split_once('=')
                    .ok_or_else(|| err("expected `<name>=<value>`".into()))?;
                let v = model
                    .var_by_name(n)
                    .filter(|&v| model.variables[v].kind == kind)
                    .ok_or_else(|| {
                        err(format!(
                            "`{n}` is not an {}",
                            if key == "stim" { "input" } else { "output" }
                        ))
                    })?;
                let val = model.variables[v]
                    .domain
                    .parse_value(x)
                    .ok_or_else(|| err(format!("value `{x}` outside the domain of `{n}`")))?;
                let list = if key == "stim" {
                    &mut p.stimuli
                } else {
                    &mut p.expected
                };
                if list.last().is_some_and(|l| l.0 > t) {
                    return Err(err("time stamps must not decrease".into()));
                }
                list.push((t, v, val));
            }
            _ => return Err(err(format!("unknown line kind `{key}`"))),
        }
    }
    if !has_header {
        return Err(ProcError::Syntax {
            line: 1,
            message: "missing `procedure` header".into(),
        });
    }
    Ok(p)
}

/// System under test.
#[derive(Clone, Debug)]
pub enum Adapter<'a> {
    /// The interpreter running a model (the reference or a mutant).
    Interpreter(&'a Model),
    /// A recorded log of inputs and outputs.
    ExternalLog(TraceLog),
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub verdict: Verdict,
    pub observed: TraceLog,
}

/// Runs the model on the stimulation up to `horizon` and logs inputs and outputs.
pub fn run_interpreter(
    model: &Model,
    stimuli: &[(i64, VarId, i64)],
    horizon: i64,
) -> Result<TraceLog, ProcError> {
    let vars = model.observables();
    let mut log = TraceLog::default();
    let mut cur = Valuation::initial(model);
    let record = |log: &mut TraceLog, prev: Option<&Valuation>, v: &Valuation| {
        for &x in &vars {
            if prev.is_none_or(|p| p.var(x) != v.var(x)) {
                log.push(v.time(model), x, v.var(x));
            }
        }
    };
    let settle_at = |v: &Valuation| -> Result<Valuation, ProcError> {
        match settle(model, v, SETTLE_LIMIT)? {
            Some((s, _)) => Ok(s),
            None => Err(ProcError::AdapterFailure(format!(
                "no quiescent state at t={}",
                v.time(model)
            ))),
        }
    };
    record(&mut log, None, &cur);
    let mut i = 0;
    loop {
        let next_stim = stimuli.get(i).map(|s| s.0);
        let next_event = next_guard_event(model, &cur).filter(|&e| e <= horizon);
        let t = match (next_stim, next_event) {
            (Some(s), Some(e)) => s.min(e),
            (Some(s), None) => s,
            (None, Some(e)) => e,
            (None, None) => break,
        };
        if t > horizon {
            break;
        }
        let mut inputs: Vec<(VarId, i64)> = Vec::new();
        while i < stimuli.len() && stimuli[i].0 == t {
            inputs.retain(|x| x.0 != stimuli[i].1);
            inputs.push((stimuli[i].1, stimuli[i].2));
            i += 1;
        }
        let t = t.max(cur.time(model));
        let moved = step(model, &cur, &inputs, t)?.post;
        let next = settle_at(&moved)?;
        record(&mut log, Some(&cur), &next);
        cur = next;
    }
    Ok(log)
}

/// Executes a procedure against an adapter and checks the observation.
pub fn execute(
    proc_: &TestProcedure,
    model: &Model,
    adapter: &Adapter,
) -> Result<Execution, ProcError> {
    let observed = match adapter {
        Adapter::Interpreter(sut) => run_interpreter(sut, &proc_.stimuli, proc_.horizon)?,
        Adapter::ExternalLog(log) => log.clone(),
    };
    let verdict = match proc_.mode {
        Mode::Strict => check_strict_log(model, &proc_.expected_log(), &observed),
        Mode::Tolerant => {
            let oracle = build_oracle(model, &proc_.tolerances)?;
            check_tolerant(&oracle, &observed, proc_.horizon)?
        }
    };
    Ok(Execution { verdict, observed })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Replace constant `old` by `new` in the guard and actions of a transition.
    ConstantTweak {
        transition: String,
        old: i64,
        new: i64,
    },
    GuardNegate {
        transition: String,
    },
    /// Remove the assignment to `var` from a transition.
    ActionDrop {
        transition: String,
        var: String,
    },
}

impl Mutation {
    /// `constant-tweak:<transition>:<old>:<new>`, `guard-negate:<transition>`,
    /// `action-drop:<transition>:<variable>`.
    pub fn parse(spec: &str) -> Option<Mutation> {
        let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["constant-tweak", t, old, new] => Some(Mutation::ConstantTweak {
                transition: t.to_string(),
                old: old.parse().ok()?,
                new: new.parse().ok()?,
            }),
            ["guard-negate", t] => Some(Mutation::GuardNegate {
                transition: t.to_string(),
            }),
            ["action-drop", t, v] => Some(Mutation::ActionDrop {
                transition: t.to_string(),
                var: v.to_string(),
            }),
            _ => None,
        }
    }

    fn transition(&self) -> &str {
        match self {
            Mutation::ConstantTweak { transition, .. }
            | Mutation::GuardNegate { transition }
            | Mutation::ActionDrop { transition, .. } => transition,
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mutation::ConstantTweak {
                transition,
                old,
                new,
            } => write!(f, "constant-tweak:{transition}:{old}:{new}"),
            Mutation::GuardNegate { transition } => write!(f, "guard-negate:{transition}"),
            Mutation::ActionDrop { transition, var } => write!(f, "action-drop:{transition}:{var}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid mutation {mutation}: {reason}")]
pub struct InvalidMutation {
    pub mutation: String,
    pub reason: String,
}

fn replace_int(e: &Expr, old: i64, new: i64, hits: &mut usize) -> Expr {
    let hit = std::cell::Cell::new(0);
    let out = e.map_leaves(&|x| match x {
        Expr::Int(c) if *c == old => {
            hit.set(hit.get() + 1);
            Some(Expr::Int(new))
        }
        _ => None,
    });
    *hits += hit.get();
    out
}

/// The model with one element changed.
pub fn mutate(model: &Model, mutation: &Mutation) -> Result<Model, InvalidMutation> {
    let bad = |reason: String| InvalidMutation {
        mutation: mutation.to_string(),
        reason,
    };
    let t: TransitionId = model
        .transition_by_name(mutation.transition())
        .ok_or_else(|| bad(format!("no transition `{}`", mutation.transition())))?;
    let mut m = model.clone();
    let tr = &mut m.transitions[t];
    match mutation {
        Mutation::ConstantTweak { old, new, .. } => {
            let mut hits = 0;
            tr.guard = replace_int(&tr.guard, *old, *new, &mut hits);
            for a in &mut tr.actions {
                a.value = replace_int(&a.value, *old, *new, &mut hits);
            }
            if hits == 0 {
                return Err(bad(format!("constant {old} does not occur")));
            }
        }
        Mutation::GuardNegate { .. } => tr.guard = Expr::not(tr.guard.clone()),
        Mutation::ActionDrop { var, .. } => {
            let before = tr.actions.len();
            tr.actions.retain(|a| model.variables[a.var].name != *var);
            if tr.actions.len() == before {
                return Err(bad(format!("no assignment to `{var}`")));
            }
        }
    }
    if let Some(d) = m.validate().first() {
        return Err(bad(format!("mutant does not validate: {}", d.message)));
    }
    Ok(m)
}
