//! Conformance of observed input/output logs against the model.
//!
//! The strict relation compares end-of-instant values of inputs and outputs and
//! their time stamps. The tolerant relation runs the model on the observed
//! inputs with one checker per output that admits late, early and inexact
//! output changes within the configured tolerances.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;

use crate::expr::{Expr, VarId};
use crate::frontend::{LogRecord, TraceLog};
use crate::model::Model;
use crate::semantics::{
    next_guard_event, step_with, timer_slot, StepControl, StepError, Valuation,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tolerance {
    /// Largest admissible value deviation.
    pub eps: Ratio<i64>,
    /// Largest admissible lateness (ms).
    pub dlate: i64,
    /// Largest admissible earliness (ms).
    pub dearly: i64,
}

impl Tolerance {
    pub fn zero() -> Tolerance {
        Tolerance {
            eps: Ratio::from_integer(0),
            dlate: 0,
            dearly: 0,
        }
    }

    fn within(&self, a: i64, b: i64) -> bool {
        Ratio::from_integer((a - b).abs()) <= self.eps
    }
}

/// Tolerances per output variable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ToleranceSpec {
    pub outputs: BTreeMap<VarId, Tolerance>,
}

impl ToleranceSpec {
    /// The same tolerance for every output.
    pub fn uniform(model: &Model, t: Tolerance) -> ToleranceSpec {
        ToleranceSpec {
            outputs: model
                .outputs()
                .into_iter()
                .map(|v| (v, t.clone()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no tolerance given for output `{0}`")]
    MissingTolerance(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("zero-time steps do not terminate at t={0}")]
    Divergent(i64),
}

/// Parses lines `<output> eps=<rational> dlate=<ms> dearly=<ms>`; `#` starts a comment.
pub fn parse_tolerances(text: &str, model: &Model) -> Result<ToleranceSpec, OracleError> {
    let mut spec = ToleranceSpec::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| OracleError::Syntax {
            line: i + 1,
            message,
        };
        let mut words = line.split_whitespace();
        let name = words.next().unwrap_or_default();
        let var = model
            .var_by_name(name)
            .filter(|&v| model.outputs().contains(&v))
            .ok_or_else(|| err(format!("`{name}` is not an output")))?;
        let mut tol = Tolerance::zero();
        let mut seen = [false; 3];
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{w}`")))?;
            let ms = || -> Result<i64, OracleError> {
                v.parse::<i64>()
                    .ok()
                    .filter(|x| *x >= 0)
                    .ok_or_else(|| err(format!("`{v}` is not a non-negative integer")))
            };
            match k {
                "eps" => {
                    let r: Ratio<i64> = v
                        .parse()
                        .map_err(|_| err(format!("`{v}` is not a rational")))?;
                    if r < Ratio::from_integer(0) {
                        return Err(err("eps must be non-negative".into()));
                    }
                    tol.eps = r;
                    seen[0] = true;
                }
                "dlate" => {
                    tol.dlate = ms()?;
                    seen[1] = true;
                }
                "dearly" => {
                    tol.dearly = ms()?;
                    seen[2] = true;
                }
                _ => return Err(err(format!("unknown key `{k}`"))),
            }
        }
        if seen != [true; 3] {
            return Err(err("eps, dlate and dearly are all required".into()));
        }
        spec.outputs.insert(var, tol);
    }
    Ok(spec)
}

pub fn print_tolerances(spec: &ToleranceSpec, model: &Model) -> String {
    spec.outputs
        .iter()
        .map(|(&v, t)| {
            format!(
                "{} eps={} dlate={} dearly={}\n",
                model.variables[v].name, t.eps, t.dlate, t.dearly
            )
        })
        .collect()
}

/// State of an output checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckerState {
    /// Expected and observed values agree.
    S0,
    /// Expected change not yet observed; deadline for the observation.
    S2 {
        deadline: i64,
    },
    /// Unexpected observed change; deadline for the model to follow.
    S3 {
        deadline: i64,
    },
    /// Value arbitrary until `until`, then expected to settle.
    Undef {
        until: i64,
    },
    Error,
}

impl fmt::Display for CheckerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckerState::S0 => f.write_str("s0"),
            CheckerState::S2 { deadline } => write!(f, "s2(deadline={deadline})"),
            CheckerState::S3 { deadline } => write!(f, "s3(deadline={deadline})"),
            CheckerState::Undef { until } => write!(f, "undef(until={until})"),
            CheckerState::Error => f.write_str("error"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    /// Variable whose values disagree.
    pub var: String,
    pub time: i64,
    /// Index of the first expected state at the failure time (strict mode).
    pub step: Option<usize>,
    /// Checker state when the error was detected (tolerant mode).
    pub state: Option<CheckerState>,
    pub expected: Option<i64>,
    pub observed: Option<i64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub failure: Option<Failure>,
}

impl Verdict {
    pub fn pass() -> Verdict {
        Verdict { failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.failure {
            None => f.write_str("PASS"),
            Some(x) => {
                write!(f, "FAIL t={} {}: {}", x.time, x.var, x.message)?;
                if let Some(s) = x.state {
                    write!(f, " [{s}]")?;
                }
                Ok(())
            }
        }
    }
}

/// Log of the observable variables along a trace: initial values, then every change.
pub fn project_log(model: &Model, trace: &[Valuation], vars: &[VarId]) -> TraceLog {
    let mut log = TraceLog::default();
    let Some(first) = trace.first() else {
        return log;
    };
    for &v in vars {
        log.push(first.time(model), v, first.var(v));
    }
    for w in trace.windows(2) {
        for &v in vars {
            if w[1].var(v) != w[0].var(v) {
                log.push(w[1].time(model), v, w[1].var(v));
            }
        }
    }
    normalize(model, &log, vars)
}

/// End-of-instant changes relative to the declared initial values, ordered by time and variable.
pub fn normalize(model: &Model, log: &TraceLog, vars: &[VarId]) -> TraceLog {
    let mut cur: BTreeMap<VarId, i64> = vars
        .iter()
        .map(|&v| (v, model.variables[v].initial))
        .collect();
    let mut by_time: BTreeMap<i64, BTreeMap<VarId, i64>> = BTreeMap::new();
    for r in &log.records {
        if cur.contains_key(&r.var) {
            by_time.entry(r.time).or_default().insert(r.var, r.value);
        }
    }
    let mut out = TraceLog::default();
    for (t, vals) in by_time {
        for (v, x) in vals {
            if cur[&v] != x {
                cur.insert(v, x);
                out.records.push(LogRecord {
                    time: t,
                    var: v,
                    value: x,
                });
            }
        }
    }
    out
}

/// Strict conformance: identical end-of-instant values of inputs and outputs at identical time stamps.
pub fn check_strict(model: &Model, expected: &[Valuation], observed: &TraceLog) -> Verdict {
    let exp = project_log(model, expected, &model.observables());
    let mut v = check_strict_log(model, &exp, observed);
    if let Some(f) = &mut v.failure {
        f.step = expected.iter().position(|x| x.time(model) >= f.time);
    }
    v
}

/// Strict conformance between two logs of inputs and outputs.
pub fn check_strict_log(model: &Model, expected: &TraceLog, observed: &TraceLog) -> Verdict {
    let vars = model.observables();
    let exp = normalize(model, expected, &vars);
    let obs = normalize(model, observed, &vars);
    let n = exp.records.len().max(obs.records.len());
    for i in 0..n {
        let (a, b) = (exp.records.get(i), obs.records.get(i));
        if a == b {
            continue;
        }
        let (time, var) = match (a, b) {
            (Some(a), Some(b)) if (a.time, a.var) <= (b.time, b.var) => (a.time, a.var),
            (Some(_), Some(b)) => (b.time, b.var),
            (Some(a), None) => (a.time, a.var),
            (None, Some(b)) => (b.time, b.var),
            (None, None) => unreachable!(),
        };
        let init = model.variables[var].initial;
        let expected_v = exp.value_at(var, time).unwrap_or(init);
        let observed_v = obs.value_at(var, time).unwrap_or(init);
        let message = if expected_v == observed_v {
            "change observed at a different time".to_string()
        } else {
            format!("expected {expected_v}, observed {observed_v}")
        };
        return Verdict {
            failure: Some(Failure {
                var: model.variables[var].name.clone(),
                time,
                step: None,
                state: None,
                expected: Some(expected_v),
                observed: Some(observed_v),
                message,
            }),
        };
    }
    Verdict::pass()
}

/// Model extended with one checker and one shadow variable per output.
#[derive(Clone, Debug)]
pub struct OracleModel {
    pub model: Model,
    pub outputs: Vec<VarId>,
    pub tolerances: Vec<Tolerance>,
}

pub fn build_oracle(model: &Model, tolerances: &ToleranceSpec) -> Result<OracleModel, OracleError> {
    let outputs = model.outputs();
    let mut tols = Vec::new();
    for &y in &outputs {
        let t = tolerances
            .outputs
            .get(&y)
            .ok_or_else(|| OracleError::MissingTolerance(model.variables[y].name.clone()))?;
        tols.push(t.clone());
    }
    Ok(OracleModel {
        model: model.clone(),
        outputs,
        tolerances: tols,
    })
}

/// Zero-time steps allowed per instant before the run is reported as divergent.
const MAX_MICRO_STEPS: usize = 1000;

struct Run<'a> {
    o: &'a OracleModel,
    val: Valuation,
    shadow: Vec<i64>,
    checkers: Vec<CheckerState>,
    /// Outputs each blocked machine waits for, with the states to restart on release.
    blocked: Vec<Option<(Vec<usize>, Vec<usize>)>>,
}

impl Run<'_> {
    fn fail(&self, k: usize, t: i64, state: CheckerState, message: &str) -> Verdict {
        let y = self.o.outputs[k];
        Verdict {
            failure: Some(Failure {
                var: self.o.model.variables[y].name.clone(),
                time: t,
                step: None,
                state: Some(state),
                expected: Some(self.val.var(y)),
                observed: Some(self.shadow[y]),
                message: message.to_string(),
            }),
        }
    }

    fn agrees(&self, k: usize) -> bool {
        let y = self.o.outputs[k];
        self.o.tolerances[k].within(self.shadow[y], self.val.var(y))
    }

    fn deadlines(&self, t: i64) -> Option<Verdict> {
        for (k, c) in self.checkers.iter().enumerate() {
            match *c {
                CheckerState::S2 { deadline } if deadline < t => {
                    return Some(self.fail(
                        k,
                        deadline + 1,
                        *c,
                        "expected output change not observed in time",
                    ))
                }
                CheckerState::S3 { deadline } if deadline < t => {
                    return Some(self.fail(
                        k,
                        deadline + 1,
                        *c,
                        "observed output change not matched by the model",
                    ))
                }
                _ => {}
            }
        }
        None
    }

    /// Zero-time model steps at `t` until no unblocked machine fires.
    fn settle(
        &mut self,
        t: i64,
        inputs: &[(VarId, i64)],
        expected_change: &mut [Option<bool>],
    ) -> Result<(), OracleError> {
        let m = &self.o.model;
        let mut pending = inputs.to_vec();
        for i in 0..MAX_MICRO_STEPS {
            let ctl = StepControl {
                frozen: self.blocked.iter().map(|b| b.is_some()).collect(),
                shadow: Some(self.shadow.clone()),
            };
            let r = step_with(m, &self.val, &pending, t, &ctl)?;
            pending.clear();
            let pre = std::mem::replace(&mut self.val, r.post);
            if r.fired.iter().all(|f| f.is_none()) {
                // The first step only moves time and inputs into the pre-state.
                if i == 0 {
                    continue;
                }
                return Ok(());
            }
            for (mi, f) in r.fired.iter().enumerate() {
                let Some(tid) = *f else { continue };
                let tr = &m.transitions[tid];
                let mut waits = Vec::new();
                for a in &tr.actions {
                    let Some(k) = self.o.outputs.iter().position(|&y| y == a.var) else {
                        continue;
                    };
                    if self.val.var(a.var) == pre.var(a.var) && !matches!(a.value, Expr::Undef(..))
                    {
                        continue;
                    }
                    let undef = matches!(a.value, Expr::Undef(..));
                    expected_change[k] = Some(undef);
                    if let Expr::Undef(d, _) = a.value {
                        self.checkers[k] = CheckerState::Undef { until: t + d };
                    } else if !self.agrees(k) {
                        waits.push(k);
                    }
                }
                if !waits.is_empty() {
                    let entered = if tr.target.is_some() {
                        m.entered_states(tid)
                    } else {
                        Vec::new()
                    };
                    self.blocked[mi] = Some((waits, entered));
                }
            }
        }
        Err(OracleError::Divergent(t))
    }

    fn update_checkers(
        &mut self,
        t: i64,
        expected_change: &[Option<bool>],
        observed_change: &[bool],
    ) -> Option<Verdict> {
        for k in 0..self.checkers.len() {
            let tol = &self.o.tolerances[k];
            let st = self.checkers[k];
            if let CheckerState::Undef { until } = st {
                if t < until {
                    continue;
                }
                self.checkers[k] = if self.agrees(k) {
                    CheckerState::S0
                } else {
                    CheckerState::S2 {
                        deadline: until + tol.dlate,
                    }
                };
                continue;
            }
            if self.agrees(k) {
                self.checkers[k] = CheckerState::S0;
                continue;
            }
            let exp = expected_change[k].is_some();
            self.checkers[k] = match st {
                CheckerState::S0 if exp => CheckerState::S2 {
                    deadline: t + tol.dlate,
                },
                CheckerState::S0 if observed_change[k] => CheckerState::S3 {
                    deadline: t + tol.dearly,
                },
                CheckerState::S2 { .. } if exp => {
                    return Some(self.fail(
                        k,
                        t,
                        st,
                        "expected output changed again before the observation caught up",
                    ))
                }
                CheckerState::S3 { .. } if exp => CheckerState::S2 {
                    deadline: t + tol.dlate,
                },
                other => other,
            };
        }
        None
    }

    /// Releases blocked machines whose outputs caught up. True if any was released.
    fn release(&mut self, t: i64) -> bool {
        let mut any = false;
        for mi in 0..self.blocked.len() {
            let Some((waits, entered)) = &self.blocked[mi] else {
                continue;
            };
            if waits
                .iter()
                .all(|&k| self.agrees(k) || matches!(self.checkers[k], CheckerState::Error))
            {
                for &s in entered {
                    let slot = timer_slot(&self.o.model, s);
                    self.val.0[slot] = t;
                }
                self.blocked[mi] = None;
                any = true;
            }
        }
        any
    }
}

/// Tolerant conformance of an observed log up to `horizon` (ms).
pub fn check_tolerant(
    oracle: &OracleModel,
    observed: &TraceLog,
    horizon: i64,
) -> Result<Verdict, OracleError> {
    let m = &oracle.model;
    let mut records = observed.records.clone();
    records.sort_by_key(|r| r.time);
    let mut run = Run {
        o: oracle,
        val: Valuation::initial(m),
        shadow: m.variables.iter().map(|v| v.initial).collect(),
        checkers: vec![CheckerState::S0; oracle.outputs.len()],
        blocked: vec![None; m.machines.len()],
    };
    let mut next_rec = 0;
    let mut t = 0;
    loop {
        if let Some(v) = run.deadlines(t) {
            return Ok(v);
        }
        let mut inputs: Vec<(VarId, i64)> = Vec::new();
        let mut observed_change = vec![false; oracle.outputs.len()];
        while next_rec < records.len() && records[next_rec].time <= t {
            let r = records[next_rec].clone();
            next_rec += 1;
            if let Some(k) = oracle.outputs.iter().position(|&y| y == r.var) {
                if run.shadow[r.var] != r.value {
                    observed_change[k] = true;
                }
                run.shadow[r.var] = r.value;
            } else if m.inputs().contains(&r.var) {
                inputs.retain(|(v, _)| *v != r.var);
                inputs.push((r.var, r.value));
            }
        }
        let mut expected_change: Vec<Option<bool>> = vec![None; oracle.outputs.len()];
        run.settle(t, &inputs, &mut expected_change)?;
        loop {
            if let Some(v) = run.update_checkers(t, &expected_change, &observed_change) {
                return Ok(v);
            }
            if !run.release(t) {
                break;
            }
            expected_change.iter_mut().for_each(|e| *e = None);
            observed_change.iter_mut().for_each(|e| *e = false);
            run.settle(t, &[], &mut expected_change)?;
        }

        let mut next = i64::MAX;
        if let Some(r) = records.get(next_rec) {
            next = next.min(r.time);
        }
        if let Some(e) = next_guard_event(m, &run.val) {
            if e > t {
                next = next.min(e);
            }
        }
        for c in &run.checkers {
            match *c {
                CheckerState::S2 { deadline } | CheckerState::S3 { deadline } => {
                    next = next.min(deadline + 1)
                }
                CheckerState::Undef { until } => next = next.min(until),
                _ => {}
            }
        }
        if next == i64::MAX || next > horizon {
            return Ok(run.deadlines(horizon + 1).unwrap_or_else(Verdict::pass));
        }
        t = next.max(t + 1);
    }
}
