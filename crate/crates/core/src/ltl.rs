//! LTL over finite prefixes: normal forms, SafetyLTL, bounded expansion, trace evaluation.
//!
//! Semantics are those of bounded step evaluation on a finite trace `s0..sk`:
//! `G` ranges over the remaining positions, `X` is false at the last position,
//! and the right operand of `U` must hold somewhere inside the prefix.

use std::fmt;

use crate::expr::{Expr, Names, StateId, VarId};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ltl {
    Atom(Expr),
    Not(Box<Ltl>),
    And(Vec<Ltl>),
    Or(Vec<Ltl>),
    Next(Box<Ltl>),
    Globally(Box<Ltl>),
    Finally(Box<Ltl>),
    Until(Box<Ltl>, Box<Ltl>),
    WeakUntil(Box<Ltl>, Box<Ltl>),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LtlError {
    #[error("formula expansion exceeds the budget of {budget} atoms at bound {last}")]
    UnsupportedFormula { budget: usize, last: usize },
    #[error("disjunctive normal form has {count} disjuncts, more than the limit of {limit}")]
    DnfBudgetExceeded { count: usize, limit: usize },
}

pub const DNF_LIMIT: usize = 64;

impl Ltl {
    pub fn tt() -> Ltl {
        Ltl::Atom(Expr::Bool(true))
    }

    pub fn ff() -> Ltl {
        Ltl::Atom(Expr::Bool(false))
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Ltl::Atom(Expr::Bool(true)))
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Ltl::Atom(Expr::Bool(false)))
    }

    pub fn atom(e: Expr) -> Ltl {
        Ltl::Atom(e)
    }

    pub fn finally(x: Ltl) -> Ltl {
        Ltl::Finally(Box::new(x))
    }

    pub fn globally(x: Ltl) -> Ltl {
        Ltl::Globally(Box::new(x))
    }

    pub fn next(x: Ltl) -> Ltl {
        Ltl::Next(Box::new(x))
    }

    /// `¬X true`: holds exactly at the last position of a trace.
    pub fn last() -> Ltl {
        Ltl::Not(Box::new(Ltl::next(Ltl::tt())))
    }

    pub fn until(a: Ltl, b: Ltl) -> Ltl {
        Ltl::Until(Box::new(a), Box::new(b))
    }

    pub fn weak_until(a: Ltl, b: Ltl) -> Ltl {
        Ltl::WeakUntil(Box::new(a), Box::new(b))
    }

    pub fn negation(x: Ltl) -> Ltl {
        match x {
            Ltl::Atom(e) => Ltl::Atom(e.negate()),
            other => Ltl::Not(Box::new(other)),
        }
    }

    /// Canonical conjunction: nested conjunctions flattened, state-formula operands merged
    /// into one leading atom, the remaining operands sorted and deduplicated.
    pub fn and(items: impl IntoIterator<Item = Ltl>) -> Ltl {
        Self::junction(items, true)
    }

    pub fn or(items: impl IntoIterator<Item = Ltl>) -> Ltl {
        Self::junction(items, false)
    }

    fn junction(items: impl IntoIterator<Item = Ltl>, conj: bool) -> Ltl {
        let mut atoms = Vec::new();
        let mut rest = Vec::new();
        let mut stack: Vec<Ltl> = items.into_iter().collect();
        stack.reverse();
        while let Some(x) = stack.pop() {
            match x {
                Ltl::And(xs) if conj => stack.extend(xs.into_iter().rev()),
                Ltl::Or(xs) if !conj => stack.extend(xs.into_iter().rev()),
                Ltl::Atom(e) => atoms.push(e),
                other => rest.push(other),
            }
        }
        let merged = if conj {
            Expr::and_all(atoms)
        } else {
            Expr::or_all(atoms)
        };
        match merged {
            Expr::Bool(b) if b != conj => return Ltl::Atom(Expr::Bool(b)),
            _ => {}
        }
        rest.sort();
        rest.dedup();
        let mut out = Vec::new();
        if merged != Expr::Bool(conj) || rest.is_empty() {
            out.push(Ltl::Atom(merged));
        }
        out.extend(rest);
        if out.len() == 1 {
            out.pop().unwrap()
        } else if conj {
            Ltl::And(out)
        } else {
            Ltl::Or(out)
        }
    }

    pub fn visit_exprs(&self, f: &mut impl FnMut(&Expr)) {
        match self {
            Ltl::Atom(e) => f(e),
            Ltl::Not(x) | Ltl::Next(x) | Ltl::Globally(x) | Ltl::Finally(x) => x.visit_exprs(f),
            Ltl::And(xs) | Ltl::Or(xs) => xs.iter().for_each(|x| x.visit_exprs(f)),
            Ltl::Until(a, b) | Ltl::WeakUntil(a, b) => {
                a.visit_exprs(f);
                b.visit_exprs(f);
            }
        }
    }

    pub fn map_exprs(&self, f: &impl Fn(&Expr) -> Expr) -> Ltl {
        match self {
            Ltl::Atom(e) => Ltl::Atom(f(e)),
            Ltl::Not(x) => Ltl::Not(Box::new(x.map_exprs(f))),
            Ltl::Next(x) => Ltl::next(x.map_exprs(f)),
            Ltl::Globally(x) => Ltl::globally(x.map_exprs(f)),
            Ltl::Finally(x) => Ltl::finally(x.map_exprs(f)),
            Ltl::And(xs) => Ltl::And(xs.iter().map(|x| x.map_exprs(f)).collect()),
            Ltl::Or(xs) => Ltl::Or(xs.iter().map(|x| x.map_exprs(f)).collect()),
            Ltl::Until(a, b) => Ltl::until(a.map_exprs(f), b.map_exprs(f)),
            Ltl::WeakUntil(a, b) => Ltl::weak_until(a.map_exprs(f), b.map_exprs(f)),
        }
    }

    pub fn unbound_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_exprs(&mut |e| {
            for n in e.unbound_names() {
                if !out.contains(&n) {
                    out.push(n);
                }
            }
        });
        out
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.visit_exprs(&mut |e| {
            for v in e.vars() {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        });
        out
    }

    pub fn timer_constants(&self) -> Vec<(StateId, i64)> {
        let mut out = Vec::new();
        self.visit_exprs(&mut |e| {
            for tc in e.timer_constants() {
                if !out.contains(&tc) {
                    out.push(tc);
                }
            }
        });
        out
    }

    pub fn timers(&self) -> Vec<StateId> {
        let mut out = Vec::new();
        self.visit_exprs(&mut |e| {
            for s in e.timers() {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        });
        out
    }

    /// `Some(ψ)` if the formula is `F ψ` for a state formula ψ.
    pub fn eventually_state(&self) -> Option<&Expr> {
        match self {
            Ltl::Finally(x) => match &**x {
                Ltl::Atom(e) => Some(e),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn display<'a, N: Names + ?Sized>(&'a self, names: &'a N) -> LtlDisplay<'a, N> {
        LtlDisplay { f: self, names }
    }

    fn precedence(&self) -> u8 {
        match self {
            Ltl::Next(_) | Ltl::Globally(_) | Ltl::Finally(_) => 0,
            Ltl::Until(..) | Ltl::WeakUntil(..) => 2,
            Ltl::Or(_) => 3,
            Ltl::And(_) => 4,
            Ltl::Not(_) => 5,
            Ltl::Atom(e) => match e {
                Expr::Or(_) => 3,
                Expr::And(_) => 4,
                Expr::Not(_) => 5,
                _ => 6,
            },
        }
    }
}

pub struct LtlDisplay<'a, N: ?Sized> {
    f: &'a Ltl,
    names: &'a N,
}

impl<N: Names + ?Sized> LtlDisplay<'_, N> {
    fn child(&self, x: &Ltl, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = LtlDisplay {
            f: x,
            names: self.names,
        };
        if x.precedence() < min {
            write!(f, "({d})")
        } else {
            write!(f, "{d}")
        }
    }
}

impl<N: Names + ?Sized> fmt::Display for LtlDisplay<'_, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.f {
            Ltl::Atom(e) => write!(f, "{}", e.display(self.names)),
            Ltl::Not(x) => {
                f.write_str("!")?;
                self.child(x, 5, f)
            }
            Ltl::And(xs) | Ltl::Or(xs) => {
                let (sep, min) = if matches!(self.f, Ltl::And(_)) {
                    (" && ", 5)
                } else {
                    (" || ", 4)
                };
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    self.child(x, min, f)?;
                }
                Ok(())
            }
            Ltl::Next(x) | Ltl::Globally(x) | Ltl::Finally(x) => {
                let op = match self.f {
                    Ltl::Next(_) => "X",
                    Ltl::Globally(_) => "G",
                    _ => "F",
                };
                write!(f, "{op} ")?;
                self.child(x, 6, f)
            }
            Ltl::Until(a, b) | Ltl::WeakUntil(a, b) => {
                let op = if matches!(self.f, Ltl::Until(..)) {
                    "U"
                } else {
                    "W"
                };
                self.child(a, 3, f)?;
                write!(f, " {op} ")?;
                self.child(b, 2, f)
            }
        }
    }
}

/// Negation normal form. Negated atoms become negated state formulas. Since `X` is
/// strong, `¬X φ` becomes `last ∨ X ¬φ`, with `last` kept as the literal `¬X true`.
pub fn nnf(f: &Ltl) -> Ltl {
    match f {
        Ltl::Atom(e) => Ltl::Atom(e.clone()),
        Ltl::Not(x) => neg(x),
        Ltl::And(xs) => Ltl::and(xs.iter().map(nnf)),
        Ltl::Or(xs) => Ltl::or(xs.iter().map(nnf)),
        Ltl::Next(x) => Ltl::next(nnf(x)),
        Ltl::Globally(x) => Ltl::globally(nnf(x)),
        Ltl::Finally(x) => Ltl::finally(nnf(x)),
        Ltl::Until(a, b) => Ltl::until(nnf(a), nnf(b)),
        Ltl::WeakUntil(a, b) => Ltl::weak_until(nnf(a), nnf(b)),
    }
}

fn neg(f: &Ltl) -> Ltl {
    match f {
        Ltl::Atom(e) => Ltl::Atom(e.negate()),
        Ltl::Not(x) => nnf(x),
        Ltl::And(xs) => Ltl::or(xs.iter().map(neg)),
        Ltl::Or(xs) => Ltl::and(xs.iter().map(neg)),
        Ltl::Next(x) => match neg(x) {
            n if n.is_false() => Ltl::last(),
            n => Ltl::or([Ltl::last(), Ltl::next(n)]),
        },
        Ltl::Globally(x) => Ltl::finally(neg(x)),
        Ltl::Finally(x) => Ltl::globally(neg(x)),
        Ltl::Until(a, b) => Ltl::weak_until(neg(b), Ltl::and([neg(a), neg(b)])),
        Ltl::WeakUntil(a, b) => Ltl::until(neg(b), Ltl::and([neg(a), neg(b)])),
    }
}

/// Syntactic SafetyLTL check on a formula in negation normal form.
pub fn is_safety_ltl(f: &Ltl) -> bool {
    match f {
        Ltl::Atom(_) => true,
        Ltl::Not(x) => matches!(**x, Ltl::Atom(_)) || **x == Ltl::next(Ltl::tt()),
        Ltl::And(xs) | Ltl::Or(xs) => xs.iter().all(is_safety_ltl),
        Ltl::Next(x) | Ltl::Globally(x) => is_safety_ltl(x),
        Ltl::WeakUntil(a, b) => is_safety_ltl(a) && is_safety_ltl(b),
        Ltl::Finally(_) | Ltl::Until(..) => false,
    }
}

/// Disjuncts of the negation normal form, with `F` pushed over `∨`.
pub fn dnf(f: &Ltl) -> Result<Vec<Ltl>, LtlError> {
    fn disj(f: Ltl, out: &mut Vec<Ltl>) {
        match f {
            Ltl::Or(xs) => xs.into_iter().for_each(|x| disj(x, out)),
            Ltl::Atom(Expr::Or(es)) => es.into_iter().for_each(|e| disj(Ltl::Atom(e), out)),
            Ltl::Finally(x) => {
                let mut inner = Vec::new();
                disj(*x, &mut inner);
                out.extend(inner.into_iter().map(Ltl::finally));
            }
            other => out.push(other),
        }
    }
    let mut out = Vec::new();
    disj(nnf(f), &mut out);
    let mut uniq = Vec::new();
    for d in out {
        if !uniq.contains(&d) {
            uniq.push(d);
        }
    }
    if uniq.len() > DNF_LIMIT {
        return Err(LtlError::DnfBudgetExceeded {
            count: uniq.len(),
            limit: DNF_LIMIT,
        });
    }
    Ok(uniq)
}

/// Truth of state formulas at trace positions.
pub trait TraceView {
    /// Number of states; must be at least one.
    fn len(&self) -> usize;
    fn holds(&self, pos: usize, e: &Expr) -> bool;
}

/// Direct recursive evaluation of the bounded semantics on the whole trace.
pub fn eval_on_trace(f: &Ltl, trace: &impl TraceView) -> bool {
    assert!(trace.len() > 0, "trace must contain at least one state");
    eval_at(f, trace, 0)
}

fn eval_at(f: &Ltl, t: &impl TraceView, i: usize) -> bool {
    let k = t.len() - 1;
    match f {
        Ltl::Atom(e) => t.holds(i, e),
        Ltl::Not(x) => !eval_at(x, t, i),
        Ltl::And(xs) => xs.iter().all(|x| eval_at(x, t, i)),
        Ltl::Or(xs) => xs.iter().any(|x| eval_at(x, t, i)),
        Ltl::Next(x) => i < k && eval_at(x, t, i + 1),
        Ltl::Globally(x) => (i..=k).all(|j| eval_at(x, t, j)),
        Ltl::Finally(x) => (i..=k).any(|j| eval_at(x, t, j)),
        Ltl::Until(a, b) => until_at(a, b, t, i),
        Ltl::WeakUntil(a, b) => until_at(a, b, t, i) || (i..=k).all(|j| eval_at(a, t, j)),
    }
}

fn until_at(a: &Ltl, b: &Ltl, t: &impl TraceView, i: usize) -> bool {
    let k = t.len() - 1;
    for j in i..=k {
        if eval_at(b, t, j) {
            return true;
        }
        if !eval_at(a, t, j) {
            return false;
        }
    }
    false
}

/// Formula obligation left for the next position after observing the current state.
pub fn progress(f: &Ltl, now: &impl Fn(&Expr) -> bool) -> Ltl {
    match f {
        Ltl::Atom(e) => Ltl::Atom(Expr::Bool(now(e))),
        Ltl::Not(x) => Ltl::negation(progress(x, now)),
        Ltl::And(xs) => Ltl::and(xs.iter().map(|x| progress(x, now))),
        Ltl::Or(xs) => Ltl::or(xs.iter().map(|x| progress(x, now))),
        Ltl::Next(x) => (**x).clone(),
        Ltl::Globally(x) => Ltl::and([progress(x, now), f.clone()]),
        Ltl::Finally(x) => Ltl::or([progress(x, now), f.clone()]),
        Ltl::Until(a, b) | Ltl::WeakUntil(a, b) => {
            Ltl::or([progress(b, now), Ltl::and([progress(a, now), f.clone()])])
        }
    }
}

/// Truth of the formula when the current state is the last one of the trace.
pub fn holds_at_end(f: &Ltl, now: &impl Fn(&Expr) -> bool) -> bool {
    match f {
        Ltl::Atom(e) => now(e),
        Ltl::Not(x) => !holds_at_end(x, now),
        Ltl::And(xs) => xs.iter().all(|x| holds_at_end(x, now)),
        Ltl::Or(xs) => xs.iter().any(|x| holds_at_end(x, now)),
        Ltl::Next(_) => false,
        Ltl::Globally(x) | Ltl::Finally(x) => holds_at_end(x, now),
        Ltl::Until(_, b) => holds_at_end(b, now),
        Ltl::WeakUntil(a, b) => holds_at_end(b, now) || holds_at_end(a, now),
    }
}

/// Propositional formula over (trace position, state formula) pairs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bounded {
    True,
    False,
    At(usize, Expr),
    And(Vec<Bounded>),
    Or(Vec<Bounded>),
}

impl Bounded {
    pub fn and(items: impl IntoIterator<Item = Bounded>) -> Bounded {
        let mut out = Vec::new();
        for b in items {
            match b {
                Bounded::True => {}
                Bounded::False => return Bounded::False,
                Bounded::And(xs) => out.extend(xs),
                other => out.push(other),
            }
        }
        out.dedup();
        match out.len() {
            0 => Bounded::True,
            1 => out.pop().unwrap(),
            _ => Bounded::And(out),
        }
    }

    pub fn or(items: impl IntoIterator<Item = Bounded>) -> Bounded {
        let mut out = Vec::new();
        for b in items {
            match b {
                Bounded::False => {}
                Bounded::True => return Bounded::True,
                Bounded::Or(xs) => out.extend(xs),
                other => out.push(other),
            }
        }
        out.dedup();
        match out.len() {
            0 => Bounded::False,
            1 => out.pop().unwrap(),
            _ => Bounded::Or(out),
        }
    }

    pub fn eval(&self, t: &impl TraceView) -> bool {
        match self {
            Bounded::True => true,
            Bounded::False => false,
            Bounded::At(i, e) => *i < t.len() && t.holds(*i, e),
            Bounded::And(xs) => xs.iter().all(|x| x.eval(t)),
            Bounded::Or(xs) => xs.iter().any(|x| x.eval(t)),
        }
    }

    /// Substitutes every atom at position `pos` with its truth value.
    pub fn assign(&self, pos: usize, now: &impl Fn(&Expr) -> bool) -> Bounded {
        match self {
            Bounded::At(i, e) if *i == pos => {
                if now(e) {
                    Bounded::True
                } else {
                    Bounded::False
                }
            }
            Bounded::And(xs) => Bounded::and(xs.iter().map(|x| x.assign(pos, now))),
            Bounded::Or(xs) => Bounded::or(xs.iter().map(|x| x.assign(pos, now))),
            other => other.clone(),
        }
    }

    pub fn max_position(&self) -> Option<usize> {
        match self {
            Bounded::At(i, _) => Some(*i),
            Bounded::And(xs) | Bounded::Or(xs) => xs.iter().filter_map(|x| x.max_position()).max(),
            _ => None,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Bounded::And(xs) | Bounded::Or(xs) => xs.iter().map(Bounded::size).sum(),
            _ => 1,
        }
    }
}

/// Start predicate of an instance: the declared initial valuation or an arbitrary state formula.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Start {
    Initial,
    Formula(Expr),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BmcInstance {
    /// Index of the last trace position (the trace has `last + 1` states).
    pub last: usize,
    pub start: Start,
    pub goal: Bounded,
    /// Position at which the top-level eventuality is discharged, when there is one.
    pub discharge: Option<usize>,
}

pub const DEFAULT_EXPANSION_BUDGET: usize = 1_000_000;

struct Expander {
    last: usize,
    budget: usize,
    used: usize,
}

impl Expander {
    fn tick(&mut self) -> Result<(), LtlError> {
        self.used += 1;
        if self.used > self.budget {
            Err(LtlError::UnsupportedFormula {
                budget: self.budget,
                last: self.last,
            })
        } else {
            Ok(())
        }
    }

    fn expand(&mut self, f: &Ltl, i: usize) -> Result<Bounded, LtlError> {
        let k = self.last;
        Ok(match f {
            Ltl::Atom(Expr::Bool(b)) => {
                if *b {
                    Bounded::True
                } else {
                    Bounded::False
                }
            }
            Ltl::Atom(e) => {
                self.tick()?;
                Bounded::At(i, e.clone())
            }
            Ltl::Not(x) => match &**x {
                Ltl::Atom(e) => self.expand(&Ltl::Atom(e.negate()), i)?,
                Ltl::Next(y) => {
                    if i < k {
                        self.expand(&Ltl::negation((**y).clone()), i + 1)?
                    } else {
                        Bounded::True
                    }
                }
                other => self.expand(&nnf(&Ltl::Not(Box::new(other.clone()))), i)?,
            },
            Ltl::And(xs) => {
                let mut parts = Vec::new();
                for x in xs {
                    parts.push(self.expand(x, i)?);
                }
                Bounded::and(parts)
            }
            Ltl::Or(xs) => {
                let mut parts = Vec::new();
                for x in xs {
                    parts.push(self.expand(x, i)?);
                }
                Bounded::or(parts)
            }
            Ltl::Next(x) => {
                if i < k {
                    self.expand(x, i + 1)?
                } else {
                    Bounded::False
                }
            }
            Ltl::Globally(x) => {
                let mut parts = Vec::new();
                for j in i..=k {
                    parts.push(self.expand(x, j)?);
                }
                Bounded::and(parts)
            }
            Ltl::Finally(x) => {
                let mut parts = Vec::new();
                for j in i..=k {
                    parts.push(self.expand(x, j)?);
                }
                Bounded::or(parts)
            }
            Ltl::Until(a, b) => {
                let mut parts = Vec::new();
                for j in i..=k {
                    parts.push(self.until_at(a, b, i, j)?);
                }
                Bounded::or(parts)
            }
            Ltl::WeakUntil(a, b) => {
                let mut parts = Vec::new();
                for j in i..=k {
                    parts.push(self.until_at(a, b, i, j)?);
                }
                let mut g = Vec::new();
                for j in i..=k {
                    g.push(self.expand(a, j)?);
                }
                parts.push(Bounded::and(g));
                Bounded::or(parts)
            }
        })
    }

    /// `a` holds at positions `i..j` and `b` at `j`.
    fn until_at(&mut self, a: &Ltl, b: &Ltl, i: usize, j: usize) -> Result<Bounded, LtlError> {
        let mut parts = Vec::new();
        for l in i..j {
            parts.push(self.expand(a, l)?);
        }
        parts.push(self.expand(b, j)?);
        Ok(Bounded::and(parts))
    }

    fn split(&mut self, f: &Ltl) -> Result<Vec<(Bounded, Option<usize>)>, LtlError> {
        let k = self.last;
        match f {
            Ltl::Finally(x) => {
                let mut out = Vec::new();
                for j in 0..=k {
                    out.push((self.expand(x, j)?, Some(j)));
                }
                Ok(out)
            }
            Ltl::Until(a, b) => {
                let mut out = Vec::new();
                for j in 0..=k {
                    out.push((self.until_at(a, b, 0, j)?, Some(j)));
                }
                Ok(out)
            }
            Ltl::WeakUntil(a, b) => {
                let mut out = Vec::new();
                for j in 0..=k {
                    out.push((self.until_at(a, b, 0, j)?, Some(j)));
                }
                out.push((self.expand(&Ltl::globally((**a).clone()), 0)?, None));
                Ok(out)
            }
            Ltl::Or(xs) => {
                let mut out = Vec::new();
                for x in xs {
                    out.extend(self.split(x)?);
                }
                Ok(out)
            }
            Ltl::And(xs) => {
                let ev: Vec<usize> = (0..xs.len())
                    .filter(|&i| matches!(xs[i], Ltl::Finally(_) | Ltl::Until(..)))
                    .collect();
                if ev.len() != 1 {
                    return Ok(vec![(self.expand(f, 0)?, None)]);
                }
                let mut fixed = Vec::new();
                for (i, x) in xs.iter().enumerate() {
                    if i != ev[0] {
                        fixed.push(self.expand(x, 0)?);
                    }
                }
                let common = Bounded::and(fixed);
                Ok(self
                    .split(&xs[ev[0]])?
                    .into_iter()
                    .map(|(g, d)| (Bounded::and([common.clone(), g]), d))
                    .collect())
            }
            other => Ok(vec![(self.expand(other, 0)?, None)]),
        }
    }
}

/// Bounded instances for traces with positions `0..=last`, in increasing discharge order.
///
/// A trace satisfies some instance iff it satisfies the formula.
pub fn expand_bmc(f: &Ltl, last: usize, start: Start) -> Result<Vec<BmcInstance>, LtlError> {
    expand_bmc_with_budget(f, last, start, DEFAULT_EXPANSION_BUDGET)
}

pub fn expand_bmc_with_budget(
    f: &Ltl,
    last: usize,
    start: Start,
    budget: usize,
) -> Result<Vec<BmcInstance>, LtlError> {
    let mut ex = Expander {
        last,
        budget,
        used: 0,
    };
    let mut parts = ex.split(f)?;
    parts.retain(|(g, _)| *g != Bounded::False);
    // Stable: keeps declaration order between equal discharge positions.
    parts.sort_by_key(|(_, d)| d.map_or(usize::MAX, |d| d));
    Ok(parts
        .into_iter()
        .map(|(goal, discharge)| BmcInstance {
            last,
            start: start.clone(),
            goal,
            discharge,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::CmpOp;

    struct Bits(Vec<[bool; 2]>);
    impl TraceView for Bits {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn holds(&self, pos: usize, e: &Expr) -> bool {
            struct E<'a>(&'a [bool; 2]);
            impl crate::expr::Env for E<'_> {
                fn var(&self, v: VarId) -> i64 {
                    self.0[v] as i64
                }
                fn active(&self, _: StateId) -> bool {
                    true
                }
                fn elapsed(&self, _: StateId) -> i64 {
                    0
                }
            }
            e.holds(&E(&self.0[pos]))
        }
    }

    fn p() -> Ltl {
        Ltl::Atom(Expr::Var(0))
    }
    fn q() -> Ltl {
        Ltl::Atom(Expr::Var(1))
    }

    #[test]
    fn next_is_false_at_the_end() {
        let t = Bits(vec![[true, true]]);
        assert!(!eval_on_trace(&Ltl::next(p()), &t));
    }

    #[test]
    fn nnf_dualities() {
        assert_eq!(
            nnf(&Ltl::Not(Box::new(Ltl::globally(p())))),
            Ltl::finally(Ltl::Atom(Expr::not(Expr::Var(0))))
        );
        let n = nnf(&Ltl::Not(Box::new(Ltl::and([p(), q()]))));
        assert_eq!(
            n,
            Ltl::Atom(Expr::Or(vec![
                Expr::not(Expr::Var(0)),
                Expr::not(Expr::Var(1))
            ]))
        );
    }

    #[test]
    fn finally_state_formula_gives_one_instance_per_position() {
        let f = Ltl::finally(Ltl::Atom(Expr::cmp(CmpOp::Eq, Expr::Var(0), Expr::Int(1))));
        let inst = expand_bmc(&f, 3, Start::Initial).unwrap();
        assert_eq!(inst.len(), 4);
        for (j, i) in inst.iter().enumerate() {
            assert_eq!(i.discharge, Some(j));
            assert_eq!(i.goal.max_position(), Some(j));
        }
    }

    #[test]
    fn safety_classification() {
        assert!(is_safety_ltl(&Ltl::weak_until(p(), q())));
        assert!(!is_safety_ltl(&Ltl::finally(p())));
    }

    #[test]
    fn budget_is_enforced() {
        let f = Ltl::globally(Ltl::finally(p()));
        assert!(matches!(
            expand_bmc_with_budget(&f, 50, Start::Initial, 100),
            Err(LtlError::UnsupportedFormula { .. })
        ));
    }
}
