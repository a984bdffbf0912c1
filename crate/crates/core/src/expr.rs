//! State formulas and data expressions shared by guards, actions and LTL atoms.

use std::fmt;

pub type VarId = usize;
pub type StateId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn apply(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    /// Operator with swapped operands: `a op b` iff `b op.swap() a`.
    pub fn swap(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArithOp {
    Add,
    Sub,
    Min,
    Max,
}

impl ArithOp {
    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            ArithOp::Add => a.saturating_add(b),
            ArithOp::Sub => a.saturating_sub(b),
            ArithOp::Min => a.min(b),
            ArithOp::Max => a.max(b),
        }
    }
}

/// Expression over one valuation. Booleans evaluate to 0/1.
///
/// `Name` only survives parsing when an identifier could not be bound; a
/// validated model contains no `Name` nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Bool(bool),
    Int(i64),
    Name(String),
    Var(VarId),
    /// State-activity atom: true iff the state or one of its descendants is active.
    InState(StateId),
    /// Model time minus the entry time of the state (`t̂ - t_S`).
    Elapsed(StateId),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    /// `undef(duration, settle)`: only legal as the right-hand side of an output assignment.
    Undef(i64, Box<Expr>),
}

/// Read access to a valuation, as seen by expression evaluation.
pub trait Env {
    fn var(&self, v: VarId) -> i64;
    fn active(&self, s: StateId) -> bool;
    fn elapsed(&self, s: StateId) -> i64;
}

/// Name lookup for printing.
pub trait Names {
    fn var_name(&self, v: VarId) -> &str;
    fn state_name(&self, s: StateId) -> &str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Type {
    Bool,
    Int,
}

impl Expr {
    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> Expr {
        Expr::Cmp(op, Box::new(a), Box::new(b))
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    /// Conjunction with flattening and constant folding.
    pub fn and_all(items: impl IntoIterator<Item = Expr>) -> Expr {
        let mut out = Vec::new();
        for e in items {
            match e {
                Expr::Bool(true) => {}
                Expr::Bool(false) => return Expr::Bool(false),
                Expr::And(inner) => {
                    for i in inner {
                        if !out.contains(&i) {
                            out.push(i);
                        }
                    }
                }
                other => {
                    if !out.contains(&other) {
                        out.push(other);
                    }
                }
            }
        }
        match out.len() {
            0 => Expr::Bool(true),
            1 => out.pop().unwrap(),
            _ => Expr::And(out),
        }
    }

    pub fn or_all(items: impl IntoIterator<Item = Expr>) -> Expr {
        let mut out = Vec::new();
        for e in items {
            match e {
                Expr::Bool(false) => {}
                Expr::Bool(true) => return Expr::Bool(true),
                Expr::Or(inner) => {
                    for i in inner {
                        if !out.contains(&i) {
                            out.push(i);
                        }
                    }
                }
                other => {
                    if !out.contains(&other) {
                        out.push(other);
                    }
                }
            }
        }
        match out.len() {
            0 => Expr::Bool(false),
            1 => out.pop().unwrap(),
            _ => Expr::Or(out),
        }
    }

    pub fn eval(&self, env: &impl Env) -> i64 {
        match self {
            Expr::Bool(b) => *b as i64,
            Expr::Int(i) => *i,
            Expr::Name(n) => panic!("unbound identifier `{n}` reached evaluation"),
            Expr::Var(v) => env.var(*v),
            Expr::InState(s) => env.active(*s) as i64,
            Expr::Elapsed(s) => env.elapsed(*s),
            Expr::Not(e) => (e.eval(env) == 0) as i64,
            Expr::And(es) => es.iter().all(|e| e.eval(env) != 0) as i64,
            Expr::Or(es) => es.iter().any(|e| e.eval(env) != 0) as i64,
            Expr::Cmp(op, a, b) => op.apply(a.eval(env), b.eval(env)) as i64,
            Expr::Arith(op, a, b) => op.apply(a.eval(env), b.eval(env)),
            Expr::Undef(_, settle) => settle.eval(env),
        }
    }

    pub fn holds(&self, env: &impl Env) -> bool {
        self.eval(env) != 0
    }

    /// Logical negation pushed down to atoms.
    pub fn negate(&self) -> Expr {
        match self {
            Expr::Bool(b) => Expr::Bool(!b),
            Expr::Not(e) => (**e).clone(),
            Expr::And(es) => Expr::or_all(es.iter().map(Expr::negate)),
            Expr::Or(es) => Expr::and_all(es.iter().map(Expr::negate)),
            Expr::Cmp(op, a, b) => Expr::Cmp(op.negate(), a.clone(), b.clone()),
            other => Expr::not(other.clone()),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Not(e) | Expr::Undef(_, e) => e.visit(f),
            Expr::And(es) | Expr::Or(es) => es.iter().for_each(|e| e.visit(f)),
            Expr::Cmp(_, a, b) | Expr::Arith(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    pub fn map_leaves(&self, f: &impl Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(r) = f(self) {
            return r;
        }
        match self {
            Expr::Not(e) => Expr::not(e.map_leaves(f)),
            Expr::Undef(d, e) => Expr::Undef(*d, Box::new(e.map_leaves(f))),
            Expr::And(es) => Expr::And(es.iter().map(|e| e.map_leaves(f)).collect()),
            Expr::Or(es) => Expr::Or(es.iter().map(|e| e.map_leaves(f)).collect()),
            Expr::Cmp(op, a, b) => Expr::cmp(*op, a.map_leaves(f), b.map_leaves(f)),
            Expr::Arith(op, a, b) => {
                Expr::Arith(*op, Box::new(a.map_leaves(f)), Box::new(b.map_leaves(f)))
            }
            other => other.clone(),
        }
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
        });
        out
    }

    /// States referenced by activity atoms.
    pub fn states(&self) -> Vec<StateId> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::InState(s) = e {
                if !out.contains(s) {
                    out.push(*s);
                }
            }
        });
        out
    }

    /// States whose timers are referenced, with every constant the timer is compared against.
    pub fn timer_constants(&self) -> Vec<(StateId, i64)> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Cmp(_, a, b) = e {
                match (&**a, &**b) {
                    (Expr::Elapsed(s), Expr::Int(c)) | (Expr::Int(c), Expr::Elapsed(s)) => {
                        if !out.contains(&(*s, *c)) {
                            out.push((*s, *c));
                        }
                    }
                    _ => {}
                }
            }
        });
        out
    }

    pub fn timers(&self) -> Vec<StateId> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Elapsed(s) = e {
                if !out.contains(s) {
                    out.push(*s);
                }
            }
        });
        out
    }

    pub fn unbound_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Name(n) = e {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        });
        out
    }

    /// Atomic conditions in the boolean structure (MC/DC conditions), in first-occurrence order.
    pub fn conditions(&self) -> Vec<Expr> {
        fn walk(e: &Expr, out: &mut Vec<Expr>) {
            match e {
                Expr::And(es) | Expr::Or(es) => es.iter().for_each(|x| walk(x, out)),
                Expr::Not(x) => walk(x, out),
                Expr::Bool(_) => {}
                atom => {
                    if !out.contains(atom) {
                        out.push(atom.clone());
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Evaluate the boolean structure with conditions replaced by the given truth values.
    pub fn eval_conditions(&self, conds: &[Expr], values: &[bool]) -> bool {
        match self {
            Expr::Bool(b) => *b,
            Expr::And(es) => es.iter().all(|e| e.eval_conditions(conds, values)),
            Expr::Or(es) => es.iter().any(|e| e.eval_conditions(conds, values)),
            Expr::Not(e) => !e.eval_conditions(conds, values),
            atom => {
                let i = conds
                    .iter()
                    .position(|c| c == atom)
                    .expect("condition list must cover every atom");
                values[i]
            }
        }
    }

    /// Constants compared against a variable in this expression (`x op c` or `c op x`).
    pub fn comparison_constants(&self) -> Vec<(VarId, CmpOp, i64)> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Cmp(op, a, b) = e {
                match (&**a, &**b) {
                    (Expr::Var(v), Expr::Int(c)) => out.push((*v, *op, *c)),
                    (Expr::Int(c), Expr::Var(v)) => out.push((*v, op.swap(), *c)),
                    _ => {}
                }
            }
        });
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Or(_) => 1,
            Expr::And(_) => 2,
            Expr::Cmp(..) => 3,
            Expr::Arith(ArithOp::Add | ArithOp::Sub, ..) => 4,
            Expr::Not(_) => 5,
            _ => 6,
        }
    }

    pub fn display<'a, N: Names + ?Sized>(&'a self, names: &'a N) -> ExprDisplay<'a, N> {
        ExprDisplay { expr: self, names }
    }
}

pub struct ExprDisplay<'a, N: ?Sized> {
    expr: &'a Expr,
    names: &'a N,
}

impl<N: Names + ?Sized> ExprDisplay<'_, N> {
    fn child(&self, e: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = ExprDisplay {
            expr: e,
            names: self.names,
        };
        if e.precedence() < min_prec {
            write!(f, "({inner})")
        } else {
            write!(f, "{inner}")
        }
    }
}

impl<N: Names + ?Sized> fmt::Display for ExprDisplay<'_, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Name(n) => write!(f, "{n}"),
            Expr::Var(v) => write!(f, "{}", self.names.var_name(*v)),
            Expr::InState(s) => write!(f, "{}", self.names.state_name(*s)),
            Expr::Elapsed(s) => write!(f, "elapsed({})", self.names.state_name(*s)),
            Expr::Not(e) => {
                write!(f, "!")?;
                self.child(e, 5, f)
            }
            Expr::And(es) | Expr::Or(es) => {
                let (sep, prec) = if matches!(self.expr, Expr::And(_)) {
                    (" && ", 3)
                } else {
                    (" || ", 2)
                };
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    self.child(e, prec, f)?;
                }
                Ok(())
            }
            Expr::Cmp(op, a, b) => {
                self.child(a, 4, f)?;
                write!(f, " {} ", op.symbol())?;
                self.child(b, 4, f)
            }
            Expr::Arith(op @ (ArithOp::Add | ArithOp::Sub), a, b) => {
                self.child(a, 4, f)?;
                f.write_str(if *op == ArithOp::Add { " + " } else { " - " })?;
                self.child(b, 5, f)
            }
            Expr::Arith(op, a, b) => {
                let name = if *op == ArithOp::Min { "min" } else { "max" };
                write!(
                    f,
                    "{name}({}, {})",
                    a.display(self.names),
                    b.display(self.names)
                )
            }
            Expr::Undef(d, e) => write!(f, "undef({d}, {})", e.display(self.names)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Plain;
    impl Names for Plain {
        fn var_name(&self, v: VarId) -> &str {
            ["a", "b", "c"][v]
        }
        fn state_name(&self, _: StateId) -> &str {
            "S"
        }
    }

    #[test]
    fn negate_pushes_to_atoms() {
        let e = Expr::and_all([
            Expr::Var(0),
            Expr::cmp(CmpOp::Lt, Expr::Var(1), Expr::Int(3)),
        ]);
        let n = e.negate();
        assert_eq!(n.display(&Plain).to_string(), "!a || b >= 3");
    }

    #[test]
    fn printing_parenthesizes_by_precedence() {
        let e = Expr::cmp(
            CmpOp::Ne,
            Expr::cmp(CmpOp::Eq, Expr::Var(0), Expr::Int(1)),
            Expr::Var(1),
        );
        assert_eq!(e.display(&Plain).to_string(), "(a == 1) != b");
        let o = Expr::and_all([Expr::or_all([Expr::Var(0), Expr::Var(1)]), Expr::Var(2)]);
        assert_eq!(o.display(&Plain).to_string(), "(a || b) && c");
    }

    #[test]
    fn conditions_are_deduplicated() {
        let a = Expr::Var(0);
        let b = Expr::Var(1);
        let e = Expr::or_all([a.clone(), Expr::and_all([a.clone(), b.clone()])]);
        assert_eq!(e.conditions(), vec![a, b]);
    }
}
