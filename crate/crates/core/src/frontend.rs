//! Model DSL, LTL and trace-log parsers and printers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::expr::{ArithOp, CmpOp, Expr, StateId, VarId};
use crate::ltl::Ltl;
use crate::model::{
    Assignment, ControlState, Domain, ElementRef, Model, Requirement, Span, StateMachine,
    Transition, TransitionKind, VarKind, VariableDecl,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{span}: syntax error: {message}")]
    Syntax { span: Span, message: String },
    #[error("{span}: duplicate declaration of `{name}`")]
    Duplicate { span: Span, name: String },
    #[error("unknown name `{0}`")]
    UnknownName(String),
}

fn syntax<T>(span: Span, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError::Syntax {
        span,
        message: message.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: Span,
    start: usize,
    end: usize,
}

const SYMBOLS: &[&str] = &[
    "->", ":=", "..", "&&", "||", "==", "!=", "<=", ">=", "{", "}", "(", ")", ",", ":", "/", ".",
    "#", "!", "<", ">", "+", "-", "=", "@",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut line_start = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        let col = (i - line_start + 1) as u32;
        if c == b'\n' {
            line += 1;
            i += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident(text[start..i].to_string())
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            match text[start..i].parse() {
                Ok(v) => Tok::Int(v),
                Err(_) => {
                    return syntax(
                        Span {
                            line,
                            col,
                            len: (i - start) as u32,
                        },
                        "integer literal out of range",
                    )
                }
            }
        } else if c == b'"' {
            i += 1;
            let mut s = String::new();
            loop {
                match text[i..].chars().next() {
                    None | Some('\n') => {
                        return syntax(Span { line, col, len: 1 }, "unterminated string")
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = text[i + 1..].chars().next();
                        match esc {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            _ => {
                                return syntax(
                                    Span { line, col, len: 1 },
                                    "invalid escape in string",
                                )
                            }
                        }
                        i += 2;
                    }
                    Some(ch) => {
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            Tok::Str(s)
        } else if let Some(sym) = SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            i += sym.len();
            Tok::Sym(sym)
        } else {
            let ch = text[i..].chars().next().unwrap();
            return syntax(
                Span { line, col, len: 1 },
                format!("unexpected character `{ch}`"),
            );
        };
        out.push(Token {
            tok,
            span: Span {
                line,
                col,
                len: (i - start) as u32,
            },
            start,
            end: i,
        });
    }
    let col = (bytes.len() - line_start + 1) as u32;
    out.push(Token {
        tok: Tok::Eof,
        span: Span { line, col, len: 1 },
        start: bytes.len(),
        end: bytes.len(),
    });
    Ok(out)
}

const TEMPORAL: &[&str] = &["G", "F", "X"];

/// Parsed operand: a pure state formula or a temporal formula.
enum Syn {
    E(Expr),
    L(Ltl),
}

impl Syn {
    fn into_ltl(self) -> Ltl {
        match self {
            Syn::E(e) => Ltl::Atom(e),
            Syn::L(l) => l,
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<Token>,
    pos: usize,
    /// Names appearing in `elapsed(..)`/`after(..)`, resolved after the model is read.
    timer_names: Vec<String>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, ParseError> {
        Ok(Parser {
            text,
            toks: lex(text)?,
            pos: 0,
            timer_names: Vec::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(i) => format!("`{i}`"),
            Tok::Str(_) => "string".into(),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<Span, ParseError> {
        if self.is_sym(s) {
            Ok(self.bump().span)
        } else {
            syntax(
                self.span(),
                format!("expected `{s}`, found {}", self.describe()),
            )
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<Span, ParseError> {
        if self.is_kw(k) {
            Ok(self.bump().span)
        } else {
            syntax(
                self.span(),
                format!("expected `{k}`, found {}", self.describe()),
            )
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let sp = self.bump().span;
                Ok((s, sp))
            }
            _ => syntax(
                self.span(),
                format!("expected {what}, found {}", self.describe()),
            ),
        }
    }

    fn signed_int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => syntax(
                self.span(),
                format!("expected integer, found {}", self.describe()),
            ),
        }
    }

    /// Requirement identifiers such as `REQ-001`: adjacent tokens glued into one word.
    fn glued_word(&mut self) -> Result<(String, Span), ParseError> {
        let first = self.bump();
        if !matches!(first.tok, Tok::Ident(_) | Tok::Int(_)) {
            return syntax(first.span, "expected requirement identifier");
        }
        let mut end = first.end;
        while matches!(
            self.peek(),
            Tok::Ident(_) | Tok::Int(_) | Tok::Sym("-") | Tok::Sym(".")
        ) && self.toks[self.pos].start == end
        {
            end = self.bump().end;
        }
        let mut span = first.span;
        span.len = (end - first.start) as u32;
        Ok((self.text[first.start..end].to_string(), span))
    }

    // ---- formulas -------------------------------------------------------

    fn formula(&mut self) -> Result<Syn, ParseError> {
        if let Some(op) = self.temporal_prefix() {
            self.bump();
            let inner = self.formula()?.into_ltl();
            return Ok(Syn::L(match op {
                "G" => Ltl::globally(inner),
                "F" => Ltl::finally(inner),
                _ => Ltl::next(inner),
            }));
        }
        let lhs = self.until_level()?;
        if self.eat_sym("->") {
            let rhs = self.formula()?;
            return Ok(match (lhs, rhs) {
                (Syn::E(a), Syn::E(b)) => Syn::E(Expr::or_all([Expr::not(a), b])),
                (a, b) => Syn::L(Ltl::or([Ltl::Not(Box::new(a.into_ltl())), b.into_ltl()])),
            });
        }
        Ok(lhs)
    }

    fn temporal_prefix(&self) -> Option<&'static str> {
        match self.peek() {
            Tok::Ident(s) => TEMPORAL.iter().copied().find(|t| t == s),
            _ => None,
        }
    }

    fn until_level(&mut self) -> Result<Syn, ParseError> {
        let lhs = self.or_level()?;
        let weak = if self.is_kw("U") {
            false
        } else if self.is_kw("W") {
            true
        } else {
            return Ok(lhs);
        };
        self.bump();
        let rhs = if self.temporal_prefix().is_some() {
            self.formula()?
        } else {
            self.until_level()?
        };
        let (a, b) = (lhs.into_ltl(), rhs.into_ltl());
        Ok(Syn::L(if weak {
            Ltl::weak_until(a, b)
        } else {
            Ltl::until(a, b)
        }))
    }

    fn or_level(&mut self) -> Result<Syn, ParseError> {
        let mut items = vec![self.and_level()?];
        while self.eat_sym("||") {
            items.push(self.and_level()?);
        }
        Ok(combine(items, false))
    }

    fn and_level(&mut self) -> Result<Syn, ParseError> {
        let mut items = vec![self.unary()?];
        while self.eat_sym("&&") {
            items.push(self.unary()?);
        }
        Ok(combine(items, true))
    }

    fn unary(&mut self) -> Result<Syn, ParseError> {
        if self.eat_sym("!") {
            return Ok(match self.unary()? {
                Syn::E(e) => Syn::E(Expr::not(e)),
                Syn::L(l) => Syn::L(Ltl::Not(Box::new(l))),
            });
        }
        if self.temporal_prefix().is_some() {
            return self.formula();
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Syn, ParseError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Sym("==") | Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        let sp = self.bump().span;
        let rhs = self.additive()?;
        match (lhs, rhs) {
            (Syn::E(a), Syn::E(b)) => Ok(Syn::E(Expr::cmp(op, a, b))),
            _ => syntax(sp, "comparison operands must be state expressions"),
        }
    }

    fn additive(&mut self) -> Result<Syn, ParseError> {
        let mut lhs = self.primary()?;
        loop {
            let op = if self.is_sym("+") {
                ArithOp::Add
            } else if self.is_sym("-") && !matches!(self.peek_at(1), Tok::Sym(">")) {
                ArithOp::Sub
            } else {
                return Ok(lhs);
            };
            let sp = self.bump().span;
            let rhs = self.primary()?;
            lhs = match (lhs, rhs) {
                (Syn::E(a), Syn::E(b)) => Syn::E(Expr::Arith(op, Box::new(a), Box::new(b))),
                _ => return syntax(sp, "arithmetic operands must be state expressions"),
            };
        }
    }

    fn primary(&mut self) -> Result<Syn, ParseError> {
        let sp = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Syn::E(Expr::Int(v)))
            }
            Tok::Sym("-") => {
                self.bump();
                match self.peek().clone() {
                    Tok::Int(v) => {
                        self.bump();
                        Ok(Syn::E(Expr::Int(-v)))
                    }
                    _ => syntax(sp, "expected integer after `-`"),
                }
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.formula()?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if TEMPORAL.contains(&name.as_str()) {
                    return self.formula();
                }
                self.bump();
                match name.as_str() {
                    "true" => Ok(Syn::E(Expr::Bool(true))),
                    "false" => Ok(Syn::E(Expr::Bool(false))),
                    "U" | "W" => syntax(sp, format!("unexpected operator `{name}`")),
                    "after" | "elapsed" if self.is_sym("(") => {
                        self.bump();
                        let (state, _) = self.state_path()?;
                        let id = self.timer_id(state.last().unwrap().clone());
                        if name == "after" {
                            self.expect_sym(",")?;
                            let c = self.signed_int()?;
                            self.expect_sym(")")?;
                            Ok(Syn::E(Expr::cmp(
                                CmpOp::Ge,
                                Expr::Elapsed(id),
                                Expr::Int(c),
                            )))
                        } else {
                            self.expect_sym(")")?;
                            Ok(Syn::E(Expr::Elapsed(id)))
                        }
                    }
                    "min" | "max" if self.is_sym("(") => {
                        self.bump();
                        let a = self.expr()?;
                        self.expect_sym(",")?;
                        let b = self.expr()?;
                        self.expect_sym(")")?;
                        let op = if name == "min" {
                            ArithOp::Min
                        } else {
                            ArithOp::Max
                        };
                        Ok(Syn::E(Expr::Arith(op, Box::new(a), Box::new(b))))
                    }
                    _ => Ok(Syn::E(Expr::Name(name))),
                }
            }
            _ => syntax(
                sp,
                format!("expected expression, found {}", self.describe()),
            ),
        }
    }

    fn timer_id(&mut self, name: String) -> StateId {
        match self.timer_names.iter().position(|n| *n == name) {
            Some(i) => i,
            None => {
                self.timer_names.push(name);
                self.timer_names.len() - 1
            }
        }
    }

    /// Pure state expression (no temporal operators, no implication).
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let sp = self.span();
        match self.or_level()? {
            Syn::E(e) => Ok(e),
            Syn::L(_) => syntax(sp, "temporal operator in state expression"),
        }
    }

    fn state_path(&mut self) -> Result<(Vec<String>, Span), ParseError> {
        let (first, sp) = self.ident("state name")?;
        let mut path = vec![first];
        while self.is_sym(".") && matches!(self.peek_at(1), Tok::Ident(_)) {
            self.bump();
            path.push(self.ident("state name")?.0);
        }
        Ok((path, sp))
    }
}

fn combine(mut items: Vec<Syn>, conj: bool) -> Syn {
    if items.len() == 1 {
        return items.pop().unwrap();
    }
    if items.iter().all(|s| matches!(s, Syn::E(_))) {
        let es = items.into_iter().map(|s| match s {
            Syn::E(e) => e,
            Syn::L(_) => unreachable!(),
        });
        return Syn::E(if conj {
            Expr::and_all(es)
        } else {
            Expr::or_all(es)
        });
    }
    let ls = items.into_iter().map(Syn::into_ltl);
    Syn::L(if conj { Ltl::and(ls) } else { Ltl::or(ls) })
}

// ---- name resolution ------------------------------------------------------

struct Resolver<'m> {
    vars: &'m [VariableDecl],
    states: &'m [ControlState],
    timers: &'m [String],
}

impl Resolver<'_> {
    fn var(&self, n: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == n)
    }

    fn state(&self, n: &str) -> Option<StateId> {
        self.states.iter().position(|s| s.name == n)
    }

    fn enum_literal(&self, n: &str, hint: Option<VarId>) -> Option<i64> {
        let lookup = |v: &VariableDecl| match &v.domain {
            Domain::Enum(ls) => ls.iter().position(|l| l == n).map(|i| i as i64),
            _ => None,
        };
        if let Some(h) = hint {
            if let Some(i) = lookup(&self.vars[h]) {
                return Some(i);
            }
        }
        self.vars.iter().find_map(lookup)
    }

    fn resolve(&self, e: &Expr, hint: Option<VarId>) -> Expr {
        match e {
            Expr::Name(n) => {
                if let Some(v) = self.var(n) {
                    Expr::Var(v)
                } else if let Some(s) = self.state(n) {
                    Expr::InState(s)
                } else if let Some(i) = self.enum_literal(n, hint) {
                    Expr::Int(i)
                } else {
                    Expr::Name(n.clone())
                }
            }
            Expr::Elapsed(p) => {
                let n = &self.timers[*p];
                match self.state(n) {
                    Some(s) => Expr::Elapsed(s),
                    None => Expr::Name(n.clone()),
                }
            }
            Expr::Not(x) => Expr::not(self.resolve(x, None)),
            Expr::And(xs) => Expr::And(xs.iter().map(|x| self.resolve(x, None)).collect()),
            Expr::Or(xs) => Expr::Or(xs.iter().map(|x| self.resolve(x, None)).collect()),
            Expr::Cmp(op, a, b) => {
                let ra = self.resolve(a, None);
                let ha = match ra {
                    Expr::Var(v) => Some(v),
                    _ => None,
                };
                let rb = self.resolve(b, ha);
                let hb = match rb {
                    Expr::Var(v) => Some(v),
                    _ => None,
                };
                let ra = if hb.is_some() {
                    self.resolve(a, hb)
                } else {
                    ra
                };
                Expr::cmp(*op, ra, rb)
            }
            Expr::Arith(op, a, b) => Expr::Arith(
                *op,
                Box::new(self.resolve(a, None)),
                Box::new(self.resolve(b, None)),
            ),
            Expr::Undef(d, x) => Expr::Undef(*d, Box::new(self.resolve(x, hint))),
            other => other.clone(),
        }
    }

    fn resolve_ltl(&self, f: &Ltl) -> Ltl {
        f.map_exprs(&|e| self.resolve(e, None))
    }
}

// ---- model ----------------------------------------------------------------

struct RawTrans {
    source: StateId,
    target: Option<(Vec<String>, Span)>,
    guard: Expr,
    actions: Vec<(String, Span, Expr)>,
    span: Span,
}

enum RawRef {
    State(Vec<String>, Span),
    Trans {
        src: Vec<String>,
        tgt: Option<Vec<String>>,
        nth: usize,
        span: Span,
    },
}

struct RawReq {
    id: String,
    text: String,
    refs: Vec<RawRef>,
    constraint: Option<Ltl>,
    span: Span,
}

/// Parses a model in the DSL. The result is not validated.
pub fn parse_model(text: &str) -> Result<Model, ParseError> {
    let mut p = Parser::new(text)?;
    if !p.is_kw("model") {
        return syntax(p.span(), "expected model header");
    }
    p.bump();
    let (name, _) = p.ident("model name")?;
    p.expect_sym("{")?;

    let mut variables: Vec<VariableDecl> = Vec::new();
    let mut states: Vec<ControlState> = Vec::new();
    let mut machines: Vec<StateMachine> = Vec::new();
    let mut raw_trans: Vec<RawTrans> = Vec::new();
    let mut raw_reqs: Vec<RawReq> = Vec::new();
    let mut taken: BTreeMap<String, ()> = BTreeMap::new();

    let mut declare = |name: &str, span: Span| -> Result<(), ParseError> {
        if taken.insert(name.to_string(), ()).is_some() {
            Err(ParseError::Duplicate {
                span,
                name: name.to_string(),
            })
        } else {
            Ok(())
        }
    };

    loop {
        if p.eat_sym("}") {
            break;
        }
        let kind = match p.peek() {
            Tok::Ident(k) if k == "in" => Some(VarKind::Input),
            Tok::Ident(k) if k == "out" => Some(VarKind::Output),
            Tok::Ident(k) if k == "var" => Some(VarKind::Internal),
            _ => None,
        };
        if let Some(kind) = kind {
            if !machines.is_empty() || !raw_reqs.is_empty() {
                return syntax(p.span(), "variables must be declared before machines");
            }
            p.bump();
            let (vname, span) = p.ident("variable name")?;
            if TEMPORAL.contains(&vname.as_str()) || vname == "U" || vname == "W" {
                return syntax(span, format!("`{vname}` is reserved"));
            }
            declare(&vname, span)?;
            p.expect_sym(":")?;
            let domain = if p.eat_kw("bool") {
                Domain::Bool
            } else if p.eat_kw("int") {
                let lo = p.signed_int()?;
                p.expect_sym("..")?;
                let hi = p.signed_int()?;
                Domain::Int { lo, hi }
            } else if p.eat_kw("enum") {
                p.expect_sym("{")?;
                let mut lits = vec![p.ident("enumeration literal")?.0];
                while p.eat_sym(",") {
                    lits.push(p.ident("enumeration literal")?.0);
                }
                p.expect_sym("}")?;
                Domain::Enum(lits)
            } else {
                return syntax(p.span(), format!("expected type, found {}", p.describe()));
            };
            p.expect_kw("init")?;
            let isp = p.span();
            let initial = match p.peek().clone() {
                Tok::Ident(s) => {
                    p.bump();
                    match domain.parse_value(&s) {
                        Some(v) => v,
                        None if matches!(domain, Domain::Enum(_)) => {
                            return syntax(
                                isp,
                                format!("`{s}` is not a literal of this enumeration"),
                            )
                        }
                        None => return syntax(isp, format!("invalid initial value `{s}`")),
                    }
                }
                _ => p.signed_int()?,
            };
            variables.push(VariableDecl {
                name: vname,
                kind,
                domain,
                initial,
                span,
            });
        } else if p.is_kw("machine") {
            if !raw_reqs.is_empty() {
                return syntax(p.span(), "machines must be declared before requirements");
            }
            p.bump();
            let (mname, mspan) = p.ident("machine name")?;
            declare(&mname, mspan)?;
            let m = machines.len();
            machines.push(StateMachine {
                name: mname,
                roots: Vec::new(),
                transitions: Vec::new(),
                span: mspan,
            });
            p.expect_sym("{")?;
            while !p.eat_sym("}") {
                let s = parse_state(
                    &mut p,
                    m,
                    None,
                    0,
                    &mut states,
                    &mut raw_trans,
                    &mut declare,
                )?;
                machines[m].roots.push(s);
            }
        } else if p.is_kw("req") {
            let rspan = p.bump().span;
            let (id, _) = p.glued_word()?;
            if raw_reqs.iter().any(|r| r.id == id) {
                return Err(ParseError::Duplicate {
                    span: rspan,
                    name: id,
                });
            }
            let text = match p.peek().clone() {
                Tok::Str(s) => {
                    p.bump();
                    s
                }
                _ => return syntax(p.span(), "expected requirement text"),
            };
            let mut refs = Vec::new();
            if p.eat_kw("satisfies") {
                loop {
                    refs.push(parse_elemref(&mut p)?);
                    if !p.eat_sym(",") {
                        break;
                    }
                }
            }
            let constraint = if p.eat_kw("constraint") {
                Some(p.formula()?.into_ltl())
            } else {
                None
            };
            raw_reqs.push(RawReq {
                id,
                text,
                refs,
                constraint,
                span: rspan,
            });
        } else {
            return syntax(
                p.span(),
                format!("expected declaration or `}}`, found {}", p.describe()),
            );
        }
    }
    if !matches!(p.peek(), Tok::Eof) {
        return syntax(p.span(), "unexpected text after model");
    }

    let timers = std::mem::take(&mut p.timer_names);
    let res = Resolver {
        vars: &variables,
        states: &states,
        timers: &timers,
    };
    let find_state = |path: &[String], span: Span| -> Result<StateId, ParseError> {
        let last = path.last().unwrap();
        let Some(s) = res.state(last) else {
            return syntax(span, format!("unknown state `{}`", path.join(".")));
        };
        let chain = {
            let mut c = vec![s];
            let mut cur = states[s].parent;
            while let Some(x) = cur {
                c.push(x);
                cur = states[x].parent;
            }
            c
        };
        for (i, seg) in path.iter().rev().enumerate() {
            if chain.get(i).map(|&x| &states[x].name) != Some(seg) {
                return syntax(
                    span,
                    format!("`{}` is not a valid state path", path.join(".")),
                );
            }
        }
        Ok(s)
    };

    // Canonical order: within a machine, a state's transitions follow those of its children.
    let mut order: Vec<usize> = (0..raw_trans.len()).collect();
    let post = postorder_rank(&states);
    order.sort_by_key(|&i| {
        (
            states[raw_trans[i].source].machine,
            post[raw_trans[i].source],
        )
    });

    let mut transitions = Vec::new();
    for &i in &order {
        let rt = &raw_trans[i];
        let target = match &rt.target {
            Some((path, sp)) => Some(find_state(path, *sp)?),
            None => None,
        };
        let machine = states[rt.source].machine;
        if let Some(t) = target {
            if states[t].machine != machine {
                return syntax(rt.span, "transition target belongs to another machine");
            }
        }
        let mut actions = Vec::new();
        for (vname, _, value) in &rt.actions {
            let hint = res.var(vname);
            let var = match hint {
                Some(v) => v,
                None => {
                    return syntax(
                        rt.span,
                        format!("assignment to undeclared variable `{vname}`"),
                    )
                }
            };
            actions.push(Assignment {
                var,
                value: res.resolve(value, hint),
            });
        }
        machines[machine].transitions.push(transitions.len());
        transitions.push(Transition {
            machine,
            source: rt.source,
            target,
            kind: if target.is_some() {
                TransitionKind::External
            } else {
                TransitionKind::Activity
            },
            guard: res.resolve(&rt.guard, None),
            actions,
            span: rt.span,
        });
    }

    let mut model = Model {
        name,
        variables: variables.clone(),
        states: states.clone(),
        machines,
        transitions,
        requirements: Vec::new(),
    };
    for rr in raw_reqs {
        let mut satisfies = Vec::new();
        for r in &rr.refs {
            let el = match r {
                RawRef::State(path, sp) => ElementRef::State(find_state(path, *sp)?),
                RawRef::Trans {
                    src,
                    tgt,
                    nth,
                    span,
                } => {
                    let s = find_state(src, *span)?;
                    let t = match tgt {
                        Some(p) => Some(find_state(p, *span)?),
                        None => None,
                    };
                    let cands: Vec<usize> = (0..model.transitions.len())
                        .filter(|&i| {
                            model.transitions[i].source == s && model.transitions[i].target == t
                        })
                        .collect();
                    match cands.get(nth - 1) {
                        Some(&i) => ElementRef::Transition(i),
                        None => return syntax(*span, "reference to an unknown transition"),
                    }
                }
            };
            satisfies.push(el);
        }
        model.requirements.push(Requirement {
            id: rr.id,
            text: rr.text,
            satisfies,
            constraint: rr.constraint.as_ref().map(|c| res.resolve_ltl(c)),
            span: rr.span,
        });
    }
    Ok(model)
}

fn postorder_rank(states: &[ControlState]) -> Vec<usize> {
    let mut rank = vec![0; states.len()];
    let mut next = 0;
    fn walk(s: StateId, states: &[ControlState], rank: &mut [usize], next: &mut usize) {
        for &c in &states[s].children {
            walk(c, states, rank, next);
        }
        rank[s] = *next;
        *next += 1;
    }
    for s in 0..states.len() {
        if states[s].parent.is_none() {
            walk(s, states, &mut rank, &mut next);
        }
    }
    rank
}

fn parse_state(
    p: &mut Parser<'_>,
    machine: usize,
    parent: Option<StateId>,
    depth: usize,
    states: &mut Vec<ControlState>,
    trans: &mut Vec<RawTrans>,
    declare: &mut impl FnMut(&str, Span) -> Result<(), ParseError>,
) -> Result<StateId, ParseError> {
    p.expect_kw("state")?;
    let (name, span) = p.ident("state name")?;
    declare(&name, span)?;
    let initial = p.eat_kw("initial");
    let id = states.len();
    states.push(ControlState {
        name,
        machine,
        parent,
        children: Vec::new(),
        initial,
        depth,
        span,
    });
    p.expect_sym("{")?;
    loop {
        if p.eat_sym("}") {
            break;
        }
        if p.is_kw("state") {
            let c = parse_state(p, machine, Some(id), depth + 1, states, trans, declare)?;
            states[id].children.push(c);
        } else if p.is_kw("on") || p.is_kw("do") {
            let tspan = p.span();
            let activity = p.eat_kw("do");
            p.expect_kw("on")?;
            let guard = p.expr()?;
            let mut actions = Vec::new();
            if p.eat_sym("/") {
                loop {
                    let (v, vs) = p.ident("variable")?;
                    p.expect_sym(":=")?;
                    let value = if p.is_kw("undef") && matches!(p.peek_at(1), Tok::Sym("(")) {
                        p.bump();
                        p.bump();
                        let d = p.signed_int()?;
                        p.expect_sym(",")?;
                        let e = p.expr()?;
                        p.expect_sym(")")?;
                        Expr::Undef(d, Box::new(e))
                    } else {
                        p.expr()?
                    };
                    actions.push((v, vs, value));
                    if !p.eat_sym(",") {
                        break;
                    }
                }
            }
            let target = if activity {
                None
            } else {
                p.expect_sym("->")?;
                Some(p.state_path()?)
            };
            trans.push(RawTrans {
                source: id,
                target,
                guard,
                actions,
                span: tspan,
            });
        } else {
            return syntax(
                p.span(),
                format!(
                    "expected `state`, `on`, `do` or `}}`, found {}",
                    p.describe()
                ),
            );
        }
    }
    Ok(id)
}

fn parse_elemref(p: &mut Parser<'_>) -> Result<RawRef, ParseError> {
    let sp = p.span();
    let nth = |p: &mut Parser<'_>| -> Result<usize, ParseError> {
        if p.eat_sym("#") {
            let n = p.signed_int()?;
            if n < 1 {
                return syntax(sp, "transition index starts at 1");
            }
            Ok(n as usize)
        } else {
            Ok(1)
        }
    };
    if p.is_kw("do") && matches!(p.peek_at(1), Tok::Sym("@")) {
        p.bump();
        p.bump();
        let (src, _) = p.state_path()?;
        let n = nth(p)?;
        return Ok(RawRef::Trans {
            src,
            tgt: None,
            nth: n,
            span: sp,
        });
    }
    let (src, _) = p.state_path()?;
    if p.eat_sym("->") {
        let (tgt, _) = p.state_path()?;
        let n = nth(p)?;
        Ok(RawRef::Trans {
            src,
            tgt: Some(tgt),
            nth: n,
            span: sp,
        })
    } else {
        Ok(RawRef::State(src, sp))
    }
}

/// Parses an LTL formula and binds its identifiers against the model.
pub fn parse_ltl(text: &str, model: &Model) -> Result<Ltl, ParseError> {
    let mut p = Parser::new(text)?;
    if matches!(p.peek(), Tok::Eof) {
        return syntax(p.span(), "empty formula");
    }
    let f = p.formula()?.into_ltl();
    if !matches!(p.peek(), Tok::Eof) {
        return syntax(p.span(), format!("unexpected {}", p.describe()));
    }
    let res = Resolver {
        vars: &model.variables,
        states: &model.states,
        timers: &p.timer_names,
    };
    let f = res.resolve_ltl(&f);
    match f.unbound_names().into_iter().next() {
        Some(n) => Err(ParseError::UnknownName(n)),
        None => Ok(f),
    }
}

/// Parses a state expression and binds it against the model.
pub fn parse_expr(text: &str, model: &Model) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    if !matches!(p.peek(), Tok::Eof) {
        return syntax(p.span(), format!("unexpected {}", p.describe()));
    }
    let res = Resolver {
        vars: &model.variables,
        states: &model.states,
        timers: &p.timer_names,
    };
    let e = res.resolve(&e, None);
    match e.unbound_names().into_iter().next() {
        Some(n) => Err(ParseError::UnknownName(n)),
        None => Ok(e),
    }
}

// ---- printing ---------------------------------------------------------------

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical model text; `parse_model(print_model(m))` reproduces `m` up to spans.
pub fn print_model(model: &Model) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model {} {{", model.name);
    for v in &model.variables {
        let kw = match v.kind {
            VarKind::Input => "in",
            VarKind::Output => "out",
            VarKind::Internal => "var",
        };
        let ty = match &v.domain {
            Domain::Bool => "bool".to_string(),
            Domain::Int { lo, hi } => format!("int {lo}..{hi}"),
            Domain::Enum(ls) => format!("enum {{ {} }}", ls.join(", ")),
        };
        let _ = writeln!(
            out,
            "  {kw} {} : {ty} init {}",
            v.name,
            v.domain.format_value(v.initial)
        );
    }
    for (m, mach) in model.machines.iter().enumerate() {
        let _ = writeln!(out, "  machine {} {{", mach.name);
        for &r in &mach.roots {
            print_state(model, m, r, 2, &mut out);
        }
        let _ = writeln!(out, "  }}");
    }
    for r in &model.requirements {
        let _ = write!(out, "  req {} {}", r.id, quote(&r.text));
        if !r.satisfies.is_empty() {
            let refs: Vec<String> = r.satisfies.iter().map(|&e| model.element_name(e)).collect();
            let _ = write!(out, " satisfies {}", refs.join(", "));
        }
        if let Some(c) = &r.constraint {
            let _ = write!(out, " constraint {}", c.display(model));
        }
        out.push('\n');
    }
    out.push_str("}\n");
    out
}

fn print_state(model: &Model, m: usize, s: StateId, indent: usize, out: &mut String) {
    let st = &model.states[s];
    let pad = "  ".repeat(indent);
    let _ = writeln!(
        out,
        "{pad}state {}{} {{",
        st.name,
        if st.initial { " initial" } else { "" }
    );
    for &c in &st.children {
        print_state(model, m, c, indent + 1, out);
    }
    for &t in &model.machines[m].transitions {
        let tr = &model.transitions[t];
        if tr.source != s {
            continue;
        }
        let _ = write!(
            out,
            "{pad}  {}on {}",
            if tr.kind == TransitionKind::Activity {
                "do "
            } else {
                ""
            },
            tr.guard.display(model)
        );
        if !tr.actions.is_empty() {
            let acts: Vec<String> = tr
                .actions
                .iter()
                .map(|a| {
                    format!(
                        "{} := {}",
                        model.variables[a.var].name,
                        a.value.display(model)
                    )
                })
                .collect();
            let _ = write!(out, " / {}", acts.join(", "));
        }
        if let Some(tg) = tr.target {
            let _ = write!(out, " -> {}", model.states[tg].name);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "{pad}}}");
}

// ---- trace logs -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LogRecord {
    pub time: i64,
    pub var: VarId,
    pub value: i64,
}

/// Observed or expected values of inputs and outputs over time.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceLog {
    pub records: Vec<LogRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TraceLogError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown variable `{name}`")]
    UnknownVariable { line: usize, name: String },
    #[error("line {line}: `{name}` is internal and cannot be observed")]
    Unobservable { line: usize, name: String },
    #[error("line {line}: value `{value}` outside the domain of `{name}`")]
    OutOfDomain {
        line: usize,
        name: String,
        value: String,
    },
    #[error("line {line}: time stamp {time} is smaller than the previous one")]
    NonMonotonic { line: usize, time: i64 },
}

impl TraceLog {
    pub fn push(&mut self, time: i64, var: VarId, value: i64) {
        self.records.push(LogRecord { time, var, value });
    }

    pub fn last_time(&self) -> i64 {
        self.records.last().map_or(0, |r| r.time)
    }

    /// Value of `var` after all records with time ≤ `t`, if any was recorded.
    pub fn value_at(&self, var: VarId, t: i64) -> Option<i64> {
        self.records
            .iter()
            .take_while(|r| r.time <= t)
            .filter(|r| r.var == var)
            .last()
            .map(|r| r.value)
    }

    pub fn restrict(&self, vars: &[VarId]) -> TraceLog {
        TraceLog {
            records: self
                .records
                .iter()
                .filter(|r| vars.contains(&r.var))
                .cloned()
                .collect(),
        }
    }
}

/// Parses `t=<ms> <name>=<value>` lines. `#` starts a comment.
pub fn parse_trace_log(text: &str, model: &Model) -> Result<TraceLog, TraceLogError> {
    let mut log = TraceLog::default();
    let mut last = i64::MIN;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let bad = |m: &str| TraceLogError::Syntax {
            line,
            message: m.to_string(),
        };
        let mut parts = content.split_whitespace();
        let (Some(tp), Some(vp), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `t=<ms> <name>=<value>`"));
        };
        let time: i64 = tp
            .strip_prefix("t=")
            .and_then(|s| s.parse().ok())
            .filter(|t: &i64| *t >= 0)
            .ok_or_else(|| bad("invalid time stamp"))?;
        let (name, value) = vp
            .split_once('=')
            .ok_or_else(|| bad("expected `<name>=<value>`"))?;
        let var = model
            .var_by_name(name)
            .ok_or_else(|| TraceLogError::UnknownVariable {
                line,
                name: name.to_string(),
            })?;
        let decl = &model.variables[var];
        if decl.kind == VarKind::Internal {
            return Err(TraceLogError::Unobservable {
                line,
                name: name.to_string(),
            });
        }
        let v = decl
            .domain
            .parse_value(value)
            .ok_or_else(|| TraceLogError::OutOfDomain {
                line,
                name: name.to_string(),
                value: value.to_string(),
            })?;
        if time < last {
            return Err(TraceLogError::NonMonotonic { line, time });
        }
        last = time;
        log.push(time, var, v);
    }
    Ok(log)
}

/// Booleans print as 0/1 and enumeration values by literal.
pub fn format_log_value(model: &Model, var: VarId, v: i64) -> String {
    match &model.variables[var].domain {
        Domain::Bool => v.to_string(),
        d => d.format_value(v),
    }
}

pub fn print_trace_log(log: &TraceLog, model: &Model) -> String {
    let mut out = String::new();
    for r in &log.records {
        let _ = writeln!(
            out,
            "t={} {}={}",
            r.time,
            model.variables[r.var].name,
            format_log_value(model, r.var, r.value)
        );
    }
    out
}
