#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use mbt_core::expr::{CmpOp, Env, Expr, StateId, VarId};
use mbt_core::ltl::{eval_on_trace, expand_bmc, Ltl, Start, TraceView};
use mbt_core::model::{Model, VarKind};
use mbt_core::semantics::{is_quiescent, step, time_slot, Valuation};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trace over boolean variables `0..n`; every state atom is true.
#[derive(Clone, Debug)]
pub struct Bits(pub Vec<Vec<bool>>);

struct BitEnv<'a>(&'a [bool]);

impl Env for BitEnv<'_> {
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

impl TraceView for Bits {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn holds(&self, pos: usize, e: &Expr) -> bool {
        e.holds(&BitEnv(&self.0[pos]))
    }
}

/// Satisfaction through the bounded instances.
pub fn bmc_holds(f: &Ltl, t: &Bits) -> bool {
    expand_bmc(f, t.len() - 1, Start::Formula(Expr::Bool(true)))
        .expect("small formulas expand")
        .iter()
        .any(|i| i.goal.eval(t))
}

pub fn agree(f: &Ltl, t: &Bits) -> bool {
    bmc_holds(f, t) == eval_on_trace(f, t)
}

pub fn var_is(v: VarId, value: bool) -> Expr {
    Expr::cmp(CmpOp::Eq, Expr::Var(v), Expr::Int(value as i64))
}

pub fn atom_strategy() -> impl Strategy<Value = Ltl> {
    prop_oneof![
        (0usize..2, any::<bool>()).prop_map(|(v, b)| Ltl::atom(var_is(v, b))),
        Just(Ltl::atom(Expr::Var(0))),
        Just(Ltl::atom(Expr::Var(1))),
        Just(Ltl::tt()),
        Just(Ltl::ff()),
    ]
}

/// Formulas over two booleans with at most `depth` nested temporal or boolean operators.
pub fn formula_strategy(depth: u32) -> BoxedStrategy<Ltl> {
    if depth == 0 {
        return atom_strategy().boxed();
    }
    let sub = formula_strategy(depth - 1);
    prop_oneof![
        1 => atom_strategy(),
        2 => sub.clone().prop_map(|x| Ltl::Not(Box::new(x))),
        2 => (sub.clone(), sub.clone()).prop_map(|(a, b)| Ltl::And(vec![a, b])),
        2 => (sub.clone(), sub.clone()).prop_map(|(a, b)| Ltl::Or(vec![a, b])),
        2 => sub.clone().prop_map(|x| Ltl::Next(Box::new(x))),
        2 => sub.clone().prop_map(|x| Ltl::Globally(Box::new(x))),
        2 => sub.clone().prop_map(|x| Ltl::Finally(Box::new(x))),
        2 => (sub.clone(), sub.clone()).prop_map(|(a, b)| Ltl::Until(Box::new(a), Box::new(b))),
        2 => (sub.clone(), sub).prop_map(|(a, b)| Ltl::WeakUntil(Box::new(a), Box::new(b))),
    ]
    .boxed()
}

pub fn trace_strategy(vars: usize, max_len: usize) -> impl Strategy<Value = Bits> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), vars), 1..=max_len).prop_map(Bits)
}

// ---- random models ----------------------------------------------------------

const GUARDS: [&str; 10] = [
    "a", "!a", "b", "!b", "a && b", "a || b", "m", "!m", "a && !m", "b || m",
];
const VALUES: [&str; 6] = ["true", "false", "a", "b", "!o", "!m"];

/// Untimed model with two boolean inputs and at most six basic states. Machine `M`
/// has 2 to 4 flat states; machine `N` has two states and reads `o`.
pub fn random_model_text(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=4);
    let mut s = format!(
        "model R{seed} {{\n  in a : bool init false\n  in b : bool init false\n  out o : bool init false\n  out p : bool init false\n  var m : bool init false\n  machine M {{\n"
    );
    for i in 0..n {
        s += &format!(
            "    state S{i}{} {{\n",
            if i == 0 { " initial" } else { "" }
        );
        let k = rng.gen_range(0..=2);
        let mut first: Option<&str> = None;
        for _ in 0..k {
            let g = *GUARDS.choose(&mut rng).unwrap();
            let guard = match first {
                None => g.to_string(),
                Some(f) => format!("({g}) && !({f})"),
            };
            first.get_or_insert(g);
            let mut acts = Vec::new();
            if rng.gen_bool(0.6) {
                acts.push(format!("o := {}", VALUES.choose(&mut rng).unwrap()));
            }
            if rng.gen_bool(0.4) {
                acts.push(format!("m := {}", VALUES.choose(&mut rng).unwrap()));
            }
            let target = rng.gen_range(0..n);
            let acts = if acts.is_empty() {
                String::new()
            } else {
                format!(" / {}", acts.join(", "))
            };
            s += &format!("      on {guard}{acts} -> S{target}\n");
        }
        s += "    }\n";
    }
    s += "  }\n  machine N {\n";
    s += "    state P0 initial {\n      on o && !p / p := true -> P1\n    }\n";
    s += &format!(
        "    state P1 {{\n      on {} / p := false -> P0\n    }}\n",
        ["!o", "a", "!b"].choose(&mut rng).unwrap()
    );
    s += "  }\n}\n";
    s
}

// ---- brute-force reachability -----------------------------------------------

/// Successors under the event-driven step rule, written against `step` only: an
/// unstable state takes one zero-time step; a stable one flips at most one input.
pub fn brute_successors(model: &Model, v: &Valuation) -> Vec<Valuation> {
    let t = v.time(model);
    if !is_quiescent(model, v).expect("unambiguous") {
        return vec![step(model, v, &[], t).expect("step").post];
    }
    let mut out = Vec::new();
    for x in model.vars_of_kind(VarKind::Input) {
        let (lo, hi) = model.variables[x].domain.bounds();
        for val in lo..=hi {
            if val != v.var(x) {
                out.push(step(model, v, &[(x, val)], t + 1).expect("step").post);
            }
        }
    }
    out
}

/// Control states active in some trace of at most `depth` steps.
pub fn brute_reachable_states(model: &Model, depth: usize) -> BTreeSet<StateId> {
    let key = |v: &Valuation| {
        let mut k = v.0.clone();
        k[time_slot(model)] = 0;
        k
    };
    let mut frontier = vec![Valuation::initial(model)];
    let mut seen: HashSet<Vec<i64>> = frontier.iter().map(key).collect();
    let mut states = BTreeSet::new();
    for d in 0..=depth {
        for v in &frontier {
            states.extend((0..model.states.len()).filter(|&s| v.active(model, s)));
        }
        if d == depth {
            break;
        }
        let mut next = Vec::new();
        for v in &frontier {
            for w in brute_successors(model, v) {
                if seen.insert(key(&w)) {
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    states
}
