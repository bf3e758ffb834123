//! Generators and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use deixis::logic::{parse_program, Atom, FactSet, Program, Term};
use deixis::Valuation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RELATIONS: [&str; 3] = ["on", "holding", "near"];
pub const TYPES: [&str; 3] = ["boat", "cup", "person"];

/// A random scene with a program in the condition/target layout.
pub struct RandomCase {
    pub program: Program,
    pub text: String,
    pub facts: FactSet,
    /// 0/1 truth per fact, in fact-set order.
    pub truth: Vec<bool>,
}

impl RandomCase {
    pub fn valuation(&self) -> Valuation {
        Valuation::from_clamped(self.truth.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect())
    }
}

fn condition(rng: &mut ChaCha8Rng, i: usize) -> String {
    let rel = RELATIONS[rng.gen_range(0..RELATIONS.len())];
    let ty = TYPES[rng.gen_range(0..TYPES.len())];
    match rng.gen_range(0..4) {
        // bare type test on the candidate itself
        0 => format!("cond{i}(X):-type(X,{ty})."),
        // relation without a type constraint
        1 => format!("cond{i}(X):-{rel}(X,Y)."),
        _ => format!("cond{i}(X):-{rel}(X,Y),type(Y,{ty})."),
    }
}

/// Up to `max_rules` rules (at least one condition plus the target) over up to
/// `max_objects` objects. Every fact is present in the fact set; roughly a
/// fifth of them are false.
pub fn random_case(seed: u64, max_rules: usize, max_objects: usize) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rules = rng.gen_range(2..=max_rules.max(2));
    let conds = n_rules - 1;
    let mut lines: Vec<String> = (1..=conds).map(|i| condition(&mut rng, i)).collect();
    let body: Vec<String> = (1..=conds).map(|i| format!("cond{i}(X)")).collect();
    lines.push(format!("target(X):-{}.", body.join(",")));
    let text = lines.join("\n");
    let program = parse_program(&text).expect("generated program parses");

    let n = rng.gen_range(1..=max_objects);
    let objs: Vec<String> = (1..=n).map(|k| format!("obj{k}")).collect();
    let mut facts = FactSet::new();
    let mut truth = Vec::new();
    let add = |facts: &mut FactSet, truth: &mut Vec<bool>, a: Atom, t: bool| {
        let (_, fresh) = facts.insert(a);
        if fresh {
            truth.push(t);
        }
    };
    for s in &objs {
        for o in &objs {
            if s != o && rng.gen_bool(0.35) {
                let rel = RELATIONS[rng.gen_range(0..RELATIONS.len())];
                let t = rng.gen_bool(0.8);
                add(&mut facts, &mut truth, Atom::fact(rel, &[s.as_str(), o.as_str()]), t);
            }
        }
    }
    for o in &objs {
        let ty = TYPES[rng.gen_range(0..TYPES.len())];
        let t = rng.gen_bool(0.8);
        add(&mut facts, &mut truth, Atom::fact("type", &[o.as_str(), ty]), t);
    }
    for o in &objs {
        facts.add_entity(o.clone());
    }
    RandomCase { program, text, facts, truth }
}

fn assignments(vars: &[String], universe: &[String]) -> Vec<HashMap<String, String>> {
    let mut out = vec![HashMap::new()];
    for v in vars {
        out = out
            .into_iter()
            .flat_map(|b| {
                universe.iter().map(move |c| {
                    let mut b = b.clone();
                    b.insert(v.clone(), c.clone());
                    b
                })
            })
            .collect();
    }
    out
}

/// Every instantiation of every rule over the entities whose extensional body
/// atoms are all facts, rendered as `head:-b1,b2`.
pub fn brute_force_grounding(program: &Program, facts: &FactSet) -> BTreeSet<String> {
    let universe: Vec<String> = facts.entities().into_iter().collect();
    let defined: HashSet<(String, usize)> = program
        .rules()
        .iter()
        .map(|r| (r.head.name().to_string(), r.head.args.len()))
        .collect();
    let mut out = BTreeSet::new();
    for rule in program.rules() {
        for b in assignments(&rule.variables(), &universe) {
            let body: Vec<Atom> = rule.body.iter().map(|a| a.substitute(&b)).collect();
            let supported = body
                .iter()
                .all(|a| defined.contains(&(a.name().to_string(), a.args.len())) || facts.contains(a));
            if supported {
                let rendered: Vec<String> = body.iter().map(Atom::to_string).collect();
                out.insert(format!("{}:-{}", rule.head.substitute(&b), rendered.join(",")));
            }
        }
    }
    out
}

/// Naive synchronous forward chaining: `steps` rounds, each deriving the heads
/// of all rule instances whose bodies held after the previous round.
pub fn boolean_closure(program: &Program, facts: &FactSet, truth: &[bool], steps: usize) -> BTreeSet<String> {
    let universe: Vec<String> = facts.entities().into_iter().collect();
    let mut known: BTreeSet<String> = facts
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t)
        .map(|(a, _)| a.to_string())
        .collect();
    for _ in 0..steps {
        let mut next = known.clone();
        for rule in program.rules() {
            for b in assignments(&rule.variables(), &universe) {
                if rule.body.iter().all(|a| known.contains(&a.substitute(&b).to_string())) {
                    next.insert(rule.head.substitute(&b).to_string());
                }
            }
        }
        known = next;
    }
    known
}

/// Ground atom with constant arguments only.
pub fn ground(pred: &str, args: &[&str]) -> Atom {
    Atom::new(pred, args.iter().map(|a| Term::constant(*a).unwrap()).collect()).unwrap()
}

pub const PROGRAM_1: &str = "cond1(X):-on(X,Y),type(Y,boat).\ncond2(X):-holding(X,Y),type(Y,umbrella).\ntarget(X):-cond1(X),cond2(X).";

/// The six few-shot programs, verbatim (one lacks its final period).
pub const FEW_SHOT: [(&str, &str); 6] = [
    ("next_to", "cond1(X):-next_to(X,Y),type(Y,keyboard).\ntarget(X):-cond1(X)."),
    ("on", "cond1(X):-on(X,Y),type(Y,desk).\ntarget(X):-cond1(X)."),
    ("on,behind", "cond1(X):-on(X,Y),type(Y,ground).\ncond2(X):-behind(X,Y),type(Y,whiteline).\ntarget(X):-cond1(X),cond2(X)"),
    ("near,against", "cond1(X):-near(X,Y),type(Y,desk).\ncond2(X):-against(X,Y),type(Y,wall).\ntarget(X):-cond1(X),cond2(X)."),
    (
        "has,on,above",
        "cond1(X):-has(X,Y),type(Y,sides).\ncond2(X):-on(X,Y),type(Y,pole).\ncond3(X):-above(X,Y),type(Y,stopsign).\ntarget(X):-cond1(X),cond2(X),cond3(X).",
    ),
    (
        "wearing,has,wearing",
        "cond1(X):-wearing(X,Y),type(Y,shirt).\ncond2(X):-has(X,Y),type(Y,hair).\ncond3(X):-wearing(X,Y),type(Y,shoes).\ntarget(X):-cond1(X),cond2(X),cond3(X).",
    ),
];
