//! Rule grounding and construction of the bipartite forward reasoning graph.
//!
//! Variables range over the entity constants of a [`FactSet`]. A ground body
//! atom is kept when it is a known fact or when its predicate is intensional
//! (the head of some rule), which over-approximates derivability without
//! ever dropping a derivable atom.

use std::collections::{HashMap, HashSet};

use indexmap::IndexSet;
use serde::Serialize;
use thiserror::Error;

use crate::logic::{Atom, FactSet, Predicate, Program, Rule, Term};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct GroundRule {
    pub head: Atom,
    pub body: Vec<Atom>,
    pub source_rule_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingConfig {
    /// Upper bound on `|entities| ^ |variables|` for any single rule.
    pub max_instantiations: f64,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { max_instantiations: 1e7 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GroundingError {
    #[error("rule {rule} has {variables} variables over {constants} constants, exceeding the cap of {cap}")]
    UniverseTooLarge {
        rule: usize,
        variables: usize,
        constants: usize,
        cap: f64,
    },
}

struct FactIndex<'a> {
    by_predicate: HashMap<&'a Predicate, Vec<&'a Atom>>,
}

impl<'a> FactIndex<'a> {
    fn new(facts: &'a FactSet) -> Self {
        let mut by_predicate: HashMap<&Predicate, Vec<&Atom>> = HashMap::new();
        for a in facts.iter() {
            by_predicate.entry(&a.predicate).or_default().push(a);
        }
        Self { by_predicate }
    }

    fn candidates(&self, p: &Predicate) -> &[&'a Atom] {
        self.by_predicate.get(p).map(Vec::as_slice).unwrap_or(&[])
    }
}

struct RuleGrounder<'a> {
    rule: &'a Rule,
    rule_index: usize,
    extensional: Vec<&'a Atom>,
    free_vars: Vec<String>,
    universe: &'a IndexSet<String>,
    index: &'a FactIndex<'a>,
}

impl RuleGrounder<'_> {
    fn run(&self, out: &mut Vec<GroundRule>) {
        let mut binding = HashMap::new();
        self.join(0, &mut binding, out);
    }

    fn join(&self, depth: usize, binding: &mut HashMap<String, String>, out: &mut Vec<GroundRule>) {
        let Some(atom) = self.extensional.get(depth) else {
            let unbound: Vec<&String> = self.free_vars.iter().filter(|v| !binding.contains_key(*v)).collect();
            self.enumerate(&unbound, binding, out);
            return;
        };
        for fact in self.index.candidates(&atom.predicate) {
            let mut newly_bound = Vec::new();
            let mut ok = true;
            for (pattern, value) in atom.args.iter().zip(&fact.args) {
                let value = value.name();
                match pattern {
                    Term::Const(c) => ok = c == value,
                    Term::Var(v) => match binding.get(v) {
                        Some(bound) => ok = bound == value,
                        None if self.universe.contains(value) => {
                            binding.insert(v.clone(), value.to_string());
                            newly_bound.push(v.clone());
                        }
                        None => ok = false,
                    },
                }
                if !ok {
                    break;
                }
            }
            if ok {
                self.join(depth + 1, binding, out);
            }
            for v in newly_bound {
                binding.remove(&v);
            }
        }
    }

    fn enumerate(&self, unbound: &[&String], binding: &mut HashMap<String, String>, out: &mut Vec<GroundRule>) {
        match unbound.split_first() {
            None => out.push(GroundRule {
                head: self.rule.head.substitute(binding),
                body: self.rule.body.iter().map(|a| a.substitute(binding)).collect(),
                source_rule_index: self.rule_index,
            }),
            Some((var, rest)) => {
                for c in self.universe {
                    binding.insert((*var).clone(), c.clone());
                    self.enumerate(rest, binding, out);
                }
                binding.remove(*var);
            }
        }
    }
}

/// Instantiates every rule with a body over the entity constants of `facts`.
///
/// Bodiless rules are not grounded; fold them into the fact set instead.
pub fn ground_program(program: &Program, facts: &FactSet, cfg: &GroundingConfig) -> Result<Vec<GroundRule>, GroundingError> {
    let universe = facts.entities();
    let intensional = program.intensional_predicates();
    let index = FactIndex::new(facts);
    let mut out = Vec::new();
    for (rule_index, rule) in program.rules().iter().enumerate() {
        if rule.is_fact() {
            continue;
        }
        let free_vars = rule.variables();
        let size = (universe.len() as f64).powi(free_vars.len() as i32);
        if size > cfg.max_instantiations {
            return Err(GroundingError::UniverseTooLarge {
                rule: rule_index,
                variables: free_vars.len(),
                constants: universe.len(),
                cap: cfg.max_instantiations,
            });
        }
        let extensional = rule.body.iter().filter(|a| !intensional.contains(&a.predicate)).collect();
        RuleGrounder {
            rule,
            rule_index,
            extensional,
            free_vars,
            universe: &universe,
            index: &index,
        }
        .run(&mut out);
    }
    Ok(out)
}

/// Conjunction node: one ground rule instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjNode {
    pub body: Vec<usize>,
    pub head: usize,
    pub rule: usize,
}

/// Bipartite graph of atom nodes and conjunction nodes.
///
/// Atom ids `0..facts.len()` coincide with the positions of the input fact
/// set, so a fact valuation can be used directly as the initial state.
#[derive(Debug, Clone)]
pub struct ReasoningGraph {
    atoms: Vec<Atom>,
    atom_index: HashMap<Atom, usize>,
    conj: Vec<ConjNode>,
    incoming: Vec<Vec<usize>>,
    fact_count: usize,
    rule_count: usize,
    defined: HashSet<String>,
}

impl ReasoningGraph {
    fn intern(&mut self, atom: &Atom) -> usize {
        if let Some(&i) = self.atom_index.get(atom) {
            return i;
        }
        let i = self.atoms.len();
        self.atoms.push(atom.clone());
        self.atom_index.insert(atom.clone(), i);
        self.incoming.push(Vec::new());
        i
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom_id(&self, atom: &Atom) -> Option<usize> {
        self.atom_index.get(atom).copied()
    }

    pub fn atom(&self, id: usize) -> &Atom {
        &self.atoms[id]
    }

    pub fn conj_nodes(&self) -> &[ConjNode] {
        &self.conj
    }

    /// Conjunction nodes whose head is atom `id`.
    pub fn incoming(&self, id: usize) -> &[usize] {
        &self.incoming[id]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn conj_count(&self) -> usize {
        self.conj.len()
    }

    pub fn fact_count(&self) -> usize {
        self.fact_count
    }

    /// Number of rules in the program the graph was built from; weight vectors have this length.
    pub fn rule_count(&self) -> usize {
        self.rule_count
    }

    /// True when the source program has a rule with head predicate `name`.
    pub fn defines(&self, name: &str) -> bool {
        self.defined.contains(name)
    }

    pub fn max_indegree(&self) -> usize {
        self.incoming.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Renders conjunction node `k` as a ground rule.
    pub fn describe_conj(&self, k: usize) -> String {
        let c = &self.conj[k];
        let body: Vec<String> = c.body.iter().map(|&b| self.atoms[b].to_string()).collect();
        format!("{}:-{}.", self.atoms[c.head], body.join(","))
    }

    /// Debug dump of nodes and edges; the layout carries no stability guarantee.
    pub fn dump(&self) -> GraphDump {
        let mut edges = Vec::new();
        for (k, c) in self.conj.iter().enumerate() {
            for &b in &c.body {
                edges.push(GraphEdge::AtomToConj { atom: b, conj: k });
            }
            edges.push(GraphEdge::ConjToAtom { conj: k, atom: c.head });
        }
        GraphDump {
            atoms: self.atoms.iter().map(ToString::to_string).collect(),
            conjunctions: self.conj.clone(),
            edges,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphDump {
    pub atoms: Vec<String>,
    pub conjunctions: Vec<ConjNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphEdge {
    AtomToConj { atom: usize, conj: usize },
    ConjToAtom { conj: usize, atom: usize },
}

/// One conjunction node per ground rule; every fact gets an atom node.
pub fn build_reasoning_graph(program: &Program, ground_rules: &[GroundRule], facts: &FactSet) -> ReasoningGraph {
    let mut g = ReasoningGraph {
        atoms: Vec::new(),
        atom_index: HashMap::new(),
        conj: Vec::with_capacity(ground_rules.len()),
        incoming: Vec::new(),
        fact_count: facts.len(),
        rule_count: program.len(),
        defined: program.rules().iter().map(|r| r.head.name().to_string()).collect(),
    };
    for f in facts.iter() {
        g.intern(f);
    }
    for gr in ground_rules {
        let body: Vec<usize> = gr.body.iter().map(|a| g.intern(a)).collect();
        let head = g.intern(&gr.head);
        let k = g.conj.len();
        g.conj.push(ConjNode {
            body,
            head,
            rule: gr.source_rule_index,
        });
        g.incoming[head].push(k);
    }
    g
}

/// Grounds `program` over `facts` and builds its reasoning graph.
pub fn compile(program: &Program, facts: &FactSet, cfg: &GroundingConfig) -> Result<ReasoningGraph, GroundingError> {
    let ground = ground_program(program, facts, cfg)?;
    Ok(build_reasoning_graph(program, &ground, facts))
}
