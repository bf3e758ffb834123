//! The restricted first-order language: terms, atoms, definite rules and programs.
//!
//! Rules are written one per line in the familiar Prolog-like form
//! `cond1(X):-on(X,Y),type(Y,boat).`, optionally prefixed by a decimal weight
//! (`0.5: target(X):-targetSgg(X,sgg1).`). Only definite clauses are supported:
//! no negation, lists or function symbols.

mod facts;
mod parser;
mod scene;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use facts::FactSet;
pub use parser::{parse_program, render_program, SyntaxError, SyntaxErrorKind};
pub use scene::{
    canonical_name, canonical_predicate, object_constant, scene_graph_to_facts, BBox, ObjectMap,
    Relation, SceneError, SceneGraph, SceneObject,
};

/// Predicate reserved for scene object categories, `type(objK, name)`.
pub const TYPE_PREDICATE: &str = "type";
/// Predicate whose ground atoms identify the objects a prompt refers to.
pub const TARGET_PREDICATE: &str = "target";

/// Characters that may not appear inside a symbol name.
const RESERVED_CHARS: &[char] = &['(', ')', ',', ':', '-', '.'];

/// Returns true when `name` is non-empty and free of whitespace and reserved punctuation.
pub fn is_symbol_text(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c.is_whitespace() || RESERVED_CHARS.contains(&c))
}

/// Lexical check for constants and predicate names: starts with a lowercase letter or a digit.
pub fn is_constant_name(name: &str) -> bool {
    is_symbol_text(name)
        && name
            .chars()
            .next()
            .map(|c| c.is_lowercase() || c.is_ascii_digit())
            .unwrap_or(false)
}

/// Lexical check for variables: starts with an uppercase letter.
pub fn is_variable_name(name: &str) -> bool {
    is_symbol_text(name) && name.chars().next().map(char::is_uppercase).unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LexicalError {
    InvalidVariable(String),
    InvalidConstant(String),
    InvalidArity(String),
}

impl fmt::Display for LexicalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LexicalError::InvalidVariable(n) => write!(f, "`{n}` is not a valid variable name"),
            LexicalError::InvalidConstant(n) => write!(f, "`{n}` is not a valid constant or predicate name"),
            LexicalError::InvalidArity(n) => write!(f, "predicate `{n}` must have at least one argument"),
        }
    }
}

impl std::error::Error for LexicalError {}

/// A variable or a constant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Result<Self, LexicalError> {
        let name = name.into();
        if is_variable_name(&name) {
            Ok(Term::Var(name))
        } else {
            Err(LexicalError::InvalidVariable(name))
        }
    }

    pub fn constant(name: impl Into<String>) -> Result<Self, LexicalError> {
        let name = name.into();
        if is_constant_name(&name) {
            Ok(Term::Const(name))
        } else {
            Err(LexicalError::InvalidConstant(name))
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Var(n) | Term::Const(n) => n,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
}

impl Predicate {
    pub fn new(name: impl Into<String>, arity: usize) -> Result<Self, LexicalError> {
        let name = name.into();
        if !is_constant_name(&name) {
            return Err(LexicalError::InvalidConstant(name));
        }
        if arity == 0 {
            return Err(LexicalError::InvalidArity(name));
        }
        Ok(Self { name, arity })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

/// `p(t1, ..., tn)`; ground when no argument is a variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: Predicate,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Result<Self, LexicalError> {
        Ok(Self {
            predicate: Predicate::new(predicate, args.len())?,
            args,
        })
    }

    /// Builds a ground atom from constant names without lexical checks.
    ///
    /// Callers are expected to pass names produced by the canonicalizers.
    pub fn fact<S: AsRef<str>>(predicate: &str, args: &[S]) -> Self {
        Self {
            predicate: Predicate {
                name: predicate.to_string(),
                arity: args.len(),
            },
            args: args.iter().map(|a| Term::Const(a.as_ref().to_string())).collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.predicate.name
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// Applies a (possibly partial) substitution.
    pub fn substitute(&self, subst: &HashMap<String, String>) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => subst.get(v).map(|c| Term::Const(c.clone())).unwrap_or_else(|| t.clone()),
                    Term::Const(_) => t.clone(),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate.name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// A weighted definite clause `head :- body`. Bodiless rules are facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Atom>,
    pub weight: f64,
}

impl Rule {
    pub fn new(head: Atom, body: Vec<Atom>) -> Self {
        Self { head, body, weight: 1.0 }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }

    /// Distinct variables in order of first occurrence, head first.
    pub fn variables(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for atom in std::iter::once(&self.head).chain(self.body.iter()) {
            for v in atom.variables() {
                if !seen.iter().any(|s| s == v) {
                    seen.push(v.to_string());
                }
            }
        }
        seen
    }

    /// Head variables that do not occur in the body.
    pub fn unsafe_variables(&self) -> Vec<String> {
        if self.is_fact() {
            return Vec::new();
        }
        let body_vars: HashSet<&str> = self.body.iter().flat_map(|a| a.variables()).collect();
        let mut out: Vec<String> = Vec::new();
        for v in self.head.variables() {
            if !body_vars.contains(v) && !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        out
    }

    /// Rule with variables renamed by order of first occurrence; weight is ignored.
    fn canonical_key(&self) -> (Atom, Vec<Atom>) {
        let renaming: HashMap<String, String> = self
            .variables()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, format!("V{i}")))
            .collect();
        let rename = |a: &Atom| Atom {
            predicate: a.predicate.clone(),
            args: a
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => Term::Var(renaming[v].clone()),
                    c => c.clone(),
                })
                .collect(),
        };
        (rename(&self.head), self.body.iter().map(rename).collect())
    }

    /// True when both rules are identical up to a consistent renaming of variables.
    pub fn is_variant_of(&self, other: &Rule) -> bool {
        self.canonical_key() == other.canonical_key()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.weight != 1.0 {
            write!(f, "{}: ", self.weight)?;
        }
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(":-")?;
            for (i, b) in self.body.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{b}")?;
            }
        }
        f.write_str(".")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("rule {rule}: head variable(s) {vars:?} do not occur in the body")]
    RangeRestriction { rule: usize, vars: Vec<String> },
    #[error("rule {rule}: predicate `{name}` used with arity {found}, earlier with arity {expected}")]
    ArityMismatch {
        rule: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("rule {rule} duplicates rule {first} up to variable renaming")]
    DuplicateRule { rule: usize, first: usize },
}

/// An ordered set of rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    rules: Vec<Rule>,
}

impl Program {
    /// Validates range restriction, consistent arities and uniqueness up to renaming.
    pub fn new(rules: Vec<Rule>) -> Result<Self, ProgramError> {
        let mut arities: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, rule) in rules.iter().enumerate() {
            let unsafe_vars = rule.unsafe_variables();
            if !unsafe_vars.is_empty() {
                return Err(ProgramError::RangeRestriction { rule: i, vars: unsafe_vars });
            }
            for atom in std::iter::once(&rule.head).chain(rule.body.iter()) {
                let expected = *arities.entry(atom.name()).or_insert(atom.predicate.arity);
                if expected != atom.predicate.arity {
                    return Err(ProgramError::ArityMismatch {
                        rule: i,
                        name: atom.name().to_string(),
                        expected,
                        found: atom.predicate.arity,
                    });
                }
            }
            let key = rule.canonical_key();
            if let Some(first) = rules[..i].iter().position(|r| r.canonical_key() == key) {
                return Err(ProgramError::DuplicateRule { rule: i, first });
            }
        }
        Ok(Self { rules })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rules.iter().map(|r| r.weight).collect()
    }

    /// Predicates that occur as the head of some rule with a body.
    pub fn intensional_predicates(&self) -> HashSet<Predicate> {
        self.rules
            .iter()
            .filter(|r| !r.is_fact())
            .map(|r| r.head.predicate.clone())
            .collect()
    }

    pub fn defines(&self, name: &str) -> bool {
        self.rules.iter().any(|r| r.head.name() == name)
    }

    pub fn into_rules(self) -> Vec<Rule> {
        self.rules
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
