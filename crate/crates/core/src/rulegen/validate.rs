use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::logic::{parse_program, Program, ProgramError, Rule, SyntaxErrorKind, Term, TARGET_PREDICATE, TYPE_PREDICATE};

const ALLOWED_VARIABLES: [&str; 4] = ["X", "Y", "Z", "W"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ViolationKind {
    Syntax,
    LowercaseVariable,
    ArityDrift,
    MissingTarget,
    MultipleTargets,
    BadTargetShape,
    UndefinedCondition,
    DuplicateCondition,
    BadConditionShape,
    DisallowedVariable,
    UnknownPredicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// 1-based line in the reply text, when the violation is local to one line.
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FormatError {
    pub violations: Vec<Violation>,
}

impl FormatError {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        let mut k: Vec<ViolationKind> = self.violations.iter().map(|v| v.kind).collect();
        k.sort();
        k.dedup();
        k
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            match v.line {
                Some(l) => write!(f, "- {:?} (line {l}): {}", v.kind, v.message)?,
                None => write!(f, "- {:?}: {}", v.kind, v.message)?,
            }
        }
        Ok(())
    }
}

impl std::error::Error for FormatError {}

fn strip_decorations(line: &str) -> &str {
    let mut s = line.trim();
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(marker) {
            s = rest.trim_start();
        }
    }
    // numbered list items: "1. rule" or "2) rule"
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            s = r.trim_start();
        }
    }
    let s = match s.find('%') {
        Some(i) => &s[..i],
        None => s,
    };
    s.trim().trim_matches('`').trim()
}

/// True for `name(...)` heads, optionally preceded by a numeric `w:` prefix.
fn looks_like_rule(s: &str) -> bool {
    let Some(neck) = s.find(":-") else {
        return false;
    };
    let mut head = s[..neck].trim();
    if let Some((w, rest)) = head.split_once(':') {
        if w.trim().parse::<f64>().is_ok() {
            head = rest.trim();
        }
    }
    let name_len = head
        .find('(')
        .filter(|&i| i > 0 && head[..i].chars().all(|c| c.is_alphanumeric() || c == '_'));
    name_len.is_some() && head.chars().next().is_some_and(char::is_alphabetic)
}

fn head_name(s: &str) -> Option<String> {
    let neck = s.find(":-")?;
    let head = s[..neck].rsplit(':').next()?.trim();
    head.split('(').next().map(|n| n.trim().to_string())
}

/// Pulls rule lines out of a free-form reply: code fences, list markers,
/// `%` comments and prose lines are dropped. Returns (line number, rule text).
pub(crate) fn extract_rule_lines(text: &str) -> Vec<(usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with("```"))
        .map(|(i, l)| (i + 1, strip_decorations(l)))
        .filter(|(_, l)| looks_like_rule(l))
        .map(|(i, l)| (i, l.to_string()))
        .collect()
}

fn is_cond_name(name: &str) -> bool {
    name.strip_prefix("cond")
        .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}

struct Checker<'a> {
    out: Vec<Violation>,
    scene_predicates: &'a [String],
}

impl Checker<'_> {
    fn push(&mut self, kind: ViolationKind, line: Option<usize>, message: impl Into<String>) {
        self.out.push(Violation {
            kind,
            line,
            message: message.into(),
        });
    }

    fn check_terms(&mut self, line: usize, rule: &Rule) {
        for atom in std::iter::once(&rule.head).chain(&rule.body) {
            for t in &atom.args {
                match t {
                    Term::Var(v) if !ALLOWED_VARIABLES.contains(&v.as_str()) => self.push(
                        ViolationKind::DisallowedVariable,
                        Some(line),
                        format!("variable `{v}` in `{atom}`; use X, Y, Z or W"),
                    ),
                    Term::Const(c) if ALLOWED_VARIABLES.iter().any(|v| v.to_lowercase() == *c) => self.push(
                        ViolationKind::LowercaseVariable,
                        Some(line),
                        format!("`{c}` in `{atom}` should be the variable `{}`", c.to_uppercase()),
                    ),
                    _ => {}
                }
            }
        }
    }

    fn check_target(&mut self, line: usize, rule: &Rule, defined: &HashSet<&str>) {
        if rule.head.args.len() != 1 || !rule.head.args[0].is_var() {
            self.push(
                ViolationKind::BadTargetShape,
                Some(line),
                format!("`{}` must have a single variable argument", rule.head),
            );
        }
        if rule.body.is_empty() {
            self.push(ViolationKind::BadTargetShape, Some(line), "target rule has no conditions");
        }
        for atom in &rule.body {
            if !defined.contains(atom.name()) {
                self.push(
                    ViolationKind::UndefinedCondition,
                    Some(line),
                    format!("`{atom}` is not defined by any rule"),
                );
            }
        }
    }

    fn check_condition(&mut self, line: usize, rule: &Rule) {
        let bad = |m: String| (ViolationKind::BadConditionShape, Some(line), m);
        let mut issues = Vec::new();
        if rule.head.args.len() != 1 || !rule.head.args[0].is_var() {
            issues.push(bad(format!("`{}` must have a single variable argument", rule.head)));
        }
        let x = rule.head.args.first().map(Term::name).unwrap_or("");
        match rule.body.as_slice() {
            [single] if single.args.len() <= 2 => {}
            [rel, ty] if ty.name() == TYPE_PREDICATE => {
                // lowercase variables are reported on their own
                let var_like = |t: &Term| t.is_var() || ALLOWED_VARIABLES.iter().any(|v| v.to_lowercase() == t.name());
                let linked = rel.args.len() == 2
                    && rel.args[0].name() == x
                    && var_like(&rel.args[1])
                    && ty.args.len() == 2
                    && ty.args[0] == rel.args[1]
                    && !var_like(&ty.args[1]);
                if !linked {
                    issues.push(bad(format!(
                        "expected `{}:-pred({x},Y),type(Y,const).`",
                        rule.head
                    )));
                }
            }
            _ => issues.push(bad(format!(
                "`{}` must be `pred(X,Y),type(Y,const)` or a single atom",
                rule.head
            ))),
        }
        for (k, l, m) in issues {
            self.push(k, l, m);
        }
        if !self.scene_predicates.is_empty() {
            for atom in rule.body.iter().filter(|a| a.name() != TYPE_PREDICATE) {
                if !self.scene_predicates.iter().any(|p| p == atom.name()) {
                    self.push(
                        ViolationKind::UnknownPredicate,
                        Some(line),
                        format!(
                            "`{}` is not among the available predicates {}",
                            atom.name(),
                            self.scene_predicates.join(",")
                        ),
                    );
                }
            }
        }
    }
}

/// Extracts rules from a model reply and checks them against the expected
/// layout: one `target(X)` rule whose body lists `condN(X)` atoms, each
/// condition defined once as `pred(X,Y),type(Y,const)` or a single atom,
/// variables drawn from X, Y, Z, W. When `scene_predicates` is non-empty,
/// condition predicates must come from it.
pub fn validate_rules(text: &str, scene_predicates: &[String]) -> Result<Program, FormatError> {
    let mut ck = Checker {
        out: Vec::new(),
        scene_predicates,
    };
    let mut rules: Vec<(usize, Rule)> = Vec::new();
    let mut attempted: HashSet<String> = HashSet::new();
    for (line, src) in extract_rule_lines(text) {
        match parse_program(&src) {
            Ok(p) => rules.extend(p.into_rules().into_iter().map(|r| (line, r))),
            Err(e) => {
                let kind = match e.kind {
                    SyntaxErrorKind::LowercaseVariable => ViolationKind::LowercaseVariable,
                    SyntaxErrorKind::ArityMismatch => ViolationKind::ArityDrift,
                    _ => ViolationKind::Syntax,
                };
                attempted.extend(head_name(&src));
                ck.push(kind, Some(line), e.message);
            }
        }
    }

    let all: Vec<Rule> = rules.iter().map(|(_, r)| r.clone()).collect();
    let program = match Program::new(all) {
        Ok(p) => Some(p),
        Err(e) => {
            let (kind, line) = match &e {
                ProgramError::ArityMismatch { rule, .. } => (ViolationKind::ArityDrift, rules[*rule].0),
                ProgramError::DuplicateRule { rule, .. } if is_cond_name(rules[*rule].1.head.name()) => {
                    (ViolationKind::DuplicateCondition, rules[*rule].0)
                }
                ProgramError::DuplicateRule { rule, .. } => (ViolationKind::MultipleTargets, rules[*rule].0),
                ProgramError::RangeRestriction { rule, .. } => (ViolationKind::Syntax, rules[*rule].0),
            };
            ck.push(kind, Some(line), e.to_string());
            None
        }
    };

    let defined: HashSet<&str> = rules
        .iter()
        .map(|(_, r)| r.head.name())
        .chain(attempted.iter().map(String::as_str))
        .collect();
    let targets: Vec<&(usize, Rule)> = rules.iter().filter(|(_, r)| r.head.name() == TARGET_PREDICATE).collect();
    if targets.is_empty() && !attempted.contains(TARGET_PREDICATE) {
        ck.push(ViolationKind::MissingTarget, None, "no rule with head `target(X)`");
    }
    if targets.len() > 1 {
        let lines: Vec<String> = targets.iter().map(|(l, _)| l.to_string()).collect();
        ck.push(
            ViolationKind::MultipleTargets,
            Some(targets[1].0),
            format!("{} target rules (lines {})", targets.len(), lines.join(", ")),
        );
    }
    let mut cond_lines: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (line, rule) in &rules {
        ck.check_terms(*line, rule);
        let name = rule.head.name();
        if name == TARGET_PREDICATE {
            ck.check_target(*line, rule, &defined);
        } else if is_cond_name(name) {
            cond_lines.entry(name).or_default().push(*line);
            ck.check_condition(*line, rule);
        } else {
            ck.push(
                ViolationKind::BadConditionShape,
                Some(*line),
                format!("unexpected rule head `{}`; expected target or condN", rule.head),
            );
        }
    }
    for (name, lines) in cond_lines {
        if lines.len() > 1 && !ck.out.iter().any(|v| v.kind == ViolationKind::DuplicateCondition && v.line == Some(lines[1])) {
            ck.push(
                ViolationKind::DuplicateCondition,
                Some(lines[1]),
                format!("`{name}` is defined {} times", lines.len()),
            );
        }
    }

    match program {
        Some(p) if ck.out.is_empty() => Ok(p),
        _ => Err(FormatError { violations: ck.out }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROGRAM_1: &str = "cond1(X):-on(X,Y),type(Y,boat).\ncond2(X):-holding(X,Y),type(Y,umbrella).\ntarget(X):-cond1(X),cond2(X).";

    fn kinds(text: &str) -> Vec<ViolationKind> {
        validate_rules(text, &[]).unwrap_err().kinds()
    }

    #[test]
    fn program_one_is_valid() {
        let p = validate_rules(PROGRAM_1, &["on".into(), "holding".into()]).unwrap();
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn lowercase_variable() {
        assert!(kinds("target(x):-cond1(x).").contains(&ViolationKind::LowercaseVariable));
        assert!(kinds("cond1(X):-on(X,y),type(y,boat).\ntarget(X):-cond1(X).").contains(&ViolationKind::LowercaseVariable));
    }

    #[test]
    fn prose_and_fences_are_dropped() {
        let reply = "Sure! Here are the rules for your prompt:\n\n```prolog\ncond1(X):-on(X,Y),type(Y,boat).\ncond2(X):-holding(X,Y),type(Y,umbrella).\ntarget(X):-cond1(X),cond2(X).\n```\nThese rules find the object (the person) that satisfies both conditions.";
        assert_eq!(validate_rules(reply, &[]).unwrap(), parse_program(PROGRAM_1).unwrap());
        let listed = "1. cond1(X):-on(X,Y),type(Y,boat).\n2. target(X):-cond1(X).";
        assert_eq!(validate_rules(listed, &[]).unwrap().len(), 2);
    }

    #[test]
    fn structural_violations() {
        assert_eq!(kinds("cond1(X):-on(X,Y),type(Y,boat)."), [ViolationKind::MissingTarget]);
        assert_eq!(kinds(""), [ViolationKind::MissingTarget]);
        assert_eq!(
            kinds("cond1(X):-on(X,Y),type(Y,boat).\ntarget(X):-cond1(X).\ntarget(X):-cond1(X),cond1(X)."),
            [ViolationKind::MultipleTargets]
        );
        assert_eq!(kinds("target(X):-cond1(X),cond2(X).\ncond1(X):-on(X,Y),type(Y,boat)."), [ViolationKind::UndefinedCondition]);
        assert_eq!(
            kinds("cond1(X):-on(X,Y),type(Y,boat).\ncond1(X):-near(X,Y),type(Y,cat).\ntarget(X):-cond1(X)."),
            [ViolationKind::DuplicateCondition]
        );
        assert_eq!(
            kinds("cond1(X):-on(X,Y),type(Y,boat),near(X,Z).\ntarget(X):-cond1(X)."),
            [ViolationKind::BadConditionShape]
        );
        assert_eq!(kinds("cond1(X):-on(X,Q),type(Q,boat).\ntarget(X):-cond1(X)."), [ViolationKind::DisallowedVariable]);
        assert_eq!(kinds("cond1(X):-on(X,Y),type(Y,boat).\ncond2(X):-on(X).\ntarget(X):-cond1(X),cond2(X)."), [ViolationKind::ArityDrift]);
    }

    #[test]
    fn unknown_predicates_only_with_a_list() {
        let text = "cond1(X):-atop(X,Y),type(Y,boat).\ntarget(X):-cond1(X).";
        assert!(validate_rules(text, &[]).is_ok());
        assert_eq!(validate_rules(text, &["on".into()]).unwrap_err().kinds(), [ViolationKind::UnknownPredicate]);
    }

    #[test]
    fn message_lists_every_violation() {
        let e = validate_rules("target(X):-cond1(X),cond2(X).\ncond1(X):-on(X,Q),type(Q,boat).", &[]).unwrap_err();
        let s = e.to_string();
        assert_eq!(s.lines().count(), e.violations.len());
        assert!(s.contains("UndefinedCondition") && s.contains("DisallowedVariable"));
    }
}
