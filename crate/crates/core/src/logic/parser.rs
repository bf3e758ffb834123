//! Line-oriented parser for the rule text format.
//!
//! ```text
//! line   := [weight ':'] atom [':-' atom {',' atom}] ['.']
//! atom   := name '(' term {',' term} ')'
//! weight := ['-'] digits ['.' digits]
//! ```
//!
//! Blank lines and lines whose first non-blank character is `%` are skipped.

use std::collections::HashMap;
use std::fmt;

use super::{is_constant_name, is_symbol_text, is_variable_name, Atom, Predicate, Program, ProgramError, Rule, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntaxErrorKind {
    UnbalancedParens,
    MissingNeck,
    LowercaseVariable,
    ArityMismatch,
    InvalidName,
    RangeRestriction,
    DuplicateRule,
    Unexpected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    /// 1-based line number in the parsed text.
    pub line: usize,
    pub kind: SyntaxErrorKind,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for SyntaxError {}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Self { src, pos: 0, line }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.rest().is_empty()
    }

    fn error(&self, kind: SyntaxErrorKind, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: self.line,
            kind,
            message: message.into(),
        }
    }

    fn symbol(&mut self) -> Result<&'a str, SyntaxError> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|(_, c)| c.is_whitespace() || matches!(c, '(' | ')' | ',' | ':' | '-' | '.'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if len == 0 {
            let found = rest.chars().next().map(|c| format!("`{c}`")).unwrap_or_else(|| "end of line".into());
            return Err(self.error(SyntaxErrorKind::Unexpected, format!("expected a name, found {found}")));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    /// Optional `weight:` prefix. Backtracks when the prefix is not a number followed by `:`.
    fn weight(&mut self) -> Option<f64> {
        self.skip_ws();
        let start = self.pos;
        let rest = self.rest();
        let bytes = rest.as_bytes();
        let mut i = 0;
        if bytes.first() == Some(&b'-') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == digits_start {
            return None;
        }
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            let frac_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i == frac_start {
                return None;
            }
        }
        let value: f64 = rest[..i].parse().ok()?;
        self.pos += i;
        if self.rest().trim_start().starts_with(':') && !self.rest().trim_start().starts_with(":-") {
            self.eat(":");
            Some(value)
        } else {
            self.pos = start;
            None
        }
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        let name = self.symbol()?;
        if is_variable_name(name) {
            Ok(Term::Var(name.to_string()))
        } else if is_constant_name(name) {
            Ok(Term::Const(name.to_string()))
        } else {
            Err(self.error(SyntaxErrorKind::InvalidName, format!("`{name}` is neither a variable nor a constant")))
        }
    }

    fn atom(&mut self) -> Result<Atom, SyntaxError> {
        let name = self.symbol()?;
        if !is_constant_name(name) {
            return Err(self.error(
                SyntaxErrorKind::InvalidName,
                format!("`{name}` is not a valid predicate name"),
            ));
        }
        if !self.eat("(") {
            return Err(self.error(SyntaxErrorKind::Unexpected, format!("expected `(` after `{name}`")));
        }
        let mut args = vec![self.term()?];
        while self.eat(",") {
            args.push(self.term()?);
        }
        if !self.eat(")") {
            return Err(self.error(SyntaxErrorKind::Unexpected, format!("expected `,` or `)` in `{name}`")));
        }
        Ok(Atom {
            predicate: Predicate {
                name: name.to_string(),
                arity: args.len(),
            },
            args,
        })
    }
}

fn check_parens(line: &str, number: usize) -> Result<(), SyntaxError> {
    let mut depth: i32 = 0;
    for c in line.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    break;
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(SyntaxError {
            line: number,
            kind: SyntaxErrorKind::UnbalancedParens,
            message: "unbalanced parentheses".into(),
        });
    }
    Ok(())
}

/// Single lowercase letters in a rule head are almost always mis-cased variables.
fn looks_like_variable(t: &Term) -> bool {
    match t {
        Term::Const(c) => {
            let mut chars = c.chars();
            matches!((chars.next(), chars.next()), (Some(ch), None) if ch.is_ascii_lowercase())
        }
        Term::Var(_) => false,
    }
}

fn parse_line(line: &str, number: usize) -> Result<Rule, SyntaxError> {
    check_parens(line, number)?;
    let mut cur = Cursor::new(line, number);
    let weight = cur.weight();
    let head = cur.atom()?;
    let mut body = Vec::new();
    if cur.eat(":-") {
        body.push(cur.atom()?);
        while cur.eat(",") {
            body.push(cur.atom()?);
        }
    } else if !cur.at_end() && !cur.rest().starts_with('.') {
        return Err(cur.error(
            SyntaxErrorKind::MissingNeck,
            format!("expected `:-` after head `{head}`"),
        ));
    }
    cur.eat(".");
    if !cur.at_end() {
        return Err(cur.error(
            SyntaxErrorKind::Unexpected,
            format!("unexpected trailing input `{}`", cur.rest()),
        ));
    }
    if !body.is_empty() {
        if let Some(t) = head.args.iter().find(|t| looks_like_variable(t)) {
            return Err(cur.error(
                SyntaxErrorKind::LowercaseVariable,
                format!("`{t}` in head `{head}` must be a capitalized variable"),
            ));
        }
    }
    let rule = Rule::new(head, body);
    Ok(match weight {
        Some(w) => rule.with_weight(w),
        None => rule,
    })
}

/// Parses a rule-format text into a [`Program`], one rule per non-ignored line.
pub fn parse_program(text: &str) -> Result<Program, SyntaxError> {
    let mut rules = Vec::new();
    let mut lines = Vec::new();
    let mut arities: HashMap<String, (usize, usize)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let rule = parse_line(line, number)?;
        for atom in std::iter::once(&rule.head).chain(rule.body.iter()) {
            debug_assert!(is_symbol_text(atom.name()));
            match arities.get(atom.name()) {
                Some(&(arity, first_line)) if arity != atom.predicate.arity => {
                    return Err(SyntaxError {
                        line: number,
                        kind: SyntaxErrorKind::ArityMismatch,
                        message: format!(
                            "`{}` has arity {} here but {} on line {}",
                            atom.name(),
                            atom.predicate.arity,
                            arity,
                            first_line
                        ),
                    });
                }
                Some(_) => {}
                None => {
                    arities.insert(atom.name().to_string(), (atom.predicate.arity, number));
                }
            }
        }
        rules.push(rule);
        lines.push(number);
    }
    Program::new(rules).map_err(|e| {
        let (kind, idx) = match &e {
            ProgramError::RangeRestriction { rule, .. } => (SyntaxErrorKind::RangeRestriction, *rule),
            ProgramError::ArityMismatch { rule, .. } => (SyntaxErrorKind::ArityMismatch, *rule),
            ProgramError::DuplicateRule { rule, .. } => (SyntaxErrorKind::DuplicateRule, *rule),
        };
        SyntaxError {
            line: lines[idx],
            kind,
            message: e.to_string(),
        }
    })
}

/// Renders a program one rule per line; the output parses back to an equal program.
pub fn render_program(program: &Program) -> String {
    program.to_string()
}
