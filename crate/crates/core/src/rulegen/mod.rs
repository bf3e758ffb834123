//! Deictic prompt to rule program translation.
//!
//! Rules come either from a chat-completion model, steered by a system
//! prompt and few-shot examples, or from [`template_rulegen`] when the
//! prompt's (relation, attribute) structure is already known.

mod client;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::ServiceError;
use crate::logic::{canonical_name, canonical_predicate, Atom, Program, Rule, Term, TARGET_PREDICATE, TYPE_PREDICATE};

pub use client::{ChatBackend, ChatMessage, ChatRequest, Exchange, FixtureChatClient, HttpChatClient, Role};
pub use validate::{validate_rules, FormatError, Violation, ViolationKind};

pub const SYSTEM_PROMPT: &str = "Given a deictic representation and available predicates, generate rules in the format.
target(X):-cond1(X),...condn(X).
cond1(X):-pred1(X,Y),type(Y,const1).
...
condn(X):-predn(X,Y),type(Y,const2).
Use predicates and constants that appear in the given sentence.
Capitalize variables: X, Y, Z, W, etc.";

const FEW_SHOT: [(&str, &str); 6] = [
    (
        "an object that is next to a keyboard.\navailable predicates: next_to",
        "cond1(X):-next_to(X,Y),type(Y,keyboard).\ntarget(X):-cond1(X).",
    ),
    (
        "an object that is on a desk.\navailable predicates: on",
        "cond1(X):-on(X,Y),type(Y,desk).\ntarget(X):-cond1(X).",
    ),
    (
        "an object that is on a ground, and that is behind a white line.\navailable predicates: on,behind",
        "cond1(X):-on(X,Y),type(Y,ground).\ncond2(X):-behind(X,Y),type(Y,whiteline).\ntarget(X):-cond1(X),cond2(X)",
    ),
    (
        "an object that is near a desk and against wall.\navailable predicates: near,against",
        "cond1(X):-near(X,Y),type(Y,desk).\ncond2(X):-against(X,Y),type(Y,wall).\ntarget(X):-cond1(X),cond2(X).",
    ),
    (
        "an object that has sides, that is on a pole, and that is above a stop sign.\navailable predicates: has,on,above",
        "cond1(X):-has(X,Y),type(Y,sides).\ncond2(X):-on(X,Y),type(Y,pole).\ncond3(X):-above(X,Y),type(Y,stopsign).\ntarget(X):-cond1(X),cond2(X),cond3(X).",
    ),
    (
        "an object that is wearing a shirt, that has a hair, and that is wearing shoes.\navailable predicates: wearing,has,wearing",
        "cond1(X):-wearing(X,Y),type(Y,shirt).\ncond2(X):-has(X,Y),type(Y,hair).\ncond3(X):-wearing(X,Y),type(Y,shoes).\ntarget(X):-cond1(X),cond2(X),cond3(X).",
    ),
];

/// Instruction for the predicate-extraction call that precedes rule generation in CoT mode.
pub const PREDICATE_EXTRACTION_PROMPT: &str = "Given a deictic representation, list the predicates (relations between objects) that appear in the sentence.
Write multi-word predicates with underscores, e.g. next_to.
Answer with a comma-separated list only, e.g.: on,holding";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub user: String,
    pub assistant: String,
}

pub fn default_few_shot() -> Vec<FewShotExample> {
    FEW_SHOT
        .iter()
        .map(|(u, a)| FewShotExample {
            user: u.to_string(),
            assistant: a.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub few_shot: Vec<FewShotExample>,
    pub deictic: String,
    pub user: String,
    pub cot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulegenConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Environment variable holding the API key; the key itself never appears in config files.
    pub api_key_env_var: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    pub initial_backoff_ms: u64,
    /// Run a predicate-extraction call before rule generation.
    pub cot: bool,
    /// Re-prompts allowed after an invalid reply.
    pub repair_attempts: u32,
}

impl Default for RulegenConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_retries: 3,
            timeout_secs: 60.0,
            initial_backoff_ms: 500,
            cot: false,
            repair_attempts: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum RulegenError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("no recorded exchange matches the request (last user message: {0:?})")]
    FixtureMiss(String),
    #[error("invalid fixture file: {0}")]
    Fixture(String),
    #[error("empty deictic prompt")]
    EmptyPrompt,
    #[error("structured prompt term `{0}` cannot be used as a symbol")]
    InvalidTerm(String),
}

fn user_turn(deictic: &str, predicates: &[String]) -> String {
    if predicates.is_empty() {
        deictic.to_string()
    } else {
        format!("{deictic}\navailable predicates: {}", predicates.join(","))
    }
}

/// Assembles system prompt, few-shot examples and the user turn.
/// The predicates line is omitted when `predicates` is empty.
pub fn build_prompt(deictic: &str, predicates: &[String], cfg: &RulegenConfig) -> Result<PromptBundle, RulegenError> {
    let deictic = deictic.trim();
    if deictic.is_empty() {
        return Err(RulegenError::EmptyPrompt);
    }
    Ok(PromptBundle {
        system: SYSTEM_PROMPT.to_string(),
        few_shot: default_few_shot(),
        deictic: deictic.to_string(),
        user: user_turn(deictic, predicates),
        cot: cfg.cot,
    })
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut m = vec![ChatMessage::system(&self.system)];
        for ex in &self.few_shot {
            m.push(ChatMessage::user(&ex.user));
            m.push(ChatMessage::assistant(&ex.assistant));
        }
        m.push(ChatMessage::user(&self.user));
        m
    }

    fn predicate_request(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(PREDICATE_EXTRACTION_PROMPT), ChatMessage::user(&self.deictic)]
    }
}

/// Splits a predicate-extraction reply into canonical predicate names, keeping order.
pub fn parse_predicate_list(reply: &str) -> Vec<String> {
    let line = reply
        .lines()
        .map(str::trim)
        .rev()
        .find(|l| !l.is_empty() && !l.starts_with("```"))
        .unwrap_or("");
    let line = line
        .strip_prefix("available predicates:")
        .or_else(|| line.strip_prefix("predicates:"))
        .unwrap_or(line);
    line.split(',').filter_map(|p| canonical_predicate(p.trim().trim_matches('`'))).collect()
}

fn request(cfg: &RulegenConfig, messages: Vec<ChatMessage>) -> ChatRequest {
    ChatRequest {
        model: cfg.model_name.clone(),
        messages,
        temperature: cfg.temperature,
    }
}

fn rule_messages(bundle: &PromptBundle, backend: &dyn ChatBackend, cfg: &RulegenConfig) -> Result<Vec<ChatMessage>, RulegenError> {
    if !bundle.cot {
        return Ok(bundle.messages());
    }
    let reply = backend.complete(&request(cfg, bundle.predicate_request()))?;
    let mut b = bundle.clone();
    b.user = user_turn(&b.deictic, &parse_predicate_list(&reply));
    Ok(b.messages())
}

/// Sends the bundle and returns the assistant reply verbatim. In CoT mode the
/// predicates are first extracted by a separate call and injected into the user turn.
pub fn request_rules(bundle: &PromptBundle, backend: &dyn ChatBackend, cfg: &RulegenConfig) -> Result<String, RulegenError> {
    let messages = rule_messages(bundle, backend, cfg)?;
    backend.complete(&request(cfg, messages))
}

/// Requests rules and validates them, re-prompting with the violations on failure.
pub fn generate_rules(
    deictic: &str,
    predicates: &[String],
    backend: &dyn ChatBackend,
    cfg: &RulegenConfig,
) -> Result<Program, RulegenError> {
    let bundle = build_prompt(deictic, predicates, cfg)?;
    let mut messages = rule_messages(&bundle, backend, cfg)?;
    let mut reply = backend.complete(&request(cfg, messages.clone()))?;
    let mut attempts = 0;
    loop {
        match validate_rules(&reply, predicates) {
            Ok(p) => return Ok(p),
            Err(e) if attempts < cfg.repair_attempts => {
                log::info!("invalid rules for {deictic:?}: {e}; re-prompting");
                messages.push(ChatMessage::assistant(&reply));
                messages.push(ChatMessage::user(&repair_message(&e)));
                reply = backend.complete(&request(cfg, messages.clone()))?;
                attempts += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

pub fn repair_message(e: &FormatError) -> String {
    format!("The rules above are invalid:\n{e}\nReply with the corrected rules only, one per line, in the required format.")
}

/// Builds `condI(X):-relI(X,Y),type(Y,attrI).` per pair plus `target(X):-cond1(X),...`.
/// Relations and attributes are canonicalized (`parked on` becomes `parked_on`,
/// `white line` becomes `whiteline`).
pub fn template_rulegen<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)]) -> Result<Program, RulegenError> {
    if pairs.is_empty() {
        return Err(RulegenError::EmptyPrompt);
    }
    let x = || Term::Var("X".into());
    let y = || Term::Var("Y".into());
    let mut rules = Vec::with_capacity(pairs.len() + 1);
    let mut conds = Vec::with_capacity(pairs.len());
    for (i, (rel, attr)) in pairs.iter().enumerate() {
        let rel = canonical_predicate(rel.as_ref()).ok_or_else(|| RulegenError::InvalidTerm(rel.as_ref().into()))?;
        let attr = canonical_name(attr.as_ref()).ok_or_else(|| RulegenError::InvalidTerm(attr.as_ref().into()))?;
        let cond = Atom::new(&format!("cond{}", i + 1), vec![x()]).expect("valid name");
        let body = vec![
            Atom::new(&rel, vec![x(), y()]).expect("canonical predicate"),
            Atom::new(TYPE_PREDICATE, vec![y(), Term::Const(attr)]).expect("canonical name"),
        ];
        rules.push(Rule::new(cond.clone(), body));
        conds.push(cond);
    }
    rules.push(Rule::new(Atom::new(TARGET_PREDICATE, vec![x()]).expect("valid name"), conds));
    // duplicate pairs would yield distinct cond heads, so construction cannot fail
    Ok(Program::new(rules).expect("template program is well formed"))
}
