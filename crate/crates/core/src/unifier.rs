//! Embedding-based rewriting of rule vocabulary onto scene vocabulary.
//!
//! A rule may mention `type(Y,boat)` while the scene only knows `barge`, or
//! `next_to` where the scene says `near`. Each such term is replaced by its
//! most similar counterpart among the scene's terms of the same kind.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::http::{self, RetryPolicy, ServiceError};
use crate::logic::{Atom, FactSet, Program, Rule, Term, TARGET_PREDICATE, TYPE_PREDICATE};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Dot product of L2-normalised vectors.
    #[default]
    Cosine,
    /// Raw dot product.
    Dot,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty candidate vocabulary")]
    EmptyVocabulary,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Lookup key: lowercase with whitespace, `_` and `-` removed, so that
/// `parked on`, `parked_on` and `Parked-On` share one entry.
pub fn embedding_key(term: &str) -> String {
    term.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<T> {
    dim: usize,
    vectors: HashMap<String, Vec<T>>,
}

impl<T: Scalar> EmbeddingStore<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Adds or replaces a vector. Fails if its length differs from the store dimension.
    pub fn insert(&mut self, term: &str, v: Vec<T>) -> Result<(), EmbeddingError> {
        if v.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                line: 0,
                expected: self.dim,
                found: v.len(),
            });
        }
        self.vectors.insert(embedding_key(term), v);
        Ok(())
    }

    pub fn get(&self, term: &str) -> Option<&[T]> {
        self.vectors.get(&embedding_key(term)).map(Vec::as_slice)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.vectors.contains_key(&embedding_key(term))
    }

    /// Reads `term v1 ... vd` lines. A leading word2vec `count dim` header is skipped,
    /// as are blank lines. Multi-word terms may use `_` in place of spaces.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        let mut store: Option<Self> = None;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            if fields.len() < 2 {
                return Err(EmbeddingError::Parse {
                    line: lineno,
                    message: "a term needs at least one component".into(),
                });
            }
            let values = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map(T::of).map_err(|e| EmbeddingError::Parse {
                        line: lineno,
                        message: format!("`{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<T>, _>>()?;
            let s = store.get_or_insert_with(|| Self::new(values.len()));
            if values.len() != s.dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: lineno,
                    expected: s.dim,
                    found: values.len(),
                });
            }
            s.vectors.insert(embedding_key(fields[0]), values);
        }
        Ok(store.unwrap_or_else(|| Self::new(0)))
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::from_reader(fs::File::open(path)?)
    }

    /// Fetches vectors for `terms` not yet in the store.
    pub fn fill_from(&mut self, provider: &dyn EmbeddingProvider, terms: &[String]) -> Result<(), EmbeddingError> {
        let missing: Vec<String> = terms.iter().filter(|t| !self.contains(t)).cloned().collect();
        if missing.is_empty() {
            return Ok(());
        }
        let vectors = provider.embed(&missing)?;
        for (term, v) in missing.iter().zip(vectors) {
            if self.vectors.is_empty() && self.dim == 0 {
                self.dim = v.len();
            }
            self.insert(term, v.into_iter().map(T::of).collect())?;
        }
        Ok(())
    }

    fn score(&self, a: &[T], b: &[T], similarity: Similarity) -> T {
        let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
        match similarity {
            Similarity::Dot => dot,
            Similarity::Cosine => {
                let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
                let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
                if na == T::zero() || nb == T::zero() {
                    T::zero()
                } else {
                    dot / (na * nb)
                }
            }
        }
    }
}

/// Most similar vocabulary term to `x`. Ties go to the lexicographically smallest term.
pub fn nearest_term<T: Scalar, S: AsRef<str>>(
    x: &str,
    vocab: &[S],
    store: &EmbeddingStore<T>,
    similarity: Similarity,
) -> Result<(String, T), EmbeddingError> {
    let query = store.get(x).ok_or_else(|| EmbeddingError::MissingEmbedding(x.to_string()))?;
    let mut sorted: Vec<&str> = vocab.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best: Option<(&str, T)> = None;
    for term in sorted {
        let v = store
            .get(term)
            .ok_or_else(|| EmbeddingError::MissingEmbedding(term.to_string()))?;
        let s = store.score(query, v, similarity);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((term, s));
        }
    }
    best.map(|(t, s)| (t.to_string(), s)).ok_or(EmbeddingError::EmptyVocabulary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Predicate,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub original: String,
    pub replacement: String,
    pub similarity: f64,
    pub kind: TermKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnificationReport {
    pub substitutions: Vec<Substitution>,
    pub unresolved: Vec<String>,
}

impl UnificationReport {
    pub fn is_identity(&self) -> bool {
        self.substitutions.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnifierConfig {
    pub similarity: Similarity,
    /// Predicates that are never rewritten, in addition to `target`, `type`,
    /// `condN` and every predicate defined by a rule.
    #[serde(default)]
    pub frozen_predicates: Vec<String>,
}

/// Relation predicates (with arity) and `type` attribute constants of a fact set.
#[derive(Debug, Clone, Default)]
pub struct SceneVocabulary {
    pub predicates: BTreeMap<String, BTreeSet<usize>>,
    pub attributes: BTreeSet<String>,
}

impl SceneVocabulary {
    pub fn of(facts: &FactSet) -> Self {
        let mut v = Self::default();
        for a in facts.iter() {
            if a.name() == TYPE_PREDICATE {
                if let Some(c) = a.args.get(1) {
                    v.attributes.insert(c.name().to_string());
                }
            } else {
                v.predicates
                    .entry(a.name().to_string())
                    .or_default()
                    .insert(a.args.len());
            }
        }
        v
    }

    fn predicates_of_arity(&self, arity: usize) -> Vec<&str> {
        self.predicates
            .iter()
            .filter(|(_, ar)| ar.contains(&arity))
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

fn is_structural(name: &str, defined: &HashSet<String>, cfg: &UnifierConfig) -> bool {
    name == TARGET_PREDICATE
        || name == TYPE_PREDICATE
        || (name.starts_with("cond") && name[4..].chars().all(|c| c.is_ascii_digit()))
        || defined.contains(name)
        || cfg.frozen_predicates.iter().any(|p| p == name)
}

/// Rewrites predicates and `type` attribute constants that the scene does not
/// know to their nearest scene counterparts. Terms without an embedding, or
/// without a candidate, are left alone and reported as unresolved.
pub fn unify_program<T: Scalar>(
    program: &Program,
    facts: &FactSet,
    store: &EmbeddingStore<T>,
    cfg: &UnifierConfig,
) -> (Program, UnificationReport) {
    let vocab = SceneVocabulary::of(facts);
    let defined: HashSet<String> = program.rules().iter().map(|r| r.head.name().to_string()).collect();
    let mut pred_map: HashMap<(String, usize), String> = HashMap::new();
    let mut const_map: HashMap<String, String> = HashMap::new();
    let mut report = UnificationReport::default();
    let mut unresolved = BTreeSet::new();

    let candidates_with_vectors = |terms: Vec<&str>| -> Vec<String> {
        terms.into_iter().filter(|t| store.contains(t)).map(str::to_string).collect()
    };

    for rule in program.rules() {
        for atom in rule.body.iter().chain(std::iter::once(&rule.head)) {
            let name = atom.name();
            let arity = atom.args.len();
            if !is_structural(name, &defined, cfg)
                && !vocab.predicates.get(name).is_some_and(|a| a.contains(&arity))
                && !pred_map.contains_key(&(name.to_string(), arity))
            {
                let cands = candidates_with_vectors(vocab.predicates_of_arity(arity));
                match nearest_term(name, &cands, store, cfg.similarity) {
                    Ok((rep, sim)) => {
                        report.substitutions.push(Substitution {
                            original: name.to_string(),
                            replacement: rep.clone(),
                            similarity: sim.as_f64(),
                            kind: TermKind::Predicate,
                        });
                        pred_map.insert((name.to_string(), arity), rep);
                    }
                    Err(_) => {
                        unresolved.insert(name.to_string());
                    }
                }
            }
            if name == TYPE_PREDICATE && arity == 2 {
                if let Term::Const(c) = &atom.args[1] {
                    if !vocab.attributes.contains(c) && !const_map.contains_key(c) {
                        let cands = candidates_with_vectors(vocab.attributes.iter().map(String::as_str).collect());
                        match nearest_term(c, &cands, store, cfg.similarity) {
                            Ok((rep, sim)) => {
                                report.substitutions.push(Substitution {
                                    original: c.clone(),
                                    replacement: rep.clone(),
                                    similarity: sim.as_f64(),
                                    kind: TermKind::Constant,
                                });
                                const_map.insert(c.clone(), rep);
                            }
                            Err(_) => {
                                unresolved.insert(c.clone());
                            }
                        }
                    }
                }
            }
        }
    }
    report.unresolved = unresolved.into_iter().collect();
    if report.substitutions.is_empty() {
        return (program.clone(), report);
    }

    let rewrite = |a: &Atom| -> Atom {
        let mut out = a.clone();
        if let Some(rep) = pred_map.get(&(a.name().to_string(), a.args.len())) {
            out.predicate.name = rep.clone();
        }
        if out.name() == TYPE_PREDICATE && out.args.len() == 2 {
            if let Term::Const(c) = &out.args[1] {
                if let Some(rep) = const_map.get(c) {
                    out.args[1] = Term::Const(rep.clone());
                }
            }
        }
        out
    };
    let rules: Vec<Rule> = program
        .rules()
        .iter()
        .map(|r| Rule::new(rewrite(&r.head), r.body.iter().map(&rewrite).collect()).with_weight(r.weight))
        .collect();
    match Program::new(rules) {
        Ok(p) => (p, report),
        Err(e) => {
            // a rewrite collapsed two rules or clashed arities; keep the original program
            log::warn!("unification produced an invalid program ({e}); leaving rules unchanged");
            let mut terms: BTreeSet<String> = report.unresolved.into_iter().collect();
            terms.extend(report.substitutions.into_iter().map(|s| s.original));
            (
                program.clone(),
                UnificationReport {
                    substitutions: Vec::new(),
                    unresolved: terms.into_iter().collect(),
                },
            )
        }
    }
}

/// Source of vectors for terms missing from a local store.
pub trait EmbeddingProvider {
    fn embed(&self, terms: &[String]) -> Result<Vec<Vec<f64>>, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingServiceConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; empty for none.
    pub api_key_env_var: String,
    pub max_retries: u32,
    pub timeout_secs: f64,
}

impl Default for EmbeddingServiceConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8080/v1/embeddings".into(),
            model_name: "text-embedding-3-small".into(),
            api_key_env_var: "EMBEDDING_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 30.0,
        }
    }
}

/// Client for an endpoint accepting `{"model", "input": [..]}` and answering
/// either `{"data": [{"embedding": [..]}, ..]}` or a bare array of vectors.
pub struct HttpEmbeddingClient {
    cfg: EmbeddingServiceConfig,
    client: reqwest::blocking::Client,
    key: Option<String>,
}

impl HttpEmbeddingClient {
    pub fn new(cfg: EmbeddingServiceConfig) -> Result<Self, ServiceError> {
        let key = http::read_api_key(&cfg.api_key_env_var)?;
        let client = http::build_client(Duration::from_secs_f64(cfg.timeout_secs))?;
        Ok(Self { cfg, client, key })
    }
}

fn parse_embeddings(v: &Value, expected: usize, url: &str) -> Result<Vec<Vec<f64>>, ServiceError> {
    let malformed = |m: &str| ServiceError::Malformed {
        url: url.to_string(),
        message: m.to_string(),
    };
    let items: Vec<&Value> = match v {
        Value::Array(a) => a.iter().collect(),
        Value::Object(o) => o
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing `data` array"))?
            .iter()
            .map(|d| d.get("embedding").unwrap_or(d))
            .collect(),
        _ => return Err(malformed("expected an array or object")),
    };
    if items.len() != expected {
        return Err(malformed(&format!("expected {expected} vectors, got {}", items.len())));
    }
    items
        .into_iter()
        .map(|item| {
            item.as_array()
                .ok_or_else(|| malformed("vector is not an array"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| malformed("non-numeric component")))
                .collect()
        })
        .collect()
}

impl EmbeddingProvider for HttpEmbeddingClient {
    fn embed(&self, terms: &[String]) -> Result<Vec<Vec<f64>>, ServiceError> {
        if terms.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.cfg.model_name, "input": terms });
        let policy = RetryPolicy {
            max_retries: self.cfg.max_retries,
            initial_backoff: Duration::from_millis(200),
            timeout: Duration::from_secs_f64(self.cfg.timeout_secs),
        };
        let reply = http::post_json(&self.client, &self.cfg.endpoint_url, self.key.as_deref(), &body, &policy)?;
        parse_embeddings(&reply, terms.len(), &self.cfg.endpoint_url)
    }
}
