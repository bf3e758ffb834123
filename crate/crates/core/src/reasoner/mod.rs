//! Differentiable forward chaining by message passing on a [`ReasoningGraph`].
//!
//! One inference step first refreshes every conjunction node with the
//! product of its body atoms, then refreshes every atom with the weighted
//! messages of the conjunctions that derive it:
//!
//! ```text
//! conj_k <- softor(conj_k, prod_{j in body(k)} atom_j)
//! atom_i <- clamp01(softor(atom_i, softor_{k -> i}(w_rule(k) * conj_k)))
//! ```
//!
//! Values never decrease from one step to the next. The forward pass can
//! record a tape so that [`DifferentiableReasoner::backward`] returns exact
//! gradients with respect to the rule weights and the initial valuation.

mod softor;
mod targets;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::ReasoningGraph;
use crate::scalar::Scalar;
use crate::valuation::ValuationVector;

pub use softor::{softor, softor2, softor2_grad, softor_grad};
pub use targets::{extract_targets, TargetPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Smoothing parameter of the log-sum-exp disjunction.
    pub gamma: f64,
    /// Number of message-passing steps.
    pub steps: usize,
    /// Targets must score strictly above this value to be reported.
    pub target_threshold: f64,
    /// Score range for the random fallback object.
    pub fallback_score_range: [f64; 2],
    pub rng_seed: u64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            steps: 2,
            target_threshold: 0.2,
            fallback_score_range: [0.1, 0.4],
            rng_seed: 0,
        }
    }
}

impl ReasonerConfig {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ReasonError> {
        let [lo, hi] = self.fallback_score_range;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ReasonError::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.steps == 0 {
            return Err(ReasonError::InvalidConfig("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.target_threshold) {
            return Err(ReasonError::InvalidConfig(format!(
                "target threshold {} outside [0, 1]",
                self.target_threshold
            )));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(ReasonError::InvalidConfig(format!("invalid fallback range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReasonError {
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("backward requires a recorded forward pass")]
    TapeMissing,
    #[error("the program defines no `target` predicate")]
    NoTargetAtoms,
    #[error("invalid reasoner configuration: {0}")]
    InvalidConfig(String),
}

/// Intermediate values of one forward pass, one entry per step.
#[derive(Debug, Clone)]
struct Tape<T> {
    initial: Vec<T>,
    weights: Vec<T>,
    /// Atom values after each step (clamped).
    atoms: Vec<Vec<T>>,
    /// Atom values before clamping.
    raw: Vec<Vec<T>>,
    /// Conjunction values after each step.
    conj: Vec<Vec<T>>,
    /// Body products computed in each step.
    products: Vec<Vec<T>>,
    /// Weighted disjunction of incoming messages, per atom and step.
    messages: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// Indexed by rule position in the source program.
    pub weights: Vec<T>,
    /// Indexed by atom node id.
    pub initial: Vec<T>,
}

/// Forward/backward driver bound to one graph and configuration.
#[derive(Debug)]
pub struct DifferentiableReasoner<'g, T> {
    graph: &'g ReasoningGraph,
    cfg: ReasonerConfig,
    tape: Option<Tape<T>>,
}

impl<'g, T: Scalar> DifferentiableReasoner<'g, T> {
    pub fn new(graph: &'g ReasoningGraph, cfg: ReasonerConfig) -> Result<Self, ReasonError> {
        cfg.validate()?;
        Ok(Self { graph, cfg, tape: None })
    }

    pub fn graph(&self) -> &'g ReasoningGraph {
        self.graph
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.cfg
    }

    /// Pads a fact valuation to one value per atom node; derived atoms start at 0.
    fn initial_state(&self, v0: &ValuationVector<T>) -> Result<Vec<T>, ReasonError> {
        let g = self.graph;
        if v0.len() != g.atom_count() && v0.len() != g.fact_count() {
            return Err(ReasonError::DimensionMismatch {
                what: "initial valuation",
                expected: g.atom_count(),
                found: v0.len(),
            });
        }
        let mut x = v0.as_slice().to_vec();
        x.resize(g.atom_count(), T::zero());
        Ok(x)
    }

    fn check_weights(&self, weights: &[T]) -> Result<(), ReasonError> {
        if weights.len() != self.graph.rule_count() {
            return Err(ReasonError::DimensionMismatch {
                what: "rule weights",
                expected: self.graph.rule_count(),
                found: weights.len(),
            });
        }
        Ok(())
    }

    /// Runs the configured number of steps without recording a tape.
    pub fn infer(&self, v0: &ValuationVector<T>, weights: &[T]) -> Result<ValuationVector<T>, ReasonError> {
        self.check_weights(weights)?;
        let x0 = self.initial_state(v0)?;
        Ok(ValuationVector::from_clamped(self.run(x0, weights, None)))
    }

    /// Runs the forward pass and keeps its tape for a later [`Self::backward`].
    pub fn forward(&mut self, v0: &ValuationVector<T>, weights: &[T]) -> Result<ValuationVector<T>, ReasonError> {
        self.check_weights(weights)?;
        let x0 = self.initial_state(v0)?;
        let mut tape = Tape {
            initial: x0.clone(),
            weights: weights.to_vec(),
            atoms: Vec::new(),
            raw: Vec::new(),
            conj: Vec::new(),
            products: Vec::new(),
            messages: Vec::new(),
        };
        let out = self.run(x0, weights, Some(&mut tape));
        self.tape = Some(tape);
        Ok(ValuationVector::from_clamped(out))
    }

    fn run(&self, mut atoms: Vec<T>, weights: &[T], mut tape: Option<&mut Tape<T>>) -> Vec<T> {
        let g = self.graph;
        let gamma = T::of(self.cfg.gamma);
        let mut conj = vec![T::zero(); g.conj_count()];
        let mut products = vec![T::zero(); g.conj_count()];
        let mut messages = vec![T::zero(); g.atom_count()];
        let mut raw = vec![T::zero(); g.atom_count()];
        let mut scratch = Vec::new();
        for _ in 0..self.cfg.steps {
            for (k, node) in g.conj_nodes().iter().enumerate() {
                let p = node.body.iter().fold(T::one(), |acc, &j| acc * atoms[j]);
                products[k] = p;
                conj[k] = softor2(conj[k], p, gamma);
            }
            let mut next = atoms.clone();
            for i in 0..g.atom_count() {
                let incoming = g.incoming(i);
                if incoming.is_empty() {
                    raw[i] = atoms[i];
                    continue;
                }
                scratch.clear();
                scratch.extend(incoming.iter().map(|&k| weights[g.conj_nodes()[k].rule] * conj[k]));
                let m = softor(&scratch, gamma);
                messages[i] = m;
                raw[i] = softor2(atoms[i], m, gamma);
                next[i] = raw[i].max(T::zero()).min(T::one());
            }
            atoms = next;
            if let Some(t) = tape.as_deref_mut() {
                t.atoms.push(atoms.clone());
                t.raw.push(raw.clone());
                t.conj.push(conj.clone());
                t.products.push(products.clone());
                t.messages.push(messages.clone());
            }
        }
        atoms
    }

    /// Reverse pass: given dL/d(final atom values), returns dL/d(weights) and dL/d(initial values).
    ///
    /// Clamping passes the gradient through unless the raw value exceeded 1.
    pub fn backward(&self, loss_grad: &[T]) -> Result<Gradients<T>, ReasonError> {
        let tape = self.tape.as_ref().ok_or(ReasonError::TapeMissing)?;
        let g = self.graph;
        if loss_grad.len() != g.atom_count() {
            return Err(ReasonError::DimensionMismatch {
                what: "loss gradient",
                expected: g.atom_count(),
                found: loss_grad.len(),
            });
        }
        let gamma = T::of(self.cfg.gamma);
        let nodes = g.conj_nodes();
        let mut g_atoms = loss_grad.to_vec();
        let mut g_conj = vec![T::zero(); g.conj_count()];
        let mut g_weights = vec![T::zero(); g.rule_count()];
        let mut scratch = Vec::new();
        let mut soft = Vec::new();
        for t in (0..self.cfg.steps).rev() {
            let prev_atoms = if t == 0 { &tape.initial } else { &tape.atoms[t - 1] };
            let conj_now = &tape.conj[t];
            let mut g_prev_atoms = vec![T::zero(); g.atom_count()];
            for i in 0..g.atom_count() {
                let incoming = g.incoming(i);
                if incoming.is_empty() {
                    g_prev_atoms[i] += g_atoms[i];
                    continue;
                }
                let raw = tape.raw[t][i];
                if raw > T::one() || raw < T::zero() {
                    continue;
                }
                let g_raw = g_atoms[i];
                if g_raw == T::zero() {
                    continue;
                }
                let (d_prev, d_msg) = softor2_grad(prev_atoms[i], tape.messages[t][i], gamma);
                g_prev_atoms[i] += g_raw * d_prev;
                let g_msg = g_raw * d_msg;
                scratch.clear();
                scratch.extend(incoming.iter().map(|&k| tape.weights[nodes[k].rule] * conj_now[k]));
                softor_grad(&scratch, gamma, &mut soft);
                for (&k, &pi) in incoming.iter().zip(&soft) {
                    let rule = nodes[k].rule;
                    g_conj[k] += g_msg * pi * tape.weights[rule];
                    g_weights[rule] += g_msg * pi * conj_now[k];
                }
            }
            let prev_conj: &[T] = if t == 0 { &[] } else { &tape.conj[t - 1] };
            let mut g_prev_conj = vec![T::zero(); g.conj_count()];
            for (k, node) in nodes.iter().enumerate() {
                if g_conj[k] == T::zero() {
                    continue;
                }
                let before = if t == 0 { T::zero() } else { prev_conj[k] };
                let (d_prev, d_prod) = softor2_grad(before, tape.products[t][k], gamma);
                g_prev_conj[k] = g_conj[k] * d_prev;
                let g_prod = g_conj[k] * d_prod;
                // product rule with prefix/suffix products, robust to zero factors
                let body = &node.body;
                let mut suffix = vec![T::one(); body.len() + 1];
                for p in (0..body.len()).rev() {
                    suffix[p] = suffix[p + 1] * prev_atoms[body[p]];
                }
                let mut prefix = T::one();
                for (p, &j) in body.iter().enumerate() {
                    g_prev_atoms[j] += g_prod * prefix * suffix[p + 1];
                    prefix *= prev_atoms[j];
                }
            }
            g_atoms = g_prev_atoms;
            g_conj = g_prev_conj;
        }
        Ok(Gradients {
            weights: g_weights,
            initial: g_atoms,
        })
    }
}

/// Stateless forward pass.
pub fn forward<T: Scalar>(
    graph: &ReasoningGraph,
    v0: &ValuationVector<T>,
    weights: &[T],
    cfg: &ReasonerConfig,
) -> Result<ValuationVector<T>, ReasonError> {
    DifferentiableReasoner::new(graph, cfg.clone())?.infer(v0, weights)
}

/// Stateless reverse pass; re-runs the forward computation to build its tape.
pub fn backward<T: Scalar>(
    graph: &ReasoningGraph,
    v0: &ValuationVector<T>,
    weights: &[T],
    cfg: &ReasonerConfig,
    loss_grad: &[T],
) -> Result<Gradients<T>, ReasonError> {
    let mut r = DifferentiableReasoner::new(graph, cfg.clone())?;
    r.forward(v0, weights)?;
    r.backward(loss_grad)
}
