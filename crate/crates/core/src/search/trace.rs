use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{bisection_search, progressive_search, ConfigEvaluator, SearchSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Bisection,
    Progressive,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bisection" => Ok(Algorithm::Bisection),
            "progressive" => Ok(Algorithm::Progressive),
            _ => Err(Error::Config(format!("unknown search `{s}` (expected bisection or progressive)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Bisection => "bisection",
            Algorithm::Progressive => "progressive",
        })
    }
}

impl Algorithm {
    pub fn run<E: ConfigEvaluator + ?Sized>(
        self,
        eval: &E,
        ordering: &[usize],
        spec: &SearchSpec,
    ) -> Result<SearchOutcome> {
        match self {
            Algorithm::Bisection => bisection_search(eval, ordering, spec),
            Algorithm::Progressive => progressive_search(eval, ordering, spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Baseline,
    Accept,
    Reject,
    /// Re-evaluation of a level's final configuration passed.
    Revalidated,
    /// Re-evaluation failed; the threshold was lowered.
    RevalidationFailed,
}

impl Decision {
    pub fn passed(self) -> bool {
        matches!(self, Decision::Baseline | Decision::Accept | Decision::Revalidated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Bit level being searched (the baseline width for the first step).
    pub level: u8,
    pub config_hash: String,
    pub bits: Vec<u8>,
    pub accuracy: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub algorithm: Algorithm,
    pub baseline_accuracy: f64,
    /// `target · baseline`.
    pub threshold: f64,
    pub steps: Vec<TraceStep>,
    /// Evaluations per bit level; the baseline evaluation counts under the
    /// baseline width.
    pub eval_count: BTreeMap<u8, usize>,
    pub final_bits: Vec<u8>,
    /// The revalidation guard lowered a threshold.
    pub revalidated: bool,
    pub budget_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub bits: Vec<u8>,
    pub accuracy: f64,
    pub trace: SearchTrace,
}

impl SearchOutcome {
    /// At least one layer below the baseline width.
    pub fn quantizes_anything(&self) -> bool {
        let base = self.trace.steps.first().map(|s| s.bits[0]).unwrap_or(16);
        self.bits.iter().any(|&b| b < base)
    }
}

pub fn config_hash(bits: &[u8]) -> String {
    let digest = Sha256::digest(bits);
    hex::encode(&digest[..8])
}

/// Evaluation bookkeeping shared by the searches.
pub(crate) struct Recorder<'a, E: ?Sized> {
    eval: &'a E,
    max_evals: usize,
    pub trace: SearchTrace,
}

impl<'a, E: ConfigEvaluator + ?Sized> Recorder<'a, E> {
    pub fn new(eval: &'a E, algorithm: Algorithm, max_evals: usize) -> Self {
        Recorder {
            eval,
            max_evals,
            trace: SearchTrace {
                algorithm,
                baseline_accuracy: f64::NAN,
                threshold: f64::NAN,
                steps: vec![],
                eval_count: BTreeMap::new(),
                final_bits: vec![],
                revalidated: false,
                budget_exceeded: false,
            },
        }
    }

    pub fn evaluations(&self) -> usize {
        self.trace.steps.len()
    }

    /// `None` once the budget is spent.
    pub fn evaluate(&mut self, level: u8, bits: &[u8]) -> Result<Option<f64>> {
        if self.evaluations() >= self.max_evals {
            self.trace.budget_exceeded = true;
            return Ok(None);
        }
        let acc = self.eval.accuracy(bits)?;
        *self.trace.eval_count.entry(level).or_default() += 1;
        self.trace.steps.push(TraceStep {
            level,
            config_hash: config_hash(bits),
            bits: bits.to_vec(),
            accuracy: acc,
            decision: Decision::Reject,
        });
        Ok(Some(acc))
    }

    pub fn decide(&mut self, d: Decision) {
        if let Some(s) = self.trace.steps.last_mut() {
            s.decision = d;
        }
    }

    pub fn passed_before(&self, bits: &[u8]) -> bool {
        self.trace.steps.iter().any(|s| s.decision.passed() && s.bits == bits)
    }

    /// Evaluates the all-baseline configuration and fixes the threshold.
    pub fn baseline(&mut self, spec: &SearchSpec) -> Result<Vec<u8>> {
        let base = vec![spec.baseline_bits(); self.eval.layer_count()];
        let acc = self.evaluate(spec.baseline_bits(), &base)?.ok_or(Error::BudgetExceeded(self.max_evals))?;
        self.decide(Decision::Baseline);
        self.trace.baseline_accuracy = acc;
        self.trace.threshold = spec.accuracy_target * acc;
        Ok(base)
    }

    pub fn finish(mut self, bits: Vec<u8>) -> SearchOutcome {
        let accuracy = self
            .trace
            .steps
            .iter()
            .rev()
            .find(|s| s.decision.passed() && s.bits == bits)
            .map(|s| s.accuracy)
            .unwrap_or(self.trace.baseline_accuracy);
        self.trace.final_bits = bits.clone();
        SearchOutcome { bits, accuracy, trace: self.trace }
    }
}

/// Answers from a recorded trace; unseen configurations are an error.
struct Replay {
    n: usize,
    answers: HashMap<Vec<u8>, f64>,
}

impl ConfigEvaluator for Replay {
    fn layer_count(&self) -> usize {
        self.n
    }

    fn accuracy(&self, bits: &[u8]) -> Result<f64> {
        self.answers
            .get(bits)
            .copied()
            .ok_or_else(|| Error::Config(format!("configuration {} not in trace", config_hash(bits))))
    }
}

impl SearchTrace {
    /// Re-runs the search answering every evaluation from this trace and
    /// returns the resulting configuration.
    pub fn replay(&self, ordering: &[usize], spec: &SearchSpec) -> Result<Vec<u8>> {
        let n = self.steps.first().map(|s| s.bits.len()).ok_or_else(|| Error::Config("empty trace".into()))?;
        let answers = self.steps.iter().map(|s| (s.bits.clone(), s.accuracy)).collect();
        let replay = Replay { n, answers };
        Ok(self.algorithm.run(&replay, ordering, spec)?.bits)
    }
}
