//! Scorer interface consulted by the decoder, plus the simple scorers and
//! the client for external scorers speaking the line protocol.

use std::sync::Mutex;

use thiserror::Error;

use crate::protocol::{Channel, ProtocolError};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("scorer returned {got} values for {expected} candidates")]
    Arity { expected: usize, got: usize },
    #[error("scorer returned a non-finite value for candidate {0}")]
    NonFinite(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Per-question scoring context.
pub trait ScoringSession {
    /// Log-probabilities for each candidate next token after `prefix`.
    /// Values need not be normalized; the decoder renormalizes over the
    /// candidate set.
    fn score(&mut self, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>, ScoreError>;
}

pub trait Scorer: Send + Sync {
    fn session<'a>(&'a self, question: &str) -> Result<Box<dyn ScoringSession + 'a>, ScoreError>;
}

/// Log-softmax over `scores`.
pub fn normalize_logprobs(scores: &[f64]) -> Vec<f64> {
    let z = logsumexp(scores);
    scores.iter().map(|s| s - z).collect()
}

pub fn logsumexp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Checks arity and finiteness, then normalizes.
pub fn checked_logprobs(scores: Vec<f64>, expected: usize) -> Result<Vec<f64>, ScoreError> {
    if scores.len() != expected {
        return Err(ScoreError::Arity {
            expected,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ScoreError::NonFinite(i));
    }
    Ok(normalize_logprobs(&scores))
}

/// Equal mass on every candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl Scorer for UniformScorer {
    fn session<'a>(&'a self, _question: &str) -> Result<Box<dyn ScoringSession + 'a>, ScoreError> {
        Ok(Box::new(UniformScorer))
    }
}

impl ScoringSession for UniformScorer {
    fn score(&mut self, _prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>, ScoreError> {
        Ok(vec![0.0; candidates.len()])
    }
}

/// Pseudo-random scores in `[-spread, 0]`, a pure function of
/// (seed, question, prefix, candidate) so call order does not matter.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
    pub spread: f64,
}

impl RandomScorer {
    pub fn new(seed: u64, spread: f64) -> Self {
        Self { seed, spread }
    }
}

fn mix(h: u64, x: u64) -> u64 {
    let mut z = (h ^ x).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct RandomSession {
    base: u64,
    spread: f64,
}

impl Scorer for RandomScorer {
    fn session<'a>(&'a self, question: &str) -> Result<Box<dyn ScoringSession + 'a>, ScoreError> {
        let base = question.bytes().fold(mix(self.seed, 0x51), |h, b| mix(h, b as u64));
        Ok(Box::new(RandomSession {
            base,
            spread: self.spread,
        }))
    }
}

impl ScoringSession for RandomSession {
    fn score(&mut self, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>, ScoreError> {
        let h = prefix.iter().fold(mix(self.base, 0xabc), |h, &t| mix(h, t as u64));
        Ok(candidates
            .iter()
            .map(|&c| {
                let u = (mix(h, 0x1000 + c as u64) >> 11) as f64 / (1u64 << 53) as f64;
                -self.spread * u
            })
            .collect())
    }
}

/// Scorer living in another process, reached over the line protocol.
pub struct ProtocolScorer {
    channel: Mutex<Channel>,
    vocab: Vocabulary,
}

impl ProtocolScorer {
    /// Performs the handshake with the vocabulary fingerprint.
    pub fn connect(mut channel: Channel, vocab: Vocabulary) -> Result<Self, ScoreError> {
        channel.handshake(&vocab.hash())?;
        Ok(Self {
            channel: Mutex::new(channel),
            vocab,
        })
    }
}

struct ProtocolSession<'a> {
    scorer: &'a ProtocolScorer,
    question: String,
}

impl Scorer for ProtocolScorer {
    fn session<'a>(&'a self, question: &str) -> Result<Box<dyn ScoringSession + 'a>, ScoreError> {
        Ok(Box::new(ProtocolSession {
            scorer: self,
            question: question.to_string(),
        }))
    }
}

impl ScoringSession for ProtocolSession<'_> {
    fn score(&mut self, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>, ScoreError> {
        let text = |ids: &[TokenId]| ids.iter().map(|&t| self.scorer.vocab.token(t).to_string()).collect();
        let mut channel = self.scorer.channel.lock().expect("scorer channel poisoned");
        Ok(channel.score(&self.question, text(prefix), text(candidates))?)
    }
}
