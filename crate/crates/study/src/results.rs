//! Fooled-rate aggregation over completed sessions.

use chromalab_core::metrics::bootstrap_mean_se;
use serde::{Deserialize, Serialize};

use crate::session::Session;
use crate::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const BOOTSTRAP_SEED: u64 = 0;
/// Sessions need at least this many of their sentinels right to count as
/// attentive.
pub const SENTINEL_PASS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Fraction of scored trials on which the real image was picked as fake.
    pub fooled_rate: f64,
    pub se: f64,
    pub n_trials: usize,
    pub n_participants: usize,
    /// Fraction of sentinel trials answered correctly.
    pub sentinel_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub algorithm: String,
    /// Every completed session.
    pub all: Summary,
    /// Completed sessions that passed the sentinel check; absent when none
    /// did.
    pub attentive: Option<Summary>,
    pub flagged_sessions: usize,
}

fn summarize(sessions: &[&Session]) -> Result<Summary> {
    let outcomes: Vec<bool> = sessions.iter().flat_map(|s| s.fooled()).collect();
    let est = bootstrap_mean_se(&outcomes, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED)?;
    let (right, total) = sessions
        .iter()
        .map(|s| s.sentinel_score())
        .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    Ok(Summary {
        fooled_rate: est.mean,
        se: est.se,
        n_trials: outcomes.len(),
        n_participants: sessions.len(),
        sentinel_accuracy: if total == 0 { f64::NAN } else { right as f64 / total as f64 },
    })
}

/// Aggregates the completed sessions for `algorithm`. Trials are pooled in
/// the order the sessions are given, then in trial order.
pub fn aggregate<'a>(sessions: impl IntoIterator<Item = &'a Session>, algorithm: &str) -> Result<StudyResults> {
    let done: Vec<&Session> = sessions
        .into_iter()
        .filter(|s| s.algorithm == algorithm && s.is_complete())
        .collect();
    if done.is_empty() {
        return Err(Error::NoCompletedSessions(algorithm.to_string()));
    }
    let attentive: Vec<&Session> = done.iter().copied().filter(|s| s.sentinel_score().0 >= SENTINEL_PASS).collect();
    Ok(StudyResults {
        algorithm: algorithm.to_string(),
        all: summarize(&done)?,
        attentive: if attentive.is_empty() { None } else { Some(summarize(&attentive)?) },
        flagged_sessions: done.len() - attentive.len(),
    })
}
