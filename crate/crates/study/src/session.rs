//! One participant's pass through the protocol: practice trials with
//! feedback, then test trials with a few sentinel pairs mixed in.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{Manifest, Pair};
use crate::{Error, Result, EXPOSURE_MS, MIN_PAIRS, PRACTICE_TRIALS, SENTINELS_PER_SESSION, TEST_TRIALS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Practice,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    /// The side the participant picked as fake.
    pub side: Side,
    pub response_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub pair_id: String,
    pub real: String,
    pub fake: String,
    pub fake_side: Side,
    pub sentinel: bool,
    pub phase: Phase,
    #[serde(skip)]
    pub choice: Option<Choice>,
}

impl Trial {
    fn new(pair: &Pair, sentinel: bool, phase: Phase, rng: &mut ChaCha8Rng) -> Self {
        Trial {
            pair_id: pair.id.clone(),
            real: pair.real.clone(),
            fake: pair.fake.clone(),
            fake_side: if rng.random_bool(0.5) { Side::Left } else { Side::Right },
            sentinel,
            phase,
            choice: None,
        }
    }

    pub fn left(&self) -> &str {
        match self.fake_side {
            Side::Left => &self.fake,
            Side::Right => &self.real,
        }
    }

    pub fn right(&self) -> &str {
        match self.fake_side {
            Side::Left => &self.real,
            Side::Right => &self.fake,
        }
    }

    /// Whether the recorded choice found the fake.
    pub fn correct(&self) -> Option<bool> {
        self.choice.map(|c| c.side == self.fake_side)
    }
}

/// What a participant is shown for one trial. Does not say which side is
/// fake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialView {
    pub index: usize,
    pub phase: Phase,
    pub left: String,
    pub right: String,
    pub exposure_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub index: usize,
    pub phase: Phase,
    /// Present for practice trials only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    /// False when this repeated an already recorded choice.
    pub recorded: bool,
    pub next: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub token: String,
    pub algorithm: String,
    pub seed: u64,
    pub trials: Vec<Trial>,
}

impl Session {
    /// Draws a trial sequence: distinct pairs for the practice and test
    /// trials, sentinels at random test positions, and a random fake side
    /// for every trial.
    pub fn generate(id: String, token: String, algorithm: &str, seed: u64, manifest: &Manifest) -> Result<Self> {
        let pairs = manifest
            .pairs(algorithm)
            .ok_or_else(|| Error::UnknownAlgorithm(algorithm.to_string()))?;
        if pairs.len() < MIN_PAIRS {
            return Err(Error::InsufficientPairs {
                algorithm: algorithm.to_string(),
                have: pairs.len(),
                need: MIN_PAIRS,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regular = TEST_TRIALS - SENTINELS_PER_SESSION;
        let chosen: Vec<&Pair> = pairs.choose_multiple(&mut rng, PRACTICE_TRIALS + regular).collect();
        let sentinels: Vec<&Pair> = manifest.sentinels().choose_multiple(&mut rng, SENTINELS_PER_SESSION).collect();
        let mut slots: Vec<bool> = (0..TEST_TRIALS).map(|i| i < SENTINELS_PER_SESSION).collect();
        slots.shuffle(&mut rng);

        let mut trials: Vec<Trial> = chosen[..PRACTICE_TRIALS]
            .iter()
            .map(|p| Trial::new(p, false, Phase::Practice, &mut rng))
            .collect();
        let (mut regular, mut sentinel) = (chosen[PRACTICE_TRIALS..].iter(), sentinels.iter());
        for is_sentinel in slots {
            let pair = if is_sentinel { sentinel.next() } else { regular.next() };
            trials.push(Trial::new(pair.expect("slot counts match"), is_sentinel, Phase::Test, &mut rng));
        }
        Ok(Session { id, token, algorithm: algorithm.to_string(), seed, trials })
    }

    /// Index of the first unanswered trial; the trial count once complete.
    pub fn cursor(&self) -> usize {
        self.trials.iter().position(|t| t.choice.is_none()).unwrap_or(self.trials.len())
    }

    pub fn is_complete(&self) -> bool {
        self.cursor() == self.trials.len()
    }

    fn check_index(&self, n: usize) -> Result<&Trial> {
        let trial = self.trials.get(n).ok_or(Error::NoSuchTrial(n))?;
        let cursor = self.cursor();
        if n > cursor {
            return Err(Error::OutOfOrder { requested: n, cursor });
        }
        Ok(trial)
    }

    /// The current trial or any earlier one.
    pub fn view(&self, n: usize) -> Result<TrialView> {
        let t = self.check_index(n)?;
        Ok(TrialView {
            index: n,
            phase: t.phase,
            left: t.left().to_string(),
            right: t.right().to_string(),
            exposure_ms: EXPOSURE_MS,
        })
    }

    /// Records a choice for the current trial. Repeating the recorded side
    /// of an earlier trial is accepted and changes nothing.
    pub fn submit(&mut self, n: usize, side: Side, response_ms: u64) -> Result<SubmitOutcome> {
        let trial = self.check_index(n)?;
        let recorded = match trial.choice {
            Some(c) if c.side == side => false,
            Some(_) => return Err(Error::ConflictingChoice(n)),
            None => true,
        };
        if recorded {
            self.trials[n].choice = Some(Choice { side, response_ms });
        }
        let trial = &self.trials[n];
        Ok(SubmitOutcome {
            index: n,
            phase: trial.phase,
            correct: match trial.phase {
                Phase::Practice => trial.correct(),
                Phase::Test => None,
            },
            recorded,
            next: self.cursor(),
            completed: self.is_complete(),
        })
    }

    pub fn test_trials(&self) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(|t| t.phase == Phase::Test)
    }

    /// Fooled outcomes (the real image was picked as fake) of the answered
    /// non-sentinel test trials.
    pub fn fooled(&self) -> Vec<bool> {
        self.test_trials()
            .filter(|t| !t.sentinel)
            .filter_map(Trial::correct)
            .map(|c| !c)
            .collect()
    }

    /// (correct, answered) over the sentinel trials.
    pub fn sentinel_score(&self) -> (usize, usize) {
        let answered: Vec<bool> = self.test_trials().filter(|t| t.sentinel).filter_map(Trial::correct).collect();
        (answered.iter().filter(|&&c| c).count(), answered.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::manifest_with;
    use proptest::prelude::*;

    fn session(seed: u64) -> Session {
        let (_dir, m) = manifest_with(60, 8);
        Session::generate("s".into(), "t".into(), "ours", seed, &m).unwrap()
    }

    #[test]
    fn protocol_counts() {
        let s = session(1);
        assert_eq!(s.trials.len(), 50);
        assert!(s.trials[..10].iter().all(|t| t.phase == Phase::Practice && !t.sentinel));
        assert!(s.trials[10..].iter().all(|t| t.phase == Phase::Test));
        assert_eq!(s.trials.iter().filter(|t| t.sentinel).count(), 4);
        let mut ids: Vec<&str> = s.trials.iter().map(|t| t.pair_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn seeds_change_the_sides() {
        let sides = |s: &Session| s.trials.iter().map(|t| t.fake_side).collect::<Vec<_>>();
        assert_eq!(sides(&session(1)), sides(&session(1)));
        assert_ne!(sides(&session(1)), sides(&session(2)));
    }

    #[test]
    fn strict_order_and_idempotence() {
        let mut s = session(3);
        assert!(matches!(s.view(1), Err(Error::OutOfOrder { requested: 1, cursor: 0 })));
        let view = s.view(0).unwrap();
        assert_eq!(view.exposure_ms, 1000);
        let fake = s.trials[0].fake_side;
        let out = s.submit(0, fake, 900).unwrap();
        assert_eq!((out.correct, out.recorded, out.next), (Some(true), true, 1));
        assert!(!s.submit(0, fake, 10).unwrap().recorded);
        assert_eq!(s.trials[0].choice.unwrap().response_ms, 900);
        let other = if fake == Side::Left { Side::Right } else { Side::Left };
        assert!(matches!(s.submit(0, other, 10), Err(Error::ConflictingChoice(0))));
        assert!(matches!(s.submit(5, other, 10), Err(Error::OutOfOrder { .. })));
        assert!(matches!(s.view(50), Err(Error::NoSuchTrial(50))));
    }

    #[test]
    fn test_phase_gives_no_feedback() {
        let mut s = session(4);
        for n in 0..50 {
            let side = s.trials[n].fake_side;
            let out = s.submit(n, side, 500).unwrap();
            assert_eq!(out.correct.is_some(), n < 10);
        }
        assert!(s.is_complete());
        assert_eq!(s.fooled(), vec![false; 36]);
        assert_eq!(s.sentinel_score(), (4, 4));
    }

    #[test]
    fn too_few_pairs() {
        let (_dir, m) = manifest_with(49, 4);
        assert!(matches!(
            Session::generate("s".into(), "t".into(), "ours", 0, &m),
            Err(Error::InsufficientPairs { have: 49, .. })
        ));
        assert!(matches!(
            Session::generate("s".into(), "t".into(), "theirs", 0, &m),
            Err(Error::UnknownAlgorithm(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn every_seed_follows_the_protocol(seed: u64) {
            let s = session(seed);
            prop_assert_eq!(s.trials.len(), PRACTICE_TRIALS + TEST_TRIALS);
            prop_assert_eq!(s.test_trials().filter(|t| t.sentinel).count(), SENTINELS_PER_SESSION);
            prop_assert!(s.trials[..PRACTICE_TRIALS].iter().all(|t| t.phase == Phase::Practice && !t.sentinel));
            for t in &s.trials {
                let mut shown = [t.left(), t.right()];
                shown.sort();
                let mut pair = [t.real.as_str(), t.fake.as_str()];
                pair.sort();
                prop_assert_eq!(shown, pair);
                prop_assert_eq!(t.sentinel, t.pair_id.starts_with("sentinel_"));
            }
        }
    }
}
