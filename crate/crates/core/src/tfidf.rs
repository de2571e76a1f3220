//! Word-frequency statistics and the frequency-driven temperature heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

/// How the frequency statistic of a word is computed from the counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfidfStrategy {
    /// Cumulative count over dialogues generated so far (mean emissions per dialogue).
    #[default]
    MeanPerDialogue,
    /// Mean emissions per dialogue times a smoothed `ln(N / df)` factor.
    /// Decreases for words present in every dialogue.
    Classical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    counts: Vec<u64>,
    dialogue_counts: Vec<u64>,
    dialogues: u64,
    #[serde(default)]
    strategy: TfidfStrategy,
}

impl FrequencyStats {
    pub fn new(vocab_size: usize) -> Self {
        Self::with_strategy(vocab_size, TfidfStrategy::default())
    }

    pub fn with_strategy(vocab_size: usize, strategy: TfidfStrategy) -> Self {
        Self {
            counts: vec![0; vocab_size],
            dialogue_counts: vec![0; vocab_size],
            dialogues: 0,
            strategy,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn strategy(&self) -> TfidfStrategy {
        self.strategy
    }

    pub fn count(&self, token: usize) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn dialogues(&self) -> u64 {
        self.dialogues
    }

    /// Counts every token occurrence and bumps the dialogue count by one.
    /// Validates all ids before mutating anything.
    pub fn record_dialogue(&mut self, tokens: &[usize]) -> Result<()> {
        for &t in tokens {
            check_index(t, self.counts.len())?;
        }
        let mut seen = vec![false; self.counts.len()];
        for &t in tokens {
            self.counts[t] += 1;
            if !seen[t] {
                seen[t] = true;
                self.dialogue_counts[t] += 1;
            }
        }
        self.dialogues += 1;
        Ok(())
    }

    pub fn tfidf(&self, token: usize) -> f64 {
        let tf = self.count(token) as f64 / self.dialogues.max(1) as f64;
        match self.strategy {
            TfidfStrategy::MeanPerDialogue => tf,
            TfidfStrategy::Classical => {
                let df = self.dialogue_counts.get(token).copied().unwrap_or(0) as f64;
                let n = self.dialogues as f64;
                tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemperatureBounds {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tfidf_min: f64,
    pub tfidf_max: f64,
}

impl Default for TemperatureBounds {
    fn default() -> Self {
        Self { tau_min: 0.5, tau_max: 1.5, tfidf_min: 0.0, tfidf_max: 8.0 }
    }
}

impl TemperatureBounds {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.tau_min, self.tau_max, self.tfidf_min, self.tfidf_max]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite
            || self.tau_min <= 0.0
            || self.tau_min > self.tau_max
            || self.tfidf_min >= self.tfidf_max
        {
            return Err(Error::Config(format!("invalid temperature bounds {self:?}")));
        }
        Ok(())
    }

    /// Linear map of a frequency statistic into `[tau_min, tau_max]`, clamped.
    pub fn interpolate(&self, tfidf: f64) -> f64 {
        let frac = (tfidf - self.tfidf_min) / (self.tfidf_max - self.tfidf_min);
        let tau = self.tau_min + (self.tau_max - self.tau_min) * frac;
        tau.clamp(self.tau_min, self.tau_max)
    }
}

/// Per-step temperature for the word the untempered pmf would pick.
pub fn dynamic_temperature(stats: &FrequencyStats, argmax_token: usize, bounds: &TemperatureBounds) -> f64 {
    bounds.interpolate(stats.tfidf(argmax_token))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IS: usize = 0;
    const IT: usize = 1;
    const RED: usize = 2;

    #[test]
    fn recording_counts_tokens() {
        let mut s = FrequencyStats::new(5);
        s.record_dialogue(&[IS, IT, RED]).unwrap();
        assert_eq!((s.count(IS), s.count(IT), s.count(RED), s.dialogues()), (1, 1, 1, 1));
        s.record_dialogue(&[IS, IT, RED]).unwrap();
        assert_eq!((s.count(IS), s.count(IT), s.count(RED), s.dialogues()), (2, 2, 2, 2));
    }

    #[test]
    fn empty_dialogue_still_counts() {
        let mut s = FrequencyStats::new(3);
        s.record_dialogue(&[]).unwrap();
        assert_eq!(s.dialogues(), 1);
        assert!((0..3).all(|t| s.count(t) == 0));
    }

    #[test]
    fn unknown_token_rejected_atomically() {
        let mut s = FrequencyStats::new(3);
        assert!(matches!(s.record_dialogue(&[0, 3]), Err(Error::Index { index: 3, len: 3 })));
        assert_eq!(s.count(0), 0);
        assert_eq!(s.dialogues(), 0);
    }

    #[test]
    fn tfidf_examples() {
        let s = FrequencyStats::new(4);
        assert_eq!(s.tfidf(1), 0.0);
        let mut s = FrequencyStats::new(2);
        // "is" 8 times per dialogue, "zebra" in two of ten dialogues
        for d in 0..10 {
            let mut toks = vec![0; 8];
            if d < 2 {
                toks.push(1);
            }
            s.record_dialogue(&toks).unwrap();
        }
        assert_eq!(s.tfidf(0), 8.0);
        assert!((s.tfidf(1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn heuristic_examples() {
        let b = TemperatureBounds::default();
        assert_eq!(b.interpolate(0.0), 0.5);
        assert_eq!(b.interpolate(4.0), 1.0);
        assert_eq!(b.interpolate(12.0), 1.5);
        let mut s = FrequencyStats::new(1);
        for _ in 0..10 {
            s.record_dialogue(&[0, 0, 0, 0]).unwrap();
        }
        assert_eq!(dynamic_temperature(&s, 0, &b), 1.0);
    }

    #[test]
    fn bounds_validation() {
        assert!(TemperatureBounds::default().validate().is_ok());
        let bad = TemperatureBounds { tau_min: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TemperatureBounds { tfidf_max: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TemperatureBounds { tau_min: 2.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn classical_reading_depresses_ubiquitous_words() {
        let mut s = FrequencyStats::with_strategy(2, TfidfStrategy::Classical);
        for _ in 0..10 {
            s.record_dialogue(&[0]).unwrap();
        }
        s.record_dialogue(&[1]).unwrap();
        assert!(s.tfidf(0) > 0.0 && s.tfidf(1) > 0.0);
        assert!(s.tfidf(0) / s.tfidf(1) < 10.0);
    }

    proptest! {
        #[test]
        fn temperature_stays_in_bounds(
            dialogues in prop::collection::vec(prop::collection::vec(0usize..6, 0..30), 0..20),
            token in 0usize..6,
        ) {
            let b = TemperatureBounds::default();
            let mut s = FrequencyStats::new(6);
            for d in &dialogues {
                s.record_dialogue(d).unwrap();
                let tau = dynamic_temperature(&s, token, &b);
                prop_assert!((0.5..=1.5).contains(&tau));
            }
        }

        #[test]
        fn more_frequent_means_hotter(
            dialogues in prop::collection::vec(prop::collection::vec(0usize..4, 0..30), 1..20),
        ) {
            let b = TemperatureBounds::default();
            let mut s = FrequencyStats::new(4);
            for d in &dialogues {
                s.record_dialogue(d).unwrap();
            }
            for a in 0..4 {
                for c in 0..4 {
                    if s.count(a) >= s.count(c) {
                        prop_assert!(dynamic_temperature(&s, a, &b) >= dynamic_temperature(&s, c, &b));
                    }
                }
            }
        }
    }
}
