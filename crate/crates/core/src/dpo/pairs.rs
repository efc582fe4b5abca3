use serde::{Deserialize, Serialize};

/// Minimum OKS gap between winner and loser.
pub const DEFAULT_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub condition_id: String,
    pub winner_id: String,
    pub loser_id: String,
    pub winner_oks: f64,
    pub loser_oks: f64,
}

/// Scored variants generated under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionGroup {
    pub condition_id: String,
    /// `(sample_id, oks)`
    pub samples: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pairs: Vec<PreferencePair>,
    /// Groups with fewer than two scored samples.
    pub skipped_small: usize,
    /// Groups whose OKS spread is below the margin.
    pub below_margin: usize,
}

/// One best-vs-worst pair per group. Among equal OKS values the
/// lexicographically smaller sample id is taken, for the winner and the
/// loser alike. Non-finite scores are ignored.
pub fn build_preference_pairs(groups: &[ConditionGroup], margin: f64) -> PairReport {
    let mut report = PairReport::default();
    for group in groups {
        let scored: Vec<&(String, f64)> = group.samples.iter().filter(|(_, o)| o.is_finite()).collect();
        if scored.len() < 2 {
            report.skipped_small += 1;
            log::warn!("condition {}: {} scored samples, no pair", group.condition_id, scored.len());
            continue;
        }
        let pick = |better: fn(f64, f64) -> bool| {
            let mut best = scored[0];
            for s in &scored[1..] {
                if better(s.1, best.1) || (s.1 == best.1 && s.0 < best.0) {
                    best = s;
                }
            }
            best
        };
        let winner = pick(|a, b| a > b);
        let loser = pick(|a, b| a < b);
        if winner.1 - loser.1 < margin {
            report.below_margin += 1;
            continue;
        }
        report.pairs.push(PreferencePair {
            condition_id: group.condition_id.clone(),
            winner_id: winner.0.clone(),
            loser_id: loser.0.clone(),
            winner_oks: winner.1,
            loser_oks: loser.1,
        });
    }
    report
}
