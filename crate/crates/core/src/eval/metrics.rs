use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};

/// One scored test image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub image_path: String,
    pub dataset: String,
    pub label: Label,
    pub score: f64,
    pub stage2_ran: bool,
}

impl ScoredSample {
    pub fn is_attack(&self) -> bool {
        self.label.is_attack()
    }
}

/// Raw error counts at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub n_attack: usize,
    pub attacks_accepted: usize,
    pub n_bonafide: usize,
    pub bonafide_rejected: usize,
}

impl ErrorCounts {
    /// Attacks with `score ≥ τ` and bonafide samples with `score < τ`.
    pub fn tally<'a>(scored: impl IntoIterator<Item = &'a ScoredSample>, threshold: f64) -> Self {
        let mut c = ErrorCounts::default();
        for s in scored {
            if s.is_attack() {
                c.n_attack += 1;
                c.attacks_accepted += usize::from(s.score >= threshold);
            } else {
                c.n_bonafide += 1;
                c.bonafide_rejected += usize::from(s.score < threshold);
            }
        }
        c
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.n_attack += other.n_attack;
        self.attacks_accepted += other.attacks_accepted;
        self.n_bonafide += other.n_bonafide;
        self.bonafide_rejected += other.bonafide_rejected;
    }

    /// Percent of attacks accepted, or `None` without attack samples.
    pub fn apcer(&self) -> Option<f64> {
        (self.n_attack > 0).then(|| 100.0 * self.attacks_accepted as f64 / self.n_attack as f64)
    }

    /// Percent of bonafide samples rejected, or `None` without bonafide samples.
    pub fn bpcer(&self) -> Option<f64> {
        (self.n_bonafide > 0)
            .then(|| 100.0 * self.bonafide_rejected as f64 / self.n_bonafide as f64)
    }
}

pub fn apcer(scored: &[ScoredSample], threshold: f64) -> Result<f64> {
    ErrorCounts::tally(scored, threshold)
        .apcer()
        .ok_or_else(|| Error::Data("APCER needs at least one attack sample".into()))
}

pub fn bpcer(scored: &[ScoredSample], threshold: f64) -> Result<f64> {
    ErrorCounts::tally(scored, threshold)
        .bpcer()
        .ok_or_else(|| Error::Data("BPCER needs at least one bonafide sample".into()))
}

/// APCER restricted to one attack species.
pub fn apcer_for(scored: &[ScoredSample], species: Label, threshold: f64) -> Option<f64> {
    ErrorCounts::tally(scored.iter().filter(|s| s.label == species), threshold).apcer()
}
