use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::network::{NetworkSpec, SpoofNet};
use crate::dataio::{crop_resize, BBox};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_GATE: f64 = 0.5;
pub const SCORE_SCALE: f64 = 100.0;

/// Stage 1 (printed vs non-printed, full frame) followed by stage 2 (live vs
/// textured lens, iris crop).
#[derive(Debug)]
pub struct CascadeModel {
    pub net1: SpoofNet<f32>,
    pub net2: SpoofNet<f32>,
    gate: f64,
    stage1_calls: AtomicUsize,
    stage2_calls: AtomicUsize,
}

impl Clone for CascadeModel {
    fn clone(&self) -> Self {
        CascadeModel {
            net1: self.net1.clone(),
            net2: self.net2.clone(),
            gate: self.gate,
            stage1_calls: AtomicUsize::new(self.stage1_calls()),
            stage2_calls: AtomicUsize::new(self.stage2_calls()),
        }
    }
}

impl PartialEq for CascadeModel {
    fn eq(&self, other: &Self) -> bool {
        self.net1 == other.net1
            && self.net2 == other.net2
            && self.gate.to_bits() == other.gate.to_bits()
    }
}

/// Cascade output on the 0–100 scale; 100 is maximally bonafide.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivenessScore {
    pub value: f64,
    pub stage2_ran: bool,
    pub p1: f64,
    pub p2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Bonafide,
    Attack,
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=SCORE_SCALE).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "threshold {threshold} outside [0, 100]"
        )))
    }
}

/// Bonafide iff `value ≥ threshold`.
pub fn classify(score: &LivenessScore, threshold: f64) -> Result<Decision> {
    check_threshold(threshold)?;
    Ok(if score.value >= threshold {
        Decision::Bonafide
    } else {
        Decision::Attack
    })
}

impl CascadeModel {
    pub fn new(net1: SpoofNet<f32>, net2: SpoofNet<f32>, gate: f64) -> Result<Self> {
        if !(gate > 0.0 && gate < 1.0) {
            return Err(Error::Config(format!("gate {gate} outside (0, 1)")));
        }
        net1.spec.validate()?;
        net2.spec.validate()?;
        Ok(CascadeModel {
            net1,
            net2,
            gate,
            stage1_calls: AtomicUsize::new(0),
            stage2_calls: AtomicUsize::new(0),
        })
    }

    /// Two fresh He-initialised nets sharing `spec`.
    pub fn build(spec: &NetworkSpec, seed1: u64, seed2: u64, gate: f64) -> Result<Self> {
        Self::new(
            SpoofNet::build(spec.clone(), seed1)?,
            SpoofNet::build(spec.clone(), seed2)?,
            gate,
        )
    }

    pub fn gate(&self) -> f64 {
        self.gate
    }

    /// Number of stage-1 forward passes since construction or the last reset.
    pub fn stage1_calls(&self) -> usize {
        self.stage1_calls.load(Ordering::SeqCst)
    }

    pub fn stage2_calls(&self) -> usize {
        self.stage2_calls.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.stage1_calls.store(0, Ordering::SeqCst);
        self.stage2_calls.store(0, Ordering::SeqCst);
    }

    /// Stage-1 probability of the non-printed class.
    pub fn stage1_probability(&self, image: &Tensor<f32>) -> Result<f64> {
        let x = crop_resize(image, None, self.net1.spec.input_size)?;
        self.stage1_calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.net1.predict(&x)?[0])
    }

    /// Stage-2 probability of the live class on the iris crop.
    pub fn stage2_probability(&self, image: &Tensor<f32>, bbox: Option<BBox>) -> Result<f64> {
        let x = crop_resize(image, bbox, self.net2.spec.input_size)?;
        self.stage2_calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.net2.predict(&x)?[0])
    }

    /// Scores a `[1, 1, H, W]` frame; stage 2 runs only when `p1 ≥ gate`.
    pub fn score(&self, image: &Tensor<f32>, bbox: Option<BBox>) -> Result<LivenessScore> {
        let [_, _, h, w] = image.dims4()?;
        if let Some(b) = bbox {
            b.check_within(w, h)?;
        }
        let p1 = self.stage1_probability(image)?;
        if p1 < self.gate {
            return Ok(LivenessScore {
                value: SCORE_SCALE * p1,
                stage2_ran: false,
                p1,
                p2: None,
            });
        }
        let p2 = self.stage2_probability(image, bbox)?;
        Ok(LivenessScore {
            value: (SCORE_SCALE * p1 * p2).clamp(0.0, SCORE_SCALE),
            stage2_ran: true,
            p1,
            p2: Some(p2),
        })
    }
}

/// Free-function form of [`CascadeModel::score`].
pub fn cascade_score(
    image: &Tensor<f32>,
    bbox: Option<BBox>,
    model: &CascadeModel,
) -> Result<LivenessScore> {
    model.score(image, bbox)
}
