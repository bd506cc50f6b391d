use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Wall-clock time; the only non-deterministic field.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// CSV rows followed by a `# {json}` footer with the stop summary.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.seconds
            );
        }
        let footer = serde_json::json!({
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
        });
        let _ = writeln!(s, "# {footer}");
        s
    }

    /// Same records with timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> TrainHistory {
        let mut h = self.clone();
        h.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                val_accuracy: 1.0,
                seconds: 2.0,
            }],
            stopped_epoch: 1,
            best_epoch: 1,
        };
        let csv = h.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines[1], "1,0.5,0.25,1,2");
        assert_eq!(lines[2], r#"# {"best_epoch":1,"stopped_epoch":1}"#);
    }
}
