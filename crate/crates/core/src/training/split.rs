use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{Label, SampleRecord};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const SPLIT_STREAM: u64 = 0x5011;

/// Per label, `floor(ratio · n)` records go to the training side; both sides
/// keep the input order.
pub fn stratified_split(
    records: &[SampleRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut to_train = vec![false; records.len()];
    for (li, label) in Label::ALL.into_iter().enumerate() {
        let mut idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "label {label} has {} record(s); at least 2 are needed to split",
                idx.len()
            )));
        }
        // the epsilon absorbs representation error such as 0.8 · 10 = 8.000000000000002
        let k = (ratio * idx.len() as f64 + 1e-9).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SPLIT_STREAM, li as u64]));
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            to_train[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (r, t) in records.iter().zip(to_train) {
        if t {
            train.push(r.clone());
        } else {
            val.push(r.clone());
        }
    }
    Ok((train, val))
}
