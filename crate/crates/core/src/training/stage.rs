use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{EpochRecord, TrainHistory};
use super::optim::{sgd_step, EarlyStopping};
use super::split::stratified_split;
use super::HyperParams;
use crate::dataio::{crop_resize, load_gray_image, Label, Manifest, SampleRecord, Subset};
use crate::error::{Error, Result};
use crate::layers::{bce_with_logits, sigmoid, Dropout};
use crate::seed::derive_seed;
use crate::spoofnet::{CascadeModel, Mode, NetworkSpec, SpoofNet};
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5355;
const DROPOUT_STREAM: u64 = 0xd209;
const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Printed vs non-printed on the full frame.
    One,
    /// Live vs textured lens on the iris crop.
    Two,
}

impl Stage {
    pub fn index(self) -> u64 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    /// Binary target of a ground-truth label, or `None` if the stage skips it.
    pub fn target(self, label: Label) -> Option<f32> {
        match (self, label) {
            (Stage::One, Label::Printed) => Some(0.0),
            (Stage::One, _) => Some(1.0),
            (Stage::Two, Label::Live) => Some(1.0),
            (Stage::Two, Label::Contact) => Some(0.0),
            (Stage::Two, Label::Printed) => None,
        }
    }
}

/// Preprocessed network inputs with binary targets.
#[derive(Clone, Debug)]
pub struct StageData {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<f32>,
    pub paths: Vec<String>,
}

impl StageData {
    pub fn new(inputs: Vec<Tensor<f32>>, labels: Vec<f32>, paths: Vec<String>) -> Result<Self> {
        if inputs.len() != labels.len() || inputs.len() != paths.len() {
            return Err(Error::Shape("stage data columns differ in length".into()));
        }
        Ok(StageData {
            inputs,
            labels,
            paths,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<f32>)> {
        let items: Vec<&Tensor<f32>> = indices.iter().map(|&i| &self.inputs[i]).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::stack(&items)?, labels))
    }
}

/// Loads the stage's view of `records`: full frames for stage 1, iris crops
/// of live and lens samples for stage 2.
pub fn prepare_stage(
    manifest: &Manifest,
    records: &[SampleRecord],
    stage: Stage,
    size: usize,
) -> Result<StageData> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut paths = Vec::new();
    for r in records {
        let Some(y) = stage.target(r.label) else {
            continue;
        };
        let image = load_gray_image(&manifest.resolve(r))?;
        let bbox = match stage {
            Stage::One => None,
            Stage::Two => r.bbox,
        };
        if let Some(b) = bbox {
            let [_, _, h, w] = image.dims4()?;
            b.check_within(w, h)?;
        }
        inputs.push(crop_resize(&image, bbox, size)?);
        labels.push(y);
        paths.push(r.image_path.clone());
    }
    StageData::new(inputs, labels, paths)
}

/// Supplies the validation loss and accuracy after each epoch.
pub trait ValidationMonitor {
    fn evaluate(&mut self, epoch: usize, net: &SpoofNet<f32>) -> Result<(f64, f64)>;
}

/// Validation on a held-out set, dropout off.
pub struct DataMonitor<'a> {
    pub data: &'a StageData,
    pub batch_size: usize,
}

impl ValidationMonitor for DataMonitor<'_> {
    fn evaluate(&mut self, _epoch: usize, net: &SpoofNet<f32>) -> Result<(f64, f64)> {
        let idx: Vec<usize> = (0..self.data.len()).collect();
        let mut logits = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(self.batch_size.max(1)) {
            let (x, _) = self.data.batch(chunk)?;
            logits.extend(net.forward(&x, Mode::Infer)?.0);
        }
        let loss = bce_with_logits(&logits, &self.data.labels)?.loss;
        let correct = logits
            .iter()
            .zip(&self.data.labels)
            .filter(|(&z, &y)| (sigmoid(z as f64) >= 0.5) == (y == 1.0))
            .count();
        Ok((loss, correct as f64 / logits.len() as f64))
    }
}

/// Per-epoch callback.
pub type Progress<'a> = dyn FnMut(Stage, &EpochRecord) + 'a;

/// Trains `net` and returns it with the best-validation-loss weights restored.
pub fn train_stage_with(
    mut net: SpoofNet<f32>,
    train: &StageData,
    monitor: &mut dyn ValidationMonitor,
    hp: &HyperParams,
    stage: Stage,
    progress: &mut Progress<'_>,
) -> Result<(SpoofNet<f32>, TrainHistory)> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Data(format!(
            "stage {} has no training samples",
            stage.index()
        )));
    }
    let mut velocity = net.params.zeros_like();
    let mut stopper = EarlyStopping::new(hp.patience, hp.min_delta);
    let mut best = net.params.clone();
    let mut history = TrainHistory::default();

    for epoch in 1..=hp.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            hp.seed,
            &[SHUFFLE_STREAM, stage.index(), epoch as u64],
        ));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(hp.batch_size).enumerate() {
            let (x, y) = train.batch(chunk)?;
            let mut dropout = Dropout::new(
                hp.dropout_rate,
                derive_seed(
                    hp.seed,
                    &[DROPOUT_STREAM, stage.index(), epoch as u64, b as u64],
                ),
            )?;
            let (logits, cache) = net.forward(&x, Mode::Train(&mut dropout))?;
            let bce = bce_with_logits(&logits, &y)?;
            loss_sum += bce.loss * chunk.len() as f64;
            let grads = net.backward(&cache, &bce.d_logits)?;
            sgd_step(&mut net.params, &grads, &mut velocity, hp)?;
        }
        net.params.ensure_finite()?;

        let (val_loss, val_accuracy) = monitor.evaluate(epoch, &net)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss"));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(stage, &record);
        history.epochs.push(record);
        history.stopped_epoch = epoch;

        let check = stopper.observe(epoch, val_loss);
        if check.improved {
            best = net.params.clone();
            history.best_epoch = epoch;
        }
        if check.stop {
            break;
        }
    }
    net.params = best;
    Ok((net, history))
}

pub fn train_stage(
    net: SpoofNet<f32>,
    train: &StageData,
    val: &StageData,
    hp: &HyperParams,
    stage: Stage,
    progress: &mut Progress<'_>,
) -> Result<(SpoofNet<f32>, TrainHistory)> {
    if val.is_empty() {
        return Err(Error::Data(format!(
            "stage {} has no validation samples",
            stage.index()
        )));
    }
    let mut monitor = DataMonitor {
        data: val,
        batch_size: hp.batch_size,
    };
    train_stage_with(net, train, &mut monitor, hp, stage, progress)
}

#[derive(Clone, Debug)]
pub struct CascadeTraining {
    pub model: CascadeModel,
    pub stage1: TrainHistory,
    pub stage2: TrainHistory,
    /// `(train, val)` sample counts per stage.
    pub stage1_sizes: (usize, usize),
    pub stage2_sizes: (usize, usize),
    /// Image paths used for training or validation.
    pub used_paths: Vec<String>,
}

/// Trains both stages on the `train` subset of `manifest`, sharing one split.
pub fn train_cascade(
    manifest: &Manifest,
    spec: &NetworkSpec,
    hp: &HyperParams,
    gate: f64,
    progress: &mut Progress<'_>,
) -> Result<CascadeTraining> {
    hp.validate()?;
    let records: Vec<SampleRecord> = manifest
        .records
        .iter()
        .filter(|r| r.subset == Subset::Train)
        .cloned()
        .collect();
    for label in Label::ALL {
        if !records.iter().any(|r| r.label == label) {
            return Err(Error::Data(format!("training pool has no {label} samples")));
        }
    }
    let (train, val) = stratified_split(&records, hp.split_ratio, hp.seed)?;
    let mut spec = spec.clone();
    spec.dropout_rate = hp.dropout_rate;
    let s = spec.input_size;

    let run = |stage: Stage, progress: &mut Progress<'_>| {
        let tr = prepare_stage(manifest, &train, stage, s)?;
        let va = prepare_stage(manifest, &val, stage, s)?;
        let net = SpoofNet::build(
            spec.clone(),
            derive_seed(hp.seed, &[INIT_STREAM, stage.index()]),
        )?;
        let (net, history) = train_stage(net, &tr, &va, hp, stage, progress)?;
        Ok::<_, Error>((net, history, (tr.len(), va.len())))
    };
    let (net1, stage1, stage1_sizes) = run(Stage::One, &mut *progress)?;
    let (net2, stage2, stage2_sizes) = run(Stage::Two, &mut *progress)?;
    Ok(CascadeTraining {
        model: CascadeModel::new(net1, net2, gate)?,
        stage1,
        stage2,
        stage1_sizes,
        stage2_sizes,
        used_paths: records.into_iter().map(|r| r.image_path).collect(),
    })
}
