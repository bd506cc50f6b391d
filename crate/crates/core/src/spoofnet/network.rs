use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{
    inception_backward, inception_forward, relu_backward, relu_forward, sigmoid, ConvParams,
    Dropout, InceptionCache, InceptionParams, InceptionSpec,
};
use crate::tensor::{
    affine_backward, affine_forward, conv2d_backward_impl, global_avg_pool_backward,
    global_avg_pool_forward, maxpool_backward, maxpool_forward, ConvConfig, PoolConfig, PoolIndex,
    Scalar, Tensor,
};

/// One convolution (always followed by ReLU) and an optional max-pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub conv: ConvConfig,
    pub pool: Option<PoolConfig>,
}

/// Layer stack of one network: four conv stages, one inception block, then
/// global average pool → dropout → affine → one logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub input_channels: usize,
    pub conv_stack: Vec<ConvStage>,
    pub inception: InceptionSpec,
    pub dropout_rate: f64,
}

pub const CONV_LAYERS: usize = 4;

impl Default for NetworkSpec {
    fn default() -> Self {
        let pool = Some(PoolConfig::new(2, 2, 0));
        let stage = |out| ConvStage {
            conv: ConvConfig::new(out, 3, 1, 1),
            pool,
        };
        NetworkSpec {
            input_size: 96,
            input_channels: 1,
            conv_stack: vec![stage(16), stage(32), stage(48), stage(64)],
            inception: InceptionSpec::new(16, 8, 16, 8, 16, 16),
            dropout_rate: 0.2,
        }
    }
}

/// Extents after a named stage of the forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
}

impl NetworkSpec {
    /// Static shape computation for one sample; fails on any inexact extent.
    pub fn shape_walk(&self) -> Result<Vec<StageShape>> {
        if self.conv_stack.len() != CONV_LAYERS {
            return Err(Error::Config(format!(
                "expected exactly {CONV_LAYERS} conv layers, got {}",
                self.conv_stack.len()
            )));
        }
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::Config("input extents must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        self.inception.validate()?;
        let mut walk = Vec::new();
        let (mut c, mut h, mut w) = (self.input_channels, self.input_size, self.input_size);
        walk.push(StageShape {
            stage: "input".into(),
            channels: c,
            rows: h,
            cols: w,
        });
        for (i, st) in self.conv_stack.iter().enumerate() {
            (h, w) = st
                .conv
                .output_extent(h, w)
                .map_err(|e| Error::Config(format!("conv{}: {e}", i + 1)))?;
            c = st.conv.out_channels;
            walk.push(StageShape {
                stage: format!("conv{}", i + 1),
                channels: c,
                rows: h,
                cols: w,
            });
            if let Some(pool) = &st.pool {
                (h, w) = pool
                    .output_extent(h, w)
                    .map_err(|e| Error::Config(format!("pool{}: {e}", i + 1)))?;
                walk.push(StageShape {
                    stage: format!("pool{}", i + 1),
                    channels: c,
                    rows: h,
                    cols: w,
                });
            }
        }
        walk.push(StageShape {
            stage: "inception".into(),
            channels: self.inception.out_channels(),
            rows: h,
            cols: w,
        });
        walk.push(StageShape {
            stage: "global_pool".into(),
            channels: self.inception.out_channels(),
            rows: 1,
            cols: 1,
        });
        walk.push(StageShape {
            stage: "logit".into(),
            channels: 1,
            rows: 1,
            cols: 1,
        });
        Ok(walk)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_walk().map(|_| ())
    }

    fn inception_in_channels(&self) -> usize {
        self.conv_stack
            .last()
            .map(|s| s.conv.out_channels)
            .unwrap_or(self.input_channels)
    }
}

/// Whether a parameter buffer takes weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Learned weights of one network, also used as the gradient and momentum
/// container (same layout).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub convs: Vec<ConvParams<T>>,
    pub inception: InceptionParams<T>,
    /// `[features, 1]`.
    pub head_weights: Tensor<T>,
    pub head_bias: Vec<T>,
}

impl<T: Scalar> NetworkParams<T> {
    /// He-normal weights and zero biases, fully determined by `seed`.
    pub fn he_normal(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = spec.input_channels;
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        for st in &spec.conv_stack {
            convs.push(ConvParams::he_normal(st.conv, in_ch, &mut rng));
            in_ch = st.conv.out_channels;
        }
        let inception = InceptionParams::he_normal(&spec.inception, in_ch, &mut rng);
        let features = spec.inception.out_channels();
        let normal = Normal::new(0.0, (2.0 / features as f64).sqrt()).expect("positive std");
        let head_weights = Tensor::from_fn(&[features, 1], |_| {
            T::from_f64_lossy(normal.sample(&mut rng))
        });
        Ok(NetworkParams {
            convs,
            inception,
            head_weights,
            head_bias: vec![T::zero()],
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut in_ch = spec.input_channels;
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        for st in &spec.conv_stack {
            convs.push(ConvParams::zeros(st.conv, in_ch));
            in_ch = st.conv.out_channels;
        }
        Ok(NetworkParams {
            convs,
            inception: InceptionParams::zeros(&spec.inception, spec.inception_in_channels()),
            head_weights: Tensor::zeros(&[spec.inception.out_channels(), 1]),
            head_bias: vec![T::zero()],
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, buf) in z.buffers_mut() {
            buf.fill(T::zero());
        }
        z
    }

    /// Every parameter buffer in canonical order: name, kind, values.
    pub fn buffers(&self) -> Vec<(String, ParamKind, &[T])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((
                format!("conv{}.kernels", i + 1),
                ParamKind::Weight,
                c.kernels.data(),
            ));
            out.push((format!("conv{}.bias", i + 1), ParamKind::Bias, &c.bias[..]));
        }
        for (name, c) in INCEPTION_NAMES.iter().zip(self.inception.convs()) {
            out.push((
                format!("inception.{name}.kernels"),
                ParamKind::Weight,
                c.kernels.data(),
            ));
            out.push((
                format!("inception.{name}.bias"),
                ParamKind::Bias,
                &c.bias[..],
            ));
        }
        out.push((
            "head.weights".into(),
            ParamKind::Weight,
            self.head_weights.data(),
        ));
        out.push(("head.bias".into(), ParamKind::Bias, &self.head_bias[..]));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, ParamKind, &mut [T])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((
                format!("conv{}.kernels", i + 1),
                ParamKind::Weight,
                c.kernels.data_mut(),
            ));
            out.push((
                format!("conv{}.bias", i + 1),
                ParamKind::Bias,
                &mut c.bias[..],
            ));
        }
        for (name, c) in INCEPTION_NAMES.iter().zip(self.inception.convs_mut()) {
            out.push((
                format!("inception.{name}.kernels"),
                ParamKind::Weight,
                c.kernels.data_mut(),
            ));
            out.push((
                format!("inception.{name}.bias"),
                ParamKind::Bias,
                &mut c.bias[..],
            ));
        }
        out.push((
            "head.weights".into(),
            ParamKind::Weight,
            self.head_weights.data_mut(),
        ));
        out.push(("head.bias".into(), ParamKind::Bias, &mut self.head_bias[..]));
        out
    }

    pub fn num_params(&self) -> usize {
        self.buffers().iter().map(|(_, _, b)| b.len()).sum()
    }

    /// Elementwise `self += other`; layouts must match.
    pub fn accumulate(&mut self, other: &NetworkParams<T>) -> Result<()> {
        let src = other.buffers();
        let mut dst = self.buffers_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        for ((_, _, d), (name, _, s)) in dst.iter_mut().zip(&src) {
            if d.len() != s.len() {
                return Err(Error::Shape(format!("buffer {name} differs in length")));
            }
            d.iter_mut().zip(s.iter()).for_each(|(a, &b)| *a += b);
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (_, _, b) in self.buffers() {
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the little-endian `f64` image of every parameter.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (_, _, b) in self.buffers() {
            for v in b {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            cfg: c.cfg,
            kernels: c.kernels.cast(),
            bias: c
                .bias
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        };
        let inc = &self.inception;
        NetworkParams {
            convs: self.convs.iter().map(conv).collect(),
            inception: InceptionParams {
                b1: conv(&inc.b1),
                b2_reduce: conv(&inc.b2_reduce),
                b2: conv(&inc.b2),
                b3_reduce: conv(&inc.b3_reduce),
                b3: conv(&inc.b3),
                b4: conv(&inc.b4),
            },
            head_weights: self.head_weights.cast(),
            head_bias: self
                .head_bias
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }
}

const INCEPTION_NAMES: [&str; 6] = ["b1", "b2_reduce", "b2", "b3_reduce", "b3", "b4"];

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Training-time or inference-time forward pass.
pub enum Mode<'a> {
    Train(&'a mut Dropout),
    Infer,
}

struct StageCache<T> {
    input: Tensor<T>,
    activated: Tensor<T>,
    pool: Option<PoolIndex>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<T> {
    stages: Vec<StageCache<T>>,
    inception_input_shape: Vec<usize>,
    inception: InceptionCache<T>,
    features: Tensor<T>,
    dropout: Option<Dropout>,
    dropped: Tensor<T>,
}

/// A network specification together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SpoofNet<T> {
    pub spec: NetworkSpec,
    pub params: NetworkParams<T>,
}

impl<T: Scalar> SpoofNet<T> {
    pub fn new(spec: NetworkSpec, params: NetworkParams<T>) -> Result<Self> {
        spec.validate()?;
        let reference = NetworkParams::<T>::zeros(&spec)?;
        let same = reference
            .buffers()
            .iter()
            .zip(params.buffers())
            .all(|((_, _, a), (_, _, b))| a.len() == b.len())
            && reference.buffers().len() == params.buffers().len();
        if !same {
            return Err(Error::Shape(
                "parameters do not fit the network spec".into(),
            ));
        }
        Ok(SpoofNet { spec, params })
    }

    /// Fresh He-initialised network (`build_spoofnet`).
    pub fn build(spec: NetworkSpec, init_seed: u64) -> Result<Self> {
        let params = NetworkParams::he_normal(&spec, init_seed)?;
        Ok(SpoofNet { spec, params })
    }

    /// Logits `[N]` for a batch `[N, C, S, S]`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode<'_>) -> Result<(Vec<T>, ForwardCache<T>)> {
        let [_, c, h, w] = input.dims4()?;
        let s = self.spec.input_size;
        if (c, h, w) != (self.spec.input_channels, s, s) {
            return Err(Error::Shape(format!(
                "network expects [N, {}, {s}, {s}], got {:?}",
                self.spec.input_channels,
                input.shape()
            )));
        }
        let mut stages = Vec::with_capacity(CONV_LAYERS);
        let mut x = input.clone();
        for (st, p) in self.spec.conv_stack.iter().zip(&self.params.convs) {
            let (pre, _) = p.forward(&x)?;
            let activated = relu_forward(&pre);
            let (next, pool) = match &st.pool {
                Some(cfg) => {
                    let (y, idx) = maxpool_forward(&activated, cfg)?;
                    (y, Some(idx))
                }
                None => (activated.clone(), None),
            };
            stages.push(StageCache {
                input: x,
                activated,
                pool,
            });
            x = next;
        }
        let inception_input_shape = x.shape().to_vec();
        let (mixed, inception) =
            inception_forward(&x, &self.spec.inception, &self.params.inception)?;
        let features = global_avg_pool_forward(&mixed)?;
        let (dropped, dropout) = match mode {
            Mode::Train(d) => {
                let y = d.forward(&features, true);
                (y, Some(d.clone()))
            }
            Mode::Infer => (features.clone(), None),
        };
        let logits = affine_forward(&dropped, &self.params.head_weights, &self.params.head_bias)?;
        Ok((
            logits.into_data(),
            ForwardCache {
                stages,
                inception_input_shape,
                inception,
                features,
                dropout,
                dropped,
            },
        ))
    }

    /// Parameter gradients given `d loss / d logit` for each sample.
    pub fn backward(&self, cache: &ForwardCache<T>, d_logits: &[T]) -> Result<NetworkParams<T>> {
        let n = cache.dropped.shape()[0];
        let upstream = Tensor::new(vec![n, 1], d_logits.to_vec())?;
        let head = affine_backward(&cache.dropped, &self.params.head_weights, &upstream)?;
        let d_features = match &cache.dropout {
            Some(d) => d.backward(&head.d_input)?,
            None => head.d_input,
        };
        let mixed_shape = {
            let [n, _, h, w] = dims_of(&cache.inception_input_shape)?;
            vec![n, self.spec.inception.out_channels(), h, w]
        };
        let d_mixed = global_avg_pool_backward(&d_features, &mixed_shape)?;
        let (mut dx, inception) =
            inception_backward(&cache.inception, &self.params.inception, &d_mixed)?;

        let mut convs: Vec<ConvParams<T>> = Vec::with_capacity(CONV_LAYERS);
        for (layer, (st, p)) in cache
            .stages
            .iter()
            .zip(&self.params.convs)
            .enumerate()
            .rev()
        {
            let d_act = match &st.pool {
                Some(idx) => maxpool_backward(idx, &dx, st.activated.shape())?,
                None => dx,
            };
            let d_pre = relu_backward(&st.activated, &d_act)?;
            let (d_in, dk, db) =
                conv2d_backward_impl(&st.input, &p.kernels, &p.cfg, &d_pre, layer > 0)?;
            convs.push(ConvParams {
                cfg: p.cfg,
                kernels: dk,
                bias: db,
            });
            dx = d_in.unwrap_or_else(|| Tensor::zeros(&[1]));
        }
        convs.reverse();
        Ok(NetworkParams {
            convs,
            inception,
            head_weights: head.d_weights,
            head_bias: head.d_bias,
        })
    }

    /// Bonafide-class probability for every sample of an inference batch.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Vec<f64>> {
        let (logits, _) = self.forward(input, Mode::Infer)?;
        Ok(logits.into_iter().map(|z| sigmoid(z.as_f64())).collect())
    }

    pub fn cast<U: Scalar>(&self) -> SpoofNet<U> {
        SpoofNet {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }
}

impl<T> ForwardCache<T> {
    /// Pooled features ahead of dropout.
    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }
}

fn dims_of(shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        _ => Err(Error::Shape(format!("expected rank 4, got {shape:?}"))),
    }
}
