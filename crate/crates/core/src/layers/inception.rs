use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{relu_backward, relu_forward};
use super::conv_layer::ConvParams;
use crate::error::{Error, Result};
use crate::tensor::{
    channel_concat, channel_split, conv2d_backward_impl, maxpool_backward, maxpool_forward,
    ConvConfig, PoolConfig, PoolIndex, Scalar, Tensor,
};

/// Channel widths of the four parallel branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    /// 1×1 branch.
    pub b1_out: usize,
    /// 1×1 reduction ahead of the 3×3 branch.
    pub b2_reduce: usize,
    pub b2_out: usize,
    /// 1×1 reduction ahead of the 5×5 branch.
    pub b3_reduce: usize,
    pub b3_out: usize,
    /// 1×1 projection after the 3×3 max-pool.
    pub b4_out: usize,
}

impl InceptionSpec {
    pub fn new(
        b1_out: usize,
        b2_reduce: usize,
        b2_out: usize,
        b3_reduce: usize,
        b3_out: usize,
        b4_out: usize,
    ) -> Self {
        InceptionSpec {
            b1_out,
            b2_reduce,
            b2_out,
            b3_reduce,
            b3_out,
            b4_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b1_out,
            self.b2_reduce,
            self.b2_out,
            self.b3_reduce,
            self.b3_out,
            self.b4_out,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!(
                "inception branch widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.b1_out + self.b2_out + self.b3_out + self.b4_out
    }

    fn branch_widths(&self) -> [usize; 4] {
        [self.b1_out, self.b2_out, self.b3_out, self.b4_out]
    }

    /// `(config, input channels)` for b1, b2 reduce, b2, b3 reduce, b3, b4.
    pub fn conv_configs(&self, in_channels: usize) -> [(ConvConfig, usize); 6] {
        [
            (ConvConfig::new(self.b1_out, 1, 1, 0), in_channels),
            (ConvConfig::new(self.b2_reduce, 1, 1, 0), in_channels),
            (ConvConfig::new(self.b2_out, 3, 1, 1), self.b2_reduce),
            (ConvConfig::new(self.b3_reduce, 1, 1, 0), in_channels),
            (ConvConfig::new(self.b3_out, 5, 1, 2), self.b3_reduce),
            (ConvConfig::new(self.b4_out, 1, 1, 0), in_channels),
        ]
    }

    pub fn pool_config() -> PoolConfig {
        PoolConfig::new(3, 1, 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InceptionParams<T> {
    pub b1: ConvParams<T>,
    pub b2_reduce: ConvParams<T>,
    pub b2: ConvParams<T>,
    pub b3_reduce: ConvParams<T>,
    pub b3: ConvParams<T>,
    pub b4: ConvParams<T>,
}

impl<T: Scalar> InceptionParams<T> {
    pub fn he_normal(spec: &InceptionSpec, in_channels: usize, rng: &mut impl Rng) -> Self {
        let [c1, c2r, c2, c3r, c3, c4] = spec.conv_configs(in_channels);
        InceptionParams {
            b1: ConvParams::he_normal(c1.0, c1.1, rng),
            b2_reduce: ConvParams::he_normal(c2r.0, c2r.1, rng),
            b2: ConvParams::he_normal(c2.0, c2.1, rng),
            b3_reduce: ConvParams::he_normal(c3r.0, c3r.1, rng),
            b3: ConvParams::he_normal(c3.0, c3.1, rng),
            b4: ConvParams::he_normal(c4.0, c4.1, rng),
        }
    }

    pub fn zeros(spec: &InceptionSpec, in_channels: usize) -> Self {
        let [c1, c2r, c2, c3r, c3, c4] = spec.conv_configs(in_channels);
        InceptionParams {
            b1: ConvParams::zeros(c1.0, c1.1),
            b2_reduce: ConvParams::zeros(c2r.0, c2r.1),
            b2: ConvParams::zeros(c2.0, c2.1),
            b3_reduce: ConvParams::zeros(c3r.0, c3r.1),
            b3: ConvParams::zeros(c3.0, c3.1),
            b4: ConvParams::zeros(c4.0, c4.1),
        }
    }

    pub fn convs(&self) -> [&ConvParams<T>; 6] {
        [
            &self.b1,
            &self.b2_reduce,
            &self.b2,
            &self.b3_reduce,
            &self.b3,
            &self.b4,
        ]
    }

    pub fn convs_mut(&mut self) -> [&mut ConvParams<T>; 6] {
        [
            &mut self.b1,
            &mut self.b2_reduce,
            &mut self.b2,
            &mut self.b3_reduce,
            &mut self.b3,
            &mut self.b4,
        ]
    }
}

/// Activations retained for the backward pass (all post-ReLU).
#[derive(Clone, Debug)]
pub struct InceptionCache<T> {
    input: Tensor<T>,
    b1: Tensor<T>,
    b2_reduced: Tensor<T>,
    b2: Tensor<T>,
    b3_reduced: Tensor<T>,
    b3: Tensor<T>,
    pooled: Tensor<T>,
    pool_index: PoolIndex,
    b4: Tensor<T>,
    widths: [usize; 4],
}

fn conv_relu<T: Scalar>(p: &ConvParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(relu_forward(&p.forward(x)?.0))
}

pub fn inception_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &InceptionSpec,
    params: &InceptionParams<T>,
) -> Result<(Tensor<T>, InceptionCache<T>)> {
    spec.validate()?;
    let [_, _, h, w] = input.dims4()?;

    let b1 = conv_relu(&params.b1, input)?;
    let b2_reduced = conv_relu(&params.b2_reduce, input)?;
    let b2 = conv_relu(&params.b2, &b2_reduced)?;
    let b3_reduced = conv_relu(&params.b3_reduce, input)?;
    let b3 = conv_relu(&params.b3, &b3_reduced)?;
    let (pooled, pool_index) = maxpool_forward(input, &InceptionSpec::pool_config())?;
    let b4 = conv_relu(&params.b4, &pooled)?;

    for branch in [&b1, &b2, &b3, &b4] {
        let [_, _, bh, bw] = branch.dims4()?;
        if (bh, bw) != (h, w) {
            return Err(Error::Shape(format!(
                "inception branch changed spatial extent {h}×{w} to {bh}×{bw}"
            )));
        }
    }
    let widths = [b1.shape()[1], b2.shape()[1], b3.shape()[1], b4.shape()[1]];
    if widths != spec.branch_widths() {
        return Err(Error::Shape(format!(
            "branch widths {widths:?} disagree with spec {spec:?}"
        )));
    }
    let out = channel_concat(&[&b1, &b2, &b3, &b4])?;
    Ok((
        out,
        InceptionCache {
            input: input.clone(),
            b1,
            b2_reduced,
            b2,
            b3_reduced,
            b3,
            pooled,
            pool_index,
            b4,
            widths,
        },
    ))
}

fn conv_back<T: Scalar>(
    p: &ConvParams<T>,
    input: &Tensor<T>,
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    let d_pre = relu_backward(output, upstream)?;
    let (dx, dk, db) = conv2d_backward_impl(input, &p.kernels, &p.cfg, &d_pre, true)?;
    Ok((
        dx.expect("input gradient requested"),
        ConvParams {
            cfg: p.cfg,
            kernels: dk,
            bias: db,
        },
    ))
}

/// Returns the input gradient and a gradient for every branch parameter.
pub fn inception_backward<T: Scalar>(
    cache: &InceptionCache<T>,
    params: &InceptionParams<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, InceptionParams<T>)> {
    let parts = channel_split(upstream, &cache.widths)?;
    let c = cache;

    let (mut dx, g1) = conv_back(&params.b1, &c.input, &c.b1, &parts[0])?;

    let (d_r2, g2) = conv_back(&params.b2, &c.b2_reduced, &c.b2, &parts[1])?;
    let (d_in2, g2r) = conv_back(&params.b2_reduce, &c.input, &c.b2_reduced, &d_r2)?;
    dx.add_assign(&d_in2)?;

    let (d_r3, g3) = conv_back(&params.b3, &c.b3_reduced, &c.b3, &parts[2])?;
    let (d_in3, g3r) = conv_back(&params.b3_reduce, &c.input, &c.b3_reduced, &d_r3)?;
    dx.add_assign(&d_in3)?;

    let (d_pooled, g4) = conv_back(&params.b4, &c.pooled, &c.b4, &parts[3])?;
    let d_in4 = maxpool_backward(&c.pool_index, &d_pooled, c.input.shape())?;
    dx.add_assign(&d_in4)?;

    Ok((
        dx,
        InceptionParams {
            b1: g1,
            b2_reduce: g2r,
            b2: g2,
            b3_reduce: g3r,
            b3: g3,
            b4: g4,
        },
    ))
}
