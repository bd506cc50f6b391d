use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{conv2d_backward_impl, conv2d_forward, ConvConfig, Scalar, Tensor};

/// Learned weights of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub cfg: ConvConfig,
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

/// What a convolution's backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    pub input: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal(cfg: ConvConfig, in_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * cfg.kernel.0 * cfg.kernel.1;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let shape = [cfg.out_channels, in_channels, cfg.kernel.0, cfg.kernel.1];
        ConvParams {
            cfg,
            kernels: Tensor::from_fn(&shape, |_| T::from_f64_lossy(normal.sample(rng))),
            bias: vec![T::zero(); cfg.out_channels],
        }
    }

    pub fn zeros(cfg: ConvConfig, in_channels: usize) -> Self {
        ConvParams {
            cfg,
            kernels: Tensor::zeros(&[cfg.out_channels, in_channels, cfg.kernel.0, cfg.kernel.1]),
            bias: vec![T::zero(); cfg.out_channels],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConvParams {
            cfg: self.cfg,
            kernels: Tensor::zeros(self.kernels.shape()),
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let out = conv2d_forward(input, &self.kernels, &self.bias, &self.cfg)?;
        Ok((
            out,
            ConvCache {
                input: input.clone(),
            },
        ))
    }

    /// Returns the input gradient (when requested) and the parameter gradients.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        upstream: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Option<Tensor<T>>, ConvParams<T>)> {
        let (dx, dk, db) =
            conv2d_backward_impl(&cache.input, &self.kernels, &self.cfg, upstream, want_input)?;
        Ok((
            dx,
            ConvParams {
                cfg: self.cfg,
                kernels: dk,
                bias: db,
            },
        ))
    }
}
