use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1 / (1 − rate)` at training
/// time, so inference is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    seed: u64,
    rng: ChaCha8Rng,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout {
            rate,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Last sampled keep-mask (`true` = kept).
    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Replace the mask so that a subsequent [`Dropout::apply_mask`] and
    /// [`Dropout::backward`] use it verbatim.
    pub fn set_mask(&mut self, mask: Vec<bool>) {
        self.mask = Some(mask);
    }

    fn scale<T: Scalar>(&self) -> T {
        T::one() / (T::one() - T::from_f64_lossy(self.rate))
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, training: bool) -> Tensor<T> {
        if !training || self.rate == 0.0 {
            self.mask = None;
            return input.clone();
        }
        let rate = self.rate;
        let mask: Vec<bool> = (0..input.len())
            .map(|_| self.rng.gen::<f64>() >= rate)
            .collect();
        self.mask = Some(mask);
        self.apply_mask(input).expect("mask sized to input")
    }

    /// Applies the stored mask; without one this is the identity.
    pub fn apply_mask<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(mask) = &self.mask else {
            return Ok(input.clone());
        };
        if mask.len() != input.len() {
            return Err(Error::Shape(format!(
                "dropout mask has {} entries for {} inputs",
                mask.len(),
                input.len()
            )));
        }
        let scale = self.scale::<T>();
        let data = input
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
            .collect();
        Tensor::new(input.shape().to_vec(), data)
    }

    /// Gradient through the last forward call.
    pub fn backward<T: Scalar>(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply_mask(upstream)
    }
}
