//! Self-checks run by the `verify` command: finite-difference gradient
//! checks for every differentiable block and exact oracles for convolution
//! and the error-rate metrics.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataio::Label;
use crate::error::Result;
use crate::eval::{apcer, bpcer, threshold_sweep, ScoredSample};
use crate::layers::{
    bce_with_logits, inception_backward, inception_forward, relu_backward, relu_forward, Dropout,
    InceptionParams, InceptionSpec,
};
use crate::spoofnet::{Mode, NetworkParams, NetworkSpec, SpoofNet};
use crate::tensor::{
    affine_backward, affine_forward, conv2d_backward, conv2d_forward, maxpool_backward,
    maxpool_forward, ConvConfig, PoolConfig, Tensor,
};

/// Tolerances of the finite-difference comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Skip coordinates whose one-sided differences disagree by more than
    /// this (a kink of a piecewise-linear op lies within `±ε`).
    pub kink_tol: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            kink_tol: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub failed: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn merge(&mut self, other: &GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failed += other.failed;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

/// Compares `analytic` with central differences of `f` around `x`.
pub fn check_gradient(
    x: &[f64],
    analytic: &[f64],
    f: &mut dyn FnMut(&[f64]) -> f64,
    cfg: &GradCheckConfig,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut out = GradCheck::default();
    let mut probe = x.to_vec();
    let f0 = cfg.kink_tol.map(|_| f(x));
    for i in 0..x.len() {
        probe[i] = x[i] + cfg.epsilon;
        let fp = f(&probe);
        probe[i] = x[i] - cfg.epsilon;
        let fm = f(&probe);
        probe[i] = x[i];
        if let (Some(tol), Some(f0)) = (cfg.kink_tol, f0) {
            let fwd = (fp - f0) / cfg.epsilon;
            let bwd = (f0 - fm) / cfg.epsilon;
            if (fwd - bwd).abs() > tol * fwd.abs().max(bwd.abs()).max(1.0) {
                out.skipped += 1;
                continue;
            }
        }
        let numeric = (fp - fm) / (2.0 * cfg.epsilon);
        let a = analytic[i];
        let diff = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        out.checked += 1;
        if diff > cfg.abs_tol {
            out.max_rel_err = out.max_rel_err.max(rel);
            if rel >= cfg.rel_tol {
                out.failed += 1;
            }
        }
    }
    out
}

/// Outcome of one verification suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub grad: Option<GradCheck>,
    pub mismatches: usize,
    pub passed: bool,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn weighted_sum(t: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).expect("shape preserved")
}

fn grad_suite(
    name: &str,
    cases: usize,
    cfg: GradCheckConfig,
    max_skip_fraction: f64,
    mut case: impl FnMut(u64, &GradCheckConfig) -> Result<GradCheck>,
) -> Result<SuiteResult> {
    let mut total = GradCheck::default();
    for seed in 0..cases as u64 {
        total.merge(&case(seed, &cfg)?);
    }
    let skip_ok =
        (total.skipped as f64) <= max_skip_fraction * (total.checked + total.skipped) as f64;
    Ok(SuiteResult {
        name: name.into(),
        cases,
        passed: total.failed == 0 && total.checked > 0 && skip_ok,
        grad: Some(total),
        mismatches: 0,
    })
}

/// Random convolution geometry with an exact output extent.
fn conv_case(rng: &mut ChaCha8Rng) -> (Vec<usize>, ConvConfig) {
    let k: usize = rng.gen_range(1..=3);
    let s: usize = rng.gen_range(1..=2);
    let p = rng.gen_range(0..k);
    let oh = rng.gen_range(1..=4);
    let ow = rng.gen_range(1..=4);
    let h = ((oh - 1) * s + k).saturating_sub(2 * p).max(1);
    let w = ((ow - 1) * s + k).saturating_sub(2 * p).max(1);
    let cfg = ConvConfig::new(rng.gen_range(1..=3), k, s, p);
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    (vec![n, c, h, w], cfg)
}

fn conv_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (shape, cc) = loop {
        let (shape, cc) = conv_case(&mut rng);
        if cc.output_extent(shape[2], shape[3]).is_ok() {
            break (shape, cc);
        }
    };
    let x = uniform(&shape, &mut rng);
    let ks = [cc.out_channels, shape[1], cc.kernel.0, cc.kernel.1];
    let w = uniform(&ks, &mut rng);
    let b: Vec<f64> = (0..cc.out_channels)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let y = conv2d_forward(&x, &w, &b, &cc)?;
    let r = uniform(y.shape(), &mut rng);
    let g = conv2d_backward(&x, &w, &cc, &r)?;

    let mut out = check_gradient(
        x.data(),
        g.d_input.data(),
        &mut |v| {
            weighted_sum(
                &conv2d_forward(&with_data(&shape, v), &w, &b, &cc).unwrap(),
                &r,
            )
        },
        cfg,
    );
    out.merge(&check_gradient(
        w.data(),
        g.d_kernels.data(),
        &mut |v| {
            weighted_sum(
                &conv2d_forward(&x, &with_data(&ks, v), &b, &cc).unwrap(),
                &r,
            )
        },
        cfg,
    ));
    out.merge(&check_gradient(
        &b,
        &g.d_bias,
        &mut |v| weighted_sum(&conv2d_forward(&x, &w, v, &cc).unwrap(), &r),
        cfg,
    ));
    Ok(out)
}

/// Well-separated distinct values so no window has a near tie.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..len).map(|i| i as f64 * 0.05 - 1.0).collect();
    v.shuffle(rng);
    with_data(shape, &v)
}

fn pool_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pc = [
        PoolConfig::new(2, 2, 0),
        PoolConfig::new(2, 1, 0),
        PoolConfig::new(3, 1, 1),
        PoolConfig::new(3, 2, 1),
    ][seed as usize % 4];
    let (n, c) = (rng.gen_range(1..=2), rng.gen_range(1..=3));
    let (h, w) = loop {
        let h = rng.gen_range(2..=7);
        let w = rng.gen_range(2..=7);
        if pc.output_extent(h, w).is_ok() {
            break (h, w);
        }
    };
    let shape = [n, c, h, w];
    let x = distinct(&shape, &mut rng);
    let (y, idx) = maxpool_forward(&x, &pc)?;
    let r = uniform(y.shape(), &mut rng);
    let dx = maxpool_backward(&idx, &r, &shape)?;
    Ok(check_gradient(
        x.data(),
        dx.data(),
        &mut |v| weighted_sum(&maxpool_forward(&with_data(&shape, v), &pc).unwrap().0, &r),
        cfg,
    ))
}

fn affine_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, m) = (
        rng.gen_range(1..=4),
        rng.gen_range(1..=8),
        rng.gen_range(1..=3),
    );
    let x = uniform(&[n, d], &mut rng);
    let w = uniform(&[d, m], &mut rng);
    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = uniform(&[n, m], &mut rng);
    let g = affine_backward(&x, &w, &r)?;
    let mut out = check_gradient(
        x.data(),
        g.d_input.data(),
        &mut |v| weighted_sum(&affine_forward(&with_data(&[n, d], v), &w, &b).unwrap(), &r),
        cfg,
    );
    out.merge(&check_gradient(
        w.data(),
        g.d_weights.data(),
        &mut |v| weighted_sum(&affine_forward(&x, &with_data(&[d, m], v), &b).unwrap(), &r),
        cfg,
    ));
    out.merge(&check_gradient(
        &b,
        &g.d_bias,
        &mut |v| weighted_sum(&affine_forward(&x, &w, v).unwrap(), &r),
        cfg,
    ));
    Ok(out)
}

fn relu_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [
        1,
        rng.gen_range(1..=3),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
    ];
    // stay away from the kink
    let x = Tensor::from_fn(&shape, |_| loop {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if v.abs() > 1e-3 {
            break v;
        }
    });
    let r = uniform(&shape, &mut rng);
    let dx = relu_backward(&x, &r)?;
    Ok(check_gradient(
        x.data(),
        dx.data(),
        &mut |v| weighted_sum(&relu_forward(&with_data(&shape, v)), &r),
        cfg,
    ))
}

fn dropout_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [rng.gen_range(1..=4), rng.gen_range(1..=16)];
    let x = uniform(&shape, &mut rng);
    let mut d = Dropout::new(0.2, seed)?;
    d.forward(&x, true);
    let r = uniform(&shape, &mut rng);
    let dx = d.backward(&r)?;
    Ok(check_gradient(
        x.data(),
        dx.data(),
        &mut |v| weighted_sum(&d.apply_mask(&with_data(&shape, v)).unwrap(), &r),
        cfg,
    ))
}

fn bce_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8);
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    let g = bce_with_logits(&z, &y)?;
    Ok(check_gradient(
        &z,
        &g.d_logits,
        &mut |v| bce_with_logits(v, &y).unwrap().loss,
        cfg,
    ))
}

fn flat(p: &InceptionParams<f64>) -> Vec<f64> {
    p.convs()
        .iter()
        .flat_map(|c| {
            c.kernels
                .data()
                .iter()
                .chain(&c.bias)
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

fn unflat(p: &mut InceptionParams<f64>, v: &[f64]) {
    let mut at = 0;
    for c in p.convs_mut() {
        let k = c.kernels.len();
        c.kernels.data_mut().copy_from_slice(&v[at..at + k]);
        at += k;
        let b = c.bias.len();
        c.bias.copy_from_slice(&v[at..at + b]);
        at += b;
    }
}

fn inception_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dim = || rng.gen_range(1..=3);
    let spec = InceptionSpec::new(dim(), dim(), dim(), dim(), dim(), dim());
    let c = rng.gen_range(1..=3);
    let shape = [1, c, rng.gen_range(2..=5), rng.gen_range(2..=5)];
    let x = distinct(&shape, &mut rng);
    let params = InceptionParams::<f64>::he_normal(&spec, c, &mut rng);
    let (y, cache) = inception_forward(&x, &spec, &params)?;
    let r = uniform(y.shape(), &mut rng);
    let (dx, grads) = inception_backward(&cache, &params, &r)?;

    let mut out = check_gradient(
        x.data(),
        dx.data(),
        &mut |v| {
            weighted_sum(
                &inception_forward(&with_data(&shape, v), &spec, &params)
                    .unwrap()
                    .0,
                &r,
            )
        },
        cfg,
    );
    let mut probe = params.clone();
    out.merge(&check_gradient(
        &flat(&params),
        &flat(&grads),
        &mut |v| {
            unflat(&mut probe, v);
            weighted_sum(&inception_forward(&x, &spec, &probe).unwrap().0, &r)
        },
        cfg,
    ));
    Ok(out)
}

fn network_flat(p: &NetworkParams<f64>) -> Vec<f64> {
    p.buffers()
        .iter()
        .flat_map(|(_, _, b)| b.to_vec())
        .collect()
}

fn network_unflat(p: &mut NetworkParams<f64>, v: &[f64]) {
    let mut at = 0;
    for (_, _, b) in p.buffers_mut() {
        let n = b.len();
        b.copy_from_slice(&v[at..at + n]);
        at += n;
    }
}

/// A four-conv network shrunk to 16×16 inputs and two channels per layer.
pub fn tiny_network_spec() -> NetworkSpec {
    let mut spec = NetworkSpec {
        input_size: 16,
        ..Default::default()
    };
    for st in &mut spec.conv_stack {
        st.conv.out_channels = 2;
    }
    spec.inception = InceptionSpec::new(1, 1, 2, 1, 2, 1);
    spec
}

fn network_grad_case(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = tiny_network_spec();
    let net = SpoofNet::<f64>::build(spec.clone(), seed)?;
    let x = Tensor::from_fn(&[2, 1, 16, 16], |_| rng.gen_range(0.0..1.0));
    let y = vec![1.0, 0.0];
    let mut drop = Dropout::new(0.2, seed)?;
    let (logits, cache) = net.forward(&x, Mode::Train(&mut drop))?;
    let bce = bce_with_logits(&logits, &y)?;
    let grads = net.backward(&cache, &bce.d_logits)?;
    let mask = drop.mask().map(<[bool]>::to_vec);

    let mut probe = net.clone();
    Ok(check_gradient(
        &network_flat(&net.params),
        &network_flat(&grads),
        &mut |v| {
            network_unflat(&mut probe.params, v);
            let mut d = Dropout::new(0.2, seed).unwrap();
            if let Some(m) = &mask {
                d.set_mask(m.clone());
            }
            // replay the recorded mask instead of sampling a new one
            let (z, _) = forward_with_mask(&probe, &x, &d).unwrap();
            bce_with_logits(&z, &y).unwrap().loss
        },
        cfg,
    ))
}

fn forward_with_mask(
    net: &SpoofNet<f64>,
    x: &Tensor<f64>,
    mask: &Dropout,
) -> Result<(Vec<f64>, ())> {
    let (_, cache) = net.forward(x, Mode::Infer)?;
    let dropped = mask.apply_mask(cache.features())?;
    let z = affine_forward(&dropped, &net.params.head_weights, &net.params.head_bias)?;
    Ok((z.into_data(), ()))
}

/// Textbook six-loop convolution.
#[allow(clippy::needless_range_loop)]
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], cfg: &ConvConfig) -> Vec<f64> {
    let s = x.shape();
    let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = cfg.kernel;
    let (oh, ow) = cfg.output_extent(h, wd).expect("exact geometry");
    let mut out = Vec::with_capacity(n * cfg.out_channels * oh * ow);
    for ni in 0..n {
        for k in 0..cfg.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[k];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * cfg.stride.0 + i) as isize - cfg.padding.0 as isize;
                                let ix = (xo * cfg.stride.1 + j) as isize - cfg.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()
                                    [((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((k * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Convolution against [`naive_conv2d`]: exact in `f64`, within `1e-6` in `f32`.
pub fn conv_oracle_suite(cases: usize) -> Result<SuiteResult> {
    let mut mismatches = 0;
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0 + seed);
        let (shape, cc) = loop {
            let (mut shape, cc) = conv_case(&mut rng);
            shape[2] += 2 * cc.stride.0;
            shape[3] += 2 * cc.stride.1;
            if cc.output_extent(shape[2], shape[3]).is_ok() {
                break (shape, cc);
            }
        };
        let x = uniform(&shape, &mut rng);
        let w = uniform(
            &[cc.out_channels, shape[1], cc.kernel.0, cc.kernel.1],
            &mut rng,
        );
        let b: Vec<f64> = (0..cc.out_channels)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let expected = naive_conv2d(&x, &w, &b, &cc);
        let got = conv2d_forward(&x, &w, &b, &cc)?;
        mismatches += usize::from(got.data() != &expected[..]);
        let bf: Vec<f32> = b.iter().map(|&v| v as f32).collect();
        let got32 = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), &bf, &cc)?;
        let expected32 = naive_conv2d(
            &x.cast::<f32>().cast(),
            &w.cast::<f32>().cast(),
            &bf.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &cc,
        );
        mismatches += usize::from(
            got32
                .data()
                .iter()
                .zip(&expected32)
                .any(|(&a, &e)| (a as f64 - e).abs() > 1e-6),
        );
    }
    Ok(SuiteResult {
        name: "conv_oracle".into(),
        cases,
        grad: None,
        mismatches,
        passed: mismatches == 0,
    })
}

/// Error rates and sweeps against a direct count over random score sets.
pub fn metric_oracle_suite(samples: usize, thresholds: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scored: Vec<ScoredSample> = (0..samples)
        .map(|i| ScoredSample {
            image_path: format!("s{i}"),
            dataset: "oracle".into(),
            label: Label::ALL[rng.gen_range(0..3)],
            // integer-valued scores exercise the tie rule
            score: if rng.gen_bool(0.2) {
                rng.gen_range(0..=100) as f64
            } else {
                rng.gen_range(0.0..=100.0)
            },
            stage2_ran: true,
        })
        .collect();
    let taus: Vec<f64> = (0..thresholds)
        .map(|i| 100.0 * i as f64 / (thresholds.max(2) - 1) as f64)
        .collect();
    let refs: Vec<&ScoredSample> = scored.iter().collect();
    let rows = threshold_sweep("oracle", &refs, &taus)?;
    let mut mismatches = 0;
    let (mut prev_a, mut prev_b) = (f64::INFINITY, f64::NEG_INFINITY);
    for (row, &t) in rows.iter().zip(&taus) {
        let (mut na, mut fa, mut nb, mut fb) = (0usize, 0usize, 0usize, 0usize);
        for s in &scored {
            if s.label == Label::Live {
                nb += 1;
                if !matches!(
                    s.score.partial_cmp(&t),
                    Some(Ordering::Greater | Ordering::Equal)
                ) {
                    fb += 1;
                }
            } else {
                na += 1;
                if s.score >= t {
                    fa += 1;
                }
            }
        }
        let ea = 100.0 * fa as f64 / na as f64;
        let eb = 100.0 * fb as f64 / nb as f64;
        mismatches += usize::from(row.apcer != Some(ea) || row.bpcer != Some(eb));
        mismatches += usize::from(apcer(&scored, t)? != ea || bpcer(&scored, t)? != eb);
        mismatches += usize::from(ea > prev_a || eb < prev_b);
        prev_a = ea;
        prev_b = eb;
    }
    Ok(SuiteResult {
        name: "metric_oracle".into(),
        cases: thresholds,
        grad: None,
        mismatches,
        passed: mismatches == 0,
    })
}

/// Every suite run by the `verify` command.
pub fn run_all() -> Result<Vec<SuiteResult>> {
    let exact = GradCheckConfig::default();
    let guarded = GradCheckConfig {
        kink_tol: Some(1e-3),
        ..exact
    };
    Ok(vec![
        grad_suite("grad_conv", 20, exact, 0.0, conv_grad_case)?,
        grad_suite("grad_maxpool", 20, exact, 0.0, pool_grad_case)?,
        grad_suite("grad_affine", 20, exact, 0.0, affine_grad_case)?,
        grad_suite("grad_relu", 20, exact, 0.0, relu_grad_case)?,
        grad_suite("grad_dropout", 20, exact, 0.0, dropout_grad_case)?,
        grad_suite("grad_sigmoid_bce", 20, exact, 0.0, bce_grad_case)?,
        grad_suite("grad_inception", 20, guarded, 0.02, inception_grad_case)?,
        grad_suite("grad_network", 3, guarded, 0.02, network_grad_case)?,
        conv_oracle_suite(50)?,
        metric_oracle_suite(10_000, 101, 2024)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_flags_a_wrong_gradient() {
        let x = [0.3, -0.2];
        let mut f = |v: &[f64]| v[0] * v[0] + 3.0 * v[1];
        let good = check_gradient(&x, &[0.6, 3.0], &mut f, &GradCheckConfig::default());
        assert_eq!((good.checked, good.failed), (2, 0));
        let bad = check_gradient(&x, &[0.6, 2.9], &mut f, &GradCheckConfig::default());
        assert_eq!(bad.failed, 1);
    }

    #[test]
    fn kink_guard_skips_relu_corner() {
        let mut f = |v: &[f64]| v[0].max(0.0);
        let cfg = GradCheckConfig {
            kink_tol: Some(1e-3),
            ..Default::default()
        };
        let r = check_gradient(&[0.0], &[0.0], &mut f, &cfg);
        assert_eq!((r.checked, r.skipped), (0, 1));
    }

    #[test]
    fn all_suites_pass() {
        for s in run_all().unwrap() {
            assert!(s.passed, "{s:?}");
        }
    }
}
