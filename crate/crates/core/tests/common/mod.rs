//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use spoofnet_core::dataio::Label;
use spoofnet_core::tensor::{ConvConfig, Tensor};

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], eps: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + eps;
            let hi = f(&p);
            p[i] = x[i] - eps;
            let lo = f(&p);
            p[i] = x[i];
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|)` over coordinates whose absolute
/// difference exceeds `floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let d = (a - n).abs();
            if d <= floor {
                0.0
            } else {
                d / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Direct six-loop convolution with zero padding.
#[allow(clippy::needless_range_loop)]
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], cfg: &ConvConfig) -> Vec<f64> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (kh, kw) = cfg.kernel;
    let (sh, sw) = cfg.stride;
    let (ph, pw) = cfg.padding;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (wd + 2 * pw - kw) / sw + 1;
    let at = |ni: usize, ci: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((ni * c + ci) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = Vec::new();
    for ni in 0..n {
        for k in 0..cfg.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[k];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * sh + i) as isize - ph as isize;
                                let xx = (ox * sw + j) as isize - pw as isize;
                                s += at(ni, ci, y, xx) * w.data()[((k * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

/// `(APCER %, BPCER %)` by direct counting; `None` for an absent class.
pub fn count_rates(samples: &[(Label, f64)], tau: f64) -> (Option<f64>, Option<f64>) {
    let attacks: Vec<f64> = samples
        .iter()
        .filter(|s| s.0 != Label::Live)
        .map(|s| s.1)
        .collect();
    let live: Vec<f64> = samples
        .iter()
        .filter(|s| s.0 == Label::Live)
        .map(|s| s.1)
        .collect();
    let pct = |hits: usize, n: usize| (n > 0).then(|| 100.0 * hits as f64 / n as f64);
    (
        pct(attacks.iter().filter(|&&s| s >= tau).count(), attacks.len()),
        pct(live.iter().filter(|&&s| s < tau).count(), live.len()),
    )
}

pub fn spoofnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spoofnet"))
        .args(args)
        .output()
        .expect("spawn spoofnet")
}

/// Runs the binary and panics with its stderr unless it exits 0.
pub fn spoofnet_ok(args: &[&str]) -> Output {
    let out = spoofnet(args);
    assert!(
        out.status.success(),
        "spoofnet {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Rows of a report CSV as `(dataset, threshold, apcer, bpcer)`.
pub fn report_rows(csv: &str) -> Vec<(String, f64, Option<f64>, Option<f64>)> {
    let num = |s: &str| (s != "NA").then(|| s.parse::<f64>().expect("number"));
    csv.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                f[1].parse().unwrap(),
                num(f[2]),
                num(f[3]),
            )
        })
        .collect()
}

/// `(image_path, dataset, label, score)` rows of a score dump.
pub fn score_rows(csv: &str) -> Vec<(String, String, Label, f64)> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let label = match f[2] {
                "live" => Label::Live,
                "printed" => Label::Printed,
                "contact" => Label::Contact,
                other => panic!("label {other}"),
            };
            (
                f[0].to_string(),
                f[1].to_string(),
                label,
                f[3].parse().unwrap(),
            )
        })
        .collect()
}
