//! Procedural stand-in for restricted iris liveness datasets.
//!
//! Live eyes are a smooth radial iris texture on a skin/sclera background.
//! Printouts overlay a halftone dot grid on the whole frame and compress the
//! contrast. Textured lenses add a high-frequency polar checker pattern on the
//! iris annulus only. Every image is a pure function of its sample seed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::pgm::{write_pgm, GrayImage};
use super::records::{BBox, Label, Manifest, SampleRecord, Subset};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Generator parameters of one pseudo-dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthStyle {
    pub name: String,
    pub background: f64,
    pub iris_level: f64,
    pub pupil_level: f64,
    /// Iris radius range in pixels.
    pub radius_range: (f64, f64),
    /// Pupil radius as a fraction of the iris radius.
    pub pupil_ratio: (f64, f64),
    /// Maximum offset of the iris centre from the frame centre.
    pub center_jitter: f64,
    pub noise_sigma: f64,
    /// Halftone grid period range in pixels (inclusive).
    pub halftone_period: (usize, usize),
    /// Fractional darkening inside a halftone dot.
    pub halftone_depth: f64,
    /// Contrast factor applied to printouts around mid-gray.
    pub print_contrast: f64,
    /// Angular frequency range of the lens pattern (inclusive).
    pub lens_spokes: (usize, usize),
    /// Radial period of the lens pattern in pixels.
    pub lens_ring_period: f64,
    pub lens_amplitude: f64,
}

impl SynthStyle {
    /// Default-difficulty style.
    pub fn standard(name: impl Into<String>) -> Self {
        SynthStyle {
            name: name.into(),
            background: 0.62,
            iris_level: 0.38,
            pupil_level: 0.08,
            radius_range: (90.0, 130.0),
            pupil_ratio: (0.3, 0.45),
            center_jitter: 40.0,
            noise_sigma: 0.015,
            halftone_period: (4, 6),
            halftone_depth: 0.4,
            print_contrast: 0.6,
            lens_spokes: (40, 60),
            lens_ring_period: 10.0,
            lens_amplitude: 0.2,
        }
    }

    /// Style of pseudo-dataset `index`; index 0 is [`SynthStyle::standard`].
    pub fn variant(index: usize) -> Self {
        let mut s = Self::standard(format!("synth{index}"));
        if index == 0 {
            return s;
        }
        let k = index % 4;
        s.background = [0.62, 0.55, 0.70, 0.58][k] + 0.01 * (index / 4) as f64;
        s.iris_level = [0.38, 0.33, 0.45, 0.30][k];
        s.radius_range = [(90.0, 130.0), (75.0, 105.0), (105.0, 140.0), (85.0, 120.0)][k];
        s.noise_sigma = [0.015, 0.022, 0.010, 0.028][k];
        s.halftone_period = [(4, 6), (5, 6), (4, 5), (6, 7)][k];
        s.halftone_depth = [0.4, 0.3, 0.5, 0.35][k];
        s.print_contrast = [0.6, 0.7, 0.55, 0.65][k];
        s.lens_spokes = [(40, 60), (30, 45), (55, 75), (36, 50)][k];
        s.lens_ring_period = [10.0, 12.0, 8.0, 14.0][k];
        s.lens_amplitude = [0.2, 0.16, 0.24, 0.18][k];
        s
    }
}

/// Per-class sample counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub live: usize,
    pub printed: usize,
    pub contact: usize,
}

impl ClassCounts {
    pub fn new(live: usize, printed: usize, contact: usize) -> Self {
        ClassCounts {
            live,
            printed,
            contact,
        }
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Live => self.live,
            Label::Printed => self.printed,
            Label::Contact => self.contact,
        }
    }

    pub fn total(&self) -> usize {
        self.live + self.printed + self.contact
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub out_dir: PathBuf,
    pub styles: Vec<SynthStyle>,
    pub train: ClassCounts,
    pub test: ClassCounts,
    /// `(rows, cols)`.
    pub image_size: (usize, usize),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(
        out_dir: impl Into<PathBuf>,
        train: ClassCounts,
        test: ClassCounts,
        seed: u64,
    ) -> Self {
        SynthConfig {
            out_dir: out_dir.into(),
            styles: vec![SynthStyle::standard("synth0")],
            train,
            test,
            image_size: (480, 640),
            seed,
        }
    }
}

/// Geometry of a rendered eye.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeGeometry {
    pub cx: f64,
    pub cy: f64,
    pub iris_radius: f64,
    pub pupil_radius: f64,
}

#[derive(Clone, Debug)]
pub struct RenderedSample {
    pub image: GrayImage,
    pub bbox: BBox,
    pub eye: EyeGeometry,
}

fn smoothstep_inside(d: f64, radius: f64) -> f64 {
    // 1 inside, 0 outside, linear over a 3 px rim
    ((radius + 1.5 - d) / 3.0).clamp(0.0, 1.0)
}

/// Renders one sample. The live texture, geometry, and noise depend only on
/// `sample_seed`, so the same seed gives matching live/printed/contact images.
pub fn render_sample(
    style: &SynthStyle,
    label: Label,
    image_size: (usize, usize),
    sample_seed: u64,
) -> RenderedSample {
    let (rows, cols) = image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let jitter = style.center_jitter;
    let cx = cols as f64 / 2.0 + rng.gen_range(-jitter..=jitter);
    let cy = rows as f64 / 2.0 + rng.gen_range(-jitter..=jitter) * 0.75;
    let max_r = (cx.min(cols as f64 - cx).min(cy).min(rows as f64 - cy) - 2.0).max(4.0);
    let r = rng
        .gen_range(style.radius_range.0..=style.radius_range.1)
        .min(max_r);
    let rp = r * rng.gen_range(style.pupil_ratio.0..=style.pupil_ratio.1);

    let radial_wavelength = rng.gen_range(12.0..20.0);
    let radial_phase = rng.gen_range(0.0..2.0 * PI);
    let streaks = rng.gen_range(8..=16) as f64;
    let streak_phase = rng.gen_range(0.0..2.0 * PI);
    let grad_x = rng.gen_range(-0.1..0.1);
    let grad_y = rng.gen_range(-0.1..0.1);
    let iris_shift = rng.gen_range(-0.04..0.04);

    let period = rng.gen_range(style.halftone_period.0..=style.halftone_period.1) as f64;
    let dot_off = (rng.gen_range(0.0..period), rng.gen_range(0.0..period));
    let dot_r2 = (0.35 * period).powi(2);
    let spokes = rng.gen_range(style.lens_spokes.0..=style.lens_spokes.1) as f64;
    let lens_phase = rng.gen_range(0.0..2.0 * PI);

    let noise = Normal::new(0.0, style.noise_sigma).expect("non-negative sigma");
    let mut pixels = Vec::with_capacity(rows * cols);
    for y in 0..rows {
        for x in 0..cols {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let (dx, dy) = (fx - cx, fy - cy);
            let d = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);

            let bg = style.background
                + grad_x * (fx / cols as f64 - 0.5)
                + grad_y * (fy / rows as f64 - 0.5);
            let iris = style.iris_level
                + iris_shift
                + 0.05 * (2.0 * PI * d / radial_wavelength + radial_phase).sin()
                + 0.05 * (streaks * theta + streak_phase + d / 25.0).sin();
            let in_iris = smoothstep_inside(d, r);
            let in_pupil = smoothstep_inside(d, rp);
            let mut v = bg * (1.0 - in_iris) + iris * in_iris;
            v = v * (1.0 - in_pupil) + style.pupil_level * in_pupil;

            if label == Label::Contact {
                let annulus = in_iris * (1.0 - in_pupil);
                if annulus > 0.0 {
                    v += style.lens_amplitude
                        * annulus
                        * (spokes * theta + lens_phase).sin()
                        * (2.0 * PI * (d - rp) / style.lens_ring_period).sin();
                }
            }

            v += noise.sample(&mut rng);

            if label == Label::Printed {
                let gx = (fx - dot_off.0).rem_euclid(period) - period / 2.0;
                let gy = (fy - dot_off.1).rem_euclid(period) - period / 2.0;
                if gx * gx + gy * gy < dot_r2 {
                    v *= 1.0 - style.halftone_depth;
                }
                v = 0.5 + style.print_contrast * (v - 0.5);
            }

            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }

    let bbox = BBox {
        x_min: (cx - r).floor().max(0.0) as usize,
        y_min: (cy - r).floor().max(0.0) as usize,
        x_max: ((cx + r).ceil() as usize).min(cols),
        y_max: ((cy + r).ceil() as usize).min(rows),
    };
    RenderedSample {
        image: GrayImage::new(cols, rows, pixels).expect("positive extents"),
        bbox,
        eye: EyeGeometry {
            cx,
            cy,
            iris_radius: r,
            pupil_radius: rp,
        },
    }
}

fn subset_index(s: Subset) -> u64 {
    match s {
        Subset::Train => 0,
        Subset::Test => 1,
    }
}

fn label_index(l: Label) -> u64 {
    match l {
        Label::Live => 0,
        Label::Printed => 1,
        Label::Contact => 2,
    }
}

/// Seed of one generated sample.
pub fn sample_seed(seed: u64, dataset: usize, subset: Subset, label: Label, index: usize) -> u64 {
    derive_seed(
        seed,
        &[
            dataset as u64,
            subset_index(subset),
            label_index(label),
            index as u64,
        ],
    )
}

/// Relative path of a generated image inside the output directory.
fn relative_path(style: &SynthStyle, subset: Subset, label: Label, index: usize) -> String {
    format!(
        "{}/{}/{}_{:05}.pgm",
        style.name,
        subset.as_str(),
        label,
        index
    )
}

/// Writes every image and `manifest.csv` (plus `manifest_<dataset>.csv` per
/// style when there are several) into `out_dir`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Manifest> {
    if cfg.styles.is_empty() {
        return Err(Error::Config(
            "at least one dataset style is required".into(),
        ));
    }
    let (rows, cols) = cfg.image_size;
    if rows < 16 || cols < 16 {
        return Err(Error::Config(format!("image size {rows}×{cols} too small")));
    }
    let mut all = Vec::new();
    let mut per_dataset = Vec::new();
    for (di, style) in cfg.styles.iter().enumerate() {
        let mut records = Vec::new();
        for (subset, counts) in [(Subset::Train, cfg.train), (Subset::Test, cfg.test)] {
            for label in Label::ALL {
                for i in 0..counts.get(label) {
                    let seed = sample_seed(cfg.seed, di, subset, label, i);
                    let sample = render_sample(style, label, cfg.image_size, seed);
                    let rel = relative_path(style, subset, label, i);
                    write_pgm(&cfg.out_dir.join(&rel), &sample.image)?;
                    records.push(SampleRecord {
                        image_path: rel,
                        label,
                        dataset: style.name.clone(),
                        subset,
                        bbox: Some(sample.bbox),
                    });
                }
            }
        }
        all.extend(records.iter().cloned());
        per_dataset.push((style.name.clone(), records));
    }
    if per_dataset.len() > 1 {
        for (name, records) in per_dataset {
            Manifest::new(records, &cfg.out_dir)?
                .write(&cfg.out_dir.join(format!("manifest_{name}.csv")))?;
        }
    }
    let manifest = Manifest::new(all, &cfg.out_dir)?;
    manifest.write(&manifest_path(&cfg.out_dir))?;
    Ok(manifest)
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_contains_the_iris_disc() {
        let style = SynthStyle::standard("t");
        for i in 0..5 {
            let s = render_sample(&style, Label::Live, (480, 640), i);
            let e = s.eye;
            assert!(s.bbox.x_min as f64 <= e.cx - e.iris_radius);
            assert!(s.bbox.x_max as f64 >= e.cx + e.iris_radius);
            assert!(s.bbox.check_within(640, 480).is_ok());
            assert!(s.bbox.width().abs_diff(s.bbox.height()) <= 1);
        }
    }

    #[test]
    fn variants_differ() {
        assert_eq!(SynthStyle::variant(0), SynthStyle::standard("synth0"));
        assert_ne!(
            SynthStyle::variant(1).halftone_period,
            SynthStyle::variant(2).halftone_period
        );
    }

    fn mean_abs_laplacian(img: &GrayImage, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w = img.width;
        let px = |x: usize, y: usize| f64::from(img.pixels[y * w + x]) / 255.0;
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in y0.max(1)..y1.min(img.height - 1) {
            for x in x0.max(1)..x1.min(w - 1) {
                let l = px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y);
                acc += l.abs();
                n += 1;
            }
        }
        acc / n as f64
    }

    #[test]
    fn dot_grid_raises_laplacian_energy_at_least_twofold() {
        let style = SynthStyle::standard("t");
        for seed in 0..8 {
            let live = render_sample(&style, Label::Live, (120, 160), seed);
            let printed = render_sample(&style, Label::Printed, (120, 160), seed);
            assert_eq!(live.bbox, printed.bbox);
            let l = mean_abs_laplacian(&live.image, 0, 0, 160, 120);
            let p = mean_abs_laplacian(&printed.image, 0, 0, 160, 120);
            assert!(p >= 2.0 * l, "seed {seed}: printed {p} live {l}");
        }
    }

    /// High-frequency energy outside the iris box and inside it.
    fn frequency_features(s: &RenderedSample) -> [f64; 2] {
        let img = &s.image;
        let b = s.bbox;
        let strip = b.x_min.min(img.width - b.x_max).max(8);
        let outside = if b.x_min >= strip {
            mean_abs_laplacian(img, 0, 0, b.x_min, img.height)
        } else {
            mean_abs_laplacian(img, b.x_max, 0, img.width, img.height)
        };
        let e = s.eye;
        let q = (e.iris_radius + e.pupil_radius) / 2.0;
        let half = ((e.iris_radius - e.pupil_radius) / 3.0).max(2.0);
        // a patch on the annulus, left of the pupil
        let cx = (e.cx - q) as usize;
        let cy = e.cy as usize;
        let h = half as usize;
        let inside = mean_abs_laplacian(img, cx - h, cy - h, cx + h, cy + h);
        [outside, inside]
    }

    #[test]
    fn classes_separate_on_frequency_energy() {
        let style = SynthStyle::standard("t");
        let render =
            |label, seed| frequency_features(&render_sample(&style, label, (480, 640), seed));
        let mut centroids = [[0.0f64; 2]; 3];
        let fit = 20u64;
        for (ci, &label) in Label::ALL.iter().enumerate() {
            for seed in 0..fit {
                let f = render(label, 1000 + seed);
                centroids[ci][0] += f[0] / fit as f64;
                centroids[ci][1] += f[1] / fit as f64;
            }
        }
        // nearest centroid: pairwise boundaries are hyperplanes
        let mut correct = 0;
        let mut total = 0;
        for (ci, &label) in Label::ALL.iter().enumerate() {
            for seed in 0..40 {
                let f = render(label, seed);
                let dist = |c: &[f64; 2]| (f[0] - c[0]).powi(2) + (f[1] - c[1]).powi(2);
                let best = (0..3)
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                    .unwrap();
                correct += usize::from(best == ci);
                total += 1;
            }
        }
        let rate = correct as f64 / total as f64;
        assert!(rate >= 0.95, "separable on {rate}");
    }

    #[test]
    fn generation_counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let gen = |dir: &Path| {
            let mut cfg = SynthConfig::new(
                dir,
                ClassCounts::new(10, 10, 10),
                ClassCounts::new(5, 5, 5),
                3,
            );
            cfg.image_size = (48, 64);
            synth_generate(&cfg).unwrap()
        };
        let ma = gen(a.path());
        let mb = gen(b.path());
        assert_eq!(ma.len(), 45);
        let files = walk(a.path());
        assert_eq!(files.iter().filter(|p| p.ends_with(".pgm")).count(), 45);
        assert_eq!(ma.count(Label::Printed), 15);
        for (ra, rb) in ma.records.iter().zip(&mb.records) {
            assert_eq!(ra, rb);
            let fa = std::fs::read(ma.resolve(ra)).unwrap();
            let fb = std::fs::read(mb.resolve(rb)).unwrap();
            assert_eq!(fa, fb);
        }
        assert_eq!(
            std::fs::read(manifest_path(a.path())).unwrap(),
            std::fs::read(manifest_path(b.path())).unwrap()
        );
    }

    fn walk(dir: &Path) -> Vec<String> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p.display().to_string());
            }
        }
        out
    }
}
