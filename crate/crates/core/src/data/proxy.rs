//! Procedural stand-in for a handwritten-character corpus: every class is a
//! random skeleton of pen strokes, every sample a distorted, noisy rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{class_rng, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PROXY_SIZE: usize = 32;
const SEGMENTS: usize = 24;
const NOISE_STD: f64 = 0.05;
/// Minimum mean absolute difference between two clean class templates.
const MIN_TEMPLATE_GAP: f64 = 0.06;

type Point = (f64, f64);
type Skeleton = Vec<[Point; 2]>;

fn bezier(p0: Point, p1: Point, p2: Point, t: f64) -> Point {
    let u = 1.0 - t;
    (
        u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
        u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
    )
}

fn random_skeleton(rng: &mut ChaCha8Rng) -> Skeleton {
    let strokes = rng.random_range(2..=4);
    let mut segs = Vec::with_capacity(strokes * SEGMENTS);
    let pt = |rng: &mut ChaCha8Rng| (rng.random_range(0.18..0.82), rng.random_range(0.18..0.82));
    for _ in 0..strokes {
        let (a, b, c) = (pt(rng), pt(rng), pt(rng));
        let mut prev = a;
        for k in 1..=SEGMENTS {
            let next = bezier(a, b, c, k as f64 / SEGMENTS as f64);
            segs.push([prev, next]);
            prev = next;
        }
    }
    segs
}

fn seg_dist(p: Point, [a, b]: [Point; 2]) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

#[derive(Clone, Copy)]
struct Distortion {
    angle: f64,
    scale: f64,
    shift: Point,
    radius: f64,
    /// Per axis: (amplitude, frequency x, frequency y, phase) for three waves.
    waves: [[(f64, f64, f64, f64); 3]; 2],
}

impl Distortion {
    fn identity() -> Self {
        Distortion {
            angle: 0.0,
            scale: 1.0,
            shift: (0.0, 0.0),
            radius: 0.045,
            waves: [[(0.0, 0.0, 0.0, 0.0); 3]; 2],
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut waves = [[(0.0, 0.0, 0.0, 0.0); 3]; 2];
        for axis in &mut waves {
            for w in axis.iter_mut() {
                *w = (
                    rng.random_range(0.0..0.012),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                );
            }
        }
        Distortion {
            angle: rng.random_range(-0.15..0.15),
            scale: rng.random_range(0.9..1.1),
            shift: (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
            radius: rng.random_range(0.035..0.055),
            waves,
        }
    }

    /// Maps an output pixel position back into glyph space.
    fn source(&self, p: Point) -> Point {
        let wave = |axis: &[(f64, f64, f64, f64); 3]| -> f64 {
            axis.iter()
                .map(|&(a, fx, fy, ph)| a * (std::f64::consts::TAU * (fx * p.0 + fy * p.1) + ph).sin())
                .sum()
        };
        let q = (p.0 + wave(&self.waves[0]) - 0.5 - self.shift.0, p.1 + wave(&self.waves[1]) - 0.5 - self.shift.1);
        let (s, c) = (-self.angle).sin_cos();
        (
            (c * q.0 - s * q.1) / self.scale + 0.5,
            (s * q.0 + c * q.1) / self.scale + 0.5,
        )
    }
}

fn render(skel: &Skeleton, d: &Distortion, out: &mut [f32]) {
    let px = 1.0 / PROXY_SIZE as f64;
    for y in 0..PROXY_SIZE {
        for x in 0..PROXY_SIZE {
            let p = d.source(((x as f64 + 0.5) * px, (y as f64 + 0.5) * px));
            let dist = skel.iter().map(|&s| seg_dist(p, s)).fold(f64::INFINITY, f64::min);
            // one-pixel anti-aliased edge
            out[y * PROXY_SIZE + x] = ((d.radius + 0.5 * px - dist) / px).clamp(0.0, 1.0) as f32;
        }
    }
}

fn template(skel: &Skeleton) -> Vec<f32> {
    let mut img = vec![0.0; PROXY_SIZE * PROXY_SIZE];
    render(skel, &Distortion::identity(), &mut img);
    img
}

/// `classes` glyph classes with `per_class` samples each, 32x32, ordered by
/// class. Deterministic in `seed`.
pub fn make_synthetic_proxy(classes: usize, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::Config(format!("proxy needs at least 2 classes, got {classes}")));
    }
    if per_class == 0 {
        return Err(Error::Config("proxy needs at least one sample per class".into()));
    }
    let mut skeletons: Vec<Skeleton> = Vec::with_capacity(classes);
    let mut templates: Vec<Vec<f32>> = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut rng = class_rng(seed, c);
        let mut attempt = 0;
        loop {
            let skel = random_skeleton(&mut rng);
            let t = template(&skel);
            let distinct = templates.iter().all(|o| {
                o.iter().zip(&t).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / t.len() as f64 > MIN_TEMPLATE_GAP
            });
            attempt += 1;
            if distinct || attempt >= 200 {
                skeletons.push(skel);
                templates.push(t);
                break;
            }
        }
    }
    let area = PROXY_SIZE * PROXY_SIZE;
    let mut data = vec![0.0f32; classes * per_class * area];
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    for (c, skel) in skeletons.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ ((c * per_class + i) as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03),
            );
            let d = Distortion::random(&mut rng);
            let k = c * per_class + i;
            let out = &mut data[k * area..(k + 1) * area];
            render(skel, &d, out);
            for v in out.iter_mut() {
                *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
    }
    let images = Tensor::new(vec![classes * per_class, 1, PROXY_SIZE, PROXY_SIZE], data)?;
    let labels = (0..classes).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    let names = (0..classes).map(|c| format!("glyph_{c:03}")).collect();
    LabeledDataset::with_names(images, labels, names, Split::All)
}
