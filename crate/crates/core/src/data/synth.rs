//! Built-in synthetic digit corpus.
//!
//! Deterministic 28x28 grayscale digits rendered from stroke skeletons
//! with per-sample affine jitter (shift, rotation, scale, stroke width,
//! ink level). The corpus makes the whole workbench runnable on machines
//! without the MNIST/FashionMNIST/CIFAR archives: every sample is a pure
//! function of (split, index), and the rendered bytes quantize to u8 so
//! IDX round-trips are exact.

use super::{byte_to_unit, Dataset, Split};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng;

pub const SIDE: usize = 28;
const BASE_SEED: u64 = 0x5EED_D161;

/// Default split sizes used by the `synth` dataset name.
pub const DEFAULT_TRAIN: usize = 12_000;
pub const DEFAULT_TEST: usize = 2_000;

type Point = (f64, f64);

/// Polyline approximation of an elliptical arc, angles in degrees.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, steps: usize) -> Vec<Point> {
    (0..=steps)
        .map(|i| {
            let t = from_deg + (to_deg - from_deg) * i as f64 / steps as f64;
            let r = t.to_radians();
            (cx + rx * r.cos(), cy - ry * r.sin())
        })
        .collect()
}

/// Stroke skeletons per digit class, in a unit box (x right, y down).
fn glyph(class: usize) -> Vec<Vec<Point>> {
    match class {
        0 => vec![arc(0.5, 0.5, 0.30, 0.40, 0.0, 360.0, 24)],
        1 => vec![vec![(0.34, 0.26), (0.54, 0.10), (0.54, 0.90)]],
        2 => {
            let mut top = arc(0.5, 0.30, 0.24, 0.21, 170.0, -10.0, 12);
            top.push((0.26, 0.90));
            vec![top, vec![(0.26, 0.90), (0.78, 0.90)]]
        }
        3 => vec![{
            let mut upper = arc(0.48, 0.29, 0.22, 0.19, 150.0, -90.0, 12);
            upper.extend(arc(0.48, 0.69, 0.25, 0.22, 90.0, -150.0, 12));
            upper
        }],
        4 => vec![
            vec![(0.62, 0.10), (0.22, 0.60), (0.82, 0.60)],
            vec![(0.62, 0.34), (0.62, 0.92)],
        ],
        5 => vec![
            vec![(0.74, 0.10), (0.32, 0.10), (0.30, 0.46)],
            {
                let mut belly = arc(0.50, 0.66, 0.24, 0.22, 120.0, -160.0, 14);
                belly.insert(0, (0.30, 0.46));
                belly
            },
        ],
        6 => vec![{
            let mut tail = vec![(0.64, 0.10)];
            tail.extend(arc(0.48, 0.66, 0.22, 0.24, 110.0, 470.0, 20));
            tail
        }],
        7 => vec![vec![(0.24, 0.12), (0.78, 0.12), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.30, 0.19, 0.18, 0.0, 360.0, 18),
            arc(0.5, 0.68, 0.23, 0.21, 0.0, 360.0, 18),
        ],
        9 => vec![
            arc(0.5, 0.34, 0.21, 0.21, 0.0, 360.0, 18),
            vec![(0.71, 0.38), (0.64, 0.92)],
        ],
        _ => unreachable!("classes are 0..10"),
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Per-sample rendering parameters.
///
/// Geometric jitter stays moderate so the classes remain separable; the
/// appearance factors (ink level and a brightness ramp) are strong,
/// smooth, and carry no class information, giving reconstruction-driven
/// representations something real to encode.
struct Jitter {
    angle: f64,
    scale_x: f64,
    scale_y: f64,
    shift_x: f64,
    shift_y: f64,
    width: f64,
    ink: f64,
    slant: f64,
    ramp_angle: f64,
    ramp_strength: f64,
}

impl Jitter {
    fn sample(rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            angle: rng.gen_range(-13.0_f64..=13.0),
            scale_x: rng.gen_range(0.78..=1.15),
            scale_y: rng.gen_range(0.78..=1.15),
            shift_x: rng.gen_range(-2.4..=2.4),
            shift_y: rng.gen_range(-2.4..=2.4),
            width: rng.gen_range(1.3..=2.4),
            ink: rng.gen_range(0.42..=1.0),
            slant: rng.gen_range(-0.2..=0.2),
            ramp_angle: rng.gen_range(0.0..=std::f64::consts::TAU),
            ramp_strength: rng.gen_range(0.0..=0.55),
        }
    }
}

/// Renders one digit to a 28x28 byte grid.
pub fn render_digit(class: usize, seed: u64) -> [u8; SIDE * SIDE] {
    let mut rng = rng_from_seed(seed);
    let j = Jitter::sample(&mut rng);
    let theta = j.angle.to_radians();
    let (sin, cos) = theta.sin_cos();
    let half = (SIDE as f64) / 2.0;

    // Transform skeleton points from the unit box to canvas coordinates.
    let strokes: Vec<Vec<Point>> = glyph(class)
        .into_iter()
        .map(|poly| {
            poly.into_iter()
                .map(|(ux, uy)| {
                    let gx = (ux - 0.5 + j.slant * (0.5 - uy)) * 20.0 * j.scale_x;
                    let gy = (uy - 0.5) * 20.0 * j.scale_y;
                    let rx = gx * cos - gy * sin;
                    let ry = gx * sin + gy * cos;
                    (half + rx + j.shift_x, half + ry + j.shift_y)
                })
                .collect()
        })
        .collect();

    let mut out = [0u8; SIDE * SIDE];
    let reach = j.width / 2.0 + 1.0;
    let (ramp_dx, ramp_dy) = (j.ramp_angle.cos(), j.ramp_angle.sin());
    for y in 0..SIDE {
        for x in 0..SIDE {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = f64::INFINITY;
            for poly in &strokes {
                for pair in poly.windows(2) {
                    let d = dist_to_segment(p, pair[0], pair[1]);
                    if d < best {
                        best = d;
                    }
                }
            }
            if best < reach {
                // Brightness ramp across the canvas, max +-ramp_strength.
                let proj = ((p.0 - half) * ramp_dx + (p.1 - half) * ramp_dy) / half;
                let ramp = 1.0 + j.ramp_strength * proj;
                let coverage = ((j.width / 2.0 + 0.5 - best).clamp(0.0, 1.0)) * j.ink * ramp;
                out[y * SIDE + x] = (coverage.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Raw byte images plus labels, the exact content that IDX export writes.
pub fn render_corpus(split: Split, count: usize) -> (Vec<u8>, Vec<u8>) {
    let split_tag = match split {
        Split::Train => 1u64,
        Split::Test => 2u64,
    };
    let chunks = crate::parallel::map_indexed(count, |i| {
        let class = i % 10;
        let seed = derive_seed(BASE_SEED, &[split_tag, i as u64]);
        (render_digit(class, seed), class as u8)
    });
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for (img, label) in chunks {
        pixels.extend_from_slice(&img);
        labels.push(label);
    }
    (pixels, labels)
}

/// The synthetic dataset, normalized like every other loader.
pub fn synthetic_digits(split: Split, count: usize) -> Dataset {
    let (pixels, labels) = render_corpus(split, count);
    let data: Vec<f64> = pixels.iter().map(|&b| byte_to_unit(b)).collect();
    Dataset {
        name: "synth".to_string(),
        images: Tensor::new(&[count, 1, SIDE, SIDE], data).expect("synth shape"),
        labels: labels.into_iter().map(|l| l as usize).collect(),
        split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let a = render_digit(3, 42);
        let b = render_digit(3, 42);
        let c = render_digit(3, 43);
        assert_eq!(a[..], b[..]);
        assert_ne!(a[..], c[..]);
    }

    #[test]
    fn corpus_has_all_classes_and_valid_pixels() {
        let ds = synthetic_digits(Split::Train, 100);
        assert_eq!(ds.len(), 100);
        let mut hist = [0usize; 10];
        for &l in &ds.labels {
            hist[l] += 1;
        }
        assert!(hist.iter().all(|&c| c == 10));
        assert!(ds.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        // Digits have ink: every image clears the background (-1.0) on
        // enough pixels, even at the dimmest ink level.
        let per = SIDE * SIDE;
        for i in 0..100 {
            let ink: f64 = ds.images.data()[i * per..(i + 1) * per]
                .iter()
                .filter(|v| **v > -0.75)
                .count() as f64;
            assert!(ink > 15.0, "image {i} nearly blank");
        }
    }

    #[test]
    fn train_and_test_samples_differ() {
        let tr = synthetic_digits(Split::Train, 10);
        let te = synthetic_digits(Split::Test, 10);
        assert_ne!(tr.images.data(), te.images.data());
    }
}
