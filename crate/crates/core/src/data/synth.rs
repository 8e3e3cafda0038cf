use std::f64::consts::PI;

use super::ImageRecord;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const SKIN: [f64; 3] = [200.0, 170.0, 150.0];
const LESION: [f64; 3] = [90.0, 60.0, 50.0];
const HAIR: [f64; 3] = [35.0, 25.0, 20.0];
const NOISE_SD: f64 = 10.0;
const LESION_JITTER: f64 = 15.0;
const MAX_HAIRS: usize = 5;
const MIN_FOREGROUND: f64 = 0.02;
const MAX_FOREGROUND: f64 = 0.6;
pub const SYNTH_RETRIES: usize = 100;

/// Rotated ellipse whose boundary radius is scaled by `1 + 0.2·sin(5θ + φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LesionShape {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation: f64,
    pub phase: f64,
}

impl LesionShape {
    fn sample(size: usize, rng: &mut RngState) -> Self {
        let s = size as f64;
        let cx = rng.uniform(s / 4.0, 3.0 * s / 4.0);
        let cy = rng.uniform(s / 4.0, 3.0 * s / 4.0);
        let a = rng.uniform(s / 8.0, 3.0 * s / 8.0);
        let b = rng.uniform(s / 8.0, 3.0 * s / 8.0);
        let rotation = rng.uniform(0.0, PI);
        let phase = rng.uniform(0.0, 2.0 * PI);
        Self {
            center: (cx, cy),
            semi_axes: (a, b),
            rotation,
            phase,
        }
    }

    /// Whether the centre of pixel `(x, y)` lies inside the lesion.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.center.0;
        let dy = y as f64 + 0.5 - self.center.1;
        let (sin, cos) = self.rotation.sin_cos();
        let u = (dx * cos + dy * sin) / self.semi_axes.0;
        let v = (-dx * sin + dy * cos) / self.semi_axes.1;
        let theta = v.atan2(u);
        (u * u + v * v).sqrt() <= 1.0 + 0.2 * (5.0 * theta + self.phase).sin()
    }

    /// `size×size×1` binary mask.
    pub fn mask(&self, size: usize) -> Tensor {
        let data = (0..size * size)
            .map(|i| {
                if self.contains(i % size, i / size) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::from_vec(&[size, size, 1], data).expect("square mask")
    }
}

fn foreground_fraction(mask: &Tensor) -> f64 {
    mask.data().iter().filter(|&&v| v == 1.0).count() as f64 / mask.len() as f64
}

fn draw_hair(pixels: &mut [[f64; 3]], size: usize, rng: &mut RngState) {
    let s = size as f64;
    let mut x = rng.uniform(0.0, s);
    let mut y = rng.uniform(0.0, s);
    let mut heading = rng.uniform(0.0, 2.0 * PI);
    let segments = 2 + rng.below(3);
    for _ in 0..segments {
        heading += rng.uniform(-0.6, 0.6);
        let len = rng.uniform(s / 8.0, s / 3.0);
        let steps = len.ceil() as usize;
        let (dx, dy) = (heading.cos(), heading.sin());
        for _ in 0..steps {
            x += dx;
            y += dy;
            if x >= 0.0 && y >= 0.0 && x < s && y < s {
                let at = y as usize * size + x as usize;
                pixels[at] = HAIR;
            }
        }
    }
}

fn render(size: usize, shape: &LesionShape, rng: &mut RngState) -> Tensor {
    let jitter: Vec<f64> = (0..3)
        .map(|_| rng.uniform(-LESION_JITTER, LESION_JITTER))
        .collect();
    let mut pixels = vec![[0.0; 3]; size * size];
    for (i, px) in pixels.iter_mut().enumerate() {
        let inside = shape.contains(i % size, i / size);
        for c in 0..3 {
            let base = if inside {
                LESION[c] + jitter[c]
            } else {
                SKIN[c]
            };
            px[c] = base + NOISE_SD * rng.approx_normal();
        }
    }
    for _ in 0..rng.below(MAX_HAIRS + 1) {
        draw_hair(&mut pixels, size, rng);
    }
    let data = pixels
        .iter()
        .flat_map(|px| px.map(|v| (v.round().clamp(0.0, 255.0) / 255.0) as f32))
        .collect();
    Tensor::from_vec(&[size, size, 3], data).expect("square image")
}

/// `count` deterministic skin-lesion images of side `size`, ids `synth_0000`, …
///
/// Each lesion is resampled until its mask covers between 2% and 60% of the
/// image. Hairs are drawn on the image only.
pub fn generate_synthetic(seed: u64, count: usize, size: usize) -> Result<Vec<ImageRecord>> {
    if size == 0 || !size.is_multiple_of(8) {
        return Err(Error::Config(format!(
            "image size {size} is not divisible by 8"
        )));
    }
    let mut rng = RngState::new(seed)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut accepted = None;
        for _ in 0..SYNTH_RETRIES {
            let shape = LesionShape::sample(size, &mut rng);
            let mask = shape.mask(size);
            let f = foreground_fraction(&mask);
            if (MIN_FOREGROUND..MAX_FOREGROUND).contains(&f) {
                accepted = Some((shape, mask));
                break;
            }
        }
        let Some((shape, mask)) = accepted else {
            return Err(Error::Config(format!(
                "no lesion with foreground fraction in [{MIN_FOREGROUND}, {MAX_FOREGROUND}) after {SYNTH_RETRIES} tries at size {size}"
            )));
        };
        let image = render(size, &shape, &mut rng);
        out.push(ImageRecord {
            id: format!("synth_{i:04}"),
            image,
            mask: Some(mask),
        });
    }
    Ok(out)
}

/// Lesion geometry of each record produced by [`generate_synthetic`].
pub fn synthetic_shapes(seed: u64, count: usize, size: usize) -> Result<Vec<LesionShape>> {
    let mut rng = RngState::new(seed)?;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = loop {
            let shape = LesionShape::sample(size, &mut rng);
            if (MIN_FOREGROUND..MAX_FOREGROUND).contains(&foreground_fraction(&shape.mask(size))) {
                break shape;
            }
        };
        render(size, &shape, &mut rng);
        shapes.push(shape);
    }
    Ok(shapes)
}
