//! Synthetic gesture corpus: a bright disc tracing one of several motion
//! patterns over a dark, lightly noisy background.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Class names of the built-in motion patterns, in generation order.
pub const PATTERNS: [&str; 8] = [
    "sweep_left",
    "sweep_right",
    "sweep_up",
    "sweep_down",
    "circle_cw",
    "circle_ccw",
    "zigzag",
    "diagonal",
];

const BACKGROUND: f64 = 20.0;
const FOREGROUND: f64 = 230.0;
const NOISE: f64 = 10.0;

/// Per-clip variation of a pattern.
struct Jitter {
    dx: f64,
    dy: f64,
    speed: f64,
    phase: f64,
}

/// Disc centre, in fractions of the frame, at progress `u`.
fn trajectory(pattern: usize, u: f64) -> (f64, f64) {
    let sweep = 0.2 + 0.6 * u;
    match pattern {
        0 => (1.0 - sweep, 0.5),
        1 => (sweep, 0.5),
        2 => (0.5, 1.0 - sweep),
        3 => (0.5, sweep),
        4 | 5 => {
            let dir = if pattern == 4 { 1.0 } else { -1.0 };
            let a = dir * TAU * u;
            (0.5 + 0.25 * a.cos(), 0.5 + 0.25 * a.sin())
        }
        6 => {
            let tri = 1.0 - 2.0 * ((3.0 * u).fract() - 0.5).abs() * 2.0;
            (sweep, 0.5 + 0.2 * tri)
        }
        _ => (sweep, sweep),
    }
}

fn render(pattern: usize, k: usize, frames: usize, [h, w]: [usize; 2], jitter: &Jitter, rng: &mut Rng) -> Image {
    let u = jitter.phase + jitter.speed * k as f64 / (frames.max(2) - 1) as f64;
    let (cx, cy) = trajectory(pattern, u);
    let (cx, cy) = ((cx + jitter.dx) * w as f64, (cy + jitter.dy) * h as f64);
    let radius = 0.12 * h.min(w) as f64;
    let mut samples = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let base = if px * px + py * py <= radius * radius {
                FOREGROUND
            } else {
                BACKGROUND
            };
            let v = base + rng.uniform(-NOISE, NOISE);
            samples.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(h, w, 1, samples).expect("extent product matches buffer")
}

/// Writes `num_classes × clips_per_class` clips of `frames` PGM frames to
/// `out_dir/<pattern>/clip_NNN/frame_NNN.pgm`. Each clip jitters the start
/// position, speed and phase of its class pattern. Returns the clip count.
pub fn generate_synthetic(
    out_dir: &Path,
    num_classes: usize,
    clips_per_class: usize,
    frames: usize,
    size: [usize; 2],
    seed: u64,
) -> Result<usize> {
    if num_classes == 0 || num_classes > PATTERNS.len() {
        return Err(Error::Config(format!(
            "synthetic corpus supports 1 to {} classes, got {num_classes}",
            PATTERNS.len()
        )));
    }
    if clips_per_class == 0 || frames == 0 || size.contains(&0) {
        return Err(Error::Config("synthetic corpus extents must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    for (pattern, name) in PATTERNS.iter().enumerate().take(num_classes) {
        for clip in 0..clips_per_class {
            let jitter = Jitter {
                dx: rng.uniform(-0.06, 0.06),
                dy: rng.uniform(-0.06, 0.06),
                speed: rng.uniform(0.85, 1.0),
                phase: rng.uniform(0.0, 0.1),
            };
            let dir = out_dir.join(name).join(format!("clip_{clip:03}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for k in 0..frames {
                let image = render(pattern, k, frames, size, &jitter, &mut rng);
                let path = dir.join(format!("frame_{k:03}.pgm"));
                fs::write(&path, image.encode()).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(num_classes * clips_per_class)
}
