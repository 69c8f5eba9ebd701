//! Synthetic sequences: a camera window sliding over a random 2-D world,
//! with planted returns to earlier stretches of the path.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pgm::{write_gray8, PgmError};
use crate::eval::{derive_loop_labels, EvalError, LoopLabelSet, Trajectory};
use crate::types::Grid;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    /// `(i, j)`: frames `j..j + revisit_span` retrace frames `i..i + revisit_span`.
    pub loops: Vec<(usize, usize)>,
    pub revisit_span: usize,
    pub texture_seed: u64,
    /// Per-frame uniform offset in whole pixels along each axis.
    pub jitter: u32,
    pub width: usize,
    pub height: usize,
    /// Camera advance per frame, in pixels.
    pub step: usize,
    pub metres_per_pixel: f64,
    pub label_radius: f64,
    pub label_min_gap: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            length: 300,
            loops: vec![(30, 120), (60, 180), (96, 252)],
            revisit_span: 24,
            texture_seed: 7,
            jitter: 2,
            width: 128,
            height: 96,
            step: 40,
            metres_per_pixel: 0.01,
            label_radius: 0.1,
            label_min_gap: 50,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.length == 0 || self.width < 16 || self.height < 16 || self.step == 0 {
            return bad("length, step must be positive and the frame at least 16x16".into());
        }
        if !(self.metres_per_pixel > 0.0) || !(self.label_radius > 0.0) {
            return bad("metres_per_pixel and label_radius must be positive".into());
        }
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for &(i, j) in &self.loops {
            if i + self.revisit_span > j {
                return bad(format!("revisit ({i}, {j}) overlaps the stretch it retraces"));
            }
            if j + self.revisit_span > self.length {
                return bad(format!("revisit ({i}, {j}) runs past the last frame"));
            }
            if spans.iter().any(|&(a, b)| j < b && a < j + self.revisit_span) {
                return bad(format!("revisit ({i}, {j}) overlaps another revisit"));
            }
            spans.push((j, j + self.revisit_span));
        }
        Ok(())
    }

    /// Path slot of every frame; revisits reuse earlier slots.
    fn slots(&self) -> Vec<usize> {
        let mut slots = Vec::with_capacity(self.length);
        let mut fresh = 0;
        for f in 0..self.length {
            let back = self
                .loops
                .iter()
                .find(|&&(_, j)| (j..j + self.revisit_span).contains(&f));
            match back {
                Some(&(i, j)) => slots.push(slots[i + f - j]),
                None => {
                    slots.push(fresh);
                    fresh += 1;
                }
            }
        }
        slots
    }
}

/// Rendered frames with their exact poses and loop labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub images: Vec<Grid>,
    pub poses: Trajectory,
    pub labels: LoopLabelSet,
}

fn render_world(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Grid {
    let mut px = vec![0.0f64; width * height];
    // Smooth horizontal shading so flat regions still differ along the path.
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    for y in 0..height {
        for x in 0..width {
            px[y * width + x] = 110.0 + 30.0 * ((x as f64) / 53.0 + phase).sin() + 20.0 * ((y as f64) / 17.0).cos();
        }
    }
    let shapes = width * height / 90;
    for _ in 0..shapes {
        let cx = rng.gen_range(0..width) as isize;
        let cy = rng.gen_range(0..height) as isize;
        let rx = rng.gen_range(2..10) as isize;
        let ry = rng.gen_range(2..10) as isize;
        let v = f64::from(rng.gen_range(0u8..=255));
        let ellipse = rng.gen_bool(0.4);
        for y in (cy - ry).max(0)..(cy + ry).min(height as isize) {
            for x in (cx - rx).max(0)..(cx + rx).min(width as isize) {
                let inside = !ellipse || {
                    let (dx, dy) = ((x - cx) as f64 / rx as f64, (y - cy) as f64 / ry as f64);
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    px[y as usize * width + x as usize] = v;
                }
            }
        }
    }
    Grid::new(width, height, px).expect("finite pixels")
}

/// Renders the sequence in memory. Deterministic for a given spec.
pub fn render_sequence(spec: &SynthSpec) -> Result<SynthSequence, SynthError> {
    spec.validate()?;
    let slots = spec.slots();
    let fresh = slots.iter().copied().max().unwrap_or(0) + 1;
    let margin = spec.jitter as usize;
    let world_w = (fresh - 1) * spec.step + spec.width + 2 * margin;
    let world_h = spec.height + 2 * margin;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let world = render_world(world_w, world_h, &mut rng);
    let j = spec.jitter as i64;

    let mut images = Vec::with_capacity(spec.length);
    let mut points = Vec::with_capacity(spec.length);
    for (f, &slot) in slots.iter().enumerate() {
        let (jx, jy) = (rng.gen_range(-j..=j), rng.gen_range(-j..=j));
        let x0 = (slot * spec.step + margin) as i64 + jx;
        let y0 = margin as i64 + jy;
        images.push(Grid::from_fn(spec.width, spec.height, |x, y| {
            world.get((x0 + x as i64) as usize, (y0 + y as i64) as usize)
        }));
        let m = spec.metres_per_pixel;
        points.push((
            f as u64,
            [(slot * spec.step) as f64 * m + jx as f64 * m, jy as f64 * m, 0.0],
        ));
    }
    let poses = Trajectory::new(points)?;
    let labels = derive_loop_labels(&poses, spec.label_radius, spec.label_min_gap)?;
    Ok(SynthSequence {
        images,
        poses,
        labels,
    })
}

/// Writes `image_0/NNNNNN.pgm`, `poses.txt` (id + row-major 3x4 pose),
/// `labels.tsv` and `synth.json` under `out`.
pub fn synth_loop_sequence(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<SynthSequence, SynthError> {
    let seq = render_sequence(spec)?;
    let out = out.as_ref();
    let img_dir = out.join("image_0");
    fs::create_dir_all(&img_dir)?;
    for (f, img) in seq.images.iter().enumerate() {
        write_gray8(img_dir.join(format!("{f:06}.pgm")), img)?;
    }
    let mut poses = String::new();
    for (id, p) in seq.poses.iter() {
        poses.push_str(&format!("{id} 1 0 0 {} 0 1 0 {} 0 0 1 {}\n", p.x, p.y, p.z));
    }
    fs::write(out.join("poses.txt"), poses)?;
    fs::write(out.join("labels.tsv"), seq.labels.to_tsv())?;
    fs::write(out.join("synth.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            length: 60,
            loops: vec![],
            revisit_span: 8,
            width: 32,
            height: 24,
            label_min_gap: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn no_loops_no_labels() {
        let s = render_sequence(&small()).unwrap();
        assert_eq!(s.images.len(), 60);
        assert!(s.labels.is_empty());
    }

    #[test]
    fn planted_revisit_labels_match_brute_force() {
        let spec = SynthSpec {
            loops: vec![(5, 40)],
            ..small()
        };
        let s = render_sequence(&spec).unwrap();
        assert!(!s.labels.is_empty());
        let mut brute = std::collections::BTreeSet::new();
        for (a, pa) in s.poses.iter() {
            for (b, pb) in s.poses.iter() {
                if b >= a + 10 && (pa - pb).norm() <= spec.label_radius {
                    brute.insert((a, b));
                }
            }
        }
        assert_eq!(s.labels.pairs, brute);
        for &(a, b) in &s.labels.pairs {
            assert!((4..14).contains(&a) && (40..48).contains(&b), "({a}, {b})");
        }
        for f in 40..48u64 {
            assert!(s.labels.pairs.iter().any(|&(_, b)| b == f));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec {
            loops: vec![(2, 30)],
            ..small()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_loop_sequence(&spec, a.path()).unwrap();
        synth_loop_sequence(&spec, b.path()).unwrap();
        for name in ["image_0/000031.pgm", "poses.txt", "labels.tsv"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let other = render_sequence(&SynthSpec { texture_seed: 8, ..spec }).unwrap();
        assert_ne!(other.images[0], render_sequence(&small()).unwrap().images[0]);
    }

    #[test]
    fn rejects_bad_specs() {
        for loops in [vec![(0, 4)], vec![(0, 58)], vec![(0, 20), (10, 24)]] {
            let spec = SynthSpec { loops, ..small() };
            assert!(matches!(render_sequence(&spec), Err(SynthError::Spec(_))));
        }
    }
}
