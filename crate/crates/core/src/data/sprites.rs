use std::f64::consts::TAU;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Glyph, GlyphSource, VideoSequence};
use crate::{Error, Result};

/// Parameters of a bouncing-sprite sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingSpriteSpec {
    /// `(H, W)` in pixels.
    pub canvas: (usize, usize),
    pub n_sprites: usize,
    /// Pixels per step.
    pub speed: f64,
    #[serde(default)]
    pub glyphs: GlyphSource,
    pub seed: u64,
}

impl Default for MovingSpriteSpec {
    fn default() -> Self {
        Self {
            canvas: (64, 64),
            n_sprites: 2,
            speed: 3.0,
            glyphs: GlyphSource::default(),
            seed: 0,
        }
    }
}

impl MovingSpriteSpec {
    /// Same spec with another seed; dataset splits are seed ranges.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self, glyphs: &[Glyph]) -> Result<()> {
        let (h, w) = self.canvas;
        if h < 8 || w < 8 {
            return Err(Error::InvalidSpec(format!("canvas {h}x{w} below 8x8")));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::InvalidSpec(format!("speed must be positive, got {}", self.speed)));
        }
        if glyphs.is_empty() {
            return Err(Error::InvalidSpec("glyph set is empty".into()));
        }
        if let Some(g) = glyphs.iter().find(|g| g.height > h || g.width > w) {
            return Err(Error::InvalidSpec(format!(
                "glyph {}x{} larger than canvas {h}x{w}",
                g.height, g.width
            )));
        }
        Ok(())
    }
}

/// One sprite: continuous top-left position `(y, x)` and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub glyph: usize,
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl Sprite {
    /// Moves one step, reflecting specularly off `[0, max]` on each axis.
    pub fn advance(&mut self, max: [f64; 2]) {
        for axis in 0..2 {
            let hi = max[axis];
            if hi <= 0.0 {
                self.pos[axis] = 0.0;
                continue;
            }
            let mut p = self.pos[axis] + self.vel[axis];
            while !(0.0..=hi).contains(&p) {
                if p < 0.0 {
                    p = -p;
                } else {
                    p = 2.0 * hi - p;
                }
                self.vel[axis] = -self.vel[axis];
            }
            self.pos[axis] = p;
        }
    }

    /// Integer top-left offset used for rendering.
    pub fn offset(&self) -> [usize; 2] {
        [self.pos[0].round() as usize, self.pos[1].round() as usize]
    }
}

/// Renders `length` frames of sprites moving from their current state.
///
/// Overlaps are composited by per-pixel maximum.
pub fn render_trajectories(
    canvas: (usize, usize),
    glyphs: &[Glyph],
    sprites: &mut [Sprite],
    length: usize,
    id: impl Into<String>,
) -> Result<VideoSequence> {
    let (h, w) = canvas;
    let mut data = vec![0.0f64; length * h * w];
    for t in 0..length {
        let frame = &mut data[t * h * w..(t + 1) * h * w];
        for s in sprites.iter_mut() {
            let g = glyphs
                .get(s.glyph)
                .ok_or_else(|| Error::InvalidSpec(format!("no glyph {}", s.glyph)))?;
            if t > 0 {
                s.advance([(h - g.height) as f64, (w - g.width) as f64]);
            }
            let [oy, ox] = s.offset();
            for gy in 0..g.height {
                for gx in 0..g.width {
                    let dst = &mut frame[(oy + gy) * w + ox + gx];
                    *dst = dst.max(g.pixels[gy * g.width + gx]);
                }
            }
        }
    }
    VideoSequence::new(id, [length, h, w, 1], data)
}

/// Deterministic bouncing-sprite sequence for `spec`.
pub fn generate_moving_sprites(spec: &MovingSpriteSpec, length: usize) -> Result<VideoSequence> {
    if length < 1 {
        return Err(Error::InvalidSpec("length must be at least 1".into()));
    }
    let glyphs = spec.glyphs.load()?;
    spec.validate(&glyphs)?;
    let (h, w) = spec.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sprites: Vec<Sprite> = (0..spec.n_sprites)
        .map(|_| {
            let glyph = rng.random_range(0..glyphs.len());
            let g = &glyphs[glyph];
            let max = [(h - g.height) as f64, (w - g.width) as f64];
            let pos = [rng.random::<f64>() * max[0], rng.random::<f64>() * max[1]];
            let angle = rng.random::<f64>() * TAU;
            Sprite {
                glyph,
                pos,
                vel: [spec.speed * angle.sin(), spec.speed * angle.cos()],
            }
        })
        .collect();
    render_trajectories(
        spec.canvas,
        &glyphs,
        &mut sprites,
        length,
        format!("seq_{:06}", spec.seed),
    )
}

/// Horizontal direction of the future motion in a bimodal sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

/// Two-mode toy set: one sprite rests at the canvas center for `context_len`
/// frames (identical across samples), then moves left or right at `speed`
/// for `horizon` frames with equal probability.
pub fn bimodal_sprites(
    canvas: (usize, usize),
    glyph: &Glyph,
    context_len: usize,
    horizon: usize,
    speed: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<(VideoSequence, Direction)>> {
    let (h, w) = canvas;
    if glyph.height > h || glyph.width > w {
        return Err(Error::InvalidSpec("glyph larger than canvas".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = [
        ((h - glyph.height) / 2) as f64,
        ((w - glyph.width) / 2) as f64,
    ];
    let glyphs = std::slice::from_ref(glyph);
    (0..count)
        .map(|i| {
            let dir = if rng.random::<bool>() {
                Direction::Right
            } else {
                Direction::Left
            };
            let mut still = [Sprite {
                glyph: 0,
                pos: center,
                vel: [0.0, 0.0],
            }];
            let ctx = render_trajectories(canvas, glyphs, &mut still, context_len, "")?;
            let vx = match dir {
                Direction::Right => speed,
                Direction::Left => -speed,
            };
            let mut moving = [Sprite {
                glyph: 0,
                pos: center,
                vel: [0.0, vx],
            }];
            // The first rendered frame is the resting position; drop it.
            let fut = render_trajectories(canvas, glyphs, &mut moving, horizon + 1, "")?
                .slice(1, horizon, "")?;
            Ok((ctx.concat(&fut)?.with_id(format!("bimodal_{i:05}")), dir))
        })
        .collect()
}

/// Horizontal center of mass of frame `t`, or `None` for a blank frame.
pub fn center_of_mass_x(seq: &VideoSequence, t: usize) -> Option<f64> {
    let (w, c) = (seq.width(), seq.channels());
    let mut mass = 0.0;
    let mut moment = 0.0;
    for (i, v) in seq.frame(t).iter().enumerate() {
        let x = (i / c) % w;
        mass += v;
        moment += v * x as f64;
    }
    (mass > 1e-9).then(|| moment / mass)
}

/// Direction of the horizontal center-of-mass shift from frame `from` to
/// frame `to`; `None` when either frame is blank or nothing moved.
pub fn displacement_direction(seq: &VideoSequence, from: usize, to: usize) -> Option<Direction> {
    let dx = center_of_mass_x(seq, to)? - center_of_mass_x(seq, from)?;
    if dx.abs() < 1e-6 {
        None
    } else if dx > 0.0 {
        Some(Direction::Right)
    } else {
        Some(Direction::Left)
    }
}
