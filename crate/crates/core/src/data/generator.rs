//! Bouncing-digit sequence synthesis.
//!
//! Each digit starts at a uniform position with a uniform heading and a
//! uniform speed, then moves in a straight line, reflecting off the canvas
//! walls. Frames are the per-pixel maximum of the rendered sprites.

use std::f64::consts::TAU;

use rand::Rng;

use super::idx::Bitmap;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub canvas: usize,
    pub sprite: usize,
    pub digits: usize,
    pub frames: usize,
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            canvas: 64,
            sprite: 28,
            digits: 2,
            frames: 20,
            speed: (3.0, 5.0),
        }
    }
}

impl GeneratorConfig {
    /// Scales the standard 64-pixel setting to another canvas size: sprite
    /// side and speeds shrink proportionally.
    pub fn for_canvas(canvas: usize, frames: usize) -> Self {
        let base = Self::default();
        if canvas == base.canvas {
            return GeneratorConfig { frames, ..base };
        }
        let ratio = canvas as f64 / base.canvas as f64;
        GeneratorConfig {
            canvas,
            sprite: ((base.sprite as f64 * ratio).round() as usize).clamp(1, canvas),
            frames,
            speed: (base.speed.0 * ratio, base.speed.1 * ratio),
            ..base
        }
    }

    /// Largest valid top-left coordinate per axis.
    pub fn bound(&self) -> f64 {
        (self.canvas - self.sprite) as f64
    }
}

/// Position and velocity of one sprite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub pos: (f64, f64),
    pub vel: (f64, f64),
}

/// One axis of motion: moves by `v` and mirrors about whichever bound was
/// crossed, negating the velocity.
pub fn reflect(pos: f64, vel: f64, bound: f64) -> (f64, f64) {
    let (mut p, mut v) = (pos + vel, vel);
    loop {
        if p < 0.0 {
            p = -p;
            v = -v;
        } else if p > bound {
            p = 2.0 * bound - p;
            v = -v;
        } else {
            return (p, v);
        }
        if bound == 0.0 {
            return (0.0, v);
        }
    }
}

impl Motion {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &GeneratorConfig) -> Self {
        let bound = cfg.bound();
        let pos = (rng.random_range(0.0..=bound), rng.random_range(0.0..=bound));
        let angle = rng.random_range(0.0..TAU);
        let speed = if cfg.speed.0 < cfg.speed.1 {
            rng.random_range(cfg.speed.0..=cfg.speed.1)
        } else {
            cfg.speed.0
        };
        Motion {
            pos,
            vel: (speed * angle.cos(), speed * angle.sin()),
        }
    }

    pub fn advance(&mut self, bound: f64) {
        let (x, vx) = reflect(self.pos.0, self.vel.0, bound);
        let (y, vy) = reflect(self.pos.1, self.vel.1, bound);
        self.pos = (x, y);
        self.vel = (vx, vy);
    }

    /// Integer top-left corner used for rendering.
    pub fn pixel(&self) -> (usize, usize) {
        (self.pos.0.round() as usize, self.pos.1.round() as usize)
    }
}

/// A procedural stand-in for a handwritten digit: a filled ellipse with
/// random axes and orientation.
pub fn procedural_glyph<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Bitmap {
    let s = size as f64;
    let a = rng.random_range(0.22..0.45) * s;
    let b = rng.random_range(0.10..0.30) * s;
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = theta.sin_cos();
    let c = (s - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            pixels.push(if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                1.0
            } else {
                0.0
            });
        }
    }
    Bitmap {
        height: size,
        width: size,
        pixels,
    }
}

/// Generated frames `(frames, 1, canvas, canvas)` flattened, plus the motion
/// of every sprite at every frame.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<f32>,
    pub motions: Vec<Vec<Motion>>,
}

/// Renders a bouncing sequence for the given sprites (each `sprite x sprite`).
pub fn generate_sequence<R: Rng + ?Sized>(rng: &mut R, sprites: &[Bitmap], cfg: &GeneratorConfig) -> Sequence {
    let mut motions: Vec<Motion> = sprites.iter().map(|_| Motion::random(rng, cfg)).collect();
    render_trajectory(sprites, &mut motions, cfg)
}

/// Renders `cfg.frames` frames starting from the given motions.
pub fn render_trajectory(sprites: &[Bitmap], motions: &mut [Motion], cfg: &GeneratorConfig) -> Sequence {
    let n = cfg.canvas;
    let bound = cfg.bound();
    let mut frames = vec![0f32; cfg.frames * n * n];
    let mut history = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for m in motions.iter_mut() {
                m.advance(bound);
            }
        }
        let frame = &mut frames[t * n * n..(t + 1) * n * n];
        for (sprite, m) in sprites.iter().zip(motions.iter()) {
            let (x0, y0) = m.pixel();
            for y in 0..sprite.height {
                for x in 0..sprite.width {
                    let (cy, cx) = (y0 + y, x0 + x);
                    if cy < n && cx < n {
                        let px = &mut frame[cy * n + cx];
                        *px = px.max(sprite.get(y, x));
                    }
                }
            }
        }
        history.push(motions.to_vec());
    }
    Sequence {
        frames,
        motions: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reflection_off_far_wall() {
        let (p, v) = reflect(35.0, 3.0, 36.0);
        assert_eq!((p, v), (34.0, -3.0));
        let (p, v) = reflect(1.0, -3.0, 36.0);
        assert_eq!((p, v), (2.0, 3.0));
    }

    #[test]
    fn zero_velocity_is_static() {
        let cfg = GeneratorConfig::default();
        let sprite = Bitmap {
            height: 28,
            width: 28,
            pixels: vec![1.0; 784],
        };
        let mut m = [Motion {
            pos: (10.0, 20.0),
            vel: (0.0, 0.0),
        }];
        let seq = render_trajectory(&[sprite], &mut m, &cfg);
        let n = 64 * 64;
        for t in 1..cfg.frames {
            assert_eq!(seq.frames[t * n..(t + 1) * n], seq.frames[..n]);
        }
    }

    #[test]
    fn speed_is_constant() {
        let cfg = GeneratorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sprites: Vec<_> = (0..2).map(|_| procedural_glyph(&mut rng, 28)).collect();
        let seq = generate_sequence(&mut rng, &sprites, &cfg);
        for d in 0..2 {
            let s0 = seq.motions[0][d].vel;
            for ms in &seq.motions {
                let v = ms[d].vel;
                assert_eq!(v.0.abs(), s0.0.abs());
                assert_eq!(v.1.abs(), s0.1.abs());
                assert!((v.0.hypot(v.1) - s0.0.hypot(s0.1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_canvas() {
        let cfg = GeneratorConfig::for_canvas(32, 10);
        assert_eq!((cfg.sprite, cfg.frames, cfg.speed), (14, 10, (1.5, 2.5)));
    }
}
