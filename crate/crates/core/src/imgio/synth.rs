//! Seeded synthetic vessel-image generator.
//!
//! Stands in for clinical datasets at desk scale. Two styles model
//! cross-class transfer: `retina` draws branching curves on a bright
//! vignetted disc, `neuron` draws thinner non-branching curves on a
//! textured background. Pure function of (seed, width, height, style).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MaskImage, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStyle {
    Retina,
    Neuron,
}

impl SynthStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthStyle::Retina => "retina",
            SynthStyle::Neuron => "neuron",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "retina" => Ok(SynthStyle::Retina),
            "neuron" => Ok(SynthStyle::Neuron),
            other => Err(Error::Config(format!("unknown style `{other}`"))),
        }
    }
}

const MIN_DIM: usize = 32;
// Hard ceiling on mask coverage; spawning stops at the per-image target
// (drawn from [0.06, 0.14]) well before this.
const MAX_FRACTION: f64 = 0.19;

struct Walker {
    x: f64,
    y: f64,
    dx: f64,
    dy: f64,
    radius: f64,
    steps_left: usize,
}

struct Canvas {
    width: usize,
    height: usize,
    mask: Vec<u8>,
    foreground: usize,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mask: vec![0; width * height],
            foreground: 0,
        }
    }

    fn fraction(&self) -> f64 {
        self.foreground as f64 / self.mask.len() as f64
    }

    // Stamps a filled disc; `fov` optionally restricts to a field-of-view
    // disc (center, radius).
    fn stamp(&mut self, cx: f64, cy: f64, r: f64, fov: Option<(f64, f64, f64)>) {
        let reach = r.ceil() as i64;
        let px = cx.round() as i64;
        let py = cy.round() as i64;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (px + dx, py + dy);
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    continue;
                }
                let (fx, fy) = (x as f64 - cx, y as f64 - cy);
                if fx * fx + fy * fy > r * r {
                    continue;
                }
                if let Some((fcx, fcy, fr)) = fov {
                    let (gx, gy) = (x as f64 - fcx, y as f64 - fcy);
                    if gx * gx + gy * gy > fr * fr {
                        continue;
                    }
                }
                let idx = y as usize * self.width + x as usize;
                if self.mask[idx] == 0 {
                    self.mask[idx] = 1;
                    self.foreground += 1;
                }
            }
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> (f64, f64) {
    loop {
        let a = rng.random::<f64>() * 2.0 - 1.0;
        let b = rng.random::<f64>() * 2.0 - 1.0;
        let n2 = a * a + b * b;
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return (a / n, b / n);
        }
    }
}

// Bends (dx, dy) sideways by blending in the perpendicular, then renormalizes.
fn bend(dx: f64, dy: f64, amount: f64) -> (f64, f64) {
    let (px, py) = (-dy, dx);
    let nx = dx + amount * px;
    let ny = dy + amount * py;
    let n = (nx * nx + ny * ny).sqrt();
    (nx / n, ny / n)
}

// How a style grows its curves.
struct GrowthStyle {
    /// Maximum sideways bend per step.
    jitter: f64,
    /// Per-step probability of pushing a branch walker.
    branch_prob: f64,
    /// Field-of-view disc confining the growth, if any.
    fov: Option<(f64, f64, f64)>,
    /// Mask fraction at which drawing stops.
    target: f64,
}

fn walk(canvas: &mut Canvas, rng: &mut ChaCha8Rng, mut w: Walker, style: &GrowthStyle, pending: &mut Vec<Walker>) {
    while w.steps_left > 0 {
        canvas.stamp(w.x, w.y, w.radius, style.fov);
        if canvas.fraction() >= style.target || canvas.fraction() >= MAX_FRACTION {
            return;
        }
        w.steps_left -= 1;
        w.x += w.dx;
        w.y += w.dy;
        if w.x < 1.0 || w.y < 1.0 || w.x >= canvas.width as f64 - 1.0 || w.y >= canvas.height as f64 - 1.0
        {
            return;
        }
        if let Some((fcx, fcy, fr)) = style.fov {
            let (gx, gy) = (w.x - fcx, w.y - fcy);
            if gx * gx + gy * gy > (0.92 * fr) * (0.92 * fr) {
                return;
            }
        }
        let turn = (rng.random::<f64>() * 2.0 - 1.0) * style.jitter;
        let (dx, dy) = bend(w.dx, w.dy, turn);
        w.dx = dx;
        w.dy = dy;
        if style.branch_prob > 0.0 && w.radius > 1.0 && rng.random::<f64>() < style.branch_prob {
            let side = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let strength = 0.45 + 0.45 * rng.random::<f64>();
            let (bx, by) = bend(w.dx, w.dy, side * strength);
            pending.push(Walker {
                x: w.x,
                y: w.y,
                dx: bx,
                dy: by,
                radius: w.radius * 0.78,
                steps_left: w.steps_left,
            });
        }
        // Vessels taper slowly toward their ends.
        w.radius = (w.radius * 0.998).max(0.8);
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn retina(rng: &mut ChaCha8Rng, width: usize, height: usize) -> (Vec<f64>, MaskImage) {
    let (w, h) = (width as f64, height as f64);
    let cx = w / 2.0 + (rng.random::<f64>() - 0.5) * w * 0.04;
    let cy = h / 2.0 + (rng.random::<f64>() - 0.5) * h * 0.04;
    let radius = 0.47 * w.min(h) * (0.97 + 0.06 * rng.random::<f64>());

    let mut green = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 - cx) / radius;
            let dy = (y as f64 - cy) / radius;
            let d2 = dx * dx + dy * dy;
            let noise = (rng.random::<f64>() - 0.5) * 0.04;
            green[y * width + x] = if d2 <= 1.0 {
                clamp01(0.80 - 0.28 * d2 + noise)
            } else {
                clamp01(0.07 + noise * 0.5)
            };
        }
    }

    let mut canvas = Canvas::new(width, height);
    let style = GrowthStyle {
        jitter: 0.14,
        branch_prob: 0.035,
        fov: Some((cx, cy, radius)),
        target: 0.08 + 0.06 * rng.random::<f64>(),
    };
    let mut pending: Vec<Walker> = Vec::new();
    let mut spawns = 0;
    while canvas.fraction() < style.target && spawns < 400 {
        let walker = pending.pop().unwrap_or_else(|| {
            spawns += 1;
            let (ux, uy) = unit_vector(rng);
            let off = rng.random::<f64>() * 0.25 * radius;
            let (dx, dy) = unit_vector(rng);
            Walker {
                x: cx + ux * off,
                y: cy + uy * off,
                dx,
                dy,
                radius: 1.6 + rng.random::<f64>(),
                steps_left: (4.0 * radius) as usize,
            }
        });
        walk(&mut canvas, rng, walker, &style, &mut pending);
    }

    for (i, &m) in canvas.mask.iter().enumerate() {
        if m == 1 {
            green[i] *= 0.40;
        }
    }
    let mask = MaskImage::new(width, height, canvas.mask).expect("canvas mask is binary");
    (green, mask)
}

fn neuron(rng: &mut ChaCha8Rng, width: usize, height: usize) -> (Vec<f64>, MaskImage) {
    // Value-noise background: coarse random grid, bilinearly interpolated.
    let cell = 8usize;
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let grid: Vec<f64> = (0..gw * gh)
        .map(|_| 0.40 + 0.30 * rng.random::<f64>())
        .collect();
    let mut green = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / cell as f64;
            let fy = y as f64 / cell as f64;
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let g = |gx: usize, gy: usize| grid[gy * gw + gx];
            let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
            let bot = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
            let base = top * (1.0 - ty) + bot * ty;
            let noise = (rng.random::<f64>() - 0.5) * 0.10;
            green[y * width + x] = clamp01(base + noise);
        }
    }

    let mut canvas = Canvas::new(width, height);
    // Non-branching, higher curvature than the retina style.
    let style = GrowthStyle {
        jitter: 0.30,
        branch_prob: 0.0,
        fov: None,
        target: 0.06 + 0.05 * rng.random::<f64>(),
    };
    let mut pending: Vec<Walker> = Vec::new();
    let mut spawns = 0;
    while canvas.fraction() < style.target && spawns < 400 {
        spawns += 1;
        let (dx, dy) = unit_vector(rng);
        let walker = Walker {
            x: 2.0 + rng.random::<f64>() * (width as f64 - 4.0),
            y: 2.0 + rng.random::<f64>() * (height as f64 - 4.0),
            dx,
            dy,
            radius: 0.9,
            steps_left: 3 * width.max(height),
        };
        walk(&mut canvas, rng, walker, &style, &mut pending);
    }

    for (i, &m) in canvas.mask.iter().enumerate() {
        if m == 1 {
            green[i] *= 0.35;
        }
    }
    let mask = MaskImage::new(width, height, canvas.mask).expect("canvas mask is binary");
    (green, mask)
}

/// Generates a synthetic (image, mask) pair; deterministic per
/// (seed, width, height, style). Vessel pixels cover 5-20% of the mask.
pub fn synth_vessels(
    seed: u64,
    width: usize,
    height: usize,
    style: SynthStyle,
) -> Result<(RgbImage, MaskImage)> {
    if width < MIN_DIM || height < MIN_DIM {
        return Err(Error::Config(format!(
            "synthetic images must be at least {MIN_DIM}x{MIN_DIM}, got {width}x{height}"
        )));
    }
    let salt = match style {
        SynthStyle::Retina => 0x5245_5449_4e41u64,
        SynthStyle::Neuron => 0x4e45_5552_4f4eu64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let (green, mask) = match style {
        SynthStyle::Retina => retina(&mut rng, width, height),
        SynthStyle::Neuron => neuron(&mut rng, width, height),
    };
    let (rk, bk) = match style {
        SynthStyle::Retina => (1.25, 0.42),
        SynthStyle::Neuron => (0.92, 0.95),
    };
    let red: Vec<f64> = green.iter().map(|&g| clamp01(g * rk + 0.02)).collect();
    let blue: Vec<f64> = green.iter().map(|&g| clamp01(g * bk)).collect();
    let img = RgbImage::new(width, height, [red, green, blue])?;
    Ok((img, mask))
}
