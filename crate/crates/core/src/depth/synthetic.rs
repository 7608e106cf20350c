//! Synthetic stereo pairs with exact ground-truth disparity.
//!
//! Scenes are a textured background plus textured rectangles, each at an
//! integer disparity. Textures are defined in left-image coordinates, so a
//! surface at disparity `d` appears in the right view at `x - d`; nearer
//! (larger disparity) surfaces occlude farther ones in both views.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NOISE_CELL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub background_disparity: usize,
    pub max_disparity: usize,
    pub rectangles: usize,
    /// Amplitude of per-pixel noise added on top of the smooth texture.
    pub grain: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            background_disparity: 2,
            max_disparity: 16,
            rectangles: 3,
            grain: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::invalid("synthetic images must be at least 4x4"));
        }
        if !(0.0..=0.5).contains(&self.grain) {
            return Err(Error::invalid(format!(
                "grain must be in [0, 0.5], got {}",
                self.grain
            )));
        }
        if self.background_disparity > self.max_disparity || self.max_disparity >= self.width {
            return Err(Error::invalid(format!(
                "need background_disparity <= max_disparity < width, got {} / {} / {}",
                self.background_disparity, self.max_disparity, self.width
            )));
        }
        Ok(())
    }
}

/// RGB value noise: a per-surface base colour, bilinearly interpolated
/// random offsets on a coarse grid, and optional per-pixel grain.
struct Texture {
    base: [f32; 3],
    grid: Vec<f32>,
    gw: usize,
    gh: usize,
    grain: Vec<f32>,
    h: usize,
    w: usize,
}

impl Texture {
    fn random<R: Rng>(h: usize, w: usize, grain: f32, rng: &mut R) -> Self {
        let gh = h / NOISE_CELL + 2;
        let gw = w / NOISE_CELL + 2;
        let base = [0; 3].map(|_| rng.gen_range(0.25f32..0.75));
        let grid = (0..3 * gh * gw)
            .map(|_| rng.gen_range(-0.25f32..0.25))
            .collect();
        let grain = if grain > 0.0 {
            (0..3 * h * w)
                .map(|_| rng.gen_range(-grain..grain))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            base,
            grid,
            gw,
            gh,
            grain,
            h,
            w,
        }
    }

    fn sample(&self, c: usize, y: usize, x: usize) -> f32 {
        let fy = y as f32 / NOISE_CELL as f32;
        let fx = x as f32 / NOISE_CELL as f32;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y0, x0) = (y0.min(self.gh - 2), x0.min(self.gw - 2));
        let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
        let g = |yy: usize, xx: usize| self.grid[(c * self.gh + yy) * self.gw + xx];
        let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
        let bottom = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
        let fine = if self.grain.is_empty() {
            0.0
        } else {
            self.grain[(c * self.h + y) * self.w + x]
        };
        (self.base[c] + top * (1.0 - ty) + bottom * ty + fine).clamp(0.0, 1.0)
    }
}

struct Surface {
    texture: Texture,
    /// Half-open `[x0, x1) x [y0, y1)` in left-image coordinates.
    rect: (usize, usize, usize, usize),
    disparity: usize,
}

impl Surface {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (x0, x1, y0, y1) = self.rect;
        (x0..x1).contains(&x) && (y0..y1).contains(&y)
    }
}

/// Random `[3,H,W]` texture with values in `[0, 1]`.
pub fn random_texture<R: Rng>(
    height: usize,
    width: usize,
    grain: f32,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let t = Texture::random(height, width, grain, rng);
    let data = (0..3)
        .flat_map(|c| (0..height).flat_map(move |y| (0..width).map(move |x| (c, y, x))))
        .map(|(c, y, x)| t.sample(c, y, x))
        .collect();
    Tensor::from_vec(&[3, height, width], data)
}

/// Background plus rectangles at random disparities; the sample carries the
/// left-view disparity.
pub fn synthetic_pair<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Result<StereoSample<f32>> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut surfaces = vec![Surface {
        texture: Texture::random(h, w, cfg.grain, rng),
        rect: (0, w, 0, h),
        disparity: cfg.background_disparity,
    }];
    for _ in 0..cfg.rectangles {
        let rw = rng.gen_range(w / 6..=w / 2).max(2);
        let rh = rng.gen_range(h / 6..=h / 2).max(2);
        let x0 = rng.gen_range(0..=w - rw);
        let y0 = rng.gen_range(0..=h - rh);
        surfaces.push(Surface {
            texture: Texture::random(h, w, cfg.grain, rng),
            rect: (x0, x0 + rw, y0, y0 + rh),
            disparity: rng.gen_range(cfg.background_disparity..=cfg.max_disparity),
        });
    }
    // Front-most last; ties keep generation order.
    surfaces.sort_by_key(|s| s.disparity);

    let plane = h * w;
    let mut left = vec![0.0f32; 3 * plane];
    let mut right = vec![0.0f32; 3 * plane];
    let mut disparity = vec![0.0f32; plane];
    for y in 0..h {
        for x in 0..w {
            let front = surfaces
                .iter()
                .rev()
                .find(|s| s.contains(x, y))
                .expect("background covers");
            disparity[y * w + x] = front.disparity as f32;
            for c in 0..3 {
                left[c * plane + y * w + x] = front.texture.sample(c, y, x);
            }
            let seen = surfaces
                .iter()
                .rev()
                .map(|s| (s, (x + s.disparity).min(w - 1)))
                .find(|(s, xl)| s.contains(*xl, y))
                .expect("background covers");
            for c in 0..3 {
                right[c * plane + y * w + x] = seen.0.texture.sample(c, y, seen.1);
            }
        }
    }
    StereoSample::new(
        Tensor::from_vec(&[3, h, w], left)?,
        Tensor::from_vec(&[3, h, w], right)?,
    )?
    .with_disparity(Tensor::from_vec(&[1, h, w], disparity)?)
}

/// A random texture and its copy translated by `shift` pixels, so every pixel
/// has disparity `shift`.
pub fn uniform_shift_pair<R: Rng>(
    height: usize,
    width: usize,
    shift: usize,
    grain: f32,
    rng: &mut R,
) -> Result<StereoSample<f32>> {
    if shift >= width {
        return Err(Error::invalid(format!(
            "shift {shift} must be below width {width}"
        )));
    }
    let left = random_texture(height, width, grain, rng)?;
    let stack = super::shift_stack(&left, shift + 1)?;
    let per = left.len();
    let right = Tensor::from_vec(&[3, height, width], stack.data()[shift * per..].to_vec())?;
    StereoSample::new(left, right)?.with_disparity(Tensor::full(&[1, height, width], shift as f32)?)
}
