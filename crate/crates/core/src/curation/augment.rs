//! Geometric augmentation: rotation, shift, shear, zoom and horizontal flip,
//! sampled bilinearly with nearest-edge fill.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NumericArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    Nearest,
}

/// Bounds for randomly drawn augmentation transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationParams {
    /// Degrees; angles are drawn from `[-rotation_max, rotation_max]`.
    pub rotation_max: f64,
    /// Fraction of width/height; shifts are drawn from `[-shift_max, shift_max]`.
    pub shift_max: f64,
    /// Degrees.
    pub shear_max: f64,
    /// Per-axis scale factors drawn from `[min, max]`.
    pub zoom_range: (f64, f64),
    pub hflip_enabled: bool,
    pub fill_mode: FillMode,
    pub seed: u64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self {
            rotation_max: 20.0,
            shift_max: 0.1,
            shear_max: 10.0,
            zoom_range: (0.9, 1.1),
            hflip_enabled: true,
            fill_mode: FillMode::Nearest,
            seed: 0,
        }
    }
}

impl AugmentationParams {
    /// No rotation, shift, shear, zoom or flip.
    pub fn identity() -> Self {
        Self {
            rotation_max: 0.0,
            shift_max: 0.0,
            shear_max: 0.0,
            zoom_range: (1.0, 1.0),
            hflip_enabled: false,
            fill_mode: FillMode::Nearest,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (zmin, zmax) = self.zoom_range;
        let ok = self.rotation_max.is_finite()
            && self.rotation_max >= 0.0
            && (0.0..1.0).contains(&self.shift_max)
            && self.shear_max.is_finite()
            && (0.0..90.0).contains(&self.shear_max)
            && zmin > 0.0
            && zmin <= 1.0
            && zmax >= 1.0
            && zmax.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid augmentation bounds: {self:?}")))
        }
    }

    /// Draws one concrete transform. Every call consumes the same number of
    /// random values so that disabling one component does not reshuffle the
    /// others.
    pub fn draw(&self, draw_seed: u64) -> AffineTransform {
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let mut symmetric = |bound: f64| {
            let u: f64 = rng.random();
            if bound > 0.0 {
                (2.0 * u - 1.0) * bound
            } else {
                0.0
            }
        };
        let rotation_deg = symmetric(self.rotation_max);
        let shift_x = symmetric(self.shift_max);
        let shift_y = symmetric(self.shift_max);
        let shear_deg = symmetric(self.shear_max);
        let (zmin, zmax) = self.zoom_range;
        let mut zoom = || {
            let u: f64 = rng.random();
            if zmax > zmin {
                zmin + u * (zmax - zmin)
            } else {
                zmin
            }
        };
        let zoom_x = zoom();
        let zoom_y = zoom();
        let flip: f64 = rng.random();
        AffineTransform {
            rotation_deg,
            shift_x,
            shift_y,
            shear_deg,
            zoom_x,
            zoom_y,
            hflip: self.hflip_enabled && flip < 0.5,
        }
    }
}

/// A concrete transform about the image centre.
///
/// Source pixel `p` lands at `c + t + Z·H·R·(p − c)` where `R` rotates
/// counter-clockwise as displayed (rows grow downward), `H` shears x by
/// `tan(shear)·y`, and `Z` scales each axis. The horizontal flip is applied
/// last as an exact column reversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub rotation_deg: f64,
    /// Fraction of width.
    pub shift_x: f64,
    /// Fraction of height.
    pub shift_y: f64,
    pub shear_deg: f64,
    pub zoom_x: f64,
    pub zoom_y: f64,
    pub hflip: bool,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            shear_deg: 0.0,
            zoom_x: 1.0,
            zoom_y: 1.0,
            hflip: false,
        }
    }

    pub fn rotation(degrees: f64) -> Self {
        Self {
            rotation_deg: degrees,
            ..Self::identity()
        }
    }

    pub fn hflip() -> Self {
        Self {
            hflip: true,
            ..Self::identity()
        }
    }

    fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.shift_x == 0.0
            && self.shift_y == 0.0
            && self.shear_deg == 0.0
            && self.zoom_x == 1.0
            && self.zoom_y == 1.0
    }

    /// Forward 2×2 linear part `Z·H·R` as `[[a, b], [c, d]]`.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let rot = [[c, s], [-s, c]];
        let k = self.shear_deg.to_radians().tan();
        let shear = [[1.0, k], [0.0, 1.0]];
        let zoom = [[self.zoom_x, 0.0], [0.0, self.zoom_y]];
        mat_mul(zoom, mat_mul(shear, rot))
    }

    /// Short human-readable description stored on augmented records.
    pub fn describe(&self) -> String {
        format!(
            "rotate={:+.3}deg shift=({:+.4},{:+.4}) shear={:+.3}deg zoom=({:.4},{:.4}) hflip={}",
            self.rotation_deg,
            self.shift_x,
            self.shift_y,
            self.shear_deg,
            self.zoom_x,
            self.zoom_y,
            self.hflip
        )
    }

    /// Applies the transform to an (H, W, C) array. Output has the same shape;
    /// values stay within the input range.
    pub fn apply(&self, image: &NumericArray) -> Result<NumericArray> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::validation(format!(
                "augmentation expects an (H, W, C) image, got {shape:?}"
            )));
        }
        let (h, w, ch) = (shape[0], shape[1], shape[2]);
        let src = image.values();
        let mut out = if self.is_geometric_identity() {
            src.to_vec()
        } else {
            self.resample(src, h, w, ch)?
        };
        if self.hflip {
            for row in out.chunks_mut(w * ch) {
                for x in 0..w / 2 {
                    for c in 0..ch {
                        row.swap(x * ch + c, (w - 1 - x) * ch + c);
                    }
                }
            }
        }
        NumericArray::new(shape.to_vec(), out)
    }

    fn resample(&self, src: &[f64], h: usize, w: usize, ch: usize) -> Result<Vec<f64>> {
        let [[a, b], [c, d]] = self.linear();
        let det = a * d - b * c;
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(Error::Numeric(format!("singular augmentation transform {self:?}")));
        }
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let tx = self.shift_x * w as f64;
        let ty = self.shift_y * h as f64;
        let mut out = vec![0.0; h * w * ch];
        for oy in 0..h {
            for ox in 0..w {
                let dx = ox as f64 - cx - tx;
                let dy = oy as f64 - cy - ty;
                let sx = snap(inv[0][0] * dx + inv[0][1] * dy + cx).clamp(0.0, (w - 1) as f64);
                let sy = snap(inv[1][0] * dx + inv[1][1] * dy + cy).clamp(0.0, (h - 1) as f64);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                let dst = &mut out[(oy * w + ox) * ch..][..ch];
                for (k, v) in dst.iter_mut().enumerate() {
                    let p = |y: usize, x: usize| src[(y * w + x) * ch + k];
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    let lo = p(y0, x0).min(p(y0, x1)).min(p(y1, x0)).min(p(y1, x1));
                    let hi = p(y0, x0).max(p(y0, x1)).max(p(y1, x0)).max(p(y1, x1));
                    *v = (top * (1.0 - fy) + bottom * fy).clamp(lo, hi);
                }
            }
        }
        Ok(out)
    }
}

/// Rounds coordinates within 1e-9 of an integer so that axis-aligned
/// transforms (90° rotations, integer shifts) are exact pixel permutations.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn mat_mul(x: [[f64; 2]; 2], y: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            x[0][0] * y[0][0] + x[0][1] * y[1][0],
            x[0][0] * y[0][1] + x[0][1] * y[1][1],
        ],
        [
            x[1][0] * y[0][0] + x[1][1] * y[1][0],
            x[1][0] * y[0][1] + x[1][1] * y[1][1],
        ],
    ]
}

/// Draws a transform from `params` with `draw_seed` and applies it.
pub fn augment_image(
    image: &NumericArray,
    params: &AugmentationParams,
    draw_seed: u64,
) -> Result<NumericArray> {
    params.validate()?;
    params.draw(draw_seed).apply(image)
}
