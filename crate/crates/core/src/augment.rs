//! Random affine augmentation at native resolution and deterministic
//! preprocessing into the backbone input layout.
//!
//! A warp is a single 3x3 matrix
//! `center · rotate · shear · zoom · translate · flip · uncenter`
//! mapping source pixel coordinates `(x, y, 1)` to destination coordinates.
//! The warp is applied by inverse mapping with nearest-neighbour sampling and
//! edge replication for reads that fall outside the source.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GrayImage, IMAGE_SIDE};
use crate::rng::keyed_rng;

/// Side length of the backbone input.
pub const BACKBONE_INPUT_SIDE: usize = 260;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("degenerate transform: zoom must be positive and finite, got {0}")]
    DegenerateTransform(f64),
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillPolicy {
    #[default]
    EdgeReplication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum absolute rotation, degrees.
    pub rotation_max: f64,
    /// Maximum shift as a fraction of the 48-pixel source side.
    pub shift_max: f64,
    pub zoom_max: f64,
    /// Maximum x-axis shear angle, radians.
    pub shear_max: f64,
    pub hflip_prob: f64,
    pub fill_policy: FillPolicy,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_max: 25.0,
            shift_max: 0.15,
            zoom_max: 0.25,
            shear_max: 0.1,
            hflip_prob: 0.5,
            fill_policy: FillPolicy::EdgeReplication,
        }
    }
}

impl AugmentConfig {
    /// A config whose every draw is the identity.
    pub fn identity() -> Self {
        Self {
            enabled: true,
            rotation_max: 0.0,
            shift_max: 0.0,
            zoom_max: 0.0,
            shear_max: 0.0,
            hflip_prob: 0.0,
            fill_policy: FillPolicy::EdgeReplication,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let mags = [
            ("rotation_max", self.rotation_max),
            ("shift_max", self.shift_max),
            ("zoom_max", self.zoom_max),
            ("shear_max", self.shear_max),
        ];
        for (name, v) in mags {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AugmentError::InvalidConfig(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.zoom_max >= 1.0 {
            return Err(AugmentError::InvalidConfig(format!(
                "zoom_max = {} must be < 1 so the zoom factor stays positive",
                self.zoom_max
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(AugmentError::InvalidConfig(format!(
                "hflip_prob = {} must lie in [0, 1]",
                self.hflip_prob
            )));
        }
        Ok(())
    }
}

/// Parameters of one random warp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    /// Degrees.
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
    pub zoom: f64,
    /// Radians.
    pub shear: f64,
    pub flip: bool,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        angle: 0.0,
        tx: 0.0,
        ty: 0.0,
        zoom: 1.0,
        shear: 0.0,
        flip: false,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Identifies one draw: the same key always yields the same parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentKey {
    pub seed: u64,
    pub epoch: u64,
    pub index: u64,
}

fn uniform(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random();
    -half_width + 2.0 * half_width * u
}

pub fn sample_params(config: &AugmentConfig, key: AugmentKey) -> AffineParams {
    let mut rng = keyed_rng("augment", &[key.seed, key.epoch, key.index]);
    let shift_px = config.shift_max * IMAGE_SIDE as f64;
    let angle = uniform(&mut rng, config.rotation_max);
    let tx = uniform(&mut rng, shift_px);
    let ty = uniform(&mut rng, shift_px);
    let zoom = 1.0 + uniform(&mut rng, config.zoom_max);
    let shear = uniform(&mut rng, config.shear_max);
    let flip = rng.random::<f64>() < config.hflip_prob;
    AffineParams {
        angle,
        tx,
        ty,
        zoom,
        shear,
        flip,
    }
}

/// Homogeneous 2-D affine transform (last row fixed to `0 0 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 3]; 3],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn linear(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            m: [[a, b, 0.0], [c, d, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn then(&self, next: &Affine2) -> Affine2 {
        next.compose(self)
    }

    /// `self · other`.
    pub fn compose(&self, other: &Affine2) -> Affine2 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Affine2 { m }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let [[a, b, tx], [c, d, ty], _] = self.m;
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Some(Affine2 {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
                [0.0, 0.0, 1.0],
            ],
        })
    }
}

/// Forward matrix of `params` for a `width` x `height` image.
pub fn warp_matrix(params: &AffineParams, width: usize, height: usize) -> Result<Affine2, AugmentError> {
    if !(params.zoom.is_finite() && params.zoom > 0.0) {
        return Err(AugmentError::DegenerateTransform(params.zoom));
    }
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let (sin, cos) = params.angle.to_radians().sin_cos();

    let uncenter = Affine2::translation(-cx, -cy);
    let flip = if params.flip {
        Affine2::linear(-1.0, 0.0, 0.0, 1.0)
    } else {
        Affine2::IDENTITY
    };
    let translate = Affine2::translation(params.tx, params.ty);
    let zoom = Affine2::linear(params.zoom, 0.0, 0.0, params.zoom);
    let shear = Affine2::linear(1.0, params.shear.tan(), 0.0, 1.0);
    let rotate = Affine2::linear(cos, -sin, sin, cos);
    let center = Affine2::translation(cx, cy);

    Ok(uncenter
        .then(&flip)
        .then(&translate)
        .then(&zoom)
        .then(&shear)
        .then(&rotate)
        .then(&center))
}

pub fn apply_affine(image: &GrayImage, params: &AffineParams) -> Result<GrayImage, AugmentError> {
    if params.is_identity() {
        return Ok(image.clone());
    }
    let (w, h) = (image.width(), image.height());
    let inverse = warp_matrix(params, w, h)?
        .inverse()
        .ok_or(AugmentError::DegenerateTransform(params.zoom))?;

    let mut out = GrayImage::filled(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse.apply(x as f64, y as f64);
            let sx = sx.round().clamp(0.0, (w - 1) as f64) as usize;
            let sy = sy.round().clamp(0.0, (h - 1) as f64) as usize;
            out.set(x, y, image.get(sx, sy));
        }
    }
    Ok(out)
}

/// Draw parameters for `key` and warp `image` with them.
pub fn augment(image: &GrayImage, config: &AugmentConfig, key: AugmentKey) -> Result<GrayImage, AugmentError> {
    apply_affine(image, &sample_params(config, key))
}

/// Bilinear resize with half-pixel centres; sources are clamped at the border.
pub fn resize_bilinear(image: &GrayImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let coord = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };

    let cols: Vec<_> = (0..out_w).map(|x| coord(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = image.get(x0, y0) as f64 * (1.0 - fx) + image.get(x1, y0) as f64 * fx;
            let bottom = image.get(x0, y1) as f64 * (1.0 - fx) + image.get(x1, y1) as f64 * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Input tensor for an image backbone, `side x side x channels`, HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub side: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ModelInput {
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.side + x) * self.channels + c]
    }
}

/// Grayscale to 3 channels, bilinear resize to `side`, then multiply by `scale`.
pub fn preprocess_to(image: &GrayImage, side: usize, scale: f64) -> ModelInput {
    let plane = resize_bilinear(image, side, side);
    let mut data = Vec::with_capacity(plane.len() * 3);
    for v in plane {
        let v = (v * scale) as f32;
        data.extend_from_slice(&[v, v, v]);
    }
    ModelInput {
        side,
        channels: 3,
        data,
    }
}

/// Backbone preprocessing with the reference scaling (divide by 255).
pub fn preprocess(image: &GrayImage) -> ModelInput {
    preprocess_to(image, BACKBONE_INPUT_SIDE, 1.0 / 255.0)
}
