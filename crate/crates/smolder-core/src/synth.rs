//! Desk-scale synthetic scenes: a drifting, growing white smoke plume over a
//! textured background in RGB, with a static hot disk in the paired IR feed.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::IrFrame;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSceneConfig {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    /// (row, col) of the plume base and the IR hotspot.
    pub plume_origin: (f64, f64),
    /// Plume centre displacement per frame in (rows, cols).
    pub plume_drift: (f64, f64),
    /// Plume radius growth per frame, px.
    pub plume_growth: f64,
    pub plume_radius0: f64,
    pub hotspot_radius: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n_frames: 20,
            plume_origin: (32.0, 32.0),
            plume_drift: (0.0, 0.5),
            plume_growth: 0.3,
            plume_radius0: 8.0,
            hotspot_radius: 12.0,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SynthSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return Err(Error::config(format!(
                "synthetic canvas must be a multiple of 32, got {}x{}",
                self.height, self.width
            )));
        }
        let (r, c) = self.plume_origin;
        if r - self.hotspot_radius < 0.0
            || c - self.hotspot_radius < 0.0
            || r + self.hotspot_radius > self.height as f64
            || c + self.hotspot_radius > self.width as f64
        {
            return Err(Error::config(format!(
                "hotspot of radius {} at ({r}, {c}) leaves the {}x{} canvas",
                self.hotspot_radius, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn plume_center(&self, frame: usize) -> (f64, f64) {
        (
            self.plume_origin.0 + self.plume_drift.0 * frame as f64,
            self.plume_origin.1 + self.plume_drift.1 * frame as f64,
        )
    }

    pub fn plume_radius(&self, frame: usize) -> f64 {
        self.plume_radius0 + self.plume_growth * frame as f64
    }
}

/// Gaussian plume opacity map for one frame, before noise and blending.
pub fn plume_alpha(cfg: &SynthSceneConfig, frame: usize) -> Array2<f32> {
    let (cr, cc) = cfg.plume_center(frame);
    let sigma = cfg.plume_radius(frame);
    Array2::from_shape_fn((cfg.height, cfg.width), |(r, c)| {
        let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp() as f32
    })
}

/// Generate paired RGB and IR frame sequences. Bit-identical for equal
/// configs (seed included).
pub fn generate_synthetic_scene(
    cfg: &SynthSceneConfig,
) -> Result<(Vec<Array3<f32>>, Vec<IrFrame>)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Static green-brown ground texture shared by every frame.
    let texture = Array3::from_shape_fn((h, w, 3), |(_, _, ch)| {
        let base = match ch {
            0 => 0.25,
            1 => 0.35,
            _ => 0.15,
        };
        (base + rng.gen_range(-0.08..0.08f32)).clamp(0.0, 1.0)
    });

    let mut rgb_frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let alpha = plume_alpha(cfg, t);
        let frame = Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
            let a = alpha[[r, c]];
            let smoke = 0.95f32;
            let mut v = texture[[r, c, ch]] * (1.0 - a) + smoke * a;
            if cfg.noise_std > 0.0 {
                // Box-Muller keeps the generator dependency-light.
                let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
                let u2: f32 = rng.gen_range(0.0..1.0);
                let n = (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos();
                v += n * cfg.noise_std as f32;
            }
            v.clamp(0.0, 1.0)
        });
        rgb_frames.push(frame);
    }

    let (or, oc) = cfg.plume_origin;
    let r2 = cfg.hotspot_radius * cfg.hotspot_radius;
    let ir_pixels = Array2::from_shape_fn((h, w), |(r, c)| {
        let d2 = (r as f64 - or).powi(2) + (c as f64 - oc).powi(2);
        if d2 <= r2 {
            1.0
        } else {
            0.1
        }
    });
    let ir_frames = (0..cfg.n_frames)
        .map(|t| IrFrame::new(ir_pixels.clone(), t))
        .collect::<Result<Vec<_>>>()?;

    Ok((rgb_frames, ir_frames))
}
