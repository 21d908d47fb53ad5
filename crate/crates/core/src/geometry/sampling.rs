//! Rejection sampling of cameras from the augmented camera space.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{bbox_valid, camera_from_pose, project_set, CameraSpaceConfig, SphereCameraPose};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Half-extent of the uniform offset box per axis, as a fraction of the sphere radius.
    pub delta_t_fraction: f64,
    /// Total draw budget (angle draws plus offset draws).
    pub max_attempts: usize,
    /// Offset draws tried for one accepted angle triple before the angles are redrawn.
    pub offset_attempts_per_angle: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            delta_t_fraction: 0.3,
            max_attempts: 10_000,
            offset_attempts_per_angle: 200,
        }
    }
}

/// Draw counters of one [`sample_camera_with_stats`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub angle_draws: usize,
    pub angle_accepts: usize,
    pub offset_draws: usize,
}

impl std::ops::AddAssign for SampleStats {
    fn add_assign(&mut self, rhs: Self) {
        self.angle_draws += rhs.angle_draws;
        self.angle_accepts += rhs.angle_accepts;
        self.offset_draws += rhs.offset_draws;
    }
}

/// `exp(-((alpha/A)^2 + (beta/B)^2 + (gamma/Gamma)^2))`, angles in degrees.
pub fn angle_acceptance_probability(alpha: f64, beta: f64, gamma: f64, cfg: &CameraSpaceConfig) -> f64 {
    let a = alpha / cfg.azimuth_bound;
    let b = beta / cfg.elevation_bound;
    let g = gamma / cfg.roll_bound;
    (-(a * a + b * b + g * g)).exp()
}

/// One Bernoulli trial of the soft angle prior.
pub fn accept_angles<R: Rng + ?Sized>(
    rng: &mut R,
    alpha: f64,
    beta: f64,
    gamma: f64,
    cfg: &CameraSpaceConfig,
) -> bool {
    rng.random::<f64>() < angle_acceptance_probability(alpha, beta, gamma, cfg)
}

pub fn sample_camera<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &CameraSpaceConfig,
    template: &LandmarkSet3D,
    opts: &SamplerOptions,
) -> Result<SphereCameraPose> {
    sample_camera_with_stats(rng, cfg, template, opts).map(|(pose, _)| pose)
}

/// Draws angles uniformly inside the bounds and keeps them with the soft prior
/// probability, then draws offsets until the projected template passes
/// [`bbox_valid`].
pub fn sample_camera_with_stats<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &CameraSpaceConfig,
    template: &LandmarkSet3D,
    opts: &SamplerOptions,
) -> Result<(SphereCameraPose, SampleStats)> {
    if template.valid_count() == 0 {
        return Err(Error::Empty("sampling template"));
    }
    let half = opts.delta_t_fraction * cfg.radius;
    let mut stats = SampleStats::default();
    let exhausted = |stats: &SampleStats| stats.angle_draws + stats.offset_draws >= opts.max_attempts;

    while !exhausted(&stats) {
        let alpha = rng.random_range(-cfg.azimuth_bound..=cfg.azimuth_bound);
        let beta = rng.random_range(-cfg.elevation_bound..=cfg.elevation_bound);
        let gamma = rng.random_range(-cfg.roll_bound..=cfg.roll_bound);
        stats.angle_draws += 1;
        if !accept_angles(rng, alpha, beta, gamma, cfg) {
            continue;
        }
        stats.angle_accepts += 1;

        for _ in 0..opts.offset_attempts_per_angle {
            if exhausted(&stats) {
                break;
            }
            stats.offset_draws += 1;
            let delta_t = if half > 0.0 {
                Vector3::from_fn(|_, _| rng.random_range(-half..=half))
            } else {
                Vector3::zeros()
            };
            let pose = SphereCameraPose::new(alpha, beta, gamma).with_delta_t(delta_t);
            let cam = camera_from_pose(&pose, cfg)?;
            let projected = project_set(template, &cam);
            if matches!(bbox_valid(&projected, cfg.intrinsics.image_dim), Ok(true)) {
                return Ok((pose, stats));
            }
        }
    }
    Err(Error::SamplingExhausted {
        attempts: opts.max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceptance_at_origin_and_corner() {
        let cfg = CameraSpaceConfig::default();
        assert_eq!(angle_acceptance_probability(0.0, 0.0, 0.0, &cfg), 1.0);
        let corner = angle_acceptance_probability(110.0, 60.0, 90.0, &cfg);
        assert!((corner - (-3.0f64).exp()).abs() < 1e-15);
        assert!((corner - 0.049787).abs() < 1e-6);
    }

    #[test]
    fn empty_template_errors() {
        let mut rng = rand::rng();
        let cfg = CameraSpaceConfig::default();
        let r = sample_camera(&mut rng, &cfg, &LandmarkSet3D::new(vec![]), &SamplerOptions::default());
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn impossible_bbox_exhausts() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cfg = CameraSpaceConfig::default();
        // two points 1 mm apart can never fill half the image
        let tiny = LandmarkSet3D::new(vec![Vector3::zeros(), Vector3::new(1e-3, 1e-3, 0.0)]);
        let opts = SamplerOptions {
            max_attempts: 500,
            ..Default::default()
        };
        assert!(matches!(
            sample_camera(&mut rng, &cfg, &tiny, &opts),
            Err(Error::SamplingExhausted { attempts: 500 })
        ));
    }
}
