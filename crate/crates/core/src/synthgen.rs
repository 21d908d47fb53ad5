//! Synthetic scene oracle: a face-like landmark layout with known ground truth,
//! rendered through a camera rig with masks, noise and dropout.
//!
//! The 98-point layout follows the WFLW ordering (contour 0-32, brows 33-50, nose
//! 51-59, eyes 60-75, mouth 76-95, pupils 96-97). World axes: x to the image right,
//! y down, the face looking toward -z.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{camera_from_pose, project, Camera, CameraSpaceConfig, SphereCameraPose};
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};
use crate::lifting::{MultiViewObservations, View};
use crate::masking::{rig_masks, NormalTemplate, VisibilityMask};

pub const SCHEME_98: usize = 98;
pub const PUPIL_INDICES_98: [usize; 2] = [96, 97];
pub const NOSE_BRIDGE_INDICES_98: [usize; 4] = [51, 52, 53, 54];

// head ellipsoid
const AX: f64 = 0.2;
const AY: f64 = 0.27;
const AZ: f64 = 0.2;
const CZ: f64 = 0.1;

const JITTER_SIGMA: f64 = 0.004;
const SCALE_SPREAD: f64 = 0.07;

/// Left/right mirror permutation of the 98-point scheme.
pub fn mirror_permutation_98() -> [usize; 98] {
    let mut perm = [0usize; 98];
    let mut pair = |a: usize, b: usize| {
        perm[a] = b;
        perm[b] = a;
    };
    for i in 0..=16 {
        pair(i, 32 - i);
    }
    for i in 0..5 {
        pair(33 + i, 46 - i);
    }
    for i in 0..4 {
        pair(38 + i, 50 - i);
    }
    for i in 51..=54 {
        pair(i, i);
    }
    pair(55, 59);
    pair(56, 58);
    pair(57, 57);
    for i in 0..5 {
        pair(60 + i, 72 - i);
    }
    for i in 0..3 {
        pair(65 + i, 75 - i);
    }
    for i in 0..=3 {
        pair(76 + i, 82 - i);
    }
    pair(83, 87);
    pair(84, 86);
    pair(85, 85);
    pair(88, 92);
    pair(89, 91);
    pair(90, 90);
    pair(93, 95);
    pair(94, 94);
    pair(96, 97);
    perm
}

/// 98 to 68 landmark correspondence: entry `j` is the 98-scheme index of 68-scheme landmark `j`.
pub fn map_98_to_68() -> Vec<usize> {
    let mut map: Vec<usize> = (0..=32).step_by(2).collect();
    map.extend(33..=37);
    map.extend(42..=46);
    map.extend(51..=59);
    map.extend([60, 61, 63, 64, 65, 67]);
    map.extend([68, 69, 71, 72, 73, 75]);
    map.extend(76..=95);
    map
}

fn surface_point(x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
    let rho2 = (x / AX).powi(2) + (y / AY).powi(2);
    let depth = (1.0 - rho2).max(0.0).sqrt();
    let p = Vector3::new(x, y, CZ - AZ * depth);
    let n = Vector3::new(x / (AX * AX), y / (AY * AY), (p.z - CZ) / (AZ * AZ)).normalize();
    (p, n)
}

/// Frontal-plane positions of the left half and midline; the right half is mirrored.
fn canonical_98() -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut pts = vec![Vector3::zeros(); 98];
    let mut nrm = vec![Vector3::zeros(); 98];
    let mut put = |i: usize, x: f64, y: f64| {
        let (p, n) = surface_point(x, y);
        pts[i] = p;
        nrm[i] = n;
    };

    // contour wraps from temple (rho 0.97) to chin (rho 0.85)
    for k in 0..=32 {
        let phi = k as f64 * PI / 32.0;
        let rho = 0.85 + 0.12 * phi.cos().abs();
        put(k, -rho * AX * phi.cos(), rho * AY * phi.sin());
    }

    // left brow: upper arc outer -> inner, lower arc inner -> outer
    for k in 0..5 {
        let s = k as f64 / 4.0;
        let x = -0.14 + s * (0.14 - 0.028);
        put(33 + k, x, -0.095 - 0.012 * (PI * s).sin());
    }
    for k in 0..4 {
        let s = k as f64 / 3.0;
        let x = -0.038 - s * (0.125 - 0.038);
        put(38 + k, x, -0.082 - 0.008 * (PI * s).sin());
    }

    // left eye, corner first, clockwise on screen
    let (ex, ey, erx, ery) = (-0.075, -0.035, 0.03, 0.012);
    for k in 0..8 {
        let theta = if k <= 4 {
            PI - k as f64 * PI / 4.0
        } else {
            -(k as f64 - 4.0) * PI / 4.0
        };
        put(60 + k, ex + erx * theta.cos(), ey - ery * theta.sin());
    }
    put(96, ex, ey);

    // outer and inner lips
    let (my, orx, ory, irx, iry) = (0.135, 0.06, 0.025, 0.04, 0.008);
    for k in 0..12 {
        let theta = PI - k as f64 * PI / 6.0;
        put(76 + k, orx * theta.cos(), my - ory * theta.sin());
    }
    for k in 0..8 {
        let theta = PI - k as f64 * PI / 4.0;
        put(88 + k, irx * theta.cos(), my - iry * theta.sin());
    }

    // nose bridge ridge and base protrude from the ellipsoid
    let mut protrude = |i: usize, x: f64, y: f64, dz: f64, normal: Vector3<f64>| {
        let (p, _) = surface_point(x, y);
        pts[i] = p - Vector3::new(0.0, 0.0, dz);
        nrm[i] = normal.normalize();
    };
    for k in 0..4 {
        let kf = k as f64;
        let normal = Vector3::new(0.0, -0.3 + 0.12 * kf, -1.0);
        protrude(51 + k, 0.0, -0.045 + kf * 0.025, 0.02 + 0.015 * kf, normal);
    }
    for k in 0..5 {
        let s = (k as f64 - 2.0) / 2.0;
        let normal = Vector3::new(0.35 * s, 0.45, -0.8);
        protrude(55 + k, 0.035 * s, 0.06 - 0.006 * (1.0 - s.abs()), 0.045 * (1.0 - 0.6 * s.abs()), normal);
    }

    // right half by mirroring
    let perm = mirror_permutation_98();
    let left: Vec<usize> = (0..16)
        .chain(33..42)
        .chain([55, 56])
        .chain(60..68)
        .chain([76, 77, 78, 83, 84, 88, 89, 95])
        .chain([96])
        .collect();
    for i in left {
        let j = perm[i];
        pts[j] = Vector3::new(-pts[i].x, pts[i].y, pts[i].z);
        nrm[j] = Vector3::new(-nrm[i].x, nrm[i].y, nrm[i].z);
    }
    (pts, nrm)
}

/// Roughly uniform points on the front cap of the head ellipsoid.
fn canonical_generic(n: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let r = 0.9 * ((i as f64 + 0.5) / n as f64).sqrt();
            let a = i as f64 * golden;
            surface_point(r * AX * a.cos(), r * AY * a.sin())
        })
        .unzip()
}

/// Unjittered layout and its normal template.
pub fn canonical_face_layout(n_points: usize) -> Result<(LandmarkSet3D, NormalTemplate)> {
    if n_points < 6 {
        return Err(Error::InvalidConfig(format!(
            "face layout needs at least 6 points, got {n_points}"
        )));
    }
    let (pts, normals, bridge) = if n_points == SCHEME_98 {
        let (p, n) = canonical_98();
        (p, n, NOSE_BRIDGE_INDICES_98.to_vec())
    } else {
        let (p, n) = canonical_generic(n_points);
        (p, n, Vec::new())
    };
    let tpl = NormalTemplate::with_default_thresholds(normals, bridge)?;
    Ok((LandmarkSet3D::new(pts), tpl))
}

pub fn default_normal_template() -> NormalTemplate {
    canonical_face_layout(SCHEME_98)
        .expect("98-point layout is valid")
        .1
}

/// Canonical layout with a random per-axis scale and per-point jitter. The normal
/// template stays canonical.
pub fn make_face_layout<R: Rng + ?Sized>(
    rng: &mut R,
    n_points: usize,
) -> Result<(LandmarkSet3D, NormalTemplate)> {
    let (mut set, tpl) = canonical_face_layout(n_points)?;
    let scale = Vector3::from_fn(|_, _| 1.0 + rng.random_range(-SCALE_SPREAD..=SCALE_SPREAD));
    let jitter = Normal::new(0.0, JITTER_SIGMA).expect("positive sigma");
    for p in &mut set.points {
        let offset = Vector3::from_fn(|_, _| jitter.sample(rng));
        *p = p.component_mul(&scale) + offset;
    }
    Ok((set, tpl))
}

/// 41 views: azimuths every 27.5 degrees over +-110 at elevations 0 and +-30, and every
/// 30 degrees over +-90 at elevations +-60. No roll, no offset.
pub fn make_default_rig() -> Vec<SphereCameraPose> {
    let wide: Vec<f64> = (-4..=4).map(|k| k as f64 * 27.5).collect();
    let narrow: Vec<f64> = (-3..=3).map(|k| k as f64 * 30.0).collect();
    let mut rig = Vec::with_capacity(41);
    for (beta, azimuths) in [
        (0.0, &wide),
        (30.0, &wide),
        (-30.0, &wide),
        (60.0, &narrow),
        (-60.0, &narrow),
    ] {
        rig.extend(azimuths.iter().map(|&a| SphereCameraPose::new(a, beta, 0.0)));
    }
    rig
}

/// Indices of the `count` rig views closest to frontal by angular distance.
pub fn most_frontal_views(rig: &[SphereCameraPose], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rig.len()).collect();
    let dist = |p: &SphereCameraPose| p.alpha_deg.hypot(p.beta_deg);
    idx.sort_by(|&a, &b| dist(&rig[a]).total_cmp(&dist(&rig[b])).then(a.cmp(&b)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Gaussian,
    Laplacian,
}

/// Pixel noise on detections. `sigma` is the per-axis standard deviation for both
/// distributions (the Laplacian scale is `sigma / sqrt 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub dropout_rate: f64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma: 0.0,
            dropout_rate: 0.0,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            sigma,
            dropout_rate: 0.0,
        }
    }

    pub fn laplacian(sigma: f64) -> Self {
        Self {
            kind: NoiseKind::Laplacian,
            sigma,
            dropout_rate: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// One per-axis noise draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Gaussian => {
                if self.sigma == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, self.sigma).expect("sigma > 0").sample(rng)
                }
            }
            NoiseKind::Laplacian => {
                let b = self.sigma / std::f64::consts::SQRT_2;
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// Ground truth plus rendered, masked, noisy detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub config: CameraSpaceConfig,
    pub noise: NoiseConfig,
    pub gt_landmarks3d: LandmarkSet3D,
    pub normals: NormalTemplate,
    pub rig: Vec<SphereCameraPose>,
    pub cameras: Vec<Camera>,
    pub detections: Vec<LandmarkSet2D>,
    pub masks: Vec<VisibilityMask>,
}

impl Scene {
    pub fn observations(&self) -> MultiViewObservations {
        MultiViewObservations {
            views: self
                .cameras
                .iter()
                .zip(&self.detections)
                .zip(&self.masks)
                .map(|((c, d), m)| View {
                    camera: *c,
                    detections: d.clone(),
                    mask: m.clone(),
                })
                .collect(),
        }
    }

    /// Keeps only the listed views.
    pub fn subset(&self, views: &[usize]) -> Scene {
        Scene {
            rig: views.iter().map(|i| self.rig[*i]).collect(),
            cameras: views.iter().map(|i| self.cameras[*i]).collect(),
            detections: views.iter().map(|i| self.detections[*i].clone()).collect(),
            masks: views.iter().map(|i| self.masks[*i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Exact projections of the ground truth in every view.
    pub fn exact_projections(&self) -> Vec<LandmarkSet2D> {
        self.cameras
            .iter()
            .map(|c| crate::geometry::project_set(&self.gt_landmarks3d, c))
            .collect()
    }
}

/// Renders a seeded 98-point face through `rig`.
pub fn make_scene(
    seed: u64,
    rig: &[SphereCameraPose],
    noise: &NoiseConfig,
    cfg: &CameraSpaceConfig,
) -> Result<Scene> {
    make_scene_with_points(seed, SCHEME_98, rig, noise, cfg)
}

pub fn make_scene_with_points(
    seed: u64,
    n_points: usize,
    rig: &[SphereCameraPose],
    noise: &NoiseConfig,
    cfg: &CameraSpaceConfig,
) -> Result<Scene> {
    noise.validate()?;
    cfg.validate()?;
    if rig.is_empty() {
        return Err(Error::Empty("rig"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gt, normals) = make_face_layout(&mut rng, n_points)?;
    let cameras = rig
        .iter()
        .map(|p| camera_from_pose(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let masks = rig_masks(rig, &normals, cfg)?;
    let detections = cameras
        .iter()
        .zip(&masks)
        .map(|(cam, mask)| {
            LandmarkSet2D::new(
                gt.points
                    .iter()
                    .enumerate()
                    .map(|(n, p)| {
                        if !mask.is_visible(n) {
                            return None;
                        }
                        let exact = project(p, cam).ok()?;
                        let jitter = Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                        let dropped = noise.dropout_rate > 0.0 && rng.random::<f64>() < noise.dropout_rate;
                        (!dropped).then_some(exact + jitter)
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(Scene {
        seed,
        config: *cfg,
        noise: *noise,
        gt_landmarks3d: gt,
        normals,
        rig: rig.to_vec(),
        cameras,
        detections,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_permutation_is_an_involution() {
        let perm = mirror_permutation_98();
        for i in 0..98 {
            assert_eq!(perm[perm[i]], i);
        }
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..98).collect::<Vec<_>>());
    }

    #[test]
    fn canonical_layout_is_mirror_symmetric() {
        let (set, tpl) = canonical_face_layout(98).unwrap();
        let perm = mirror_permutation_98();
        for i in 0..98 {
            let (p, q) = (set.points[i], set.points[perm[i]]);
            assert!((p - Vector3::new(-q.x, q.y, q.z)).norm() < 1e-12, "point {i}");
            let (n, m) = (tpl.normals[i], tpl.normals[perm[i]]);
            assert!((n - Vector3::new(-m.x, m.y, m.z)).norm() < 1e-12, "normal {i}");
        }
        // midline points sit on x = 0
        for i in [51, 52, 53, 54, 57, 79, 85, 90, 94, 16] {
            assert!(set.points[i].x.abs() < 1e-12);
        }
    }

    #[test]
    fn layout_is_seed_deterministic_and_normals_unit() {
        let a = make_face_layout(&mut ChaCha8Rng::seed_from_u64(3), 98).unwrap();
        let b = make_face_layout(&mut ChaCha8Rng::seed_from_u64(3), 98).unwrap();
        assert_eq!(
            serde_json::to_string(&a.0).unwrap(),
            serde_json::to_string(&b.0).unwrap()
        );
        for n in &a.1.normals {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
        let c = make_face_layout(&mut ChaCha8Rng::seed_from_u64(4), 98).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn generic_layouts() {
        let (set, tpl) = canonical_face_layout(20).unwrap();
        assert_eq!((set.len(), tpl.len()), (20, 20));
        assert!(canonical_face_layout(5).is_err());
    }

    #[test]
    fn default_rig_shape() {
        let rig = make_default_rig();
        assert_eq!(rig.len(), 41);
        assert!(rig.iter().any(|p| p.alpha_deg == 0.0 && p.beta_deg == 0.0));
        for p in &rig {
            assert!(rig
                .iter()
                .any(|q| q.alpha_deg == -p.alpha_deg && q.beta_deg == p.beta_deg));
            CameraSpaceConfig::default().check_bounds(p).unwrap();
        }
        let frontal = most_frontal_views(&rig, 5);
        assert_eq!(frontal.len(), 5);
        assert!(frontal.iter().any(|&i| rig[i].alpha_deg == 0.0 && rig[i].beta_deg == 0.0));
    }

    #[test]
    fn map_98_to_68_is_injective() {
        let map = map_98_to_68();
        assert_eq!(map.len(), 68);
        let mut s = map.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 68);
        assert!(map.iter().all(|&i| i < 96));
    }

    #[test]
    fn noiseless_scene_matches_exact_projections() {
        let cfg = CameraSpaceConfig::default();
        let scene = make_scene(1, &make_default_rig(), &NoiseConfig::none(), &cfg).unwrap();
        let exact = scene.exact_projections();
        for (v, det) in scene.detections.iter().enumerate() {
            for n in 0..98 {
                assert_eq!(det.get(n).is_some(), scene.masks[v].is_visible(n));
                if let Some(d) = det.get(n) {
                    assert_eq!(d, exact[v].get(n).unwrap());
                }
            }
        }
    }

    #[test]
    fn noise_and_dropout_statistics() {
        let cfg = CameraSpaceConfig::default();
        let rig = make_default_rig();
        let mut residuals = Vec::new();
        let (mut visible, mut dropped) = (0usize, 0usize);
        for seed in 0..12 {
            let noise = NoiseConfig::gaussian(1.0).with_dropout(0.2);
            let scene = make_scene(seed, &rig, &noise, &cfg).unwrap();
            let exact = scene.exact_projections();
            for (v, det) in scene.detections.iter().enumerate() {
                for n in 0..98 {
                    if !scene.masks[v].is_visible(n) {
                        continue;
                    }
                    visible += 1;
                    match det.get(n) {
                        Some(d) => {
                            let r = d - exact[v].get(n).unwrap();
                            residuals.extend([r.x, r.y]);
                        }
                        None => dropped += 1,
                    }
                }
            }
        }
        assert!(residuals.len() >= 10_000);
        let m = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / m;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m).sqrt();
        assert!((std - 1.0).abs() < 0.1, "std {std}");
        let rate = dropped as f64 / visible as f64;
        let se = (0.2 * 0.8 / visible as f64).sqrt();
        assert!((rate - 0.2).abs() < 3.0 * se, "rate {rate}");
    }

    #[test]
    fn laplacian_noise_has_requested_std() {
        let noise = NoiseConfig::laplacian(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..40_000).map(|_| noise.sample(&mut rng)).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.05);
    }
}
