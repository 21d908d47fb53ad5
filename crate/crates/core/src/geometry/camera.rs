use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{check_rotation, rot_x, rot_y, rot_z, row_major};
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};

/// Minimum projective depth accepted by [`project`].
pub const DEPTH_EPS: f64 = 1e-8;

/// Focal length of the default intrinsics, in units of the image side.
pub const DEFAULT_FOCAL_FACTOR: f64 = 4.26;
pub const DEFAULT_IMAGE_DIM: f64 = 224.0;
pub const DEFAULT_RADIUS: f64 = 2.7;

/// Pinhole intrinsics of a square image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_dim: f64,
}

impl CameraIntrinsics {
    /// Centered principal point and `fx = fy = 4.26 * image_dim`.
    pub fn for_image(image_dim: f64) -> Self {
        let f = DEFAULT_FOCAL_FACTOR * image_dim;
        Self {
            fx: f,
            fy: f,
            cx: image_dim / 2.0,
            cy: image_dim / 2.0,
            image_dim,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.image_dim > 0.0
            && (0.0..=self.image_dim).contains(&self.cx)
            && (0.0..=self.image_dim).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad intrinsics {self:?}")))
        }
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::for_image(DEFAULT_IMAGE_DIM)
    }
}

/// World-to-camera rigid transform `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    #[serde(with = "row_major")]
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis (+z of the camera frame) expressed in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics,
    #[serde(flatten)]
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    pub fn to_camera_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.rotation * p + self.extrinsics.translation
    }

    /// Homogeneous screen point `[u, v, w] = K (R p + t)`.
    pub fn homogeneous(&self, p: &Vector3<f64>) -> HomogeneousScreenPoint {
        let h = self.intrinsics.matrix() * self.to_camera_frame(p);
        HomogeneousScreenPoint {
            u: h.x,
            v: h.y,
            w: h.z,
        }
    }

    /// Jacobian of the pixel projection with respect to the world point.
    /// `None` when the point is behind the camera.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Option<Matrix2x3<f64>> {
        let pc = self.to_camera_frame(p);
        pixel_jacobian_camera_frame(&self.intrinsics, &pc).map(|j| j * self.extrinsics.rotation)
    }
}

/// d(u, v) / d(camera-frame point).
pub fn pixel_jacobian_camera_frame(
    k: &CameraIntrinsics,
    pc: &Vector3<f64>,
) -> Option<Matrix2x3<f64>> {
    if pc.z <= DEPTH_EPS {
        return None;
    }
    let iz = 1.0 / pc.z;
    Some(Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * pc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * pc.y * iz * iz,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousScreenPoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl HomogeneousScreenPoint {
    pub fn dehomogenize(&self) -> Result<Vector2<f64>> {
        if !(self.w > DEPTH_EPS) {
            return Err(Error::BehindCamera { depth: self.w });
        }
        Ok(Vector2::new(self.u / self.w, self.v / self.w))
    }
}

/// Camera on the look-at sphere, in degrees, plus a translation offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereCameraPose {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub gamma_deg: f64,
    pub delta_t: Vector3<f64>,
}

impl SphereCameraPose {
    pub fn new(alpha_deg: f64, beta_deg: f64, gamma_deg: f64) -> Self {
        Self {
            alpha_deg,
            beta_deg,
            gamma_deg,
            delta_t: Vector3::zeros(),
        }
    }

    pub fn with_delta_t(mut self, delta_t: Vector3<f64>) -> Self {
        self.delta_t = delta_t;
        self
    }
}

/// Augmented camera space: angle bounds, sphere and intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpaceConfig {
    #[serde(rename = "A")]
    pub azimuth_bound: f64,
    #[serde(rename = "B")]
    pub elevation_bound: f64,
    #[serde(rename = "Gamma")]
    pub roll_bound: f64,
    pub radius: f64,
    pub lookat: Vector3<f64>,
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics,
}

impl Default for CameraSpaceConfig {
    fn default() -> Self {
        Self {
            azimuth_bound: 110.0,
            elevation_bound: 60.0,
            roll_bound: 90.0,
            radius: DEFAULT_RADIUS,
            lookat: Vector3::zeros(),
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

impl CameraSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.azimuth_bound > 0.0 && self.elevation_bound > 0.0 && self.roll_bound > 0.0) {
            return Err(Error::InvalidConfig("angle bounds must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig("radius must be positive".into()));
        }
        self.intrinsics.validate()
    }

    pub fn check_bounds(&self, pose: &SphereCameraPose) -> Result<()> {
        for (name, value, bound) in [
            ("alpha", pose.alpha_deg, self.azimuth_bound),
            ("beta", pose.beta_deg, self.elevation_bound),
            ("gamma", pose.gamma_deg, self.roll_bound),
        ] {
            if !(value.abs() <= bound) {
                return Err(Error::OutOfBounds { name, value, bound });
            }
        }
        Ok(())
    }
}

/// Look-at rotation for azimuth `alpha` (about world y) then elevation `beta`
/// (about the camera's right axis), both in radians.
pub fn lookat_rotation(alpha: f64, beta: f64) -> Matrix3<f64> {
    rot_x(beta) * rot_y(alpha)
}

/// Translation placing the camera center on the configured sphere with its optical
/// axis through the look-at point: `t = -R lookat + (0, 0, radius)`.
pub fn sphere_translation(rotation: &Matrix3<f64>, cfg: &CameraSpaceConfig) -> Vector3<f64> {
    -(rotation * cfg.lookat) + Vector3::new(0.0, 0.0, cfg.radius)
}

/// `R = R_roll(gamma) R_lookat(alpha, beta)`, `t = t_sphere(R) + delta_t`.
pub fn camera_from_pose(pose: &SphereCameraPose, cfg: &CameraSpaceConfig) -> Result<Camera> {
    cfg.check_bounds(pose)?;
    let rotation = rot_z(pose.gamma_deg.to_radians())
        * lookat_rotation(pose.alpha_deg.to_radians(), pose.beta_deg.to_radians());
    let translation = sphere_translation(&rotation, cfg) + pose.delta_t;
    Ok(Camera {
        intrinsics: cfg.intrinsics,
        extrinsics: CameraExtrinsics {
            rotation,
            translation,
        },
    })
}

/// Builds a camera from an arbitrary rotation and offset, sharing the sphere convention.
pub fn camera_from_rotation(
    rotation: Matrix3<f64>,
    delta_t: Vector3<f64>,
    cfg: &CameraSpaceConfig,
) -> Result<Camera> {
    check_rotation(&rotation)?;
    Ok(Camera {
        intrinsics: cfg.intrinsics,
        extrinsics: CameraExtrinsics {
            rotation,
            translation: sphere_translation(&rotation, cfg) + delta_t,
        },
    })
}

/// Perspective projection to pixels.
pub fn project(p: &Vector3<f64>, cam: &Camera) -> Result<Vector2<f64>> {
    cam.homogeneous(p).dehomogenize()
}

/// Element-wise [`project`]; points behind the camera or invalid on input come back as `None`.
pub fn project_set(set: &LandmarkSet3D, cam: &Camera) -> LandmarkSet2D {
    LandmarkSet2D::new(
        set.points
            .iter()
            .zip(&set.valid)
            .map(|(p, &ok)| if ok { project(p, cam).ok() } else { None })
            .collect(),
    )
}

/// Axis-aligned bounding box `(min, max)` of the valid points.
pub fn bbox(set: &LandmarkSet2D) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let mut it = set.iter_valid();
    let (_, first) = it.next()?;
    Some(it.fold((*first, *first), |(lo, hi), (_, p)| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Bounding box inside `[0, image_dim]^2` with its smaller side above half the image.
pub fn bbox_valid(set: &LandmarkSet2D, image_dim: f64) -> Result<bool> {
    let got = set.valid_count();
    if got < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got });
    }
    let (lo, hi) = bbox(set).expect("at least two valid points");
    let inside = lo.x >= 0.0 && lo.y >= 0.0 && hi.x <= image_dim && hi.y <= image_dim;
    let extent = hi - lo;
    Ok(inside && extent.x.min(extent.y) > image_dim / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg() -> CameraSpaceConfig {
        CameraSpaceConfig::default()
    }

    #[test]
    fn frontal_pose_is_identity_at_radius() {
        let cam = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, 0.0), &cfg()).unwrap();
        assert_eq!(cam.extrinsics.rotation, Matrix3::identity());
        assert_eq!(cam.extrinsics.translation, Vector3::new(0.0, 0.0, 2.7));
    }

    #[test]
    fn roll_by_pi_reflects_through_principal_point() {
        let c = cfg();
        let a = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, 0.0), &c).unwrap();
        let mut big = c;
        big.roll_bound = 180.0;
        let b = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, 180.0), &big).unwrap();
        let principal = Vector2::new(c.intrinsics.cx, c.intrinsics.cy);
        let p = Vector3::new(0.13, -0.07, 0.05);
        let pa = project(&p, &a).unwrap();
        let pb = project(&p, &b).unwrap();
        assert!((pb - principal + (pa - principal)).norm() < 1e-9);
    }

    #[test]
    fn oblique_camera_sits_on_sphere_and_sees_lookat_at_center() {
        let mut c = cfg();
        c.lookat = Vector3::new(0.1, -0.2, 0.3);
        let cam = camera_from_pose(&SphereCameraPose::new(30.0, 10.0, 0.0), &c).unwrap();
        assert!(((cam.extrinsics.center() - c.lookat).norm() - c.radius).abs() < 1e-9);
        let uv = project(&c.lookat, &cam).unwrap();
        assert!((uv - Vector2::new(c.intrinsics.cx, c.intrinsics.cy)).norm() < 1e-9);
    }

    #[test]
    fn out_of_bounds_pose_errors() {
        let err = camera_from_pose(&SphereCameraPose::new(120.0, 0.0, 0.0), &cfg());
        assert!(matches!(err, Err(Error::OutOfBounds { name: "alpha", .. })));
        let err = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, -91.0), &cfg());
        assert!(matches!(err, Err(Error::OutOfBounds { name: "gamma", .. })));
    }

    #[test]
    fn pinhole_algebra() {
        let k = CameraIntrinsics {
            fx: 500.0,
            fy: 400.0,
            cx: 100.0,
            cy: 90.0,
            image_dim: 224.0,
        };
        let cam = Camera {
            intrinsics: k,
            extrinsics: CameraExtrinsics {
                rotation: Matrix3::identity(),
                translation: Vector3::zeros(),
            },
        };
        let (d, x) = (3.0, 0.2);
        let uv = project(&Vector3::new(d * x, 0.0, d), &cam).unwrap();
        assert!((uv.x - (100.0 + 500.0 * x)).abs() < 1e-12);
        assert!((uv.y - 90.0).abs() < 1e-12);
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &cam),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_set_flags_behind_points() {
        let cam = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, 0.0), &cfg()).unwrap();
        let set = LandmarkSet3D::new(vec![
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::new(-0.1, 0.1, 0.0),
        ]);
        let out = project_set(&set, &cam);
        assert!(out.is_valid(0) && !out.is_valid(1) && out.is_valid(2));
        assert_eq!(out.get(0).unwrap(), &project(&set.points[0], &cam).unwrap());
        assert!(project_set(&LandmarkSet3D::new(vec![]), &cam).is_empty());
    }

    #[test]
    fn sphere_translation_cases() {
        let mut c = cfg();
        let r = super::super::rotation::rot_y(0.4) * rot_x(-0.3);
        assert_eq!(sphere_translation(&r, &c), Vector3::new(0.0, 0.0, c.radius));
        c.lookat = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(
            sphere_translation(&Matrix3::identity(), &c),
            Vector3::new(-1.0, 0.0, c.radius)
        );
        let pose = SphereCameraPose::new(-40.0, 25.0, 12.0);
        let cam = camera_from_pose(&pose, &c).unwrap();
        let t = sphere_translation(&cam.extrinsics.rotation, &c);
        assert!((t - cam.extrinsics.translation).norm() < 1e-12);
    }

    #[test]
    fn bbox_rule() {
        let set = |pts: &[[f64; 2]]| {
            LandmarkSet2D::from_dense(pts.iter().map(|p| Vector2::new(p[0], p[1])).collect())
        };
        assert!(bbox_valid(&set(&[[10.0, 10.0], [200.0, 200.0]]), 224.0).unwrap());
        assert!(!bbox_valid(&set(&[[10.0, 10.0], [100.0, 200.0]]), 224.0).unwrap());
        assert!(!bbox_valid(&set(&[[-5.0, 10.0], [200.0, 200.0]]), 224.0).unwrap());
        assert!(matches!(
            bbox_valid(&set(&[[10.0, 10.0]]), 224.0),
            Err(Error::InsufficientPoints { got: 1, .. })
        ));
    }

    #[test]
    fn roll_difference_is_geodesic_distance() {
        let c = cfg();
        for (g1, g2) in [(0.0, 30.0), (-80.0, 75.0), (10.0, 10.5)] {
            let a = camera_from_pose(&SphereCameraPose::new(35.0, -20.0, g1), &c).unwrap();
            let b = camera_from_pose(&SphereCameraPose::new(35.0, -20.0, g2), &c).unwrap();
            let rel = a.extrinsics.rotation * b.extrinsics.rotation.transpose();
            let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!((angle - (g1 - g2).abs() * PI / 180.0).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_json_layout() {
        let cam = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, 0.0), &cfg()).unwrap();
        let v: serde_json::Value = serde_json::to_value(cam).unwrap();
        assert_eq!(v["rotation"].as_array().unwrap().len(), 9);
        assert_eq!(v["translation"][2], 2.7);
        let c: serde_json::Value = serde_json::to_value(cfg()).unwrap();
        for key in ["A", "B", "Gamma", "radius", "lookat", "fx", "fy", "cx", "cy", "image_dim"] {
            assert!(c.get(key).is_some(), "missing {key}");
        }
        let p: serde_json::Value =
            serde_json::to_value(SphereCameraPose::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(p["delta_t"], serde_json::json!([0.0, 0.0, 0.0]));
    }
}
