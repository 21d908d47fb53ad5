//! Occlusion-aware visibility masks from a per-landmark normal template.
//!
//! A landmark is visible when its normal, rotated into the camera frame, has a dot
//! product with the forward vector strictly above its threshold. The forward vector
//! points from the face toward the camera, i.e. it is the negated optical axis; in
//! camera coordinates that is [`CAMERA_FORWARD`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{camera_from_pose, check_rotation, CameraSpaceConfig, SphereCameraPose};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const NOSE_BRIDGE_THRESHOLD: f64 = -0.1;

/// Negated optical axis in the camera frame.
pub const CAMERA_FORWARD: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalTemplate {
    pub normals: Vec<Vector3<f64>>,
    pub thresholds: Vec<f64>,
    pub nose_bridge_indices: Vec<usize>,
}

impl NormalTemplate {
    /// Threshold 0.5 everywhere except -0.1 on the nose bridge.
    pub fn with_default_thresholds(
        normals: Vec<Vector3<f64>>,
        nose_bridge_indices: Vec<usize>,
    ) -> Result<Self> {
        let mut thresholds = vec![DEFAULT_THRESHOLD; normals.len()];
        for &i in &nose_bridge_indices {
            *thresholds.get_mut(i).ok_or(Error::IndexOutOfRange {
                index: i,
                len: normals.len(),
            })? = NOSE_BRIDGE_THRESHOLD;
        }
        let tpl = Self {
            normals,
            thresholds,
            nose_bridge_indices,
        };
        tpl.validate()?;
        Ok(tpl)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.len() != self.normals.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} normals but {} thresholds",
                self.normals.len(),
                self.thresholds.len()
            )));
        }
        for n in &self.normals {
            let norm = n.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::NonUnitVector { norm });
            }
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(-1.0..=1.0).contains(*t)) {
            return Err(Error::InvalidConfig(format!("threshold {t} outside [-1, 1]")));
        }
        if let Some(&i) = self.nose_bridge_indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisibilityMask(pub Vec<bool>);

impl VisibilityMask {
    pub fn all(n: usize, visible: bool) -> Self {
        Self(vec![visible; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_visible(&self, n: usize) -> bool {
        self.0.get(n).copied().unwrap_or(false)
    }

    pub fn visible_count(&self) -> usize {
        self.0.iter().filter(|v| **v).count()
    }

    /// Forces the listed indices to hidden.
    pub fn exclude(&mut self, indices: &[usize]) {
        for &i in indices {
            if let Some(m) = self.0.get_mut(i) {
                *m = false;
            }
        }
    }
}

/// Per-landmark dot products `(R n) . forward`.
pub fn visibility_scores(
    rotation: &Matrix3<f64>,
    tpl: &NormalTemplate,
    forward: &Vector3<f64>,
) -> Result<Vec<f64>> {
    check_rotation(rotation)?;
    let norm = forward.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitVector { norm });
    }
    Ok(tpl
        .normals
        .iter()
        .map(|n| (rotation * n).dot(forward))
        .collect())
}

pub fn visibility_mask(
    rotation: &Matrix3<f64>,
    tpl: &NormalTemplate,
    forward: &Vector3<f64>,
) -> Result<VisibilityMask> {
    let scores = visibility_scores(rotation, tpl, forward)?;
    Ok(VisibilityMask(
        scores
            .iter()
            .zip(&tpl.thresholds)
            .map(|(s, t)| s > t)
            .collect(),
    ))
}

/// Masks for every view of a rig, using each view's camera rotation.
pub fn rig_masks(
    rig: &[SphereCameraPose],
    tpl: &NormalTemplate,
    cfg: &CameraSpaceConfig,
) -> Result<Vec<VisibilityMask>> {
    rig.iter()
        .map(|pose| {
            let cam = camera_from_pose(pose, cfg)?;
            visibility_mask(&cam.extrinsics.rotation, tpl, &CAMERA_FORWARD)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_y;

    fn single(normal: Vector3<f64>, threshold: f64) -> NormalTemplate {
        NormalTemplate {
            normals: vec![normal],
            thresholds: vec![threshold],
            nose_bridge_indices: vec![],
        }
    }

    #[test]
    fn facing_normal_is_visible() {
        let tpl = single(CAMERA_FORWARD, 0.5);
        let m = visibility_mask(&Matrix3::identity(), &tpl, &CAMERA_FORWARD).unwrap();
        assert_eq!(m.0, vec![true]);
    }

    #[test]
    fn yaw_quarter_turn_hides() {
        let tpl = single(CAMERA_FORWARD, 0.5);
        let r = rot_y(std::f64::consts::FRAC_PI_2);
        let m = visibility_mask(&r, &tpl, &CAMERA_FORWARD).unwrap();
        assert_eq!(m.0, vec![false]);
    }

    #[test]
    fn nose_bridge_threshold_admits_grazing_normal() {
        // rotate the normal so that its dot with forward is 0.2
        let angle = 0.2f64.acos();
        let r = rot_y(angle);
        let strict = visibility_mask(&r, &single(CAMERA_FORWARD, 0.5), &CAMERA_FORWARD).unwrap();
        let loose = visibility_mask(&r, &single(CAMERA_FORWARD, -0.1), &CAMERA_FORWARD).unwrap();
        assert_eq!((strict.0[0], loose.0[0]), (false, true));
    }

    #[test]
    fn tie_is_hidden() {
        let tpl = single(CAMERA_FORWARD, 1.0);
        let m = visibility_mask(&Matrix3::identity(), &tpl, &CAMERA_FORWARD).unwrap();
        assert_eq!(m.0, vec![false]);
    }

    #[test]
    fn non_unit_forward_errors() {
        let tpl = single(CAMERA_FORWARD, 0.5);
        let r = visibility_mask(&Matrix3::identity(), &tpl, &Vector3::new(0.0, 0.0, -2.0));
        assert!(matches!(r, Err(Error::NonUnitVector { .. })));
    }

    #[test]
    fn default_thresholds_mark_nose_bridge() {
        let tpl =
            NormalTemplate::with_default_thresholds(vec![CAMERA_FORWARD; 4], vec![1, 2]).unwrap();
        assert_eq!(tpl.thresholds, vec![0.5, -0.1, -0.1, 0.5]);
        assert!(NormalTemplate::with_default_thresholds(vec![CAMERA_FORWARD; 2], vec![5]).is_err());
    }

    #[test]
    fn template_json_keys() {
        let tpl = NormalTemplate::with_default_thresholds(vec![CAMERA_FORWARD], vec![]).unwrap();
        let v = serde_json::to_value(&tpl).unwrap();
        assert_eq!(v["normals"], serde_json::json!([[0.0, 0.0, -1.0]]));
        assert_eq!(v["thresholds"], serde_json::json!([0.5]));
        assert_eq!(v["nose_bridge_indices"], serde_json::json!([]));
    }
}
