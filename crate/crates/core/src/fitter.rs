//! Monocular pose-and-shape fitting with the head parameterization: template plus
//! per-landmark offsets, a 6D rotation, and a translation composed as
//! `t = t_sphere(R) + delta_t`.
//!
//! The objective is the masked multi-frame LLL of the projected landmarks plus
//! `lambda_off * |offsets|^2`, with the mask recomputed from the current rotation.
//! Initialization: coarse grid over (alpha, beta, gamma) scored by the
//! centroid-aligned mean squared error, then a rigid Levenberg–Marquardt refinement of
//! the squared reprojection error. The main stage is gradient descent with an Armijo
//! backtracking line search.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    camera_from_pose, matrix_to_rot6d, pixel_jacobian_camera_frame, rot6d_to_matrix, rot6d_vjp,
    sphere_translation, Camera, CameraExtrinsics, CameraSpaceConfig, Rot6D, SphereCameraPose,
};
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};
use crate::losses::{multiframe_loss, CholeskyParams};
use crate::masking::{visibility_mask, NormalTemplate, VisibilityMask, CAMERA_FORWARD};

pub const MIN_DETECTIONS: usize = 6;

/// Predicted head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub offsets: Vec<Vector3<f64>>,
    pub rot6d: Rot6D,
    pub delta_t: Vector3<f64>,
    pub chol: Vec<CholeskyParams>,
}

impl HeadParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            offsets: vec![Vector3::zeros(); n],
            rot6d: Rot6D::IDENTITY,
            delta_t: Vector3::zeros(),
            chol: vec![CholeskyParams::default(); n],
        }
    }

    fn step(&self, dir: &HeadGradient, alpha: f64) -> Self {
        let mut out = self.clone();
        for (o, g) in out.offsets.iter_mut().zip(&dir.offsets) {
            *o -= g * alpha;
        }
        for k in 0..6 {
            out.rot6d.0[k] -= alpha * dir.rot6d[k];
        }
        out.delta_t -= dir.delta_t * alpha;
        out
    }
}

/// `R = rot6d_to_matrix(rot6d)`, `t = t_sphere(R) + delta_t`, intrinsics from `cfg`.
pub fn predict_camera(rot6d: &Rot6D, delta_t: &Vector3<f64>, cfg: &CameraSpaceConfig) -> Result<Camera> {
    let rotation = rot6d_to_matrix(rot6d)?;
    Ok(Camera {
        intrinsics: cfg.intrinsics,
        extrinsics: CameraExtrinsics {
            rotation,
            translation: sphere_translation(&rotation, cfg) + delta_t,
        },
    })
}

/// Inverse of [`predict_camera`] on cameras sharing the sphere convention.
pub fn decompose_camera(cam: &Camera, cfg: &CameraSpaceConfig) -> Result<(Rot6D, Vector3<f64>)> {
    let r = &cam.extrinsics.rotation;
    Ok((
        matrix_to_rot6d(r)?,
        cam.extrinsics.translation - sphere_translation(r, cfg),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub lambda_off: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Fixed covariance used for every landmark.
    pub chol: CholeskyParams,
    pub grid_step_deg: f64,
    pub roll_step_deg: f64,
    /// Rigid LM refinement of the grid initialization.
    pub refine_init: bool,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda_off: 1e-2,
            max_iterations: 500,
            relative_tolerance: 1e-9,
            chol: CholeskyParams::default(),
            grid_step_deg: 10.0,
            roll_step_deg: 15.0,
            refine_init: true,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HeadParams,
    pub landmarks3d: LandmarkSet3D,
    pub camera: Camera,
    pub final_cost: f64,
    pub iterations: usize,
    /// Grid pose the refinement started from.
    pub init_pose: SphereCameraPose,
    /// Objective after initialization and after every accepted step.
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HeadGradient {
    offsets: Vec<Vector3<f64>>,
    rot6d: [f64; 6],
    delta_t: Vector3<f64>,
}

impl HeadGradient {
    fn norm_squared(&self) -> f64 {
        self.offsets.iter().map(|o| o.norm_squared()).sum::<f64>()
            + self.rot6d.iter().map(|x| x * x).sum::<f64>()
            + self.delta_t.norm_squared()
    }
}

struct Problem<'a> {
    detections: &'a LandmarkSet2D,
    template: &'a LandmarkSet3D,
    normals: &'a NormalTemplate,
    cfg: &'a CameraSpaceConfig,
    opts: &'a FitOptions,
}

impl Problem<'_> {
    fn mask_for(&self, rotation: &Matrix3<f64>) -> Result<VisibilityMask> {
        let mut mask = visibility_mask(rotation, self.normals, &CAMERA_FORWARD)?;
        for (i, m) in mask.0.iter_mut().enumerate() {
            *m &= self.detections.is_valid(i);
        }
        Ok(mask)
    }

    fn usable(&self, rotation: &Matrix3<f64>) -> Result<usize> {
        Ok(self.mask_for(rotation)?.visible_count())
    }

    /// Objective under a fixed mask; `None` when a used landmark is behind the camera.
    fn objective(&self, p: &HeadParams, mask: &VisibilityMask, with_grad: bool) -> Result<Option<(f64, Option<HeadGradient>)>> {
        let cam = predict_camera(&p.rot6d, &p.delta_t, self.cfg)?;
        let r = cam.extrinsics.rotation;
        let n = self.template.len();
        let mut pred = vec![Vector2::zeros(); n];
        let mut cam_pts = vec![Vector3::zeros(); n];
        for i in 0..n {
            let x = self.template.points[i] + p.offsets[i];
            let pc = cam.to_camera_frame(&x);
            cam_pts[i] = pc;
            if mask.is_visible(i) {
                if pc.z <= crate::geometry::DEPTH_EPS {
                    return Ok(None);
                }
                pred[i] = Vector2::new(
                    cam.intrinsics.fx * pc.x / pc.z + cam.intrinsics.cx,
                    cam.intrinsics.fy * pc.y / pc.z + cam.intrinsics.cy,
                );
            }
        }
        let mf = multiframe_loss(&pred, &p.chol, self.detections, mask)?;
        let reg: f64 = p.offsets.iter().map(|o| o.norm_squared()).sum();
        let value = mf.value + self.opts.lambda_off * reg;
        if !with_grad {
            return Ok(Some((value, None)));
        }

        let mut g_off: Vec<Vector3<f64>> = p.offsets.iter().map(|o| o * (2.0 * self.opts.lambda_off)).collect();
        let mut g_r = Matrix3::zeros();
        let mut g_dt = Vector3::zeros();
        for i in 0..n {
            if !mask.is_visible(i) {
                continue;
            }
            let j = pixel_jacobian_camera_frame(&cam.intrinsics, &cam_pts[i]).expect("checked depth");
            let g_c = j.transpose() * mf.grad_pred[i];
            let lever = self.template.points[i] + p.offsets[i] - self.cfg.lookat;
            g_off[i] += r.transpose() * g_c;
            g_dt += g_c;
            g_r += g_c * lever.transpose();
        }
        let grad = HeadGradient {
            offsets: g_off,
            rot6d: rot6d_vjp(&p.rot6d, &g_r)?,
            delta_t: g_dt,
        };
        Ok(Some((value, Some(grad))))
    }

    /// Objective with the mask taken from the parameters' own rotation.
    fn full_objective(&self, p: &HeadParams) -> Result<Option<(f64, VisibilityMask)>> {
        let mask = self.mask_for(&rot6d_to_matrix(&p.rot6d)?)?;
        Ok(self.objective(p, &mask, false)?.map(|(v, _)| (v, mask)))
    }

    fn grid_init(&self) -> Result<(SphereCameraPose, Vector3<f64>)> {
        let axis = |bound: f64, step: f64| -> Vec<f64> {
            let k = (bound / step).floor() as i64;
            (-k..=k).map(|i| i as f64 * step).collect()
        };
        let mut best: Option<(f64, SphereCameraPose, Vector3<f64>)> = None;
        for &gamma in &axis(self.cfg.roll_bound, self.opts.roll_step_deg) {
            for &beta in &axis(self.cfg.elevation_bound, self.opts.grid_step_deg) {
                for &alpha in &axis(self.cfg.azimuth_bound, self.opts.grid_step_deg) {
                    let pose = SphereCameraPose::new(alpha, beta, gamma);
                    let cam = camera_from_pose(&pose, self.cfg)?;
                    if self.usable(&cam.extrinsics.rotation)? < MIN_DETECTIONS {
                        continue;
                    }
                    let residuals: Vec<(Vector2<f64>, f64)> = (0..self.template.len())
                        .filter_map(|i| {
                            let pc = cam.to_camera_frame(&self.template.points[i]);
                            let uv = crate::geometry::project(&self.template.points[i], &cam).ok()?;
                            Some((self.detections.get(i)? - uv, pc.z))
                        })
                        .collect();
                    if residuals.len() < MIN_DETECTIONS {
                        continue;
                    }
                    let m = residuals.len() as f64;
                    let mean = residuals.iter().map(|(r, _)| r).sum::<Vector2<f64>>() / m;
                    let depth = residuals.iter().map(|(_, z)| z).sum::<f64>() / m;
                    let score = residuals.iter().map(|(r, _)| (r - mean).norm_squared()).sum::<f64>() / m;
                    if best.as_ref().is_none_or(|b| score < b.0) {
                        let dt = Vector3::new(
                            mean.x * depth / self.cfg.intrinsics.fx,
                            mean.y * depth / self.cfg.intrinsics.fy,
                            0.0,
                        );
                        best = Some((score, pose, dt));
                    }
                }
            }
        }
        best.map(|(_, pose, dt)| (pose, dt)).ok_or_else(|| {
            Error::Underdetermined(format!(
                "fewer than {MIN_DETECTIONS} visible detections at every candidate pose"
            ))
        })
    }

    /// Squared reprojection error of the rigid template over every valid detection.
    fn rigid_sq(&self, r: &Matrix3<f64>, dt: &Vector3<f64>) -> Option<f64> {
        let t = sphere_translation(r, self.cfg) + dt;
        let k = &self.cfg.intrinsics;
        let mut cost = 0.0;
        for (i, det) in self.detections.iter_valid() {
            let pc = r * self.template.points[i] + t;
            if pc.z <= crate::geometry::DEPTH_EPS {
                return None;
            }
            let uv = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
            cost += (uv - det).norm_squared();
        }
        Some(cost)
    }

    /// Levenberg–Marquardt on (rotation increment, delta_t) for the rigid template.
    fn rigid_refine(&self, mut r: Matrix3<f64>, mut dt: Vector3<f64>) -> Result<(Matrix3<f64>, Vector3<f64>)> {
        let k = self.cfg.intrinsics;
        let Some(mut cost) = self.rigid_sq(&r, &dt) else {
            return Ok((r, dt));
        };
        let mut lambda = 1e-3;
        for _ in 0..200 {
            if cost == 0.0 {
                break;
            }
            let t = sphere_translation(&r, self.cfg) + dt;
            let (mut h, mut g) = (Matrix6::zeros(), Vector6::zeros());
            for (i, det) in self.detections.iter_valid() {
                let lever = r * (self.template.points[i] - self.cfg.lookat);
                let pc = r * self.template.points[i] + t;
                let Some(jp) = pixel_jacobian_camera_frame(&k, &pc) else { continue };
                let uv = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
                // d pc / d omega = -[lever]_x, d pc / d dt = I
                let mut jac = nalgebra::Matrix2x6::zeros();
                jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -lever.cross_matrix()));
                jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
                h += jac.transpose() * jac;
                g += jac.transpose() * (uv - det);
            }
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * h[(d, d)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let omega = Vector3::new(step[0], step[1], step[2]);
            let r_new = nalgebra::Rotation3::new(omega).into_inner() * r;
            let dt_new = dt + Vector3::new(step[3], step[4], step[5]);
            match self.rigid_sq(&r_new, &dt_new) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost;
                    (r, dt, cost) = (r_new, dt_new, c);
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel < 1e-14 {
                        break;
                    }
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e12 {
                        break;
                    }
                }
            }
        }
        // re-orthonormalize
        r = rot6d_to_matrix(&Rot6D::from_columns(&r.column(0).into(), &r.column(1).into()))?;
        Ok((r, dt))
    }
}

pub fn fit_monocular(
    detections: &LandmarkSet2D,
    template: &LandmarkSet3D,
    normals: &NormalTemplate,
    cfg: &CameraSpaceConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = template.len();
    if detections.len() != n || normals.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "template {n}, detections {}, normals {}",
            detections.len(),
            normals.len()
        )));
    }
    if template.valid_count() != n {
        return Err(Error::InvalidConfig("fit template must be fully valid".into()));
    }
    if detections.valid_count() < MIN_DETECTIONS {
        return Err(Error::Underdetermined(format!(
            "{} valid detections, need {MIN_DETECTIONS}",
            detections.valid_count()
        )));
    }
    let problem = Problem {
        detections,
        template,
        normals,
        cfg,
        opts,
    };

    let (init_pose, dt0) = problem.grid_init()?;
    let cam0 = camera_from_pose(&init_pose, cfg)?;
    let (mut r0, mut dt0) = (cam0.extrinsics.rotation, dt0);
    if opts.refine_init {
        (r0, dt0) = problem.rigid_refine(r0, dt0)?;
    }
    if problem.usable(&r0)? < MIN_DETECTIONS {
        return Err(Error::Underdetermined("initial pose sees too few detections".into()));
    }

    let mut params = HeadParams {
        offsets: vec![Vector3::zeros(); n],
        rot6d: matrix_to_rot6d(&r0)?,
        delta_t: dt0,
        chol: vec![opts.chol; n],
    };
    let (mut cost, mut mask) = problem
        .full_objective(&params)?
        .ok_or_else(|| Error::Underdetermined("initial pose puts landmarks behind the camera".into()))?;
    let mut trace = vec![cost];
    let mut alpha = 1e-6;
    let mut iterations = 0;

    while iterations < opts.max_iterations && cost > 0.0 {
        iterations += 1;
        let (_, grad) = problem.objective(&params, &mask, true)?.expect("current point is feasible");
        let grad = grad.expect("requested");
        let gnorm2 = grad.norm_squared();
        if !gnorm2.is_finite() {
            return Err(Error::Numerical {
                iteration: iterations,
                message: "non-finite gradient".into(),
                trace,
            });
        }
        if gnorm2 == 0.0 {
            break;
        }
        alpha *= 4.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let candidate = params.step(&grad, alpha);
            if let Some((c, m)) = problem.full_objective(&candidate)? {
                if c.is_nan() {
                    return Err(Error::Numerical {
                        iteration: iterations,
                        message: "objective is NaN".into(),
                        trace,
                    });
                }
                if c <= cost - opts.armijo * alpha * gnorm2 && m.visible_count() >= MIN_DETECTIONS {
                    accepted = Some((candidate, c, m));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((mut candidate, c, m)) = accepted else { break };
        // keep the raw 6D columns orthonormal; the decoded rotation is unchanged
        candidate.rot6d = matrix_to_rot6d(&rot6d_to_matrix(&candidate.rot6d)?)?;
        let rel = (cost - c) / cost;
        (params, cost, mask) = (candidate, c, m);
        trace.push(cost);
        if rel < opts.relative_tolerance {
            break;
        }
    }

    let camera = predict_camera(&params.rot6d, &params.delta_t, cfg)?;
    let landmarks3d = LandmarkSet3D::new(
        template
            .points
            .iter()
            .zip(&params.offsets)
            .map(|(t, o)| t + o)
            .collect(),
    );
    Ok(FitResult {
        params,
        landmarks3d,
        camera,
        final_cost: cost,
        iterations,
        init_pose,
        cost_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_set;
    use crate::synthgen::canonical_face_layout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn predict_camera_composition() {
        let cfg = CameraSpaceConfig::default();
        let cam = predict_camera(&Rot6D::IDENTITY, &Vector3::zeros(), &cfg).unwrap();
        assert_eq!(cam.extrinsics.translation, Vector3::new(0.0, 0.0, cfg.radius));
        let dt = Vector3::new(0.1, 0.0, 0.0);
        let shifted = predict_camera(&Rot6D::IDENTITY, &dt, &cfg).unwrap();
        assert_eq!(shifted.extrinsics.translation - cam.extrinsics.translation, dt);
    }

    #[test]
    fn compose_decompose_round_trip() {
        let mut cfg = CameraSpaceConfig::default();
        cfg.lookat = Vector3::new(0.02, -0.05, 0.1);
        let pose = SphereCameraPose::new(40.0, -15.0, 25.0).with_delta_t(Vector3::new(0.03, -0.01, 0.2));
        let cam = camera_from_pose(&pose, &cfg).unwrap();
        let (r6, dt) = decompose_camera(&cam, &cfg).unwrap();
        let back = predict_camera(&r6, &dt, &cfg).unwrap();
        assert!((back.extrinsics.rotation - cam.extrinsics.rotation).norm() < 1e-9);
        assert!((back.extrinsics.translation - cam.extrinsics.translation).norm() < 1e-9);
        assert!((dt - pose.delta_t).norm() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (template, normals) = canonical_face_layout(98).unwrap();
        let cfg = CameraSpaceConfig::default();
        let pose = SphereCameraPose::new(20.0, 10.0, 5.0);
        let cam = camera_from_pose(&pose, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut det = project_set(&template, &cam);
        for p in det.points.iter_mut().flatten() {
            *p += Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        }
        let opts = FitOptions::default();
        let problem = Problem {
            detections: &det,
            template: &template,
            normals: &normals,
            cfg: &cfg,
            opts: &opts,
        };
        let mut params = HeadParams::zeros(98);
        params.rot6d = Rot6D([0.9, 0.1, -0.2, 0.05, 1.1, 0.1]);
        params.delta_t = Vector3::new(0.01, 0.02, -0.05);
        for o in &mut params.offsets {
            *o = Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01));
        }
        let mask = problem.mask_for(&rot6d_to_matrix(&params.rot6d).unwrap()).unwrap();
        let (_, grad) = problem.objective(&params, &mask, true).unwrap().unwrap();
        let grad = grad.unwrap();
        let f = |p: &HeadParams| problem.objective(p, &mask, false).unwrap().unwrap().0;
        let h = 1e-7;
        for k in 0..6 {
            let (mut a, mut b) = (params.clone(), params.clone());
            a.rot6d.0[k] += h;
            b.rot6d.0[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - grad.rot6d[k]).abs() <= 1e-5 * fd.abs().max(1.0), "rot6d {k}: {fd} vs {}", grad.rot6d[k]);
        }
        for k in 0..3 {
            let (mut a, mut b) = (params.clone(), params.clone());
            a.delta_t[k] += h;
            b.delta_t[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - grad.delta_t[k]).abs() <= 1e-5 * fd.abs().max(1.0));
        }
        for i in [0, 40, 54, 90] {
            for k in 0..3 {
                let (mut a, mut b) = (params.clone(), params.clone());
                a.offsets[i][k] += h;
                b.offsets[i][k] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                assert!((fd - grad.offsets[i][k]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn too_few_detections() {
        let (template, normals) = canonical_face_layout(98).unwrap();
        let cfg = CameraSpaceConfig::default();
        let mut det = LandmarkSet2D::new(vec![None; 98]);
        for i in 0..5 {
            det.points[i] = Some(Vector2::new(100.0, 100.0));
        }
        let r = fit_monocular(&det, &template, &normals, &cfg, &FitOptions::default());
        assert!(matches!(r, Err(Error::Underdetermined(_))));
    }

    #[test]
    fn masked_everywhere_is_underdetermined() {
        let (template, mut normals) = canonical_face_layout(98).unwrap();
        // thresholds of 1 can never be exceeded
        normals.thresholds = vec![1.0; 98];
        let cfg = CameraSpaceConfig::default();
        let cam = camera_from_pose(&SphereCameraPose::new(0.0, 0.0, 0.0), &cfg).unwrap();
        let det = project_set(&template, &cam);
        let r = fit_monocular(&det, &template, &normals, &cfg, &FitOptions::default());
        assert!(matches!(r, Err(Error::Underdetermined(_))));
    }
}
