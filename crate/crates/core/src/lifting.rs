//! Masked multi-view lifting of 2D detections to 3D landmarks.
//!
//! The masked reprojection cost has no terms coupling different landmarks, so each
//! landmark is solved on its own with Levenberg–Marquardt, initialized from a linear
//! two-view triangulation.

use log::warn;
use nalgebra::{Matrix2x3, Matrix3, Matrix3x4, Matrix4x3, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, Camera};
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};
use crate::masking::{NormalTemplate, VisibilityMask, CAMERA_FORWARD};
use crate::synthgen::PUPIL_INDICES_98;

/// Triangulations whose linear system is worse conditioned than this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub camera: Camera,
    pub detections: LandmarkSet2D,
    pub mask: VisibilityMask,
}

impl View {
    /// Detection of landmark `n` if it is both unmasked and present.
    pub fn observation(&self, n: usize) -> Option<&Vector2<f64>> {
        if self.mask.is_visible(n) {
            self.detections.get(n)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewObservations {
    pub views: Vec<View>,
}

impl MultiViewObservations {
    /// Landmark count shared by all views.
    pub fn landmark_count(&self) -> Result<usize> {
        let first = self.views.first().ok_or(Error::Empty("views"))?;
        let n = first.detections.len();
        for (i, v) in self.views.iter().enumerate() {
            if v.detections.len() != n || v.mask.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "view {i} has {} detections and {} mask entries, expected {n}",
                    v.detections.len(),
                    v.mask.len()
                )));
            }
        }
        Ok(n)
    }

    /// Views in which landmark `n` is observed.
    pub fn observing_views(&self, n: usize) -> Vec<usize> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.observation(n).is_some())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Linear triangulation from two views, minimizing the algebraic error in
/// normalized image coordinates.
pub fn triangulate_pair(
    a: (&Camera, &Vector2<f64>),
    b: (&Camera, &Vector2<f64>),
) -> Result<Vector3<f64>> {
    let mut rows = [Vector4::zeros(); 4];
    for (k, (cam, uv)) in [a, b].into_iter().enumerate() {
        let ki = &cam.intrinsics;
        let xn = (uv.x - ki.cx) / ki.fx;
        let yn = (uv.y - ki.cy) / ki.fy;
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&cam.extrinsics.rotation);
        p.set_column(3, &cam.extrinsics.translation);
        rows[2 * k] = (p.row(2) * xn - p.row(0)).transpose();
        rows[2 * k + 1] = (p.row(2) * yn - p.row(1)).transpose();
    }
    let m = Matrix4x3::from_fn(|i, j| rows[i][j]);
    let rhs = Vector4::from_fn(|i, _| -rows[i][3]);
    let svd = m.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::DegenerateGeometry(format!(
            "near-parallel rays, condition number {:e}",
            smax / smin
        )));
    }
    svd.solve(&rhs, 0.0)
        .map_err(|e| Error::DegenerateGeometry(e.to_string()))
}

/// Masked reprojection residuals with their Jacobians.
#[derive(Debug, Clone, Default)]
pub struct ReprojectionEval {
    /// Sum of squared pixel residuals.
    pub cost: f64,
    /// `(view, landmark)` of every residual pair, in stacking order.
    pub slots: Vec<(usize, usize)>,
    /// Stacked `[du, dv]` per slot.
    pub residuals: Vec<f64>,
    /// d(residual pair) / d(landmark position) per slot.
    pub jacobians: Vec<Matrix2x3<f64>>,
    /// Visible slots dropped because the current point is behind that camera.
    pub clamped: Vec<(usize, usize)>,
}

fn residual_and_jacobian(
    cam: &Camera,
    p: &Vector3<f64>,
    det: &Vector2<f64>,
) -> Option<(Vector2<f64>, Matrix2x3<f64>)> {
    let uv = project(p, cam).ok()?;
    let jac = cam.projection_jacobian(p)?;
    Some((uv - det, jac))
}

/// `sum_views sum_n m_{view,n} |pi(l_n; c_view) - det_{view,n}|^2` over valid landmarks.
pub fn reprojection_cost(set: &LandmarkSet3D, obs: &MultiViewObservations) -> Result<ReprojectionEval> {
    let n = obs.landmark_count()?;
    if set.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} landmarks vs {n} detections per view",
            set.len()
        )));
    }
    let mut out = ReprojectionEval::default();
    for (vi, view) in obs.views.iter().enumerate() {
        for (li, p) in set.iter_valid() {
            let Some(det) = view.observation(li) else {
                continue;
            };
            match residual_and_jacobian(&view.camera, p, det) {
                Some((r, j)) => {
                    out.cost += r.norm_squared();
                    out.slots.push((vi, li));
                    out.residuals.extend([r.x, r.y]);
                    out.jacobians.push(j);
                }
                None => out.clamped.push((vi, li)),
            }
        }
    }
    if !out.clamped.is_empty() {
        warn!("{} visible residuals clamped: point behind camera", out.clamped.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub relative_tolerance: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    /// Landmarks masked out in every view (pupils by default).
    pub excluded_indices: Vec<usize>,
    /// Optional Huber threshold in pixels; plain squared loss when `None`.
    pub huber_delta: Option<f64>,
    /// Normal template used to pick the two most frontal views for initialization.
    pub normals: Option<NormalTemplate>,
    /// Solve landmarks on the rayon pool.
    pub parallel: bool,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_tolerance: 1e-10,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
            excluded_indices: PUPIL_INDICES_98.to_vec(),
            huber_delta: None,
            normals: None,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftResult {
    /// Lifted landmarks; invalid entries are zero and flagged.
    pub landmarks3d: LandmarkSet3D,
    /// RMS reprojection error per landmark in pixels (0 for invalid landmarks).
    pub per_landmark_rms: Vec<f64>,
    /// Largest LM iteration count over landmarks.
    pub iterations: usize,
    /// Sum of per-landmark final costs.
    pub final_cost: f64,
    /// Accepted costs per landmark, starting with the initial cost.
    #[serde(skip)]
    pub cost_traces: Vec<Vec<f64>>,
}

impl LiftResult {
    pub fn valid(&self) -> &[bool] {
        &self.landmarks3d.valid
    }
}

struct LandmarkSolve {
    point: Vector3<f64>,
    rms: f64,
    iterations: usize,
    cost: f64,
    trace: Vec<f64>,
}

fn huber(sq: f64, delta: Option<f64>) -> (f64, f64) {
    match delta {
        Some(d) if sq > d * d => {
            let r = sq.sqrt();
            (2.0 * d * r - d * d, d / r)
        }
        _ => (sq, 1.0),
    }
}

/// Robust cost, normal matrix and gradient of one landmark over the given views.
fn landmark_system(
    obs: &MultiViewObservations,
    n: usize,
    views: &[usize],
    p: &Vector3<f64>,
    delta: Option<f64>,
) -> (f64, Matrix3<f64>, Vector3<f64>, f64, usize) {
    let (mut cost, mut h, mut g) = (0.0, Matrix3::zeros(), Vector3::zeros());
    let (mut sq_sum, mut count) = (0.0, 0usize);
    for &v in views {
        let view = &obs.views[v];
        let det = view.observation(n).expect("observing view");
        if let Some((r, j)) = residual_and_jacobian(&view.camera, p, det) {
            let sq = r.norm_squared();
            let (rho, w) = huber(sq, delta);
            cost += rho;
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
            sq_sum += sq;
            count += 1;
        }
    }
    (cost, h, g, sq_sum, count)
}

fn initial_point(
    obs: &MultiViewObservations,
    n: usize,
    views: &[usize],
    normals: Option<&NormalTemplate>,
) -> Option<Vector3<f64>> {
    // candidate pairs, best first
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    match normals.filter(|t| n < t.len()) {
        Some(tpl) => {
            let score = |v: usize| {
                let r = &obs.views[v].camera.extrinsics.rotation;
                (r * tpl.normals[n]).dot(&CAMERA_FORWARD)
            };
            for (i, &a) in views.iter().enumerate() {
                for &b in &views[i + 1..] {
                    pairs.push((-(score(a).min(score(b))), a, b));
                }
            }
        }
        None => {
            for (i, &a) in views.iter().enumerate() {
                for &b in &views[i + 1..] {
                    let axis = |v: usize| obs.views[v].camera.extrinsics.optical_axis();
                    pairs.push((axis(a).dot(&axis(b)), a, b));
                }
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    pairs.into_iter().find_map(|(_, a, b)| {
        let va = &obs.views[a];
        let vb = &obs.views[b];
        triangulate_pair(
            (&va.camera, va.observation(n)?),
            (&vb.camera, vb.observation(n)?),
        )
        .ok()
    })
}

fn solve_landmark(
    obs: &MultiViewObservations,
    n: usize,
    views: &[usize],
    opts: &LiftOptions,
) -> Option<LandmarkSolve> {
    let mut p = initial_point(obs, n, views, opts.normals.as_ref())?;
    let (mut cost, mut h, mut g, mut sq, mut count) =
        landmark_system(obs, n, views, &p, opts.huber_delta);
    let mut lambda = opts.lambda_init;
    let mut trace = vec![cost];
    let mut iterations = 0;

    while iterations < opts.max_iterations && cost > 0.0 {
        iterations += 1;
        let mut damped = h;
        for k in 0..3 {
            damped[(k, k)] += lambda * h[(k, k)].max(1e-12);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= opts.lambda_factor;
            continue;
        };
        let candidate = p - chol.solve(&g);
        let next = landmark_system(obs, n, views, &candidate, opts.huber_delta);
        // the residual set must not shrink, or the cost is not comparable
        if next.0.is_finite() && next.0 < cost && next.4 == count {
            let rel = (cost - next.0) / cost;
            p = candidate;
            (cost, h, g, sq, count) = next;
            trace.push(cost);
            lambda /= opts.lambda_factor;
            if rel < opts.relative_tolerance {
                break;
            }
        } else {
            lambda *= opts.lambda_factor;
            if lambda > 1e16 {
                break;
            }
        }
    }
    if count < 2 {
        return None;
    }
    Some(LandmarkSolve {
        point: p,
        rms: (sq / count as f64).sqrt(),
        iterations,
        cost,
        trace,
    })
}

/// Lifts every landmark visible (unmasked, detected, not excluded) in at least two views.
pub fn lift_multiview(obs: &MultiViewObservations, opts: &LiftOptions) -> Result<LiftResult> {
    let n = obs.landmark_count()?;
    let solve = |li: usize| -> Option<LandmarkSolve> {
        if opts.excluded_indices.contains(&li) {
            return None;
        }
        let views = obs.observing_views(li);
        if views.len() < 2 {
            return None;
        }
        let solved = solve_landmark(obs, li, &views, opts);
        if solved.is_none() {
            warn!("landmark {li}: no non-degenerate view pair");
        }
        solved
    };
    let solves: Vec<Option<LandmarkSolve>> = if opts.parallel {
        (0..n).into_par_iter().map(solve).collect()
    } else {
        (0..n).map(solve).collect()
    };
    if solves.iter().all(Option::is_none) {
        return Err(Error::NothingLiftable);
    }

    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut rms = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    let (mut iterations, mut final_cost) = (0, 0.0);
    for s in solves {
        match s {
            Some(s) => {
                points.push(s.point);
                valid.push(true);
                rms.push(s.rms);
                iterations = iterations.max(s.iterations);
                final_cost += s.cost;
                traces.push(s.trace);
            }
            None => {
                points.push(Vector3::zeros());
                valid.push(false);
                rms.push(0.0);
                traces.push(Vec::new());
            }
        }
    }
    Ok(LiftResult {
        landmarks3d: LandmarkSet3D::with_validity(points, valid)?,
        per_landmark_rms: rms,
        iterations,
        final_cost,
        cost_traces: traces,
    })
}

/// Landmark-wise mean over the sets in which each landmark is valid.
pub fn template_from_pseudolabels(sets: &[LandmarkSet3D]) -> Result<LandmarkSet3D> {
    let first = sets.first().ok_or(Error::Empty("pseudo-label sets"))?;
    let n = first.len();
    if let Some(bad) = sets.iter().find(|s| s.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "pseudo-label sets have {} and {} landmarks",
            n,
            bad.len()
        )));
    }
    let mut missing = Vec::new();
    let points = (0..n)
        .map(|i| {
            let (sum, count) = sets
                .iter()
                .filter(|s| s.valid[i])
                .fold((Vector3::zeros(), 0usize), |(acc, c), s| (acc + s.points[i], c + 1));
            if count == 0 {
                missing.push(i);
                Vector3::zeros()
            } else {
                sum / count as f64
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    Ok(LandmarkSet3D::new(points))
}
