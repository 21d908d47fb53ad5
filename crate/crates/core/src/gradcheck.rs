//! Central finite-difference checks of the analytic gradients.

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{camera_from_pose, matrix_to_rot6d, random_rotation, CameraSpaceConfig, Rot6D, SphereCameraPose};
use crate::landmarks::{LandmarkSet2D, LandmarkSet3D};
use crate::lifting::{reprojection_cost, MultiViewObservations, View};
use crate::losses::{
    l1_grad, l1_loss, lll_2d, mse_grad, mse_loss, multiframe_loss, multiview_loss, CholeskyParams,
    LossWeights, MultiViewPrediction, PoseTarget,
};
use crate::masking::VisibilityMask;

/// Central differences of a scalar function with step `h * max(1, |x_i|)`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            work[i] = x[i] + step;
            let up = f(&work);
            work[i] = x[i] - step;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b|_inf / max(|a|_inf, |b|_inf)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = inf(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = inf(&mut a.iter().copied()).max(inf(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error per loss over the draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub draws: usize,
    pub lll_2d: f64,
    pub multiframe_loss: f64,
    pub multiview_loss: f64,
    pub reprojection_jacobian: f64,
    pub mse_loss: f64,
    pub l1_loss: f64,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        [
            self.lll_2d,
            self.multiframe_loss,
            self.multiview_loss,
            self.reprojection_jacobian,
            self.mse_loss,
            self.l1_loss,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

const H: f64 = 1e-6;

fn uniform_vec2(rng: &mut impl Rng, r: f64) -> Vector2<f64> {
    Vector2::new(rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_chol(rng: &mut impl Rng) -> CholeskyParams {
    CholeskyParams::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Residual away from the non-smooth point of the LLL.
fn residual_away_from_zero(rng: &mut impl Rng) -> Vector2<f64> {
    loop {
        let r = uniform_vec2(rng, 3.0);
        if r.norm() > 0.1 {
            return r;
        }
    }
}

pub fn check_lll(rng: &mut impl Rng) -> f64 {
    let target = uniform_vec2(rng, 50.0);
    let pred = target + residual_away_from_zero(rng);
    let p = random_chol(rng);
    let e = lll_2d(&pred, &target, &p);
    let x = [pred.x, pred.y, p.d1_raw, p.off, p.d2_raw];
    let f = |x: &[f64]| lll_2d(&Vector2::new(x[0], x[1]), &target, &CholeskyParams::new(x[2], x[3], x[4])).value;
    let analytic = [e.grad_pred.x, e.grad_pred.y, e.grad_params[0], e.grad_params[1], e.grad_params[2]];
    relative_error(&analytic, &central_difference(f, &x, H))
}

pub fn check_multiframe(rng: &mut impl Rng) -> Result<f64> {
    let n = rng.random_range(3..=8);
    let target: Vec<Vector2<f64>> = (0..n).map(|_| uniform_vec2(rng, 50.0)).collect();
    let pred: Vec<Vector2<f64>> = target.iter().map(|t| t + residual_away_from_zero(rng)).collect();
    let chol: Vec<CholeskyParams> = (0..n).map(|_| random_chol(rng)).collect();
    let mut mask = VisibilityMask((0..n).map(|_| rng.random_bool(0.7)).collect());
    mask.0[0] = true;
    let target = LandmarkSet2D::from_dense(target);
    let unpack = |x: &[f64]| -> (Vec<Vector2<f64>>, Vec<CholeskyParams>) {
        (
            (0..n).map(|i| Vector2::new(x[2 * i], x[2 * i + 1])).collect(),
            (0..n).map(|i| CholeskyParams::from_array([x[2 * n + 3 * i], x[2 * n + 3 * i + 1], x[2 * n + 3 * i + 2]])).collect(),
        )
    };
    let x: Vec<f64> = pred
        .iter()
        .flat_map(|p| [p.x, p.y])
        .chain(chol.iter().flat_map(|c| c.as_array()))
        .collect();
    let e = multiframe_loss(&pred, &chol, &target, &mask)?;
    let analytic: Vec<f64> = e
        .grad_pred
        .iter()
        .flat_map(|g| [g.x, g.y])
        .chain(e.grad_chol.iter().flatten().copied())
        .collect();
    let f = |x: &[f64]| {
        let (p, c) = unpack(x);
        multiframe_loss(&p, &c, &target, &mask).map(|l| l.value).unwrap_or(f64::NAN)
    };
    Ok(relative_error(&analytic, &central_difference(f, &x, H)))
}

fn pack_prediction(p: &MultiViewPrediction) -> Vec<f64> {
    let mut x: Vec<f64> = p.landmarks3d.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    x.extend(p.delta_t.iter());
    x.extend(p.rot6d.0);
    x.extend(p.landmarks25d.iter().flat_map(|v| [v.x, v.y]));
    x.extend(p.chol.iter().flat_map(|c| c.as_array()));
    x
}

fn unpack_prediction(x: &[f64], n: usize) -> MultiViewPrediction {
    let mut it = x.iter().copied();
    let mut next = || it.next().expect("packed length");
    let landmarks3d = (0..n).map(|_| Vector3::new(next(), next(), next())).collect();
    let delta_t = Vector3::new(next(), next(), next());
    let rot6d = Rot6D([next(), next(), next(), next(), next(), next()]);
    let landmarks25d = (0..n).map(|_| Vector2::new(next(), next())).collect();
    let chol = (0..n).map(|_| CholeskyParams::new(next(), next(), next())).collect();
    MultiViewPrediction {
        landmarks3d,
        delta_t,
        rot6d,
        landmarks25d,
        chol,
    }
}

/// Random prediction and target with the rotation error in `[0.1, 3.0]` rad.
pub fn random_multiview_instance(rng: &mut impl Rng) -> Result<(MultiViewPrediction, PoseTarget)> {
    let n = rng.random_range(3..=8);
    let r_pred = random_rotation(rng);
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let r_target = r_pred * Rotation3::from_axis_angle(&axis, rng.random_range(0.1..3.0)).into_inner();
    // raw 6D columns that are not yet orthonormal
    let mut rot6d = matrix_to_rot6d(&r_pred)?;
    for (k, v) in rot6d.0.iter_mut().enumerate() {
        *v = *v * if k < 3 { 1.3 } else { 0.8 } + rng.random_range(-0.05..0.05);
    }
    let v3 = |rng: &mut dyn rand::RngCore| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let targets2d: Vec<Vector2<f64>> = (0..n).map(|_| uniform_vec2(rng, 50.0)).collect();
    let pred = MultiViewPrediction {
        landmarks3d: (0..n).map(|_| v3(rng)).collect(),
        delta_t: v3(rng),
        rot6d,
        landmarks25d: targets2d.iter().map(|t| t + residual_away_from_zero(rng)).collect(),
        chol: (0..n).map(|_| random_chol(rng)).collect(),
    };
    let mut mask = VisibilityMask((0..n).map(|_| rng.random_bool(0.7)).collect());
    mask.0[0] = true;
    let target = PoseTarget {
        rotation: crate::geometry::rot6d_to_matrix(&pred.rot6d)? * r_pred.transpose() * r_target,
        delta_t: v3(rng),
        landmarks3d: (0..n).map(|_| v3(rng)).collect(),
        landmarks2d: LandmarkSet2D::from_dense(targets2d),
        mask,
    };
    Ok((pred, target))
}

pub fn check_multiview(rng: &mut impl Rng) -> Result<f64> {
    let (pred, target) = random_multiview_instance(rng)?;
    let n = pred.landmarks3d.len();
    let weights = LossWeights::default();
    let (_, g) = multiview_loss(&pred, &target, &weights)?;
    let mut analytic: Vec<f64> = g.landmarks3d.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    analytic.extend(g.delta_t.iter());
    analytic.extend(g.rot6d);
    analytic.extend(g.landmarks25d.iter().flat_map(|v| [v.x, v.y]));
    analytic.extend(g.chol.iter().flatten());
    let f = |x: &[f64]| {
        multiview_loss(&unpack_prediction(x, n), &target, &weights)
            .map(|(t, _)| t.total)
            .unwrap_or(f64::NAN)
    };
    Ok(relative_error(&analytic, &central_difference(f, &pack_prediction(&pred), H)))
}

/// Jacobians of the stacked reprojection residuals for one landmark seen by 2-6 views.
pub fn check_reprojection(rng: &mut impl Rng) -> Result<f64> {
    let cfg = CameraSpaceConfig::default();
    let views: Vec<View> = (0..rng.random_range(2..=6))
        .map(|_| {
            let pose = SphereCameraPose::new(rng.random_range(-80.0..80.0), rng.random_range(-50.0..50.0), rng.random_range(-60.0..60.0))
                .with_delta_t(Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.3..0.3)));
            Ok(View {
                camera: camera_from_pose(&pose, &cfg)?,
                detections: LandmarkSet2D::from_dense(vec![uniform_vec2(rng, 100.0).add_scalar(112.0)]),
                mask: VisibilityMask::all(1, true),
            })
        })
        .collect::<Result<_>>()?;
    let obs = MultiViewObservations { views };
    let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let eval = reprojection_cost(&LandmarkSet3D::new(vec![p]), &obs)?;
    let mut worst = 0.0f64;
    for r in 0..eval.residuals.len() {
        let f = |x: &[f64]| {
            reprojection_cost(&LandmarkSet3D::new(vec![Vector3::new(x[0], x[1], x[2])]), &obs)
                .map(|e| e.residuals[r])
                .unwrap_or(f64::NAN)
        };
        let j = &eval.jacobians[r / 2];
        let analytic = [j[(r % 2, 0)], j[(r % 2, 1)], j[(r % 2, 2)]];
        worst = worst.max(relative_error(&analytic, &central_difference(f, p.as_slice(), H)));
    }
    Ok(worst)
}

fn check_elementwise(rng: &mut impl Rng, l1: bool) -> Result<f64> {
    let n = rng.random_range(1..=10);
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    // keep L1 differences away from its kink
    let a: Vec<f64> = b
        .iter()
        .map(|v| v + rng.random_range(0.1..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let (analytic, f): (Vec<f64>, Box<dyn Fn(&[f64]) -> f64>) = if l1 {
        (l1_grad(&a, &b)?, Box::new(|x: &[f64]| l1_loss(x, &b).unwrap_or(f64::NAN)))
    } else {
        (mse_grad(&a, &b)?, Box::new(|x: &[f64]| mse_loss(x, &b).unwrap_or(f64::NAN)))
    };
    Ok(relative_error(&analytic, &central_difference(f, &a, H)))
}

/// Runs `draws` random checks per loss.
pub fn run(seed: u64, draws: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        draws,
        lll_2d: 0.0,
        multiframe_loss: 0.0,
        multiview_loss: 0.0,
        reprojection_jacobian: 0.0,
        mse_loss: 0.0,
        l1_loss: 0.0,
    };
    for _ in 0..draws {
        report.lll_2d = report.lll_2d.max(check_lll(&mut rng));
        report.multiframe_loss = report.multiframe_loss.max(check_multiframe(&mut rng)?);
        report.multiview_loss = report.multiview_loss.max(check_multiview(&mut rng)?);
        report.reprojection_jacobian = report.reprojection_jacobian.max(check_reprojection(&mut rng)?);
        report.mse_loss = report.mse_loss.max(check_elementwise(&mut rng, false)?);
        report.l1_loss = report.l1_loss.max(check_elementwise(&mut rng, true)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_edge_cases() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 1.0]), 0.5);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn all_losses_pass_on_a_few_draws() {
        let report = run(1, 50).unwrap();
        assert!(report.max() < 1e-5, "{report:?}");
    }
}
