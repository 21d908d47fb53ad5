//! Loss library with analytic gradients: Laplacian log-likelihood on a
//! Cholesky-parameterized 2D covariance, geodesic rotation distance, MSE / L1, and the
//! combined multi-view and masked multi-frame objectives.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_rotation, rot6d_to_matrix, rot6d_vjp, row_major, Rot6D};
use crate::landmarks::LandmarkSet2D;
use crate::masking::VisibilityMask;

/// Raw per-landmark Cholesky parameters; `L = [[exp(d1_raw), 0], [off, exp(d2_raw)]]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CholeskyParams {
    pub d1_raw: f64,
    pub off: f64,
    pub d2_raw: f64,
}

impl CholeskyParams {
    pub fn new(d1_raw: f64, off: f64, d2_raw: f64) -> Self {
        Self { d1_raw, off, d2_raw }
    }

    /// Isotropic `Sigma = sigma^2 I`.
    pub fn isotropic(sigma: f64) -> Self {
        Self::new(sigma.ln(), 0.0, sigma.ln())
    }

    pub fn factor(&self) -> Matrix2<f64> {
        Matrix2::new(self.d1_raw.exp(), 0.0, self.off, self.d2_raw.exp())
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        let l = self.factor();
        l * l.transpose()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.d1_raw, self.off, self.d2_raw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LllEval {
    pub value: f64,
    pub grad_pred: Vector2<f64>,
    /// With respect to `(d1_raw, off, d2_raw)`.
    pub grad_params: [f64; 3],
}

/// Laplacian negative log-likelihood `1/2 ln det Sigma + sqrt(r^T Sigma^-1 r)` with
/// `r = pred - target`, additive constant dropped. At `r = 0` the square-root term
/// contributes a zero subgradient.
pub fn lll_2d(pred: &Vector2<f64>, target: &Vector2<f64>, params: &CholeskyParams) -> LllEval {
    let r = pred - target;
    let (e1, e2) = ((-params.d1_raw).exp(), (-params.d2_raw).exp());
    // y = L^-1 r
    let y1 = r.x * e1;
    let y2 = (r.y - params.off * y1) * e2;
    let s = y1.hypot(y2);
    let value = params.d1_raw + params.d2_raw + s;
    if s == 0.0 {
        return LllEval {
            value,
            grad_pred: Vector2::zeros(),
            grad_params: [1.0, 0.0, 1.0],
        };
    }
    let (gy1, gy2) = (y1 / s, y2 / s);
    let grad_pred = Vector2::new(gy1 * e1 - gy2 * params.off * e1 * e2, gy2 * e2);
    let grad_params = [
        1.0 - gy1 * y1 + gy2 * params.off * y1 * e2,
        -gy2 * y1 * e2,
        1.0 - gy2 * y2,
    ];
    LllEval {
        value,
        grad_pred,
        grad_params,
    }
}

/// Angle of `R1 R2^T` in radians, in `[0, pi]`.
pub fn geodesic_loss(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r1)?;
    check_rotation(r2)?;
    Ok(geodesic_unchecked(r1, r2))
}

fn geodesic_cos(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    // trace(R1 R2^T) is the Frobenius inner product
    (r1.dot(r2) - 1.0) / 2.0
}

fn geodesic_unchecked(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    geodesic_cos(r1, r2).clamp(-1.0, 1.0).acos()
}

/// d(geodesic) / d(R1); zero where the distance is not differentiable (0 or pi).
pub fn geodesic_grad(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> Matrix3<f64> {
    let c = geodesic_cos(r1, r2);
    let sin2 = 1.0 - c * c;
    if !(sin2 > 0.0) {
        return Matrix3::zeros();
    }
    r2 * (-0.5 / sin2.sqrt())
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("loss inputs"));
    }
    Ok(())
}

pub fn mse_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `a`.
pub fn mse_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a, b)?;
    let k = 2.0 / a.len() as f64;
    Ok(a.iter().zip(b).map(|(x, y)| k * (x - y)).collect())
}

pub fn l1_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Gradient of [`l1_loss`] with respect to `a` (zero at ties).
pub fn l1_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a, b)?;
    let k = 1.0 / a.len() as f64;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { k * (x - y).signum() })
        .collect())
}

fn flatten3(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Multi-frame objective `sum_n m_n L_lll(target_n, pred_n; Sigma_n)`; absent targets
/// count as masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFrameLoss {
    pub value: f64,
    pub grad_pred: Vec<Vector2<f64>>,
    pub grad_chol: Vec<[f64; 3]>,
}

pub fn multiframe_loss(
    pred: &[Vector2<f64>],
    chol: &[CholeskyParams],
    target: &LandmarkSet2D,
    mask: &VisibilityMask,
) -> Result<MultiFrameLoss> {
    let n = pred.len();
    if chol.len() != n || target.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "pred {n}, chol {}, target {}, mask {}",
            chol.len(),
            target.len(),
            mask.len()
        )));
    }
    let mut out = MultiFrameLoss {
        value: 0.0,
        grad_pred: vec![Vector2::zeros(); n],
        grad_chol: vec![[0.0; 3]; n],
    };
    for i in 0..n {
        if !mask.is_visible(i) {
            continue;
        }
        let Some(t) = target.get(i) else { continue };
        let e = lll_2d(&pred[i], t, &chol[i]);
        out.value += e.value;
        out.grad_pred[i] = e.grad_pred;
        out.grad_chol[i] = e.grad_params;
    }
    Ok(out)
}

/// Network-head style prediction entering the multi-view objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewPrediction {
    pub landmarks3d: Vec<Vector3<f64>>,
    pub delta_t: Vector3<f64>,
    pub rot6d: Rot6D,
    pub landmarks25d: Vec<Vector2<f64>>,
    pub chol: Vec<CholeskyParams>,
}

/// Supervision targets of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTarget {
    #[serde(with = "row_major")]
    pub rotation: Matrix3<f64>,
    pub delta_t: Vector3<f64>,
    pub landmarks3d: Vec<Vector3<f64>>,
    pub landmarks2d: LandmarkSet2D,
    pub mask: VisibilityMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub landmarks3d: f64,
    pub delta_t: f64,
    pub lll: f64,
    pub geodesic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            landmarks3d: 1.0,
            delta_t: 1.0,
            lll: 1.0,
            geodesic: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiViewTerms {
    pub mse_landmarks3d: f64,
    pub mse_delta_t: f64,
    pub lll_landmarks25d: f64,
    pub geodesic_rotation: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewGradient {
    pub landmarks3d: Vec<Vector3<f64>>,
    pub delta_t: Vector3<f64>,
    pub rot6d: [f64; 6],
    pub landmarks25d: Vec<Vector2<f64>>,
    pub chol: Vec<[f64; 3]>,
}

/// Weighted sum of 3D landmark MSE, offset MSE, masked 2.5D LLL and geodesic rotation
/// loss, with the per-term breakdown and the gradient.
pub fn multiview_loss(
    pred: &MultiViewPrediction,
    target: &PoseTarget,
    weights: &LossWeights,
) -> Result<(MultiViewTerms, MultiViewGradient)> {
    let n = pred.landmarks3d.len();
    if target.landmarks3d.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "predicted {n} 3D landmarks, target has {}",
            target.landmarks3d.len()
        )));
    }
    check_rotation(&target.rotation)?;
    let (p3, t3) = (flatten3(&pred.landmarks3d), flatten3(&target.landmarks3d));
    let mse_l3d = mse_loss(&p3, &t3)?;
    let g_l3d = mse_grad(&p3, &t3)?;
    let (pdt, tdt) = (pred.delta_t.as_slice(), target.delta_t.as_slice());
    let mse_dt = mse_loss(pdt, tdt)?;
    let g_dt = mse_grad(pdt, tdt)?;
    let mf = multiframe_loss(&pred.landmarks25d, &pred.chol, &target.landmarks2d, &target.mask)?;
    let r_hat = rot6d_to_matrix(&pred.rot6d)?;
    let geo = geodesic_unchecked(&r_hat, &target.rotation);
    let g_rot = rot6d_vjp(&pred.rot6d, &geodesic_grad(&r_hat, &target.rotation))?;

    let w = weights;
    let terms = MultiViewTerms {
        mse_landmarks3d: mse_l3d,
        mse_delta_t: mse_dt,
        lll_landmarks25d: mf.value,
        geodesic_rotation: geo,
        total: w.landmarks3d * mse_l3d + w.delta_t * mse_dt + w.lll * mf.value + w.geodesic * geo,
    };
    let grad = MultiViewGradient {
        landmarks3d: g_l3d
            .chunks(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]) * w.landmarks3d)
            .collect(),
        delta_t: Vector3::from_column_slice(&g_dt) * w.delta_t,
        rot6d: g_rot.map(|g| g * w.geodesic),
        landmarks25d: mf.grad_pred.iter().map(|g| g * w.lll).collect(),
        chol: mf.grad_chol.iter().map(|g| g.map(|x| x * w.lll)).collect(),
    };
    Ok((terms, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{matrix_to_rot6d, random_rotation, rot_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn lll_vanishes_at_identity_and_zero_residual() {
        let v = Vector2::new(3.0, -1.0);
        assert_eq!(lll_2d(&v, &v, &CholeskyParams::default()).value, 0.0);
    }

    #[test]
    fn lll_covariance_scaling_law() {
        let (pred, target) = (Vector2::new(1.3, -0.4), Vector2::new(0.2, 0.9));
        let p = CholeskyParams::new(0.3, -0.5, -0.2);
        let l = p.factor();
        let mahal = (pred - target).dot(&(p.covariance().try_inverse().unwrap() * (pred - target)));
        // 4 Sigma corresponds to 2 L
        let q = CholeskyParams::new(p.d1_raw + 2f64.ln(), 2.0 * p.off, p.d2_raw + 2f64.ln());
        assert!((q.factor() - 2.0 * l).norm() < 1e-12);
        let delta = lll_2d(&pred, &target, &q).value - lll_2d(&pred, &target, &p).value;
        let expected = 0.5 * 16f64.ln() - 0.5 * mahal.sqrt();
        assert!((delta - expected).abs() < 1e-12);
    }

    #[test]
    fn covariance_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let p = CholeskyParams::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-5.0..5.0),
            );
            let eig = p.covariance().symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0);
        }
    }

    #[test]
    fn geodesic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        assert!(geodesic_loss(&r, &r).unwrap() < 1e-7);
        assert_eq!(geodesic_loss(&Matrix3::identity(), &rot_z(PI)).unwrap(), PI);
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(geodesic_loss(&bad, &r).is_err());
    }

    #[test]
    fn mse_and_l1_scalars() {
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(l1_loss(&[0.0], &[2.0]).unwrap(), 2.0);
        let x = [1.0, -2.0, 3.5];
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(l1_loss(&x, &x).unwrap(), 0.0);
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
        assert_eq!(mse_grad(&[0.0, 1.0], &[2.0, 1.0]).unwrap(), vec![-2.0, 0.0]);
        assert_eq!(l1_grad(&[0.0, 1.0], &[2.0, 1.0]).unwrap(), vec![-0.5, 0.0]);
    }

    fn instance(rng: &mut ChaCha8Rng, n: usize) -> (MultiViewPrediction, PoseTarget) {
        let rot = random_rotation(rng);
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2)))
            .collect();
        let uv: Vec<Vector2<f64>> = (0..n)
            .map(|_| Vector2::from_fn(|_, _| rng.random_range(0.0..224.0)))
            .collect();
        let target = PoseTarget {
            rotation: rot,
            delta_t: Vector3::new(0.01, -0.02, 0.03),
            landmarks3d: pts.clone(),
            landmarks2d: LandmarkSet2D::from_dense(uv.clone()),
            mask: VisibilityMask::all(n, true),
        };
        let pred = MultiViewPrediction {
            landmarks3d: pts,
            delta_t: target.delta_t,
            rot6d: matrix_to_rot6d(&rot).unwrap(),
            landmarks25d: uv,
            chol: vec![CholeskyParams::default(); n],
        };
        (pred, target)
    }

    #[test]
    fn multiview_zero_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pred, target) = instance(&mut rng, 6);
        let (terms, _) = multiview_loss(&pred, &target, &LossWeights::default()).unwrap();
        assert!(terms.total.abs() < 1e-7, "{terms:?}");
        assert_eq!(terms.mse_landmarks3d, 0.0);
        assert_eq!(terms.lll_landmarks25d, 0.0);
    }

    #[test]
    fn rotation_perturbation_only_moves_geodesic_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut pred, target) = instance(&mut rng, 6);
        let (before, _) = multiview_loss(&pred, &target, &LossWeights::default()).unwrap();
        pred.rot6d = matrix_to_rot6d(&(rot_z(0.3) * target.rotation)).unwrap();
        let (after, _) = multiview_loss(&pred, &target, &LossWeights::default()).unwrap();
        assert_eq!(before.mse_landmarks3d, after.mse_landmarks3d);
        assert_eq!(before.mse_delta_t, after.mse_delta_t);
        assert_eq!(before.lll_landmarks25d, after.lll_landmarks25d);
        assert!((after.geodesic_rotation - 0.3).abs() < 1e-9);
    }

    #[test]
    fn multiframe_mask_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred: Vec<Vector2<f64>> = (0..4).map(|_| Vector2::new(rng.random(), rng.random())).collect();
        let chol = vec![CholeskyParams::new(0.1, 0.2, -0.1); 4];
        let target = LandmarkSet2D::from_dense(
            (0..4).map(|_| Vector2::new(rng.random(), rng.random())).collect(),
        );
        let none = VisibilityMask::all(4, false);
        assert_eq!(multiframe_loss(&pred, &chol, &target, &none).unwrap().value, 0.0);

        let mut one = VisibilityMask::all(4, false);
        one.0[2] = true;
        let single = lll_2d(&pred[2], target.get(2).unwrap(), &chol[2]).value;
        assert_eq!(multiframe_loss(&pred, &chol, &target, &one).unwrap().value, single);

        let mut moved = target.clone();
        moved.points[0] = Some(Vector2::new(1e3, -1e3));
        assert_eq!(
            multiframe_loss(&pred, &chol, &moved, &one).unwrap().value,
            single
        );
        assert!(multiframe_loss(&pred[..3], &chol, &target, &one).is_err());
    }
}
