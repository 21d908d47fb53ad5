use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;

/// Continuous 6D rotation encoding: the first two columns of a rotation matrix
/// before Gram–Schmidt orthonormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn from_columns(a: &Vector3<f64>, b: &Vector3<f64>) -> Self {
        Rot6D([a.x, a.y, a.z, b.x, b.y, b.z])
    }
}

struct GramSchmidt {
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    norm_a1: f64,
    norm_u2: f64,
    a2: Vector3<f64>,
}

fn gram_schmidt(r: &Rot6D) -> Result<GramSchmidt> {
    let a1 = r.first();
    let a2 = r.second();
    let norm_a1 = a1.norm();
    let norm_a2 = a2.norm();
    if !(norm_a1 > 1e-12 && norm_a2 > 1e-12) || !norm_a1.is_finite() || !norm_a2.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    let b1 = a1 / norm_a1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let norm_u2 = u2.norm();
    if norm_u2 <= 1e-9 * norm_a2 {
        return Err(Error::DegenerateRotation);
    }
    Ok(GramSchmidt {
        b1,
        b2: u2 / norm_u2,
        norm_a1,
        norm_u2,
        a2,
    })
}

/// Gram–Schmidt on the two encoded columns; the third column is their cross product.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Matrix3<f64>> {
    let gs = gram_schmidt(r)?;
    Ok(Matrix3::from_columns(&[gs.b1, gs.b2, gs.b1.cross(&gs.b2)]))
}

/// Pulls a gradient with respect to the decoded matrix back to the six raw inputs.
pub fn rot6d_vjp(r: &Rot6D, grad_matrix: &Matrix3<f64>) -> Result<[f64; 6]> {
    let gs = gram_schmidt(r)?;
    let (b1, b2) = (gs.b1, gs.b2);
    let g1: Vector3<f64> = grad_matrix.column(0).into();
    let g2: Vector3<f64> = grad_matrix.column(1).into();
    let g3: Vector3<f64> = grad_matrix.column(2).into();

    // b3 = b1 x b2
    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);

    // b2 = u2 / |u2|
    let gu2 = (gb2 - b2 * b2.dot(&gb2)) / gs.norm_u2;

    // u2 = a2 - (b1 . a2) b1
    let ga2 = gu2 - b1 * b1.dot(&gu2);
    gb1 -= gu2 * b1.dot(&gs.a2) + gs.a2 * b1.dot(&gu2);

    // b1 = a1 / |a1|
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / gs.norm_a1;

    Ok([ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
}

/// First two columns of a rotation matrix.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rot6D> {
    check_rotation(m)?;
    Ok(Rot6D::from_columns(
        &m.column(0).into(),
        &m.column(1).into(),
    ))
}

pub fn check_rotation(m: &Matrix3<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotRotation("non-finite entries".into()));
    }
    let orth = (m.transpose() * m - Matrix3::identity()).amax();
    if orth > ROTATION_TOL {
        return Err(Error::NotRotation(format!("|R^T R - I|_max = {orth:e}")));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::NotRotation(format!("det = {det}")));
    }
    Ok(())
}

pub fn rot_x(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Haar-uniform random rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    // Shoemake's method
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Serde adapter: 3x3 matrices as row-major 9-element arrays.
pub mod row_major {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [f64; 9] = std::array::from_fn(|i| m[(i / 3, i % 3)]);
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[f64; 9]>::deserialize(d)?;
        Ok(Matrix3::from_row_slice(&rows))
    }
}
