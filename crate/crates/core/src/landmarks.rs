//! Landmark containers shared by every module.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N landmarks in world units with a validity flag per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet3D {
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl LandmarkSet3D {
    /// All points valid.
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let valid = vec![true; points.len()];
        Self { points, valid }
    }

    pub fn with_validity(points: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != valid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} validity flags",
                points.len(),
                valid.len()
            )));
        }
        Ok(Self { points, valid })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Iterator over `(index, point)` of the valid points.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.points
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.valid[*i])
    }

    pub fn transformed(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            valid: self.valid.clone(),
        }
    }

    /// Root-mean-square distance over landmarks valid in both sets.
    pub fn rms_distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} vs {} landmarks",
                self.len(),
                other.len()
            )));
        }
        let (sum, count) = self
            .iter_valid()
            .filter(|(i, _)| other.valid[*i])
            .fold((0.0, 0usize), |(s, c), (i, p)| {
                (s + (p - other.points[i]).norm_squared(), c + 1)
            });
        if count == 0 {
            return Err(Error::Empty("no landmark valid in both sets"));
        }
        Ok((sum / count as f64).sqrt())
    }
}

/// N landmarks in pixels. Absent or invalid points are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet2D {
    pub points: Vec<Option<Vector2<f64>>>,
}

impl LandmarkSet2D {
    pub fn new(points: Vec<Option<Vector2<f64>>>) -> Self {
        Self { points }
    }

    pub fn from_dense(points: Vec<Vector2<f64>>) -> Self {
        Self {
            points: points.into_iter().map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, n: usize) -> Option<&Vector2<f64>> {
        self.points.get(n).and_then(|p| p.as_ref())
    }

    pub fn is_valid(&self, n: usize) -> bool {
        self.get(n).is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, &Vector2<f64>)> {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
    }
}
