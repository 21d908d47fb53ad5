//! NME and NMLC over projected vertex arrays.
//!
//! For samples `m`, landmarks `n` and an assignment `K`,
//! `NME = 1/(M N) * sum_m sum_n z_m |pred_{m,n} - vert_{m,K_n}|` with
//! `z_m = (h_box * w_box)^(-1/2)`. NMLC minimizes this over `K`. The minimum
//! decomposes per landmark, so it is a global per-landmark argmin over the whole
//! sample set. Both metrics share [`column_cost`], so `NMLC <= NME` holds exactly
//! in floating point.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox, project, project_set, Camera};
use crate::landmarks::LandmarkSet3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub preds: Vec<Vector2<f64>>,
    pub verts: Vec<Vector2<f64>>,
    /// `[h_box, w_box]` in pixels.
    pub bbox: [f64; 2],
}

impl EvalSample {
    pub fn normalizer(&self) -> f64 {
        1.0 / (self.bbox[0] * self.bbox[1]).sqrt()
    }
}

/// Vertex index per landmark. Repeats are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }
}

fn validate(samples: &[EvalSample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or(Error::Empty("samples"))?;
    let (n, v) = (first.preds.len(), first.verts.len());
    if n == 0 {
        return Err(Error::Empty("preds"));
    }
    if v < n {
        return Err(Error::ShapeMismatch(format!("{v} vertices for {n} landmarks")));
    }
    for (m, s) in samples.iter().enumerate() {
        if s.preds.len() != n || s.verts.len() != v {
            return Err(Error::ShapeMismatch(format!(
                "sample {m} has {} preds and {} verts, expected {n} and {v}",
                s.preds.len(),
                s.verts.len()
            )));
        }
        if !(s.bbox[0] > 0.0 && s.bbox[1] > 0.0 && s.bbox.iter().all(|b| b.is_finite())) {
            return Err(Error::InvalidConfig(format!("sample {m} has bbox {:?}", s.bbox)));
        }
    }
    Ok((n, v))
}

/// `sum_m z_m |pred_{m,n} - vert_{m,k}|`.
pub fn column_cost(samples: &[EvalSample], n: usize, k: usize) -> f64 {
    samples
        .iter()
        .map(|s| s.normalizer() * (s.preds[n] - s.verts[k]).norm())
        .sum()
}

fn total(samples: &[EvalSample], k: &Assignment) -> f64 {
    let sum: f64 = k.0.iter().enumerate().map(|(n, &kn)| column_cost(samples, n, kn)).sum();
    sum / (samples.len() * k.0.len()) as f64
}

pub fn nme(samples: &[EvalSample], k: &Assignment) -> Result<f64> {
    let (n, v) = validate(samples)?;
    if k.0.len() != n {
        return Err(Error::ShapeMismatch(format!("assignment of {} for {n} landmarks", k.0.len())));
    }
    if let Some(&index) = k.0.iter().find(|&&i| i >= v) {
        return Err(Error::IndexOutOfRange { index, len: v });
    }
    Ok(total(samples, k))
}

/// Minimum NME over assignments with the minimizing assignment (lowest index on ties).
pub fn nmlc(samples: &[EvalSample]) -> Result<(f64, Assignment)> {
    let (n, v) = validate(samples)?;
    let k = Assignment(
        (0..n)
            .map(|i| {
                let mut best = (f64::INFINITY, 0);
                for j in 0..v {
                    let c = column_cost(samples, i, j);
                    if c < best.0 {
                        best = (c, j);
                    }
                }
                best.1
            })
            .collect(),
    );
    Ok((total(samples, &k), k))
}

/// Replaces each sample's predictions by `preds[landmark_map[j]]` for every entry `j`.
pub fn remap_predictions(samples: &[EvalSample], landmark_map: &[usize]) -> Result<Vec<EvalSample>> {
    let (n, _) = validate(samples)?;
    if let Some((entry, &index)) = landmark_map.iter().enumerate().find(|(_, &i)| i >= n) {
        return Err(Error::UnmappedIndex { entry, index, len: n });
    }
    Ok(samples
        .iter()
        .map(|s| EvalSample {
            preds: landmark_map.iter().map(|&i| s.preds[i]).collect(),
            verts: s.verts.clone(),
            bbox: s.bbox,
        })
        .collect())
}

/// NME after remapping landmarks: evaluated landmark `j` reads prediction
/// `landmark_map[j]`, scored against vertex `k_target[j]`.
pub fn cross_dataset_nme(samples: &[EvalSample], k_target: &Assignment, landmark_map: &[usize]) -> Result<f64> {
    if k_target.0.len() != landmark_map.len() {
        return Err(Error::ShapeMismatch(format!(
            "target definition has {} entries, map has {}",
            k_target.0.len(),
            landmark_map.len()
        )));
    }
    nme(&remap_predictions(samples, landmark_map)?, k_target)
}

/// One sample per camera: predictions are the projections of the landmarks valid in
/// `lifted` (in index order), vertices are the projections of every ground-truth
/// point, and the bbox is the tight box of the ground-truth projection.
///
/// Returns the samples and the index of each kept landmark, which is the natural
/// reference definition for these vertices.
pub fn samples_from_lift(
    cameras: &[Camera],
    gt: &LandmarkSet3D,
    lifted: &LandmarkSet3D,
) -> Result<(Vec<EvalSample>, Assignment)> {
    if gt.len() != lifted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ground-truth points, {} lifted",
            gt.len(),
            lifted.len()
        )));
    }
    let kept: Vec<usize> = lifted.iter_valid().map(|(i, _)| i).collect();
    if kept.is_empty() {
        return Err(Error::Empty("lifted landmarks"));
    }
    let samples = cameras
        .iter()
        .map(|cam| {
            let verts = gt
                .points
                .iter()
                .map(|p| project(p, cam))
                .collect::<Result<Vec<_>>>()?;
            let preds = kept
                .iter()
                .map(|&i| project(&lifted.points[i], cam))
                .collect::<Result<Vec<_>>>()?;
            let (lo, hi) = bbox(&project_set(gt, cam)).ok_or(Error::Empty("projection"))?;
            Ok(EvalSample {
                preds,
                verts,
                bbox: [hi.y - lo.y, hi.x - lo.x],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, Assignment(kept)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(preds: &[(f64, f64)], verts: &[(f64, f64)], bbox: [f64; 2]) -> EvalSample {
        let v = |p: &[(f64, f64)]| p.iter().map(|&(x, y)| Vector2::new(x, y)).collect();
        EvalSample {
            preds: v(preds),
            verts: v(verts),
            bbox,
        }
    }

    #[test]
    fn exact_preds_score_zero() {
        let s = sample(&[(1.0, 2.0), (3.0, 4.0)], &[(3.0, 4.0), (1.0, 2.0)], [50.0, 80.0]);
        assert_eq!(nme(std::slice::from_ref(&s), &Assignment(vec![1, 0])).unwrap(), 0.0);
        let (value, k) = nmlc(&[s]).unwrap();
        assert_eq!((value, k.0), (0.0, vec![1, 0]));
    }

    #[test]
    fn three_pixel_offset() {
        let s = sample(&[(3.0, 0.0)], &[(0.0, 0.0)], [100.0, 100.0]);
        assert_eq!(s.normalizer(), 0.01);
        assert!((nme(&[s], &Assignment(vec![0])).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn scale_invariance() {
        let a = sample(&[(3.0, 1.0), (7.0, 2.0)], &[(0.0, 0.0), (5.0, 5.0)], [40.0, 60.0]);
        let s = 3.5;
        let scaled = sample(&[(3.0 * s, s), (7.0 * s, 2.0 * s)], &[(0.0, 0.0), (5.0 * s, 5.0 * s)], [40.0 * s, 60.0 * s]);
        let k = Assignment::identity(2);
        assert!((nme(&[a], &k).unwrap() - nme(&[scaled], &k).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let s = sample(&[(0.0, 0.0)], &[(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)], [10.0, 10.0]);
        assert_eq!(nmlc(&[s]).unwrap().1 .0, vec![0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(nme(&[], &Assignment(vec![])), Err(Error::Empty(_))));
        let s = sample(&[(0.0, 0.0)], &[(1.0, 0.0)], [10.0, 10.0]);
        assert!(matches!(nme(std::slice::from_ref(&s), &Assignment(vec![3])), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(
            cross_dataset_nme(std::slice::from_ref(&s), &Assignment(vec![0]), &[4]),
            Err(Error::UnmappedIndex { .. })
        ));
        let bad = sample(&[(0.0, 0.0)], &[(1.0, 0.0)], [0.0, 10.0]);
        assert!(nme(&[bad], &Assignment(vec![0])).is_err());
    }

    #[test]
    fn identity_map_matches_nme() {
        let s = sample(&[(1.0, 1.0), (2.0, 5.0)], &[(0.0, 0.0), (2.0, 2.0), (4.0, 4.0)], [30.0, 20.0]);
        let k = Assignment(vec![2, 1]);
        let a = nme(std::slice::from_ref(&s), &k).unwrap();
        let b = cross_dataset_nme(&[s], &k, &[0, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subset_map_drops_unmapped() {
        let s = sample(&[(1.0, 0.0), (100.0, 0.0), (0.0, 2.0)], &[(0.0, 0.0); 3], [10.0, 10.0]);
        let v = cross_dataset_nme(&[s], &Assignment(vec![0, 0]), &[0, 2]).unwrap();
        assert!((v - (0.1 + 0.2) / 2.0).abs() < 1e-15);
    }
}
