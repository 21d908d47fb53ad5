//! Scores 98-point predictions against a 68-point definition through the
//! 98-to-68 landmark map.

use flk::geometry::{bbox, camera_from_pose, project_set, CameraSpaceConfig};
use flk::metrics::{cross_dataset_nme, nme, Assignment, EvalSample};
use flk::synthgen::{canonical_face_layout, make_default_rig, map_98_to_68, most_frontal_views, NoiseConfig};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `(NME on 98 points, NME on the mapped 68 points)`.
pub fn run_example() -> flk::Result<(f64, f64)> {
    let cfg = CameraSpaceConfig::default();
    let (face, _) = canonical_face_layout(98)?;
    let rig = make_default_rig();
    let noise = NoiseConfig::gaussian(1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = most_frontal_views(&rig, 9)
        .into_iter()
        .map(|v| {
            let cam = camera_from_pose(&rig[v], &cfg)?;
            let exact = project_set(&face, &cam);
            let (lo, hi) = bbox(&exact).expect("face in front of the camera");
            let verts: Vec<Vector2<f64>> = exact.points.iter().flatten().copied().collect();
            let preds = verts
                .iter()
                .map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            Ok(EvalSample {
                preds,
                verts,
                bbox: [hi.y - lo.y, hi.x - lo.x],
            })
        })
        .collect::<flk::Result<Vec<_>>>()?;
    let map = map_98_to_68();
    let full = nme(&samples, &Assignment::identity(98))?;
    // the 68-point definition reads the same vertices the map selects
    let target = Assignment(map.clone());
    Ok((full, cross_dataset_nme(&samples, &target, &map)?))
}

fn main() -> flk::Result<()> {
    let (full, mapped) = run_example()?;
    println!("NME x100 on 98 landmarks: {:.4}", full * 100.0);
    println!("NME x100 on the 68-landmark subset: {:.4}", mapped * 100.0);
    Ok(())
}
