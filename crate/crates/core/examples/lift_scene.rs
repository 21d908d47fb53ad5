//! Lifts a synthetic scene from the 41-view rig and from its five most frontal
//! views, with and without detector noise.

use flk::geometry::CameraSpaceConfig;
use flk::lifting::{lift_multiview, LiftOptions};
use flk::synthgen::{make_default_rig, make_scene, most_frontal_views, NoiseConfig, Scene};

fn mean_error(scene: &Scene) -> flk::Result<(f64, usize)> {
    let lift = lift_multiview(&scene.observations(), &LiftOptions::default())?;
    let set = &lift.landmarks3d;
    let errs: Vec<f64> = set
        .iter_valid()
        .map(|(i, p)| (p - scene.gt_landmarks3d.points[i]).norm())
        .collect();
    Ok((errs.iter().sum::<f64>() / errs.len() as f64, errs.len()))
}

/// Mean 3D error for `(noiseless 41 views, noisy 41 views, noisy 5 frontal views)`.
pub fn run_example() -> flk::Result<[(f64, usize); 3]> {
    let cfg = CameraSpaceConfig::default();
    let rig = make_default_rig();
    let clean = make_scene(3, &rig, &NoiseConfig::none(), &cfg)?;
    let noisy = make_scene(3, &rig, &NoiseConfig::gaussian(1.0), &cfg)?;
    let frontal = noisy.subset(&most_frontal_views(&rig, 5));
    Ok([mean_error(&clean)?, mean_error(&noisy)?, mean_error(&frontal)?])
}

fn main() -> flk::Result<()> {
    let [clean, noisy, frontal] = run_example()?;
    println!("noiseless, 41 views: {:.2e} over {} landmarks", clean.0, clean.1);
    println!("1 px noise, 41 views: {:.2e} over {} landmarks", noisy.0, noisy.1);
    println!("1 px noise, 5 frontal views: {:.2e} over {} landmarks", frontal.0, frontal.1);
    Ok(())
}
