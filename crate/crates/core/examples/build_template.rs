//! Builds a landmark template as the mean of lifted pseudo-labels from several
//! scenes.

use flk::geometry::CameraSpaceConfig;
use flk::lifting::{lift_multiview, template_from_pseudolabels, LiftOptions};
use flk::synthgen::{canonical_face_layout, make_default_rig, make_scene, NoiseConfig};
use flk::LandmarkSet3D;

pub fn run_example() -> flk::Result<LandmarkSet3D> {
    let cfg = CameraSpaceConfig::default();
    let rig = make_default_rig();
    let opts = LiftOptions {
        excluded_indices: vec![],
        ..LiftOptions::default()
    };
    let lifted = (0..8)
        .map(|seed| {
            let scene = make_scene(seed, &rig, &NoiseConfig::gaussian(0.5), &cfg)?;
            Ok(lift_multiview(&scene.observations(), &opts)?.landmarks3d)
        })
        .collect::<flk::Result<Vec<_>>>()?;
    template_from_pseudolabels(&lifted)
}

fn main() -> flk::Result<()> {
    let template = run_example()?;
    let (canonical, _) = canonical_face_layout(98)?;
    println!("template of {} landmarks", template.valid_count());
    println!("rms distance to the canonical layout: {:.4}", template.rms_distance(&canonical)?);
    for i in [0, 16, 32, 54, 96] {
        let p = template.points[i];
        println!("  landmark {i:>2}: ({:+.3}, {:+.3}, {:+.3})", p.x, p.y, p.z);
    }
    Ok(())
}
