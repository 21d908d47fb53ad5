//! Samples cameras from the augmented camera space and reports how often the
//! angle stage accepts.

use flk::geometry::{
    angle_acceptance_probability, camera_from_pose, project_set, sample_camera_with_stats,
    CameraSpaceConfig, SampleStats, SamplerOptions, SphereCameraPose,
};
use flk::synthgen::canonical_face_layout;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Summary {
    pub poses: Vec<SphereCameraPose>,
    pub stats: SampleStats,
    pub corner_probability: f64,
}

pub fn run_example() -> flk::Result<Summary> {
    let cfg = CameraSpaceConfig::default();
    let (face, _) = canonical_face_layout(98)?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut stats = SampleStats::default();
    let mut poses = vec![];
    for _ in 0..200 {
        let (pose, s) = sample_camera_with_stats(&mut rng, &cfg, &face, &SamplerOptions::default())?;
        stats += s;
        poses.push(pose);
    }
    let corner = angle_acceptance_probability(cfg.azimuth_bound, cfg.elevation_bound, cfg.roll_bound, &cfg);
    Ok(Summary {
        poses,
        stats,
        corner_probability: corner,
    })
}

fn main() -> flk::Result<()> {
    let s = run_example()?;
    let cfg = CameraSpaceConfig::default();
    println!("accepted {} cameras", s.poses.len());
    println!(
        "angle acceptance {:.3} ({} of {} draws), {} offset draws",
        s.stats.angle_accepts as f64 / s.stats.angle_draws as f64,
        s.stats.angle_accepts,
        s.stats.angle_draws,
        s.stats.offset_draws
    );
    println!("acceptance probability at the bound corner: {:.5}", s.corner_probability);
    let first = camera_from_pose(&s.poses[0], &cfg)?;
    let (face, _) = canonical_face_layout(98)?;
    let proj = project_set(&face, &first);
    let (lo, hi) = flk::geometry::bbox(&proj).expect("non-empty projection");
    println!("first pose {:?}\n  face bbox [{:.1}, {:.1}] - [{:.1}, {:.1}]", s.poses[0], lo.x, lo.y, hi.x, hi.y);
    Ok(())
}
