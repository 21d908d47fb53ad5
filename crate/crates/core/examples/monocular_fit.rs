//! Fits pose and per-landmark offsets to noisy detections of the template seen
//! from a sampled camera.

use flk::fitter::{decompose_camera, fit_monocular, FitOptions, FitResult};
use flk::geometry::{camera_from_pose, project_set, sample_camera, CameraSpaceConfig, SamplerOptions};
use flk::losses::geodesic_loss;
use flk::synthgen::{canonical_face_layout, NoiseConfig};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The fit with its rotation error (rad) and offset error (world units).
pub fn run_example() -> flk::Result<(FitResult, f64, f64)> {
    let cfg = CameraSpaceConfig::default();
    let (template, normals) = canonical_face_layout(98)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pose = sample_camera(&mut rng, &cfg, &template, &SamplerOptions::default())?;
    let truth = camera_from_pose(&pose, &cfg)?;
    let noise = NoiseConfig::laplacian(1.0);
    let mut detections = project_set(&template, &truth);
    for p in detections.points.iter_mut().flatten() {
        *p += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
    }
    let fit = fit_monocular(&detections, &template, &normals, &cfg, &FitOptions::default())?;
    let rot_err = geodesic_loss(&fit.camera.extrinsics.rotation, &truth.extrinsics.rotation)?;
    let (_, dt) = decompose_camera(&truth, &cfg)?;
    let dt_err = (fit.params.delta_t - dt).norm();
    Ok((fit, rot_err, dt_err))
}

fn main() -> flk::Result<()> {
    let (fit, rot_err, dt_err) = run_example()?;
    println!("iterations {}, cost {:.3} -> {:.3}", fit.iterations, fit.cost_trace[0], fit.final_cost);
    println!("rotation error {rot_err:.2e} rad, delta_t error {dt_err:.2e}");
    let max_offset = fit.params.offsets.iter().map(|o| o.norm()).fold(0.0, f64::max);
    println!("largest landmark offset {max_offset:.2e}");
    Ok(())
}
