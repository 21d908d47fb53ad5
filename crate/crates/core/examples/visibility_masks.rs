//! Sweeps the camera yaw and counts the landmarks the normal-based mask keeps,
//! separately for the nose bridge.

use flk::geometry::{camera_from_pose, CameraSpaceConfig, SphereCameraPose};
use flk::masking::{visibility_mask, CAMERA_FORWARD};
use flk::synthgen::{default_normal_template, NOSE_BRIDGE_INDICES_98};

/// `(yaw, visible landmarks, visible nose-bridge landmarks)`.
pub fn run_example() -> flk::Result<Vec<(f64, usize, usize)>> {
    let cfg = CameraSpaceConfig::default();
    let tpl = default_normal_template();
    (-11..=11)
        .map(|k| {
            let yaw = k as f64 * 10.0;
            let cam = camera_from_pose(&SphereCameraPose::new(yaw, 0.0, 0.0), &cfg)?;
            let mask = visibility_mask(&cam.extrinsics.rotation, &tpl, &CAMERA_FORWARD)?;
            let bridge = NOSE_BRIDGE_INDICES_98.iter().filter(|&&i| mask.is_visible(i)).count();
            Ok((yaw, mask.visible_count(), bridge))
        })
        .collect()
}

fn main() -> flk::Result<()> {
    println!("{:>6} {:>8} {:>12}", "yaw", "visible", "nose bridge");
    for (yaw, visible, bridge) in run_example()? {
        println!("{yaw:>6.0} {visible:>8} {bridge:>12}");
    }
    Ok(())
}
