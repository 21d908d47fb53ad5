//! Camera model, perspective projection, rotation encodings and camera sampling.
//!
//! Conventions: right-handed world, camera looking down +z of its own frame, image
//! `v` growing with camera +y. Azimuth rotates about world y, elevation about the
//! camera's right axis and roll about the optical axis, composed as
//! `R = R_roll(gamma) * R_x(beta) * R_y(alpha)` (world to camera). Angles are degrees
//! at the API surface.

mod camera;
mod rotation;
mod sampling;

pub use camera::*;
pub use rotation::*;
pub use sampling::*;
