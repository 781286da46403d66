//! Any-view rendering of triplane fields.
//!
//! World space is `[-1, 1]^3` with `+y` up. Each pixel casts one ray through
//! its center; points along it are decoded by the [`FieldHeads`] into a
//! density and a color and integrated front to back into color, opacity
//! (mask) and expected depth.

mod camera;
mod heads;
mod image;
mod integrate;
mod view;

pub use camera::{generate_rays, sample_points, Camera, Ray, SCENE_RADIUS};
pub use heads::{field_eval, FieldHeads, HeadsConfig};
pub use image::{psnr, to_byte, write_pgm, write_ppm};
pub use integrate::{integrate_ray, ray_weights, volume_integrate, RayResult};
pub use view::{render_rays, render_view, thread_count, RenderConfig, RenderOutput, THREADS_ENV};

#[cfg(test)]
pub(crate) use camera::{dot, norm};
