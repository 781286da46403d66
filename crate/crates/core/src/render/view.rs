//! Whole-image and ray-batch rendering.

use std::path::Path;
use std::rc::Rc;

use super::camera::{generate_rays, sample_points_into, Camera, Ray};
use super::heads::FieldHeads;
use super::image::{write_pgm, write_ppm};
use super::integrate::volume_integrate;
use crate::error::{Error, Result};
use crate::numerics::rng::{self, Rng};
use crate::numerics::{Bound, Graph, ParamStore, Tensor, Var};
use crate::triplane::Triplane;

/// Environment variable overriding the number of render threads.
pub const THREADS_ENV: &str = "TRIFIELD_THREADS";

/// Rays rendered per tape.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub samples: usize,
    pub stratified: bool,
    /// Seeds stratified sampling; ignored otherwise.
    pub seed: u64,
    /// Zero the density of samples outside `[-1, 1]^3`.
    pub clip_to_volume: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples: 64,
            stratified: false,
            seed: 0,
            clip_to_volume: true,
        }
    }
}

/// Rendered image, mask and depth, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub mask: Vec<f64>,
    pub depth: Vec<f64>,
    pub near: f64,
    pub far: f64,
}

impl RenderOutput {
    /// Fills from per-pixel `[r, g, b, mask, depth]` rows.
    pub fn from_rows(width: usize, height: usize, rows: &[f64], near: f64, far: f64) -> Result<Self> {
        if rows.len() != 5 * width * height {
            return Err(Error::shape("render_output", &[rows.len()], &[height, width, 5]));
        }
        let mut out = RenderOutput {
            width,
            height,
            rgb: Vec::with_capacity(3 * width * height),
            mask: Vec::with_capacity(width * height),
            depth: Vec::with_capacity(width * height),
            near,
            far,
        };
        for px in rows.chunks_exact(5) {
            out.rgb.extend_from_slice(&px[..3]);
            out.mask.push(px[3]);
            out.depth.push(px[4]);
        }
        Ok(out)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Depth mapped to `[0, 1]` between the camera bounds.
    pub fn normalized_depth(&self) -> Vec<f64> {
        self.depth.iter().map(|d| (d - self.near) / (self.far - self.near)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.rgb.iter().chain(&self.mask).chain(&self.depth).all(|v| v.is_finite())
    }

    /// Writes `{stem}.ppm`, `{stem}_mask.pgm` and `{stem}_depth.pgm`.
    pub fn write_images(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        write_ppm(&mut buf, self.width, self.height, &self.rgb)?;
        std::fs::write(dir.join(format!("{stem}.ppm")), &buf)?;
        buf.clear();
        write_pgm(&mut buf, self.width, self.height, &self.mask)?;
        std::fs::write(dir.join(format!("{stem}_mask.pgm")), &buf)?;
        buf.clear();
        write_pgm(&mut buf, self.width, self.height, &self.normalized_depth())?;
        std::fs::write(dir.join(format!("{stem}_depth.pgm")), &buf)?;
        Ok(())
    }
}

/// Renders `rays` on the tape, returning `[R, 5]` rows of red, green, blue,
/// mask and depth. Stratified sampling is used when `rng` is given.
#[allow(clippy::too_many_arguments)]
pub fn render_rays(
    g: &mut Graph,
    p: &Bound,
    heads: &FieldHeads,
    planes: Var,
    res: usize,
    rays: &[Ray],
    samples: usize,
    mut rng: Option<&mut Rng>,
    clip_to_volume: bool,
) -> Result<Var> {
    if samples == 0 || rays.is_empty() {
        return Err(Error::invalid("render_rays", "need at least one ray and one sample"));
    }
    let mut ts = Vec::with_capacity(rays.len() * samples);
    for ray in rays {
        sample_points_into(ray.near, ray.far, samples, rng.as_deref_mut(), &mut ts);
    }
    let mut pts = Vec::with_capacity(3 * ts.len());
    let mut inside = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let x = rays[i / samples].at(t);
        inside.push(if x.iter().all(|c| c.abs() <= 1.0) { 1.0 } else { 0.0 });
        pts.extend_from_slice(&x);
    }
    let points = g.constant(Tensor::raw(vec![ts.len(), 3], pts));
    let (mut sigma, rgb) = heads.forward(g, p, planes, res, points)?;
    if clip_to_volume && inside.iter().any(|&m| m == 0.0) {
        let m = g.constant(Tensor::raw(vec![ts.len(), 1], inside));
        sigma = g.mul(sigma, m)?;
    }
    let fars: Rc<[f64]> = rays.iter().map(|r| r.far).collect();
    volume_integrate(g, sigma, rgb, ts.into(), fars, samples)
}

/// Thread count from [`THREADS_ENV`], defaulting to the available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn render_chunk(
    tri: &Triplane,
    store: &ParamStore,
    heads: &FieldHeads,
    rays: &[Ray],
    cfg: &RenderConfig,
    chunk_index: usize,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let planes = g.constant(tri.to_tokens());
    let mut r = cfg.stratified.then(|| rng::seeded(cfg.seed ^ (chunk_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    let out = render_rays(&mut g, &bound, heads, planes, tri.res(), rays, cfg.samples, r.as_mut(), cfg.clip_to_volume)?;
    Ok(g.value(out).data().to_vec())
}

/// Renders the full image seen by `cam`.
///
/// Rays are processed in fixed chunks whose sampling seeds depend only on
/// the chunk index, so the result does not depend on the thread count.
pub fn render_view(
    tri: &Triplane,
    store: &ParamStore,
    heads: &FieldHeads,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    if tri.channels() != heads.channels {
        return Err(Error::shape("render_view", &[tri.channels()], &[heads.channels]));
    }
    let rays = generate_rays(cam)?;
    let chunks: Vec<&[Ray]> = rays.chunks(CHUNK).collect();
    let threads = thread_count().min(chunks.len()).max(1);
    let mut parts: Vec<Option<Result<Vec<f64>>>> = (0..chunks.len()).map(|_| None).collect();
    if threads == 1 {
        for (i, c) in chunks.iter().enumerate() {
            parts[i] = Some(render_chunk(tri, store, heads, c, cfg, i));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let chunks = &chunks;
                    s.spawn(move || {
                        (t..chunks.len())
                            .step_by(threads)
                            .map(|i| (i, render_chunk(tri, store, heads, chunks[i], cfg, i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("render thread panicked") {
                    parts[i] = Some(r);
                }
            }
        });
    }
    let mut rows = Vec::with_capacity(5 * rays.len());
    for p in parts {
        rows.extend(p.expect("every chunk rendered")?);
    }
    RenderOutput::from_rows(cam.width, cam.height, &rows, cam.near, cam.far)
}
