//! Spherical-harmonics Lambertian shading, a deterministic orthographic
//! rasterizer, and the evaluation metrics.

use crate::camera::{Camera, Pose, Vec2};
use crate::error::{Error, Result};
use crate::fit::LandmarkSet;
use crate::mesh::{vertex_normals, TriMesh, Vec3};
use crate::morph::regions::Region;
use crate::morph::{landmark_positions, MorphableModel};
use crate::refine::SegmentationMask;
use crate::texture::{to_u8, RasterImage};
use rayon::prelude::*;
use std::io::Write;

pub const SH_Y00: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: f64 = 1.092_548_430_592_079_2;
const SH_C20: f64 = 0.315_391_565_252_520_05;
const SH_C22: f64 = 0.546_274_215_296_039_6;

/// Default band count.
pub const DEFAULT_SH_BANDS: usize = 3;

fn sh9(n: &Vec3) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        SH_Y00,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C20 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C22 * (x * x - y * y),
    ]
}

/// Real spherical harmonics at unit `n` for bands `0..bands`, ordered
/// `(0,0), (1,-1), (1,0), (1,1), (2,-2), ...`.
pub fn sh_basis(n: &Vec3, bands: usize) -> Result<Vec<f64>> {
    if !(1..=3).contains(&bands) {
        return Err(Error::Validation(format!(
            "band count must be 1, 2 or 3, got {bands}"
        )));
    }
    let len = n.norm();
    if (len - 1.0).abs() > 1e-6 {
        return Err(Error::NonUnitNormal(len));
    }
    Ok(sh9(n)[..bands * bands].to_vec())
}

/// Per-channel SH coefficients `delta_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SHLighting {
    bands: usize,
    coefficients: Vec<Vec3>,
}

impl SHLighting {
    /// `coefficients[k]` holds the RGB weights of basis function `k`.
    pub fn new(bands: usize, coefficients: Vec<Vec3>) -> Result<Self> {
        if !(1..=3).contains(&bands) {
            return Err(Error::Validation(format!(
                "band count must be 1, 2 or 3, got {bands}"
            )));
        }
        if coefficients.len() != bands * bands {
            return Err(Error::LengthMismatch {
                expected: bands * bands,
                got: coefficients.len(),
            });
        }
        Ok(Self {
            bands,
            coefficients,
        })
    }

    /// One coefficient set shared by all channels.
    pub fn monochrome(bands: usize, coefficients: &[f64]) -> Result<Self> {
        Self::new(
            bands,
            coefficients.iter().map(|&c| Vec3::repeat(c)).collect(),
        )
    }

    /// Constant irradiance: `shade` returns `level * albedo` for any normal.
    pub fn ambient(level: f64) -> Self {
        Self {
            bands: 1,
            coefficients: vec![Vec3::repeat(level / SH_Y00)],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn coefficients(&self) -> &[Vec3] {
        &self.coefficients
    }

    /// Per-channel irradiance `sum_k delta_k phi_k(n)`; `n` must be unit length.
    pub fn irradiance(&self, n: &Vec3) -> Vec3 {
        let phi = sh9(n);
        self.coefficients
            .iter()
            .zip(phi)
            .fold(Vec3::zeros(), |acc, (d, p)| acc + d * p)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            bands: self.bands,
            coefficients: self.coefficients.iter().map(|c| c * k).collect(),
        }
    }
}

/// `albedo * irradiance(n)` per channel, before clamping.
pub fn shade_unclamped(albedo: &Vec3, n: &Vec3, light: &SHLighting) -> Vec3 {
    albedo.component_mul(&light.irradiance(n))
}

/// Shaded color clamped to [0, 1].
pub fn shade(albedo: &Vec3, n: &Vec3, light: &SHLighting) -> Result<Vec3> {
    let len = n.norm();
    if (len - 1.0).abs() > 1e-6 {
        return Err(Error::NonUnitNormal(len));
    }
    Ok(shade_unclamped(albedo, n, light).map(|c| c.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: RasterImage,
    pub coverage: Vec<bool>,
    /// Distance from the camera center along the view axis; infinite where
    /// nothing was drawn.
    pub depth: Vec<f64>,
}

impl RenderOutput {
    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.coverage[y as usize * self.color.width() as usize + x as usize]
    }
}

/// Visible surface sample of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Fragment {
    pub face: usize,
    pub bary: [f64; 3],
    pub depth: f64,
}

struct ScreenFace {
    /// Camera-plane corners.
    xy: [Vec2; 3],
    z: [f64; 3],
    inv_area: f64,
    /// Pixel bounding box, inclusive.
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Rows per parallel work item; fixed so output does not depend on the
/// thread count.
const BAND_ROWS: usize = 16;

/// Thread pool honoring `FACEKIT_THREADS`.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: std::sync::OnceLock<rayon::ThreadPool> = std::sync::OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var("FACEKIT_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
    })
}

/// Z-buffered visibility pass: for each pixel the nearest front-facing face
/// whose closed triangle contains the pixel center. Equal depths keep the
/// lower face index.
pub(crate) fn fragments(mesh: &TriMesh, pose: &Pose, cam: &Camera) -> Vec<Option<Fragment>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let cverts: Vec<Vec3> = mesh.vertices().iter().map(|p| pose.to_camera(p)).collect();
    let faces: Vec<Option<ScreenFace>> = mesh
        .faces()
        .iter()
        .map(|f| {
            let c = f.map(|i| cverts[i]);
            let xy = c.map(|p| Vec2::new(p.x, p.y));
            let area = cross2(xy[1] - xy[0], xy[2] - xy[0]);
            // Back faces and edge-on faces are culled.
            if !(area > 0.0) {
                return None;
            }
            let px = c.map(|p| cam.pix(p.x, p.y));
            let lo = |k: usize| px.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = |k: usize| px.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            let first = |v: f64| (v - 0.5).ceil().max(0.0);
            let last = |v: f64, n: usize| (v - 0.5).floor().min(n as f64 - 1.0);
            let (fx0, fx1) = (first(lo(0)), last(hi(0), w));
            let (fy0, fy1) = (first(lo(1)), last(hi(1), h));
            if fx0 > fx1 || fy0 > fy1 {
                return None;
            }
            Some(ScreenFace {
                xy,
                z: c.map(|p| p.z),
                inv_area: 1.0 / area,
                x0: fx0 as u32,
                x1: fx1 as u32,
                y0: fy0 as u32,
                y1: fy1 as u32,
            })
        })
        .collect();

    let mut out: Vec<Option<Fragment>> = vec![None; w * h];
    let rows = BAND_ROWS;
    thread_pool().install(|| {
        out.par_chunks_mut(rows * w)
            .enumerate()
            .for_each(|(band, chunk)| {
                let y_start = (band * rows) as u32;
                let y_end = y_start + (chunk.len() / w) as u32;
                for (j, f) in faces.iter().enumerate() {
                    let Some(f) = f else { continue };
                    if f.y1 < y_start || f.y0 >= y_end {
                        continue;
                    }
                    for py in f.y0.max(y_start)..=f.y1.min(y_end - 1) {
                        for px in f.x0..=f.x1 {
                            let p = cam.unpix(&Vec2::new(px as f64 + 0.5, py as f64 + 0.5));
                            let b0 = cross2(f.xy[1] - p, f.xy[2] - p) * f.inv_area;
                            let b1 = cross2(f.xy[2] - p, f.xy[0] - p) * f.inv_area;
                            let b2 = cross2(f.xy[0] - p, f.xy[1] - p) * f.inv_area;
                            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                                continue;
                            }
                            let z = b0 * f.z[0] + b1 * f.z[1] + b2 * f.z[2];
                            let depth = cam.d_cam - z;
                            let slot = &mut chunk[(py - y_start) as usize * w + px as usize];
                            if slot.is_none_or_farther(depth) {
                                *slot = Some(Fragment {
                                    face: j,
                                    bary: [b0, b1, b2],
                                    depth,
                                });
                            }
                        }
                    }
                }
            });
    });
    out
}

trait SlotExt {
    fn is_none_or_farther(&self, depth: f64) -> bool;
}

impl SlotExt for Option<Fragment> {
    fn is_none_or_farther(&self, depth: f64) -> bool {
        match self {
            None => true,
            Some(f) => depth < f.depth,
        }
    }
}

/// Renders `mesh` with per-pixel interpolated normals and albedo (texture if
/// given, else vertex colors, else white). Uncovered pixels are black.
pub fn rasterize(
    mesh: &TriMesh,
    pose: &Pose,
    cam: &Camera,
    light: &SHLighting,
    texture: Option<&RasterImage>,
) -> Result<RenderOutput> {
    if texture.is_some() && mesh.tex_coords().is_none() {
        return Err(Error::MissingTexCoords);
    }
    let frags = fragments(mesh, pose, cam);
    let normals = vertex_normals(mesh).normals;
    let rot = pose.rotation();
    let cam_normals: Vec<Vec3> = normals.iter().map(|n| rot * n).collect();
    let faces = mesh.faces();
    let white = Vec3::repeat(1.0);
    let pixels: Vec<[u8; 3]> = thread_pool().install(|| {
        frags
            .par_iter()
            .map(|frag| {
                let Some(f) = frag else { return [0, 0, 0] };
                let idx = faces[f.face];
                let b = f.bary;
                let n = (0..3).fold(Vec3::zeros(), |acc, k| acc + cam_normals[idx[k]] * b[k]);
                let n = n.try_normalize(1e-300).unwrap_or(Vec3::z());
                let albedo = match (texture, mesh.tex_coords(), mesh.colors()) {
                    (Some(tex), Some(uv), _) => {
                        let u = (0..3).map(|k| uv[idx[k]][0] * b[k]).sum();
                        let v = (0..3).map(|k| uv[idx[k]][1] * b[k]).sum();
                        tex.sample(u, v)
                    }
                    (None, _, Some(colors)) => {
                        (0..3).fold(Vec3::zeros(), |acc, k| acc + colors[idx[k]] * b[k])
                    }
                    _ => white,
                };
                let c = shade_unclamped(&albedo, &n, light);
                [to_u8(c.x), to_u8(c.y), to_u8(c.z)]
            })
            .collect()
    });
    Ok(RenderOutput {
        color: RasterImage::new(cam.width, cam.height, pixels)?,
        coverage: frags.iter().map(Option::is_some).collect(),
        depth: frags
            .iter()
            .map(|f| f.map_or(f64::INFINITY, |f| f.depth))
            .collect(),
    })
}

/// Per-pixel color distance used by [`photometric_error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhotometricNorm {
    /// Mean absolute channel difference.
    #[default]
    Manhattan,
    /// Squared Euclidean distance of the RGB difference.
    SquaredL2,
}

fn pixel_distance(a: [u8; 3], b: [u8; 3], norm: PhotometricNorm) -> f64 {
    let d = [0, 1, 2].map(|c| (a[c] as f64 - b[c] as f64) / 255.0);
    match norm {
        PhotometricNorm::Manhattan => d.iter().map(|x| x.abs()).sum::<f64>() / 3.0,
        PhotometricNorm::SquaredL2 => d.iter().map(|x| x * x).sum(),
    }
}

/// Mean per-pixel distance between two images over a pixel subset.
pub fn image_distance(
    a: &RasterImage,
    b: &RasterImage,
    region: &[bool],
    norm: PhotometricNorm,
) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            what: "image size",
            expected: a.pixels().len(),
            got: b.pixels().len(),
        });
    }
    if region.len() != a.pixels().len() {
        return Err(Error::LengthMismatch {
            expected: a.pixels().len(),
            got: region.len(),
        });
    }
    let (sum, n) = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(region)
        .filter(|(_, &r)| r)
        .fold((0.0, 0usize), |(s, n), ((&p, &q), _)| {
            (s + pixel_distance(p, q, norm), n + 1)
        });
    if n == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(sum / n as f64)
}

/// Mean color distance over pixels both covered by the render and labeled
/// face in the mask.
pub fn photometric_error(
    render: &RenderOutput,
    input: &RasterImage,
    mask: &SegmentationMask,
    norm: PhotometricNorm,
) -> Result<f64> {
    if mask.width() != input.width() || mask.height() != input.height() {
        return Err(Error::DimensionMismatch {
            what: "mask size",
            expected: input.pixels().len(),
            got: mask.labels().len(),
        });
    }
    if render.color.width() != input.width() || render.color.height() != input.height() {
        return Err(Error::DimensionMismatch {
            what: "render size",
            expected: input.pixels().len(),
            got: render.color.pixels().len(),
        });
    }
    let region: Vec<bool> = render
        .coverage
        .iter()
        .zip(mask.labels())
        .map(|(&c, &l)| c && l != crate::refine::class::BACKGROUND)
        .collect();
    image_distance(&render.color, input, &region, norm)
}

/// Un-normalized landmark loss split by facial region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub regions: Vec<(Region, f64)>,
    pub total: f64,
}

impl RegionReport {
    pub fn get(&self, region: Region) -> f64 {
        self.regions
            .iter()
            .find(|r| r.0 == region)
            .map_or(0.0, |r| r.1)
    }

    /// One `name value` line per region, then `total`.
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (r, v) in &self.regions {
            writeln!(w, "{} {v}", r.name())?;
        }
        writeln!(w, "total {}", self.total)
    }
}

/// `sum w_n |q_n - project(p_n)|^2` per region of the 68-point convention.
pub fn landmark_error_report(
    shape: &TriMesh,
    model: &MorphableModel,
    pose: &Pose,
    cam: &Camera,
    lm: &LandmarkSet,
) -> Result<RegionReport> {
    let pts = landmark_positions(shape, model)?;
    if pts.len() != lm.len() {
        return Err(Error::LengthMismatch {
            expected: pts.len(),
            got: lm.len(),
        });
    }
    if pts.len() != crate::morph::DEFAULT_LANDMARK_COUNT {
        return Err(Error::Validation(
            "region report needs the 68-landmark convention".into(),
        ));
    }
    let mut regions: Vec<(Region, f64)> = Region::ALL.iter().map(|&r| (r, 0.0)).collect();
    for (n, (p, (q, w))) in pts
        .iter()
        .zip(lm.points().iter().zip(lm.weights()))
        .enumerate()
    {
        let e = w * (q - crate::camera::project(p, pose, cam)).norm_squared();
        let r = Region::of_landmark(n).expect("index below 68");
        regions
            .iter_mut()
            .find(|x| x.0 == r)
            .expect("all regions listed")
            .1 += e;
    }
    let total = regions.iter().map(|r| r.1).sum();
    Ok(RegionReport { regions, total })
}

/// Writes lighting as a `bands N` line followed by one `r g b` line per
/// coefficient.
pub fn write_lighting<W: Write>(light: &SHLighting, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "bands {}", light.bands)?;
    for c in &light.coefficients {
        writeln!(w, "{} {} {}", c.x, c.y, c.z)?;
    }
    Ok(())
}

pub fn read_lighting<R: std::io::BufRead>(reader: R) -> Result<SHLighting> {
    let mut bands = None;
    let mut coefficients = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        if bands.is_none() {
            let n = body
                .strip_prefix("bands")
                .and_then(|t| t.trim().parse::<usize>().ok())
                .ok_or_else(|| bad("expected `bands N`"))?;
            bands = Some(n);
            continue;
        }
        let v: Vec<f64> = body
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad("invalid number")))
            .collect::<Result<_>>()?;
        match v.as_slice() {
            [r, g, b] => coefficients.push(Vec3::new(*r, *g, *b)),
            _ => return Err(bad("expected `r g b`")),
        }
    }
    SHLighting::new(
        bands.ok_or_else(|| Error::Format("empty lighting file".into()))?,
        coefficients,
    )
}

pub fn save_lighting(light: &SHLighting, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_lighting(light, &mut f).map_err(|e| Error::io(path, e))
}

pub fn load_lighting(path: impl AsRef<std::path::Path>) -> Result<SHLighting> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_lighting(std::io::BufReader::new(f))
}
