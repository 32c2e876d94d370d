//! Projective texture coordinates, background diffusion and textured mesh
//! export.

use crate::camera::{project, Camera, Pose};
use crate::error::{Error, Result};
use crate::mesh::{write_obj, TriMesh, Vec3};
use crate::refine::SegmentationMask;
use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::LengthMismatch {
                expected: width as usize * height as usize,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: [u8; 3]) {
        self.pixels[y as usize * self.width as usize + x as usize] = c;
    }

    /// Bilinear lookup at texture coordinates, `v` up, pixel centers at
    /// half-integers. Returns channels in [0, 1].
    pub fn sample(&self, u: f64, v: f64) -> Vec3 {
        let x = (u * self.width as f64 - 0.5).clamp(0.0, self.width as f64 - 1.0);
        let y = ((1.0 - v) * self.height as f64 - 0.5).clamp(0.0, self.height as f64 - 1.0);
        let (x0, y0) = (x.floor() as u32, y.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let c = |x, y| {
            let p = self.get(x, y);
            Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)
        };
        let top = c(x0, y0) * (1.0 - fx) + c(x1, y0) * fx;
        let bottom = c(x0, y1) * (1.0 - fx) + c(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy) / 255.0
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let img = image::open(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(w, h, pixels)
    }

    /// Format from the extension: PNG, or binary PPM for `.ppm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width, self.height, raw)
            .expect("pixel buffer has width*height entries");
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Converts a channel in [0, 1] to 8 bits, rounding to nearest.
pub fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexturedMesh {
    pub mesh: TriMesh,
    /// Number of coordinates clamped into [0, 1].
    pub clamped: usize,
}

/// Texture coordinates from the projection: `u = x/width`, `v = 1 - y/height`.
pub fn compute_tex_coords(mesh: &TriMesh, pose: &Pose, cam: &Camera) -> TexturedMesh {
    let mut clamped = 0;
    let uv = mesh
        .vertices()
        .iter()
        .map(|p| {
            let q = project(p, pose, cam);
            let raw = [q.x / cam.width as f64, 1.0 - q.y / cam.height as f64];
            raw.map(|t| {
                let c = t.clamp(0.0, 1.0);
                if c != t {
                    clamped += 1;
                }
                c
            })
        })
        .collect();
    let mut out = mesh.clone();
    out.set_tex_coords(Some(uv))
        .expect("one coordinate per vertex");
    TexturedMesh { mesh: out, clamped }
}

/// Replaces background pixels by breadth-first diffusion of face colors.
///
/// Sources are the background pixels 4-adjacent to the face, in row-major
/// order. Each dequeued pixel takes the rounded mean of its already-colored
/// 4-neighbors and enqueues its unvisited background neighbors in the order
/// up, left, right, down. Background pixels not connected to the face keep
/// their color.
pub fn diffuse_background(img: &RasterImage, mask: &SegmentationMask) -> Result<RasterImage> {
    let (w, h) = (img.width as usize, img.height as usize);
    if mask.width() as usize != w || mask.height() as usize != h {
        return Err(Error::DimensionMismatch {
            what: "mask size",
            expected: w * h,
            got: mask.width() as usize * mask.height() as usize,
        });
    }
    let face: Vec<bool> = mask
        .labels()
        .iter()
        .map(|&l| l != crate::refine::class::BACKGROUND)
        .collect();
    if !face.iter().any(|&f| f) {
        return Err(Error::EmptyFaceMask);
    }
    let neighbors = |i: usize| {
        let (x, y) = (i % w, i / w);
        [
            (y > 0).then(|| i - w),
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y + 1 < h).then(|| i + w),
        ]
        .into_iter()
        .flatten()
    };

    let mut out = img.pixels.clone();
    let mut colored = face.clone();
    let mut queued = face.clone();
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if !face[i] && neighbors(i).any(|j| face[j]) {
            queued[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let mut sum = [0u32; 3];
        let mut n = 0u32;
        for j in neighbors(i) {
            if colored[j] {
                for c in 0..3 {
                    sum[c] += out[j][c] as u32;
                }
                n += 1;
            }
        }
        out[i] = sum.map(|s| ((s + n / 2) / n) as u8);
        colored[i] = true;
        for j in neighbors(i) {
            if !queued[j] {
                queued[j] = true;
                queue.push_back(j);
            }
        }
    }
    RasterImage::new(img.width, img.height, out)
}

/// Paths written by [`export_textured_obj`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TexturedExport {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub texture: PathBuf,
}

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png` into `dir`. The mesh
/// must carry texture coordinates.
pub fn export_textured_obj(
    mesh: &TriMesh,
    texture: &RasterImage,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<TexturedExport> {
    if mesh.tex_coords().is_none() {
        return Err(Error::MissingTexCoords);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = TexturedExport {
        obj: dir.join(format!("{stem}.obj")),
        mtl: dir.join(format!("{stem}.mtl")),
        texture: dir.join(format!("{stem}.png")),
    };
    texture.save(&paths.texture)?;
    let mtl_name = format!("{stem}.mtl");
    let png_name = format!("{stem}.png");
    let write_mtl = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&paths.mtl)?);
        writeln!(w, "newmtl face")?;
        writeln!(w, "Ka 1 1 1")?;
        writeln!(w, "Kd 1 1 1")?;
        writeln!(w, "Ks 0 0 0")?;
        writeln!(w, "illum 1")?;
        writeln!(w, "map_Kd {png_name}")?;
        w.flush()
    };
    write_mtl().map_err(|e| Error::io(&paths.mtl, e))?;
    let write_mesh = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&paths.obj)?);
        write_obj(mesh, &mut w, Some((&mtl_name, "face")))?;
        w.flush()
    };
    write_mesh().map_err(|e| Error::io(&paths.obj, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::class;
    use proptest::prelude::*;

    fn mask_from(w: u32, h: u32, f: impl Fn(u32, u32) -> bool) -> SegmentationMask {
        let mut m = SegmentationMask::filled(w, h, class::BACKGROUND);
        for y in 0..h {
            for x in 0..w {
                if f(x, y) {
                    m.set(x, y, class::SKIN);
                }
            }
        }
        m
    }

    fn noise(w: u32, h: u32, seed: u64) -> RasterImage {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let px = (0..w * h)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let b = (s >> 33).to_le_bytes();
                [b[0], b[1], b[2]]
            })
            .collect();
        RasterImage::new(w, h, px).unwrap()
    }

    #[test]
    fn tex_coord_conventions() {
        let cam = Camera::new(200, 100, 50.0, 10.0).unwrap();
        let m = TriMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(-2.0, 1.0, 0.0),
                Vec3::new(5.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let t = compute_tex_coords(&m, &Pose::identity(), &cam);
        let uv = t.mesh.tex_coords().unwrap();
        assert_eq!(uv[0], [0.5, 0.5]);
        // (-2, 1) projects to the top-left pixel origin.
        assert_eq!(uv[1], [0.0, 1.0]);
        assert_eq!(uv[2][0], 1.0);
        assert_eq!(t.clamped, 1);
    }

    #[test]
    fn all_face_is_unchanged() {
        let img = noise(8, 6, 1);
        let mask = mask_from(8, 6, |_, _| true);
        assert_eq!(diffuse_background(&img, &mask).unwrap(), img);
    }

    #[test]
    fn single_source_color_fills_everything() {
        let mut img = noise(9, 7, 2);
        img.set(4, 3, [10, 200, 30]);
        let mask = mask_from(9, 7, |x, y| (x, y) == (4, 3));
        let out = diffuse_background(&img, &mask).unwrap();
        assert!(out.pixels().iter().all(|&p| p == [10, 200, 30]));
    }

    #[test]
    fn half_face_uniform_color() {
        let mut img = noise(16, 16, 3);
        let mask = mask_from(16, 16, |x, _| x < 8);
        for y in 0..16 {
            for x in 0..8 {
                img.set(x, y, [90, 60, 40]);
            }
        }
        let out = diffuse_background(&img, &mask).unwrap();
        assert!(out.pixels().iter().all(|&p| p == [90, 60, 40]));
    }

    #[test]
    fn unreachable_and_empty() {
        let img = noise(4, 4, 4);
        let mask = mask_from(4, 4, |_, _| false);
        assert!(matches!(
            diffuse_background(&img, &mask),
            Err(Error::EmptyFaceMask)
        ));
    }

    /// Straightforward re-implementation used as an oracle.
    fn oracle(img: &RasterImage, mask: &SegmentationMask) -> RasterImage {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let mut out = img.clone();
        let face = |x: i64, y: i64| mask.is_face(x as u32, y as u32);
        let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h;
        let dirs = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        let mut state = vec![0u8; (w * h) as usize]; // 0 new, 1 queued, 2 colored
        let mut q = VecDeque::new();
        for y in 0..h {
            for x in 0..w {
                if face(x, y) {
                    state[(y * w + x) as usize] = 2;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                if !face(x, y)
                    && dirs
                        .iter()
                        .any(|(dx, dy)| inside(x + dx, y + dy) && face(x + dx, y + dy))
                {
                    state[(y * w + x) as usize] = 1;
                    q.push_back((x, y));
                }
            }
        }
        while let Some((x, y)) = q.pop_front() {
            let mut acc = [0u32; 3];
            let mut n = 0;
            for (dx, dy) in dirs {
                let (nx, ny) = (x + dx, y + dy);
                if inside(nx, ny) && state[(ny * w + nx) as usize] == 2 {
                    let p = out.get(nx as u32, ny as u32);
                    (0..3).for_each(|c| acc[c] += p[c] as u32);
                    n += 1;
                }
            }
            out.set(
                x as u32,
                y as u32,
                acc.map(|a| ((a as f64 / n as f64) + 0.5).floor() as u8),
            );
            state[(y * w + x) as usize] = 2;
            for (dx, dy) in dirs {
                let (nx, ny) = (x + dx, y + dy);
                if inside(nx, ny) && state[(ny * w + nx) as usize] == 0 {
                    state[(ny * w + nx) as usize] = 1;
                    q.push_back((nx, ny));
                }
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn diffusion_properties(seed in 0u64..1000, w in 3u32..20, h in 3u32..20, cx in 0u32..20, cy in 0u32..20, r in 0u32..6) {
            let img = noise(w, h, seed);
            let (cx, cy) = (cx % w, cy % h);
            let mask = mask_from(w, h, |x, y| x.abs_diff(cx) + y.abs_diff(cy) <= r);
            let out = diffuse_background(&img, &mask).unwrap();
            prop_assert_eq!(&out, &oracle(&img, &mask));
            let mut lo = [255u8; 3];
            let mut hi = [0u8; 3];
            for y in 0..h {
                for x in 0..w {
                    if mask.is_face(x, y) {
                        prop_assert_eq!(out.get(x, y), img.get(x, y));
                        for c in 0..3 {
                            lo[c] = lo[c].min(img.get(x, y)[c]);
                            hi[c] = hi[c].max(img.get(x, y)[c]);
                        }
                    }
                }
            }
            for p in out.pixels() {
                for c in 0..3 {
                    prop_assert!(p[c] as i32 >= lo[c] as i32 - 1 && p[c] as i32 <= hi[c] as i32 + 1);
                }
            }
            prop_assert_eq!(diffuse_background(&out, &mask).unwrap(), out);
        }
    }

    #[test]
    fn image_io_and_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let img = noise(7, 5, 9);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            assert_eq!(RasterImage::load(&p).unwrap(), img);
        }
        // Pixel centers sample exactly.
        let p = img.get(3, 1);
        let s = img.sample(3.5 / 7.0, 1.0 - 1.5 / 5.0);
        for c in 0..3 {
            assert_eq!(to_u8(s[c]), p[c]);
        }
    }

    #[test]
    fn textured_export_writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = crate::mesh::icosphere(1);
        let cam = Camera::new(32, 32, 10.0, 10.0).unwrap();
        let t = compute_tex_coords(&m, &Pose::identity(), &cam);
        let img = noise(32, 32, 5);
        assert!(matches!(
            export_textured_obj(&m, &img, dir.path(), "x"),
            Err(Error::MissingTexCoords)
        ));
        let paths = export_textured_obj(&t.mesh, &img, dir.path(), "face").unwrap();
        let obj = std::fs::read_to_string(&paths.obj).unwrap();
        assert!(obj.contains("mtllib face.mtl") && obj.contains("usemtl face"));
        assert!(std::fs::read_to_string(&paths.mtl)
            .unwrap()
            .contains("map_Kd face.png"));
        assert_eq!(RasterImage::load(&paths.texture).unwrap(), img);
        let back = crate::mesh::load_obj(&paths.obj).unwrap();
        assert_eq!(back.tex_coords().unwrap().len(), m.vertex_count());
    }
}
