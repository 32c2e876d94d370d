//! Wavefront OBJ subset: `v x y z [r g b]`, `vt u v`, triangular `f`.
//!
//! Faces are 1-indexed on disk (negative indices are relative to the end of
//! the current list) and 0-indexed in memory. Texture coordinates are stored
//! per vertex; a face corner that binds a different `vt` to an already
//! assigned vertex is counted in [`ObjStats::uv_conflicts`] and ignored.

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjStats {
    /// Lines with a directive outside the supported subset.
    pub skipped_directives: usize,
    pub uv_conflicts: usize,
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (mesh, stats) = read_obj(BufReader::new(file))?;
    if stats.skipped_directives > 0 {
        log::debug!(
            "{}: skipped {} unsupported directives",
            path.display(),
            stats.skipped_directives
        );
    }
    Ok(mesh)
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_obj(mesh, &mut w, None).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid number '{tok}'")))
}

fn resolve_index(tok: &str, count: usize, line: usize) -> Result<usize> {
    let raw: i64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid index '{tok}'")))?;
    let idx = match raw {
        0 => return Err(parse_err(line, "index 0 is not valid in OBJ")),
        r if r > 0 => r - 1,
        r => count as i64 + r,
    };
    if idx < 0 || idx as usize >= count {
        return Err(parse_err(line, format!("index {raw} out of range")));
    }
    Ok(idx as usize)
}

pub fn read_obj<R: BufRead>(reader: R) -> Result<(TriMesh, ObjStats)> {
    let mut stats = ObjStats::default();
    let mut positions: Vec<Vec3> = Vec::new();
    let mut colors: Vec<Vec3> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    // (face, per-corner vt index)
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut corner_uv: Vec<Option<[usize; 3]>> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        let Some(kind) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        match kind {
            "v" => {
                let nums = rest
                    .iter()
                    .map(|t| parse_f64(t, lineno))
                    .collect::<Result<Vec<_>>>()?;
                match nums.len() {
                    3 | 6 => {}
                    4 => {} // homogeneous w is ignored
                    n => return Err(parse_err(lineno, format!("vertex with {n} components"))),
                }
                if nums.len() == 6 {
                    if colors.len() != positions.len() {
                        return Err(parse_err(lineno, "vertex colors on some vertices only"));
                    }
                    colors.push(Vec3::new(nums[3], nums[4], nums[5]));
                } else if !colors.is_empty() {
                    return Err(parse_err(lineno, "vertex colors on some vertices only"));
                }
                positions.push(Vec3::new(nums[0], nums[1], nums[2]));
            }
            "vt" => {
                if rest.len() < 2 {
                    return Err(parse_err(lineno, "texture coordinate needs u and v"));
                }
                uvs.push([parse_f64(rest[0], lineno)?, parse_f64(rest[1], lineno)?]);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(Error::NonTriangleFace {
                        line: lineno,
                        count: rest.len(),
                    });
                }
                let mut f = [0usize; 3];
                let mut t = [0usize; 3];
                let mut has_uv = 0;
                for (k, corner) in rest.iter().enumerate() {
                    let mut parts = corner.split('/');
                    f[k] = resolve_index(parts.next().unwrap_or(""), positions.len(), lineno)?;
                    if let Some(vt) = parts.next().filter(|s| !s.is_empty()) {
                        t[k] = resolve_index(vt, uvs.len(), lineno)?;
                        has_uv += 1;
                    }
                }
                if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                    return Err(parse_err(lineno, "face repeats a vertex"));
                }
                faces.push(f);
                corner_uv.push(if has_uv == 3 { Some(t) } else { None });
            }
            _ => stats.skipped_directives += 1,
        }
    }

    let n = positions.len();
    let mut mesh = TriMesh::new(positions, faces)?;
    if !colors.is_empty() {
        mesh.set_colors(Some(colors))?;
    }
    if corner_uv.iter().any(Option::is_some) {
        let mut per_vertex: Vec<Option<usize>> = vec![None; n];
        for (f, t) in mesh.faces().iter().zip(&corner_uv) {
            let Some(t) = t else { continue };
            for k in 0..3 {
                match per_vertex[f[k]] {
                    None => per_vertex[f[k]] = Some(t[k]),
                    Some(prev) if uvs[prev] != uvs[t[k]] => stats.uv_conflicts += 1,
                    Some(_) => {}
                }
            }
        }
        let tex = per_vertex
            .into_iter()
            .map(|t| t.map_or([0.0, 0.0], |t| uvs[t]))
            .collect();
        mesh.set_tex_coords(Some(tex))?;
    }
    Ok((mesh, stats))
}

/// Writes the mesh; `material` is an optional `(mtllib file, material name)`.
pub fn write_obj<W: Write>(
    mesh: &TriMesh,
    w: &mut W,
    material: Option<(&str, &str)>,
) -> std::io::Result<()> {
    if let Some((lib, _)) = material {
        writeln!(w, "mtllib {lib}")?;
    }
    match mesh.colors() {
        Some(colors) => {
            for (v, c) in mesh.vertices().iter().zip(colors) {
                writeln!(w, "v {} {} {} {} {} {}", v.x, v.y, v.z, c.x, c.y, c.z)?;
            }
        }
        None => {
            for v in mesh.vertices() {
                writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
            }
        }
    }
    if let Some(uv) = mesh.tex_coords() {
        for t in uv {
            writeln!(w, "vt {} {}", t[0], t[1])?;
        }
    }
    if let Some((_, name)) = material {
        writeln!(w, "usemtl {name}")?;
    }
    let textured = mesh.tex_coords().is_some();
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| i + 1);
        if textured {
            writeln!(w, "f {a}/{a} {b}/{b} {c}/{c}")?;
        } else {
            writeln!(w, "f {a} {b} {c}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parse(s: &str) -> Result<(TriMesh, ObjStats)> {
        read_obj(s.as_bytes())
    }

    #[test]
    fn one_indexed_faces_become_zero_indexed() {
        let (m, stats) = parse("# c\no tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        assert_eq!(stats.skipped_directives, 1);
    }

    #[test]
    fn negative_and_slash_indices() {
        let (m, _) =
            parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/1 -2/2/7 -1/3\n")
                .unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        assert_eq!(m.tex_coords().unwrap()[2], [0.0, 1.0]);
    }

    #[test]
    fn quad_is_rejected() {
        let err = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(err, Error::NonTriangleFace { line: 5, count: 4 }));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn color_extension_round_trip() {
        let (m, _) = parse("v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n").unwrap();
        assert_eq!(m.colors().unwrap()[1], Vec3::new(0.0, 1.0, 0.0));
        let mut buf = Vec::new();
        write_obj(&m, &mut buf, None).unwrap();
        assert_eq!(read_obj(&buf[..]).unwrap().0, m);
        assert!(parse("v 0 0 0 1 0 0\nv 1 0 0\n").is_err());
    }

    #[test]
    fn random_mesh_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = icosphere(2);
        for v in m.vertices_mut() {
            *v = Vec3::new(rng.random(), rng.random(), rng.random()) * 100.0 - Vec3::repeat(50.0);
        }
        let uv = (0..m.vertex_count())
            .map(|_| [rng.random(), rng.random()])
            .collect();
        m.set_tex_coords(Some(uv)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        save_obj(&m, &p).unwrap();
        let back = load_obj(&p).unwrap();
        assert_eq!(back.faces(), m.faces());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a - b).norm() < 1e-6);
        }
        assert_eq!(back.tex_coords(), m.tex_coords());
    }

    #[test]
    fn missing_file_is_missing_input() {
        assert!(matches!(
            load_obj("/nonexistent/x.obj"),
            Err(Error::MissingInput(_))
        ));
    }
}
