//! Text formats for landmark files and fit results.
//!
//! Landmark file: one line per landmark, `idx x y [weight]`, `#` comments.
//! Fit file: one `key value...` line per field, floats in shortest
//! round-trip form.

use super::{FitResult, LandmarkSet};
use crate::camera::{Camera, Pose, Vec2};
use crate::error::{Error, Result};
use crate::morph::Coefficients;
use nalgebra::{DVector, Matrix3};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const FIT_FORMAT_VERSION: u32 = 1;

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid number {tok:?}"),
    })
}

/// Reads a landmark file. With `expected` set, the file must list exactly
/// indices `0..expected`, each once.
pub fn read_landmarks<R: BufRead>(reader: R, expected: Option<usize>) -> Result<LandmarkSet> {
    let mut rows: Vec<(usize, Vec2, f64)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if !(3..=4).contains(&toks.len()) {
            return Err(Error::Parse {
                line: lineno,
                message: "expected `idx x y [weight]`".into(),
            });
        }
        let idx = toks[0].parse::<usize>().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid landmark index {:?}", toks[0]),
        })?;
        let x = parse_f64(toks[1], lineno)?;
        let y = parse_f64(toks[2], lineno)?;
        let w = toks
            .get(3)
            .map(|t| parse_f64(t, lineno))
            .transpose()?
            .unwrap_or(1.0);
        rows.push((idx, Vec2::new(x, y), w));
    }
    rows.sort_by_key(|r| r.0);
    for (k, r) in rows.iter().enumerate() {
        if r.0 != k {
            return Err(Error::Validation(format!(
                "landmark indices must be 0..N without gaps or repeats, found {} at position {k}",
                r.0
            )));
        }
    }
    if let Some(n) = expected {
        if rows.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: rows.len(),
            });
        }
    }
    LandmarkSet::new(
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
    )
}

pub fn load_landmarks(path: impl AsRef<Path>, expected: Option<usize>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_landmarks(BufReader::new(f), expected)
}

pub fn write_landmarks<W: Write>(lm: &LandmarkSet, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "# idx x y weight")?;
    for (n, (p, wt)) in lm.points().iter().zip(lm.weights()).enumerate() {
        writeln!(w, "{n} {} {} {wt}", p.x, p.y)?;
    }
    Ok(())
}

pub fn save_landmarks(lm: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_landmarks(lm, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn join(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter().map(|x| format!(" {x}")).collect()
}

pub fn write_fit<W: Write>(fit: &FitResult, cam: &Camera, w: &mut W) -> std::io::Result<()> {
    let r = fit.pose.rotation();
    let t = fit.pose.translation();
    let c = &fit.coefficients;
    writeln!(w, "# facekit fit result")?;
    writeln!(w, "version {FIT_FORMAT_VERSION}")?;
    writeln!(w, "landmark_error {}", fit.landmark_error)?;
    writeln!(w, "converged {}", fit.converged)?;
    writeln!(w, "iterations {}", fit.iterations)?;
    writeln!(w, "scale {}", fit.pose.scale())?;
    writeln!(w, "rotation{}", join((0..9).map(|i| r[(i / 3, i % 3)])))?;
    writeln!(w, "translation{}", join(t.iter().copied()))?;
    writeln!(w, "camera_width {}", cam.width)?;
    writeln!(w, "camera_height {}", cam.height)?;
    writeln!(w, "pixels_per_unit {}", cam.pixels_per_unit)?;
    writeln!(w, "d_cam {}", cam.d_cam)?;
    writeln!(w, "alpha_id{}", join(c.alpha_id.iter().copied()))?;
    writeln!(w, "alpha_exp{}", join(c.alpha_exp.iter().copied()))?;
    writeln!(w, "alpha_tex{}", join(c.alpha_tex.iter().copied()))?;
    writeln!(w, "history{}", join(fit.history.iter().copied()))?;
    Ok(())
}

pub fn save_fit(fit: &FitResult, cam: &Camera, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_fit(fit, cam, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_fit<R: BufRead>(reader: R) -> Result<(FitResult, Camera)> {
    let mut fields: HashMap<String, (usize, Vec<String>)> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        let mut toks = body.split_whitespace();
        if let Some(key) = toks.next() {
            fields.insert(key.to_string(), (i + 1, toks.map(String::from).collect()));
        }
    }
    let get = |key: &str| -> Result<&(usize, Vec<String>)> {
        fields
            .get(key)
            .ok_or_else(|| Error::Format(format!("fit file is missing `{key}`")))
    };
    let floats = |key: &str| -> Result<Vec<f64>> {
        let (line, toks) = get(key)?;
        toks.iter().map(|t| parse_f64(t, *line)).collect()
    };
    let one = |key: &str| -> Result<f64> {
        let v = floats(key)?;
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::Parse {
                line: get(key)?.0,
                message: format!("`{key}` takes one value"),
            }),
        }
    };
    let version = one("version")?;
    if version != FIT_FORMAT_VERSION as f64 {
        return Err(Error::Format(format!(
            "unsupported fit file version {version}"
        )));
    }
    let rot = floats("rotation")?;
    let tr = floats("translation")?;
    if rot.len() != 9 || tr.len() != 3 {
        return Err(Error::Format(
            "rotation needs 9 values and translation 3".into(),
        ));
    }
    let pose = Pose::new(
        Matrix3::from_row_slice(&rot),
        crate::mesh::Vec3::new(tr[0], tr[1], tr[2]),
        one("scale")?,
    )?;
    let cam = Camera::new(
        one("camera_width")? as u32,
        one("camera_height")? as u32,
        one("pixels_per_unit")?,
        one("d_cam")?,
    )?;
    let converged = match get("converged")?.1.first().map(String::as_str) {
        Some("true") => true,
        Some("false") => false,
        _ => return Err(Error::Format("`converged` must be true or false".into())),
    };
    let fit = FitResult {
        coefficients: Coefficients {
            alpha_id: DVector::from_vec(floats("alpha_id")?),
            alpha_exp: DVector::from_vec(floats("alpha_exp")?),
            alpha_tex: DVector::from_vec(floats("alpha_tex")?),
        },
        pose,
        landmark_error: one("landmark_error")?,
        history: floats("history")?,
        converged,
        iterations: one("iterations")? as usize,
    };
    Ok((fit, cam))
}

pub fn load_fit(path: impl AsRef<Path>) -> Result<(FitResult, Camera)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_fit(BufReader::new(f))
}
