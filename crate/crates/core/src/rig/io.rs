//! Rig containers (CFR1 binary and JSON) and β sequence files.

use super::{BlendshapeRig, EyeballSphere};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CFR1_MAGIC: &[u8; 4] = b"CFR1";
pub const CFR1_VERSION: u32 = 1;
pub const RIG_JSON_FORMAT: &str = "facekit-rig";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn f32_bytes(xs: impl IntoIterator<Item = f32>) -> Vec<u8> {
    xs.into_iter().flat_map(f32::to_le_bytes).collect()
}

fn u32_bytes(xs: impl IntoIterator<Item = u32>) -> Vec<u8> {
    xs.into_iter().flat_map(u32::to_le_bytes).collect()
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("{what} {n} does not fit in u32")))
}

pub fn write_rig<W: Write>(rig: &BlendshapeRig, w: &mut W) -> Result<()> {
    let v = rig.vertex_count();
    let f = rig.neutral().face_count();
    let mut buf = Vec::with_capacity(20 + 12 * v * (rig.expression_count() + 1) + 12 * f);
    buf.extend_from_slice(CFR1_MAGIC);
    for n in [
        CFR1_VERSION,
        to_u32(v, "vertex count")?,
        to_u32(f, "face count")?,
    ] {
        buf.extend_from_slice(&n.to_le_bytes());
    }
    buf.extend_from_slice(&to_u32(rig.expression_count(), "expression count")?.to_le_bytes());
    buf.extend(f32_bytes(rig.neutral_flat().iter().map(|&x| x as f32)));
    buf.extend(u32_bytes(
        rig.neutral().faces().iter().flatten().map(|&i| i as u32),
    ));
    for (i, name) in rig.names().iter().enumerate() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend(f32_bytes(rig.delta(i).iter().map(|&x| x as f32)));
    }
    if !rig.eyeballs().is_empty() {
        buf.extend_from_slice(&to_u32(rig.eyeballs().len(), "eyeball count")?.to_le_bytes());
        for e in rig.eyeballs() {
            buf.extend(f32_bytes(
                [e.center.x, e.center.y, e.center.z, e.radius, e.inset].map(|x| x as f32),
            ));
            buf.extend_from_slice(&to_u32(e.vertex_region.len(), "region size")?.to_le_bytes());
            buf.extend(u32_bytes(e.vertex_region.iter().map(|&i| i as u32)));
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<rig stream>", e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format(format!("rig file truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn vec3s(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

fn faces_of(flat: &[usize]) -> Vec<[usize; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn read_rig<R: Read>(mut r: R) -> Result<BlendshapeRig> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)
        .map_err(|e| Error::io("<rig stream>", e))?;
    let mut c = Cursor {
        data: &data,
        pos: 0,
    };
    if c.take(4)? != CFR1_MAGIC {
        return Err(Error::Format("not a CFR1 rig file".into()));
    }
    let version = c.u32()?;
    if version != CFR1_VERSION {
        return Err(Error::Format(format!("unsupported CFR1 version {version}")));
    }
    let (v, f, m) = (c.len()?, c.len()?, c.len()?);
    let neutral = TriMesh::new(vec3s(&c.f32s(3 * v)?), faces_of(&c.u32s(3 * f)?))?;
    let mut names = Vec::with_capacity(m);
    let mut deltas = Vec::with_capacity(m);
    for _ in 0..m {
        let n = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(n)?)
            .map_err(|_| Error::Format("expression name is not UTF-8".into()))?;
        names.push(name.to_string());
        deltas.push(vec3s(&c.f32s(3 * v)?));
    }
    let mut eyeballs = Vec::new();
    if !c.done() {
        for _ in 0..c.len()? {
            let p = c.f32s(5)?;
            let k = c.len()?;
            eyeballs.push(EyeballSphere {
                center: Vec3::new(p[0], p[1], p[2]),
                radius: p[3],
                inset: p[4],
                vertex_region: c.u32s(k)?,
            });
        }
        if !c.done() {
            return Err(Error::Format("trailing bytes after rig data".into()));
        }
    }
    BlendshapeRig::new(neutral, deltas, names)?.with_eyeballs(eyeballs)
}

pub fn save_rig(rig: &BlendshapeRig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_rig(rig, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<BlendshapeRig> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rig(BufReader::new(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeballJson {
    pub center: [f64; 3],
    pub radius: f64,
    pub inset: f64,
    pub vertex_region: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecksumsJson {
    /// FNV-1a-64 of the neutral f32 bytes, 16 hex digits.
    pub neutral: String,
    /// Per expression: FNV-1a-64 of the f32 bytes of `neutral + delta`,
    /// summed in f32.
    pub expressions: Vec<String>,
}

/// JSON rig export. Numeric arrays are base64 little-endian f32 (positions,
/// deltas) or u32 (faces).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigJson {
    pub format: String,
    pub version: u32,
    pub vertex_count: usize,
    pub face_count: usize,
    pub names: Vec<String>,
    pub neutral: String,
    pub faces: String,
    pub deltas: Vec<String>,
    pub checksums: ChecksumsJson,
    #[serde(default)]
    pub eyeballs: Vec<EyeballJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

/// f32 vertex buffer a consumer sees at `beta = e_i`, or the neutral for
/// `None`.
pub(crate) fn blended_f32(rig: &BlendshapeRig, i: Option<usize>) -> Vec<f32> {
    let n = rig.neutral_flat().iter().map(|&x| x as f32);
    match i {
        None => n.collect(),
        Some(i) => n.zip(rig.delta(i)).map(|(a, &d)| a + d as f32).collect(),
    }
}

pub fn rig_to_json(rig: &BlendshapeRig, texture: Option<&str>) -> RigJson {
    let neutral = f32_bytes(blended_f32(rig, None));
    RigJson {
        format: RIG_JSON_FORMAT.into(),
        version: CFR1_VERSION,
        vertex_count: rig.vertex_count(),
        face_count: rig.neutral().face_count(),
        names: rig.names().to_vec(),
        faces: B64.encode(u32_bytes(
            rig.neutral().faces().iter().flatten().map(|&i| i as u32),
        )),
        deltas: (0..rig.expression_count())
            .map(|i| B64.encode(f32_bytes(rig.delta(i).iter().map(|&x| x as f32))))
            .collect(),
        checksums: ChecksumsJson {
            neutral: hex(fnv1a64(&neutral)),
            expressions: (0..rig.expression_count())
                .map(|i| hex(fnv1a64(&f32_bytes(blended_f32(rig, Some(i))))))
                .collect(),
        },
        neutral: B64.encode(&neutral),
        eyeballs: rig
            .eyeballs()
            .iter()
            .map(|e| EyeballJson {
                center: [e.center.x, e.center.y, e.center.z],
                radius: e.radius,
                inset: e.inset,
                vertex_region: e.vertex_region.clone(),
            })
            .collect(),
        texture: texture.map(String::from),
    }
}

fn decode(s: &str, what: &str, count: usize) -> Result<Vec<[u8; 4]>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Format(format!("{what}: invalid base64: {e}")))?;
    if bytes.len() != 4 * count {
        return Err(Error::Format(format!(
            "{what}: expected {} bytes, got {}",
            4 * count,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| c.try_into().unwrap())
        .collect())
}

impl RigJson {
    /// Decodes back into a rig, verifying the stored checksums.
    pub fn to_rig(&self) -> Result<BlendshapeRig> {
        if self.format != RIG_JSON_FORMAT || self.version != CFR1_VERSION {
            return Err(Error::Format(format!(
                "unsupported rig JSON {} v{}",
                self.format, self.version
            )));
        }
        let (v, f) = (self.vertex_count, self.face_count);
        let floats = |s: &str, what: &str| -> Result<Vec<f64>> {
            Ok(decode(s, what, 3 * v)?
                .into_iter()
                .map(|b| f64::from(f32::from_le_bytes(b)))
                .collect())
        };
        let faces: Vec<usize> = decode(&self.faces, "faces", 3 * f)?
            .into_iter()
            .map(|b| u32::from_le_bytes(b) as usize)
            .collect();
        let neutral = TriMesh::new(vec3s(&floats(&self.neutral, "neutral")?), faces_of(&faces))?;
        let deltas = self
            .deltas
            .iter()
            .map(|d| floats(d, "delta").map(|x| vec3s(&x)))
            .collect::<Result<Vec<_>>>()?;
        let eyeballs = self
            .eyeballs
            .iter()
            .map(|e| EyeballSphere {
                center: Vec3::from(e.center),
                radius: e.radius,
                inset: e.inset,
                vertex_region: e.vertex_region.clone(),
            })
            .collect();
        let rig =
            BlendshapeRig::new(neutral, deltas, self.names.clone())?.with_eyeballs(eyeballs)?;
        let expect = rig_to_json(&rig, None).checksums;
        if expect != self.checksums {
            return Err(Error::Format("rig JSON checksum mismatch".into()));
        }
        Ok(rig)
    }
}

pub fn save_rig_json(
    rig: &BlendshapeRig,
    texture: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &rig_to_json(rig, texture))
        .map_err(|e| Error::Format(e.to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON export and verifies its checksums.
pub fn load_rig_json(path: impl AsRef<Path>) -> Result<BlendshapeRig> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let json: RigJson = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    json.to_rig()
}

/// Parses a β sequence: one frame per line, `m` numbers separated by
/// whitespace or commas. Blank lines and `#` comments are skipped.
pub fn read_beta_sequence<R: BufRead>(reader: R, m: usize) -> Result<Vec<Vec<f64>>> {
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let beta = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: i + 1,
                        message: format!("invalid weight {t:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if beta.len() != m {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {m} weights, got {}", beta.len()),
            });
        }
        frames.push(beta);
    }
    Ok(frames)
}

pub fn load_beta_sequence(path: impl AsRef<Path>, m: usize) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_beta_sequence(BufReader::new(f), m)
}
