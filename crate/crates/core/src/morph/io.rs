//! CFM1 model container (little-endian).
//!
//! ```text
//! magic   "CFM1"
//! u32     version (1)
//! u32     V, F, d_id, d_exp, d_tex, N
//! f32     mean_shape[3V]      xyz interleaved per vertex
//! f32     mean_texture[3V]    rgb interleaved per vertex
//! f32     basis_id[3V * d_id] column-major
//! f32     basis_exp[3V * d_exp]
//! f32     basis_tex[3V * d_tex]
//! u32     faces[3F]
//! u32     landmarks[N]
//! ```

use super::MorphableModel;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CFM1_MAGIC: &[u8; 4] = b"CFM1";
pub const CFM1_VERSION: u32 = 1;

pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file))
}

pub fn write_model<W: Write>(m: &MorphableModel, w: &mut W) -> std::io::Result<()> {
    w.write_all(CFM1_MAGIC)?;
    let header = [
        CFM1_VERSION,
        m.vertex_count() as u32,
        m.faces().len() as u32,
        m.dim_id() as u32,
        m.dim_exp() as u32,
        m.dim_tex() as u32,
        m.landmark_count() as u32,
    ];
    for h in header {
        w.write_all(&h.to_le_bytes())?;
    }
    let mut put = |xs: &[f64]| -> std::io::Result<()> {
        for &x in xs {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    };
    put(m.mean_shape().as_slice())?;
    put(m.mean_texture().as_slice())?;
    put(m.basis_id().as_slice())?;
    put(m.basis_exp().as_slice())?;
    put(m.basis_tex().as_slice())?;
    for f in m.faces() {
        for &i in f {
            w.write_all(&(i as u32).to_le_bytes())?;
        }
    }
    for &k in m.landmark_indices() {
        w.write_all(&(k as u32).to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Format("unexpected end of file".into()))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut raw = vec![
            0u8;
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?
        ];
        self.inner
            .read_exact(&mut raw)
            .map_err(|_| Error::Format("unexpected end of file".into()))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

pub fn read_model<R: Read>(reader: R) -> Result<MorphableModel> {
    let mut r = Reader { inner: reader };
    if &r.bytes::<4>()? != CFM1_MAGIC {
        return Err(Error::Format("bad magic, expected CFM1".into()));
    }
    let version = r.u32()?;
    if version != CFM1_VERSION {
        return Err(Error::Format(format!("unsupported CFM1 version {version}")));
    }
    let [v, f, d_id, d_exp, d_tex, n] = [(); 6].map(|_| r.u32()).map(|x| x.map(|x| x as usize));
    let (v, f, d_id, d_exp, d_tex, n) = (v?, f?, d_id?, d_exp?, d_tex?, n?);
    let rows = 3 * v;
    let mean_shape = DVector::from_vec(r.f32s(rows)?);
    let mean_texture = DVector::from_vec(r.f32s(rows)?);
    let basis_id = DMatrix::from_vec(rows, d_id, r.f32s(rows * d_id)?);
    let basis_exp = DMatrix::from_vec(rows, d_exp, r.f32s(rows * d_exp)?);
    let basis_tex = DMatrix::from_vec(rows, d_tex, r.f32s(rows * d_tex)?);
    let mut faces = Vec::with_capacity(f);
    for _ in 0..f {
        faces.push([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize]);
    }
    let landmarks = (0..n)
        .map(|_| r.u32().map(|x| x as usize))
        .collect::<Result<Vec<_>>>()?;
    MorphableModel::new(
        mean_shape,
        mean_texture,
        basis_id,
        basis_exp,
        basis_tex,
        faces,
        landmarks,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morph::{make_synthetic_model, SyntheticModelParams};

    #[test]
    fn synthetic_model_round_trips_exactly() {
        let m = make_synthetic_model(&SyntheticModelParams {
            seed: 3,
            min_vertices: 162,
            d_id: 4,
            d_exp: 3,
            d_tex: 2,
        });
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CFM1");
        let expected_len = 4
            + 7 * 4
            + 4 * 3 * m.vertex_count() * (2 + 4 + 3 + 2)
            + 4 * 3 * m.faces().len()
            + 4 * m.landmark_count();
        assert_eq!(buf.len(), expected_len);
        // Generator output is f32-representable, so the round trip is lossless.
        assert_eq!(read_model(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(matches!(
            read_model(&b"CFM2\x01\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let m = make_synthetic_model(&SyntheticModelParams {
            seed: 3,
            min_vertices: 12,
            d_id: 1,
            d_exp: 1,
            d_tex: 1,
        });
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_model(&buf[..]), Err(Error::Format(_))));
        let mut buf2 = Vec::new();
        write_model(&m, &mut buf2).unwrap();
        buf2[4] = 9;
        assert!(read_model(&buf2[..]).is_err());
    }
}
