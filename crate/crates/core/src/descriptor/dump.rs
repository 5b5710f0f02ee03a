use std::io::{self, Read, Write};

use nalgebra::Matrix3;

use super::{LocalSurfaceDescriptor, NormalizationContext, SPATIAL_WIDTH};
use crate::mesh::Vec3;

const MAGIC: &[u8; 4] = b"LSD1";

/// Writes a descriptor with its normalization context. Layout, all
/// little-endian: magic, u32 face count, u32 grid side, grids as f32, spatial
/// rows as f32, validity as u8, then rotation (row-major), center and scale
/// as f64.
pub fn write_lsd_dump<W: Write>(mut w: W, lsd: &LocalSurfaceDescriptor, ctx: &NormalizationContext) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(lsd.faces as u32).to_le_bytes())?;
    w.write_all(&(lsd.side as u32).to_le_bytes())?;
    for &x in lsd.g.iter().chain(&lsd.s) {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    let mask: Vec<u8> = lsd.valid.iter().map(|&v| v as u8).collect();
    w.write_all(&mask)?;
    for i in 0..3 {
        for j in 0..3 {
            w.write_all(&ctx.rotation[(i, j)].to_le_bytes())?;
        }
    }
    for &x in ctx.c0.iter().chain(std::iter::once(&ctx.m_v)) {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Contents of a descriptor dump, with grids and spatial rows widened back
/// from f32.
#[derive(Clone, Debug, PartialEq)]
pub struct LsdDump {
    pub lsd: LocalSurfaceDescriptor,
    pub ctx: NormalizationContext,
}

pub fn read_lsd_dump<R: Read>(mut r: R) -> io::Result<LsdDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not an LSD1 dump"));
    }
    let mut u32_buf = [0u8; 4];
    r.read_exact(&mut u32_buf)?;
    let faces = u32::from_le_bytes(u32_buf) as usize;
    r.read_exact(&mut u32_buf)?;
    let side = u32::from_le_bytes(u32_buf) as usize;

    let mut read_f32s = |count: usize| -> io::Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };
    let g = read_f32s(faces * side * side * 3)?;
    let s = read_f32s(faces * SPATIAL_WIDTH)?;
    let mut mask = vec![0u8; faces * side * side];
    r.read_exact(&mut mask)?;

    let mut tail = [0u8; 13 * 8];
    r.read_exact(&mut tail)?;
    let f: Vec<f64> = tail
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let rotation = Matrix3::from_row_slice(&f[..9]);
    Ok(LsdDump {
        lsd: LocalSurfaceDescriptor {
            faces,
            side,
            g,
            s,
            valid: mask.into_iter().map(|b| b != 0).collect(),
        },
        ctx: NormalizationContext {
            rotation,
            inverse_rotation: rotation.transpose(),
            c0: Vec3::new(f[9], f[10], f[11]),
            m_v: f[12],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let lsd = LocalSurfaceDescriptor {
            faces: 2,
            side: 2,
            g: (0..24).map(|i| i as f64 * 0.25).collect(),
            s: (0..30).map(|i| -(i as f64) * 0.5).collect(),
            valid: vec![true, false, true, true, false, false, true, false],
        };
        let ctx = NormalizationContext {
            rotation: Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            c0: Vec3::new(0.1, 0.2, 0.3),
            m_v: 1.7,
            ..NormalizationContext::identity()
        };
        let ctx = NormalizationContext {
            inverse_rotation: ctx.rotation.transpose(),
            ..ctx
        };
        let mut buf = Vec::new();
        write_lsd_dump(&mut buf, &lsd, &ctx).unwrap();
        assert_eq!(buf.len(), 12 + 4 * (24 + 30) + 8 + 13 * 8);
        assert_eq!(&buf[..4], b"LSD1");
        let back = read_lsd_dump(&buf[..]).unwrap();
        assert_eq!(back.lsd, lsd);
        assert_eq!(back.ctx, ctx);
    }
}
