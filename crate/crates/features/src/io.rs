//! Binary file format for precomputed frontend outputs ("PLF1").
//!
//! Little-endian layout (see docs/FORMATS.md for the full byte map):
//! magic "PLF1", u32 version, u64 image id, u32 descriptor dim,
//! u32 keypoint / line / junction counts, then the three feature blocks.
//! Line-keypoint associations are not stored; they are recomputed by
//! [`associate_points_to_lines`](crate::associate_points_to_lines).

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector2;

use crate::{Descriptor, FeatureError, FrontendOutput, Junction, Keypoint, LineSegment2D};

pub const PLF_MAGIC: &[u8; 4] = b"PLF1";
pub const PLF_VERSION: u32 = 1;

pub fn write_frontend_output<W: Write>(
    mut w: W,
    output: &FrontendOutput,
) -> Result<(), FeatureError> {
    let desc_dim = output
        .keypoints
        .first()
        .map(|k| k.descriptor.dim())
        .unwrap_or(0);
    for kp in &output.keypoints {
        if kp.descriptor.dim() != desc_dim {
            return Err(FeatureError::DimensionMismatch {
                a: desc_dim,
                b: kp.descriptor.dim(),
            });
        }
    }

    w.write_all(PLF_MAGIC)?;
    w.write_u32::<LittleEndian>(PLF_VERSION)?;
    w.write_u64::<LittleEndian>(output.image_id)?;
    w.write_u32::<LittleEndian>(desc_dim as u32)?;
    w.write_u32::<LittleEndian>(output.keypoints.len() as u32)?;
    w.write_u32::<LittleEndian>(output.lines.len() as u32)?;
    w.write_u32::<LittleEndian>(output.junctions.len() as u32)?;

    for kp in &output.keypoints {
        w.write_f32::<LittleEndian>(kp.position.x as f32)?;
        w.write_f32::<LittleEndian>(kp.position.y as f32)?;
        w.write_f32::<LittleEndian>(kp.score as f32)?;
        for v in kp.descriptor.values() {
            w.write_f32::<LittleEndian>(*v)?;
        }
    }
    for line in &output.lines {
        for v in [
            line.p1.x, line.p1.y, line.p2.x, line.p2.y, line.line.a, line.line.b, line.line.c,
            line.score,
        ] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    for junction in &output.junctions {
        w.write_f32::<LittleEndian>(junction.position.x as f32)?;
        w.write_f32::<LittleEndian>(junction.position.y as f32)?;
        w.write_u32::<LittleEndian>(junction.line_ids.len() as u32)?;
        for id in &junction.line_ids {
            w.write_u32::<LittleEndian>(*id as u32)?;
        }
    }
    Ok(())
}

pub fn read_frontend_output<R: Read>(mut r: R) -> Result<FrontendOutput, FeatureError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PLF_MAGIC {
        return Err(FeatureError::Format(format!(
            "bad magic {magic:?}, expected {PLF_MAGIC:?}"
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != PLF_VERSION {
        return Err(FeatureError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let image_id = r.read_u64::<LittleEndian>()?;
    let desc_dim = r.read_u32::<LittleEndian>()? as usize;
    let n_kp = r.read_u32::<LittleEndian>()? as usize;
    let n_line = r.read_u32::<LittleEndian>()? as usize;
    let n_junction = r.read_u32::<LittleEndian>()? as usize;

    let mut keypoints = Vec::with_capacity(n_kp);
    for _ in 0..n_kp {
        let x = f64::from(r.read_f32::<LittleEndian>()?);
        let y = f64::from(r.read_f32::<LittleEndian>()?);
        let score = f64::from(r.read_f32::<LittleEndian>()?);
        let mut desc = Vec::with_capacity(desc_dim);
        for _ in 0..desc_dim {
            desc.push(r.read_f32::<LittleEndian>()?);
        }
        keypoints.push(Keypoint {
            position: Vector2::new(x, y),
            descriptor: Descriptor::from_normalized(desc),
            score,
        });
    }

    let mut lines = Vec::with_capacity(n_line);
    for _ in 0..n_line {
        let mut vals = [0.0f32; 8];
        for v in &mut vals {
            *v = r.read_f32::<LittleEndian>()?;
        }
        let p1 = Vector2::new(f64::from(vals[0]), f64::from(vals[1]));
        let p2 = Vector2::new(f64::from(vals[2]), f64::from(vals[3]));
        if (p1 - p2).norm() < 1e-9 {
            return Err(FeatureError::Format("degenerate segment in file".into()));
        }
        // Keep the stored coefficients verbatim so re-serialization is
        // byte-identical.
        let line = pl_geometry::Line2D::from_normalized(
            f64::from(vals[4]),
            f64::from(vals[5]),
            f64::from(vals[6]),
        )
        .map_err(|_| FeatureError::Format("invalid line coefficients in file".into()))?;
        lines.push(LineSegment2D {
            p1,
            p2,
            line,
            keypoint_ids: Vec::new(),
            score: f64::from(vals[7]),
        });
    }

    let mut junctions = Vec::with_capacity(n_junction);
    for _ in 0..n_junction {
        let x = f64::from(r.read_f32::<LittleEndian>()?);
        let y = f64::from(r.read_f32::<LittleEndian>()?);
        let n_inc = r.read_u32::<LittleEndian>()? as usize;
        let mut line_ids = Vec::with_capacity(n_inc);
        for _ in 0..n_inc {
            let id = r.read_u32::<LittleEndian>()? as usize;
            if id >= n_line {
                return Err(FeatureError::Format(format!(
                    "junction references line {id} of {n_line}"
                )));
            }
            line_ids.push(id);
        }
        junctions.push(Junction {
            position: Vector2::new(x, y),
            line_ids,
        });
    }

    Ok(FrontendOutput {
        image_id,
        keypoints,
        lines,
        junctions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_output() -> FrontendOutput {
        let mut line = LineSegment2D::from_endpoints(
            Vector2::new(1.0, 2.0),
            Vector2::new(100.0, 52.0),
        )
        .unwrap();
        line.score = 0.75;
        FrontendOutput {
            image_id: 42,
            keypoints: vec![
                Keypoint {
                    position: Vector2::new(10.5, 20.25),
                    descriptor: Descriptor::new(vec![0.25, -0.5, 1.0, 0.0]),
                    score: 0.5,
                },
                Keypoint {
                    position: Vector2::new(1.0, 2.0),
                    descriptor: Descriptor::new(vec![1.0, 0.0, 0.0, 0.0]),
                    score: 0.25,
                },
            ],
            lines: vec![line],
            junctions: vec![Junction {
                position: Vector2::new(1.0, 2.0),
                line_ids: vec![0],
            }],
        }
    }

    #[test]
    fn round_trip() {
        let out = sample_output();
        let mut buf = Vec::new();
        write_frontend_output(&mut buf, &out).unwrap();
        let read = read_frontend_output(buf.as_slice()).unwrap();
        assert_eq!(read.image_id, out.image_id);
        assert_eq!(read.keypoints.len(), 2);
        assert_eq!(read.lines.len(), 1);
        assert_eq!(read.junctions.len(), 1);
        assert_eq!(read.junctions[0].line_ids, vec![0]);
        // f32 storage: positions round-trip exactly for representable values
        assert_eq!(read.keypoints[0].position, out.keypoints[0].position);
        assert_eq!(
            read.keypoints[0].descriptor.values(),
            out.keypoints[0].descriptor.values()
        );
        // Re-serialization is byte-identical.
        let mut buf2 = Vec::new();
        write_frontend_output(&mut buf2, &read).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        write_frontend_output(&mut buf, &sample_output()).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_frontend_output(buf.as_slice()),
            Err(FeatureError::Format(_))
        ));
    }

    #[test]
    fn bad_version_rejected() {
        let mut buf = Vec::new();
        write_frontend_output(&mut buf, &sample_output()).unwrap();
        buf[4] = 0xFF;
        assert!(matches!(
            read_frontend_output(buf.as_slice()),
            Err(FeatureError::Format(_))
        ));
    }
}
