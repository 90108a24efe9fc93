//! TUM trajectory format: `t tx ty tz qx qy qz qw` per line, camera-to-world.

use std::io::{BufRead, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use pl_geometry::Pose;

use crate::VoError;

/// Writes world→camera poses as TUM lines (converted to camera-to-world).
pub fn write_tum<W: Write>(mut w: W, trajectory: &[(f64, Pose)]) -> std::io::Result<()> {
    for (t, pose_cw) in trajectory {
        let wc = pose_cw.inverse();
        let q = wc.rotation();
        let c = wc.translation();
        writeln!(
            w,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t, c.x, c.y, c.z, q.i, q.j, q.k, q.w
        )?;
    }
    Ok(())
}

/// Reads TUM lines back into world→camera poses.
pub fn read_tum<R: BufRead>(r: R) -> Result<Vec<(f64, Pose)>, VoError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| VoError::TrajectoryFormat(format!("bad number: {e}")))?;
        if fields.len() != 8 {
            return Err(VoError::TrajectoryFormat(format!(
                "expected 8 fields, got {}",
                fields.len()
            )));
        }
        let translation = Vector3::new(fields[1], fields[2], fields[3]);
        let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
        let rotation = UnitQuaternion::from_quaternion(q);
        let wc = Pose::new(rotation, translation);
        out.push((fields[0], wc.inverse()));
    }
    Ok(out)
}
