//! Text stream format: one sample per line, `t wx wy wz ax ay az` in SI
//! units.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use crate::{ImuError, ImuSample};

pub fn write_imu_text<W: Write>(mut w: W, samples: &[ImuSample]) -> std::io::Result<()> {
    for s in samples {
        writeln!(
            w,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            s.timestamp, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
        )?;
    }
    Ok(())
}

pub fn read_imu_text<R: BufRead>(r: R) -> Result<Vec<ImuSample>, ImuError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|_| ImuError::InvalidStream)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ImuError::InvalidStream)?;
        if fields.len() != 7 {
            return Err(ImuError::InvalidStream);
        }
        out.push(ImuSample {
            timestamp: fields[0],
            gyro: Vector3::new(fields[1], fields[2], fields[3]),
            accel: Vector3::new(fields[4], fields[5], fields[6]),
        });
    }
    for pair in out.windows(2) {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(ImuError::InvalidStream);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let samples = vec![
            ImuSample {
                timestamp: 0.0,
                gyro: Vector3::new(0.1, -0.2, 0.3),
                accel: Vector3::new(9.81, 0.0, -0.5),
            },
            ImuSample {
                timestamp: 0.005,
                gyro: Vector3::new(0.11, -0.19, 0.29),
                accel: Vector3::new(9.8, 0.01, -0.49),
            },
        ];
        let mut buf = Vec::new();
        write_imu_text(&mut buf, &samples).unwrap();
        let read = read_imu_text(buf.as_slice()).unwrap();
        assert_eq!(read.len(), 2);
        assert!((read[0].gyro - samples[0].gyro).norm() < 1e-9);
        assert!((read[1].accel - samples[1].accel).norm() < 1e-9);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(read_imu_text("0.0 1 2 3 4 5".as_bytes()).is_err());
        assert!(read_imu_text("a b c d e f g".as_bytes()).is_err());
        // comments and blanks are fine
        let ok = read_imu_text("# header\n\n0.0 0 0 0 0 0 9.81\n".as_bytes()).unwrap();
        assert_eq!(ok.len(), 1);
    }
}
