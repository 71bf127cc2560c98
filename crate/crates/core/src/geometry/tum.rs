//! TUM trajectory text format: `frame_id tx ty tz qx qy qz qw` per line.
//!
//! On disk the pose is camera-to-world (camera center and orientation in the
//! world frame). In memory it is world-to-camera, so both directions invert.

use std::io::{BufRead, Write};

use nalgebra::{Vector2, Vector3};

use super::{CameraPose, GeometryError, Quaternion};

#[derive(Clone, Debug, PartialEq)]
pub struct TumEntry {
    pub id: String,
    pub pose: CameraPose,
}

const HEADER: &str = "# frame_id tx ty tz qx qy qz qw (camera-to-world)";

/// Parses a trajectory. TUM carries no intrinsics, so every pose gets `fov`.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_tum<R: BufRead>(reader: R, fov: Vector2<f64>) -> Result<Vec<TumEntry>, GeometryError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let parse_err = |message: String| GeometryError::Parse { line: i + 1, message };
        if fields.len() != 8 {
            return Err(parse_err(format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 7];
        for (slot, text) in v.iter_mut().zip(&fields[1..]) {
            *slot = text
                .parse::<f64>()
                .map_err(|e| parse_err(format!("bad number {text:?}: {e}")))?;
        }
        let center = Vector3::new(v[0], v[1], v[2]);
        let q_cw = Quaternion::new(v[6], v[3], v[4], v[5]).map_err(|e| parse_err(e.to_string()))?;
        let rotation = q_cw.conjugate();
        let translation = -rotation.rotate(&center);
        let pose = CameraPose::new(rotation, translation, fov).map_err(|e| parse_err(e.to_string()))?;
        out.push(TumEntry {
            id: fields[0].to_string(),
            pose,
        });
    }
    Ok(out)
}

pub fn write_tum<W: Write>(mut writer: W, entries: &[TumEntry]) -> Result<(), GeometryError> {
    writeln!(writer, "{HEADER}")?;
    for e in entries {
        if e.id.is_empty() || e.id.contains(char::is_whitespace) {
            return Err(GeometryError::InvalidInput(format!("frame id {:?} is not a single token", e.id)));
        }
        let c = e.pose.center();
        let q = e.pose.rotation.conjugate();
        writeln!(
            writer,
            "{} {} {} {} {} {} {} {}",
            e.id, c.x, c.y, c.z, q.x, q.y, q.z, q.w
        )?;
    }
    Ok(())
}
