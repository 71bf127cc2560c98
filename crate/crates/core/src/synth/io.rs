//! Scene and grid files.
//!
//! A scene file is a text header terminated by an empty line, a block of
//! little-endian `f64` points (`x y z r g b` each), then the trajectory as
//! TUM lines:
//!
//! ```text
//! SAILSCENE 1
//! scene_id orbit-7
//! seed 7
//! fov 1 1
//! points 30000
//! frames 24
//!
//! <points * 48 bytes><TUM text>
//! ```
//!
//! Grid files hold one `H x W x channels` tensor: magic `SAILGRID`, then
//! `u32` height, width and channel count, then row-major little-endian `f32`.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{Vector2, Vector3};
use ndarray::Array3;

use super::{ScenePoint, SynthError, SyntheticScene};
use crate::geometry::{read_tum, write_tum, DenseOutput, TumEntry};

pub const SCENE_MAGIC: &str = "SAILSCENE";
pub const SCENE_VERSION: u32 = 1;
pub const GRID_MAGIC: &[u8; 8] = b"SAILGRID";

/// Channels of a dense grid: depth, depth confidence, scene xyz, scene
/// confidence, valid flag (0 or 1).
pub const DENSE_GRID_CHANNELS: usize = 7;

const MAX_GRID_ELEMENTS: usize = 1 << 28;

fn format_err(msg: impl Into<String>) -> SynthError {
    SynthError::Format(msg.into())
}

pub fn write_scene<W: Write>(mut w: W, scene: &SyntheticScene) -> Result<(), SynthError> {
    if scene.scene_id.is_empty() || scene.scene_id.contains(char::is_whitespace) {
        return Err(format_err(format!("scene id {:?} is not a single token", scene.scene_id)));
    }
    writeln!(w, "{SCENE_MAGIC} {SCENE_VERSION}")?;
    writeln!(w, "scene_id {}", scene.scene_id)?;
    writeln!(w, "seed {}", scene.seed)?;
    writeln!(w, "fov {} {}", scene.fov.x, scene.fov.y)?;
    writeln!(w, "points {}", scene.points.len())?;
    writeln!(w, "frames {}", scene.trajectory.len())?;
    writeln!(w)?;
    let mut buf = Vec::with_capacity(scene.points.len() * 48);
    for p in &scene.points {
        for v in p.position.iter().chain(p.color.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    let entries: Vec<TumEntry> = scene
        .trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| TumEntry {
            id: i.to_string(),
            pose: *pose,
        })
        .collect();
    write_tum(&mut w, &entries)?;
    w.flush()?;
    Ok(())
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str, SynthError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| format_err(format!("expected `{key} ...`, found {line:?}")))
}

fn parse<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, SynthError> {
    text.trim()
        .parse()
        .map_err(|_| format_err(format!("bad {what} {text:?}")))
}

pub fn read_scene<R: Read>(r: R) -> Result<SyntheticScene, SynthError> {
    let mut r = BufReader::new(r);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(format_err("scene header is not terminated"));
        }
        let line = line.trim_end_matches(['\n', '\r']).to_string();
        if line.is_empty() {
            break;
        }
        if lines.len() > 16 {
            return Err(format_err("scene header too long"));
        }
        lines.push(line);
    }
    if lines.len() != 6 {
        return Err(format_err(format!("scene header has {} lines, expected 6", lines.len())));
    }
    let version: u32 = parse(header_value(&lines[0], SCENE_MAGIC)?, "version")?;
    if version != SCENE_VERSION {
        return Err(format_err(format!("scene version {version}")));
    }
    let scene_id = header_value(&lines[1], "scene_id")?.to_string();
    let seed: u64 = parse(header_value(&lines[2], "seed")?, "seed")?;
    let fov_text: Vec<&str> = header_value(&lines[3], "fov")?.split_whitespace().collect();
    if fov_text.len() != 2 {
        return Err(format_err("fov needs two values"));
    }
    let fov = Vector2::new(parse(fov_text[0], "fov")?, parse(fov_text[1], "fov")?);
    let n_points: usize = parse(header_value(&lines[4], "points")?, "point count")?;
    let n_frames: usize = parse(header_value(&lines[5], "frames")?, "frame count")?;
    if n_points > MAX_GRID_ELEMENTS / 6 {
        return Err(format_err(format!("{n_points} points")));
    }

    let mut raw = vec![0u8; n_points * 48];
    r.read_exact(&mut raw)?;
    let vals: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let points = vals
        .chunks_exact(6)
        .map(|v| ScenePoint {
            position: Vector3::new(v[0], v[1], v[2]),
            color: Vector3::new(v[3], v[4], v[5]),
        })
        .collect();
    let entries = read_tum(r, fov)?;
    if entries.len() != n_frames {
        return Err(format_err(format!("{} trajectory lines, header says {n_frames}", entries.len())));
    }
    for (i, e) in entries.iter().enumerate() {
        if e.id != i.to_string() {
            return Err(format_err(format!("trajectory line {i} has id {:?}", e.id)));
        }
    }
    Ok(SyntheticScene {
        scene_id,
        seed,
        fov,
        points,
        trajectory: entries.into_iter().map(|e| e.pose).collect(),
    })
}

pub fn write_grid<W: Write>(mut w: W, grid: &Array3<f32>) -> Result<(), SynthError> {
    let (h, wd, c) = grid.dim();
    w.write_all(GRID_MAGIC)?;
    for v in [h, wd, c] {
        let v = u32::try_from(v).map_err(|_| format_err("grid dimension exceeds u32"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    let bytes: Vec<u8> = grid.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<Array3<f32>, SynthError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(format_err("bad grid magic"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_GRID_ELEMENTS)
        .ok_or_else(|| format_err(format!("grid dimensions {dims:?}")))?;
    let mut raw = vec![0u8; 4 * n];
    r.read_exact(&mut raw)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(format_err("trailing bytes after grid"));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array3::from_shape_vec((dims[0], dims[1], dims[2]), data).expect("length matches"))
}

/// Packs a dense output into [`DENSE_GRID_CHANNELS`] channels.
pub fn dense_to_grid(d: &DenseOutput) -> Array3<f32> {
    let (h, w) = d.depth.dim();
    Array3::from_shape_fn((h, w, DENSE_GRID_CHANNELS), |(y, x, c)| match c {
        0 => d.depth[[y, x]] as f32,
        1 => d.depth_conf[[y, x]] as f32,
        2..=4 => d.scm[[y, x, c - 2]] as f32,
        5 => d.scm_conf[[y, x]] as f32,
        _ => f32::from(u8::from(d.valid[[y, x]])),
    })
}

pub fn grid_to_dense(g: &Array3<f32>) -> Result<DenseOutput, SynthError> {
    let (h, w, c) = g.dim();
    if c != DENSE_GRID_CHANNELS {
        return Err(format_err(format!("dense grid has {c} channels, expected {DENSE_GRID_CHANNELS}")));
    }
    let at = |ch: usize| ndarray::Array2::from_shape_fn((h, w), |(y, x)| f64::from(g[[y, x, ch]]));
    Ok(DenseOutput {
        depth: at(0),
        depth_conf: at(1),
        scm: Array3::from_shape_fn((h, w, 3), |(y, x, k)| f64::from(g[[y, x, 2 + k]])),
        scm_conf: at(5),
        valid: ndarray::Array2::from_shape_fn((h, w), |(y, x)| g[[y, x, 6]] != 0.0),
    })
}
