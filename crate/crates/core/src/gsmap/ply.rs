//! Binary little-endian PLY export of the Gaussian map.
//!
//! The vertex layout is fixed and order-stable so exported files can be
//! compared byte for byte: position, ellipsoid semi-axes, rotation
//! quaternion (w first), opacity, color, anchor keyframe. No normals.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::gsmap::map::{Gaussian, GaussianMap};

const PLY_PROPERTIES: [&str; 15] = [
    "float x",
    "float y",
    "float z",
    "float scale_x",
    "float scale_y",
    "float scale_z",
    "float rot_w",
    "float rot_x",
    "float rot_y",
    "float rot_z",
    "float opacity",
    "float red",
    "float green",
    "float blue",
    "uint anchor",
];

/// Bytes per vertex record: 14 float32 fields plus one uint32.
const RECORD_BYTES: usize = 14 * 4 + 4;

/// Writes the map as binary little-endian PLY, Gaussians in ascending id
/// order.
pub fn write_ply<W: Write>(map: &GaussianMap, out: &mut W) -> Result<()> {
    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str("format binary_little_endian 1.0\n");
    header.push_str("comment gaussian map: ellipsoid splats, rotation stored w,x,y,z\n");
    header.push_str(&format!("element vertex {}\n", map.len()));
    for p in PLY_PROPERTIES {
        header.push_str(&format!("property {p}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;

    let mut record = [0u8; RECORD_BYTES];
    for (_, g) in map.iter() {
        let q = g.orientation.quaternion();
        let fields: [f32; 14] = [
            g.mean.x as f32,
            g.mean.y as f32,
            g.mean.z as f32,
            g.scale.x as f32,
            g.scale.y as f32,
            g.scale.z as f32,
            q.w as f32,
            q.i as f32,
            q.j as f32,
            q.k as f32,
            g.opacity as f32,
            g.color.x as f32,
            g.color.y as f32,
            g.color.z as f32,
        ];
        for (k, f) in fields.iter().enumerate() {
            record[k * 4..k * 4 + 4].copy_from_slice(&f.to_le_bytes());
        }
        let anchor = u32::try_from(g.anchor)
            .map_err(|_| Error::invalid(format!("anchor {} exceeds u32", g.anchor)))?;
        record[14 * 4..].copy_from_slice(&anchor.to_le_bytes());
        out.write_all(&record)?;
    }
    Ok(())
}

pub fn save_ply(map: &GaussianMap, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_ply(map, &mut f)
}

/// Reads a map previously written by `write_ply`. Ids are reassigned from
/// zero; anchor origins are not part of the format, so a loaded map supports
/// rendering and pruning but not scaled pose updates until origins are
/// re-registered.
pub fn read_ply<R: Read>(input: &mut R) -> Result<GaussianMap> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let header_end = find_header_end(&bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Parse("PLY header is not UTF-8".into()))?;

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::Parse("missing ply magic".into()));
    }
    if lines.next() != Some("format binary_little_endian 1.0") {
        return Err(Error::Parse("unsupported PLY format; expected binary little endian".into()));
    }
    let mut n_vertices: Option<usize> = None;
    let mut props = Vec::new();
    for line in lines {
        if line.starts_with("comment") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            n_vertices = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad vertex count {rest:?}")))?,
            );
        } else if let Some(rest) = line.strip_prefix("property ") {
            props.push(rest.trim().to_string());
        } else if line == "end_header" {
            break;
        } else if line.starts_with("element") {
            return Err(Error::Parse(format!("unexpected element: {line}")));
        }
    }
    let n = n_vertices.ok_or_else(|| Error::Parse("missing element vertex line".into()))?;
    if props != PLY_PROPERTIES {
        return Err(Error::Parse(format!(
            "unexpected property layout {props:?}; this reader only accepts its own exports"
        )));
    }

    let body = &bytes[header_end..];
    if body.len() != n * RECORD_BYTES {
        return Err(Error::Parse(format!(
            "PLY body holds {} bytes, expected {} for {} vertices",
            body.len(),
            n * RECORD_BYTES,
            n
        )));
    }
    let mut map = GaussianMap::new();
    for rec in body.chunks_exact(RECORD_BYTES) {
        let f = |k: usize| -> f64 {
            f64::from(f32::from_le_bytes([rec[k * 4], rec[k * 4 + 1], rec[k * 4 + 2], rec[k * 4 + 3]]))
        };
        let anchor = u32::from_le_bytes([rec[56], rec[57], rec[58], rec[59]]) as usize;
        let q = Quaternion::new(f(6), f(7), f(8), f(9));
        if q.norm() < 1e-6 {
            return Err(Error::Parse("degenerate rotation quaternion in PLY".into()));
        }
        let g = Gaussian {
            mean: Vector3::new(f(0), f(1), f(2)),
            scale: Vector3::new(f(3), f(4), f(5)),
            orientation: UnitQuaternion::new_normalize(q),
            opacity: f(10),
            color: Vector3::new(f(11), f(12), f(13)),
            anchor,
        };
        if !(g.scale.x > 0.0 && g.scale.y > 0.0 && g.scale.z > 0.0) {
            return Err(Error::Parse("non-positive scale in PLY".into()));
        }
        map.insert(g);
    }
    Ok(map)
}

pub fn load_ply(path: &Path) -> Result<GaussianMap> {
    let mut f = std::fs::File::open(path)?;
    read_ply(&mut f)
}

fn find_header_end(bytes: &[u8]) -> Result<usize> {
    let needle = b"end_header\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
        .ok_or_else(|| Error::Parse("PLY header terminator not found".into()))
}
