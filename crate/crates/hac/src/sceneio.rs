//! `.hacscene`: a flat little-endian dump of an [`AnchorScene`].
//!
//! ```text
//! "HACS" u32 version  u64 N  u64 D  u64 K  f32 x 6 bounds (min, max)
//! f32 locations[N*3]  features[N*D]  scalings[N*6]  offsets[N*K*3]
//! ```

use std::path::Path;

use hac_core::scene::SCALING_DIM;
use hac_core::{Aabb, AnchorScene};

use crate::bytes::{read_file, write_file, Reader, Writer};
use crate::error::{HacError, Result};

pub const MAGIC: &[u8; 4] = b"HACS";
pub const VERSION: u32 = 1;

pub fn write_bounds(w: &mut Writer, b: &Aabb) {
    b.min.iter().chain(&b.max).for_each(|&v| w.f32(v));
}

pub fn read_bounds(r: &mut Reader<'_>) -> Result<Aabb> {
    let v = r.f32_vec(6)?;
    Ok(Aabb { min: [v[0], v[1], v[2]], max: [v[3], v[4], v[5]] })
}

pub fn to_bytes(scene: &AnchorScene) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(scene.n as u64);
    w.u64(scene.dim_feat as u64);
    w.u64(scene.k_offsets as u64);
    write_bounds(&mut w, &scene.bounds);
    for arr in [&scene.locations, &scene.features, &scene.scalings, &scene.offsets] {
        arr.iter().for_each(|&v| w.f32(v));
    }
    w.buf
}

const HEADER_BYTES: usize = 4 + 4 + 3 * 8 + 6 * 4;

pub fn from_bytes(bytes: &[u8]) -> Result<AnchorScene> {
    parse(bytes, Path::new("<scene bytes>"))
}

fn truncated(path: &Path, detail: String) -> HacError {
    HacError::io(path, std::io::Error::new(std::io::ErrorKind::UnexpectedEof, detail))
}

fn parse(bytes: &[u8], path: &Path) -> Result<AnchorScene> {
    let mut r = Reader::new(bytes, "scene file");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    if bytes.len() < HEADER_BYTES {
        return Err(truncated(path, format!("scene header needs {HEADER_BYTES} bytes, file has {}", bytes.len())));
    }
    let n = r.count(0)?;
    let d = dimension(r.u64()?)?;
    let k = dimension(r.u64()?)?;
    let bounds = read_bounds(&mut r)?;
    let per_anchor = 3 + d + SCALING_DIM + 3 * k;
    let need = n.checked_mul(per_anchor * 4);
    match need {
        Some(need) if need > r.remaining() => {
            return Err(truncated(path, format!("{} payload bytes for {n} anchors of {per_anchor} values", r.remaining())))
        }
        Some(need) if need == r.remaining() => {}
        _ => {
            return Err(HacError::format("scene file", format!("{} payload bytes for {n} anchors of {per_anchor} values", r.remaining())))
        }
    }
    let scene = AnchorScene {
        n,
        dim_feat: d,
        k_offsets: k,
        locations: r.f32_vec(n * 3)?,
        features: r.f32_vec(n * d)?,
        scalings: r.f32_vec(n * SCALING_DIM)?,
        offsets: r.f32_vec(n * k * 3)?,
        bounds,
    };
    r.finish()?;
    scene.validate()?;
    Ok(scene)
}

fn dimension(v: u64) -> Result<usize> {
    if v > u32::MAX as u64 {
        return Err(HacError::format("scene file", format!("dimension {v} is out of range")));
    }
    Ok(v as usize)
}

pub fn load(path: &Path) -> Result<AnchorScene> {
    parse(&read_file(path)?, path)
}

pub fn save(path: &Path, scene: &AnchorScene) -> Result<()> {
    write_file(path, &to_bytes(scene))
}
