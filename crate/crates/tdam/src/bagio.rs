//! Binary feature-bag files with a JSON sidecar.
//!
//! Layout: `TDAMBAG1`, `u32 N`, `u32 D` (little endian), `N·D` f32 features
//! row-major, then `N·2` i32 coordinates. The sidecar at `<path>.json` holds
//! the slide id and provenance.

use std::path::{Path, PathBuf};

use tdam_core::bag::FeatureBag;
use tdam_core::Matrix;

use crate::error::{CliError, Result};
use crate::runconfig::Provenance;

pub const BAG_MAGIC: &[u8; 8] = b"TDAMBAG1";
const HEADER_LEN: usize = 16;

pub fn encode_bag(bag: &FeatureBag) -> Result<Vec<u8>> {
    bag.validate()?;
    let (n, d) = bag.features.shape();
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| CliError::data(format!("bag dimension {v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (d + 2));
    out.extend_from_slice(BAG_MAGIC);
    out.extend_from_slice(&to_u32(n)?.to_le_bytes());
    out.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for v in bag.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in bag.coords.iter().flatten() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_bag(bytes: &[u8], slide_id: &str) -> Result<FeatureBag> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != BAG_MAGIC {
        return Err(CliError::Format(format!("{slide_id}: missing TDAMBAG1 header")));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (n, d) = (word(8), word(12));
    if n == 0 || d == 0 {
        return Err(CliError::Format(format!("{slide_id}: header declares an empty bag {n}x{d}")));
    }
    let want = n.checked_mul(d + 2).and_then(|c| c.checked_mul(4)).and_then(|c| c.checked_add(HEADER_LEN));
    if want != Some(bytes.len()) {
        return Err(CliError::Truncated(format!(
            "{slide_id}: header {n}x{d} needs {} payload bytes, file has {}",
            want.map_or("too many".into(), |w| (w - HEADER_LEN).to_string()),
            bytes.len() - HEADER_LEN
        )));
    }
    let body = &bytes[HEADER_LEN..];
    let features: Vec<f32> =
        body[..4 * n * d].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let coords = body[4 * n * d..]
        .chunks_exact(8)
        .map(|c| {
            let x = i32::from_le_bytes(c[..4].try_into().expect("4 bytes"));
            let y = i32::from_le_bytes(c[4..].try_into().expect("4 bytes"));
            [x, y]
        })
        .collect();
    Ok(FeatureBag::new(slide_id, Matrix::from_vec(n, d, features), coords)?)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_bag(bag: &FeatureBag, path: &Path, provenance: &Provenance) -> Result<()> {
    let bytes = encode_bag(bag)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let side = serde_json::json!({
        "slide_id": bag.slide_id,
        "n_patches": bag.n_patches(),
        "dim": bag.dim(),
        "provenance": provenance.json(),
    });
    let side_path = sidecar_path(path);
    std::fs::write(&side_path, format!("{side:#}\n")).map_err(|e| CliError::io(&side_path, e))
}

/// Reads a bag; without a sidecar the slide id is the file stem.
pub fn load_bag(path: &Path) -> Result<FeatureBag> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let side_path = sidecar_path(path);
    let slide_id = match std::fs::read_to_string(&side_path) {
        Ok(text) => {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", side_path.display())))?;
            v.get("slide_id")
                .and_then(|s| s.as_str())
                .ok_or_else(|| CliError::Format(format!("{}: no slide_id", side_path.display())))?
                .to_string()
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        }
        Err(e) => return Err(CliError::io(&side_path, e)),
    };
    decode_bag(&bytes, &slide_id)
}
