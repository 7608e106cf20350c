//! File formats and dataset plumbing.
//!
//! Images are binary PPM (P6, 8-bit) loaded as `[3,H,W]` tensors in `[0, 1]`.
//! Maps go out either as 16-bit PGM with a sidecar scale or as raw float
//! binaries. Weights use a text manifest followed by a little-endian payload.

mod dataset;
mod floatbin;
mod netpbm;
mod records;
mod resize;
mod text;
mod weights;

pub use dataset::{load_stereo_dir, write_stereo_dir, StereoDirLayout};
pub use floatbin::{
    decode_head, decode_map, encode_head, encode_map, load_head, load_map, save_head, save_map,
};
pub use netpbm::{
    decode_pgm16, decode_ppm, encode_pgm16, encode_ppm, load_image, load_pgm16_map, save_image,
    save_pgm16_map, scale_sidecar_path, Pgm16,
};
pub use records::{detections_to_jsonl, parse_detections_jsonl, playlist_m3u};
pub use resize::resize_bilinear;
pub use text::{load_anchors, load_class_list, parse_anchors, parse_class_list, parse_key_values};
pub use weights::{
    decode_weights, encode_weights, load_params, load_weights, save_params, save_weights,
};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
