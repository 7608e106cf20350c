//! Paired stereo directories in the KITTI arrangement:
//! `left/<id>.ppm`, `right/<id>.ppm` and optionally `disparity/<id>.pgm`
//! (16-bit, disparity times 256 unless a scale sidecar says otherwise).

use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm::{load_image, load_pgm16_map, save_image, save_pgm16_map};
use super::resize::resize_bilinear;
use crate::depth::StereoSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed-point scale of KITTI disparity PNGs.
pub const DEFAULT_DISPARITY_SCALE: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StereoDirLayout {
    pub left: PathBuf,
    pub right: PathBuf,
    pub disparity: PathBuf,
}

impl StereoDirLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            left: root.join("left"),
            right: root.join("right"),
            disparity: root.join("disparity"),
        }
    }
}

fn ppm_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(s.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Loads every pair in file-name order, optionally resized to `size`.
/// Disparities are resized with the images and multiplied by the width
/// ratio, since they are measured in pixels.
pub fn load_stereo_dir(
    root: &Path,
    size: Option<(usize, usize)>,
) -> Result<Vec<StereoSample<f32>>> {
    let layout = StereoDirLayout::new(root);
    let stems = ppm_stems(&layout.left)?;
    if stems.is_empty() {
        return Err(Error::invalid(format!(
            "no .ppm images in {}",
            layout.left.display()
        )));
    }
    stems
        .iter()
        .map(|stem| {
            let mut left = load_image(&layout.left.join(format!("{stem}.ppm")))?;
            let mut right = load_image(&layout.right.join(format!("{stem}.ppm")))?;
            let (_, h, w) = left.dims3()?;
            let disp_path = layout.disparity.join(format!("{stem}.pgm"));
            let mut disparity = if disp_path.is_file() {
                let (map, scale) = load_pgm16_map(&disp_path, DEFAULT_DISPARITY_SCALE)?;
                if (map.height, map.width) != (h, w) {
                    return Err(Error::shape(format!(
                        "{}: disparity is {}x{}, image is {h}x{w}",
                        disp_path.display(),
                        map.height,
                        map.width
                    )));
                }
                Some(Tensor::from_vec(&[1, h, w], map.values(scale))?)
            } else {
                None
            };
            if let Some((th, tw)) = size {
                left = resize_bilinear(&left, th, tw)?;
                right = resize_bilinear(&right, th, tw)?;
                let ratio = tw as f32 / w as f32;
                disparity = disparity
                    .map(|d| {
                        let r = resize_bilinear(&d, th, tw)?;
                        Tensor::from_vec(&[1, th, tw], r.data().iter().map(|v| v * ratio).collect())
                    })
                    .transpose()?;
            }
            let sample = StereoSample::new(left, right)?;
            match disparity {
                Some(d) => sample.with_disparity(d),
                None => Ok(sample),
            }
        })
        .collect()
}

/// Writes samples as `000000`, `000001`, ... in the layout read by
/// [`load_stereo_dir`].
pub fn write_stereo_dir(root: &Path, samples: &[StereoSample<f32>]) -> Result<()> {
    let layout = StereoDirLayout::new(root);
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("{i:06}");
        save_image(&layout.left.join(format!("{stem}.ppm")), &s.left)?;
        save_image(&layout.right.join(format!("{stem}.ppm")), &s.right)?;
        if let Some(d) = &s.disparity {
            let (_, h, w) = d.dims3()?;
            save_pgm16_map(
                &layout.disparity.join(format!("{stem}.pgm")),
                h,
                w,
                d.data(),
                DEFAULT_DISPARITY_SCALE,
            )?;
        }
    }
    Ok(())
}
