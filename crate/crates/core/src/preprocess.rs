//! Dataset-level mean subtraction and scaling for detector inputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scale applied when none is configured: the 8-bit intensity range.
pub const DEFAULT_SIGMA: f64 = 255.0;

/// Per-channel intensity means and a shared scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mu_r: f64,
    pub mu_g: f64,
    pub mu_b: f64,
    pub sigma: f64,
}

impl Default for ChannelStats {
    fn default() -> Self {
        Self {
            mu_r: 0.0,
            mu_g: 0.0,
            mu_b: 0.0,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl ChannelStats {
    pub fn means(&self) -> [f64; 3] {
        [self.mu_r, self.mu_g, self.mu_b]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.means().iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("channel means".into()));
        }
        Ok(())
    }

    /// Four lines: `mu_r`, `mu_g`, `mu_b`, `sigma`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in [self.mu_r, self.mu_g, self.mu_b, self.sigma] {
            writeln!(s, "{v}").expect("writing to a String cannot fail");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::Decode(format!("stats line {l:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let [mu_r, mu_g, mu_b, sigma] = values[..] else {
            return Err(Error::Decode(format!(
                "stats file needs 4 values, found {}",
                values.len()
            )));
        };
        let stats = Self {
            mu_r,
            mu_g,
            mu_b,
            sigma,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn rgb_plane<T: Scalar>(image: &Tensor<T>) -> Result<usize> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!(
            "expected a 3-channel image, got {c} channels"
        )));
    }
    Ok(h * w)
}

/// Loader values in `[0, 1]` back to 8-bit intensity units, the scale the
/// statistics and the default sigma are expressed in.
pub fn intensities<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let k = T::of(255.0);
    Tensor::from_vec(image.shape(), image.data().iter().map(|&v| v * k).collect())
}

/// Mean intensity per channel over every pixel of every image. Images may
/// differ in size; each pixel counts once.
pub fn channel_means<T: Scalar>(dataset: &[Tensor<T>]) -> Result<ChannelStats> {
    if dataset.is_empty() {
        return Err(Error::invalid("channel_means needs at least one image"));
    }
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for image in dataset {
        let plane = rgb_plane(image)?;
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += image.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        count += plane;
    }
    let n = count as f64;
    Ok(ChannelStats {
        mu_r: sums[0] / n,
        mu_g: sums[1] / n,
        mu_b: sums[2] / n,
        sigma: DEFAULT_SIGMA,
    })
}

/// `(c - mu_c) / sigma` per channel.
pub fn normalize<T: Scalar>(image: &Tensor<T>, stats: &ChannelStats) -> Result<Tensor<T>> {
    stats.validate()?;
    let plane = rgb_plane(image)?;
    let sigma = T::of(stats.sigma);
    let mut out = image.clone();
    for (c, mu) in stats.means().into_iter().enumerate() {
        let mu = T::of(mu);
        out.data_mut()[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = (*v - mu) / sigma);
    }
    Ok(out)
}

/// Inverse of [`normalize`]: `x * sigma + mu_c`.
pub fn denormalize<T: Scalar>(image: &Tensor<T>, stats: &ChannelStats) -> Result<Tensor<T>> {
    stats.validate()?;
    let plane = rgb_plane(image)?;
    let sigma = T::of(stats.sigma);
    let mut out = image.clone();
    for (c, mu) in stats.means().into_iter().enumerate() {
        let mu = T::of(mu);
        out.data_mut()[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *v * sigma + mu);
    }
    Ok(out)
}
