use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source coordinate and blend weight for each output index, sampling at
/// pixel centers.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resampling of every channel of a `[C,H,W]` tensor.
pub fn resize_bilinear(image: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = image.dims3()?;
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("cannot resize to {height}x{width}")));
    }
    if (h, w) == (height, width) {
        return Ok(image.clone());
    }
    let ty = taps(h, height);
    let tx = taps(w, width);
    let src = image.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_vec(&[c, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::full(&[2, 5, 7], 0.3f32).unwrap();
        let r = resize_bilinear(&t, 9, 4).unwrap();
        assert_eq!(r.shape(), &[2, 9, 4]);
        assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn upsampled_ramp_stays_in_range() {
        let t = Tensor::from_vec(&[1, 1, 2], vec![0.0f32, 1.0]).unwrap();
        let r = resize_bilinear(&t, 1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
        let same = resize_bilinear(&t, 1, 2).unwrap();
        assert_eq!(same, t);
        assert!(resize_bilinear(&t, 0, 2).is_err());
    }
}
