use std::path::{Path, PathBuf};

use super::{read_bytes, read_text, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset of the first payload byte.
    data_start: usize,
}

/// Parses `<magic> <w> <h> <maxval>` with `#` comments, ending at the single
/// whitespace byte before the payload.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Decode(format!(
            "expected {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Decode("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Decode(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Decode("header number out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Decode("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Decode(format!("empty image {width}x{height}")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval: u32::try_from(maxval).map_err(|_| Error::Decode("maxval out of range".into()))?,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, expected: usize) -> Result<&'a [u8]> {
    let data = &bytes[h.data_start..];
    if data.len() < expected {
        return Err(Error::Decode(format!(
            "truncated payload: {} of {expected} bytes",
            data.len()
        )));
    }
    if data.len() > expected {
        return Err(Error::Decode(format!(
            "{} trailing bytes after the payload",
            data.len() - expected
        )));
    }
    Ok(data)
}

/// Binary PPM with maxval 255 into a `[3,H,W]` tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes, b"P6")?;
    if h.maxval != 255 {
        return Err(Error::Decode(format!(
            "unsupported maxval {} (only 255)",
            h.maxval
        )));
    }
    let plane = h.width * h.height;
    let data = payload(bytes, &h, 3 * plane)?;
    let mut out = vec![0.0f32; 3 * plane];
    for (p, rgb) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = rgb[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h.height, h.width], out)
}

/// `[3,H,W]` tensor into binary PPM; values are clamped to `[0, 1]` and
/// rounded to the nearest of 256 levels.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, height, width) = image.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("PPM needs 3 channels, got {c}")));
    }
    let plane = height * width;
    let header = format!("P6\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + 3 * plane);
    out.extend_from_slice(header.as_bytes());
    let d = image.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    decode_ppm(&read_bytes(path)?).map_err(|e| match e {
        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_ppm(image)?)
}

/// A single-channel map quantized to 16 bits: `stored = round(value * scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm16 {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<u16>,
}

impl Pgm16 {
    /// Non-finite values and anything that rounds below zero store 0; large
    /// values saturate at 65535.
    pub fn quantize(height: usize, width: usize, values: &[f32], scale: f64) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!(
                "PGM scale must be positive, got {scale}"
            )));
        }
        let samples = values
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    (v as f64 * scale).round().clamp(0.0, u16::MAX as f64) as u16
                } else {
                    0
                }
            })
            .collect();
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn values(&self, scale: f64) -> Vec<f32> {
        self.samples
            .iter()
            .map(|&s| (s as f64 / scale) as f32)
            .collect()
    }
}

pub fn encode_pgm16(map: &Pgm16) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + 2 * map.samples.len());
    out.extend_from_slice(header.as_bytes());
    for s in &map.samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// 8- or 16-bit binary PGM.
pub fn decode_pgm16(bytes: &[u8]) -> Result<Pgm16> {
    let h = parse_header(bytes, b"P5")?;
    let n = h.width * h.height;
    let samples = match h.maxval {
        1..=255 => payload(bytes, &h, n)?.iter().map(|&b| b as u16).collect(),
        256..=65535 => payload(bytes, &h, 2 * n)?
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect(),
        m => return Err(Error::Decode(format!("unsupported maxval {m}"))),
    };
    Ok(Pgm16 {
        height: h.height,
        width: h.width,
        samples,
    })
}

/// `depth.pgm` keeps its scale in `depth.pgm.scale`.
pub fn scale_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}

/// Writes the map and its one-line scale sidecar.
pub fn save_pgm16_map(
    path: &Path,
    height: usize,
    width: usize,
    values: &[f32],
    scale: f64,
) -> Result<()> {
    let map = Pgm16::quantize(height, width, values, scale)?;
    write_atomic(path, &encode_pgm16(&map))?;
    write_atomic(&scale_sidecar_path(path), format!("{scale}\n").as_bytes())
}

/// Reads a map written by [`save_pgm16_map`]; without a sidecar the given
/// default scale applies.
pub fn load_pgm16_map(path: &Path, default_scale: f64) -> Result<(Pgm16, f64)> {
    let map = decode_pgm16(&read_bytes(path)?)?;
    let sidecar = scale_sidecar_path(path);
    let scale = if sidecar.is_file() {
        let text = read_text(&sidecar)?;
        text.trim()
            .parse::<f64>()
            .ok()
            .filter(|s| *s > 0.0 && s.is_finite())
            .ok_or_else(|| Error::Decode(format!("{}: bad scale {text:?}", sidecar.display())))?
    } else {
        default_scale
    };
    Ok((map, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_red_pixel() {
        let t = decode_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn ppm_round_trip_is_byte_identical() {
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        bytes.extend((0..18u8).map(|i| i.wrapping_mul(37)));
        assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn header_comments_and_errors() {
        let t = decode_ppm(b"P6 # made by hand\n1 # width\n1\n255 \x01\x02\x03").unwrap();
        assert_eq!(t.data()[2], 3.0 / 255.0);
        assert!(decode_ppm(b"P6\n2 1\n255\n\x00\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n255").is_err());
        assert!(decode_ppm(b"P6\n0 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n1 1\n255\n\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn pgm16_round_trip() {
        let values = [0.0, 1.5, 2.25, f32::INFINITY, 1e9, -0.2];
        let map = Pgm16::quantize(2, 3, &values, 256.0).unwrap();
        let back = decode_pgm16(&encode_pgm16(&map)).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.values(256.0)[..3], [0.0, 1.5, 2.25]);
        assert_eq!(back.samples[3..], [0, 65535, 0]);
        assert!(decode_pgm16(b"P5\n1 1\n255\n\x07").unwrap().samples == vec![7]);
    }
}
