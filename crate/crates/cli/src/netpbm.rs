//! Binary PGM (`P5`) and PPM (`P6`) with 8-bit samples.

use crate::error::CliError;

pub fn pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Decoded image: `channels` is 1 for PGM and 3 for PPM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

pub fn decode(bytes: &[u8]) -> Result<Image, CliError> {
    let bad = |m: &str| CliError::Data(format!("netpbm: {m}"));
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token().as_deref() {
        Some("P5") => 1,
        Some("P6") => 3,
        _ => return Err(bad("expected a binary P5 or P6 header")),
    };
    let mut num = |what: &str| -> Result<usize, CliError> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("missing {what}")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    let n = width * height * channels;
    if data.len() != n {
        return Err(bad(&format!("expected {n} pixel bytes, found {}", data.len())));
    }
    Ok(Image {
        width,
        height,
        channels,
        pixels: data.to_vec(),
    })
}

/// Maps values linearly so the minimum becomes 0 and the maximum 255;
/// a constant input maps to 0.
pub fn min_max_bytes(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}
