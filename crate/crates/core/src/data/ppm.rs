//! Binary P6 portable-pixmap I/O. Values map between the internal [-1, 1]
//! domain and 8-bit [0, 255] by an affine map with round-half-away-from-zero.

use std::fs;
use std::path::Path;

use stochsr_tensor::Tensor;

use crate::data::resample::image_dims;
use crate::error::{Error, Result};

pub fn pixel_to_byte(v: f32) -> u8 {
    let scaled = (v as f64 + 1.0) / 2.0 * 255.0;
    // Round half away from zero; the scaled domain is nonnegative.
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn byte_to_pixel(b: u8) -> f32 {
    (b as f32 / 255.0) * 2.0 - 1.0
}

pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = image_dims(img)?;
    if c != 3 {
        return Err(Error::Data(format!(
            "P6 stores exactly 3 channels, image has {c}"
        )));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..3 {
            out.push(pixel_to_byte(img.data()[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let fail = |pos: usize, msg: &str| -> Error {
        Error::Data(format!("ppm parse error at byte {pos}: {msg}"))
    };

    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(fail(0, "missing P6 magic"));
    }
    let mut pos = 2usize;

    let next_token = |pos: &mut usize| -> Result<(usize, usize)> {
        // Skip whitespace and '#' comment lines.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(fail(start, "expected a decimal field"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| fail(start, "unparsable decimal field"))
    };

    let (w, _) = next_token(&mut pos)?;
    let (h, _) = next_token(&mut pos)?;
    let (maxval, maxval_at) = next_token(&mut pos)?;
    if maxval != 255 {
        return Err(fail(maxval_at, &format!("max value must be 255, got {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail(pos, "expected single whitespace before payload"));
    }
    pos += 1;

    let expected = w * h * 3;
    if bytes.len() - pos < expected {
        return Err(fail(
            bytes.len(),
            &format!(
                "payload truncated: need {expected} bytes from offset {pos}, have {}",
                bytes.len() - pos
            ),
        ));
    }
    let payload = &bytes[pos..pos + expected];
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = byte_to_pixel(payload[i * 3 + ch]);
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

pub fn write_image(img: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ppm(img)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let bytes =
        fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    decode_ppm(&bytes)
}
