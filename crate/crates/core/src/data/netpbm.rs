//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(format!("missing {what} in header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(format!("{what} out of range")))
    }
}

/// Decode a P5 or P6 buffer to a `[C, H, W]` tensor with values `byte / 255`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err("bad magic, expected P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(format_err("bad magic, expected P5 or P6"));
    }
    let w = cur.number("width")?;
    let h = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(format!("maxval {maxval} unsupported, expected 255")));
    }
    if w == 0 || h == 0 {
        return Err(format_err("empty image"));
    }
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("missing whitespace after maxval"));
    }
    let start = cur.pos + 1;
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| format_err("image extent overflows"))?;
    let payload = bytes
        .get(start..)
        .filter(|p| p.len() >= n)
        .ok_or_else(|| format_err(format!("truncated payload, expected {n} bytes")))?;
    let mut out = Tensor::zeros(&[channels, h, w]);
    let data = out.data_mut();
    for p in 0..h * w {
        for c in 0..channels {
            data[c * h * w + p] = payload[p * channels + c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Encode a `[1, H, W]` (P5) or `[3, H, W]` (P6) tensor. Bytes are
/// `floor(v * 255 + 0.5)` after clamping to [0, 1].
pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match t.shape() {
        &[c, h, w] if c == 1 || c == 3 => (c, h, w),
        s => return Err(Error::shape(format!("cannot encode tensor of shape {s:?} as an image"))),
    };
    if !t.all_finite() {
        return Err(Error::Data("image contains non-finite values".into()));
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    let data = t.data();
    for p in 0..h * w {
        for ch in 0..c {
            let v = data[ch * h * w + p].clamp(0.0, 1.0) as f64;
            out.push((v * 255.0 + 0.5).floor() as u8);
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Read a single-channel mask, binarized at 128.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let t = read_image(path.as_ref())?;
    if t.shape()[0] != 1 {
        return Err(Error::Format(format!("{}: mask must be P5", path.as_ref().display())));
    }
    Ok(t.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 }))
}

pub fn write_image(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comment() {
        let mut b = b"P5 # c\n2 # w\n1\n255\n".to_vec();
        b.extend([0, 255]);
        let t = decode(&b).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_trailing_whitespace_is_rejected() {
        assert!(decode(b"P5\n1 1\n255").is_err());
    }
}
