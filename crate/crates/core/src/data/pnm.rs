use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAXVAL: u32 = 255;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self
                    .bytes
                    .get(self.pos)
                    .is_some_and(|&c| c != b'\n' && c != b'\r')
                {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::BadHeader(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::BadHeader(format!("{what} out of range")))
    }
}

/// Decodes binary P5 (`h×w×1`) or P6 (`h×w×3`), scaling samples by 1/255.
pub fn read_pnm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::UnsupportedFormat(
            String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        ));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => {
            return Err(Error::UnsupportedFormat(
                String::from_utf8_lossy(&bytes[..2]).into_owned(),
            ))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval != MAXVAL {
        return Err(Error::BadMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(Error::BadHeader("zero image dimension".into()));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::BadHeader("missing whitespace after maxval".into())),
    }
    let expected = width * height * channels;
    let payload = &bytes[h.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Tensor::from_vec(&[height, width, channels], data)
}

/// Encodes an `h×w×1` tensor as P5 or `h×w×3` as P6. Samples become
/// `round(v·255)` clamped to `[0, 255]`. Returns the number of bytes written.
pub fn write_pnm<W: Write>(t: &Tensor, mut sink: W) -> Result<u64> {
    let (h, w, c) = t.hwc()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let header = format!("{magic}\n{w} {h}\n{MAXVAL}\n");
    let payload: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
    sink.write_all(header.as_bytes())?;
    sink.write_all(&payload)?;
    Ok((header.len() + payload.len()) as u64)
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode_pnm(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_pnm(t, &mut out)?;
    Ok(out)
}
