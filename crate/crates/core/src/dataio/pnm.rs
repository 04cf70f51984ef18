//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use super::ImageU8;
use crate::error::{DataError, Result};

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    payload_at: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, DataError> {
    let magic = bytes.get(..2).ok_or(DataError::Truncated {
        what: "PNM header",
        expected: 2,
        actual: bytes.len() as u64,
    })?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(DataError::UnsupportedMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DataError::Header("unexpected end of header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos || pos - start > 10 {
            return Err(DataError::Header(format!(
                "expected a number at byte {start}"
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| DataError::Header(format!("bad number at byte {start}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DataError::Header("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::UnsupportedMaxval(
            maxval.min(u32::MAX as u64) as u32
        ));
    }
    Ok(Header {
        channels,
        width: width as usize,
        height: height as usize,
        payload_at: pos,
    })
}

/// Decode a P5/P6 image; P6 is converted from interleaved RGB to planar.
pub fn parse_pnm(bytes: &[u8]) -> Result<ImageU8, DataError> {
    let h = parse_header(bytes)?;
    let need = (h.channels as u64)
        .checked_mul(h.width as u64)
        .and_then(|n| n.checked_mul(h.height as u64))
        .ok_or_else(|| DataError::Header(format!("image {}x{} is too large", h.width, h.height)))?;
    let have = (bytes.len() - h.payload_at) as u64;
    if have < need {
        return Err(DataError::Truncated {
            what: "PNM payload",
            expected: need,
            actual: have,
        });
    }
    let payload = &bytes[h.payload_at..h.payload_at + need as usize];
    let plane = h.width * h.height;
    let data = if h.channels == 1 {
        payload.to_vec()
    } else {
        let mut planar = vec![0u8; payload.len()];
        for (i, px) in payload.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * plane + i] = px[c];
            }
        }
        planar
    };
    Ok(ImageU8::new(data, h.channels, h.height, h.width).expect("sizes checked"))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    Ok(parse_pnm(&fs::read(path)?)?)
}

/// Encode as P5 (1 channel) or P6 (3 channels).
pub fn encode_pnm(image: &ImageU8) -> Result<Vec<u8>> {
    let (c, h, w) = image.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(crate::Error::invalid(format!(
                "PNM holds 1 or 3 channels, image has {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    if c == 1 {
        out.extend_from_slice(image.data());
    } else {
        for y in 0..h {
            for x in 0..w {
                out.extend((0..3).map(|ch| image.get(ch, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn save_image(image: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}
