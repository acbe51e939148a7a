//! 8-bit PNG and binary PPM/PGM images.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tasks::data::ImageSignal;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<ImageSignal> {
    ImageSignal::new(
        width,
        height,
        channels,
        bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

/// Decodes `P6` (RGB) or `P5` (grey) with a maximum value of 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageSignal> {
    const WHAT: &str = "ppm";
    let mut pos = 0usize;
    let skip_space = |pos: &mut usize| {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' => *pos += 1,
                _ => break,
            }
        }
    };
    let number = |pos: &mut usize| -> Result<usize> {
        skip_space(pos);
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(WHAT, start as u64, "expected a decimal number"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(WHAT, start as u64, "number out of range"))
    };
    if bytes.len() < 2 {
        return Err(Error::format(
            WHAT,
            0,
            format!("missing magic: need 2 bytes, have {}", bytes.len()),
        ));
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(Error::format(WHAT, 0, "expected magic P6 or P5")),
    };
    pos += 2;
    let width = number(&mut pos)?;
    let height = number(&mut pos)?;
    let max_at = pos;
    let maxval = number(&mut pos)?;
    if maxval != 255 {
        return Err(Error::format(
            WHAT,
            max_at as u64,
            format!("unsupported bit depth: maximum value {maxval}, only 255 is supported"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(WHAT, 2, "zero image dimension"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(
            WHAT,
            pos as u64,
            "expected one whitespace byte before pixel data",
        ));
    }
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(WHAT, 2, "image dimensions overflow"))?;
    let have = bytes.len() - pos;
    if have < need {
        return Err(Error::format(
            WHAT,
            bytes.len() as u64,
            format!("truncated pixel data: missing {} bytes", need - have),
        ));
    }
    from_bytes(width, height, channels, &bytes[pos..pos + need])
}

pub fn encode_ppm(img: &ImageSignal) -> Result<Vec<u8>> {
    let magic = match img.channels {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::InvalidArgument(format!("ppm cannot store {c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.values.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageSignal> {
    const WHAT: &str = "png";
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::format(WHAT, 0, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(WHAT, 0, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(WHAT, 0, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            WHAT,
            24,
            format!(
                "unsupported bit depth {:?}; only 8-bit images are supported",
                info.bit_depth
            ),
        ));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::format(WHAT, 25, format!("unsupported colour type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let row = w * channels;
    let mut data = Vec::with_capacity(row * h);
    for y in 0..h {
        data.extend_from_slice(&buf[y * info.line_size..y * info.line_size + row]);
    }
    from_bytes(w, h, channels, &data)
}

pub fn encode_png(img: &ImageSignal) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::InvalidArgument(format!("png cannot store {c} channels"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let data: Vec<u8> = img.values.iter().map(|&v| quantize(v)).collect();
        w.write_image_data(&data)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.finish().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(out)
}

/// Reads PNG or PPM, chosen by the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageSignal> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_ppm(&bytes)
    }
}

/// Writes PNG when the extension is `.png`, otherwise PPM/PGM.
pub fn save_image(path: impl AsRef<Path>, img: &ImageSignal) -> Result<()> {
    let path = path.as_ref();
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(img)? } else { encode_ppm(img)? };
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}
