//! Grayscale image I/O: binary PGM (P5) and PNG, 8 or 16 bit.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads a grayscale image as a `[1, H, W]` tensor scaled to `[0, 1]` by the
/// container's maximum code value.
pub fn load_image(path: &Path) -> Result<Tensor<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f64>> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only binary P5 is supported)",
            bytes[1] as char
        )))
    } else {
        Err(Error::UnsupportedFormat(
            "expected a PGM (P5) or PNG container".into(),
        ))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (field, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Decode {
                offset: pos,
                msg: format!("expected PGM {name}"),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Decode {
                offset: start,
                msg: format!("PGM {name} out of range"),
            })?;
    }
    let [w, h, maxval] = header;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Decode {
            offset: pos,
            msg: "expected single whitespace before raster".into(),
        });
    }
    pos += 1;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Decode {
            offset: pos,
            msg: format!("invalid maxval {maxval}"),
        });
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    if bytes.len() - pos < need {
        return Err(Error::Decode {
            offset: bytes.len(),
            msg: format!("raster truncated: need {need} bytes after offset {pos}"),
        });
    }
    let raster = &bytes[pos..pos + need];
    let scale = 1.0 / maxval as f64;
    let data = if bpp == 1 {
        raster.iter().map(|&v| v as f64 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Tensor::new([1, h, w], data)
}

fn decode_png(bytes: &[u8]) -> Result<Tensor<f64>> {
    let png_err = |e: png::DecodingError| Error::Decode {
        offset: 0,
        msg: format!("png: {e}"),
    };
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "PNG color type {:?} (grayscale required)",
            info.color_type
        )));
    }
    let depth = info.bit_depth;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let buf = &buf[..frame.buffer_size()];
    let data: Vec<f64> = match depth {
        png::BitDepth::Eight => buf.iter().map(|&v| v as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG bit depth {other:?} (8 or 16 required)"
            )))
        }
    };
    Tensor::new([1, h, w], data)
}

/// Encodes a `[1, H, W]` (or `[H, W]`) tensor with values in `[0, 1]` as a
/// 16-bit binary PGM. Values are clamped and rounded to the nearest code.
pub fn encode_pgm16(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(image)?;
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in image.data() {
        let code = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&code.to_be_bytes());
    }
    Ok(out)
}

/// 8-bit variant of [`encode_pgm16`].
pub fn encode_pgm8(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(image)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

fn plane_dims(image: &Tensor<f64>) -> Result<(usize, usize)> {
    match image.shape() {
        [1, h, w] | [h, w] => Ok((*h, *w)),
        s => Err(Error::shape("encode_pgm", format!("expected [1,H,W], got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_png(w: u32, h: u32, depth: png::BitDepth, color: png::ColorType, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut wr = enc.write_header().unwrap();
            wr.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn black_and_white_pgm() {
        let black = b"P5\n3 2\n255\n\0\0\0\0\0\0";
        let t = decode_image(black).unwrap();
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert!(t.data().iter().all(|v| *v == 0.0));
        let mut white = b"P5 2 2 255\n".to_vec();
        white.extend_from_slice(&[255; 4]);
        assert!(decode_image(&white).unwrap().data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn checkerboard_fixture() {
        // 4x2 checkerboard, 8-bit, with a header comment
        let mut bytes = b"P5\n# checker\n4 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 0, 255, 255, 0, 255, 0]);
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn sixteen_bit_pgm_scaling() {
        let mut bytes = b"P5\n2 1\n1023\n".to_vec();
        bytes.extend_from_slice(&1023u16.to_be_bytes());
        bytes.extend_from_slice(&0u16.to_be_bytes());
        assert_eq!(decode_image(&bytes).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn pgm_errors_carry_offsets() {
        match decode_image(b"P5\n4 4\n255\n\0\0").unwrap_err() {
            Error::Decode { offset, .. } => assert_eq!(offset, 13),
            e => panic!("{e}"),
        }
        match decode_image(b"P5\nx").unwrap_err() {
            Error::Decode { offset, .. } => assert_eq!(offset, 3),
            e => panic!("{e}"),
        }
        assert!(matches!(decode_image(b"P2\n1 1\n255\n0"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn png_gray_8_and_16() {
        let p8 = encode_png(2, 1, png::BitDepth::Eight, png::ColorType::Grayscale, &[0, 255]);
        assert_eq!(decode_image(&p8).unwrap().data(), &[0.0, 1.0]);
        let p16 = encode_png(1, 1, png::BitDepth::Sixteen, png::ColorType::Grayscale, &[0xff, 0xff]);
        assert_eq!(decode_image(&p16).unwrap().data(), &[1.0]);
        let rgb = encode_png(1, 1, png::BitDepth::Eight, png::ColorType::Rgb, &[1, 2, 3]);
        assert!(matches!(decode_image(&rgb), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn pgm16_roundtrip() {
        let t = Tensor::from_fn([1, 3, 4], |i| i as f64 / 11.0);
        let back = decode_image(&encode_pgm16(&t).unwrap()).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() <= 0.5 / 65535.0 + 1e-15);
        let back8 = decode_image(&encode_pgm8(&t).unwrap()).unwrap();
        assert!(back8.max_abs_diff(&t).unwrap() <= 0.5 / 255.0 + 1e-15);
    }
}
