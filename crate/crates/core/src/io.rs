//! Binary PPM (P6, maxval 255) reading and writing.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest 8-bit level of a value in `[0, 1]`.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest multiple of 1/255.
pub fn quantize(image: &Tensor) -> Tensor {
    image.map(|v| to_u8(v) as f32 / 255.0)
}

/// Encodes a `[3, H, W]` (or `[1, 3, H, W]`) image in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    let (c, h, w) = match *s {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => return Err(Error::contract("ppm", format!("expected a [3, H, W] image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::Dimension {
            op: "ppm",
            axis: "channels",
            expected: 3,
            got: c,
        });
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    let plane = h * w;
    out.reserve(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            out.push(to_u8(d[ch * plane + i]));
        }
    }
    Ok(out)
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b).map_err(|e| Error::format("ppm", e.to_string()))? == 0 {
            break;
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut line = Vec::new();
                r.read_until(b'\n', &mut line)
                    .map_err(|e| Error::format("ppm", e.to_string()))?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    if tok.is_empty() {
        return Err(Error::format("ppm", "truncated header"));
    }
    String::from_utf8(tok).map_err(|_| Error::format("ppm", "non-ASCII header"))
}

/// Decodes a P6 stream into a `[3, H, W]` tensor in `[0, 1]`.
pub fn decode_ppm<R: Read>(reader: R) -> Result<Tensor> {
    let mut r = BufReader::new(reader);
    if header_token(&mut r)? != "P6" {
        return Err(Error::format("ppm", "not a binary PPM (P6)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(&mut r)?
            .parse()
            .map_err(|_| Error::format("ppm", format!("bad {what}")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if max != 255 {
        return Err(Error::format("ppm", format!("unsupported maxval {max}")));
    }
    let plane = w * h;
    let mut raw = vec![0u8; 3 * plane];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format("ppm", "truncated pixel data"))?;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = raw[3 * i + ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode_ppm(image)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_images_round_trip() {
        let data: Vec<f32> = (0..3 * 5 * 4).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let img = Tensor::new(&[3, 5, 4], data).unwrap();
        let back = decode_ppm(&encode_ppm(&img).unwrap()[..]).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.shape(), &[3, 5, 4]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let img = decode_ppm(&bytes[..]).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn malformed_input_rejected() {
        assert!(decode_ppm(&b"P3\n1 1\n255\n"[..]).is_err());
        assert!(decode_ppm(&b"P6\n2 2\n255\n\x00\x00"[..]).is_err());
        assert!(encode_ppm(&Tensor::zeros(&[1, 2, 2])).is_err());
    }
}
