//! Binary PPM (P6) images and PGM (P5) label maps.
//!
//! Image samples are scaled to `[0, 1]` on read. Label pixels are class ids
//! verbatim; 255 is the ignore label.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    /// Offset of the first payload byte.
    payload: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
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
            return Err(Error::format(
                pos as u64,
                format!("expected {} in header", ["width", "height", "maxval"][i]),
            ));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, "header number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos as u64, "expected a single whitespace byte before pixel data")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(2, "image extents must be >= 1"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(2, format!("maxval {maxval} unsupported; need 1..=255")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        payload: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, samples: usize) -> Result<&'a [u8]> {
    let need = header
        .width
        .checked_mul(header.height)
        .and_then(|p| p.checked_mul(samples))
        .ok_or_else(|| Error::format(2, "image extents overflow"))?;
    let have = bytes.len() - header.payload;
    if have < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {need} bytes, found {have}"),
        ));
    }
    Ok(&bytes[header.payload..header.payload + need])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let header = parse_header(bytes, b"P6")?;
    let px = payload(bytes, &header, 3)?;
    let (h, w) = (header.height, header.width);
    let scale = header.maxval as f32;
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, rgb) in px.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = rgb[c] as f32 / scale;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w)?, data)
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::arg(format!("PPM needs a (1,3,h,w) tensor, got {s}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let d = image.data();
    let plane = s.plane();
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let header = parse_header(bytes, b"P5")?;
    let px = payload(bytes, &header, 1)?;
    LabelMap::new(1, header.height, header.width, px.iter().map(|&v| v as u32).collect())
}

pub fn encode_pgm(labels: &LabelMap) -> Result<Vec<u8>> {
    let (n, h, w) = labels.shape();
    if n != 1 {
        return Err(Error::arg("PGM holds a single label map"));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in labels.data() {
        let v = u8::try_from(v).map_err(|_| Error::data(format!("label {v} does not fit in a PGM byte")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_ppm(image)?)?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_pgm(labels)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::IGNORE_LABEL;
    use proptest::prelude::*;

    #[test]
    fn single_red_pixel() {
        let t = decode_ppm(b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 1).unwrap());
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_and_small_maxval() {
        let t = decode_ppm(b"P6 # c\n2 # w\n1\n3\n\x03\x00\x00\x00\x03\x00").unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn ignore_value_survives() {
        let m = decode_pgm(b"P5\n2 1\n255\n\x01\xff").unwrap();
        assert_eq!(m.data(), &[1, IGNORE_LABEL]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        match decode_ppm(b"P5\n1 1\n255\n\x00") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_ppm(b"P6\n2 2\n255\n\x00\x00") {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 13);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        match decode_pgm(b"P5\n2 x\n255\n") {
            Err(Error::Format { offset: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn oversized_label_rejected() {
        let m = LabelMap::new(1, 1, 1, vec![300]).unwrap();
        assert!(encode_pgm(&m).is_err());
    }

    proptest! {
        #[test]
        fn image_round_trip_within_quantization(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
            let t = Tensor::<f32>::random(Shape::new(1, 3, h, w).unwrap(), seed, 0.0, 1.0).unwrap();
            let back = decode_ppm(&encode_ppm(&t).unwrap()).unwrap();
            for (a, b) in t.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }

        #[test]
        fn labels_round_trip(v in prop::collection::vec(0u32..256, 12)) {
            let m = LabelMap::new(1, 3, 4, v).unwrap();
            prop_assert_eq!(decode_pgm(&encode_pgm(&m).unwrap()).unwrap(), m);
        }
    }
}
