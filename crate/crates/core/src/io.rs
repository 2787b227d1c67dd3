//! File formats: FTEN tensors, binary PGM/PPM.
//!
//! FTEN layout (all little-endian):
//!
//! ```text
//! "FTEN" | u32 version = 1 | u32 ndims | ndims x u32 dims | f32 payload (C-order)
//! ```
//!
//! Feature maps are 3-d tensors `[height, width, depth]`; saliency sidecars
//! are 2-d `[height, width]`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{dim_mismatch, Error, Result};
use crate::map::{FeatureMap, Mask, RgbImage, SaliencyMap};

pub const FTEN_MAGIC: &[u8; 4] = b"FTEN";
pub const FTEN_VERSION: u32 = 1;

/// Raw decoded FTEN contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let end = *pos + 4;
    let chunk = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Truncated(format!("header ends at byte {}", bytes.len())))?;
    *pos = end;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RawTensor> {
    if bytes.len() < 4 || &bytes[..4] != FTEN_MAGIC {
        return Err(Error::BadMagic { expected: "FTEN" });
    }
    let mut pos = 4;
    let version = read_u32(bytes, &mut pos)?;
    if version != FTEN_VERSION {
        return Err(Error::BadVersion(version));
    }
    let ndims = read_u32(bytes, &mut pos)? as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(read_u32(bytes, &mut pos)? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| dim_mismatch("tensor element count overflows"))?;
    let payload = &bytes[pos..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(dim_mismatch(format!(
            "payload has {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            count.saturating_mul(4)
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawTensor { dims, data })
}

pub fn encode_tensor(dims: &[usize], data: impl IntoIterator<Item = f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * dims.len());
    out.extend_from_slice(FTEN_MAGIC);
    out.extend_from_slice(&FTEN_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn feature_map_from_raw(raw: RawTensor) -> Result<FeatureMap> {
    if raw.dims.len() != 3 {
        return Err(dim_mismatch(format!(
            "feature tensor must have 3 dims, got {:?}",
            raw.dims
        )));
    }
    if let Some((index, &value)) = raw.data.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeFeature { index, value });
    }
    let data = raw.data.iter().map(|&v| v as f64).collect();
    FeatureMap::new(raw.dims[0], raw.dims[1], raw.dims[2], data)
}

pub fn encode_feature_map(f: &FeatureMap) -> Vec<u8> {
    encode_tensor(
        &[f.height(), f.width(), f.depth()],
        f.data().iter().map(|&v| v as f32),
    )
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<FeatureMap> {
    let bytes = read_file(path)?;
    decode_tensor(&bytes)
        .and_then(feature_map_from_raw)
        .map_err(|e| e.context(path.display().to_string()))
}

pub fn save_tensor(f: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_feature_map(f))
}

/// Maps `[0, 1]` to `0..=255` with round-half-up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_map_pgm(map: &SaliencyMap) -> Vec<u8> {
    let pixels: Vec<u8> = map.values().iter().map(|&v| quantize(v)).collect();
    encode_pgm(map.height(), map.width(), &pixels)
}

pub fn encode_map_ften(map: &SaliencyMap) -> Vec<u8> {
    encode_tensor(
        &[map.height(), map.width()],
        map.values().iter().map(|&v| v as f32),
    )
}

/// Writes `map` as PGM at `path`; with `emit_ften` also writes the full
/// precision values next to it with the `.ften` extension.
pub fn save_map(map: &SaliencyMap, path: &Path, emit_ften: bool) -> Result<()> {
    write_atomic(path, &encode_map_pgm(map))?;
    if emit_ften {
        write_atomic(&path.with_extension("ften"), &encode_map_ften(map))?;
    }
    Ok(())
}

/// Decoded PNM raster (P5 or P6, 8-bit samples).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub samples: Vec<u8>,
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Pnm> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::BadMagic { expected: "P5/P6" }),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Truncated("pnm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::BadImage(format!("bad header field at byte {start}")))?;
    }
    let [width, height, maxval] = fields;
    if !(1..=255).contains(&maxval) {
        return Err(Error::BadImage(format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::BadImage("missing whitespace after header".into()));
    }
    pos += 1;
    let need = width * height * channels;
    let samples = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Truncated(format!("pnm payload needs {need} bytes")))?
        .to_vec();
    Ok(Pnm {
        channels,
        height,
        width,
        maxval: maxval as u16,
        samples,
    })
}

/// Loads a single-channel map from PGM (scaled by maxval) or a 2-d FTEN.
pub fn load_map(path: &Path) -> Result<SaliencyMap> {
    let bytes = read_file(path)?;
    let ctx = |e: Error| e.context(path.display().to_string());
    if bytes.starts_with(FTEN_MAGIC) {
        let raw = decode_tensor(&bytes).map_err(ctx)?;
        if raw.dims.len() != 2 {
            return Err(ctx(dim_mismatch(format!(
                "map tensor must have 2 dims, got {:?}",
                raw.dims
            ))));
        }
        let values = raw.data.iter().map(|&v| v as f64).collect();
        return SaliencyMap::clamped(raw.dims[0], raw.dims[1], values).map_err(ctx);
    }
    let pnm = decode_pnm(&bytes).map_err(ctx)?;
    if pnm.channels != 1 {
        return Err(ctx(Error::BadImage("expected a grayscale PGM".into())));
    }
    let scale = pnm.maxval as f64;
    let values = pnm.samples.iter().map(|&s| s as f64 / scale).collect();
    SaliencyMap::clamped(pnm.height, pnm.width, values).map_err(ctx)
}

/// Loads a PGM and marks every non-zero pixel.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let bytes = read_file(path)?;
    let pnm = decode_pnm(&bytes).map_err(|e| e.context(path.display().to_string()))?;
    if pnm.channels != 1 {
        return Err(Error::BadImage("expected a grayscale PGM mask".into()));
    }
    Mask::new(
        pnm.height,
        pnm.width,
        pnm.samples.iter().map(|&s| s > 0).collect(),
    )
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_atomic(path, &encode_pgm(mask.height(), mask.width(), &pixels))
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = read_file(path)?;
    let pnm = decode_pnm(&bytes).map_err(|e| e.context(path.display().to_string()))?;
    if pnm.channels != 3 {
        return Err(Error::BadImage("expected a P6 PPM".into()));
    }
    let samples = if pnm.maxval == 255 {
        pnm.samples
    } else {
        pnm.samples
            .iter()
            .map(|&s| ((s as u32 * 255 + pnm.maxval as u32 / 2) / pnm.maxval as u32) as u8)
            .collect()
    };
    RgbImage::new(pnm.height, pnm.width, samples)
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn save_ppm(image: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ppm(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ften(dims: &[usize], data: &[f32]) -> Vec<u8> {
        encode_tensor(dims, data.iter().copied())
    }

    #[test]
    fn decodes_small_feature_map() {
        let bytes = ften(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let f = feature_map_from_raw(decode_tensor(&bytes).unwrap()).unwrap();
        assert_eq!((f.height(), f.width(), f.depth()), (2, 2, 1));
        assert_eq!(f.value(0, 0), 1.0);
        assert_eq!(f.value(3, 0), 4.0);
    }

    #[test]
    fn negative_payload_rejected() {
        let bytes = ften(&[2, 2, 1], &[1.0, -1.0, 3.0, 4.0]);
        let err = feature_map_from_raw(decode_tensor(&bytes).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NegativeFeature { index: 1, .. }));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            decode_tensor(b"FTEX\x01\0\0\0").unwrap_err(),
            Error::BadMagic { .. }
        ));
        let mut bytes = ften(&[1], &[1.0]);
        bytes[4] = 2;
        assert!(matches!(decode_tensor(&bytes).unwrap_err(), Error::BadVersion(2)));
        let mut bytes = ften(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        bytes.pop();
        assert!(matches!(decode_tensor(&bytes).unwrap_err(), Error::DimMismatch(_)));
        assert!(matches!(
            decode_tensor(b"FTEN\x01\0\0\0\x03\0").unwrap_err(),
            Error::Truncated(_)
        ));
    }

    #[test]
    fn pgm_quantization() {
        let m = SaliencyMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let bytes = encode_map_pgm(&m);
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 255]);
        assert_eq!(quantize(0.5), 128);
        let c = SaliencyMap::constant(2, 2, 1.0);
        let bytes = encode_map_pgm(&c);
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[255; 4]);
    }

    #[test]
    fn pnm_header_with_comments() {
        let bytes = b"P5\n# made by hand\n3 1\n# depth\n255\n\x00\x80\xff";
        let p = decode_pnm(bytes).unwrap();
        assert_eq!((p.width, p.height, p.channels), (3, 1, 1));
        assert_eq!(p.samples, vec![0, 128, 255]);
    }

    #[test]
    fn map_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SaliencyMap::new(1, 3, vec![0.25, 0.5, 1.0]).unwrap();
        let path = dir.path().join("m.pgm");
        save_map(&m, &path, true).unwrap();
        let pgm = load_map(&path).unwrap();
        assert_eq!(pgm.values(), &[64.0 / 255.0, 128.0 / 255.0, 1.0]);
        let full = load_map(&path.with_extension("ften")).unwrap();
        assert_eq!(full, m);
    }

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(2, 3, |r, c| [r as u8, c as u8, 7]);
        let path = dir.path().join("a.ppm");
        save_ppm(&img, &path).unwrap();
        assert_eq!(load_ppm(&path).unwrap(), img);
    }

    #[test]
    fn missing_file_reported() {
        let err = load_tensor(Path::new("/nonexistent/x.ften")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
