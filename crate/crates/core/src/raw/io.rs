//! `.rgg4` containers, JSON metadata sidecars and binary PGM mosaics.
//!
//! `.rgg4` layout (all little-endian):
//!
//! ```text
//! "RGG4" | version u16 | plane_width u32 | plane_height u32 | R | Gr | Gb | B
//! ```
//!
//! where each plane is `plane_width * plane_height` row-major `f32` values.
//! Camera metadata lives next to the container in `<name>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    normalize_raw, orient, CameraMeta, CfaPattern, Orientation, RawFrame, RawMosaic, CHANNELS,
};
use crate::error::{Error, Result};
use crate::plane::Plane;

pub const RGG4_MAGIC: &[u8; 4] = b"RGG4";
pub const RGG4_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// Serialize the planes of `frame` into the `.rgg4` byte layout.
pub fn encode_rgg4(frame: &RawFrame) -> Vec<u8> {
    let (w, h) = frame.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + CHANNELS * w * h * 4);
    out.extend_from_slice(RGG4_MAGIC);
    out.extend_from_slice(&RGG4_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for plane in frame.planes() {
        for v in plane.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse `.rgg4` bytes into four planes.
pub fn decode_rgg4(bytes: &[u8]) -> Result<[Plane; CHANNELS]> {
    if bytes.len() < 4 || &bytes[..4] != RGG4_MAGIC {
        return Err(Error::format("bad magic, expected RGG4"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RGG4_VERSION {
        return Err(Error::format(format!(
            "unsupported version {version}, expected {RGG4_VERSION}"
        )));
    }
    let w = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let plane_len = w
        .checked_mul(h)
        .ok_or_else(|| Error::format("plane dimensions overflow"))?;
    let expected = plane_len
        .checked_mul(CHANNELS * 4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format("plane dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(format!(
            "truncated payload: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::format(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let mut planes = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let chunk = &payload[c * plane_len * 4..(c + 1) * plane_len * 4];
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        planes.push(Plane::new(w, h, data)?);
    }
    Ok(planes.try_into().expect("four planes"))
}

/// Metadata sidecar as stored on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub camera_id: String,
    pub black_level: [u32; CHANNELS],
    pub white_level: u32,
    pub orientation: Orientation,
    pub iso: Option<u32>,
    pub cfa_pattern: CfaPattern,
}

impl Sidecar {
    pub fn meta(&self) -> CameraMeta {
        CameraMeta {
            camera_id: self.camera_id.clone(),
            black_level: self.black_level,
            white_level: self.white_level,
            orientation: self.orientation,
            iso: self.iso,
        }
    }

    /// Sidecar for a packed frame; packed planes are always in RGGB order.
    pub fn for_frame(meta: &CameraMeta) -> Self {
        Self {
            camera_id: meta.camera_id.clone(),
            black_level: meta.black_level,
            white_level: meta.white_level,
            orientation: meta.orientation,
            iso: meta.iso,
            cfa_pattern: CfaPattern::Rggb,
        }
    }
}

/// `<name>.json` next to `<name>.rgg4`.
pub fn sidecar_path(frame_path: &Path) -> PathBuf {
    frame_path.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path)?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::metadata(format!("{}: {e}", path.display())))?;
    sidecar.meta().validate()?;
    Ok(sidecar)
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write `frame` to `path` plus its metadata sidecar.
pub fn write_frame(frame: &RawFrame, path: &Path) -> Result<()> {
    fs::write(path, encode_rgg4(frame))?;
    write_sidecar(&sidecar_path(path), &Sidecar::for_frame(&frame.meta))
}

/// Read a `.rgg4` container and its sidecar.
pub fn read_frame(path: &Path) -> Result<RawFrame> {
    let planes = decode_rgg4(&fs::read(path)?)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::metadata(format!(
            "missing metadata sidecar {}",
            side.display()
        )));
    }
    let sidecar = read_sidecar(&side)?;
    if sidecar.cfa_pattern != CfaPattern::Rggb {
        return Err(Error::metadata(
            "packed frames must declare cfa_pattern RGGB",
        ));
    }
    RawFrame::new(planes, sidecar.meta()).map_err(|e| Error::format(e.to_string()))
}

/// Decoded binary PGM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

/// Parse a binary (`P5`) PGM. Samples are one byte when `maxval < 256`,
/// otherwise two bytes big-endian.
pub fn read_pgm(bytes: &[u8]) -> Result<PgmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("bad magic, expected binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
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
                None => return Err(Error::format("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format("PGM header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format("malformed PGM header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("PGM maxval {maxval} out of range")));
    }
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < n * bytes_per_sample {
        return Err(Error::format(format!(
            "truncated PGM payload: {} bytes, expected {}",
            payload.len(),
            n * bytes_per_sample
        )));
    }
    let data: Vec<u16> = if bytes_per_sample == 1 {
        payload[..n].iter().map(|&b| b as u16).collect()
    } else {
        payload[..2 * n]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    };
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

/// Encode a binary PGM.
pub fn write_pgm(image: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, image.maxval).into_bytes();
    if image.maxval < 256 {
        out.extend(image.data.iter().map(|&v| v as u8));
    } else {
        for v in &image.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// Read a PGM mosaic with its sidecar, normalize and bring it upright.
pub fn ingest_pgm(pgm_path: &Path, sidecar_path: &Path) -> Result<RawFrame> {
    let pgm = read_pgm(&fs::read(pgm_path)?)?;
    let sidecar = read_sidecar(sidecar_path)?;
    let mosaic = RawMosaic::new(
        pgm.width,
        pgm.height,
        pgm.data,
        pgm.maxval,
        sidecar.cfa_pattern,
    )?;
    let frame = normalize_raw(&mosaic, &sidecar.meta())?;
    Ok(orient(&frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> RawFrame {
        let planes: [Plane; 4] = std::array::from_fn(|c| {
            Plane::from_fn(3, 2, |x, y| ((c * 7 + x * 3 + y) % 11) as f32 / 11.0 + 1e-7)
        });
        RawFrame::new(
            planes,
            CameraMeta {
                camera_id: "unit".into(),
                black_level: [64, 65, 66, 67],
                white_level: 1023,
                orientation: Orientation::FlipV,
                iso: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn rgg4_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.rgg4");
        let f = frame();
        write_frame(&f, &path).unwrap();
        assert!(dir.path().join("f.json").exists());
        let g = read_frame(&path).unwrap();
        assert_eq!(g, f);
        for c in 0..4 {
            let a: Vec<u32> = f.plane(c).as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = g.plane(c).as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rgg4_header_layout() {
        let bytes = encode_rgg4(&frame());
        assert_eq!(&bytes[..4], b"RGG4");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[3, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 14 + 4 * 6 * 4);
    }

    #[test]
    fn rgg4_rejects_malformed() {
        let good = encode_rgg4(&frame());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_rgg4(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_rgg4(&v2), Err(Error::Format(m)) if m.contains("version")));
        assert!(
            matches!(decode_rgg4(&good[..good.len() - 1]), Err(Error::Format(m)) if m.contains("truncated"))
        );
        assert!(decode_rgg4(&good[..8]).is_err());
    }

    #[test]
    fn sidecar_rejects_unknown_fields_and_bad_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(
            &p,
            r#"{"camera_id":"a","black_level":[1,1,1,1],"white_level":9,"orientation":"Normal","iso":null,"cfa_pattern":"RGGB","extra":1}"#,
        )
        .unwrap();
        assert!(matches!(read_sidecar(&p), Err(Error::Metadata(_))));
        fs::write(
            &p,
            r#"{"camera_id":"a","black_level":[1,1,9,1],"white_level":9,"orientation":"Normal","iso":null,"cfa_pattern":"RGGB"}"#,
        )
        .unwrap();
        assert!(matches!(read_sidecar(&p), Err(Error::Metadata(_))));
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let img = PgmImage {
            width: 4,
            height: 2,
            maxval: 1023,
            data: vec![0, 1, 256, 1023, 64, 65, 66, 512],
        };
        assert_eq!(read_pgm(&write_pgm(&img)).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n4 2\n# depth\n1023\n".to_vec();
        commented.extend(img.data.iter().flat_map(|v| v.to_be_bytes()));
        assert_eq!(read_pgm(&commented).unwrap(), img);

        let small = PgmImage {
            width: 2,
            height: 2,
            maxval: 255,
            data: vec![0, 9, 200, 255],
        };
        assert_eq!(write_pgm(&small).len(), "P5\n2 2\n255\n".len() + 4);
        assert_eq!(read_pgm(&write_pgm(&small)).unwrap(), small);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(read_pgm(b"RGG4....").is_err());
        assert!(read_pgm(b"P5\n2 2\n").is_err());
        assert!(read_pgm(b"P5\n2 2\n1023\n\x00\x01").is_err());
    }

    #[test]
    fn pgm_ingestion_matches_normalize() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u16> = (0..64u16).map(|i| (i * 37) % 1024).collect();
        let img = PgmImage {
            width: 8,
            height: 8,
            maxval: 1023,
            data: data.clone(),
        };
        let pgm = dir.path().join("m.pgm");
        fs::write(&pgm, write_pgm(&img)).unwrap();
        let side = Sidecar {
            camera_id: "cam".into(),
            black_level: [64; 4],
            white_level: 1023,
            orientation: Orientation::Normal,
            iso: Some(400),
            cfa_pattern: CfaPattern::Gbrg,
        };
        let sp = dir.path().join("m.json");
        write_sidecar(&sp, &side).unwrap();
        let ingested = ingest_pgm(&pgm, &sp).unwrap();
        let mosaic = RawMosaic::new(8, 8, data, 1023, CfaPattern::Gbrg).unwrap();
        let direct = normalize_raw(&mosaic, &side.meta()).unwrap();
        assert_eq!(ingested, direct);
    }
}
