//! RAW mosaics, packed 4-plane frames and their on-disk formats.
//!
//! A [`RawMosaic`] holds integer photosite values exactly as the sensor
//! delivered them. [`normalize_raw`] subtracts the per-channel black level,
//! divides by the dynamic range and packs the 2×2 CFA tiles into four
//! half-resolution planes in canonical `R, Gr, Gb, B` order, giving a
//! [`RawFrame`].

mod io;
mod resample;

pub use io::{
    decode_rgg4, encode_rgg4, ingest_pgm, read_frame, read_pgm, read_sidecar, sidecar_path,
    write_frame, write_pgm, write_sidecar, PgmImage, Sidecar, RGG4_MAGIC, RGG4_VERSION,
};
pub use resample::center_crop_resize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Number of packed planes.
pub const CHANNELS: usize = 4;

/// Canonical plane names, in storage order.
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["R", "Gr", "Gb", "B"];

/// Colour filter array layout of the top-left 2×2 tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CfaPattern {
    #[serde(rename = "RGGB")]
    Rggb,
    #[serde(rename = "BGGR")]
    Bggr,
    #[serde(rename = "GRBG")]
    Grbg,
    #[serde(rename = "GBRG")]
    Gbrg,
}

impl CfaPattern {
    /// `(dx, dy)` offset inside the 2×2 tile for each canonical channel
    /// `R, Gr, Gb, B`. `Gr` is the green sharing a row with red.
    pub fn offsets(self) -> [(usize, usize); CHANNELS] {
        match self {
            CfaPattern::Rggb => [(0, 0), (1, 0), (0, 1), (1, 1)],
            CfaPattern::Bggr => [(1, 1), (0, 1), (1, 0), (0, 0)],
            CfaPattern::Grbg => [(1, 0), (0, 0), (1, 1), (0, 1)],
            CfaPattern::Gbrg => [(0, 1), (1, 1), (0, 0), (1, 0)],
        }
    }

    /// Canonical channel index of the photosite at mosaic position `(x, y)`.
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        let pos = (x & 1, y & 1);
        self.offsets()
            .iter()
            .position(|&o| o == pos)
            .expect("every tile position maps to a channel")
    }
}

/// Spatial transform that brings a stored frame to upright orientation.
///
/// Rotations are clockwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[default]
    Normal,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl Orientation {
    pub fn inverse(self) -> Orientation {
        match self {
            Orientation::Rot90 => Orientation::Rot270,
            Orientation::Rot270 => Orientation::Rot90,
            other => other,
        }
    }

    /// Apply this transform to one plane.
    pub fn apply(self, plane: &Plane) -> Plane {
        let (w, h) = plane.dims();
        match self {
            Orientation::Normal => plane.clone(),
            Orientation::Rot90 => Plane::from_fn(h, w, |x, y| plane.get(y, h - 1 - x)),
            Orientation::Rot180 => Plane::from_fn(w, h, |x, y| plane.get(w - 1 - x, h - 1 - y)),
            Orientation::Rot270 => Plane::from_fn(h, w, |x, y| plane.get(w - 1 - y, x)),
            Orientation::FlipH => Plane::from_fn(w, h, |x, y| plane.get(w - 1 - x, y)),
            Orientation::FlipV => Plane::from_fn(w, h, |x, y| plane.get(x, h - 1 - y)),
        }
    }
}

/// Integer Bayer mosaic as read from the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMosaic {
    width: usize,
    height: usize,
    data: Vec<u16>,
    max_value: u16,
    cfa: CfaPattern,
}

impl RawMosaic {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<u16>,
        max_value: u16,
        cfa: CfaPattern,
    ) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::format(format!(
                "mosaic dimensions must be even and nonzero, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::format(format!(
                "mosaic of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > max_value) {
            return Err(Error::format(format!(
                "sample {v} exceeds max value {max_value}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            max_value,
            cfa,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn max_value(&self) -> u16 {
        self.max_value
    }

    pub fn cfa(&self) -> CfaPattern {
        self.cfa
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// Per-camera metadata carried with every frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub camera_id: String,
    /// Black level per canonical channel `R, Gr, Gb, B`.
    pub black_level: [u32; CHANNELS],
    pub white_level: u32,
    pub orientation: Orientation,
    pub iso: Option<u32>,
}

impl CameraMeta {
    /// Metadata for an already-normalized frame.
    pub fn normalized(camera_id: impl Into<String>) -> Self {
        Self {
            camera_id: camera_id.into(),
            black_level: [0; CHANNELS],
            white_level: 1,
            orientation: Orientation::Normal,
            iso: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (c, &black) in self.black_level.iter().enumerate() {
            if black >= self.white_level {
                return Err(Error::metadata(format!(
                    "black level {black} of channel {} is not below white level {}",
                    CHANNEL_NAMES[c], self.white_level
                )));
            }
        }
        Ok(())
    }
}

/// Normalized, packed frame: four equally sized planes with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    planes: [Plane; CHANNELS],
    pub meta: CameraMeta,
}

impl RawFrame {
    pub fn new(planes: [Plane; CHANNELS], meta: CameraMeta) -> Result<Self> {
        let dims = planes[0].dims();
        if planes.iter().any(|p| p.dims() != dims) {
            return Err(Error::invalid("all four planes must share dimensions"));
        }
        for (c, plane) in planes.iter().enumerate() {
            if let Some(v) = plane.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!(
                    "plane {} holds value {v} outside [0, 1]",
                    CHANNEL_NAMES[c]
                )));
            }
        }
        Ok(Self { planes, meta })
    }

    /// Frame with the same constant value in every plane.
    pub fn constant(
        width: usize,
        height: usize,
        values: [f32; CHANNELS],
        meta: CameraMeta,
    ) -> Result<Self> {
        Self::new(values.map(|v| Plane::filled(width, height, v)), meta)
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn planes(&self) -> &[Plane; CHANNELS] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn into_planes(self) -> [Plane; CHANNELS] {
        self.planes
    }

    /// Pixel `(x, y)` as a 4-vector in canonical channel order.
    pub fn pixel(&self, x: usize, y: usize) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.planes[c].get(x, y) as f64)
    }

    /// All pixels in row-major order.
    pub fn pixels(&self) -> Vec<[f64; CHANNELS]> {
        let (w, h) = self.dims();
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(self.pixel(x, y));
            }
        }
        out
    }

    /// Crop all planes to the same window.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RawFrame> {
        let mut planes = Vec::with_capacity(CHANNELS);
        for p in &self.planes {
            planes.push(p.crop(x0, y0, w, h)?);
        }
        let planes: [Plane; CHANNELS] = planes.try_into().expect("four planes");
        Ok(RawFrame {
            planes,
            meta: self.meta.clone(),
        })
    }

    /// Same-shape check used by pairwise operations.
    pub fn ensure_same_shape(&self, other: &RawFrame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid(format!(
                "frame shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Split a mosaic into four half-resolution planes of raw integer values,
/// canonicalized to `R, Gr, Gb, B` order.
pub fn pack_rggb(mosaic: &RawMosaic) -> [Plane; CHANNELS] {
    let (pw, ph) = (mosaic.width / 2, mosaic.height / 2);
    let offsets = mosaic.cfa.offsets();
    offsets.map(|(dx, dy)| Plane::from_fn(pw, ph, |x, y| mosaic.get(2 * x + dx, 2 * y + dy) as f32))
}

/// Inverse of [`pack_rggb`]: interleave four planes back into a full-resolution
/// mosaic laid out per `cfa`. Returns `(width, height, samples)`.
pub fn unpack_rggb(planes: &[Plane; CHANNELS], cfa: CfaPattern) -> (usize, usize, Vec<f32>) {
    let (pw, ph) = planes[0].dims();
    let (w, h) = (pw * 2, ph * 2);
    let mut out = vec![0.0f32; w * h];
    for (c, (dx, dy)) in cfa.offsets().into_iter().enumerate() {
        for y in 0..ph {
            for x in 0..pw {
                out[(2 * y + dy) * w + 2 * x + dx] = planes[c].get(x, y);
            }
        }
    }
    (w, h, out)
}

/// Black-level subtraction, range normalization and packing.
///
/// The returned frame keeps the orientation recorded in `meta`; call
/// [`orient`] to bring it upright.
pub fn normalize_raw(mosaic: &RawMosaic, meta: &CameraMeta) -> Result<RawFrame> {
    meta.validate()?;
    let packed = pack_rggb(mosaic);
    let mut planes = packed;
    for (c, plane) in planes.iter_mut().enumerate() {
        let black = meta.black_level[c] as f64;
        let range = meta.white_level as f64 - black;
        for v in plane.as_mut_slice() {
            *v = ((*v as f64 - black) / range).clamp(0.0, 1.0) as f32;
        }
    }
    RawFrame::new(planes, meta.clone())
}

/// Rotate/flip all planes so the frame is upright; the result carries
/// `Orientation::Normal`.
pub fn orient(frame: &RawFrame) -> RawFrame {
    let t = frame.meta.orientation;
    let planes = frame.planes.clone().map(|p| t.apply(&p));
    let mut meta = frame.meta.clone();
    meta.orientation = Orientation::Normal;
    RawFrame { planes, meta }
}

/// Per-plane spatial mean, the brightness signature used for reference selection.
pub fn channel_mean_vector(frame: &RawFrame) -> Result<[f64; CHANNELS]> {
    if frame.planes[0].is_empty() {
        return Err(Error::invalid("empty frame"));
    }
    Ok(std::array::from_fn(|c| frame.planes[c].mean()))
}

/// Index of the candidate whose channel-mean vector is closest (Euclidean)
/// to the query's. Ties go to the lowest index.
pub fn select_reference(query: &RawFrame, candidates: &[RawFrame]) -> Result<usize> {
    let q = channel_mean_vector(query)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let d = euclidean(&q, &channel_mean_vector(cand)?);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("no reference candidates"))
}

/// Euclidean distance between two channel-mean vectors.
pub fn euclidean(a: &[f64; CHANNELS], b: &[f64; CHANNELS]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
