//! QDC container.
//!
//! Little-endian layout:
//!
//! | bytes          | field                                         |
//! |----------------|-----------------------------------------------|
//! | 4              | magic `QDC1`                                  |
//! | u32            | version (1)                                   |
//! | u8             | object kind: 0 raw stack, 1 cube, 2 map       |
//! | u8             | channels / quantity code                      |
//! | u16            | reserved, 0                                   |
//! | u32 ×4         | width, height, points, channels               |
//! | f64 × points   | sweep values                                  |
//! | u8             | sweep kind                                    |
//! | 7              | zero padding                                  |
//! | f32 × n        | payload in frame-major order                  |
//! | u64            | CRC-64/XZ of the payload bytes                |
//!
//! Maps are stored with `points = 1`, a single `0.0` sweep value and sweep
//! kind `0xFF`; masked pixels are written as NaN.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::{Channels, DataCube, MapImage, MapQuantity, Quantity, RawStack, SweepAxis, SweepKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"QDC1";
const VERSION: u32 = 1;
const KIND_RAW: u8 = 0;
const KIND_CUBE: u8 = 1;
const KIND_MAP: u8 = 2;
const NO_SWEEP: u8 = 0xFF;
const FIXED_HEADER: usize = 28;

static CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Any object a QDC file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum QdcObject {
    Raw(RawStack),
    Cube(DataCube),
    Map(MapImage),
}

impl QdcObject {
    pub fn kind_name(&self) -> &'static str {
        match self {
            QdcObject::Raw(_) => "raw stack",
            QdcObject::Cube(_) => "data cube",
            QdcObject::Map(_) => "map image",
        }
    }

    pub fn into_cube(self) -> Result<DataCube> {
        match self {
            QdcObject::Cube(c) => Ok(c),
            other => Err(Error::MalformedHeader(format!(
                "expected a data cube, found a {}",
                other.kind_name()
            ))),
        }
    }

    pub fn into_raw(self) -> Result<RawStack> {
        match self {
            QdcObject::Raw(r) => Ok(r),
            other => Err(Error::MalformedHeader(format!(
                "expected a raw stack, found a {}",
                other.kind_name()
            ))),
        }
    }

    pub fn into_map(self) -> Result<MapImage> {
        match self {
            QdcObject::Map(m) => Ok(m),
            other => Err(Error::MalformedHeader(format!(
                "expected a map image, found a {}",
                other.kind_name()
            ))),
        }
    }
}

impl From<RawStack> for QdcObject {
    fn from(v: RawStack) -> Self {
        QdcObject::Raw(v)
    }
}

impl From<DataCube> for QdcObject {
    fn from(v: DataCube) -> Self {
        QdcObject::Cube(v)
    }
}

impl From<MapImage> for QdcObject {
    fn from(v: MapImage) -> Self {
        QdcObject::Map(v)
    }
}

struct Header {
    kind: u8,
    code: u8,
    width: u32,
    height: u32,
    points: u32,
    channels: u32,
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what} {v} exceeds u32")))
}

/// Serializes an object into QDC bytes.
pub fn write_qdc<W: Write>(mut out: W, object: &QdcObject) -> Result<()> {
    let (header, sweep, sweep_kind, payload): (Header, &[f64], u8, Vec<f32>) = match object {
        QdcObject::Raw(s) => (
            Header {
                kind: KIND_RAW,
                code: s.channels().code(),
                width: dim(s.width(), "width")?,
                height: dim(s.height(), "height")?,
                points: dim(s.sweep().len(), "points")?,
                channels: 2,
            },
            s.sweep().values(),
            s.sweep().kind().code(),
            s.data().to_vec(),
        ),
        QdcObject::Cube(c) => (
            Header {
                kind: KIND_CUBE,
                code: c.quantity().code(),
                width: dim(c.width(), "width")?,
                height: dim(c.height(), "height")?,
                points: dim(c.points(), "points")?,
                channels: 1,
            },
            c.sweep().values(),
            c.sweep().kind().code(),
            c.data().iter().map(|&v| v as f32).collect(),
        ),
        QdcObject::Map(m) => (
            Header {
                kind: KIND_MAP,
                code: m.quantity().code(),
                width: dim(m.width(), "width")?,
                height: dim(m.height(), "height")?,
                points: 1,
                channels: 1,
            },
            &[0.0][..],
            NO_SWEEP,
            m.data().iter().map(|&v| v as f32).collect(),
        ),
    };

    let mut buf = Vec::with_capacity(FIXED_HEADER + sweep.len() * 8 + 8 + payload.len() * 4 + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(header.kind);
    buf.push(header.code);
    buf.extend_from_slice(&0u16.to_le_bytes());
    for v in [header.width, header.height, header.points, header.channels] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in sweep {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(sweep_kind);
    buf.extend_from_slice(&[0u8; 7]);
    let payload_start = buf.len();
    for v in &payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = CRC64.checksum(&buf[payload_start..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&buf)?;
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses QDC bytes.
pub fn read_qdc<R: Read>(mut input: R) -> Result<QdcObject> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<QdcObject> {
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(Error::Truncated {
            expected: FIXED_HEADER,
            found: bytes.len(),
        });
    }
    let kind = bytes[8];
    let code = bytes[9];
    let reserved = u16::from_le_bytes([bytes[10], bytes[11]]);
    if reserved != 0 {
        return Err(Error::MalformedHeader(format!("reserved field is {reserved}")));
    }
    let width = u32_at(bytes, 12) as usize;
    let height = u32_at(bytes, 16) as usize;
    let points = u32_at(bytes, 20) as usize;
    let channels = u32_at(bytes, 24) as usize;

    let expected_channels = match kind {
        KIND_RAW => 2,
        KIND_CUBE | KIND_MAP => 1,
        other => return Err(Error::MalformedHeader(format!("unknown object kind {other}"))),
    };
    if channels != expected_channels {
        return Err(Error::MalformedHeader(format!(
            "object kind {kind} with {channels} channels"
        )));
    }
    if kind == KIND_MAP && points != 1 {
        return Err(Error::MalformedHeader(format!("map with {points} points")));
    }
    if width == 0 || height == 0 || points == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }

    let sweep_end = FIXED_HEADER
        .checked_add(points.checked_mul(8).ok_or_else(overflow)?)
        .ok_or_else(overflow)?;
    let payload_start = sweep_end + 8;
    let values = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(points))
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(overflow)?;
    let payload_end = payload_start
        .checked_add(values.checked_mul(4).ok_or_else(overflow)?)
        .ok_or_else(overflow)?;
    let total = payload_end + 8;
    if bytes.len() < total {
        return Err(Error::Truncated {
            expected: total,
            found: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after checksum",
            bytes.len() - total
        )));
    }

    let sweep: Vec<f64> = bytes[FIXED_HEADER..sweep_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sweep_kind = bytes[sweep_end];
    if bytes[sweep_end + 1..payload_start].iter().any(|b| *b != 0) {
        return Err(Error::MalformedHeader("non-zero padding".into()));
    }

    let stored = u64::from_le_bytes(bytes[payload_end..total].try_into().unwrap());
    let computed = CRC64.checksum(&bytes[payload_start..payload_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let payload: Vec<f32> = bytes[payload_start..payload_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    if kind == KIND_MAP {
        if sweep_kind != NO_SWEEP {
            return Err(Error::MalformedHeader(format!(
                "map with sweep kind {sweep_kind}"
            )));
        }
        let quantity = MapQuantity::from_code(code)
            .ok_or_else(|| Error::MalformedHeader(format!("unknown map quantity {code}")))?;
        let data = payload.into_iter().map(f64::from).collect();
        return Ok(QdcObject::Map(MapImage::new(width, height, quantity, data)?));
    }

    let sweep_kind = SweepKind::from_code(sweep_kind)
        .ok_or_else(|| Error::MalformedHeader(format!("unknown sweep kind {sweep_kind}")))?;
    if let Some(i) = sweep.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotonicSweep { index: i + 1 });
    }
    let sweep = SweepAxis::new(sweep_kind, sweep)?;

    if kind == KIND_RAW {
        let channels = Channels::from_code(code)
            .ok_or_else(|| Error::MalformedHeader(format!("unknown channel code {code}")))?;
        Ok(QdcObject::Raw(RawStack::new(
            width, height, sweep, channels, payload,
        )?))
    } else {
        let quantity = Quantity::from_code(code)
            .ok_or_else(|| Error::MalformedHeader(format!("unknown quantity code {code}")))?;
        let data = payload.into_iter().map(f64::from).collect();
        Ok(QdcObject::Cube(DataCube::new(
            width, height, sweep, quantity, data,
        )?))
    }
}

fn overflow() -> Error {
    Error::MalformedHeader("dimensions overflow".into())
}

pub fn load_qdc(path: impl AsRef<Path>) -> Result<QdcObject> {
    parse(&fs::read(path)?)
}

pub fn save_qdc(path: impl AsRef<Path>, object: &QdcObject) -> Result<()> {
    let mut buf = Vec::new();
    write_qdc(&mut buf, object)?;
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> DataCube {
        let sweep = SweepAxis::linspace(SweepKind::FrequencyMhz, 2800.0, 2810.0, 10).unwrap();
        let data = (0..60).map(|i| f64::from(1.0f32 - i as f32 * 0.001)).collect();
        DataCube::new(3, 2, sweep, Quantity::Contrast, data).unwrap()
    }

    fn encode(obj: &QdcObject) -> Vec<u8> {
        let mut buf = Vec::new();
        write_qdc(&mut buf, obj).unwrap();
        buf
    }

    #[test]
    fn cube_round_trip() {
        let obj = QdcObject::Cube(cube());
        let bytes = encode(&obj);
        assert_eq!(&bytes[..4], b"QDC1");
        let back = read_qdc(&bytes[..]).unwrap();
        assert_eq!(back, obj);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn map_round_trip_keeps_mask() {
        let map = MapImage::new(
            2,
            2,
            MapQuantity::StressGpa,
            vec![0.5, f64::NAN, -0.25, 1.0],
        )
        .unwrap();
        let obj = QdcObject::Map(map);
        let bytes = encode(&obj);
        let back = read_qdc(&bytes[..]).unwrap().into_map().unwrap();
        assert_eq!(back.valid(), &[true, false, true, true]);
        assert_eq!(back.quantity(), MapQuantity::StressGpa);
        assert_eq!(encode(&QdcObject::Map(back)), bytes);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&QdcObject::Cube(cube()));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_qdc(&bytes[..]), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&QdcObject::Cube(cube()));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_qdc(&bytes[..]), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn missing_frame_is_truncation() {
        let c = cube();
        let bytes = encode(&QdcObject::Cube(c.clone()));
        // Drop the last frame plus the checksum, re-append a checksum.
        let frame_bytes = c.width() * c.height() * 4;
        let mut cut = bytes[..bytes.len() - 8 - frame_bytes].to_vec();
        cut.extend_from_slice(&[0u8; 8]);
        assert!(matches!(read_qdc(&cut[..]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn non_monotonic_sweep() {
        let mut bytes = encode(&QdcObject::Cube(cube()));
        // Overwrite the second sweep value with the first.
        let first: [u8; 8] = bytes[28..36].try_into().unwrap();
        bytes[36..44].copy_from_slice(&first);
        assert!(matches!(
            read_qdc(&bytes[..]),
            Err(Error::NonMonotonicSweep { index: 1 })
        ));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode(&QdcObject::Cube(cube()));
        let n = bytes.len();
        bytes[n - 12] ^= 0x01;
        assert!(matches!(
            read_qdc(&bytes[..]),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn crc_matches_reference_check_value() {
        // CRC-64/XZ check value for "123456789".
        assert_eq!(CRC64.checksum(b"123456789"), 0x995d_c9bb_df19_39fa);
    }
}
