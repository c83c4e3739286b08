//! File formats: RVOL volumes, PGM slices and evaluation CSV.
//!
//! RVOL is a 32-byte little-endian header followed by the raw payload:
//!
//! ```text
//! 0   "RVOL1"      magic
//! 5   u8           version (1)
//! 6   u32 x 3      dims x, y, z
//! 18  u32          channels
//! 22  u8           dtype: 0 = f32, 1 = u16 labels
//! 23  [u8; 9]      reserved, zero
//! ```
//!
//! Payload layout is `[channel][z][y][x]` with `x` fastest, so `x` is the
//! last tensor axis and `z` the first spatial one.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::regnet::{LabelMap, Volume};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"RVOL1";
const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 32;

/// Decoded RVOL payload.
#[derive(Debug, Clone)]
pub enum Rvol {
    F32(Volume),
    Labels(LabelMap),
}

fn header(ext: [usize; 3], channels: usize, dtype: u8) -> Result<Vec<u8>> {
    let mut h = Vec::with_capacity(HEADER_BYTES);
    h.extend_from_slice(MAGIC);
    h.push(VERSION);
    for e in [ext[2], ext[1], ext[0], channels] {
        let e = u32::try_from(e).map_err(|_| Error::Config(format!("extent {e} too large for RVOL")))?;
        h.extend_from_slice(&e.to_le_bytes());
    }
    h.push(dtype);
    h.resize(HEADER_BYTES, 0);
    Ok(h)
}

pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let mut out = header(v.extents(), v.channels(), 0)?;
    out.reserve(v.data.numel() * 4);
    for x in v.data.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_labels(l: &LabelMap) -> Result<Vec<u8>> {
    let mut out = header(l.extents, 1, 1)?;
    out.reserve(l.labels.len() * 2);
    for x in &l.labels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_rvol(bytes: &[u8]) -> Result<Rvol> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_BYTES {
        return Err(Error::TruncatedPayload {
            expected: HEADER_BYTES,
            found: bytes.len(),
        });
    }
    if bytes[5] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[5]));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (x, y, z, channels) = (word(0), word(1), word(2), word(3));
    let dtype = bytes[22];
    let size = match dtype {
        0 => 4,
        1 => 2,
        d => return Err(Error::UnknownDtype(d)),
    };
    let ext = [z, y, x];
    let count = [x, y, z, channels]
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .and_then(|n| n.checked_mul(size))
        .ok_or_else(|| Error::Config("RVOL dimensions overflow".into()))?;
    let payload = &bytes[HEADER_BYTES..];
    if payload.len() < count {
        return Err(Error::TruncatedPayload {
            expected: count,
            found: payload.len(),
        });
    }
    if payload.len() > count {
        return Err(Error::TrailingBytes(payload.len() - count));
    }
    if count == 0 {
        return Err(Error::InvalidShape {
            shape: vec![channels, z, y, x],
            reason: "empty volume".into(),
        });
    }
    if dtype == 0 {
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Rvol::F32(Volume::new(Tensor::new(&[channels, z, y, x], data)?)?))
    } else {
        if channels != 1 {
            return Err(Error::InvalidShape {
                shape: vec![channels, z, y, x],
                reason: "label maps have one channel".into(),
            });
        }
        let labels = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
            .collect();
        Ok(Rvol::Labels(LabelMap::new(ext, labels)?))
    }
}

pub fn write_rvol(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    Ok(fs::write(path, encode_volume(v)?)?)
}

pub fn write_rvol_labels(path: impl AsRef<Path>, l: &LabelMap) -> Result<()> {
    Ok(fs::write(path, encode_labels(l)?)?)
}

pub fn read_rvol(path: impl AsRef<Path>) -> Result<Volume> {
    match decode_rvol(&fs::read(path)?)? {
        Rvol::F32(v) => Ok(v),
        Rvol::Labels(_) => Err(Error::WrongDtype { expected: 0, found: 1 }),
    }
}

pub fn read_rvol_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    match decode_rvol(&fs::read(path)?)? {
        Rvol::Labels(l) => Ok(l),
        Rvol::F32(_) => Err(Error::WrongDtype { expected: 1, found: 0 }),
    }
}

/// Binary PGM of channel 0 at `index` along spatial `axis`, min-max
/// normalized and quantized with round-half-up. Rows follow the first
/// remaining axis.
pub fn slice_pgm(v: &Volume, axis: usize, index: usize) -> Result<Vec<u8>> {
    if axis > 2 {
        return Err(Error::InvalidAxis {
            op: "slice_pgm",
            axis,
            rank: 3,
        });
    }
    let ext = v.extents();
    if index >= ext[axis] {
        return Err(Error::IndexOutOfRange {
            index,
            extent: ext[axis],
        });
    }
    let (r, c) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let d = v.data.data();
    let mut pixels = Vec::with_capacity(ext[r] * ext[c]);
    for i in 0..ext[r] {
        for j in 0..ext[c] {
            let mut p = [0usize; 3];
            p[axis] = index;
            p[r] = i;
            p[c] = j;
            pixels.push(d[(p[0] * ext[1] + p[1]) * ext[2] + p[2]]);
        }
    }
    let (lo, hi) = pixels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = (hi - lo) as f64;
    let mut out = format!("P5\n{} {}\n255\n", ext[c], ext[r]).into_bytes();
    out.extend(pixels.iter().map(|&x| {
        let t = if span > 0.0 { (x - lo) as f64 / span } else { 0.0 };
        (t * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
    }));
    Ok(out)
}

pub fn emit_slice_pgm(v: &Volume, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, slice_pgm(v, axis, index)?)?)
}

/// Writes reports with a header row.
pub fn emit_csv(rows: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EvalReport::COLUMNS)?;
    for r in rows {
        w.write_record([
            r.pair_id.clone(),
            r.dsc_before.to_string(),
            r.dsc_after.to_string(),
            r.njd_pct.to_string(),
            r.mae_before.to_string(),
            r.mae_after.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(EvalReport::COLUMNS) {
        return Err(Error::Config(format!("unexpected CSV header {:?}", r.headers()?)));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_volume(shape: &[usize], seed: u32) -> Volume {
        let mut s = seed.wrapping_mul(2654435761) | 1;
        Volume::new(Tensor::from_fn(shape, |_| {
            s ^= s << 13;
            s ^= s >> 17;
            s ^= s << 5;
            f32::from_bits(s & 0x7f7f_ffff)
        }))
        .unwrap()
    }

    #[test]
    fn volume_round_trip_is_bitwise() {
        let v = random_volume(&[3, 4, 5, 6], 9);
        let bytes = encode_volume(&v).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES + 3 * 4 * 5 * 6 * 4);
        match decode_rvol(&bytes).unwrap() {
            Rvol::F32(back) => assert!(back.data.bit_eq(&v.data)),
            _ => panic!("wrong dtype"),
        }
        let l = LabelMap::new([2, 3, 4], (0..24).map(|i| i * 1000).collect()).unwrap();
        match decode_rvol(&encode_labels(&l).unwrap()).unwrap() {
            Rvol::Labels(back) => assert_eq!(back, l),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn header_layout() {
        let v = Volume::new(Tensor::zeros(&[1, 2, 3, 4])).unwrap();
        let b = encode_volume(&v).unwrap();
        assert_eq!(&b[..6], b"RVOL1\x01");
        assert_eq!(&b[6..10], &4u32.to_le_bytes());
        assert_eq!(&b[14..18], &2u32.to_le_bytes());
        assert!(b[22..32].iter().all(|&x| x == 0));
        let cube = Volume::new(Tensor::zeros(&[1, 2, 2, 2])).unwrap();
        assert_eq!(encode_volume(&cube).unwrap().len(), 64);
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let good = encode_volume(&random_volume(&[1, 2, 2, 2], 1)).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_rvol(&bad), Err(Error::BadMagic)));
        assert!(matches!(
            decode_rvol(&good[..good.len() - 1]),
            Err(Error::TruncatedPayload {
                expected: 32,
                found: 31
            })
        ));
        assert!(matches!(decode_rvol(&good[..20]), Err(Error::TruncatedPayload { .. })));
        let mut bad = good.clone();
        bad[22] = 7;
        assert!(matches!(decode_rvol(&bad), Err(Error::UnknownDtype(7))));
        let mut bad = good.clone();
        bad[5] = 2;
        assert!(matches!(decode_rvol(&bad), Err(Error::UnsupportedVersion(2))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_rvol(&long), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn pgm_quantization_rounds_half_up() {
        let v = Volume::new(Tensor::new(&[1, 1, 2, 2], vec![0.0, 1.0, 0.5, 0.25]).unwrap()).unwrap();
        let pgm = slice_pgm(&v, 0, 0).unwrap();
        assert_eq!(&pgm[..11], b"P5\n2 2\n255\n");
        assert_eq!(&pgm[11..], &[0, 255, 128, 64]);
        let flat = Volume::new(Tensor::full(&[1, 3, 3, 3], 0.4)).unwrap();
        let pgm = slice_pgm(&flat, 2, 1).unwrap();
        assert!(pgm[11..].iter().all(|&p| p == pgm[11]));
        assert!(matches!(
            slice_pgm(&flat, 1, 3),
            Err(Error::IndexOutOfRange { index: 3, extent: 3 })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let rows = vec![EvalReport {
            pair_id: "pair, \"000\"".into(),
            dsc_before: 0.1234567891,
            dsc_after: 2.0 / 3.0,
            njd_pct: 0.0,
            mae_before: 1e-7,
            mae_after: 0.5,
            per_label: vec![],
        }];
        emit_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("pair_id,dsc_before,dsc_after,njd_pct,mae_before,mae_after\n"));
        assert_eq!(read_csv(&path).unwrap(), rows);
    }
}
