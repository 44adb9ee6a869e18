//! The `TRDM` binary container.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `TRDM` |
//! | 2     | format version (`u16`, currently 1) |
//! | 2     | reserved (`u16`, zero) |
//! | 4     | frame count (`u32`) |
//! | 4     | height (`u32`) |
//! | 4     | width (`u32`) |
//! | 8     | start time, unix seconds (`u64`) |
//! | 4     | cadence in seconds (`u32`) |
//! | N*H*W*4 | rain rates, `f32`, time-major then row-major, mm/h |
//!
//! Round trips are bit-exact: the in-memory frames are `f32` and the payload
//! is their little-endian encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;

use super::{DataError, RadarSequence, CADENCE_SECONDS};

pub const MAGIC: [u8; 4] = *b"TRDM";
pub const FORMAT_VERSION: u16 = 1;

pub fn save_sequence(seq: &RadarSequence, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequence(seq, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_sequence(seq: &RadarSequence, w: &mut impl Write) -> Result<(), DataError> {
    let shape = seq.frames().shape();
    w.write_all(&MAGIC)?;
    w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u16::<LittleEndian>(0)?;
    w.write_u32::<LittleEndian>(shape[0] as u32)?;
    w.write_u32::<LittleEndian>(shape[1] as u32)?;
    w.write_u32::<LittleEndian>(shape[2] as u32)?;
    w.write_u64::<LittleEndian>(seq.start_time())?;
    w.write_u32::<LittleEndian>(CADENCE_SECONDS)?;
    // frames are stored in standard (time, row, col) order, which matches
    // the ndarray default layout
    for &v in seq.frames().iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<RadarSequence, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    read_sequence(&mut r)
}

pub fn read_sequence(r: &mut impl Read) -> Result<RadarSequence, DataError> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, 4, 0)?;
    if magic != MAGIC {
        return Err(DataError::BadMagic { found: magic });
    }
    let version = r.read_u16::<LittleEndian>().map_err(map_eof(6, 4))?;
    if version != FORMAT_VERSION {
        return Err(DataError::BadVersion { found: version });
    }
    let _reserved = r.read_u16::<LittleEndian>().map_err(map_eof(8, 6))?;
    let count = r.read_u32::<LittleEndian>().map_err(map_eof(12, 8))? as usize;
    let height = r.read_u32::<LittleEndian>().map_err(map_eof(16, 12))? as usize;
    let width = r.read_u32::<LittleEndian>().map_err(map_eof(20, 16))? as usize;
    let start_time = r.read_u64::<LittleEndian>().map_err(map_eof(28, 20))?;
    let cadence = r.read_u32::<LittleEndian>().map_err(map_eof(32, 28))?;
    if cadence != CADENCE_SECONDS {
        return Err(DataError::BadCadence { found: cadence });
    }

    let n_values = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or(DataError::Truncated { expected: usize::MAX, got: 0 })?;
    let payload = n_values * 4;
    let mut bytes = Vec::with_capacity(payload.min(1 << 30));
    let got = r.take(payload as u64 + 1).read_to_end(&mut bytes)?;
    if got < payload {
        return Err(DataError::Truncated { expected: payload, got });
    }
    if got > payload {
        // check whether there is even more beyond the probe byte
        let mut sink = Vec::new();
        let extra = 1 + r.read_to_end(&mut sink)?;
        return Err(DataError::TrailingBytes(extra));
    }

    let mut values = Vec::with_capacity(n_values);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(DataError::NonFinite { index });
        }
        values.push(v);
    }
    let frames = Array3::from_shape_vec((count, height, width), values)
        .expect("shape was derived from the header");
    RadarSequence::new(frames, start_time)
}

fn read_exact_or_truncated(
    r: &mut impl Read,
    buf: &mut [u8],
    expected: usize,
    offset: usize,
) -> Result<(), DataError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(DataError::Truncated { expected, got: offset + filled });
        }
        filled += n;
    }
    Ok(())
}

fn map_eof(expected: usize, got: usize) -> impl Fn(std::io::Error) -> DataError {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::Truncated { expected, got }
        } else {
            DataError::Io(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn demo_sequence() -> RadarSequence {
        let frames = Array3::from_shape_fn((3, 4, 5), |(t, i, j)| {
            (t * 100 + i * 10 + j) as f32 * 0.25
        });
        RadarSequence::new(frames, 1_700_000_000).unwrap()
    }

    fn to_bytes(seq: &RadarSequence) -> Vec<u8> {
        let mut buf = Vec::new();
        write_sequence(seq, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let seq = demo_sequence();
        let bytes = to_bytes(&seq);
        let back = read_sequence(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, seq);
        // and the re-encoded bytes are identical
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn round_trip_one_by_one() {
        let seq = RadarSequence::new(Array3::from_elem((1, 1, 1), 2.5f32), 0).unwrap();
        let bytes = to_bytes(&seq);
        assert_eq!(read_sequence(&mut bytes.as_slice()).unwrap(), seq);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = to_bytes(&demo_sequence());
        bytes[..4].copy_from_slice(b"XXXX");
        match read_sequence(&mut bytes.as_slice()) {
            Err(DataError::BadMagic { found }) => assert_eq!(&found, b"XXXX"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_is_reported() {
        let mut bytes = to_bytes(&demo_sequence());
        bytes[4] = 9;
        assert!(matches!(
            read_sequence(&mut bytes.as_slice()),
            Err(DataError::BadVersion { found: 9 })
        ));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = to_bytes(&demo_sequence());
        let cut = &bytes[..bytes.len() - 7];
        match read_sequence(&mut &cut[..]) {
            Err(DataError::Truncated { expected, got }) => {
                assert_eq!(expected, 3 * 4 * 5 * 4);
                assert_eq!(got, expected - 7);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header_is_reported() {
        let bytes = to_bytes(&demo_sequence());
        assert!(matches!(
            read_sequence(&mut &bytes[..10]),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn non_finite_payload_is_reported() {
        let mut bytes = to_bytes(&demo_sequence());
        let off = 32 + 4 * 7;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_sequence(&mut bytes.as_slice()),
            Err(DataError::NonFinite { index: 7 })
        ));
    }

    #[test]
    fn trailing_bytes_are_reported() {
        let mut bytes = to_bytes(&demo_sequence());
        bytes.extend_from_slice(&[0, 1, 2]);
        assert!(matches!(
            read_sequence(&mut bytes.as_slice()),
            Err(DataError::TrailingBytes(3))
        ));
    }

    #[test]
    fn wrong_cadence_is_rejected() {
        let mut bytes = to_bytes(&demo_sequence());
        bytes[28..32].copy_from_slice(&60u32.to_le_bytes());
        assert!(matches!(
            read_sequence(&mut bytes.as_slice()),
            Err(DataError::BadCadence { found: 60 })
        ));
    }
}
