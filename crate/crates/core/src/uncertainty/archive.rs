//! Binary batch archive.
//!
//! Layout, all little-endian: magic `SMPB`, version `u32`, sample count
//! `u64`, seed `u64`, truncation tag `u32` (0 none, 1 radial, 2 width),
//! truncation parameters `rho, axis_x, axis_y` as `f64` (zero when unused),
//! the samples as `f64` pairs, then the relevant-index count `u64` and the
//! indices as `u64`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ScenarioBatch, TruncationSpec};
use crate::Point;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SMPB";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a batch archive (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {0}")]
    Version(u32),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

pub fn write_batch<W: Write>(batch: &ScenarioBatch, out: &mut W) -> Result<(), ArchiveError> {
    out.write_all(ARCHIVE_MAGIC)?;
    out.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    out.write_all(&(batch.samples.len() as u64).to_le_bytes())?;
    out.write_all(&batch.seed.to_le_bytes())?;
    let (tag, params) = match batch.truncation {
        TruncationSpec::None => (0u32, [0.0; 3]),
        TruncationSpec::Radial { rho } => (1, [rho, 0.0, 0.0]),
        TruncationSpec::Width { axis, rho } => (2, [rho, axis[0], axis[1]]),
    };
    out.write_all(&tag.to_le_bytes())?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    for z in &batch.samples {
        out.write_all(&z.x.to_le_bytes())?;
        out.write_all(&z.y.to_le_bytes())?;
    }
    out.write_all(&(batch.relevant.len() as u64).to_le_bytes())?;
    for &i in &batch.relevant {
        out.write_all(&(i as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N], ArchiveError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, ArchiveError> {
    Ok(u32::from_le_bytes(read_array(input)?))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, ArchiveError> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64, ArchiveError> {
    Ok(f64::from_le_bytes(read_array(input)?))
}

pub fn read_batch<R: Read>(input: &mut R) -> Result<ScenarioBatch, ArchiveError> {
    let magic: [u8; 4] = read_array(input)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(ArchiveError::BadMagic(magic));
    }
    let version = read_u32(input)?;
    if version != ARCHIVE_VERSION {
        return Err(ArchiveError::Version(version));
    }
    let count = read_u64(input)? as usize;
    let seed = read_u64(input)?;
    let tag = read_u32(input)?;
    let rho = read_f64(input)?;
    let ax = read_f64(input)?;
    let ay = read_f64(input)?;
    let truncation = match tag {
        0 => TruncationSpec::None,
        1 => TruncationSpec::Radial { rho },
        2 => TruncationSpec::Width { axis: [ax, ay], rho },
        t => return Err(ArchiveError::Corrupt(format!("unknown truncation tag {t}"))),
    };
    let mut samples = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let x = read_f64(input)?;
        let y = read_f64(input)?;
        samples.push(Point::new(x, y));
    }
    let n_rel = read_u64(input)? as usize;
    if n_rel > count {
        return Err(ArchiveError::Corrupt(format!("{n_rel} relevant indices for {count} samples")));
    }
    let mut relevant = Vec::with_capacity(n_rel);
    for _ in 0..n_rel {
        let i = read_u64(input)? as usize;
        if i >= count || relevant.last().is_some_and(|&prev| prev >= i) {
            return Err(ArchiveError::Corrupt(format!("relevant index {i} out of order or range")));
        }
        relevant.push(i);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(ArchiveError::Corrupt("trailing bytes".into()));
    }
    Ok(ScenarioBatch {
        samples,
        relevant,
        truncation,
        seed,
    })
}

pub fn write_batch_file(batch: &ScenarioBatch, path: &Path) -> Result<(), ArchiveError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_batch(batch, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_batch_file(path: &Path) -> Result<ScenarioBatch, ArchiveError> {
    read_batch(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::sample_standard_batch;

    #[test]
    fn round_trip_every_truncation() {
        for t in [
            TruncationSpec::None,
            TruncationSpec::Radial { rho: 3.5 },
            TruncationSpec::Width { axis: [0.0, 1.0], rho: 2.5 },
        ] {
            let mut b = sample_standard_batch(300, t, 77).unwrap();
            b.relevant = vec![0, 5, 299];
            let mut buf = Vec::new();
            write_batch(&b, &mut buf).unwrap();
            assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 4 + 24 + 300 * 16 + 8 + 3 * 8);
            assert_eq!(read_batch(&mut buf.as_slice()).unwrap(), b);
        }
    }

    #[test]
    fn header_bytes() {
        let b = ScenarioBatch {
            samples: vec![Point::new(1.0, -2.0)],
            relevant: vec![0],
            truncation: TruncationSpec::Radial { rho: 3.5 },
            seed: 9,
        };
        let mut buf = Vec::new();
        write_batch(&b, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SMPB");
        assert_eq!(buf[4..8], 1u32.to_le_bytes());
        assert_eq!(buf[8..16], 1u64.to_le_bytes());
        assert_eq!(buf[16..24], 9u64.to_le_bytes());
        assert_eq!(buf[24..28], 1u32.to_le_bytes());
        assert_eq!(buf[28..36], 3.5f64.to_le_bytes());
        assert_eq!(buf[52..60], 1.0f64.to_le_bytes());
        assert_eq!(buf[60..68], (-2.0f64).to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let b = sample_standard_batch(4, TruncationSpec::None, 1).unwrap();
        let mut buf = Vec::new();
        write_batch(&b, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_batch(&mut bad.as_slice()), Err(ArchiveError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_batch(&mut bad.as_slice()), Err(ArchiveError::Version(2))));
        let truncated = &buf[..buf.len() - 3];
        assert!(read_batch(&mut &truncated[..]).is_err());
        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(read_batch(&mut trailing.as_slice()), Err(ArchiveError::Corrupt(_))));
    }
}
