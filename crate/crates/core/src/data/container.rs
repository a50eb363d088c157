//! Binary dataset container for prepared (already split) datasets.
//!
//! ```text
//! "DFGD" | version: u32 | n: u32 | views: u32 | view_dim: u32 | classes: u32
//! views × n × view_dim f32 features, view-major then row-major
//! n u16 labels
//! train_len: u32 | val_len: u32 | test_len: u32 | split indices as u32
//! ```
//!
//! Everything is little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, Splits};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DFGD";
const VERSION: u32 = 1;

fn put_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Dataset(format!("{v} does not fit in u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode(&mut out, data)?;
    out.flush()?;
    Ok(())
}

fn encode<W: Write>(out: &mut W, data: &Dataset) -> Result<()> {
    if data.class_count > u16::MAX as usize + 1 {
        return Err(Error::Dataset("too many classes for u16 labels".into()));
    }
    out.write_all(DATASET_MAGIC)?;
    put_u32(out, VERSION as usize)?;
    put_u32(out, data.len())?;
    put_u32(out, data.views.len())?;
    put_u32(out, data.view_dim())?;
    put_u32(out, data.class_count)?;
    for view in &data.views {
        for x in view.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    for &l in &data.labels {
        out.write_all(&(l as u16).to_le_bytes())?;
    }
    let s = &data.splits;
    for part in [&s.train, &s.val, &s.test] {
        put_u32(out, part.len())?;
    }
    for part in [&s.train, &s.val, &s.test] {
        for &i in part {
            put_u32(out, i)?;
        }
    }
    Ok(())
}

fn take<R: Read>(input: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf).map_err(|_| Error::Dataset("truncated dataset file".into()))?;
    Ok(buf)
}

fn get_u32<R: Read>(input: &mut R) -> Result<usize> {
    let b = take(input, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut input = BufReader::new(File::open(path).map_err(|e| Error::data(path, e.to_string()))?);
    decode(&mut input).map_err(|e| match e {
        Error::Dataset(reason) => Error::data(path, reason),
        other => other,
    })
}

fn decode<R: Read>(input: &mut R) -> Result<Dataset> {
    if take(input, 4)? != DATASET_MAGIC {
        return Err(Error::Dataset("not a DFGD dataset file".into()));
    }
    let version = get_u32(input)?;
    if version != VERSION as usize {
        return Err(Error::Dataset(format!("unsupported dataset version {version}")));
    }
    let n = get_u32(input)?;
    let view_count = get_u32(input)?;
    let dim = get_u32(input)?;
    let classes = get_u32(input)?;
    let mut views = Vec::with_capacity(view_count);
    for _ in 0..view_count {
        let bytes = take(input, n * dim * 4)?;
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        views.push(Array2::from_shape_vec((n, dim), values).expect("length checked"));
    }
    let labels: Vec<usize> =
        take(input, n * 2)?.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as usize).collect();
    let lens = [get_u32(input)?, get_u32(input)?, get_u32(input)?];
    let mut parts = Vec::with_capacity(3);
    for len in lens {
        let part: Vec<usize> = (0..len).map(|_| get_u32(input)).collect::<Result<_>>()?;
        if part.iter().any(|&i| i >= n) {
            return Err(Error::Dataset("split index out of range".into()));
        }
        parts.push(part);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Dataset(format!("{} trailing bytes", rest.len())));
    }
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    let mut data = Dataset::new(views, labels, classes)?;
    data.splits = Splits { train, val, test };
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitMode;

    fn sample() -> Dataset {
        let a = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f32 * 0.5);
        let b = Array2::from_shape_fn((5, 3), |(i, j)| -((i + j) as f32));
        Dataset::new(vec![a, b], vec![0, 1, 2, 1, 0], 3).unwrap().with_splits(SplitMode::PerRow, 1).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dfgd");
        let d = sample();
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), d);
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        encode(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"DFGD");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &5u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..20], &3u32.to_le_bytes());
        assert_eq!(&buf[20..24], &3u32.to_le_bytes());
        assert_eq!(&buf[28..32], &0.5f32.to_le_bytes());
        assert_eq!(buf.len(), 24 + 2 * 15 * 4 + 5 * 2 + 12 + 5 * 4);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        encode(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode(&mut bad.as_slice()).is_err());
        assert!(decode(&mut &buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(decode(&mut long.as_slice()).is_err());
    }
}
