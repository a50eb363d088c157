//! Binary weight files.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "DFGW" | version: u32 | layer_count: u32
//! per layer: rows: u32 | cols: u32 | activation: u8
//!            | rows*cols f32 weights, row-major | rows f32 bias
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Activation, DenseLayer};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DFGW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_layers<W: Write>(mut out: W, layers: &[&DenseLayer<f32>]) -> Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        out.write_all(&(layer.outputs() as u32).to_le_bytes())?;
        out.write_all(&(layer.inputs() as u32).to_le_bytes())?;
        out.write_all(&[layer.activation.tag()])?;
        for w in layer.weights.iter() {
            out.write_all(&w.to_le_bytes())?;
        }
        for b in layer.bias.iter() {
            out.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode_layers(layers: &[&DenseLayer<f32>]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_layers(&mut buf, layers).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_reals<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    input.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn read_layers<R: Read>(mut input: R) -> Result<Vec<DenseLayer<f32>>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::WeightFormat(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != WEIGHTS_VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for index in 0..count {
        let rows = read_u32(&mut input)? as usize;
        let cols = read_u32(&mut input)? as usize;
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])
            .ok_or_else(|| Error::WeightFormat(format!("layer {index}: activation tag {}", tag[0])))?;
        let weights = read_reals(&mut input, rows * cols)?;
        let bias = read_reals(&mut input, rows)?;
        let weights = Array2::from_shape_vec((rows, cols), weights).map_err(|e| Error::WeightFormat(e.to_string()))?;
        layers.push(DenseLayer::new(weights, Array1::from(bias), activation)?);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::WeightFormat("trailing bytes after last layer".into()));
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layout_is_bit_exact() {
        let layer = DenseLayer::new(array![[1.0f32, -2.0]], array![0.5f32], Activation::Relu).unwrap();
        let bytes = encode_layers(&[&layer]);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"DFGW");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.push(0);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        expected.extend_from_slice(&0.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trips_layers() {
        let a =
            DenseLayer::new(array![[0.1f32, 0.2, 0.3], [0.4, 0.5, 0.6]], array![-1.0f32, 1.0], Activation::Identity)
                .unwrap();
        let b = DenseLayer::new(array![[7.0f32, 8.0]], array![9.0f32], Activation::Softmax).unwrap();
        let bytes = encode_layers(&[&a, &b]);
        let back = read_layers(bytes.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_layers(&b"NOPE\x01\0\0\0\0\0\0\0"[..]).is_err());
        let layer = DenseLayer::new(array![[1.0f32]], array![0.0f32], Activation::Relu).unwrap();
        let bytes = encode_layers(&[&layer]);
        assert!(read_layers(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_layers(extra.as_slice()).is_err());
    }
}
