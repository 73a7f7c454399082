//! Flat binary tensor files.
//!
//! Layout: the 8-byte magic `MIMWTEN\0`, the rank as a little-endian `u32`,
//! one little-endian `u32` extent per dimension, then the row-major `f32`
//! payload in little-endian order.

use std::io::{Read, Write};
use std::path::Path;

use mimw_core::Tensor;

pub const MAGIC: &[u8; 8] = b"MIMWTEN\0";

#[derive(Debug, thiserror::Error)]
pub enum TensorFileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic")]
    Magic,
    #[error("payload has {got} bytes, shape needs {want}")]
    Payload { got: usize, want: usize },
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor, TensorFileError> {
    let mut magic = [0u8; 8];
    bytes.read_exact(&mut magic).map_err(|_| TensorFileError::Magic)?;
    if &magic != MAGIC {
        return Err(TensorFileError::Magic);
    }
    let mut word = [0u8; 4];
    bytes.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        bytes.read_exact(&mut word)?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let want = 4 * shape.iter().product::<usize>();
    if bytes.len() != want {
        return Err(TensorFileError::Payload { got: bytes.len(), want });
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::new(shape, data).expect("payload length checked"))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), TensorFileError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorFileError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, f32::MIN_POSITIVE, 7.0, -0.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(b.len(), 8 + 4 + 8 + 24);
        assert_eq!(decode(&b).unwrap(), t);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut b = encode(&Tensor::zeros(&[4]));
        b.pop();
        assert!(matches!(decode(&b), Err(TensorFileError::Payload { got: 15, want: 16 })));
        assert!(matches!(decode(b"NOTMAGIC"), Err(TensorFileError::Magic)));
    }
}
