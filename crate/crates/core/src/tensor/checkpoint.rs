//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "MLPK"
//! version 1 byte   1
//! head    1 byte   0 softmax, 1 sigmoid, 2 linear
//! n       u32      number of layer sizes
//! sizes   n x u32
//! params  f64...   per layer: weights row-major, then biases
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Head, MlpParams, Result, TensorError};

pub const MAGIC: [u8; 4] = *b"MLPK";
pub const VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(params: &MlpParams, mut w: W) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, params.head().code()])?;
    let sizes = params.layer_sizes();
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for v in params.to_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MlpParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut hdr = [0u8; 2];
    r.read_exact(&mut hdr)?;
    if hdr[0] != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {}", hdr[0])));
    }
    let head = Head::from_code(hdr[1]).ok_or_else(|| TensorError::Checkpoint(format!("unknown head {}", hdr[1])))?;
    let n = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n) {
        return Err(TensorError::Checkpoint(format!("implausible layer count {n}")));
    }
    let sizes = (0..n)
        .map(|_| read_u32(&mut r).map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut params = MlpParams::zeros(&sizes, head)?;
    let mut flat = vec![0.0; params.num_params()];
    let mut b = [0u8; 8];
    for v in flat.iter_mut() {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    params.set_flat(&flat)?;
    Ok(params)
}

pub fn save_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn header_layout() {
        let net = MlpParams::zeros(&[2, 3, 1], Head::Sigmoid).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MLPK");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 1);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 10 + 3 * 4 + 8 * net.num_params());
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut r = rng::stream(11, &[]);
        let net = MlpParams::init(&[5, 16, 16, 3], Head::Softmax, &mut r).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        let a: Vec<u64> = net.to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.layer_sizes(), net.layer_sizes());
        assert_eq!(back.head(), Head::Softmax);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let net = MlpParams::zeros(&[2, 2], Head::Softmax).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_checkpoint(bad.as_slice()).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(long.as_slice()).is_err());
    }
}
