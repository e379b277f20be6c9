//! Binary checkpoints: `COMB1`, then `(name, dims, f64 data)` records to EOF.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"COMB1";

/// Writes every parameter and BN running statistic of `net`.
pub fn write_checkpoint<W: Write>(net: &mut Network, out: &mut W) -> Result<()> {
    let dims = net.tensor_dims();
    let mut values: Vec<Vec<f64>> = net.params_mut().into_iter().map(|p| p.values.to_vec()).collect();
    values.extend(net.buffers_mut().into_iter().map(|(_, v)| v.clone()));
    out.write_all(MAGIC)?;
    for ((name, dims), data) in dims.iter().zip(&values) {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(net: &mut Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Loads tensors into `net`; names and dimensions must match exactly.
pub fn read_checkpoint<R: Read>(net: &mut Network, input: &mut R) -> Result<()> {
    let mut magic = [0u8; 5];
    read_exact_or(input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let expected = net.tensor_dims();
    let mut loaded = Vec::with_capacity(expected.len());
    for (name, dims) in &expected {
        let mut len = [0u8; 4];
        match input.read(&mut len[..1])? {
            0 => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            _ => read_exact_or(input, &mut len[1..], "name length")?,
        }
        let mut got_name = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact_or(input, &mut got_name, "name")?;
        let got_name = String::from_utf8_lossy(&got_name);
        if got_name != *name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {got_name}")));
        }
        let rank = read_u32(input, "rank")? as usize;
        let mut got_dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact_or(input, &mut b, "dims")?;
            got_dims.push(u64::from_le_bytes(b) as usize);
        }
        if got_dims != *dims {
            return Err(Error::Checkpoint(format!(
                "{name}: dims {got_dims:?} do not match {dims:?}"
            )));
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 8];
            read_exact_or(input, &mut b, name)?;
            data.push(f64::from_le_bytes(b));
        }
        loaded.push(data);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing data after last tensor".into()));
    }
    let mut it = loaded.into_iter();
    for p in net.params_mut() {
        p.values.copy_from_slice(&it.next().expect("counted above"));
    }
    for (_, buf) in net.buffers_mut() {
        *buf = it.next().expect("counted above");
    }
    Ok(())
}

pub fn load_checkpoint(net: &mut Network, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(net, &mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_comb_stack, NetworkConfig};
    use crate::tensor::Tensor4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_reproduces_outputs() {
        let cfg = NetworkConfig::default();
        let mut net = build_comb_stack(&cfg).unwrap();
        net.initialize(&mut ChaCha8Rng::seed_from_u64(3));
        let x = Tensor4::new([2, 3, 32, 32], 0.25);
        net.forward(&x, true).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut net, &mut bytes).unwrap();
        assert_eq!(&bytes[..5], MAGIC);

        let mut fresh = build_comb_stack(&cfg).unwrap();
        read_checkpoint(&mut fresh, &mut bytes.as_slice()).unwrap();
        assert_eq!(fresh, net);
        assert_eq!(fresh.infer(&x).unwrap(), net.infer(&x).unwrap());
    }

    #[test]
    fn rejects_corruption() {
        let mut net = build_comb_stack(&NetworkConfig::default()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut net, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut net, &mut bad.as_slice()).is_err());
        let short = &bytes[..bytes.len() - 3];
        assert!(read_checkpoint(&mut net, &mut &short[..]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_checkpoint(&mut net, &mut long.as_slice()).is_err());
        let mut wider = build_comb_stack(&NetworkConfig {
            width: 48,
            ..Default::default()
        })
        .unwrap();
        assert!(read_checkpoint(&mut wider, &mut bytes.as_slice()).is_err());
    }
}
