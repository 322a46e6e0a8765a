//! Binary parameter files: `PCNW`, u32 version, u32 parameter count, the
//! parameters as little-endian f64 in declaration order, then the network
//! config as a JSON trailer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{NetConfig, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCNW";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(net: &Network, mut w: impl Write) -> Result<()> {
    let params = net.flat_params();
    let count = u32::try_from(params.len()).map_err(|_| Error::Shape("too many parameters".into()))?;
    let mut buf = Vec::with_capacity(12 + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf.extend_from_slice(serde_json::to_string(net.config())?.as_bytes());
    w.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Parse("not a checkpoint file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let count = word(8) as usize;
    let end = 12 + 8 * count;
    if bytes.len() < end {
        return Err(Error::Parse("truncated checkpoint".into()));
    }
    let params: Vec<f64> = bytes[12..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let config: NetConfig = serde_json::from_slice(&bytes[end..])?;
    let mut net = Network::build(&config)?;
    if net.param_count() != count {
        return Err(Error::Parse(format!(
            "checkpoint holds {count} parameters but its config needs {}",
            net.param_count()
        )));
    }
    net.set_flat_params(&params)?;
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(net, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::build(&NetConfig::micro(9)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PCNW");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config(), net.config());
        let bits = |n: &Network| n.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
    }

    #[test]
    fn rejects_damaged_files() {
        let net = Network::build(&NetConfig::micro(9)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..40]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
    }
}
