//! Binary checkpoints: the network configuration as text, free-form metadata,
//! then every parameter by name.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetConfig;
use super::net::XcaMorph;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 7] = b"MAXCK1\n";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: NetConfig,
    /// `key = value` lines describing how the parameters were produced.
    pub meta: String,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Rebuilds the network and checks that the stored parameters match it.
    pub fn network(&self) -> Result<XcaMorph> {
        let mut fresh = ParamStore::<f32>::new();
        let net = XcaMorph::new(&self.net, &mut fresh, &mut ChaCha8Rng::seed_from_u64(0))?;
        if fresh.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, network has {}",
                self.params.len(),
                fresh.len()
            )));
        }
        for id in fresh.ids() {
            if fresh.name(id) != self.params.name(id) || fresh.get(id).shape() != self.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' {:?} does not match stored '{}' {:?}",
                    fresh.name(id),
                    fresh.get(id).shape(),
                    self.params.name(id),
                    self.params.get(id).shape()
                )));
            }
        }
        Ok(net)
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_checkpoint(mut w: impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    put_str(&mut w, &ckpt.net.to_text())?;
    put_str(&mut w, &ckpt.meta)?;
    put_u32(&mut w, ckpt.params.len())?;
    for id in ckpt.params.ids() {
        let t = ckpt.params.get(id);
        put_str(&mut w, ckpt.params.name(id))?;
        put_u32(&mut w, t.rank())?;
        for &e in t.shape() {
            put_u32(&mut w, e)?;
        }
        let mut bytes = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

fn take(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let b = take(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)?;
    String::from_utf8(take(r, n)?).map_err(|_| Error::Checkpoint("text is not UTF-8".into()))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    if take(&mut r, MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let net = NetConfig::from_text(&get_str(&mut r)?)?;
    let meta = get_str(&mut r)?;
    let count = get_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = get_str(&mut r)?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = take(&mut r, n * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("parameter '{name}': {e}")))?;
        params.add(name, t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let ckpt = Checkpoint { net, meta, params };
    ckpt.network()?;
    Ok(ckpt)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
