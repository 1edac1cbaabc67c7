use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

const MAGIC: &[u8; 4] = b"S3CK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named, ordered parameters of one network.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub name: String,
    params: Vec<(String, Tensor)>,
}

impl NetworkParams {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::domain("NetworkParams::insert", format!("duplicate parameter {name}")));
        }
        self.params.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::domain("NetworkParams::get", format!("{}: no parameter {name}", self.name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copy whose parameters are leaves of `tape`.
    pub fn bind(&self, tape: &Tape) -> NetworkParams {
        NetworkParams {
            name: self.name.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), tape.leaf(t))).collect(),
        }
    }

    /// Untracked copy.
    pub fn detach(&self) -> NetworkParams {
        NetworkParams {
            name: self.name.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), t.detach())).collect(),
        }
    }

    /// Replaces values in place; shapes must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::domain("NetworkParams::set", format!("no parameter {name}")))?;
        if slot.1.shape() != value.shape() {
            return Err(Error::shape("NetworkParams::set", slot.1.shape(), value.shape()));
        }
        slot.1 = value;
        Ok(())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &NetworkParams) -> bool {
        self.name == other.name
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Seeded parameter factory: He-normal conv weights, zero biases.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    pub params: NetworkParams,
}

impl Init {
    pub fn new(name: &str, seed: u64) -> Self {
        // per-network stream so adding a network never shifts another's draws
        let tag = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ tag),
            params: NetworkParams::new(name),
        }
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let n = cout * cin * k * k;
        let w = if zero {
            vec![0.0; n]
        } else {
            let std = (2.0 / (cin * k * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| normal.sample(&mut self.rng)).collect()
        };
        self.params
            .insert(format!("{name}.w"), Tensor::new(w, &[cout, cin, k, k]).expect("shape"))
            .expect("unique");
        self.params
            .insert(format!("{name}.b"), Tensor::zeros(&[cout]))
            .expect("unique");
    }
}

/// Writes networks in order to the `S3CK` container.
pub fn write_checkpoint(mut out: impl Write, nets: &[&NetworkParams]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let put_str = |buf: &mut Vec<u8>, s: &str| {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    };
    for net in nets {
        put_str(&mut buf, &net.name);
        buf.extend_from_slice(&(net.len() as u32).to_le_bytes());
        for (name, t) in net.iter() {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&buf).map_err(|e| Error::io("writing checkpoint", e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))
    }
}

/// Reads every network block until end of input.
pub fn read_checkpoint(mut input: impl Read) -> Result<Vec<NetworkParams>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not an S3CK checkpoint".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut nets = Vec::new();
    while c.pos < bytes.len() {
        let mut net = NetworkParams::new(c.string()?);
        let count = c.u32()?;
        for _ in 0..count {
            let name = c.string()?;
            let rank = c.u32()? as usize;
            let shape = (0..rank).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = c.take(4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            net.insert(name, Tensor::new(data, &shape)?)?;
        }
        nets.push(net);
    }
    Ok(nets)
}

pub fn save_checkpoint(path: &Path, nets: &[&NetworkParams]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_checkpoint(std::io::BufWriter::new(file), nets)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<NetworkParams>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

/// Rounds every value through `f32`, matching what a checkpoint stores.
pub fn round_to_f32(p: &NetworkParams) -> NetworkParams {
    NetworkParams {
        name: p.name.clone(),
        params: p
            .params
            .iter()
            .map(|(n, t)| {
                let d = t.data().iter().map(|&v| v as f32 as f64).collect();
                (n.clone(), Tensor::new(d, t.shape()).expect("shape"))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NetworkParams {
        let mut init = Init::new("demo", 7);
        init.conv("c1", 3, 4, 3, false);
        init.conv("head", 4, 1, 1, true);
        init.params
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let p = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&p]).unwrap();
        assert_eq!(&buf[..4], b"S3CK");
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].bit_eq(&round_to_f32(&p)));
    }

    #[test]
    fn layout_matches_declared_format() {
        let mut p = NetworkParams::new("n");
        p.insert("a", Tensor::from_slice(&[1.5, -2.0])).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&p]).unwrap();
        let mut want = b"S3CK".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(b"n");
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(b"a");
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1.5f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(read_checkpoint(&b"NOPE\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[&sample()]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert!(sample().bit_eq(&sample()));
        let mut other = Init::new("demo", 8);
        other.conv("c1", 3, 4, 3, false);
        other.conv("head", 4, 1, 1, true);
        assert!(!sample().bit_eq(&other.params));
        let head = sample();
        assert!(head.get("head.w").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(head.get("c1.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = NetworkParams::new("x");
        p.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(p.insert("a", Tensor::scalar(2.0)).is_err());
    }
}
