//! Versioned binary container used for every artifact on disk.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DCRL"                      magic
//! u32                         format version
//! str                         artifact kind
//! u32 n, n × (str, str)       metadata key/value pairs
//! u32 n, n × network          layer descriptor lists
//! u32 n, n × blob             named arrays
//!
//! str     = u32 byte length, UTF-8 bytes
//! network = str name, u32 rank, rank × u32 input dims, u64 seed,
//!           u32 n_layers, n_layers × (u8 tag, 4 × u32 fields)
//! blob    = str name, u8 dtype (0 = f64, 1 = u8), u32 rank, rank × u32 dims, data
//! ```
//!
//! A network's parameters are stored as the f64 blob carrying the network's
//! name, in declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, NetworkSpec, Tensor};

pub const MAGIC: &[u8; 4] = b"DCRL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Blob {
    F64 { shape: Vec<usize>, data: Vec<f64> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl Blob {
    pub fn shape(&self) -> &[usize] {
        match self {
            Blob::F64 { shape, .. } | Blob::U8 { shape, .. } => shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    pub networks: Vec<(String, NetworkSpec)>,
    pub blobs: Vec<(String, Blob)>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata `{key}` has invalid value `{raw}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a `{kind}` container, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn push_network(&mut self, name: &str, net: &Network) {
        self.networks.push((name.to_string(), net.spec().clone()));
        self.blobs.push((
            name.to_string(),
            Blob::F64 {
                shape: vec![net.param_count().max(1)],
                data: net.params().to_vec(),
            },
        ));
    }

    pub fn network(&self, name: &str) -> Result<Network> {
        let spec = self
            .networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::Format(format!("missing network `{name}`")))?;
        let params = self.f64_blob(name)?.1.to_vec();
        let params = if spec.param_count() == 0 { Vec::new() } else { params };
        Network::from_params(spec, params).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor) {
        self.blobs.push((
            name.to_string(),
            Blob::F64 {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        ));
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        self.blobs.push((name.to_string(), Blob::F64 { shape, data }));
    }

    pub fn push_u8(&mut self, name: &str, shape: Vec<usize>, data: Vec<u8>) {
        self.blobs.push((name.to_string(), Blob::U8 { shape, data }));
    }

    fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::Format(format!("missing blob `{name}`")))
    }

    pub fn f64_blob(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.blob(name)? {
            Blob::F64 { shape, data } => Ok((shape, data)),
            Blob::U8 { .. } => Err(Error::Format(format!("blob `{name}` is not f64"))),
        }
    }

    pub fn u8_blob(&self, name: &str) -> Result<(&[usize], &[u8])> {
        match self.blob(name)? {
            Blob::U8 { shape, data } => Ok((shape, data)),
            Blob::F64 { .. } => Err(Error::Format(format!("blob `{name}` is not u8"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let (shape, data) = self.f64_blob(name)?;
        Tensor::new(shape.to_vec(), data.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_str(&mut out, &self.kind);
        put_u32(&mut out, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.networks.len() as u32);
        for (name, spec) in &self.networks {
            put_str(&mut out, name);
            put_dims(&mut out, &spec.input_shape);
            out.extend_from_slice(&spec.seed.to_le_bytes());
            put_u32(&mut out, spec.layers.len() as u32);
            for layer in &spec.layers {
                let (tag, fields) = encode_layer(layer);
                out.push(tag);
                for f in fields {
                    put_u32(&mut out, f as u32);
                }
            }
        }
        put_u32(&mut out, self.blobs.len() as u32);
        for (name, blob) in &self.blobs {
            put_str(&mut out, name);
            match blob {
                Blob::F64 { shape, data } => {
                    out.push(0);
                    put_dims(&mut out, shape);
                    out.reserve(data.len() * 8);
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Blob::U8 { shape, data } => {
                    out.push(1);
                    put_dims(&mut out, shape);
                    out.extend_from_slice(data);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let kind = r.string()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let mut networks = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let input_shape = r.dims()?;
            let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
            let mut layers = Vec::new();
            for _ in 0..r.u32()? {
                let tag = r.take(1)?[0];
                let mut fields = [0usize; 4];
                for f in &mut fields {
                    *f = r.u32()? as usize;
                }
                layers.push(decode_layer(tag, fields)?);
            }
            let spec = NetworkSpec::new(input_shape, layers, seed).map_err(|e| Error::Format(e.to_string()))?;
            networks.push((name, spec));
        }
        let mut blobs = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let shape = r.dims()?;
            let n: usize = shape.iter().product();
            let blob = match dtype {
                0 => {
                    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("blob too large".into()))?)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Blob::F64 { shape, data }
                }
                1 => Blob::U8 {
                    shape,
                    data: r.take(n)?.to_vec(),
                },
                other => return Err(Error::Format(format!("unknown dtype {other}"))),
            };
            blobs.push((name, blob));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after container".into()));
        }
        Ok(Container {
            kind,
            metadata,
            networks,
            blobs,
        })
    }

    /// Writes the container atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Short hex fingerprint of a parameter vector.
pub fn fingerprint(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_layer(layer: &LayerSpec) -> (u8, [usize; 4]) {
    match *layer {
        LayerSpec::Dense { input, output } => (0, [input, output, 0, 0]),
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
        } => (1, [in_ch, out_ch, kernel, stride]),
        LayerSpec::Relu => (2, [0; 4]),
        LayerSpec::Tanh => (3, [0; 4]),
        LayerSpec::Flatten => (4, [0; 4]),
        LayerSpec::Softmax => (5, [0; 4]),
    }
}

fn decode_layer(tag: u8, f: [usize; 4]) -> Result<LayerSpec> {
    Ok(match tag {
        0 => LayerSpec::Dense {
            input: f[0],
            output: f[1],
        },
        1 => LayerSpec::Conv {
            in_ch: f[0],
            out_ch: f[1],
            kernel: f[2],
            stride: f[3],
        },
        2 => LayerSpec::Relu,
        3 => LayerSpec::Tanh,
        4 => LayerSpec::Flatten,
        5 => LayerSpec::Softmax,
        other => return Err(Error::Format(format!("unknown layer tag {other}"))),
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    put_u32(out, dims.len() as u32);
    for &d in dims {
        put_u32(out, d as u32);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8".into()))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32()? as usize;
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        let spec = NetworkSpec::new(
            vec![2, 6, 6],
            vec![
                LayerSpec::Conv {
                    in_ch: 2,
                    out_ch: 3,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 48, output: 4 },
                LayerSpec::Softmax,
            ],
            17,
        )
        .unwrap();
        let mut c = Container::new("test");
        c.set_meta("task", "TR");
        c.push_network("net", &Network::new(spec).unwrap());
        c.push_u8("obs", vec![2, 3], vec![0, 1, 2, 253, 254, 255]);
        c
    }

    #[test]
    fn header_starts_with_magic_and_version() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"DCRL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    }

    #[test]
    fn network_survives_roundtrip() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.network("net").unwrap(), c.network("net").unwrap());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(Container::from_bytes(&bytes).is_err());
        let bytes = sample().to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/a.bin");
        sample().save(&path).unwrap();
        assert_eq!(Container::load(&path).unwrap(), sample());
        assert!(!dir.path().join("sub/a.bin.tmp").exists());
    }

    proptest! {
        #[test]
        fn f64_blobs_roundtrip_bit_exact(data in proptest::collection::vec(any::<f64>(), 1..64)) {
            let mut c = Container::new("p");
            c.push_f64("x", vec![data.len()], data.clone());
            let back = Container::from_bytes(&c.to_bytes()).unwrap();
            let (_, got) = back.f64_blob("x").unwrap();
            prop_assert!(got.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
