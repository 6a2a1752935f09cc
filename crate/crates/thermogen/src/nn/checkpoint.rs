//! Binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"TNN1"
//! u32     format version (1)
//! u32     layer count
//! layers  u8 kind tag + kind-specific u32/f64 fields (see `write_spec`)
//! u32     parameter tensor count
//! tensors u32 rank, rank × u32 dims, then dims-product × f64 values
//! ```
//!
//! Parameters are stored in declaration order, the same order the optimizer
//! and `Network::params` use. Values are always f64 on disk regardless of the
//! in-memory scalar type, so an f32-trained network reloads bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LayerSpec, Network, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNN1";
const VERSION: u32 = 1;

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn w_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_spec(w: &mut impl Write, spec: &LayerSpec) -> std::io::Result<()> {
    match spec {
        LayerSpec::Dense { inputs, outputs } => {
            w.write_all(&[0])?;
            w_u32(w, *inputs as u32)?;
            w_u32(w, *outputs as u32)
        }
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding } => {
            w.write_all(&[1])?;
            for v in [*in_ch, *out_ch, *kernel, *stride, *padding] {
                w_u32(w, v as u32)?;
            }
            Ok(())
        }
        LayerSpec::UpsampleConv { in_ch, out_ch, factor } => {
            w.write_all(&[2])?;
            for v in [*in_ch, *out_ch, *factor] {
                w_u32(w, v as u32)?;
            }
            Ok(())
        }
        LayerSpec::Relu => w.write_all(&[3]),
        LayerSpec::LeakyRelu { slope } => {
            w.write_all(&[4])?;
            w_f64(w, *slope)
        }
        LayerSpec::Sigmoid => w.write_all(&[5]),
        LayerSpec::SeBlock { channels, reduction } => {
            w.write_all(&[6])?;
            w_u32(w, *channels as u32)?;
            w_u32(w, *reduction as u32)
        }
        LayerSpec::SeResBlock { channels, reduction } => {
            w.write_all(&[7])?;
            w_u32(w, *channels as u32)?;
            w_u32(w, *reduction as u32)
        }
        LayerSpec::Reshape { shape } => {
            w.write_all(&[8])?;
            w_u32(w, shape.len() as u32)?;
            for d in shape {
                w_u32(w, *d as u32)?;
            }
            Ok(())
        }
        LayerSpec::GlobalAvgPool => w.write_all(&[9]),
    }
}

struct Reader<'a, R: Read> {
    inner: R,
    path: &'a Path,
}

impl<'a, R: Read> Reader<'a, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.path, "unexpected end of file"))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn spec(&mut self) -> Result<LayerSpec> {
        let tag = self.u8()?;
        Ok(match tag {
            0 => LayerSpec::Dense { inputs: self.usize()?, outputs: self.usize()? },
            1 => LayerSpec::Conv2d {
                in_ch: self.usize()?,
                out_ch: self.usize()?,
                kernel: self.usize()?,
                stride: self.usize()?,
                padding: self.usize()?,
            },
            2 => LayerSpec::UpsampleConv {
                in_ch: self.usize()?,
                out_ch: self.usize()?,
                factor: self.usize()?,
            },
            3 => LayerSpec::Relu,
            4 => LayerSpec::LeakyRelu { slope: self.f64()? },
            5 => LayerSpec::Sigmoid,
            6 => LayerSpec::SeBlock { channels: self.usize()?, reduction: self.usize()? },
            7 => LayerSpec::SeResBlock { channels: self.usize()?, reduction: self.usize()? },
            8 => {
                let rank = self.usize()?;
                if rank > 8 {
                    return Err(Error::format(self.path, format!("reshape rank {rank} too large")));
                }
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(self.usize()?);
                }
                LayerSpec::Reshape { shape }
            }
            9 => LayerSpec::GlobalAvgPool,
            other => {
                return Err(Error::format(self.path, format!("unknown layer tag {other}")));
            }
        })
    }
}

/// Writes the network's architecture and parameters to `path`.
pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w_u32(&mut w, VERSION)?;
        let specs = net.specs();
        w_u32(&mut w, specs.len() as u32)?;
        for spec in &specs {
            write_spec(&mut w, spec)?;
        }
        let params = net.params();
        w_u32(&mut w, params.len() as u32)?;
        for p in params {
            w_u32(&mut w, p.value.shape().len() as u32)?;
            for &d in p.value.shape() {
                w_u32(&mut w, d as u32)?;
            }
            for &v in p.value.data() {
                w_f64(&mut w, v.to_f64s())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint back into a fresh network of the requested precision.
pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: BufReader::new(file), path };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::format(path, "bad magic; not a network checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let n_layers = r.usize()?;
    if n_layers > 10_000 {
        return Err(Error::format(path, format!("implausible layer count {n_layers}")));
    }
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        specs.push(r.spec()?);
    }
    // Weights are overwritten below; the init draw is discarded.
    let mut seed_rng = crate::rng::tagged(0, "checkpoint-load");
    let mut net = Network::from_specs(&specs, &mut seed_rng);

    let n_tensors = r.usize()?;
    {
        let mut params = net.params_mut();
        if n_tensors != params.len() {
            return Err(Error::format(
                path,
                format!("checkpoint has {n_tensors} tensors, architecture needs {}", params.len()),
            ));
        }
        for p in params.iter_mut() {
            let rank = r.usize()?;
            if rank > 8 {
                return Err(Error::format(path, format!("implausible tensor rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.usize()?);
            }
            if shape != p.value.shape() {
                return Err(Error::format(
                    path,
                    format!("tensor shape {:?} does not match architecture {:?}", shape, p.value.shape()),
                ));
            }
            for v in p.value.data_mut() {
                *v = T::from_f64(r.f64()?);
            }
        }
    }
    let mut trailing = [0u8; 1];
    match r.inner.read(&mut trailing) {
        Ok(0) => Ok(net),
        Ok(_) => Err(Error::format(path, "trailing bytes after parameters")),
        Err(e) => Err(Error::io(path, e)),
    }
}
