use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{AdamState, TrainState};

const MAGIC: &[u8; 4] = b"BVGC";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes named tensors in name order:
/// `"BVGC"`, u32 version, u64 step, u32 count, then per tensor u16 name
/// length, UTF-8 name, u8 dtype (0 = f32), u8 rank, u32 extents and the
/// little-endian payload.
pub fn encode_tensors(step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let payload: usize = tensors.values().map(|t| t.numel() * 4 + 64).sum();
    let mut out = Vec::with_capacity(20 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::config("too many tensors for one checkpoint"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::config(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::config(format!("tensor {name} has rank > 255")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e)
                .map_err(|_| Error::config(format!("tensor {name} extent {e} exceeds u32")))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!(
                    "truncated: {what} needs {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
}

/// Inverse of [`encode_tensors`].
pub fn decode_tensors(bytes: &[u8]) -> Result<(u64, BTreeMap<String, Tensor>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"BVGC\"")));
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let step = r.u64("step")?;
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 2, "tensor name is not UTF-8"))?
            .to_owned();
        let at = r.pos;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(at, format!("unsupported dtype code {dtype}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let at = r.pos;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(at, format!("extents of {name} overflow")))?;
        let raw = r.take(numel, &format!("payload of {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::format(at, format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos,
            format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        ));
    }
    Ok((step, tensors))
}

/// Writes both networks and both optimizer states. The file is written
/// next to `path` and renamed into place.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (params, adam) in [
        (&state.generator, &state.adam_g),
        (&state.discriminator, &state.adam_d),
    ] {
        for (name, t) in params.iter() {
            tensors.insert(name.to_owned(), t.clone());
        }
        for (name, t) in &adam.m {
            tensors.insert(format!("adam.m.{name}"), t.clone());
        }
        for (name, t) in &adam.v {
            tensors.insert(format!("adam.v.{name}"), t.clone());
        }
    }
    let bytes = encode_tensors(state.step, &tensors)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Restores the state saved by [`save_checkpoint`]. Optimizer step counts
/// are set to the stored step; gradients start at zero.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (step, tensors) = decode_tensors(&bytes)?;
    let mut generator = ParamStore::new();
    let mut discriminator = ParamStore::new();
    let mut moments = Vec::new();
    for (name, t) in tensors {
        if let Some(rest) = name.strip_prefix("adam.m.") {
            moments.push((true, rest.to_owned(), t));
        } else if let Some(rest) = name.strip_prefix("adam.v.") {
            moments.push((false, rest.to_owned(), t));
        } else if name.starts_with("gen.") {
            generator.insert(name, t)?;
        } else if name.starts_with("disc.") {
            discriminator.insert(name, t)?;
        } else {
            return Err(Error::format(0, format!("unexpected tensor {name}")));
        }
    }
    let mut adam_g = AdamState::new(&generator);
    let mut adam_d = AdamState::new(&discriminator);
    adam_g.t = step;
    adam_d.t = step;
    let mut seen = 0;
    for (first, name, t) in moments {
        let (params, adam) = if name.starts_with("gen.") {
            (&generator, &mut adam_g)
        } else {
            (&discriminator, &mut adam_d)
        };
        let expected = params
            .get(&name)
            .map_err(|_| Error::format(0, format!("optimizer moment for unknown parameter {name}")))?;
        if expected.shape() != t.shape() {
            return Err(Error::format(
                0,
                format!("optimizer moment for {name} has shape {:?}", t.shape()),
            ));
        }
        let slot = if first { &mut adam.m } else { &mut adam.v };
        slot.insert(name, t);
        seen += 1;
    }
    if seen != 2 * (generator.len() + discriminator.len()) {
        return Err(Error::format(0, "optimizer moments missing for some parameters"));
    }
    Ok(TrainState {
        generator,
        discriminator,
        adam_g,
        adam_d,
        step,
    })
}
