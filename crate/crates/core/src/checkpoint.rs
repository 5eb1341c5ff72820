//! Versioned binary checkpoints: parameter store, optimizer moments, step
//! counter. Round-trips are byte-exact.
//!
//! Layout: magic "TWCKPT", u32 version, u32 tensor count, then per tensor
//! u16 name length, name bytes, u8 rank, rank u32 dims, f32 little-endian
//! data; then the optimizer blob with the same tensor framing (two entries
//! per parameter, `<name>#m` and `<name>#v`); finally the u64 step counter.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 6] = b"TWCKPT";
pub const CKPT_VERSION: u32 = 1;

fn write_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    if name.len() > u16::MAX as usize {
        return Err(Error::Format(format!("tensor name too long: {name}")));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("tensor rank {} too large", shape.len())));
    }
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.inner.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name_len = self.u16()? as usize;
        let mut name = vec![0u8; name_len];
        self.inner.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not utf-8".to_string()))?;
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        self.inner.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((name, shape, data))
    }
}

pub fn save(path: &Path, store: &ParamStore<f32>, opt: &AdamState) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        write_tensor(&mut buf, name, tensor.shape(), tensor.data())?;
    }
    buf.extend_from_slice(&(2 * store.len() as u32).to_le_bytes());
    for (i, (name, tensor)) in store.iter().enumerate() {
        write_tensor(&mut buf, &format!("{name}#m"), tensor.shape(), &opt.m[i])?;
        write_tensor(&mut buf, &format!("{name}#v"), tensor.shape(), &opt.v[i])?;
    }
    buf.extend_from_slice(&opt.step.to_le_bytes());
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore<f32>, AdamState)> {
    let file = fs::File::open(path)?;
    let mut r = Reader { inner: std::io::BufReader::new(file) };
    let mut magic = [0u8; 6];
    r.inner.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            CKPT_MAGIC
        )));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let (name, shape, data) = r.tensor()?;
        store.add(name, Tensor::new(shape, data)?)?;
    }
    let opt_count = r.u32()? as usize;
    if opt_count != 2 * count {
        return Err(Error::Format(format!(
            "optimizer blob has {opt_count} tensors, expected {}",
            2 * count
        )));
    }
    let mut m = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for i in 0..count {
        for (suffix, dst) in [("#m", &mut m), ("#v", &mut v)] {
            let (name, shape, data) = r.tensor()?;
            let id = crate::params::ParamId::from_index(i);
            let expected = format!("{}{suffix}", store.name(id));
            if name != expected {
                return Err(Error::Format(format!(
                    "optimizer tensor `{name}` out of order, expected `{expected}`"
                )));
            }
            if shape != store.get(id).shape() {
                return Err(Error::Format(format!("optimizer tensor `{name}` shape mismatch")));
            }
            dst.push(data);
        }
    }
    let step = r.u64()?;
    Ok((store, AdamState { m, v, step }))
}

/// Checks that a loaded store has exactly the names and shapes the model was
/// initialized with (in the same creation order).
pub fn verify_matches(loaded: &ParamStore<f32>, expected: &ParamStore<f32>) -> Result<()> {
    if loaded.len() != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            loaded.len(),
            expected.len()
        )));
    }
    for ((ln, lt), (en, et)) in loaded.iter().zip(expected.iter()) {
        if ln != en || lt.shape() != et.shape() {
            return Err(Error::Format(format!(
                "checkpoint parameter `{ln}` {:?} does not match model `{en}` {:?}",
                lt.shape(),
                et.shape()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkConfig, Restorer};

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = NetworkConfig::default();
        let (_, store) = Restorer::init::<f32>(&cfg, 3).unwrap();
        let mut opt = AdamState::new(&store);
        opt.step = 17;
        for m in opt.m.iter_mut() {
            for (j, v) in m.iter_mut().enumerate() {
                *v = (j as f32).sin();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save(&path, &store, &opt).unwrap();
        let (loaded, lopt) = load(&path).unwrap();
        verify_matches(&loaded, &store).unwrap();
        for (a, b) in loaded.iter().zip(store.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.data(), b.1.data());
        }
        assert_eq!(lopt.step, 17);
        assert_eq!(lopt.m, opt.m);
        assert_eq!(lopt.v, opt.v);
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let cfg = NetworkConfig::default();
        let (_, store) = Restorer::init::<f32>(&cfg, 3).unwrap();
        let opt = AdamState::new(&store);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save(&path, &store, &opt).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] = b'!';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_checkpoint_is_io_error() {
        let cfg = NetworkConfig::default();
        let (_, store) = Restorer::init::<f32>(&cfg, 3).unwrap();
        let opt = AdamState::new(&store);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save(&path, &store, &opt).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load(&path), Err(Error::Io(_))));
    }

    #[test]
    fn toy_parameter_count_matches_analytic_sum() {
        // Independent parameter-count calculator, walking the architecture
        // definition rather than the store.
        let cfg = NetworkConfig::default();
        let (_, store) = Restorer::init::<f32>(&cfg, 0).unwrap();

        let linear = |i: usize, o: usize, bias: bool| i * o + if bias { o } else { 0 };
        let conv = |i: usize, o: usize, k: usize, groups: usize| o * (i / groups) * k * k + o;
        let norm = |c: usize| 2 * c;
        let attn = |c: usize, r: usize| {
            3 * linear(c, c, false) + linear(c, c, true) + linear(c * r, c, false)
        };
        let ffn = |c: usize| linear(c, 4 * c, true) + conv(4 * c, 4 * c, 3, 4 * c) + linear(4 * c, c, true);
        let block = |c: usize, r: usize| 2 * norm(c) + attn(c, r) + ffn(c);
        let merge = |ci: usize, co: usize, k: usize| conv(ci, co, k, 1) + norm(co);

        let dims = cfg.dims;
        let mut expected = 0usize;
        let mut in_ch = 3;
        for i in 0..4 {
            expected += merge(in_ch, dims[i], 3);
            expected += cfg.depths[i] * block(dims[i], cfg.reductions[i]);
            // intra branch: its own embed plus one block at the intra ratio
            expected += merge(in_ch, dims[i], 3) + block(dims[i], cfg.intra_reductions[i]);
            in_ch = dims[i];
        }
        // decoder: queries + per block (2 norms, cross-attention at R=1, MLP)
        expected += cfg.query_count * dims[3];
        expected += cfg.decoder_depth
            * (2 * norm(dims[3])
                + attn(dims[3], 1)
                + linear(dims[3], 4 * dims[3], true)
                + linear(4 * dims[3], dims[3], true));
        // fusion maps
        for d in dims {
            expected += linear(dims[3], d, true);
        }
        // tail convs with skips on the first three layers
        expected += conv(dims[3] + dims[2], dims[2], 3, 1);
        expected += conv(dims[2] + dims[1], dims[1], 3, 1);
        expected += conv(dims[1] + dims[0], dims[0], 3, 1);
        expected += conv(dims[0], 3, 3, 1);

        assert_eq!(store.total_scalars(), expected);
    }
}
