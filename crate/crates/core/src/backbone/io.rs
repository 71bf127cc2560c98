//! Binary checkpoint and scene-representation files. All integers and floats
//! are little-endian; tensors are row-major `f32`.

use std::io::{Read, Write};

use ndarray::Array2;

use super::model::SceneRepresentation;
use super::weights::Weights;
use super::{BackboneError, Network, NetworkConfig};
use crate::attention::{CachedLayer, ParamTree, RepresentationCache};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAILCKPT";
pub const REPRESENTATION_MAGIC: &[u8; 8] = b"SAILREPR";
pub const FORMAT_VERSION: u32 = 1;

// Guards against absurd allocations from corrupt headers.
const MAX_ELEMENTS: usize = 1 << 30;

pub(crate) struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Reader { inner }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<Vec<u8>, BackboneError> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 8]) -> Result<(), BackboneError> {
        let got = self.bytes(8)?;
        if got != expect {
            return Err(BackboneError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expect)
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32, BackboneError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn usize(&mut self) -> Result<usize, BackboneError> {
        Ok(self.u32()? as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64, BackboneError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, BackboneError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, BackboneError> {
        if n > MAX_ELEMENTS {
            return Err(BackboneError::Format(format!("tensor of {n} elements")));
        }
        let raw = self.bytes(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f32>, BackboneError> {
        let data = self.f32s(rows.saturating_mul(cols))?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches"))
    }

    pub(crate) fn expect_end(&mut self) -> Result<(), BackboneError> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(BackboneError::Format("trailing bytes".into())),
        }
    }
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), BackboneError> {
    let v = u32::try_from(v).map_err(|_| BackboneError::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f32s<'a, W: Write>(w: &mut W, data: impl IntoIterator<Item = &'a f32>) -> Result<(), BackboneError> {
    let bytes: Vec<u8> = data.into_iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &Network<f32>) -> Result<(), BackboneError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, FORMAT_VERSION as usize)?;
    w.write_all(&net.config().to_bytes())?;
    let leaves = net.weights().leaves();
    put_u32(&mut w, leaves.len())?;
    for (name, t) in leaves {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, 2)?;
        put_u32(&mut w, t.nrows())?;
        put_u32(&mut w, t.ncols())?;
        put_f32s(&mut w, t.iter())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Network<f32>, BackboneError> {
    let mut r = Reader::new(r);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(BackboneError::Format(format!("checkpoint version {version}")));
    }
    let config = NetworkConfig::from_bytes(&r.bytes(NetworkConfig::BYTES)?)?;
    let count = r.usize()?;
    let mut weights = Weights::<Array2<f32>>::init(&config, 0);
    let expected = weights.leaf_count();
    if count != expected {
        return Err(BackboneError::Format(format!(
            "{count} tensors, config implies {expected}"
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.usize()?;
        if len > 4096 {
            return Err(BackboneError::Format("parameter name too long".into()));
        }
        let name = String::from_utf8(r.bytes(len)?)
            .map_err(|_| BackboneError::Format("parameter name is not UTF-8".into()))?;
        let rank = r.usize()?;
        if rank != 2 {
            return Err(BackboneError::Format(format!("{name}: rank {rank}")));
        }
        let (rows, cols) = (r.usize()?, r.usize()?);
        tensors.push((name, r.matrix(rows, cols)?));
    }
    r.expect_end()?;
    let mut it = tensors.into_iter();
    let mut err = None;
    weights.visit_mut("", &mut |name, slot| {
        let (got, t) = it.next().expect("count checked");
        if err.is_none() && (got != name || t.dim() != slot.dim()) {
            err = Some(BackboneError::Format(format!(
                "tensor {got} {:?} where {name} {:?} was expected",
                t.dim(),
                slot.dim()
            )));
        }
        *slot = t;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Network::new(config, weights)
}

pub fn write_representation<W: Write>(mut w: W, rep: &SceneRepresentation<f32>) -> Result<(), BackboneError> {
    let layers = rep.cache.layers();
    let c = rep.anchor_camera_tokens.ncols();
    w.write_all(REPRESENTATION_MAGIC)?;
    put_u32(&mut w, FORMAT_VERSION as usize)?;
    w.write_all(&rep.fingerprint.to_le_bytes())?;
    put_u32(&mut w, layers.len())?;
    put_u32(&mut w, c)?;
    put_u32(&mut w, rep.anchor_camera_tokens.nrows())?;
    w.write_all(&rep.scale.to_le_bytes())?;
    for l in layers {
        put_u32(&mut w, l.tokens.nrows())?;
    }
    for l in layers {
        for (&f, &p) in l.frames.iter().zip(&l.positions) {
            put_u32(&mut w, f)?;
            put_u32(&mut w, p)?;
        }
    }
    put_f32s(&mut w, rep.anchor_camera_tokens.iter())?;
    for l in layers {
        put_f32s(&mut w, l.tokens.iter())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_representation<R: Read>(r: R) -> Result<SceneRepresentation<f32>, BackboneError> {
    let mut r = Reader::new(r);
    r.magic(REPRESENTATION_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(BackboneError::Format(format!("representation version {version}")));
    }
    let fingerprint = r.u64()?;
    let n_layers = r.usize()?;
    let c = r.usize()?;
    let n_anchor = r.usize()?;
    if n_layers > 4096 || c == 0 {
        return Err(BackboneError::Format(format!("{n_layers} layers of width {c}")));
    }
    let scale = r.f64()?;
    let counts = (0..n_layers).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
    let mut provenance = Vec::with_capacity(n_layers);
    for &n in &counts {
        let mut frames = Vec::with_capacity(n.min(MAX_ELEMENTS));
        let mut positions = Vec::with_capacity(n.min(MAX_ELEMENTS));
        for _ in 0..n {
            let f = r.usize()?;
            if f >= n_anchor {
                return Err(BackboneError::Format(format!("token from anchor {f} of {n_anchor}")));
            }
            frames.push(f);
            positions.push(r.usize()?);
        }
        provenance.push((frames, positions));
    }
    let anchor_camera_tokens = r.matrix(n_anchor, c)?;
    let mut layers = Vec::with_capacity(n_layers);
    for ((frames, positions), &n) in provenance.into_iter().zip(&counts) {
        layers.push(CachedLayer {
            tokens: r.matrix(n, c)?,
            frames,
            positions,
        });
    }
    r.expect_end()?;
    Ok(SceneRepresentation {
        cache: RepresentationCache::new(layers)?,
        anchor_camera_tokens,
        scale,
        fingerprint,
    })
}
