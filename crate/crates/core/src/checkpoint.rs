//! Versioned binary checkpoints.
//!
//! Layout: magic `TNCK`, version `u16`, the shape manifest (parameter count,
//! then name, rank and dims of each), the run configuration text, parameter
//! values as `f64`, an optional training-state block and a trailing CRC32.
//! The manifest comes first so a shape mismatch is reported before any
//! weight is decoded.

use std::path::Path;

use crate::data::format::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};
use crate::tensor::{Real, Tensor};
use crate::training::{BaselineState, Baselines, Trainer};

pub const MAGIC: &[u8; 4] = b"TNCK";
pub const VERSION: u16 = 1;

/// Name and shape of every parameter, in registration order.
pub type Manifest = Vec<(String, Vec<usize>)>;

pub fn manifest_of(store: &ParamStore) -> Manifest {
    store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect()
}

/// Optimizer and baseline state needed to resume training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub step: usize,
    pub adam_step: usize,
    pub m: Vec<Vec<Real>>,
    pub v: Vec<Vec<Real>>,
    pub baselines: Baselines,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    /// Serialized run configuration the parameters belong to.
    pub config: String,
    pub params: Vec<Tensor>,
    pub training: Option<TrainingState>,
}

fn buffers(g: &Gradients) -> Vec<Vec<Real>> {
    g.iter().map(|b| b.to_vec()).collect()
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config: impl Into<String>) -> Self {
        Self {
            manifest: manifest_of(store),
            config: config.into(),
            params: store.iter().map(|(_, p)| (*p.value).clone()).collect(),
            training: None,
        }
    }

    pub fn from_trainer(trainer: &Trainer, config: impl Into<String>) -> Self {
        let mut c = Self::from_store(&trainer.model.store, config);
        c.training = Some(TrainingState {
            step: trainer.step,
            adam_step: trainer.optimizer.step,
            m: buffers(&trainer.optimizer.m),
            v: buffers(&trainer.optimizer.v),
            baselines: trainer.baselines,
        });
        c
    }

    /// Copies the parameters into `store` after checking the manifest.
    pub fn apply_to_store(&self, store: &mut ParamStore) -> Result<()> {
        check_manifest(&self.manifest, &manifest_of(store))?;
        for (id, t) in store.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            store.set(id, t.clone())?;
        }
        Ok(())
    }

    /// Restores parameters, optimizer moments, baselines and the step counter.
    pub fn restore_trainer(&self, trainer: &mut Trainer) -> Result<()> {
        self.apply_to_store(&mut trainer.model.store)?;
        if let Some(t) = &self.training {
            trainer.step = t.step;
            trainer.optimizer.step = t.adam_step;
            trainer.optimizer.m = Gradients::from_buffers(&trainer.model.store, t.m.clone())?;
            trainer.optimizer.v = Gradients::from_buffers(&trainer.model.store, t.v.clone())?;
            trainer.baselines = t.baselines;
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(self.manifest.len() as u32);
        for (name, shape) in &self.manifest {
            w.str(name);
            w.u32(shape.len() as u32);
            shape.iter().for_each(|&d| w.u32(d as u32));
        }
        w.str(&self.config);
        for t in &self.params {
            t.data().iter().for_each(|&v| w.f64(v as f64));
        }
        match &self.training {
            None => w.bytes(&[0]),
            Some(t) => {
                w.bytes(&[1]);
                w.u64(t.step as u64);
                w.u64(t.adam_step as u64);
                for bufs in [&t.m, &t.v] {
                    bufs.iter().flatten().for_each(|&v| w.f64(v as f64));
                }
                let b = &t.baselines;
                w.f64(b.sequence.b as f64);
                w.f64(b.location.b as f64);
                w.bytes(&[b.shared as u8]);
            }
        }
        w.finish()
    }

    /// Decodes a checkpoint; with `expected`, a differing manifest fails
    /// before the parameter block is read.
    pub fn decode(bytes: &[u8], expected: Option<&Manifest>) -> Result<Self> {
        let mut r = Reader::verify_crc(bytes)?;
        if r.take(4)? != MAGIC {
            return Err(Error::Format { offset: 0, msg: "bad magic, not a checkpoint".into() });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format { offset: 4, msg: format!("unsupported checkpoint version {version}") });
        }
        let (manifest, config) = read_header(&mut r)?;
        if let Some(exp) = expected {
            check_manifest(&manifest, exp)?;
        }
        let f64s = |r: &mut Reader, n: usize| -> Result<Vec<Real>> {
            (0..n).map(|_| r.f64().map(|v| v as Real)).collect()
        };
        let mut params = Vec::with_capacity(manifest.len());
        for (name, shape) in &manifest {
            let n = shape.iter().product();
            let at = r.pos;
            let t = Tensor::new(shape.clone(), f64s(&mut r, n)?)
                .map_err(|e| Error::Format { offset: at as u64, msg: format!("{name}: {e}") })?;
            params.push(t);
        }
        let training = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()? as usize;
                let adam_step = r.u64()? as usize;
                let mut moments = Vec::new();
                for _ in 0..2 {
                    let mut bufs = Vec::with_capacity(params.len());
                    for p in &params {
                        bufs.push(f64s(&mut r, p.len())?);
                    }
                    moments.push(bufs);
                }
                let v = moments.pop().unwrap();
                let m = moments.pop().unwrap();
                let sequence = BaselineState { b: r.f64()? as Real };
                let location = BaselineState { b: r.f64()? as Real };
                let shared = r.take(1)?[0] != 0;
                Some(TrainingState { step, adam_step, m, v, baselines: Baselines { sequence, location, shared } })
            }
            flag => return Err(r.error(format!("invalid training-state flag {flag}"))),
        };
        r.expect_end()?;
        Ok(Self { manifest, config, params, training })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<&Manifest>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?, expected)
    }
}

fn read_header(r: &mut Reader) -> Result<(Manifest, String)> {
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 12));
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.error(format!("implausible rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        manifest.push((name, shape));
    }
    let config = r.str()?;
    Ok((manifest, config))
}

/// Reads only the manifest and configuration of a checkpoint file.
pub fn read_manifest(path: &Path) -> Result<(Manifest, String)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::verify_crc(&bytes)?;
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, not a checkpoint".into() });
    }
    r.u16()?;
    read_header(&mut r)
}

pub fn check_manifest(found: &Manifest, expected: &Manifest) -> Result<()> {
    if found.len() != expected.len() {
        return Err(Error::Mismatch(format!("{} parameters stored, model has {}", found.len(), expected.len())));
    }
    for ((fname, fshape), (ename, eshape)) in found.iter().zip(expected) {
        if fname != ename || fshape != eshape {
            return Err(Error::Mismatch(format!("stored {fname} {fshape:?}, model expects {ename} {eshape:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Model, ModelSpec};
    use crate::training::{TrainConfig, Trainer};
    use crate::traversal::TraversalConfig;

    #[test]
    fn round_trip_with_training_state() {
        let model = Model::new(ModelSpec::tiny(4), 1).unwrap();
        let mut t = Trainer::new(model, TraversalConfig::synthetic(1), TrainConfig::default()).unwrap();
        t.step = 7;
        t.baselines.sequence.b = 0.625;
        let c = Checkpoint::from_trainer(&t, "seed = 1\n");
        let d = Checkpoint::decode(&c.encode(), Some(&manifest_of(&t.model.store))).unwrap();
        assert_eq!(c, d);
        let mut fresh = Trainer::new(Model::new(ModelSpec::tiny(4), 2).unwrap(), t.traversal.clone(), TrainConfig::default()).unwrap();
        d.restore_trainer(&mut fresh).unwrap();
        assert_eq!(fresh.step, 7);
        for (id, p) in t.model.store.iter() {
            assert_eq!(p.value.data(), fresh.model.store.get(id).data());
        }
    }

    #[test]
    fn mismatched_shapes_are_reported() {
        let a = Model::new(ModelSpec::tiny(4), 1).unwrap();
        let b = Model::new(ModelSpec::tiny(5), 1).unwrap();
        let bytes = Checkpoint::from_store(&a.store, "").encode();
        let err = Checkpoint::decode(&bytes, Some(&manifest_of(&b.store))).unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)));
        let c = Checkpoint::decode(&bytes, None).unwrap();
        let mut store = b.store.clone();
        assert!(matches!(c.apply_to_store(&mut store), Err(Error::Mismatch(_))));
    }

    #[test]
    fn corrupt_file_is_a_format_error() {
        let a = Model::new(ModelSpec::tiny(4), 1).unwrap();
        let mut bytes = Checkpoint::from_store(&a.store, "").encode();
        bytes[20] ^= 0xff;
        assert!(matches!(Checkpoint::decode(&bytes, None), Err(Error::Format { .. })));
    }
}
