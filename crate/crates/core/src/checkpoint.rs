//! Binary checkpoint format.
//!
//! Layout (little endian): magic `ASCKPT`, u32 version, u64 role period,
//! u64 update index, u64 environment steps, u64 episodes, u64 seed, then four
//! networks (u32 layer count, u64 layer sizes, u64 parameter count, f64
//! parameters) in [`NetId`] order, then a u8 flag and, if set, four optimizer
//! states (u64 step, f64 lr/beta1/beta2/eps, u64 length, f64 m, f64 v).

use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::{Agent, Critics, NetId, Trainer};
use crate::nn::{Adam, Mlp, MlpSpec};
use crate::policy::PolicyBundle;

pub const MAGIC: &[u8; 6] = b"ASCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub update_index: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agent: Agent,
    pub meta: CheckpointMeta,
    pub optimizers: Option<[Adam; 4]>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            agent: trainer.agent.clone(),
            meta: CheckpointMeta {
                update_index: trainer.update_index,
                env_steps: trainer.env_steps,
                episodes: trainer.episodes,
                seed: trainer.seed,
            },
            optimizers: Some(trainer.optimizers.clone()),
        }
    }

    /// Restores networks, optimizer moments and counters into `trainer`.
    pub fn restore_into(&self, trainer: &mut Trainer) -> Result<()> {
        for id in NetId::ALL {
            if self.agent.net(id).spec() != trainer.agent.net(id).spec() {
                return Err(Error::Checkpoint(format!("{} shape differs from the configured network", id.name())));
            }
        }
        trainer.agent = self.agent.clone();
        if let Some(opt) = &self.optimizers {
            trainer.optimizers = opt.clone();
        }
        trainer.update_index = self.meta.update_index;
        trainer.env_steps = self.meta.env_steps;
        trainer.episodes = self.meta.episodes;
        trainer.seed = self.meta.seed;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            self.agent.bundle.role_period as u64,
            self.meta.update_index,
            self.meta.env_steps,
            self.meta.episodes,
            self.meta.seed,
        ] {
            put_u64(&mut out, v);
        }
        for id in NetId::ALL {
            let net = self.agent.net(id);
            let sizes = net.spec().layer_sizes();
            out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
            for &s in sizes {
                put_u64(&mut out, s as u64);
            }
            put_f64s(&mut out, net.params());
        }
        match &self.optimizers {
            None => out.push(0),
            Some(opts) => {
                out.push(1);
                for o in opts {
                    put_u64(&mut out, o.step);
                    for v in [o.lr, o.beta1, o.beta2, o.eps] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    put_f64s(&mut out, &o.m);
                    put_f64s(&mut out, &o.v);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let role_period = r.u64()? as usize;
        let meta = CheckpointMeta { update_index: r.u64()?, env_steps: r.u64()?, episodes: r.u64()?, seed: r.u64()? };
        let mut nets = Vec::with_capacity(4);
        for _ in 0..4 {
            let n_layers = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            if n_layers > 64 {
                return Err(Error::Checkpoint("implausible layer count".into()));
            }
            let sizes = (0..n_layers).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let spec = MlpSpec::new(sizes).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let params = r.f64s()?;
            nets.push(Mlp::from_params(spec, params).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        let optimizers = match r.take(1)?[0] {
            0 => None,
            1 => {
                let mut opts = Vec::with_capacity(4);
                for net in &nets {
                    let step = r.u64()?;
                    let lr = r.f64()?;
                    let beta1 = r.f64()?;
                    let beta2 = r.f64()?;
                    let eps = r.f64()?;
                    let m = r.f64s()?;
                    let v = r.f64s()?;
                    if m.len() != net.params().len() || v.len() != m.len() {
                        return Err(Error::Checkpoint("optimizer state length mismatch".into()));
                    }
                    opts.push(Adam { lr, beta1, beta2, eps, step, m, v });
                }
                Some(opts.try_into().unwrap())
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let mut it = nets.into_iter();
        let role_actor = it.next().unwrap();
        let primitive_actor = it.next().unwrap();
        let role = it.next().unwrap();
        let primitive = it.next().unwrap();
        if role_period == 0 {
            return Err(Error::Checkpoint("role period must be positive".into()));
        }
        Ok(Self {
            agent: Agent {
                bundle: PolicyBundle { role_actor, primitive_actor, role_period },
                critics: Critics { role, primitive },
            },
            meta,
            optimizers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    put_u64(out, vs.len() as u64);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
