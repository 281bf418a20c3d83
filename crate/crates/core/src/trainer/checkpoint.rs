//! Binary checkpoints and the metrics CSV.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! "VISA1"
//! u32 tag length, tag bytes          environment tag
//! u64 episode length
//! u64 embedding width
//! 4 × network:  u64 layer count L, (L+1) × u64 widths
//! f64 parameters of ψ, φ, φ̂, π in that order, each in declaration order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::actor::PolicyParams;
use crate::contrastive::EncoderSet;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"VISA1";

pub const METRICS_HEADER: &str = "env_step,eval_success_rate,critic_loss,infonce_value,club_value,\
bo_value,actor_loss,policy_entropy,mean_reach_visited,mean_reach_augmented";

/// Trained networks plus the environment they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub env: EnvKind,
    pub episode_len: usize,
    pub encoders: EncoderSet,
    pub policy: PolicyParams,
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_sizes(out: &mut Vec<u8>, p: &ParamSet) {
    let sizes = p.sizes();
    put_u64(out, sizes.len() - 1);
    for s in sizes {
        put_u64(out, s);
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
            .ok_or_else(|| Error::Checkpoint("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint("dimension overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn sizes(&mut self) -> Result<Vec<usize>> {
        let layers = self.u64()?;
        if layers == 0 || layers > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
        }
        let sizes = (0..=layers).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(Error::Checkpoint(format!("implausible layer widths {sizes:?}")));
        }
        Ok(sizes)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let tag = self.env.tag().as_bytes();
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag);
        put_u64(&mut out, self.episode_len);
        put_u64(&mut out, self.encoders.embed_dim);
        let nets = self.networks();
        for p in nets {
            put_sizes(&mut out, p);
        }
        for p in nets {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn networks(&self) -> [&ParamSet; 4] {
        [
            &self.encoders.psi,
            &self.encoders.phi,
            &self.encoders.phi_hat,
            &self.policy.trunk,
        ]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a VISA1 checkpoint".into()));
        }
        let tag_len = r.u32()? as usize;
        let tag = std::str::from_utf8(r.take(tag_len)?)
            .map_err(|_| Error::Checkpoint("environment tag is not UTF-8".into()))?;
        let env = EnvKind::from_tag(tag).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let episode_len = r.u64()?;
        let embed_dim = r.u64()?;
        let shapes = (0..4).map(|_| r.sizes()).collect::<Result<Vec<_>>>()?;
        let mut nets: Vec<ParamSet> = shapes.iter().map(|s| ParamSet::zeros(s)).collect();
        for net in &mut nets {
            for v in net.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        let trunk = nets.pop().expect("four networks");
        let phi_hat = nets.pop().expect("four networks");
        let phi = nets.pop().expect("four networks");
        let psi = nets.pop().expect("four networks");
        let spec = env.spec();
        let ckpt = Self {
            env,
            episode_len,
            encoders: EncoderSet {
                psi,
                phi,
                phi_hat,
                embed_dim,
            },
            policy: PolicyParams {
                action_dim: trunk.output_dim() / 2,
                trunk,
                action_low: spec.action_low,
                action_high: spec.action_high,
            },
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checks that the networks fit the environment.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Checkpoint(e.to_string());
        self.encoders.validate().map_err(wrap)?;
        self.policy.trunk.validate().map_err(wrap)?;
        let env = self.env;
        let sd = env.state_feature_dim();
        let expected = [
            ("psi", self.encoders.psi.input_dim(), sd + env.action_feature_dim()),
            ("phi", self.encoders.phi.input_dim(), sd),
            ("policy", self.policy.trunk.input_dim(), 2 * sd),
            ("policy output", self.policy.trunk.output_dim(), 2 * env.spec().action_dim),
        ];
        for (name, got, want) in expected {
            if got != want {
                return Err(Error::Checkpoint(format!(
                    "{name} width {got} does not match env {} (expected {want})",
                    env.tag()
                )));
            }
        }
        if self.episode_len < 2 {
            return Err(Error::Checkpoint("episode length must be at least 2".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the stored environment against `env`.
    pub fn load_for(path: &Path, env: EnvKind) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.env != env {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {}, not {}",
                ckpt.env.tag(),
                env.tag()
            )));
        }
        Ok(ckpt)
    }
}

/// One evaluation interval.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub env_step: usize,
    pub eval_success_rate: f64,
    pub critic_loss: f64,
    pub infonce_value: f64,
    pub club_value: f64,
    pub bo_value: f64,
    pub actor_loss: f64,
    pub policy_entropy: f64,
    pub mean_reach_visited: f64,
    pub mean_reach_augmented: f64,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let vals = [
            self.eval_success_rate,
            self.critic_loss,
            self.infonce_value,
            self.club_value,
            self.bo_value,
            self.actor_loss,
            self.policy_entropy,
            self.mean_reach_visited,
            self.mean_reach_augmented,
        ];
        let mut line = self.env_step.to_string();
        for v in vals {
            line.push(',');
            line.push_str(&fmt_value(v));
        }
        line
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::Input(format!("metrics row has {} fields, expected 10", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Input(format!("bad metrics field '{}'", f[i])))
        };
        Ok(Self {
            env_step: f[0]
                .parse()
                .map_err(|_| Error::Input(format!("bad env_step '{}'", f[0])))?,
            eval_success_rate: num(1)?,
            critic_loss: num(2)?,
            infonce_value: num(3)?,
            club_value: num(4)?,
            bo_value: num(5)?,
            actor_loss: num(6)?,
            policy_entropy: num(7)?,
            mean_reach_visited: num(8)?,
            mean_reach_augmented: num(9)?,
        })
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Input(format!("{} has an unexpected header", path.display())));
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::from_csv).collect()
}
