//! Checkpoint directories: one packed tensor file per named tensor plus a
//! text manifest with the model configuration and a config fingerprint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowStack};
use crate::itae::{ItaeConfig, ItaeModel};
use crate::tensor::Tensor5;

const FORMAT: &str = "itae-checkpoint-1";
const MANIFEST: &str = "manifest.txt";

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// SHA-256 of `key=value` lines.
pub fn fingerprint(kv: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in kv {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

/// SHA-256 over the names and bytes of every file in a directory.
pub fn hash_dir(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.file_name()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        let path = dir.join(&name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(name.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub fingerprint: String,
    pub config: Vec<(String, String)>,
    pub tensors: BTreeMap<String, Tensor5>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut m = String::new();
        let _ = writeln!(m, "format={FORMAT}");
        let _ = writeln!(m, "kind={}", self.kind);
        let _ = writeln!(m, "fingerprint={}", self.fingerprint);
        for (k, v) in &self.config {
            let _ = writeln!(m, "config.{k}={v}");
        }
        for (name, t) in &self.tensors {
            let _ = writeln!(m, "tensor.{name}={}", t.shape());
            t.save(dir.join(format!("{name}.t5")))?;
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, m).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut kind = None;
        let mut fp = None;
        let mut config = Vec::new();
        let mut tensors = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(&path, format!("bad manifest line {line:?}")))?;
            if k == "format" {
                if v != FORMAT {
                    return Err(Error::format(
                        &path,
                        format!("unsupported checkpoint format {v:?}"),
                    ));
                }
            } else if k == "kind" {
                kind = Some(v.to_string());
            } else if k == "fingerprint" {
                fp = Some(v.to_string());
            } else if let Some(key) = k.strip_prefix("config.") {
                config.push((key.to_string(), v.to_string()));
            } else if let Some(name) = k.strip_prefix("tensor.") {
                let t = Tensor5::load(dir.join(format!("{name}.t5")))?;
                if t.shape().to_string() != v {
                    return Err(Error::format(
                        &path,
                        format!("{name} has shape {} but manifest says {v}", t.shape()),
                    ));
                }
                tensors.insert(name.to_string(), t);
            } else {
                return Err(Error::format(&path, format!("unknown manifest key {k:?}")));
            }
        }
        Ok(Checkpoint {
            kind: kind.ok_or_else(|| Error::format(&path, "manifest has no kind"))?,
            fingerprint: fp.ok_or_else(|| Error::format(&path, "manifest has no fingerprint"))?,
            config,
            tensors,
        })
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn itae_checkpoint(model: &ItaeModel, fingerprint: &str) -> Checkpoint {
    Checkpoint {
        kind: "itae".into(),
        fingerprint: fingerprint.into(),
        config: model.config.to_kv(),
        tensors: model
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect(),
    }
}

/// Rebuild a model from a checkpoint; every parameter must be present.
pub fn itae_from_checkpoint(ck: &Checkpoint) -> Result<ItaeModel> {
    ck.expect_kind("itae")?;
    let mut model = ItaeModel::new(ItaeConfig::from_kv(&ck.config)?)?;
    let mut seen = 0;
    for p in model.params_mut() {
        let t = ck
            .tensors
            .get(&p.name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Shape {
                op: "load itae",
                lhs: p.value.shape(),
                rhs: t.shape(),
            });
        }
        p.value = t.clone();
        seen += 1;
    }
    if seen != ck.tensors.len() {
        return Err(Error::Config(
            "checkpoint has tensors the model does not use".into(),
        ));
    }
    Ok(model)
}

pub fn flow_config_kv(c: &FlowConfig) -> Vec<(String, String)> {
    vec![
        ("in_channels".into(), c.in_channels.to_string()),
        ("steps".into(), c.steps.to_string()),
        ("levels".into(), c.levels.to_string()),
        ("hidden".into(), c.hidden.to_string()),
        ("squeeze".into(), c.squeeze.to_string()),
        ("seed".into(), c.seed.to_string()),
    ]
}

pub fn flow_config_from_kv(kv: &[(String, String)]) -> Result<FlowConfig> {
    let get = |k: &str| -> Result<&str> {
        kv.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Config(format!("missing flow key {k}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
    }
    Ok(FlowConfig {
        in_channels: num("in_channels", get("in_channels")?)?,
        steps: num("steps", get("steps")?)?,
        levels: num("levels", get("levels")?)?,
        hidden: num("hidden", get("hidden")?)?,
        squeeze: num("squeeze", get("squeeze")?)?,
        seed: num("seed", get("seed")?)?,
    })
}

pub fn flow_checkpoint(stack: &FlowStack, fingerprint: &str) -> Checkpoint {
    Checkpoint {
        kind: "flow".into(),
        fingerprint: fingerprint.into(),
        config: flow_config_kv(&stack.config),
        tensors: stack
            .state()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect(),
    }
}

pub fn flow_from_checkpoint(ck: &Checkpoint) -> Result<FlowStack> {
    ck.expect_kind("flow")?;
    let mut stack = FlowStack::new(flow_config_from_kv(&ck.config)?)?;
    let expected = stack.state().len();
    if expected != ck.tensors.len() {
        return Err(Error::Config(format!(
            "flow checkpoint has {} tensors, topology needs {expected}",
            ck.tensors.len()
        )));
    }
    for (name, t) in &ck.tensors {
        stack.set_state(name, t.clone())?;
    }
    stack.mark_initialized();
    Ok(stack)
}
