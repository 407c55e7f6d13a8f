use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use renormlab_tensor::{load_ften, save_ften, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::{adaptable_weights, decoder_specs, down_name, encoder_specs, up_name, Init, ParamSpec};
use crate::error::{LabError, Result};
use crate::lora::{FactorVars, LoraAdapter, NormKind, RenormMode};

/// Named parameters of the encoder and decoder, the adapters attached to
/// encoder weights, and the set of names that must not train.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: BTreeMap<String, Tensor>,
    pub decoder: BTreeMap<String, Tensor>,
    pub adapters: BTreeMap<String, LoraAdapter>,
    pub freeze_mask: BTreeSet<String>,
}

fn sample(specs: &[ParamSpec], rng: &mut impl Rng) -> BTreeMap<String, Tensor> {
    specs
        .iter()
        .map(|s| {
            let t = match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
                Init::Normal(std) => {
                    let n = Normal::new(0.0, std).expect("finite std");
                    Tensor::from_fn(&s.shape, |_| n.sample(rng))
                }
            };
            (s.name.clone(), t)
        })
        .collect()
}

/// Tape handles for one forward pass.
#[derive(Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
    /// Trainable leaves keyed by parameter name.
    pub trainable: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| LabError::Contract(format!("unknown parameter {name}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ModelConfig,
    encoder: Vec<String>,
    decoder: Vec<String>,
    adapters: Vec<String>,
    freeze_mask: Vec<String>,
    decoder_checksum: String,
}

/// SHA-256 over `(name, shape, little-endian data)` in sorted name order.
pub fn params_checksum(params: &BTreeMap<String, Tensor>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.ndim() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

impl ModelState {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let encoder = sample(&encoder_specs(&config), rng);
        let decoder = sample(&decoder_specs(&config), rng);
        Ok(ModelState {
            config,
            encoder,
            decoder,
            adapters: BTreeMap::new(),
            freeze_mask: BTreeSet::new(),
        })
    }

    pub fn decoder_checksum(&self) -> String {
        params_checksum(&self.decoder)
    }

    /// Attaches a fresh adapter to every attention and MLP weight of the
    /// encoder and freezes the weights they wrap.
    pub fn attach_adapters(
        &mut self,
        rank: usize,
        alpha: f64,
        mode: RenormMode,
        kind: NormKind,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if !self.adapters.is_empty() {
            return Err(LabError::Config("adapters already attached".into()));
        }
        for name in adaptable_weights(&self.config) {
            let base = self.encoder[&name].clone();
            let a = LoraAdapter::new(base, rank, alpha, mode, kind, rng)?;
            self.adapters.insert(name.clone(), a);
            self.freeze_mask.insert(name);
        }
        Ok(())
    }

    pub fn freeze_decoder(&mut self) {
        self.freeze_mask.extend(self.decoder.keys().cloned());
    }

    pub fn freeze_encoder(&mut self) {
        self.freeze_mask.extend(self.encoder.keys().cloned());
    }

    /// Every parameter by name, adapter factors included.
    pub fn parameters(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (w, a) in &self.adapters {
            out.insert(down_name(w), a.down().clone());
            out.insert(up_name(w), a.up().clone());
        }
        out
    }

    /// Names that a fine-tuning step may update.
    pub fn trainable_names(&self) -> Vec<String> {
        self.parameters()
            .into_keys()
            .filter(|n| !self.freeze_mask.contains(n))
            .collect()
    }

    pub fn parameter(&self, name: &str) -> Result<Tensor> {
        if let Some(t) = self.encoder.get(name).or_else(|| self.decoder.get(name)) {
            return Ok(t.clone());
        }
        for (w, a) in &self.adapters {
            if name == down_name(w) {
                return Ok(a.down().clone());
            }
            if name == up_name(w) {
                return Ok(a.up().clone());
            }
        }
        Err(LabError::Contract(format!("unknown parameter {name}")))
    }

    /// Replaces one parameter. Frozen names are rejected.
    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.freeze_mask.contains(name) {
            return Err(LabError::Contract(format!("{name} is frozen")));
        }
        let check = |old: &Tensor| {
            if old.shape() != value.shape() {
                Err(LabError::Shape(format!("{name}: {:?} vs {:?}", old.shape(), value.shape())))
            } else {
                Ok(())
            }
        };
        if let Some(old) = self.encoder.get_mut(name) {
            check(old)?;
            *old = value;
            return Ok(());
        }
        if let Some(old) = self.decoder.get_mut(name) {
            check(old)?;
            *old = value;
            return Ok(());
        }
        for (w, a) in self.adapters.iter_mut() {
            if name == down_name(w) {
                return a.set_factors(value, a.up().clone());
            }
            if name == up_name(w) {
                return a.set_factors(a.down().clone(), value);
            }
        }
        Err(LabError::Contract(format!("unknown parameter {name}")))
    }

    /// Puts every parameter on `tape`. With `train`, names outside the
    /// freeze mask become gradient leaves; everything else is constant.
    /// Adapted encoder weights resolve to their effective weight.
    pub fn bind(&self, tape: &mut Tape, train: bool) -> Result<Bound> {
        self.bind_with(tape, train, &HashMap::new())
    }

    /// As [`bind`](Self::bind), but names in `overrides` use the given
    /// tape variables in place of fresh leaves.
    pub fn bind_with(&self, tape: &mut Tape, train: bool, overrides: &HashMap<String, Var>) -> Result<Bound> {
        let leaf = |tape: &mut Tape, name: &str, t: &Tensor| {
            overrides
                .get(name)
                .copied()
                .unwrap_or_else(|| tape.leaf(t.clone(), train && !self.freeze_mask.contains(name)))
        };
        let mut b = Bound::default();
        for (name, t) in self.encoder.iter().chain(&self.decoder) {
            if self.adapters.contains_key(name) {
                continue;
            }
            let v = leaf(tape, name, t);
            let trainable = tape.requires_grad(v);
            if trainable {
                b.trainable.insert(name.clone(), v);
            }
            b.vars.insert(name.clone(), v);
        }
        for (w, a) in &self.adapters {
            let (dn, un) = (down_name(w), up_name(w));
            let down = leaf(tape, &dn, a.down());
            let up = leaf(tape, &un, a.up());
            if tape.requires_grad(down) {
                b.trainable.insert(dn, down);
            }
            if tape.requires_grad(up) {
                b.trainable.insert(un, up);
            }
            let eff = a.effective_weight_on(tape, FactorVars { down, up })?;
            b.vars.insert(w.clone(), eff);
        }
        Ok(b)
    }

    /// Checks the adapter/base contract.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (w, a) in &self.adapters {
            let base = self
                .encoder
                .get(w)
                .ok_or_else(|| LabError::Contract(format!("adapter on unknown weight {w}")))?;
            if base != a.base() {
                return Err(LabError::Contract(format!("adapter base for {w} differs from the encoder weight")));
            }
            if !self.freeze_mask.contains(w) {
                return Err(LabError::Contract(format!("adapted weight {w} is not frozen")));
            }
        }
        Ok(())
    }

    /// Writes `manifest.toml`, `params/<name>.ften` and one directory per
    /// adapter under `adapters/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("params"))?;
        for (name, t) in self.encoder.iter().chain(&self.decoder) {
            save_ften(&dir.join("params").join(format!("{name}.ften")), t)?;
        }
        for (w, a) in &self.adapters {
            a.save(&dir.join("adapters").join(w))?;
        }
        let manifest = CheckpointManifest {
            config: self.config,
            encoder: self.encoder.keys().cloned().collect(),
            decoder: self.decoder.keys().cloned().collect(),
            adapters: self.adapters.keys().cloned().collect(),
            freeze_mask: self.freeze_mask.iter().cloned().collect(),
            decoder_checksum: self.decoder_checksum(),
        };
        fs::write(dir.join("manifest.toml"), toml::to_string(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = toml::from_str(&fs::read_to_string(dir.join("manifest.toml"))?)?;
        let read = |names: &[String]| -> Result<BTreeMap<String, Tensor>> {
            names
                .iter()
                .map(|n| Ok((n.clone(), load_ften(&dir.join("params").join(format!("{n}.ften")))?)))
                .collect()
        };
        let decoder = read(&manifest.decoder)?;
        let found = params_checksum(&decoder);
        if found != manifest.decoder_checksum {
            return Err(LabError::Checksum {
                what: "decoder".into(),
                expected: manifest.decoder_checksum,
                found,
            });
        }
        let mut adapters = BTreeMap::new();
        for w in &manifest.adapters {
            adapters.insert(w.clone(), LoraAdapter::load(&dir.join("adapters").join(w))?);
        }
        let state = ModelState {
            config: manifest.config,
            encoder: read(&manifest.encoder)?,
            decoder,
            adapters,
            freeze_mask: manifest.freeze_mask.into_iter().collect(),
        };
        let expected: BTreeSet<String> = encoder_specs(&state.config)
            .into_iter()
            .chain(decoder_specs(&state.config))
            .map(|s| s.name)
            .collect();
        let present: BTreeSet<String> = state.encoder.keys().chain(state.decoder.keys()).cloned().collect();
        if expected != present {
            return Err(LabError::Contract("checkpoint parameters do not match its config".into()));
        }
        state.validate()?;
        Ok(state)
    }
}
