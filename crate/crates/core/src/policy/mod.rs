//! Behavior-cloning policies: a small dense head over the features of a
//! frozen representation model, or over a jointly trained encoder.

mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmvae::arch::{self, ArchConfig};
use crate::cmvae::{CmvaeModel, ModelVariant};
use crate::error::{Error, Result};
use crate::numerics::{checkpoint, Activation, Graph, ParameterStore, Rng, Tensor, TensorMap, Var};
use crate::simulator::{Limits, Observation, Pilot, VelocityCommand};

pub use train::{bc_train, evaluate_mse, write_bc_loss_csv, BcEpoch, BcOutcome, BcTrainConfig};

pub const HEAD: &str = "head";
pub const POLICY_ENCODER: &str = "enc";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyVariant {
    #[serde(rename = "BC_con")]
    BcCon,
    #[serde(rename = "BC_unc")]
    BcUnc,
    #[serde(rename = "BC_img")]
    BcImg,
    #[serde(rename = "BC_reg")]
    BcReg,
    #[serde(rename = "BC_full")]
    BcFull,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 5] =
        [PolicyVariant::BcCon, PolicyVariant::BcUnc, PolicyVariant::BcImg, PolicyVariant::BcReg, PolicyVariant::BcFull];

    pub fn tag(self) -> &'static str {
        match self {
            PolicyVariant::BcCon => "BC_con",
            PolicyVariant::BcUnc => "BC_unc",
            PolicyVariant::BcImg => "BC_img",
            PolicyVariant::BcReg => "BC_reg",
            PolicyVariant::BcFull => "BC_full",
        }
    }

    /// Representation model whose features the head reads; `None` for the
    /// end-to-end variant.
    pub fn feature_variant(self) -> Option<ModelVariant> {
        match self {
            PolicyVariant::BcCon => Some(ModelVariant::CmvaeConstrained),
            PolicyVariant::BcUnc => Some(ModelVariant::CmvaeUnconstrained),
            PolicyVariant::BcImg => Some(ModelVariant::VanillaVae),
            PolicyVariant::BcReg => Some(ModelVariant::Regressor),
            PolicyVariant::BcFull => None,
        }
    }

    fn code(self) -> f32 {
        Self::ALL.iter().position(|v| *v == self).expect("listed") as f32
    }

    fn from_code(c: f32) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.code() == c)
    }
}

impl std::fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for PolicyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown policy variant `{s}` (expected one of BC_con, BC_unc, BC_img, BC_reg, BC_full)")))
    }
}

/// Widths of the two hidden layers of the dense head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: [usize; 2],
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden: [64, 32] }
    }
}

fn init_head(store: &mut ParameterStore, input: usize, head: &HeadConfig, rng: &mut Rng) -> Result<()> {
    let widths = [input, head.hidden[0], head.hidden[1], 4];
    for i in 0..3 {
        arch::init_dense(store, &format!("{HEAD}.l{i}"), widths[i], widths[i + 1], rng)?;
    }
    Ok(())
}

fn head_forward(g: &mut Graph, store: &ParameterStore, x: Var, train: bool) -> Result<Var> {
    let mut h = x;
    for i in 0..3 {
        h = arch::dense(g, store, &format!("{HEAD}.l{i}"), h, train)?;
        let kind = if i < 2 { Activation::LeakyRelu } else { Activation::Tanh };
        h = g.activation(h, kind)?;
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub variant: PolicyVariant,
    pub head: HeadConfig,
    /// Width of the head input; pose features are zero-padded up to it.
    pub input: usize,
    pub limits: Limits,
    /// Image size, and for the end-to-end variant the encoder layout.
    pub arch: ArchConfig,
    /// Frozen representation model of the feature-based variants.
    pub features: Option<CmvaeModel>,
    /// Head parameters, plus the encoder for the end-to-end variant.
    pub store: ParameterStore,
}

impl Policy {
    /// A fresh policy. Feature-based variants need the matching trained
    /// representation model; the end-to-end variant builds its own encoder
    /// from `arch` with `arch.latent` outputs.
    pub fn new(
        variant: PolicyVariant,
        features: Option<CmvaeModel>,
        arch: ArchConfig,
        head: HeadConfig,
        limits: Limits,
        rng: &mut Rng,
    ) -> Result<Self> {
        if head.hidden.contains(&0) {
            return Err(Error::config("head hidden widths must be positive"));
        }
        let mut store = ParameterStore::new();
        let (arch, input) = match (variant.feature_variant(), &features) {
            (Some(want), Some(model)) => {
                if model.variant != want {
                    return Err(Error::config(format!("{variant} needs {want} features, got {}", model.variant)));
                }
                (model.arch, model.arch.latent.max(model.feature_len()))
            }
            (Some(want), None) => return Err(Error::config(format!("{variant} needs a trained {want} model"))),
            (None, Some(_)) => return Err(Error::config(format!("{variant} trains its own encoder and takes no feature model"))),
            (None, None) => {
                arch.validate()?;
                arch::init_encoder(&mut store, POLICY_ENCODER, &arch, arch.latent, rng)?;
                (arch, arch.latent)
            }
        };
        init_head(&mut store, input, &head, rng)?;
        Ok(Self { variant, head, input, limits, arch, features, store })
    }

    /// Number of head parameters.
    pub fn head_parameters(&self) -> usize {
        self.store.count_scalars(&format!("{HEAD}."))
    }

    /// Hash of the frozen feature model's parameters.
    pub fn feature_hash(&self) -> Option<String> {
        self.features.as_ref().map(|m| m.store.content_hash(""))
    }

    /// Head inputs for a batch `B×3×H×W`: the feature model's latent mean,
    /// or the regressed normalized pose padded with zeros. Returns `B×input`.
    pub fn featurize(&self, images: &Tensor) -> Result<Vec<f32>> {
        let Some(model) = &self.features else {
            return Err(Error::unsupported(self.variant, "a separate feature step"));
        };
        let raw = model.features(images)?;
        let width = model.feature_len();
        if width == self.input {
            return Ok(raw);
        }
        let mut out = Vec::with_capacity(raw.len() / width * self.input);
        for row in raw.chunks(width) {
            out.extend_from_slice(row);
            out.extend(std::iter::repeat(0.0).take(self.input - width));
        }
        Ok(out)
    }

    /// Head input node for a batch of images, built into `g`. Encoder
    /// parameters are trainable only when `train_encoder` is set.
    pub(crate) fn input_node(&self, g: &mut Graph, images: &Tensor, train_encoder: bool) -> Result<Var> {
        if self.features.is_some() {
            let b = images.shape()[0];
            let f = self.featurize(images)?;
            return Ok(g.input(Tensor::new(&[b, self.input], f)?));
        }
        let x = g.input(images.clone());
        arch::encoder_forward(g, &self.store, POLICY_ENCODER, &self.arch, x, train_encoder)
    }

    pub(crate) fn head_node(&self, g: &mut Graph, x: Var, train: bool) -> Result<Var> {
        head_forward(g, &self.store, x, train)
    }

    /// Normalized actions in `(−1, 1)` for a batch of images, `B×4`.
    pub fn normalized_actions(&self, images: &Tensor) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let x = self.input_node(&mut g, images, false)?;
        let y = self.head_node(&mut g, x, false)?;
        Ok(g.data(y).to_vec())
    }

    /// Head output for precomputed head inputs, `B×input` → `B×4`.
    pub fn head_outputs(&self, inputs: &[f32]) -> Result<Vec<f32>> {
        if inputs.is_empty() || inputs.len() % self.input != 0 {
            return Err(Error::config(format!("head input length {} is not a multiple of {}", inputs.len(), self.input)));
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[inputs.len() / self.input, self.input], inputs.to_vec())?);
        let y = self.head_node(&mut g, x, false)?;
        Ok(g.data(y).to_vec())
    }

    pub fn denormalize(&self, y: &[f32]) -> VelocityCommand {
        self.limits.clamp(self.limits.denormalize(std::array::from_fn(|k| y[k] as f64)))
    }

    /// Velocity command for one `3×H×W` image.
    pub fn act(&self, image: &Tensor) -> Result<VelocityCommand> {
        let batch = arch::stack_images([image], self.arch.height, self.arch.width)?;
        let y = self.normalized_actions(&batch)?;
        Ok(self.denormalize(&y))
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new();
        map.insert("meta.policy".into(), Tensor::from_vec(vec![self.variant.code()]));
        map.insert(
            "meta.head".into(),
            Tensor::from_vec(vec![self.input as f32, self.head.hidden[0] as f32, self.head.hidden[1] as f32]),
        );
        map.insert("meta.limits".into(), Tensor::from_vec(vec![self.limits.v_max as f32, self.limits.omega_max as f32]));
        let a = &self.arch;
        let arch = [a.latent, a.channels[0], a.channels[1], a.channels[2], a.height, a.width];
        map.insert("meta.arch".into(), Tensor::from_vec(arch.iter().map(|&v| v as f32).collect()));
        if let Some(hash) = self.feature_hash() {
            map.insert("meta.feature_hash".into(), Tensor::from_vec(hash.bytes().map(|b| b as f32).collect()));
        }
        self.store.to_tensor_map(&mut map);
        map
    }

    /// Rebuilds a policy; feature-based variants need the same feature model
    /// they were trained on, checked by parameter hash.
    pub fn from_tensor_map(map: &TensorMap, features: Option<CmvaeModel>) -> Result<Self> {
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{k}`")));
        let variant = PolicyVariant::from_code(get("meta.policy")?.data()[0])
            .ok_or_else(|| Error::Checkpoint("unknown policy variant tag".into()))?;
        let h = get("meta.head")?.data();
        let l = get("meta.limits")?.data();
        let a = get("meta.arch")?.data();
        if h.len() != 3 || l.len() != 2 || a.len() != 6 {
            return Err(Error::Checkpoint("malformed policy metadata".into()));
        }
        let u = |i: usize| a[i] as usize;
        let arch = ArchConfig { latent: u(0), channels: [u(1), u(2), u(3)], height: u(4), width: u(5) };
        let head = HeadConfig { hidden: [h[1] as usize, h[2] as usize] };
        let limits = Limits { v_max: l[0] as f64, omega_max: l[1] as f64 };
        if let Some(stored) = map.get("meta.feature_hash") {
            let stored: String = stored.data().iter().map(|&b| b as u8 as char).collect();
            let actual = features.as_ref().map(|m| m.store.content_hash(""));
            if actual.as_deref() != Some(stored.as_str()) {
                return Err(Error::Checkpoint(format!("{variant} was trained on a different feature model (expected hash {stored})")));
            }
        }
        let names: Vec<String> = map
            .keys()
            .filter(|k| !k.starts_with("meta.") && !k.ends_with(".m") && !k.ends_with(".v") && !k.ends_with(".t"))
            .cloned()
            .collect();
        let store = ParameterStore::from_tensor_map(map, &names)?;
        let fresh = Policy::new(variant, features, arch, head, limits, &mut Rng::new(0, 0)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let same_layout = fresh.input == h[0] as usize
            && fresh.store.len() == store.len()
            && fresh.store.iter().all(|(k, p)| store.get(k).map(|t| t.shape() == p.tensor.shape()).unwrap_or(false));
        if !same_layout {
            return Err(Error::Checkpoint(format!("parameters do not match the {variant} layout")));
        }
        Ok(Self { store, ..fresh })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensor_map())
    }

    pub fn load(path: &Path, features: Option<CmvaeModel>) -> Result<Self> {
        Self::from_tensor_map(&checkpoint::load(path)?, features)
    }
}

impl Pilot for Policy {
    fn needs_image(&self) -> bool {
        true
    }

    fn command(&mut self, obs: &Observation) -> Result<VelocityCommand> {
        let image = obs.image.ok_or_else(|| Error::Usage("policy needs the onboard image".into()))?;
        self.act(image)
    }
}
