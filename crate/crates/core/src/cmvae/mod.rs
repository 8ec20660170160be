//! Cross-modal representation models: constrained and unconstrained
//! cross-modal VAEs, an image-only VAE and a direct pose regressor.

pub mod analysis;
pub mod arch;
pub mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{checkpoint, Graph, LatentDistribution, ParameterStore, Rng, Tensor, TensorMap, LOGVAR_MAX, LOGVAR_MIN};
use crate::scene::pose::POLE_EPS;
use crate::scene::{wrap_angle, PoseRanges, RelativeGatePose};

pub use analysis::{evaluate_pose_error, interpolate, latent_traversal, tile_horizontal, InterpolationStep, PoseErrorReport, Traversal};
pub use arch::{stack_images, ArchConfig, CONSTRAINED_SLOTS};
pub use train::{evaluate_losses, loss_at_mean, split, train, train_step, write_loss_csv, EpochLosses, LossReport, StepMode, TrainConfig, TrainOutcome};

pub(crate) const ENCODER: &str = "enc";
pub(crate) const IMAGE_DECODER: &str = "dec_img";
pub(crate) const POSE_DECODER: &str = "dec_pose";
const INITIAL_LOGVAR: f32 = -4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    CmvaeUnconstrained,
    CmvaeConstrained,
    VanillaVae,
    Regressor,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] =
        [ModelVariant::CmvaeUnconstrained, ModelVariant::CmvaeConstrained, ModelVariant::VanillaVae, ModelVariant::Regressor];

    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::CmvaeUnconstrained => "cmvae_unconstrained",
            ModelVariant::CmvaeConstrained => "cmvae_constrained",
            ModelVariant::VanillaVae => "vanilla_vae",
            ModelVariant::Regressor => "regressor",
        }
    }

    fn code(self) -> f32 {
        Self::ALL.iter().position(|&v| v == self).unwrap() as f32
    }

    fn from_code(c: f32) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.code() == c)
    }

    pub fn has_latent(self) -> bool {
        self != ModelVariant::Regressor
    }

    pub fn has_pose(self) -> bool {
        self != ModelVariant::VanillaVae
    }

    pub fn has_image_decoder(self) -> bool {
        self.has_latent()
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown model variant `{s}`")))
    }
}

/// Affine map from physical pose components to roughly `[−1, 1]`:
/// `(x − mid) / half_width` per component, ordered `[r, θ, φ, ψ]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseNormalizer {
    pub mid: [f32; 4],
    pub half: [f32; 4],
}

impl PoseNormalizer {
    pub fn from_ranges(ranges: &PoseRanges) -> Result<Self> {
        let rs = [ranges.r, ranges.theta, ranges.phi, ranges.psi];
        let mut out = Self { mid: [0.0; 4], half: [1.0; 4] };
        for (k, r) in rs.iter().enumerate() {
            out.mid[k] = r.mid() as f32;
            out.half[k] = r.half_width() as f32;
            if !(out.half[k] > 0.0) {
                return Err(Error::config("pose normalization needs non-degenerate r, θ, φ and ψ ranges"));
            }
        }
        Ok(out)
    }

    pub fn normalize(&self, p: &RelativeGatePose) -> [f32; 4] {
        let v = p.as_array();
        std::array::from_fn(|k| ((v[k] - self.mid[k] as f64) / self.half[k] as f64) as f32)
    }

    /// Back to physical units with `r > 0`, wrapped azimuth and yaw and the
    /// polar angle kept off the poles.
    pub fn denormalize(&self, y: &[f32]) -> RelativeGatePose {
        let v: [f64; 4] = std::array::from_fn(|k| y[k] as f64 * self.half[k] as f64 + self.mid[k] as f64);
        RelativeGatePose {
            r: v[0].max(1e-3),
            theta: wrap_angle(v[1]),
            phi: v[2].clamp(POLE_EPS, std::f64::consts::PI - POLE_EPS),
            psi: wrap_angle(v[3]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmvaeModel {
    pub variant: ModelVariant,
    pub arch: ArchConfig,
    pub norm: PoseNormalizer,
    pub store: ParameterStore,
}

impl CmvaeModel {
    pub fn new(variant: ModelVariant, arch: ArchConfig, ranges: &PoseRanges, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        if variant == ModelVariant::CmvaeConstrained && arch.latent < 4 {
            return Err(Error::config("the constrained layout needs a latent size of at least 4"));
        }
        let norm = PoseNormalizer::from_ranges(ranges)?;
        let mut store = ParameterStore::new();
        let enc_out = if variant.has_latent() { 2 * arch.latent } else { 4 };
        arch::init_encoder(&mut store, ENCODER, &arch, enc_out, rng)?;
        if variant.has_latent() {
            // Start with a narrow posterior so early samples still carry μ.
            let bias = store.get_mut(&format!("{ENCODER}.out.b"))?;
            bias.data_mut()[arch.latent..].fill(INITIAL_LOGVAR);
        }
        if variant.has_image_decoder() {
            arch::init_image_decoder(&mut store, IMAGE_DECODER, &arch, rng)?;
        }
        if variant.has_latent() && variant.has_pose() {
            let constrained = variant == ModelVariant::CmvaeConstrained;
            arch::init_pose_decoder(&mut store, POSE_DECODER, arch.latent, constrained, rng)?;
        }
        Ok(Self { variant, arch, norm, store })
    }

    /// Width of the feature vector exposed to downstream policies.
    pub fn feature_len(&self) -> usize {
        if self.variant.has_latent() {
            self.arch.latent
        } else {
            4
        }
    }

    pub(crate) fn constrained(&self) -> bool {
        self.variant == ModelVariant::CmvaeConstrained
    }

    fn require_latent(&self, op: &str) -> Result<()> {
        if self.variant.has_latent() {
            Ok(())
        } else {
            Err(Error::unsupported(self.variant, op))
        }
    }

    fn require_pose(&self, op: &str) -> Result<()> {
        if self.variant.has_pose() {
            Ok(())
        } else {
            Err(Error::unsupported(self.variant, op))
        }
    }

    /// Encoder outputs for a batch `B×3×H×W`: `(μ, logvar)` as `B×N` each,
    /// or for the regressor the normalized pose with an empty second part.
    pub(crate) fn encoder_outputs(&self, g: &mut Graph, x: crate::numerics::Var, train: bool) -> Result<(crate::numerics::Var, Option<crate::numerics::Var>)> {
        let out = arch::encoder_forward(g, &self.store, ENCODER, &self.arch, x, train)?;
        if !self.variant.has_latent() {
            return Ok((out, None));
        }
        let n = self.arch.latent;
        let mu = g.slice_cols(out, 0, n)?;
        let lv = g.slice_cols(out, n, n)?;
        let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, Some(lv)))
    }

    /// Deterministic features for a batch of images: μ for latent models,
    /// the normalized pose estimate for the regressor. Returns `B×F` values.
    pub fn features(&self, images: &Tensor) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let (mu, _) = self.encoder_outputs(&mut g, x, false)?;
        Ok(g.data(mu).to_vec())
    }

    pub fn encode(&self, image: &Tensor) -> Result<LatentDistribution> {
        self.require_latent("encode")?;
        let batch = stack_images([image], self.arch.height, self.arch.width)?;
        let mut g = Graph::new();
        let x = g.input(batch);
        let (mu, lv) = self.encoder_outputs(&mut g, x, false)?;
        LatentDistribution::from_logvar(g.data(mu).to_vec(), g.data(lv.expect("latent model")))
    }

    fn check_latents(&self, z: &[f32]) -> Result<usize> {
        let n = self.arch.latent;
        if z.is_empty() || z.len() % n != 0 {
            return Err(Error::config(format!("latent length {} is not a multiple of {n}", z.len())));
        }
        Ok(z.len() / n)
    }

    /// Decodes `B` latent vectors (concatenated) into `B×3×H×W` images.
    pub fn decode_images(&self, z: &[f32]) -> Result<Tensor> {
        self.require_latent("image decoding")?;
        let b = self.check_latents(z)?;
        let mut g = Graph::new();
        let zv = g.input(Tensor::new(&[b, self.arch.latent], z.to_vec())?);
        let img = arch::image_decoder_forward(&mut g, &self.store, IMAGE_DECODER, &self.arch, zv, false)?;
        Ok(g.value(img).clone())
    }

    pub fn decode_image(&self, z: &[f32]) -> Result<Tensor> {
        if z.len() != self.arch.latent {
            return Err(Error::config(format!("expected a latent of length {}, got {}", self.arch.latent, z.len())));
        }
        let out = self.decode_images(z)?;
        out.reshaped(&[3, self.arch.height, self.arch.width])
    }

    /// Normalized pose predictions for `B` latent vectors, `B×4`.
    pub fn decode_pose_normalized(&self, z: &[f32]) -> Result<Vec<f32>> {
        self.require_latent("pose decoding from a latent")?;
        self.require_pose("pose decoding")?;
        let b = self.check_latents(z)?;
        let mut g = Graph::new();
        let zv = g.input(Tensor::new(&[b, self.arch.latent], z.to_vec())?);
        let y = arch::pose_decoder_forward(&mut g, &self.store, POSE_DECODER, self.constrained(), zv, false)?;
        Ok(g.data(y).to_vec())
    }

    pub fn decode_pose(&self, z: &[f32]) -> Result<RelativeGatePose> {
        self.require_pose("pose decoding")?;
        if z.len() != self.arch.latent {
            return Err(Error::config(format!("expected a latent of length {}, got {}", self.arch.latent, z.len())));
        }
        let y = self.decode_pose_normalized(z)?;
        Ok(self.norm.denormalize(&y))
    }

    /// Pose estimates for a batch of images (at the latent mean).
    pub fn predict_poses(&self, images: &Tensor) -> Result<Vec<RelativeGatePose>> {
        self.require_pose("pose prediction")?;
        let feats = self.features(images)?;
        let y = if self.variant.has_latent() { self.decode_pose_normalized(&feats)? } else { feats };
        Ok(y.chunks(4).map(|c| self.norm.denormalize(c)).collect())
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new();
        map.insert("meta.variant".into(), Tensor::from_vec(vec![self.variant.code()]));
        let a = &self.arch;
        let arch = [a.latent, a.channels[0], a.channels[1], a.channels[2], a.height, a.width];
        map.insert("meta.arch".into(), Tensor::from_vec(arch.iter().map(|&v| v as f32).collect()));
        let mut norm = self.norm.mid.to_vec();
        norm.extend_from_slice(&self.norm.half);
        map.insert("meta.norm".into(), Tensor::from_vec(norm));
        self.store.to_tensor_map(&mut map);
        map
    }

    pub fn from_tensor_map(map: &TensorMap) -> Result<Self> {
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{k}`")));
        let code = get("meta.variant")?;
        let variant = ModelVariant::from_code(code.data()[0]).ok_or_else(|| Error::Checkpoint("unknown variant tag".into()))?;
        let a = get("meta.arch")?.data();
        if a.len() != 6 {
            return Err(Error::Checkpoint("malformed architecture record".into()));
        }
        let u = |i: usize| a[i] as usize;
        let arch = ArchConfig { latent: u(0), channels: [u(1), u(2), u(3)], height: u(4), width: u(5) };
        arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = get("meta.norm")?.data();
        if n.len() != 8 {
            return Err(Error::Checkpoint("malformed pose normalization record".into()));
        }
        let norm = PoseNormalizer { mid: std::array::from_fn(|k| n[k]), half: std::array::from_fn(|k| n[4 + k]) };
        let names: Vec<String> = map
            .keys()
            .filter(|k| !k.starts_with("meta.") && !k.ends_with(".m") && !k.ends_with(".v") && !k.ends_with(".t"))
            .cloned()
            .collect();
        let store = ParameterStore::from_tensor_map(map, &names)?;
        // Shape check against a freshly built model of the same layout.
        let ranges = norm_ranges(&norm);
        let fresh = CmvaeModel::new(variant, arch, &ranges, &mut Rng::new(0, 0))?;
        let same_layout = fresh.store.len() == store.len()
            && fresh.store.iter().all(|(k, p)| store.get(k).map(|t| t.shape() == p.tensor.shape()).unwrap_or(false));
        if !same_layout {
            return Err(Error::Checkpoint(format!("parameters do not match the {variant} layout")));
        }
        Ok(Self { variant, arch, norm, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensor_map())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_map(&checkpoint::load(path)?)
    }
}

fn norm_ranges(norm: &PoseNormalizer) -> PoseRanges {
    use crate::scene::Range;
    let r = |k: usize| Range::new((norm.mid[k] - norm.half[k]) as f64, (norm.mid[k] + norm.half[k]) as f64);
    PoseRanges { r: r(0), theta: r(1), phi: r(2), psi: r(3), roll: Range::new(0.0, 0.0), pitch: Range::new(0.0, 0.0) }
}
