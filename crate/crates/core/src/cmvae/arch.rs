//! Layer stacks shared by the representation models and the end-to-end
//! policy: a residual convolutional encoder, a transpose-convolutional image
//! decoder and the two pose decoder layouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Graph, ParameterStore, Rng, Tensor, Var};

/// Size knobs of the networks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub latent: usize,
    /// Channels of the three residual blocks.
    pub channels: [usize; 3],
    pub height: usize,
    pub width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { latent: 10, channels: [16, 32, 64], height: 32, width: 32 }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.channels.contains(&0) {
            return Err(Error::config("latent size and channel counts must be positive"));
        }
        if self.height < 8 || self.width < 8 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::config(format!(
                "image size {}×{} must be a positive multiple of 8 in both axes",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Spatial extent after the three stride-2 blocks.
    pub fn bottleneck(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    fn trunk_len(&self) -> usize {
        let (h, w) = self.bottleneck();
        self.channels[2] * h * w
    }
}

/// Loads a parameter either as trainable or as a constant.
pub(crate) fn load(g: &mut Graph, store: &ParameterStore, name: &str, train: bool) -> Result<Var> {
    if train {
        g.param(store, name)
    } else {
        g.frozen(store, name)
    }
}

fn leaky(g: &mut Graph, x: Var) -> Result<Var> {
    g.activation(x, Activation::LeakyRelu)
}

fn init_conv(store: &mut ParameterStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Result<()> {
    store.insert_kaiming(&format!("{name}.k"), &[cout, cin, k, k], cin * k * k, rng)?;
    store.insert_zeros(&format!("{name}.b"), &[cout])
}

fn conv(g: &mut Graph, store: &ParameterStore, name: &str, x: Var, stride: usize, pad: usize, train: bool) -> Result<Var> {
    let k = load(g, store, &format!("{name}.k"), train)?;
    let b = load(g, store, &format!("{name}.b"), train)?;
    let y = g.conv2d(x, k, stride, pad)?;
    g.channel_bias(y, b)
}

fn init_tconv(store: &mut ParameterStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut Rng) -> Result<()> {
    let fan_in = (cin * k * k / (stride * stride)).max(1);
    store.insert_kaiming(&format!("{name}.k"), &[cin, cout, k, k], fan_in, rng)?;
    store.insert_zeros(&format!("{name}.b"), &[cout])
}

fn tconv(g: &mut Graph, store: &ParameterStore, name: &str, x: Var, stride: usize, pad: usize, train: bool) -> Result<Var> {
    let k = load(g, store, &format!("{name}.k"), train)?;
    let b = load(g, store, &format!("{name}.b"), train)?;
    let y = g.conv_transpose2d(x, k, stride, pad)?;
    g.channel_bias(y, b)
}

pub(crate) fn init_dense(store: &mut ParameterStore, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<()> {
    store.insert_kaiming(&format!("{name}.w"), &[inputs, outputs], inputs, rng)?;
    store.insert_zeros(&format!("{name}.b"), &[outputs])
}

pub(crate) fn dense(g: &mut Graph, store: &ParameterStore, name: &str, x: Var, train: bool) -> Result<Var> {
    let w = load(g, store, &format!("{name}.w"), train)?;
    let b = load(g, store, &format!("{name}.b"), train)?;
    g.dense(x, w, b)
}

/// Residual encoder ending in a dense layer with `outputs` units. The output
/// layer starts at zero so a fresh encoder maps every image to the origin.
pub(crate) fn init_encoder(store: &mut ParameterStore, prefix: &str, arch: &ArchConfig, outputs: usize, rng: &mut Rng) -> Result<()> {
    let mut cin = 3;
    for (i, &c) in arch.channels.iter().enumerate() {
        init_conv(store, &format!("{prefix}.block{i}.a"), cin, c, 3, rng)?;
        init_conv(store, &format!("{prefix}.block{i}.b"), c, c, 3, rng)?;
        init_conv(store, &format!("{prefix}.block{i}.skip"), cin, c, 1, rng)?;
        cin = c;
    }
    store.insert_zeros(&format!("{prefix}.out.w"), &[arch.trunk_len(), outputs])?;
    store.insert_zeros(&format!("{prefix}.out.b"), &[outputs])
}

/// `x: B×3×H×W` → `B×outputs`.
pub(crate) fn encoder_forward(g: &mut Graph, store: &ParameterStore, prefix: &str, arch: &ArchConfig, x: Var, train: bool) -> Result<Var> {
    let mut h = x;
    for i in 0..arch.channels.len() {
        let a = conv(g, store, &format!("{prefix}.block{i}.a"), h, 2, 1, train)?;
        let a = leaky(g, a)?;
        let b = conv(g, store, &format!("{prefix}.block{i}.b"), a, 1, 1, train)?;
        let s = conv(g, store, &format!("{prefix}.block{i}.skip"), h, 2, 0, train)?;
        let sum = g.add(b, s)?;
        h = leaky(g, sum)?;
    }
    let batch = g.shape(h)[0];
    let flat = g.reshape(h, &[batch, arch.trunk_len()])?;
    dense(g, store, &format!("{prefix}.out"), flat, train)
}

fn decoder_channels(arch: &ArchConfig) -> [usize; 4] {
    [arch.channels[2], arch.channels[1], arch.channels[0], arch.channels[0]]
}

pub(crate) fn init_image_decoder(store: &mut ParameterStore, prefix: &str, arch: &ArchConfig, rng: &mut Rng) -> Result<()> {
    let ch = decoder_channels(arch);
    init_dense(store, &format!("{prefix}.fc"), arch.latent, arch.trunk_len(), rng)?;
    for i in 0..3 {
        init_tconv(store, &format!("{prefix}.up{i}"), ch[i], ch[i + 1], 4, 2, rng)?;
    }
    init_tconv(store, &format!("{prefix}.out"), ch[3], 3, 3, 1, rng)
}

/// `z: B×N` → `B×3×H×W` in `(0, 1)`.
pub(crate) fn image_decoder_forward(g: &mut Graph, store: &ParameterStore, prefix: &str, arch: &ArchConfig, z: Var, train: bool) -> Result<Var> {
    let ch = decoder_channels(arch);
    let (bh, bw) = arch.bottleneck();
    let batch = g.shape(z)[0];
    let h = dense(g, store, &format!("{prefix}.fc"), z, train)?;
    let h = leaky(g, h)?;
    let mut h = g.reshape(h, &[batch, ch[0], bh, bw])?;
    for i in 0..3 {
        let u = tconv(g, store, &format!("{prefix}.up{i}"), h, 2, 1, train)?;
        h = leaky(g, u)?;
    }
    let o = tconv(g, store, &format!("{prefix}.out"), h, 1, 1, train)?;
    g.activation(o, Activation::Sigmoid)
}

pub(crate) const POSE_HIDDEN: usize = 32;
pub(crate) const HEAD_HIDDEN: usize = 16;
/// Latent slot read by the constrained head of each output component, in
/// output order `[r, θ, φ, ψ]`.
pub const CONSTRAINED_SLOTS: [usize; 4] = [0, 1, 3, 2];

pub(crate) fn init_pose_decoder(store: &mut ParameterStore, prefix: &str, latent: usize, constrained: bool, rng: &mut Rng) -> Result<()> {
    if constrained {
        for k in 0..4 {
            init_dense(store, &format!("{prefix}.head{k}.a"), 1, HEAD_HIDDEN, rng)?;
            init_dense(store, &format!("{prefix}.head{k}.b"), HEAD_HIDDEN, 1, rng)?;
        }
        Ok(())
    } else {
        init_dense(store, &format!("{prefix}.a"), latent, POSE_HIDDEN, rng)?;
        init_dense(store, &format!("{prefix}.b"), POSE_HIDDEN, 4, rng)
    }
}

/// `z: B×N` → normalized pose `B×4` ordered `[r, θ, φ, ψ]`.
pub(crate) fn pose_decoder_forward(g: &mut Graph, store: &ParameterStore, prefix: &str, constrained: bool, z: Var, train: bool) -> Result<Var> {
    if constrained {
        let mut outs = Vec::with_capacity(4);
        for (k, &slot) in CONSTRAINED_SLOTS.iter().enumerate() {
            let zi = g.slice_cols(z, slot, 1)?;
            let h = dense(g, store, &format!("{prefix}.head{k}.a"), zi, train)?;
            let h = leaky(g, h)?;
            outs.push(dense(g, store, &format!("{prefix}.head{k}.b"), h, train)?);
        }
        g.concat_cols(&outs)
    } else {
        let h = dense(g, store, &format!("{prefix}.a"), z, train)?;
        let h = leaky(g, h)?;
        dense(g, store, &format!("{prefix}.b"), h, train)
    }
}

/// Stacks CHW images into one `B×3×H×W` tensor.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Tensor>, height: usize, width: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.shape() != [3, height, width] {
            return Err(Error::config(format!("image shape {:?} does not match the model's 3×{height}×{width}", img.shape())));
        }
        data.extend_from_slice(img.data());
        n += 1;
    }
    if n == 0 {
        return Err(Error::domain("empty image batch"));
    }
    Tensor::new(&[n, 3, height, width], data)
}
