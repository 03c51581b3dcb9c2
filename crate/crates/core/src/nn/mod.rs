//! Generator and discriminator architectures and their parameter sets.
//!
//! A network is described by an [`ArchConfig`]; [`layout`] turns it into the
//! ordered list of named parameter shapes, [`ModelParams`] owns the values and
//! [`Bound`] exposes them as graph leaves for one forward/backward pass.

mod discriminator;
mod generator;

pub use discriminator::{patchgan_forward, patchgan_out_size};
pub use generator::{generator_forward, mssp_block, residual_block};

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Graph, Tensor, Var};

pub const INIT_STD: f32 = 0.02;
pub const NORM_EPS: f32 = 1e-5;
pub const LEAKY_SLOPE: f32 = 0.2;
pub const DEFAULT_MSSP_KERNELS: [(usize, usize); 3] = [(1, 1), (4, 4), (9, 9)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArchTag {
    GenSemantic,
    GenSemanticInv,
    GenDepth,
    GenDepthInv,
    PatchDisc,
}

impl ArchTag {
    pub fn name(self) -> &'static str {
        match self {
            ArchTag::GenSemantic => "gen_semantic",
            ArchTag::GenSemanticInv => "gen_semantic_inv",
            ArchTag::GenDepth => "gen_depth",
            ArchTag::GenDepthInv => "gen_depth_inv",
            ArchTag::PatchDisc => "patch_disc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ArchTag::GenSemantic,
            ArchTag::GenSemanticInv,
            ArchTag::GenDepth,
            ArchTag::GenDepthInv,
            ArchTag::PatchDisc,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }

    pub fn is_generator(self) -> bool {
        self != ArchTag::PatchDisc
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub tag: ArchTag,
    pub width: usize,
    /// Residual blocks in a generator bottleneck; unused by discriminators.
    pub residual_blocks: usize,
    /// Pooling kernels of the multi-scale block; empty means no block.
    pub mssp_kernels: Vec<(usize, usize)>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Instance norm inside the discriminator stack. Disabling it makes the
    /// receptive field local, which the perturbation probe relies on.
    pub disc_norm: bool,
}

impl ArchConfig {
    fn generator(tag: ArchTag, width: usize, residual_blocks: usize, in_ch: usize, out_ch: usize, mssp: bool) -> Self {
        ArchConfig {
            tag,
            width,
            residual_blocks,
            mssp_kernels: if mssp { DEFAULT_MSSP_KERNELS.to_vec() } else { Vec::new() },
            in_channels: in_ch,
            out_channels: out_ch,
            disc_norm: true,
        }
    }

    /// RGB → semantic colors (G_s).
    pub fn gen_semantic(width: usize) -> Self {
        Self::generator(ArchTag::GenSemantic, width, 6, 3, 3, true)
    }

    /// Semantic colors → RGB (F_s).
    pub fn gen_semantic_inv(width: usize) -> Self {
        Self::generator(ArchTag::GenSemanticInv, width, 6, 3, 3, true)
    }

    /// {sparse, RGB, semantic} → dense depth (G_d).
    pub fn gen_depth(width: usize) -> Self {
        Self::generator(ArchTag::GenDepth, width, 9, 7, 1, false)
    }

    /// {dense, RGB, semantic} → sparse depth (F_d).
    pub fn gen_depth_inv(width: usize) -> Self {
        Self::generator(ArchTag::GenDepthInv, width, 9, 7, 1, false)
    }

    pub fn patch_disc(width: usize, in_channels: usize) -> Self {
        ArchConfig {
            tag: ArchTag::PatchDisc,
            width,
            residual_blocks: 0,
            mssp_kernels: Vec::new(),
            in_channels,
            out_channels: 1,
            disc_norm: true,
        }
    }

    pub fn has_mssp(&self) -> bool {
        !self.mssp_kernels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.tag.name())));
        if self.width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("width and channel counts must be positive".into());
        }
        if self.tag.is_generator() && self.residual_blocks == 0 {
            return bad("need at least one residual block".into());
        }
        if self.has_mssp() && self.out_channels != 3 {
            return bad("multi-scale block needs a 3-channel decoder output".into());
        }
        if self.has_mssp() && self.in_channels < 3 {
            return bad("multi-scale block needs at least 3 input channels".into());
        }
        if self.mssp_kernels.iter().any(|&(kh, kw)| kh == 0 || kh != kw) {
            return bad("pooling kernels must be square and positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, 0.02).
    Weight,
    /// Normal(1, 0.02).
    Gamma,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, cout: usize, cin: usize, k: usize, bias: bool) {
    out.push(ParamSpec {
        name: format!("{prefix}.w"),
        shape: vec![cout, cin, k, k],
        init: Init::Weight,
    });
    if bias {
        out.push(ParamSpec {
            name: format!("{prefix}.b"),
            shape: vec![cout],
            init: Init::Zero,
        });
    }
}

fn conv_t(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.w"),
        shape: vec![cin, cout, k, k],
        init: Init::Weight,
    });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.gamma"),
        shape: vec![c],
        init: Init::Gamma,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.beta"),
        shape: vec![c],
        init: Init::Zero,
    });
}

/// Ordered parameter list of an architecture. Convolutions followed by
/// instance norm carry no bias (the norm's beta subsumes it).
pub fn layout(arch: &ArchConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let w = arch.width;
    if arch.tag.is_generator() {
        conv(&mut out, "enc0.conv", w, arch.in_channels, 7, false);
        norm(&mut out, "enc0.norm", w);
        conv(&mut out, "enc1.conv", 2 * w, w, 3, false);
        norm(&mut out, "enc1.norm", 2 * w);
        conv(&mut out, "enc2.conv", 4 * w, 2 * w, 3, false);
        norm(&mut out, "enc2.norm", 4 * w);
        for i in 0..arch.residual_blocks {
            conv(&mut out, &format!("res{i}.conv1"), 4 * w, 4 * w, 3, false);
            norm(&mut out, &format!("res{i}.norm1"), 4 * w);
            conv(&mut out, &format!("res{i}.conv2"), 4 * w, 4 * w, 3, false);
            norm(&mut out, &format!("res{i}.norm2"), 4 * w);
        }
        conv_t(&mut out, "dec0.convt", 4 * w, 2 * w, 4);
        norm(&mut out, "dec0.norm", 2 * w);
        conv_t(&mut out, "dec1.convt", 2 * w, w, 4);
        norm(&mut out, "dec1.norm", w);
        conv(&mut out, "head.conv", arch.out_channels, w, 7, true);
        if arch.has_mssp() {
            let z = arch.out_channels + 3;
            conv(&mut out, "mssp.conv", 3, z * (1 + arch.mssp_kernels.len()), 3, true);
        }
    } else {
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut cin = arch.in_channels;
        for (i, &c) in widths.iter().enumerate() {
            let normed = i > 0 && arch.disc_norm;
            conv(&mut out, &format!("l{i}.conv"), c, cin, 4, !normed);
            if normed {
                norm(&mut out, &format!("l{i}.norm"), c);
            }
            cin = c;
        }
        conv(&mut out, "out.conv", 1, cin, 4, true);
    }
    out
}

/// Named learnable tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Parameters initialized per [`Init`], each tensor from its own stream
    /// keyed by `(seed, tag, tensor name)`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut tensors = BTreeMap::new();
        for spec in layout(&arch) {
            let t = match spec.init {
                Init::Zero => Tensor::zeros(spec.shape.clone()),
                Init::Weight | Init::Gamma => {
                    let mean = if spec.init == Init::Gamma { 1.0 } else { 0.0 };
                    let dist = Normal::new(mean, INIT_STD).expect("valid normal");
                    let label = format!("{}/{}", arch.tag.name(), spec.name);
                    let mut rng = seed::stream(seed, &label, 0);
                    Tensor::from_fn(spec.shape.clone(), |_| dist.sample(&mut rng))
                }
            };
            tensors.insert(spec.name, t);
        }
        Ok(ModelParams { arch, tensors })
    }

    /// Assembles parameters from loaded tensors, checking names and shapes against the layout.
    pub fn from_tensors(arch: ArchConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        arch.validate()?;
        let specs = layout(&arch);
        if specs.len() != tensors.len() {
            return Err(Error::ModelMismatch(format!(
                "{} expects {} tensors, found {}",
                arch.tag.name(),
                specs.len(),
                tensors.len()
            )));
        }
        for spec in &specs {
            match tensors.get(&spec.name) {
                Some(t) if t.shape() == &spec.shape[..] => {}
                Some(t) => {
                    return Err(Error::ModelMismatch(format!(
                        "{}: tensor {} has shape {:?}, expected {:?}",
                        arch.tag.name(),
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => {
                    return Err(Error::ModelMismatch(format!(
                        "{}: missing tensor {}",
                        arch.tag.name(),
                        spec.name
                    )))
                }
            }
        }
        Ok(ModelParams { arch, tensors })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Content fingerprint over names, shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.tensors {
            bytes.extend_from_slice(name.as_bytes());
            for &d in t.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        seed::hash_bytes(&bytes)
    }

    /// Enters every tensor into `g`: as differentiable leaves when
    /// `trainable`, otherwise as constants (gradients still flow through the
    /// network to its input).
    pub fn bind<'g>(&self, g: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.clone(), trainable)))
            .collect();
        Bound {
            arch: self.arch.clone(),
            vars,
        }
    }
}

/// Parameters entered into a graph.
pub struct Bound<'g> {
    arch: ArchConfig,
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn var(&self, name: &str) -> Result<Var<'g>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ModelMismatch(format!("{}: no parameter {name}", self.arch.tag.name())))
    }

    /// Accumulated gradients, zeros for parameters the loss never reached.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.grad().unwrap_or_else(|| Tensor::zeros(v.shape()))))
            .collect()
    }

    /// Runs the network this parameter set belongs to.
    pub fn forward(&self, x: Var<'g>) -> Result<Var<'g>> {
        if self.arch.tag.is_generator() {
            generator_forward(x, self)
        } else {
            patchgan_forward(x, self)
        }
    }
}

/// Depth-branch generator input: depth (1 channel), RGB (3), semantic image (3).
pub fn depth_input<'g>(depth: Var<'g>, rgb: Var<'g>, semantic: Var<'g>) -> Result<Var<'g>> {
    Var::concat_channels(&[depth, rgb, semantic])
}
