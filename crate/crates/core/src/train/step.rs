use std::collections::BTreeMap;

use super::optim::{adam_step, Moments};
use super::{ReplayBuffer, SmoothnessGuide, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{self, DepthTerms, GanVariant, SemanticTerms};
use crate::nn::{depth_input, Bound, ModelParams};
use crate::seed;
use crate::tensor::{Graph, Tensor, Var};

pub const SEMANTIC_KEYS: [&str; 6] = ["gan_G", "gan_F", "cyc", "rec", "d_X1", "d_Y1"];
pub const DEPTH_KEYS: [&str; 8] = ["gan_G", "gan_F", "cyc", "rec", "depth", "smooth", "d_X2", "d_Y2"];

/// Sub-loss values of one step, keyed by loss name.
pub type Breakdown = BTreeMap<&'static str, f32>;

/// A network with its optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    pub params: ModelParams,
    pub moments: Moments,
}

impl Net {
    pub fn new(params: ModelParams) -> Self {
        let moments = Moments::zeros(&params);
        Net { params, moments }
    }

    fn apply(&mut self, grads: &BTreeMap<String, Tensor>, lr: f32, cfg: &TrainConfig, step: u64) -> Result<()> {
        adam_step(&mut self.params, grads, &mut self.moments, lr, &cfg.optimizer, step + 1)?;
        Ok(())
    }
}

fn init_net(cfg: &TrainConfig, name: &str) -> Result<Net> {
    let arch = cfg.archs()[name].clone();
    Ok(Net::new(ModelParams::init(arch, seed::derive(cfg.seed, &format!("init/{name}"), 0))?))
}

/// `G_s: RGB → semantic`, `F_s: semantic → RGB`, and their discriminators:
/// `D_X1` on RGB images, `D_Y1` on semantic images.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticBranch {
    pub gs: Net,
    pub fs: Net,
    pub dx: Net,
    pub dy: Net,
    pub buf_x: ReplayBuffer,
    pub buf_y: ReplayBuffer,
}

impl SemanticBranch {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(SemanticBranch {
            gs: init_net(cfg, "G_s")?,
            fs: init_net(cfg, "F_s")?,
            dx: init_net(cfg, "D_X1")?,
            dy: init_net(cfg, "D_Y1")?,
            buf_x: ReplayBuffer::new(cfg.buffer_capacity),
            buf_y: ReplayBuffer::new(cfg.buffer_capacity),
        })
    }
}

/// `G_d: {sparse, RGB, semantic} → dense`, `F_d: {dense, RGB, semantic} → sparse`,
/// and their discriminators: `D_X2` on sparse maps, `D_Y2` on dense maps.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBranch {
    pub gd: Net,
    pub fd: Net,
    pub dx: Net,
    pub dy: Net,
    pub buf_x: ReplayBuffer,
    pub buf_y: ReplayBuffer,
}

impl DepthBranch {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(DepthBranch {
            gd: init_net(cfg, "G_d")?,
            fd: init_net(cfg, "F_d")?,
            dx: init_net(cfg, "D_X2")?,
            dy: init_net(cfg, "D_Y2")?,
            buf_x: ReplayBuffer::new(cfg.buffer_capacity),
            buf_y: ReplayBuffer::new(cfg.buffer_capacity),
        })
    }
}

/// Unpaired RGB images and semantic images, N×3×H×W each.
#[derive(Clone, Debug)]
pub struct SemanticBatch {
    pub x: Tensor,
    pub y: Tensor,
}

/// RGB with its sparse depth and mask, plus unpaired dense depth.
#[derive(Clone, Debug)]
pub struct DepthBatch {
    pub rgb: Tensor,
    pub sparse: Tensor,
    pub sparse_mask: Tensor,
    pub dense: Tensor,
}

/// Ablation switches of the depth branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DepthOptions {
    pub use_semantic_input: bool,
    pub use_depth_loss: bool,
    pub use_smoothness: bool,
    pub smoothness_guide: SmoothnessGuide,
    pub joint_backprop: bool,
}

fn finite(name: &str, v: f32) -> Result<f32> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{name} loss")))
    }
}

/// Discriminator loss on real vs fake and its parameter gradients.
fn disc_grads(
    d: &ModelParams,
    variant: GanVariant,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f32, BTreeMap<String, Tensor>)> {
    let g = Graph::new();
    let b = d.bind(&g, true);
    let loss = variant.d_loss(b.forward(g.constant(real.clone()))?, b.forward(g.constant(fake.clone()))?)?;
    let value = loss.item()?;
    g.backward(loss)?;
    Ok((value, b.grads()))
}

struct SemanticForward<'g> {
    objective: Var<'g>,
    terms: SemanticTerms<'g>,
    fake_y: Var<'g>,
    fake_x: Var<'g>,
}

fn semantic_forward<'g>(
    g: &'g Graph,
    gs: &Bound<'g>,
    fs: &Bound<'g>,
    dx: &Bound<'g>,
    dy: &Bound<'g>,
    batch: &SemanticBatch,
    cfg: &TrainConfig,
) -> Result<SemanticForward<'g>> {
    let x = g.constant(batch.x.clone());
    let y = g.constant(batch.y.clone());
    let fake_y = gs.forward(x)?;
    let rec_x = fs.forward(fake_y)?;
    let fake_x = fs.forward(y)?;
    let rec_y = gs.forward(fake_x)?;
    let v = cfg.gan_variant;
    let terms = SemanticTerms {
        gan_g: v.g_loss(dy.forward(fake_y)?),
        gan_f: v.g_loss(dx.forward(fake_x)?),
        cyc: losses::cycle_loss(x, rec_x, y, rec_y)?,
        rec: losses::rec_loss(x, rec_x, y, rec_y)?,
    };
    Ok(SemanticForward {
        objective: losses::semantic_objective(&terms, &cfg.weights)?,
        terms,
        fake_y,
        fake_x,
    })
}

/// Generator objective of the semantic branch on `batch`, without updating anything.
pub fn semantic_generator_loss(br: &SemanticBranch, batch: &SemanticBatch, cfg: &TrainConfig) -> Result<f32> {
    let g = Graph::new();
    let (gs, fs) = (br.gs.params.bind(&g, false), br.fs.params.bind(&g, false));
    let (dx, dy) = (br.dx.params.bind(&g, false), br.dy.params.bind(&g, false));
    semantic_forward(&g, &gs, &fs, &dx, &dy, batch, cfg)?.objective.item()
}

/// Generator half of a semantic update: `G_s` and `F_s` descend the
/// adversarial, cycle and SSIM terms. Returns the losses and the fakes
/// (`G_s(x)`, `F_s(y)`) for the discriminator half.
pub fn semantic_generator_update(
    br: &mut SemanticBranch,
    batch: &SemanticBatch,
    cfg: &TrainConfig,
    lr: f32,
    step: u64,
) -> Result<(Breakdown, Tensor, Tensor)> {
    let g = Graph::new();
    let (gs, fs) = (br.gs.params.bind(&g, true), br.fs.params.bind(&g, true));
    let (dx, dy) = (br.dx.params.bind(&g, false), br.dy.params.bind(&g, false));
    let f = semantic_forward(&g, &gs, &fs, &dx, &dy, batch, cfg)?;
    let mut out = Breakdown::new();
    out.insert("gan_G", finite("gan_G", f.terms.gan_g.item()?)?);
    out.insert("gan_F", finite("gan_F", f.terms.gan_f.item()?)?);
    out.insert("cyc", finite("cyc", f.terms.cyc.item()?)?);
    out.insert("rec", finite("rec", f.terms.rec.item()?)?);
    finite("semantic objective", f.objective.item()?)?;
    g.backward(f.objective)?;
    let (gs_grads, fs_grads) = (gs.grads(), fs.grads());
    let (fake_y, fake_x) = (f.fake_y.value(), f.fake_x.value());
    drop(g);
    br.gs.apply(&gs_grads, lr, cfg, step)?;
    br.fs.apply(&fs_grads, lr, cfg, step)?;
    Ok((out, fake_y, fake_x))
}

/// Discriminator half of a semantic update: `D_Y1` on real `y` against
/// `fake_y` and `D_X1` on real `x` against `fake_x`, both drawn through the
/// replay buffers.
pub fn semantic_discriminator_update(
    br: &mut SemanticBranch,
    batch: &SemanticBatch,
    fake_y: &Tensor,
    fake_x: &Tensor,
    cfg: &TrainConfig,
    lr: f32,
    step: u64,
) -> Result<Breakdown> {
    let (mut buf_x, mut buf_y) = (br.buf_x.clone(), br.buf_y.clone());
    let hist_y = buf_y.query(fake_y, &mut seed::stream(cfg.seed, "buffer/D_Y1", step))?;
    let hist_x = buf_x.query(fake_x, &mut seed::stream(cfg.seed, "buffer/D_X1", step))?;
    let (d_y, dy_grads) = disc_grads(&br.dy.params, cfg.gan_variant, &batch.y, &hist_y)?;
    let (d_x, dx_grads) = disc_grads(&br.dx.params, cfg.gan_variant, &batch.x, &hist_x)?;
    let mut out = Breakdown::new();
    out.insert("d_Y1", finite("d_Y1", d_y)?);
    out.insert("d_X1", finite("d_X1", d_x)?);
    br.dy.apply(&dy_grads, lr, cfg, step)?;
    br.dx.apply(&dx_grads, lr, cfg, step)?;
    br.buf_x = buf_x;
    br.buf_y = buf_y;
    Ok(out)
}

/// One semantic update: the generator half, then the discriminator half on
/// the detached fakes. Nothing is modified if any loss is non-finite.
pub fn semantic_step(
    br: &mut SemanticBranch,
    batch: &SemanticBatch,
    cfg: &TrainConfig,
    lr: f32,
    step: u64,
) -> Result<Breakdown> {
    let mut next = br.clone();
    let (mut out, fake_y, fake_x) = semantic_generator_update(&mut next, batch, cfg, lr, step)?;
    out.extend(semantic_discriminator_update(&mut next, batch, &fake_y, &fake_x, cfg, lr, step)?);
    *br = next;
    Ok(out)
}

/// The semantic image fed to the depth branch, computed without gradient.
fn semantic_guide(gs: &ModelParams, rgb: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    Ok(gs.bind(&g, false).forward(g.constant(rgb.clone()))?.value())
}

/// Generator half of a depth update: `G_d` and `F_d` (and `G_s` when
/// `joint_backprop` is on). Returns the losses and the fakes (`G_d` output,
/// `F_d` output) for the discriminator half.
pub fn depth_generator_update(
    br: &mut DepthBranch,
    gs: &mut Net,
    batch: &DepthBatch,
    cfg: &TrainConfig,
    opts: &DepthOptions,
    lr: f32,
    step: u64,
) -> Result<(Breakdown, Tensor, Tensor)> {
    let g = Graph::new();
    let rgb = g.constant(batch.rgb.clone());
    let gs_bound = opts.joint_backprop.then(|| gs.params.bind(&g, true));
    let semantic = match &gs_bound {
        Some(b) => b.forward(rgb)?,
        None => g.constant(semantic_guide(&gs.params, &batch.rgb)?),
    };
    let sem_in = if opts.use_semantic_input {
        semantic
    } else {
        g.constant(Tensor::zeros(batch.rgb.shape().to_vec()))
    };
    let (gd, fd) = (br.gd.params.bind(&g, true), br.fd.params.bind(&g, true));
    let (dx, dy) = (br.dx.params.bind(&g, false), br.dy.params.bind(&g, false));
    let x_d = g.constant(batch.sparse.clone());
    let y_d = g.constant(batch.dense.clone());

    let fake_dense = gd.forward(depth_input(x_d, rgb, sem_in)?)?;
    let rec_sparse = fd.forward(depth_input(fake_dense, rgb, sem_in)?)?;
    let fake_sparse = fd.forward(depth_input(y_d, rgb, sem_in)?)?;
    let rec_dense = gd.forward(depth_input(fake_sparse, rgb, sem_in)?)?;

    let guide = match opts.smoothness_guide {
        SmoothnessGuide::Semantic => semantic,
        SmoothnessGuide::Rgb => rgb,
    };
    let v = cfg.gan_variant;
    let terms = DepthTerms {
        gan_g: v.g_loss(dy.forward(fake_dense)?),
        gan_f: v.g_loss(dx.forward(fake_sparse)?),
        cyc: losses::cycle_loss(x_d, rec_sparse, y_d, rec_dense)?,
        rec: losses::rec_loss(x_d, rec_sparse, y_d, rec_dense)?,
        depth: losses::depth_loss_masked(fake_dense, x_d, &batch.sparse_mask)?.value,
        smooth: losses::smoothness_loss(fake_dense, guide)?,
    };
    let mut weights = cfg.weights;
    if !opts.use_depth_loss {
        weights.lambda5 = 0.0;
    }
    if !opts.use_smoothness {
        weights.lambda6 = 0.0;
    }
    let objective = losses::depth_objective(&terms, &weights)?;
    let mut out = Breakdown::new();
    out.insert("gan_G", finite("gan_G", terms.gan_g.item()?)?);
    out.insert("gan_F", finite("gan_F", terms.gan_f.item()?)?);
    out.insert("cyc", finite("cyc", terms.cyc.item()?)?);
    out.insert("rec", finite("rec", terms.rec.item()?)?);
    out.insert("depth", finite("depth", terms.depth.item()?)?);
    out.insert("smooth", finite("smooth", terms.smooth.item()?)?);
    finite("depth objective", objective.item()?)?;
    g.backward(objective)?;
    let (gd_grads, fd_grads) = (gd.grads(), fd.grads());
    let gs_grads = gs_bound.as_ref().map(|b| b.grads());
    let (fake_dense, fake_sparse) = (fake_dense.value(), fake_sparse.value());
    drop(g);
    br.gd.apply(&gd_grads, lr, cfg, step)?;
    br.fd.apply(&fd_grads, lr, cfg, step)?;
    if let Some(grads) = gs_grads {
        gs.apply(&grads, lr, cfg, step)?;
    }
    Ok((out, fake_dense, fake_sparse))
}

/// Discriminator half of a depth update: `D_Y2` on real dense maps against
/// `fake_dense`, `D_X2` on real sparse maps against `fake_sparse`.
pub fn depth_discriminator_update(
    br: &mut DepthBranch,
    batch: &DepthBatch,
    fake_dense: &Tensor,
    fake_sparse: &Tensor,
    cfg: &TrainConfig,
    lr: f32,
    step: u64,
) -> Result<Breakdown> {
    let v = cfg.gan_variant;
    let (mut buf_x, mut buf_y) = (br.buf_x.clone(), br.buf_y.clone());
    let hist_y = buf_y.query(fake_dense, &mut seed::stream(cfg.seed, "buffer/D_Y2", step))?;
    let hist_x = buf_x.query(fake_sparse, &mut seed::stream(cfg.seed, "buffer/D_X2", step))?;
    let (d_y, dy_grads) = disc_grads(&br.dy.params, v, &batch.dense, &hist_y)?;
    let (d_x, dx_grads) = disc_grads(&br.dx.params, v, &batch.sparse, &hist_x)?;
    let mut out = Breakdown::new();
    out.insert("d_Y2", finite("d_Y2", d_y)?);
    out.insert("d_X2", finite("d_X2", d_x)?);
    br.dy.apply(&dy_grads, lr, cfg, step)?;
    br.dx.apply(&dx_grads, lr, cfg, step)?;
    br.buf_x = buf_x;
    br.buf_y = buf_y;
    Ok(out)
}

/// One depth update. `gs` supplies the semantic image and is only modified
/// when `joint_backprop` is on. Nothing is modified if any loss is non-finite.
pub fn depth_step(
    br: &mut DepthBranch,
    gs: &mut Net,
    batch: &DepthBatch,
    cfg: &TrainConfig,
    opts: &DepthOptions,
    lr: f32,
    step: u64,
) -> Result<Breakdown> {
    let mut next = br.clone();
    let mut next_gs = if opts.joint_backprop { Some(gs.clone()) } else { None };
    let (mut out, fake_dense, fake_sparse) =
        depth_generator_update(&mut next, next_gs.as_mut().unwrap_or(gs), batch, cfg, opts, lr, step)?;
    out.extend(depth_discriminator_update(&mut next, batch, &fake_dense, &fake_sparse, cfg, lr, step)?);
    *br = next;
    if let Some(n) = next_gs {
        *gs = n;
    }
    Ok(out)
}
