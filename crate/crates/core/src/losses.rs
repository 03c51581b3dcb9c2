//! Adversarial, cycle, structural-similarity, depth and smoothness losses, and
//! the weighted objectives of the two branches. Every loss is a mean reduction
//! built from differentiable graph ops.

use crate::error::{dim_err, Result};
use crate::tensor::{Tensor, Var};

/// Weights of the auxiliary terms: `lambda1`/`lambda2` for the semantic branch,
/// `lambda3`..`lambda6` for the depth branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
    pub lambda4: f32,
    pub lambda5: f32,
    pub lambda6: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 10.0,
            lambda2: 2.0,
            lambda3: 10.0,
            lambda4: 1.0,
            lambda5: 0.5,
            lambda6: 0.5,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            lambda6: 0.0,
        }
    }
}

/// Which adversarial loss family to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GanVariant {
    /// Cross-entropy on logits with the non-saturating generator loss.
    #[default]
    Log,
    /// Least-squares targets 1 (real) and 0 (fake).
    LeastSquares,
}

impl GanVariant {
    pub fn name(self) -> &'static str {
        match self {
            GanVariant::Log => "log",
            GanVariant::LeastSquares => "lsq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log" => Some(GanVariant::Log),
            "lsq" => Some(GanVariant::LeastSquares),
            _ => None,
        }
    }

    pub fn d_loss<'g>(self, real: Var<'g>, fake: Var<'g>) -> Result<Var<'g>> {
        match self {
            GanVariant::Log => gan_loss_d(real, fake),
            GanVariant::LeastSquares => {
                let r = real.add_scalar(-1.0).square().mean();
                let f = fake.square().mean();
                Ok(r.add(f)?.scale(0.5))
            }
        }
    }

    pub fn g_loss(self, fake: Var<'_>) -> Var<'_> {
        match self {
            GanVariant::Log => gan_loss_g(fake),
            GanVariant::LeastSquares => fake.add_scalar(-1.0).square().mean(),
        }
    }
}

/// Discriminator loss `−½·(mean log σ(real) + mean log(1−σ(fake)))`, written
/// with softplus: `−log σ(z) = softplus(−z)` and `−log(1−σ(z)) = softplus(z)`.
pub fn gan_loss_d<'g>(real_logits: Var<'g>, fake_logits: Var<'g>) -> Result<Var<'g>> {
    let r = real_logits.neg().softplus().mean();
    let f = fake_logits.softplus().mean();
    Ok(r.add(f)?.scale(0.5))
}

/// Non-saturating generator loss `−mean log σ(fake)`.
pub fn gan_loss_g(fake_logits: Var<'_>) -> Var<'_> {
    fake_logits.neg().softplus().mean()
}

/// `mean|x_rec − x| + mean|y_rec − y|`.
pub fn cycle_loss<'g>(x: Var<'g>, x_rec: Var<'g>, y: Var<'g>, y_rec: Var<'g>) -> Result<Var<'g>> {
    let a = x_rec.sub(x)?.abs().mean();
    let b = y_rec.sub(y)?.abs().mean();
    a.add(b)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of inputs in [−1, 1].
pub const SSIM_RANGE: f32 = 2.0;
pub const SSIM_C1: f32 = (0.01 * SSIM_RANGE) * (0.01 * SSIM_RANGE);
pub const SSIM_C2: f32 = (0.03 * SSIM_RANGE) * (0.03 * SSIM_RANGE);

/// Normalized 11×11 Gaussian window (σ = 1.5), row-major.
pub fn gaussian_window() -> Vec<f32> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push((a / s * b / s) as f32);
        }
    }
    w
}

/// Mean SSIM over channels and all fully-contained window positions.
pub fn ssim<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let shape = a.shape();
    if shape != b.shape() {
        return Err(dim_err(
            "ssim",
            format!("operand shapes {:?} and {:?} differ", shape, b.shape()),
        ));
    }
    let [n, c, h, w] = shape[..] else {
        return Err(dim_err("ssim", format!("expected N×C×H×W, got {shape:?}")));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(dim_err(
            "ssim",
            format!("image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let g = a.graph();
    let win = g.constant(Tensor::new(
        vec![1, 1, SSIM_WINDOW, SSIM_WINDOW],
        gaussian_window(),
    )?);
    let planes = vec![n * c, 1, h, w];
    let a = a.reshape(planes.clone())?;
    let b = b.reshape(planes)?;
    let filt = |v: Var<'g>| v.conv2d(win, None, 1, 0);
    let mu_a = filt(a)?;
    let mu_b = filt(b)?;
    let mu_aa = mu_a.mul(mu_a)?;
    let mu_bb = mu_b.mul(mu_b)?;
    let mu_ab = mu_a.mul(mu_b)?;
    let var_a = filt(a.square())?.sub(mu_aa)?;
    let var_b = filt(b.square())?.sub(mu_bb)?;
    let cov = filt(a.mul(b)?)?.sub(mu_ab)?;
    let num = mu_ab
        .scale(2.0)
        .add_scalar(SSIM_C1)
        .mul(cov.scale(2.0).add_scalar(SSIM_C2))?;
    let den = mu_aa
        .add(mu_bb)?
        .add_scalar(SSIM_C1)
        .mul(var_a.add(var_b)?.add_scalar(SSIM_C2))?;
    Ok(num.div(den)?.mean())
}

/// `(1 − ssim(x, x_rec)) + (1 − ssim(y, y_rec))`, in [0, 4].
pub fn rec_loss<'g>(x: Var<'g>, x_rec: Var<'g>, y: Var<'g>, y_rec: Var<'g>) -> Result<Var<'g>> {
    let sx = ssim(x, x_rec)?;
    let sy = ssim(y, y_rec)?;
    Ok(sx.add(sy)?.neg().add_scalar(2.0))
}

/// A depth loss value together with a flag raised when no pixel was valid.
#[derive(Clone, Copy, Debug)]
pub struct DepthLoss<'g> {
    pub value: Var<'g>,
    pub empty_mask: bool,
}

/// Squared error over pixels where `sparse > 0`, averaged over those pixels.
pub fn depth_loss<'g>(pred: Var<'g>, sparse: Var<'g>) -> Result<DepthLoss<'g>> {
    let mask = sparse.value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    depth_loss_masked(pred, sparse, &mask)
}

/// Squared error averaged over pixels with `mask == 1`. Returns 0 with
/// `empty_mask` set when the mask selects nothing.
pub fn depth_loss_masked<'g>(pred: Var<'g>, target: Var<'g>, mask: &Tensor) -> Result<DepthLoss<'g>> {
    if pred.shape() != mask.shape() {
        return Err(dim_err(
            "depth_loss",
            format!("mask shape {:?} != prediction {:?}", mask.shape(), pred.shape()),
        ));
    }
    let g = pred.graph();
    let count = mask.data().iter().filter(|&&m| m > 0.0).count();
    let diff = pred.sub(target)?;
    if count == 0 {
        log::warn!("depth loss: no valid pixels in sparse map");
        return Ok(DepthLoss {
            value: g.constant(Tensor::scalar(0.0)),
            empty_mask: true,
        });
    }
    let m = g.constant(mask.clone());
    let value = diff.square().mul(m)?.sum().scale(1.0 / count as f32);
    Ok(DepthLoss {
        value,
        empty_mask: false,
    })
}

/// Edge-aware second-order smoothness of a N×1×H×W depth map guided by an
/// N×C×H×W image:
/// `mean |∂xx d|·e^(−s_x) + mean |∂yy d|·e^(−s_y)`, where `s` is the channel
/// mean of absolute forward differences of the guide. Each second difference
/// is paired with the guide difference at the stencil's first pixel.
pub fn smoothness_loss<'g>(depth: Var<'g>, guide: Var<'g>) -> Result<Var<'g>> {
    let ds = depth.shape();
    let gs = guide.shape();
    let ([dn, 1, h, w], [gn, _, gh, gw]) = (&ds[..], &gs[..]) else {
        return Err(dim_err(
            "smoothness_loss",
            format!("need N×1×H×W depth and N×C×H×W guide, got {ds:?} and {gs:?}"),
        ));
    };
    let (dn, h, w, gn, gh, gw) = (*dn, *h, *w, *gn, *gh, *gw);
    if (dn, h, w) != (gn, gh, gw) {
        return Err(dim_err(
            "smoothness_loss",
            format!("depth {ds:?} and guide {gs:?} disagree on N, H or W"),
        ));
    }
    if h < 3 || w < 3 {
        return Err(dim_err(
            "smoothness_loss",
            format!("need H, W ≥ 3, got {h}×{w}"),
        ));
    }
    let dxx = depth
        .crop(0, h, 2, w - 2)?
        .sub(depth.crop(0, h, 1, w - 2)?.scale(2.0))?
        .add(depth.crop(0, h, 0, w - 2)?)?;
    let dyy = depth
        .crop(2, h - 2, 0, w)?
        .sub(depth.crop(1, h - 2, 0, w)?.scale(2.0))?
        .add(depth.crop(0, h - 2, 0, w)?)?;
    let sx = guide
        .crop(0, h, 1, w - 2)?
        .sub(guide.crop(0, h, 0, w - 2)?)?
        .abs()
        .channel_mean()?;
    let sy = guide
        .crop(1, h - 2, 0, w)?
        .sub(guide.crop(0, h - 2, 0, w)?)?
        .abs()
        .channel_mean()?;
    let tx = dxx.abs().mul(sx.neg().exp())?.mean();
    let ty = dyy.abs().mul(sy.neg().exp())?.mean();
    tx.add(ty)
}

/// Generator-side terms of the semantic objective.
#[derive(Clone, Copy, Debug)]
pub struct SemanticTerms<'g> {
    pub gan_g: Var<'g>,
    pub gan_f: Var<'g>,
    pub cyc: Var<'g>,
    pub rec: Var<'g>,
}

pub fn semantic_objective<'g>(t: &SemanticTerms<'g>, w: &LossWeights) -> Result<Var<'g>> {
    t.gan_g
        .add(t.gan_f)?
        .add(t.cyc.scale(w.lambda1))?
        .add(t.rec.scale(w.lambda2))
}

/// Generator-side terms of the depth objective.
#[derive(Clone, Copy, Debug)]
pub struct DepthTerms<'g> {
    pub gan_g: Var<'g>,
    pub gan_f: Var<'g>,
    pub cyc: Var<'g>,
    pub rec: Var<'g>,
    pub depth: Var<'g>,
    pub smooth: Var<'g>,
}

pub fn depth_objective<'g>(t: &DepthTerms<'g>, w: &LossWeights) -> Result<Var<'g>> {
    t.gan_g
        .add(t.gan_f)?
        .add(t.cyc.scale(w.lambda3))?
        .add(t.rec.scale(w.lambda4))?
        .add(t.depth.scale(w.lambda5))?
        .add(t.smooth.scale(w.lambda6))
}
