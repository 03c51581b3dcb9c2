//! Independent 64-bit reference implementations used as test oracles.
//!
//! Everything here is written as direct nested loops over the mathematical
//! definitions and shares no code with the crate's kernels.

#![allow(dead_code)]

pub mod experiment;
pub mod grad;

use mtgan::Tensor;
pub use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        T64 {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        T64::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from(t: &Tensor) -> Self {
        T64::new(t.shape(), t.data().iter().map(|&v| v as f64).collect())
    }

    pub fn to_f32(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f32).collect()).unwrap()
    }

    pub fn d4(&self) -> (usize, usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let (_, cc, h, w) = self.d4();
        ((n * cc + c) * h + y) * w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> T64 {
        T64::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, o: &T64, f: impl Fn(f64, f64) -> f64) -> T64 {
        assert_eq!(self.shape, o.shape);
        T64::new(
            &self.shape,
            self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// `sum(self ⊙ r)`, used to project tensor-valued ops to scalars.
    pub fn dot(&self, r: &T64) -> f64 {
        self.zip(r, |a, b| a * b).sum()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Uniform values in ±[min_abs, max_abs], away from the kink at zero.
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], min_abs: f32, max_abs: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(min_abs..max_abs);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn conv2d(x: &T64, w: &T64, b: Option<&T64>, stride: usize, pad: usize) -> T64 {
    let (n, cin, h, wd) = x.d4();
    let (cout, _, kh, kw) = w.d4();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = T64::zeros(&[n, cout, oh, ow]);
    for bn in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(bn, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    let i = out.idx(bn, co, oy, ox);
                    out.data[i] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form: every input pixel stamps `value · kernel` onto the output.
pub fn conv_transpose2d(x: &T64, w: &T64, b: Option<&T64>, stride: usize, pad: usize) -> T64 {
    let (n, cin, h, wd) = x.d4();
    let (_, cout, kh, kw) = w.d4();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = T64::zeros(&[n, cout, oh, ow]);
    for bn in 0..n {
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.at(bn, ci, iy, ix);
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let i = out.idx(bn, co, oy as usize, ox as usize);
                                    out.data[i] += v * w.at(ci, co, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        for bn in 0..n {
            for co in 0..cout {
                for y in 0..oh {
                    for x in 0..ow {
                        let i = out.idx(bn, co, y, x);
                        out.data[i] += b.data[co];
                    }
                }
            }
        }
    }
    out
}

pub fn avg_pool(x: &T64, k: (usize, usize), s: (usize, usize)) -> T64 {
    let (n, c, h, w) = x.d4();
    let oh = (h - k.0) / s.0 + 1;
    let ow = (w - k.1) / s.1 + 1;
    let mut out = T64::zeros(&[n, c, oh, ow]);
    for bn in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..k.0 {
                        for kx in 0..k.1 {
                            acc += x.at(bn, ch, oy * s.0 + ky, ox * s.1 + kx);
                        }
                    }
                    let i = out.idx(bn, ch, oy, ox);
                    out.data[i] = acc / (k.0 * k.1) as f64;
                }
            }
        }
    }
    out
}

pub fn reflect_pad(x: &T64, p: usize) -> T64 {
    let (n, c, h, w) = x.d4();
    let refl = |i: isize, len: usize| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= len as isize {
            i = 2 * (len as isize - 1) - i;
        }
        i as usize
    };
    let mut out = T64::zeros(&[n, c, h + 2 * p, w + 2 * p]);
    for bn in 0..n {
        for ch in 0..c {
            for y in 0..h + 2 * p {
                for xx in 0..w + 2 * p {
                    let sy = refl(y as isize - p as isize, h);
                    let sx = refl(xx as isize - p as isize, w);
                    let i = out.idx(bn, ch, y, xx);
                    out.data[i] = x.at(bn, ch, sy, sx);
                }
            }
        }
    }
    out
}

pub fn upsample(x: &T64, s: usize) -> T64 {
    let (n, c, h, w) = x.d4();
    let mut out = T64::zeros(&[n, c, h * s, w * s]);
    for bn in 0..n {
        for ch in 0..c {
            for y in 0..h * s {
                for xx in 0..w * s {
                    let i = out.idx(bn, ch, y, xx);
                    out.data[i] = x.at(bn, ch, y / s, xx / s);
                }
            }
        }
    }
    out
}

pub fn crop(x: &T64, h0: usize, h: usize, w0: usize, w: usize) -> T64 {
    let (n, c, _, _) = x.d4();
    let mut out = T64::zeros(&[n, c, h, w]);
    for bn in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let i = out.idx(bn, ch, y, xx);
                    out.data[i] = x.at(bn, ch, h0 + y, w0 + xx);
                }
            }
        }
    }
    out
}

pub fn concat(parts: &[&T64]) -> T64 {
    let (n, _, h, w) = parts[0].d4();
    let total: usize = parts.iter().map(|p| p.shape[1]).sum();
    let mut out = T64::zeros(&[n, total, h, w]);
    for bn in 0..n {
        let mut c0 = 0;
        for p in parts {
            for ch in 0..p.shape[1] {
                for y in 0..h {
                    for xx in 0..w {
                        let i = out.idx(bn, c0 + ch, y, xx);
                        out.data[i] = p.at(bn, ch, y, xx);
                    }
                }
            }
            c0 += p.shape[1];
        }
    }
    out
}

pub fn channel_mean(x: &T64) -> T64 {
    let (n, c, h, w) = x.d4();
    let mut out = T64::zeros(&[n, 1, h, w]);
    for bn in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let s: f64 = (0..c).map(|ch| x.at(bn, ch, y, xx)).sum();
                let i = out.idx(bn, 0, y, xx);
                out.data[i] = s / c as f64;
            }
        }
    }
    out
}

pub fn instance_norm(x: &T64, gamma: &T64, beta: &T64, eps: f64) -> T64 {
    let (n, c, h, w) = x.d4();
    let mut out = x.clone();
    let m = (h * w) as f64;
    for bn in 0..n {
        for ch in 0..c {
            let vals: Vec<f64> = (0..h * w).map(|i| x.at(bn, ch, i / w, i % w)).collect();
            let mu = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m;
            for (i, v) in vals.iter().enumerate() {
                let k = out.idx(bn, ch, i / w, i % w);
                out.data[k] = (v - mu) / (var + eps).sqrt() * gamma.data[ch] + beta.data[ch];
            }
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn softplus(z: f64) -> f64 {
    (1.0 + z.exp()).ln()
}

/// `−½·(mean ln σ(real) + mean ln(1 − σ(fake)))`, straight from the definition.
pub fn gan_d(real: &T64, fake: &T64) -> f64 {
    let r = real.data.iter().map(|&z| sigmoid(z).ln()).sum::<f64>() / real.data.len() as f64;
    let f = fake.data.iter().map(|&z| (1.0 - sigmoid(z)).ln()).sum::<f64>() / fake.data.len() as f64;
    -0.5 * (r + f)
}

pub fn gan_g(fake: &T64) -> f64 {
    -fake.data.iter().map(|&z| sigmoid(z).ln()).sum::<f64>() / fake.data.len() as f64
}

pub fn lsq_d(real: &T64, fake: &T64) -> f64 {
    0.5 * (real.map(|z| (z - 1.0).powi(2)).mean() + fake.map(|z| z * z).mean())
}

pub fn lsq_g(fake: &T64) -> f64 {
    fake.map(|z| (z - 1.0).powi(2)).mean()
}

pub fn cycle(x: &T64, xr: &T64, y: &T64, yr: &T64) -> f64 {
    xr.zip(x, |a, b| (a - b).abs()).mean() + yr.zip(y, |a, b| (a - b).abs()).mean()
}

pub fn gaussian_window64() -> Vec<f64> {
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::new();
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Sliding-window SSIM with two-pass local moments (no E[x²]−μ² shortcut).
pub fn ssim(a: &T64, b: &T64) -> f64 {
    let (n, c, h, w) = a.d4();
    let win = gaussian_window64();
    let (c1, c2) = ((0.01f64 * 2.0).powi(2), (0.03f64 * 2.0).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for bn in 0..n {
        for ch in 0..c {
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let mut ma = 0.0;
                    let mut mb = 0.0;
                    for k in 0..121 {
                        let (dy, dx) = (k / 11, k % 11);
                        ma += win[k] * a.at(bn, ch, y0 + dy, x0 + dx);
                        mb += win[k] * b.at(bn, ch, y0 + dy, x0 + dx);
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for k in 0..121 {
                        let (dy, dx) = (k / 11, k % 11);
                        let da = a.at(bn, ch, y0 + dy, x0 + dx) - ma;
                        let db = b.at(bn, ch, y0 + dy, x0 + dx) - mb;
                        va += win[k] * da * da;
                        vb += win[k] * db * db;
                        cov += win[k] * da * db;
                    }
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

pub fn rec(x: &T64, xr: &T64, y: &T64, yr: &T64) -> f64 {
    (1.0 - ssim(x, xr)) + (1.0 - ssim(y, yr))
}

pub fn depth_loss(pred: &T64, sparse: &T64) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.data.iter().zip(&sparse.data) {
        if *t > 0.0 {
            s += (p - t).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Direct stencil evaluation of the guided second-order smoothness term.
pub fn smoothness(d: &T64, g: &T64) -> f64 {
    let (n, _, h, w) = d.d4();
    let c = g.shape[1];
    let sx = |bn: usize, y: usize, x: usize| -> f64 {
        (0..c).map(|ch| (g.at(bn, ch, y, x + 1) - g.at(bn, ch, y, x)).abs()).sum::<f64>() / c as f64
    };
    let sy = |bn: usize, y: usize, x: usize| -> f64 {
        (0..c).map(|ch| (g.at(bn, ch, y + 1, x) - g.at(bn, ch, y, x)).abs()).sum::<f64>() / c as f64
    };
    let mut tx = 0.0;
    for bn in 0..n {
        for y in 0..h {
            for x in 0..w - 2 {
                let dxx = d.at(bn, 0, y, x + 2) - 2.0 * d.at(bn, 0, y, x + 1) + d.at(bn, 0, y, x);
                tx += dxx.abs() * (-sx(bn, y, x)).exp();
            }
        }
    }
    let mut ty = 0.0;
    for bn in 0..n {
        for y in 0..h - 2 {
            for x in 0..w {
                let dyy = d.at(bn, 0, y + 2, x) - 2.0 * d.at(bn, 0, y + 1, x) + d.at(bn, 0, y, x);
                ty += dyy.abs() * (-sy(bn, y, x)).exp();
            }
        }
    }
    tx / (n * h * (w - 2)) as f64 + ty / (n * (h - 2) * w) as f64
}

/// Central finite differences of `f` with respect to every element of `inputs[which]`.
pub fn fd_grad(f: &dyn Fn(&[T64]) -> f64, inputs: &[T64], which: usize, h: f64) -> Vec<f64> {
    let mut args = inputs.to_vec();
    (0..inputs[which].data.len())
        .map(|j| {
            let x0 = args[which].data[j];
            args[which].data[j] = x0 + h;
            let fp = f(&args);
            args[which].data[j] = x0 - h;
            let fm = f(&args);
            args[which].data[j] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Max elementwise relative error `|a − b| / max(|a|, |b|, 1e-2·‖b‖∞)`.
///
/// The floor keeps components that are tiny relative to the gradient's scale
/// from dominating through f32 rounding.
pub fn max_rel_err(analytic: &[f32], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-12);
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &b)| {
            let a = a as f64;
            (a - b).abs() / a.abs().max(b.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}

/// Receptive-field probe on a norm-free PatchGAN with positive weights.
///
/// Returns the bounding box (rows, cols) of input pixels with nonzero
/// gradient for the central logit, the support size, and whether a set of
/// single-pixel perturbations changed exactly the logits whose field covers
/// the pixel.
pub fn probe_patchgan_field(size: usize) -> (usize, usize, usize, bool) {
    use mtgan::nn::{ArchConfig, ModelParams};
    use mtgan::Graph;

    let mut arch = ArchConfig::patch_disc(2, 1);
    arch.disc_norm = false;
    let mut params = ModelParams::init(arch, 3).unwrap();
    let mut r = rng(4);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = r.random_range(0.1..1.0);
        }
    }
    let x = rand_tensor(&mut r, &[1, 1, size, size], -1.0, 1.0);

    let g = Graph::new();
    let xv = g.param(x.clone());
    let logits = params.bind(&g, false).forward(xv).unwrap();
    let (_, _, oh, ow) = logits.value().dims4().unwrap();
    let (ci, cj) = (oh / 2, ow / 2);
    let pick = Tensor::from_fn(vec![1, 1, oh, ow], |i| if i == ci * ow + cj { 1.0 } else { 0.0 });
    let loss = logits.mul(g.constant(pick)).unwrap().sum();
    g.backward(loss).unwrap();
    let grad = xv.grad().unwrap();
    let support: Vec<(usize, usize)> = (0..size * size)
        .filter(|&i| grad.data()[i] != 0.0)
        .map(|i| (i / size, i % size))
        .collect();
    let rows = support.iter().map(|p| p.0).max().unwrap() - support.iter().map(|p| p.0).min().unwrap() + 1;
    let cols = support.iter().map(|p| p.1).max().unwrap() - support.iter().map(|p| p.1).min().unwrap() + 1;

    // Layer arithmetic: logit i starts at input row 8·i − 23 and spans 70 rows.
    let covers = |i: usize, p: usize| {
        let start = 8 * i as isize - 23;
        (p as isize) >= start && (p as isize) < start + 70
    };
    let base = {
        let g = Graph::new();
        params.bind(&g, false).forward(g.constant(x.clone())).unwrap().value()
    };
    let mut exact = true;
    for &(py, px) in &[(0, 0), (size / 2, size / 3), (size - 1, size - 1), (31, 64), (47, 46)] {
        if py >= size || px >= size {
            continue;
        }
        let mut xp = x.clone();
        xp.data_mut()[py * size + px] += 1.0;
        let g = Graph::new();
        let out = params.bind(&g, false).forward(g.constant(xp)).unwrap().value();
        for i in 0..oh {
            for j in 0..ow {
                let changed = out.data()[i * ow + j] != base.data()[i * ow + j];
                exact &= changed == (covers(i, py) && covers(j, px));
            }
        }
    }
    (rows, cols, support.len(), exact)
}
