//! Raw slice kernels behind the graph ops. Callers validate shapes.

/// `C = op(A)·op(B) + beta·C` for row-major matrices; `A` is m×k and `B` is k×n
/// after the optional transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assert above bounds every index the strides can reach.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − pad` lies inside `0..w`.
fn valid_cols(g: &Window, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.ow);
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds one C×H×W image into a (C·kh·kw)×(oh·ow) patch matrix (zero padding).
pub(crate) fn im2col(src: &[f32], g: &Window, cols: &mut [f32]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &src[(ci * g.h + iy as usize) * g.w..][..g.w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    if lo < hi {
                        let x0 = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            dst[lo..hi].copy_from_slice(&src_row[x0..x0 + hi - lo]);
                        } else {
                            for (d, &v) in dst[lo..hi].iter_mut().zip(src_row[x0..].iter().step_by(g.stride)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back into a C×H×W image.
pub(crate) fn col2im(cols: &[f32], g: &Window, dst: &mut [f32]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                let x0 = lo * g.stride + kj - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.ow + lo..row + oy * g.ow + hi];
                    let dst_row = &mut dst[(ci * g.h + iy as usize) * g.w..][..g.w];
                    if g.stride == 1 {
                        for (d, &v) in dst_row[x0..x0 + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst_row[x0..].iter_mut().step_by(g.stride).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub cout: usize,
    pub win: Window,
}

pub(crate) fn conv2d_forward(
    input: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    d: &ConvDims,
) -> Vec<f32> {
    let g = &d.win;
    let (k, p) = (g.rows(), g.cols());
    let in_plane = g.c * g.h * g.w;
    let mut out = vec![0.0; d.n * d.cout * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for n in 0..d.n {
        let x = &input[n * in_plane..(n + 1) * in_plane];
        let b: &[f32] = if g.is_pointwise() {
            x
        } else {
            im2col(x, g, &mut cols);
            &cols
        };
        let o = &mut out[n * d.cout * p..(n + 1) * d.cout * p];
        gemm(d.cout, k, p, weight, false, b, false, o, 0.0);
        if let Some(bias) = bias {
            for (co, row) in o.chunks_exact_mut(p).enumerate() {
                let bv = bias[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    d: &ConvDims,
    need: [bool; 3],
) -> ConvGrads {
    let g = &d.win;
    let (k, p) = (g.rows(), g.cols());
    let in_plane = g.c * g.h * g.w;
    let mut gin = need[0].then(|| vec![0.0; input.len()]);
    let mut gw = need[1].then(|| vec![0.0; weight.len()]);
    let gb = need[2].then(|| bias_grad(grad_out, d.n, d.cout, p));
    let mut cols = vec![0.0; k * p];
    for n in 0..d.n {
        let go = &grad_out[n * d.cout * p..(n + 1) * d.cout * p];
        if let Some(gw) = gw.as_mut() {
            let x = &input[n * in_plane..(n + 1) * in_plane];
            let b: &[f32] = if g.is_pointwise() {
                x
            } else {
                im2col(x, g, &mut cols);
                &cols
            };
            gemm(d.cout, p, k, go, false, b, true, gw, 1.0);
        }
        if let Some(gin) = gin.as_mut() {
            let dst = &mut gin[n * in_plane..(n + 1) * in_plane];
            if g.is_pointwise() {
                gemm(k, d.cout, p, weight, true, go, false, dst, 0.0);
            } else {
                gemm(k, d.cout, p, weight, true, go, false, &mut cols, 0.0);
                col2im(&cols, g, dst);
            }
        }
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

/// Transposed convolution. `d.win` describes the *adjoint* forward conv: it maps
/// the Cout×Ho×Wo output back onto the Cin×H×W input, so `win.c` is Cout,
/// `win.h/w` are the output extents and `win.oh/ow` the input extents; `d.cout`
/// holds Cin.
pub(crate) fn conv_transpose2d_forward(
    input: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    d: &ConvDims,
) -> Vec<f32> {
    let g = &d.win;
    let cin = d.cout;
    let (k, p) = (g.rows(), g.cols());
    let out_plane = g.c * g.h * g.w;
    let mut out = vec![0.0; d.n * out_plane];
    let mut cols = vec![0.0; k * p];
    for n in 0..d.n {
        let x = &input[n * cin * p..(n + 1) * cin * p];
        gemm(k, cin, p, weight, true, x, false, &mut cols, 0.0);
        let o = &mut out[n * out_plane..(n + 1) * out_plane];
        col2im(&cols, g, o);
        if let Some(bias) = bias {
            for (co, plane) in o.chunks_exact_mut(g.h * g.w).enumerate() {
                let bv = bias[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward(
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    d: &ConvDims,
    need: [bool; 3],
) -> ConvGrads {
    let g = &d.win;
    let cin = d.cout;
    let (k, p) = (g.rows(), g.cols());
    let out_plane = g.c * g.h * g.w;
    let mut gin = need[0].then(|| vec![0.0; input.len()]);
    let mut gw = need[1].then(|| vec![0.0; weight.len()]);
    let gb = need[2].then(|| bias_grad(grad_out, d.n, g.c, g.h * g.w));
    let mut cols = vec![0.0; k * p];
    for n in 0..d.n {
        im2col(&grad_out[n * out_plane..(n + 1) * out_plane], g, &mut cols);
        if let Some(gin) = gin.as_mut() {
            let dst = &mut gin[n * cin * p..(n + 1) * cin * p];
            gemm(cin, k, p, weight, false, &cols, false, dst, 0.0);
        }
        if let Some(gw) = gw.as_mut() {
            let x = &input[n * cin * p..(n + 1) * cin * p];
            gemm(cin, p, k, x, false, &cols, true, gw, 1.0);
        }
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

fn bias_grad(grad_out: &[f32], n: usize, c: usize, plane: usize) -> Vec<f32> {
    let mut gb = vec![0.0f32; c];
    for b in 0..n {
        for (co, g) in gb.iter_mut().enumerate() {
            let start = (b * c + co) * plane;
            *g += grad_out[start..start + plane].iter().sum::<f32>();
        }
    }
    gb
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Reflection padding of every H×W plane by `pad` on all four sides.
pub(crate) fn reflect_pad_forward(src: &[f32], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f32> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; planes * ph * pw];
    for pl in 0..planes {
        let s = &src[pl * h * w..(pl + 1) * h * w];
        let o = &mut out[pl * ph * pw..(pl + 1) * ph * pw];
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            let srow = &s[sy * w..(sy + 1) * w];
            let orow = &mut o[y * pw..(y + 1) * pw];
            orow[pad..pad + w].copy_from_slice(srow);
            for x in 0..pad {
                orow[x] = srow[pad - x];
                orow[pad + w + x] = srow[w - 2 - x];
            }
        }
    }
    out
}

pub(crate) fn reflect_pad_backward(grad: &[f32], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f32> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let g = &grad[pl * ph * pw..(pl + 1) * ph * pw];
        let o = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            let grow = &g[y * pw..(y + 1) * pw];
            let orow = &mut o[sy * w..(sy + 1) * w];
            for (d, &v) in orow.iter_mut().zip(&grow[pad..pad + w]) {
                *d += v;
            }
            for x in 0..pad {
                orow[pad - x] += grow[x];
                orow[w - 2 - x] += grow[pad + w + x];
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolDims {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn avg_pool_forward(src: &[f32], d: &PoolDims) -> Vec<f32> {
    let scale = 1.0 / (d.kh * d.kw) as f32;
    let mut out = vec![0.0; d.planes * d.oh * d.ow];
    for pl in 0..d.planes {
        let s = &src[pl * d.h * d.w..(pl + 1) * d.h * d.w];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = 0.0f32;
                for ky in 0..d.kh {
                    let row = &s[(oy * d.sh + ky) * d.w + ox * d.sw..][..d.kw];
                    acc += row.iter().sum::<f32>();
                }
                out[(pl * d.oh + oy) * d.ow + ox] = acc * scale;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(grad: &[f32], d: &PoolDims) -> Vec<f32> {
    let scale = 1.0 / (d.kh * d.kw) as f32;
    let mut out = vec![0.0; d.planes * d.h * d.w];
    for pl in 0..d.planes {
        let o = &mut out[pl * d.h * d.w..(pl + 1) * d.h * d.w];
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let g = grad[(pl * d.oh + oy) * d.ow + ox] * scale;
                for ky in 0..d.kh {
                    let row = &mut o[(oy * d.sh + ky) * d.w + ox * d.sw..][..d.kw];
                    row.iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    out
}

pub(crate) fn upsample_forward(src: &[f32], planes: usize, h: usize, w: usize, s: usize) -> Vec<f32> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; planes * oh * ow];
    for pl in 0..planes {
        for y in 0..oh {
            let srow = &src[(pl * h + y / s) * w..][..w];
            let orow = &mut out[(pl * oh + y) * ow..][..ow];
            for (x, v) in orow.iter_mut().enumerate() {
                *v = srow[x / s];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(grad: &[f32], planes: usize, h: usize, w: usize, s: usize) -> Vec<f32> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; planes * h * w];
    for pl in 0..planes {
        for y in 0..oh {
            let grow = &grad[(pl * oh + y) * ow..][..ow];
            let orow = &mut out[(pl * h + y / s) * w..][..w];
            for (x, &g) in grow.iter().enumerate() {
                orow[x / s] += g;
            }
        }
    }
    out
}

/// Per-plane statistics saved by the instance-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormStats {
    pub mean: Vec<f32>,
    pub rstd: Vec<f32>,
}

pub(crate) fn instance_norm_forward(
    src: &[f32],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> (Vec<f32>, NormStats) {
    let mut out = vec![0.0; src.len()];
    let mut mean = Vec::with_capacity(n * c);
    let mut rstd = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let idx = b * c + ch;
            let x = &src[idx * plane..(idx + 1) * plane];
            let mu = x.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = x.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / plane as f64;
            let r = 1.0 / (var + eps as f64).sqrt();
            let (mu, r) = (mu as f32, r as f32);
            let (g, bt) = (gamma[ch], beta[ch]);
            for (o, &v) in out[idx * plane..(idx + 1) * plane].iter_mut().zip(x) {
                *o = (v - mu) * r * g + bt;
            }
            mean.push(mu);
            rstd.push(r);
        }
    }
    (out, NormStats { mean, rstd })
}

/// Returns (d input, d gamma, d beta).
pub(crate) fn instance_norm_backward(
    src: &[f32],
    grad: &[f32],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f32],
    stats: &NormStats,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut gin = vec![0.0; src.len()];
    let mut ggamma = vec![0.0f32; c];
    let mut gbeta = vec![0.0f32; c];
    let m = plane as f64;
    for b in 0..n {
        for ch in 0..c {
            let idx = b * c + ch;
            let (mu, r) = (stats.mean[idx], stats.rstd[idx]);
            let x = &src[idx * plane..(idx + 1) * plane];
            let g = &grad[idx * plane..(idx + 1) * plane];
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for (&xv, &gv) in x.iter().zip(g) {
                let xhat = ((xv - mu) * r) as f64;
                sum_g += gv as f64;
                sum_gx += gv as f64 * xhat;
            }
            gbeta[ch] += sum_g as f32;
            ggamma[ch] += sum_gx as f32;
            let gm = gamma[ch] as f64;
            let (sum_d, sum_dx) = (sum_g * gm, sum_gx * gm);
            for ((o, &xv), &gv) in gin[idx * plane..(idx + 1) * plane].iter_mut().zip(x).zip(g) {
                let xhat = ((xv - mu) * r) as f64;
                let dxhat = gv as f64 * gm;
                *o = (r as f64 / m * (m * dxhat - sum_d - xhat * sum_dx)) as f32;
            }
        }
    }
    (gin, ggamma, gbeta)
}
