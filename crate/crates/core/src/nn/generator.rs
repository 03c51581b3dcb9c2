use super::{Bound, NORM_EPS};
use crate::error::{dim_err, Result};
use crate::tensor::Var;

fn conv_norm<'g>(x: Var<'g>, p: &Bound<'g>, conv: &str, norm: &str, stride: usize) -> Result<Var<'g>> {
    let y = x.conv2d(p.var(&format!("{conv}.w"))?, None, stride, 0)?;
    y.instance_norm(
        p.var(&format!("{norm}.gamma"))?,
        p.var(&format!("{norm}.beta"))?,
        NORM_EPS,
    )
}

/// `x + F(x)` with F = pad→conv3×3→norm→relu→pad→conv3×3→norm.
pub fn residual_block<'g>(x: Var<'g>, p: &Bound<'g>, index: usize) -> Result<Var<'g>> {
    let c = p.var(&format!("res{index}.conv1.w"))?.shape()[1];
    if x.shape().get(1) != Some(&c) {
        return Err(dim_err(
            "residual_block",
            format!("input {:?} does not have {c} channels on axis 1", x.shape()),
        ));
    }
    let h = conv_norm(
        x.reflect_pad(1)?,
        p,
        &format!("res{index}.conv1"),
        &format!("res{index}.norm1"),
        1,
    )?
    .relu();
    let h = conv_norm(
        h.reflect_pad(1)?,
        p,
        &format!("res{index}.conv2"),
        &format!("res{index}.norm2"),
        1,
    )?;
    x.add(h)
}

/// Average-pools with a square kernel and stride = kernel, then restores H×W
/// by nearest upsampling. Extents that are not multiples of the kernel are
/// reflect-padded around the map up to the next multiple, pooled, and cropped back.
fn pool_restore<'g>(z: Var<'g>, (kh, kw): (usize, usize)) -> Result<Var<'g>> {
    let s = z.shape();
    let (h, w) = (s[2], s[3]);
    if kh > h || kw > w {
        return Err(dim_err(
            "mssp_block",
            format!("pooling kernel {kh}×{kw} exceeds map {h}×{w}"),
        ));
    }
    if kh == 1 && kw == 1 {
        return Ok(z);
    }
    let (lh, lw) = (h.div_ceil(kh) * kh, w.div_ceil(kw) * kw);
    let (ah, aw) = ((lh - h) / 2, (lw - w) / 2);
    let pad = (lh - h - ah).max(lw - w - aw);
    let padded = if pad > 0 {
        z.reflect_pad(pad)?.crop(pad - ah, lh, pad - aw, lw)?
    } else {
        z
    };
    let pooled = padded.avg_pool2d((kh, kw), (kh, kw))?;
    let up = pooled.upsample_nearest(kh)?;
    if (lh, lw) == (h, w) {
        Ok(up)
    } else {
        up.crop(ah, h, aw, w)
    }
}

/// Multi-scale pooling over `concat(decoder_out, rgb)`: every kernel's pooled
/// map is restored to full size, stacked with the input and fused by a 3×3
/// convolution followed by tanh.
pub fn mssp_block<'g>(decoder_out: Var<'g>, rgb: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
    let (ds, rs) = (decoder_out.shape(), rgb.shape());
    if ds.len() != 4 || rs.len() != 4 || (ds[0], ds[2], ds[3]) != (rs[0], rs[2], rs[3]) {
        return Err(dim_err(
            "mssp_block",
            format!("decoder output {ds:?} and rgb {rs:?} disagree on N, H or W"),
        ));
    }
    let z = Var::concat_channels(&[decoder_out, rgb])?;
    let mut parts = vec![z];
    for &k in &p.arch().mssp_kernels {
        parts.push(pool_restore(z, k)?);
    }
    let cat = Var::concat_channels(&parts)?;
    let y = cat
        .reflect_pad(1)?
        .conv2d(p.var("mssp.conv.w")?, Some(p.var("mssp.conv.b")?), 1, 0)?;
    Ok(y.tanh())
}

/// Encoder → residual stack → decoder → tanh head, plus the multi-scale block
/// for configurations that carry one (fed with the input's first 3 channels).
pub fn generator_forward<'g>(x: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
    let arch = p.arch();
    let s = x.shape();
    if s.len() != 4 || s[1] != arch.in_channels {
        return Err(dim_err(
            "generator",
            format!(
                "{} expects {} input channels on axis 1, got shape {s:?}",
                arch.tag.name(),
                arch.in_channels
            ),
        ));
    }
    if s[2] % 4 != 0 || s[3] % 4 != 0 || s[2] < 8 || s[3] < 8 {
        return Err(dim_err(
            "generator",
            format!("H and W must be multiples of 4 and at least 8, got {}×{}", s[2], s[3]),
        ));
    }
    let h = conv_norm(x.reflect_pad(3)?, p, "enc0.conv", "enc0.norm", 1)?.relu();
    let h = conv_norm(h.reflect_pad(1)?, p, "enc1.conv", "enc1.norm", 2)?.relu();
    let mut h = conv_norm(h.reflect_pad(1)?, p, "enc2.conv", "enc2.norm", 2)?.relu();
    for i in 0..arch.residual_blocks {
        h = residual_block(h, p, i)?;
    }
    for (conv, norm) in [("dec0.convt", "dec0.norm"), ("dec1.convt", "dec1.norm")] {
        h = h
            .conv_transpose2d(p.var(&format!("{conv}.w"))?, None, 2, 1)?
            .instance_norm(
                p.var(&format!("{norm}.gamma"))?,
                p.var(&format!("{norm}.beta"))?,
                NORM_EPS,
            )?
            .relu();
    }
    let out = h
        .reflect_pad(3)?
        .conv2d(p.var("head.conv.w")?, Some(p.var("head.conv.b")?), 1, 0)?
        .tanh();
    if arch.has_mssp() {
        let rgb = if s[1] == 3 { x } else { first_channels(x, 3)? };
        mssp_block(out, rgb, p)
    } else {
        Ok(out)
    }
}

/// The leading `c` channels of an N×C×H×W map, as a 1×1 selection convolution.
fn first_channels(x: Var<'_>, c: usize) -> Result<Var<'_>> {
    let cin = x.shape()[1];
    let sel = crate::tensor::Tensor::from_fn(vec![c, cin, 1, 1], |i| {
        let (o, k) = (i / cin, i % cin);
        if o == k {
            1.0
        } else {
            0.0
        }
    });
    x.conv2d(x.graph().constant(sel), None, 1, 0)
}
