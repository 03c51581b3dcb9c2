use super::{Bound, LEAKY_SLOPE, NORM_EPS};
use crate::error::{dim_err, Result};
use crate::tensor::{conv_out_size, Var};

const KERNEL: usize = 4;
const PAD: usize = 1;
const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

/// Logit-grid extent for an input extent, or `None` if the stack does not fit.
pub fn patchgan_out_size(input: usize) -> Option<usize> {
    STRIDES
        .iter()
        .try_fold(input, |n, &s| conv_out_size(n, KERNEL, s, PAD))
}

/// 4×4 convolutions at widths w, 2w, 4w, 8w with strides 2, 2, 2, 1 and
/// leaky ReLU, instance norm from the second layer on, then a 4×4 stride-1
/// convolution to one logit channel. Each logit sees a 70×70 input patch.
pub fn patchgan_forward<'g>(x: Var<'g>, p: &Bound<'g>) -> Result<Var<'g>> {
    let arch = p.arch();
    let s = x.shape();
    if s.len() != 4 || s[1] != arch.in_channels {
        return Err(dim_err(
            "patchgan",
            format!("expects {} input channels on axis 1, got shape {s:?}", arch.in_channels),
        ));
    }
    if patchgan_out_size(s[2]).is_none() || patchgan_out_size(s[3]).is_none() {
        return Err(dim_err(
            "patchgan",
            format!("input {}×{} too small for the layer stack", s[2], s[3]),
        ));
    }
    let mut h = x;
    for i in 0..4 {
        let normed = i > 0 && arch.disc_norm;
        let bias = if normed { None } else { Some(p.var(&format!("l{i}.conv.b"))?) };
        h = h.conv2d(p.var(&format!("l{i}.conv.w"))?, bias, STRIDES[i], PAD)?;
        if normed {
            h = h.instance_norm(
                p.var(&format!("l{i}.norm.gamma"))?,
                p.var(&format!("l{i}.norm.beta"))?,
                NORM_EPS,
            )?;
        }
        h = h.leaky_relu(LEAKY_SLOPE);
    }
    h.conv2d(p.var("out.conv.w")?, Some(p.var("out.conv.b")?), STRIDES[4], PAD)
}
