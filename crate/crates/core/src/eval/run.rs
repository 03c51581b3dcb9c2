use super::{align_palette, depth_metrics, median_scale_align, ConfusionMatrix, DepthMetrics, MetricsReport};
use crate::data::{tensor_depth_mm, tensor_image, Dataset};
use crate::error::{Error, Result};
use crate::nn::{depth_input, ModelParams};
use crate::palette::Palette;
use crate::tensor::{Graph, Tensor};

const EVAL_BATCH: usize = 8;

/// Semantic images `G_s(rgb)` in `[-1, 1]`.
pub fn predict_semantic(gs: &ModelParams, rgb: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let y = gs.bind(&g, false).forward(g.constant(rgb.clone()))?;
    Ok(y.value())
}

/// Dense depth `G_d(sparse, rgb, semantic)` in `[-1, 1]`; with `use_semantic`
/// off the semantic channels are zero-filled.
pub fn predict_depth(
    gs: &ModelParams,
    gd: &ModelParams,
    rgb: &Tensor,
    sparse: &Tensor,
    use_semantic: bool,
) -> Result<Tensor> {
    let semantic = if use_semantic {
        predict_semantic(gs, rgb)?
    } else {
        Tensor::zeros(rgb.shape().to_vec())
    };
    let g = Graph::new();
    let x = depth_input(g.constant(sparse.clone()), g.constant(rgb.clone()), g.constant(semantic))?;
    Ok(gd.bind(&g, false).forward(x)?.value())
}

fn batches(n: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).step_by(EVAL_BATCH).map(move |s| s..(s + EVAL_BATCH).min(n))
}

fn stack(range: std::ops::Range<usize>, pick: impl Fn(usize) -> Tensor) -> Result<Tensor> {
    Tensor::stack(&range.map(pick).collect::<Vec<_>>())
}

/// Palette-aligned segmentation metrics of `G_s` over a dataset.
pub fn evaluate_seg(gs: &ModelParams, data: &Dataset, palette: &Palette, split: &str) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(palette);
    for r in batches(data.len()) {
        let rgb = stack(r.clone(), |i| data.tensors[i].rgb.clone())?;
        let out = predict_semantic(gs, &rgb)?;
        for (n, i) in r.enumerate() {
            let labels = align_palette(&tensor_image(&out, n)?, palette)?;
            cm.add(&labels.data, &data.samples[i].semantic_ids.data)?;
        }
    }
    Ok(MetricsReport {
        split: split.to_string(),
        n: data.len(),
        seg: Some(cm.metrics()?),
        depth: None,
    })
}

/// Median-aligned depth metrics per image, averaged over images.
pub fn evaluate_depth(
    gs: &ModelParams,
    gd: &ModelParams,
    data: &Dataset,
    use_semantic: bool,
    split: &str,
) -> Result<MetricsReport> {
    let dmax = data.manifest.dmax_mm;
    let mut per_image: Vec<DepthMetrics> = Vec::with_capacity(data.len());
    for r in batches(data.len()) {
        let rgb = stack(r.clone(), |i| data.tensors[i].rgb.clone())?;
        let sparse = stack(r.clone(), |i| data.tensors[i].sparse.clone())?;
        let out = predict_depth(gs, gd, &rgb, &sparse, use_semantic)?;
        for (n, i) in r.enumerate() {
            let pred: Vec<f64> = tensor_depth_mm(&out, n, dmax)?.into_iter().map(f64::from).collect();
            let gt: Vec<f64> = data.samples[i].dense_depth.data.iter().map(|&v| v as f64).collect();
            let (aligned, _) = median_scale_align(&pred, &gt)?;
            per_image.push(depth_metrics(&aligned, &gt)?);
        }
    }
    Ok(MetricsReport {
        split: split.to_string(),
        n: data.len(),
        seg: None,
        depth: Some(mean_depth_metrics(&per_image)?),
    })
}

pub(crate) fn mean_depth_metrics(all: &[DepthMetrics]) -> Result<DepthMetrics> {
    if all.is_empty() {
        return Err(Error::NoValidPixels("no images evaluated"));
    }
    let n = all.len() as f64;
    let mean = |f: fn(&DepthMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    Ok(DepthMetrics {
        rmse_mm: mean(|m| m.rmse_mm),
        mae_mm: mean(|m| m.mae_mm),
        irmse_km: mean(|m| m.irmse_km),
        imae_km: mean(|m| m.imae_km),
        pixels: all.iter().map(|m| m.pixels).sum(),
    })
}
