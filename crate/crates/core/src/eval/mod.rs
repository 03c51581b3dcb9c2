//! Segmentation and depth-completion metrics.

mod run;

pub use run::{evaluate_depth, evaluate_seg, predict_depth, predict_semantic};

use std::fmt::Write as _;

use crate::data::{Gray8, Image, Rgb8};
use crate::error::{Error, Result};
pub use crate::palette::Palette;

/// Snaps every pixel to the label of the nearest palette color.
pub fn align_palette(img: &Rgb8, palette: &Palette) -> Result<Gray8> {
    if img.channels != 3 {
        return Err(Error::Contract(format!("palette alignment needs RGB, got {} channels", img.channels)));
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| palette.nearest([p[0], p[1], p[2]]))
        .collect();
    Image::from_data(img.width, img.height, 1, data)
}

/// Rows are ground truth, columns predictions, over the non-ignored classes.
/// Predictions of the ignored label count toward their row only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    ignored_pred: Vec<u64>,
    class_of: Vec<Option<usize>>,
}

impl ConfusionMatrix {
    pub fn new(palette: &Palette) -> Self {
        let mut next = 0;
        let class_of = palette
            .entries()
            .iter()
            .map(|e| {
                (e.id != palette.ignored()).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        let k = palette.len() - 1;
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
            ignored_pred: vec![0; k],
            class_of,
        }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    fn class(&self, label: u8) -> Result<Option<usize>> {
        self.class_of
            .get(label as usize)
            .copied()
            .ok_or_else(|| Error::Contract(format!("label {label} is not in the palette")))
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Contract(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(gt) {
            let Some(r) = self.class(t)? else { continue };
            match self.class(p)? {
                Some(c) => self.counts[r * self.k + c] += 1,
                None => self.ignored_pred[r] += 1,
            }
        }
        Ok(())
    }

    pub fn get(&self, gt_class: usize, pred_class: usize) -> u64 {
        self.counts[gt_class * self.k + pred_class]
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.counts[r * self.k..(r + 1) * self.k].iter().sum::<u64>() + self.ignored_pred[r]
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.k).map(|r| self.row_sum(r)).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.ignored_pred.iter().all(|&v| v == 0)
            && (0..self.k).all(|r| (0..self.k).all(|c| r == c || self.get(r, c) == 0))
    }

    pub fn metrics(&self) -> Result<SegMetrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::NoValidPixels("every ground-truth pixel is ignored"));
        }
        let trace: u64 = (0..self.k).map(|i| self.get(i, i)).sum();
        let (mut acc_sum, mut acc_n, mut iou_sum, mut iou_n) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.k {
            let (d, row, col) = (self.get(i, i) as f64, self.row_sum(i) as f64, self.col_sum(i) as f64);
            if row > 0.0 {
                acc_sum += d / row;
                acc_n += 1;
            }
            if row + col > 0.0 {
                iou_sum += d / (row + col - d);
                iou_n += 1;
            }
        }
        Ok(SegMetrics {
            per_pixel_acc: trace as f64 / total as f64,
            per_class_acc: acc_sum / acc_n as f64,
            mean_iou: iou_sum / iou_n as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegMetrics {
    pub per_pixel_acc: f64,
    pub per_class_acc: f64,
    pub mean_iou: f64,
}

pub fn seg_metrics(pred: &[u8], gt: &[u8], palette: &Palette) -> Result<SegMetrics> {
    let mut cm = ConfusionMatrix::new(palette);
    cm.add(pred, gt)?;
    cm.metrics()
}

/// Depth errors in millimetres and inverse-depth errors in 1/km.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub irmse_km: f64,
    pub imae_km: f64,
    pub pixels: usize,
}

/// Predictions are clamped to at least 1 mm before inversion.
pub const MIN_PRED_MM: f64 = 1.0;

/// Metrics over pixels with `gt > 0`.
pub fn depth_metrics(pred: &[f64], gt: &[f64]) -> Result<DepthMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let (mut se, mut ae, mut ise, mut iae, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (&p, &t) in pred.iter().zip(gt) {
        if !(t > 0.0) {
            continue;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("depth prediction".into()));
        }
        let p = p.max(MIN_PRED_MM);
        let e = p - t;
        // 1/m from mm, reported per km
        let ie = (1000.0 / p - 1000.0 / t) * 1000.0;
        se += e * e;
        ae += e.abs();
        ise += ie * ie;
        iae += ie.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels("ground-truth depth is empty"));
    }
    let nf = n as f64;
    let m = DepthMetrics {
        rmse_mm: (se / nf).sqrt(),
        mae_mm: ae / nf,
        irmse_km: (ise / nf).sqrt(),
        imae_km: iae / nf,
        pixels: n,
    };
    debug_assert!(m.rmse_mm >= m.mae_mm * (1.0 - 1e-12) && m.irmse_km >= m.imae_km * (1.0 - 1e-12));
    Ok(m)
}

/// Lower-middle element for even counts.
fn lower_median(mut v: Vec<f64>) -> f64 {
    let mid = (v.len() - 1) / 2;
    *v.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Scales `pred` by `median(gt)/median(pred)` over pixels where both are positive.
pub fn median_scale_align(pred: &[f64], gt: &[f64]) -> Result<(Vec<f64>, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let (p, t): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(gt)
        .filter(|(&p, &t)| p > 0.0 && t > 0.0)
        .map(|(&p, &t)| (p, t))
        .unzip();
    if p.is_empty() {
        return Err(Error::NoValidPixels("no pixel has both positive prediction and ground truth"));
    }
    let mp = lower_median(p);
    if !(mp > 0.0 && mp.is_finite()) {
        return Err(Error::NoValidPixels("prediction median is zero"));
    }
    let factor = lower_median(t) / mp;
    Ok((pred.iter().map(|&v| v * factor).collect(), factor))
}

/// One CSV row of evaluation results; metrics not computed are left empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub n: usize,
    pub seg: Option<SegMetrics>,
    pub depth: Option<DepthMetrics>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "split,n,per_pixel_acc,per_class_acc,mean_iou,rmse_mm,mae_mm,irmse_km,imae_km";

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.split.replace(',', "_"), self.n);
        let mut push = |v: Option<f64>| {
            let _ = match v {
                Some(v) => write!(s, ",{v}"),
                None => write!(s, ","),
            };
        };
        push(self.seg.map(|m| m.per_pixel_acc));
        push(self.seg.map(|m| m.per_class_acc));
        push(self.seg.map(|m| m.mean_iou));
        push(self.depth.map(|m| m.rmse_mm));
        push(self.depth.map(|m| m.mae_mm));
        push(self.depth.map(|m| m.irmse_km));
        push(self.depth.map(|m| m.imae_km));
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}
