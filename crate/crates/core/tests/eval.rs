mod common;

use common::*;
use rand::Rng;
use mtgan::data::{Image, Rgb8};
use mtgan::eval::{align_palette, depth_metrics, median_scale_align, seg_metrics, ConfusionMatrix, MetricsReport, Palette};
use mtgan::Error;
use proptest::prelude::*;

fn two_class() -> Palette {
    Palette::parse("0 0 0 0 a\n1 255 255 255 b\n2 7 7 7 void ignored\n", "two").unwrap()
}

fn oracle_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

#[test]
fn palette_alignment_examples() {
    let toy = Palette::parse("0 0 0 0 black\n1 255 255 255 white\n2 255 0 0 void ignored\n", "toy").unwrap();
    // 173.2 vs 268.5
    let d0 = (3.0f64 * 100.0 * 100.0).sqrt();
    let d1 = (3.0f64 * 155.0 * 155.0).sqrt();
    assert!((d0 - 173.205).abs() < 1e-3 && (d1 - 268.468).abs() < 1e-3);
    let img = Rgb8::from_data(2, 1, 3, vec![100, 100, 100, 255, 255, 255]).unwrap();
    assert_eq!(align_palette(&img, &toy).unwrap().data, vec![0, 1]);

    let tie = Palette::parse("0 0 0 0 a\n1 2 0 0 b\n2 9 9 9 void ignored\n", "tie").unwrap();
    let px = Rgb8::from_data(1, 1, 3, vec![1, 0, 0]).unwrap();
    assert_eq!(align_palette(&px, &tie).unwrap().data, vec![0]);
}

#[test]
fn alignment_is_idempotent_on_palette_images() {
    let pal = Palette::cityscapes();
    let mut r = rng(5);
    let ids: Vec<u8> = (0..64).map(|_| r.random_range(0..pal.len() as u8)).collect();
    let data: Vec<u8> = ids.iter().flat_map(|&i| pal.color(i).unwrap()).collect();
    let img = Rgb8::from_data(8, 8, 3, data).unwrap();
    let once = align_palette(&img, &pal).unwrap();
    assert_eq!(once.data, ids);
    let recolored: Vec<u8> = once.data.iter().flat_map(|&i| pal.color(i).unwrap()).collect();
    assert_eq!(recolored, img.data);
}

#[test]
fn hand_confusion_matrix() {
    let m = seg_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], &two_class()).unwrap();
    assert!((m.per_pixel_acc - 0.75).abs() < 1e-9);
    assert!((m.per_class_acc - 0.75).abs() < 1e-9);
    assert!((m.mean_iou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-9);
    assert!((m.mean_iou - 0.583333333).abs() < 1e-9);

    let perfect = seg_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0], &two_class()).unwrap();
    assert_eq!((perfect.per_pixel_acc, perfect.per_class_acc, perfect.mean_iou), (1.0, 1.0, 1.0));
}

#[test]
fn ignored_ground_truth_is_excluded() {
    let pal = two_class();
    let m = seg_metrics(&[0, 1, 0, 0], &[0, 1, 2, 2], &pal).unwrap();
    assert_eq!(m.per_pixel_acc, 1.0);
    let err = seg_metrics(&[0, 1], &[2, 2], &pal).unwrap_err();
    assert!(matches!(err, Error::NoValidPixels(_)), "{err}");
    assert!(err.to_string().contains("no valid pixels"), "{err}");
}

#[test]
fn metrics_equal_one_iff_diagonal() {
    let pal = two_class();
    let mut cm = ConfusionMatrix::new(&pal);
    cm.add(&[0, 1, 1], &[0, 1, 1]).unwrap();
    assert!(cm.is_diagonal());
    cm.add(&[1], &[0]).unwrap();
    assert!(!cm.is_diagonal());
    let m = cm.metrics().unwrap();
    assert!(m.per_pixel_acc < 1.0 && m.per_class_acc < 1.0 && m.mean_iou < 1.0);
    assert_eq!(cm.total(), 4);
}

#[test]
fn single_pixel_depth_metrics() {
    let m = depth_metrics(&[2000.0], &[4000.0]).unwrap();
    assert!((m.rmse_mm - 2000.0).abs() < 1e-9);
    assert!((m.mae_mm - 2000.0).abs() < 1e-9);
    assert!((m.irmse_km - 250.0).abs() < 1e-9);
    assert!((m.imae_km - 250.0).abs() < 1e-9);

    let zero = depth_metrics(&[1500.0, 7.0], &[1500.0, 0.0]).unwrap();
    assert_eq!((zero.rmse_mm, zero.mae_mm, zero.irmse_km, zero.imae_km, zero.pixels), (0.0, 0.0, 0.0, 0.0, 1));
    assert!(matches!(depth_metrics(&[1.0], &[0.0]), Err(Error::NoValidPixels(_))));
}

#[test]
fn nonpositive_predictions_clamp_to_one_millimetre() {
    let m = depth_metrics(&[-5.0], &[1000.0]).unwrap();
    assert!((m.mae_mm - 999.0).abs() < 1e-9);
    assert!((m.imae_km - (1000.0 - 1.0) * 1000.0).abs() < 1e-6);
}

#[test]
fn median_alignment_examples() {
    let gt = [1000.0, 2000.0, 0.0, 5000.0, 3000.0];
    let (same, f) = median_scale_align(&gt, &gt).unwrap();
    assert_eq!(f, 1.0);
    assert_eq!(same, gt.to_vec());
    let half: Vec<f64> = gt.iter().map(|v| v / 2.0).collect();
    let (scaled, f) = median_scale_align(&half, &gt).unwrap();
    assert_eq!(f, 2.0);
    assert_eq!(scaled, gt.to_vec());
    assert!(median_scale_align(&[0.0, 0.0], &[1.0, 1.0]).is_err());
}

#[test]
fn median_factor_matches_sort_oracle() {
    let mut r = rng(11);
    for len in [1usize, 2, 7, 64, 401] {
        let gt: Vec<f64> = (0..len).map(|_| if r.random::<f64>() < 0.2 { 0.0 } else { r.random_range(1.0..20000.0) }).collect();
        let pred: Vec<f64> = (0..len).map(|_| r.random_range(-100.0..30000.0)).collect();
        let valid: Vec<usize> = (0..len).filter(|&i| gt[i] > 0.0 && pred[i] > 0.0).collect();
        if valid.is_empty() {
            continue;
        }
        let mp = oracle_median(&valid.iter().map(|&i| pred[i]).collect::<Vec<_>>());
        let mt = oracle_median(&valid.iter().map(|&i| gt[i]).collect::<Vec<_>>());
        let (_, f) = median_scale_align(&pred, &gt).unwrap();
        assert_eq!(f, mt / mp, "len {len}");
    }
}

#[test]
fn report_csv_header_is_fixed() {
    assert_eq!(
        MetricsReport::CSV_HEADER,
        "split,n,per_pixel_acc,per_class_acc,mean_iou,rmse_mm,mae_mm,irmse_km,imae_km"
    );
    let r = MetricsReport {
        split: "eval".into(),
        n: 3,
        ..Default::default()
    };
    assert_eq!(r.to_csv().lines().next().unwrap(), MetricsReport::CSV_HEADER);
    assert_eq!(r.csv_row(), "eval,3,,,,,,,");
}

fn depth_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(1.0f64..30000.0, n),
            prop::collection::vec(prop_oneof![Just(0.0), 500.0f64..20000.0], n),
        )
    })
}

/// Relative closeness with an absolute floor for metrics that vanish.
fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-9
}

proptest! {
    #[test]
    fn aligned_metrics_ignore_global_scale((pred, gt) in depth_pair(), c in 0.1f64..10.0) {
        prop_assume!(gt.iter().any(|&v| v > 0.0));
        let (a, _) = median_scale_align(&pred, &gt).unwrap();
        let scaled: Vec<f64> = pred.iter().map(|v| v * c).collect();
        let (b, _) = median_scale_align(&scaled, &gt).unwrap();
        let (ma, mb) = (depth_metrics(&a, &gt).unwrap(), depth_metrics(&b, &gt).unwrap());
        prop_assert!(close(ma.rmse_mm, mb.rmse_mm, 1e-6));
        prop_assert!(close(ma.mae_mm, mb.mae_mm, 1e-6));
        prop_assert!(close(ma.irmse_km, mb.irmse_km, 1e-6));
        prop_assert!(close(ma.imae_km, mb.imae_km, 1e-6));
    }

    #[test]
    fn rmse_dominates_mae((pred, gt) in depth_pair()) {
        prop_assume!(gt.iter().any(|&v| v > 0.0));
        let m = depth_metrics(&pred, &gt).unwrap();
        prop_assert!(m.rmse_mm >= m.mae_mm * (1.0 - 1e-12));
        prop_assert!(m.irmse_km >= m.imae_km * (1.0 - 1e-12));
        prop_assert!(m.rmse_mm >= 0.0 && m.imae_km >= 0.0);
    }

    #[test]
    fn alignment_is_idempotent((pred, gt) in depth_pair()) {
        prop_assume!(gt.iter().any(|&v| v > 0.0));
        let (once, _) = median_scale_align(&pred, &gt).unwrap();
        let (twice, f) = median_scale_align(&once, &gt).unwrap();
        prop_assert!((f - 1.0).abs() < 1e-12);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn metrics_are_permutation_invariant((pred, gt) in depth_pair(), seed in any::<u64>()) {
        prop_assume!(gt.iter().any(|&v| v > 0.0));
        let mut idx: Vec<usize> = (0..pred.len()).collect();
        let mut r = rng(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, r.random_range(0..=i));
        }
        let p2: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let g2: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let (a, b) = (depth_metrics(&pred, &gt).unwrap(), depth_metrics(&p2, &g2).unwrap());
        prop_assert!(close(a.rmse_mm, b.rmse_mm, 1e-12) && close(a.imae_km, b.imae_km, 1e-12));
    }

    #[test]
    fn seg_metrics_stay_in_unit_interval(pairs in prop::collection::vec((0u8..3, 0u8..3), 1..100)) {
        let (pred, gt): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        prop_assume!(gt.iter().any(|&g| g != 2));
        let m = seg_metrics(&pred, &gt, &two_class()).unwrap();
        for v in [m.per_pixel_acc, m.per_class_acc, m.mean_iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let exact = pred.iter().zip(&gt).all(|(p, g)| p == g || *g == 2);
        prop_assert_eq!(exact, m.per_pixel_acc == 1.0 && m.per_class_acc == 1.0 && m.mean_iou == 1.0);
    }
}

#[test]
fn alignment_rejects_non_rgb() {
    let img: Image<u8> = Image::new(2, 2, 1);
    assert!(align_palette(&img, &two_class()).is_err());
}
