use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{quantize_depth_mm, sample_id, Gray16, Image, Sample, SceneSpec};
use crate::error::Result;
use crate::palette::Palette;
use crate::seed;

pub const ROAD: u8 = 0;
pub const SIDEWALK: u8 = 1;
pub const BUILDING: u8 = 2;
pub const POLE: u8 = 5;
pub const VEGETATION: u8 = 8;
pub const SKY: u8 = 10;
pub const CAR: u8 = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    /// Axis-aligned rectangle with depth varying linearly along x.
    SlopedBox,
    /// Axis-aligned rectangle at constant depth.
    Box,
    Ellipse,
    /// Thin tall rectangle.
    Pole,
}

impl ShapeFamily {
    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::SlopedBox => "sloped_box",
            ShapeFamily::Box => "box",
            ShapeFamily::Ellipse => "ellipse",
            ShapeFamily::Pole => "pole",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectClass {
    pub label: u8,
    pub family: ShapeFamily,
}

impl ObjectClass {
    pub fn defaults() -> Vec<ObjectClass> {
        vec![
            ObjectClass {
                label: BUILDING,
                family: ShapeFamily::SlopedBox,
            },
            ObjectClass {
                label: VEGETATION,
                family: ShapeFamily::Ellipse,
            },
            ObjectClass {
                label: POLE,
                family: ShapeFamily::Pole,
            },
            ObjectClass {
                label: CAR,
                family: ShapeFamily::Box,
            },
        ]
    }
}

/// Unlit surface color of a class. Classes without a dedicated appearance use
/// their palette color pulled halfway to gray.
fn appearance(label: u8, palette: &Palette) -> [f32; 3] {
    match label {
        ROAD => [96.0, 92.0, 100.0],
        SIDEWALK => [176.0, 168.0, 160.0],
        BUILDING => [150.0, 120.0, 100.0],
        POLE => [70.0, 70.0, 84.0],
        VEGETATION => [60.0, 125.0, 50.0],
        SKY => [150.0, 195.0, 235.0],
        CAR => [40.0, 60.0, 150.0],
        _ => {
            let c = palette.color(label).unwrap_or([128, 128, 128]);
            c.map(|v| 0.5 * v as f32 + 64.0)
        }
    }
}

struct Placed {
    label: u8,
    family: ShapeFamily,
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    depth: f32,
    slope: f32,
}

impl Placed {
    fn overlaps(&self, o: &Placed) -> bool {
        // one pixel of clearance so same-class shapes never touch
        self.x0 - 1 < o.x0 + o.w && o.x0 - 1 < self.x0 + self.w && self.y0 - 1 < o.y0 + o.h && o.y0 - 1 < self.y0 + self.h
    }

    fn covers(&self, x: i64, y: i64) -> bool {
        if x < self.x0 || x >= self.x0 + self.w || y < self.y0 || y >= self.y0 + self.h {
            return false;
        }
        if self.family != ShapeFamily::Ellipse {
            return true;
        }
        let rx = self.w as f32 / 2.0;
        let ry = self.h as f32 / 2.0;
        let dx = (x - self.x0) as f32 + 0.5 - rx;
        let dy = (y - self.y0) as f32 + 0.5 - ry;
        (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0
    }

    fn depth_at(&self, x: i64) -> f32 {
        let u = ((x - self.x0) as f32 + 0.5) / self.w as f32 - 0.5;
        self.depth * (1.0 + self.slope * u)
    }
}

/// Ground depth on image row `y` below the horizon: inverse depth falls
/// linearly from `1/d_min` at the bottom row to near `1/d_max` at the horizon.
fn ground_depth(spec: &SceneSpec, horizon: usize, y: usize) -> f32 {
    let t = (y + 1 - horizon) as f32 / (spec.height - horizon) as f32;
    let inv = 1.0 / spec.d_max_mm + t * (1.0 / spec.d_min_mm - 1.0 / spec.d_max_mm);
    1.0 / inv
}

fn place(spec: &SceneSpec, class: ObjectClass, horizon: usize, rng: &mut ChaCha8Rng) -> Placed {
    let (w_img, h_img) = (spec.width as f32, spec.height as f32);
    let base = rng.random_range(horizon + 1..spec.height);
    let depth = ground_depth(spec, horizon, base);
    let f = 0.35 + 0.65 * spec.d_min_mm / depth;
    let (w, h, slope) = match class.family {
        ShapeFamily::SlopedBox => {
            let w = (w_img * rng.random_range(0.25..0.5) * f).max(8.0);
            let h = h_img * rng.random_range(0.3..0.6) * f;
            (w, h, rng.random_range(-0.2..0.2))
        }
        ShapeFamily::Box => {
            let w = w_img * rng.random_range(0.15..0.3) * f;
            (w, w * rng.random_range(0.45..0.65), 0.0)
        }
        ShapeFamily::Ellipse => {
            let w = w_img * rng.random_range(0.16..0.32) * f;
            (w, w * rng.random_range(0.8..1.4), 0.0)
        }
        ShapeFamily::Pole => ((w_img * 0.03 * f).max(1.0), h_img * rng.random_range(0.3..0.55) * f, 0.0),
    };
    let (w, h) = (w.round().max(2.0) as i64, h.round().max(2.0) as i64);
    let x0 = rng.random_range(-(w / 4)..=(spec.width as i64 - w + w / 4).max(-(w / 4)));
    Placed {
        label: class.label,
        family: class.family,
        x0,
        y0: base as i64 - h + 1,
        w,
        h,
        depth,
        slope,
    }
}

/// Renders scene `index` of `spec`. Geometry, illumination and sparsification
/// draw from separate streams, so illumination never moves labels or depth.
pub fn generate_scene(spec: &SceneSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    let palette = Palette::cityscapes();
    let (w, h) = (spec.width, spec.height);
    let mut geo = seed::stream(spec.seed, "scene/geometry", index as u64);

    let horizon = geo.random_range((h as f32 * 0.35) as usize..=(h as f32 * 0.5) as usize);
    let road_shift = geo.random_range(-0.15..0.15) * w as f32;
    let road_half = geo.random_range(0.3..0.45) * w as f32;

    let mut labels = vec![SKY; w * h];
    let mut depth = vec![0.0f32; w * h];
    for y in horizon..h {
        let t = (y + 1 - horizon) as f32 / (h - horizon) as f32;
        let cx = w as f32 / 2.0 + road_shift * t;
        let half = road_half * (0.1 + 0.9 * t);
        let d = ground_depth(spec, horizon, y);
        for x in 0..w {
            let label = if ((x as f32 + 0.5) - cx).abs() <= half { ROAD } else { SIDEWALK };
            labels[y * w + x] = label;
            depth[y * w + x] = d;
        }
    }

    let count = geo.random_range(spec.objects.0..=spec.objects.1);
    let mut placed: Vec<Placed> = Vec::new();
    for _ in 0..count {
        let class = spec.classes[geo.random_range(0..spec.classes.len())];
        for _attempt in 0..10 {
            let p = place(spec, class, horizon, &mut geo);
            if !placed.iter().any(|o| o.label == p.label && o.overlaps(&p)) {
                placed.push(p);
                break;
            }
        }
    }
    placed.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for p in &placed {
        let ys = p.y0.max(0)..(p.y0 + p.h).min(h as i64);
        for y in ys {
            for x in p.x0.max(0)..(p.x0 + p.w).min(w as i64) {
                if p.covers(x, y) {
                    let i = y as usize * w + x as usize;
                    labels[i] = p.label;
                    depth[i] = p.depth_at(x).clamp(spec.d_min_mm, spec.d_max_mm);
                }
            }
        }
    }

    let mut illum = seed::stream(spec.seed, "scene/illumination", index as u64);
    let gain = 1.0 + illum.random_range(-1.0..=1.0) * spec.gain_jitter;
    let tint: [f32; 3] = std::array::from_fn(|_| 1.0 + illum.random_range(-1.0..=1.0) * spec.tint_jitter);
    let bias = illum.random_range(-1.0..=1.0) * spec.bias_jitter;
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("noise std is finite and non-negative");

    let mut rgb = Image::new(w, h, 3);
    let mut semantic_rgb = Image::new(w, h, 3);
    for (i, &label) in labels.iter().enumerate() {
        let base = appearance(label, &palette);
        let color = palette.color(label).expect("scene labels are palette ids");
        for c in 0..3 {
            let v = base[c] * gain * tint[c] + bias + noise.sample(&mut illum);
            rgb.data[i * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            semantic_rgb.data[i * 3 + c] = color[c];
        }
    }

    let dense = Image::from_data(w, h, 1, quantize_depth_mm(&depth)?)?;
    let sparse = sparsify_depth(
        &dense,
        spec.rho,
        seed::derive(spec.seed, "scene/sparse", index as u64),
    );
    Ok(Sample {
        id: sample_id(index),
        rgb,
        semantic_rgb,
        semantic_ids: Image::from_data(w, h, 1, labels)?,
        dense_depth: dense,
        sparse_depth: sparse,
    })
}

/// Keeps each valid pixel independently. Every 4th row (scan lines) keeps
/// with probability `min(1, 2.5ρ)`, the other rows with the probability that
/// brings the mean rate back to ρ.
pub fn sparsify_depth(dense: &Gray16, rho: f32, seed: u64) -> Gray16 {
    let rho = rho.clamp(0.0, 1.0) as f64;
    let p_scan = (2.5 * rho).min(1.0);
    let p_other = ((4.0 * rho - p_scan) / 3.0).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Image::new(dense.width, dense.height, dense.channels);
    for y in 0..dense.height {
        let p = if y % 4 == 0 { p_scan } else { p_other };
        for x in 0..dense.width {
            let i = y * dense.width + x;
            let keep = rng.random::<f64>() < p;
            if dense.data[i] > 0 && keep {
                out.data[i] = dense.data[i];
            }
        }
    }
    out
}
