//! Synthetic street scenes and the on-disk dataset format.
//!
//! A [`SceneSpec`] plus a sample index determines every byte of a [`Sample`].
//! Datasets are directories of PPM/PGM files with a `manifest.txt`.

mod io;
mod scene;

pub use io::{
    generate_dataset, load_dataset, load_sample, read_pgm16, read_pgm8, read_ppm, write_pgm16, write_pgm8,
    write_ppm, write_sample, Manifest,
};
pub use scene::{generate_scene, sparsify_depth, ObjectClass, ShapeFamily};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Row-major interleaved image with `channels` values per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![T::default(); width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Contract(format!(
                "image {width}×{height}×{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

pub type Rgb8 = Image<u8>;
pub type Gray8 = Image<u8>;
pub type Gray16 = Image<u16>;

/// One generated scene. Depth maps are in millimetres, 0 meaning no measurement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub rgb: Rgb8,
    pub semantic_rgb: Rgb8,
    pub semantic_ids: Gray8,
    pub dense_depth: Gray16,
    pub sparse_depth: Gray16,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

/// Generation parameters for a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Inclusive range of foreground objects per scene.
    pub objects: (usize, usize),
    pub classes: Vec<ObjectClass>,
    pub d_min_mm: f32,
    pub d_max_mm: f32,
    pub rho: f32,
    /// Per-image multiplicative gain drawn from `1 ± gain_jitter`.
    pub gain_jitter: f32,
    /// Per-channel tint drawn from `1 ± tint_jitter`.
    pub tint_jitter: f32,
    /// Per-image additive offset drawn from `± bias_jitter` (byte units).
    pub bias_jitter: f32,
    /// Per-pixel Gaussian noise (byte units).
    pub noise_std: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            width: 64,
            height: 64,
            objects: (3, 7),
            classes: ObjectClass::defaults(),
            d_min_mm: 2_000.0,
            d_max_mm: 20_000.0,
            rho: 0.05,
            gain_jitter: 0.25,
            tint_jitter: 0.08,
            bias_jitter: 12.0,
            noise_std: 4.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must be in (0,1], got {}", self.rho));
        }
        if !(self.d_min_mm > 0.0 && self.d_min_mm < self.d_max_mm) {
            return bad(format!(
                "depth range must satisfy 0 < d_min < d_max, got [{}, {}]",
                self.d_min_mm, self.d_max_mm
            ));
        }
        if self.d_max_mm > u16::MAX as f32 {
            return bad(format!("d_max {} mm exceeds the 16-bit depth range", self.d_max_mm));
        }
        if self.width < 16 || self.height < 16 {
            return bad(format!("image size {}x{} is below 16x16", self.width, self.height));
        }
        if self.objects.0 > self.objects.1 {
            return bad(format!("object range {:?} is empty", self.objects));
        }
        if self.objects.1 > 0 && self.classes.is_empty() {
            return bad("objects requested but no object classes configured".into());
        }
        let jitters = [self.gain_jitter, self.tint_jitter, self.bias_jitter, self.noise_std];
        if jitters.iter().any(|j| !(j.is_finite() && *j >= 0.0)) || self.gain_jitter >= 1.0 {
            return bad("illumination jitters must be finite, non-negative, gain below 1".into());
        }
        Ok(())
    }

    /// Canonical text form; its hash identifies the generator configuration.
    pub fn canonical(&self) -> String {
        let classes: Vec<String> = self
            .classes
            .iter()
            .map(|c| format!("{}:{}", c.label, c.family.name()))
            .collect();
        format!(
            "seed={} size={}x{} objects={}..{} classes={} depth={:?}..{:?} rho={:?} gain={:?} tint={:?} bias={:?} noise={:?}",
            self.seed,
            self.width,
            self.height,
            self.objects.0,
            self.objects.1,
            classes.join(","),
            self.d_min_mm,
            self.d_max_mm,
            self.rho,
            self.gain_jitter,
            self.tint_jitter,
            self.bias_jitter,
            self.noise_std
        )
    }

    pub fn hash(&self) -> u64 {
        seed::hash_bytes(self.canonical().as_bytes())
    }
}

pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

/// Maps a byte to `[-1, 1]`.
pub fn byte_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`], rounding and clamping to the byte range.
pub fn unit_to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn depth_to_unit(mm: f32, d_max_mm: f32) -> f32 {
    mm / d_max_mm * 2.0 - 1.0
}

pub fn unit_to_depth(v: f32, d_max_mm: f32) -> f32 {
    (v + 1.0) * 0.5 * d_max_mm
}

/// Rounds depths to whole millimetres. Values above 65535 mm cannot be stored.
pub fn quantize_depth_mm(values: &[f32]) -> Result<Vec<u16>> {
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                Err(Error::NonFinite("depth map".into()))
            } else if v.round() > u16::MAX as f32 {
                Err(Error::Contract(format!(
                    "depth {v} mm exceeds the 16-bit maximum of 65535 mm"
                )))
            } else {
                Ok(v.round().max(0.0) as u16)
            }
        })
        .collect()
}

/// An image as a 1×C×H×W tensor in `[-1, 1]`.
pub fn image_tensor(img: &Rgb8) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    Tensor::from_fn(vec![1, c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        byte_to_unit(img.data[p * c + ch])
    })
}

/// Inverse of [`image_tensor`] for one batch item.
pub fn tensor_image(t: &Tensor, n: usize) -> Result<Rgb8> {
    let (bn, c, h, w) = t.dims4()?;
    if n >= bn {
        return Err(Error::Contract(format!("batch index {n} out of {bn}")));
    }
    let plane = &t.data()[n * c * h * w..(n + 1) * c * h * w];
    let mut img = Image::new(w, h, c);
    for ch in 0..c {
        for p in 0..h * w {
            img.data[p * c + ch] = unit_to_byte(plane[ch * h * w + p]);
        }
    }
    Ok(img)
}

/// A depth map as a 1×1×H×W tensor in `[-1, 1]` plus its validity mask.
pub fn depth_tensor(d: &Gray16, d_max_mm: f32) -> (Tensor, Tensor) {
    let shape = vec![1, 1, d.height, d.width];
    let value = Tensor::from_fn(shape.clone(), |i| depth_to_unit(d.data[i] as f32, d_max_mm));
    let mask = Tensor::from_fn(shape, |i| if d.data[i] > 0 { 1.0 } else { 0.0 });
    (value, mask)
}

/// Depths in mm of batch item `n` of an N×1×H×W tensor in `[-1, 1]`.
pub fn tensor_depth_mm(t: &Tensor, n: usize, d_max_mm: f32) -> Result<Vec<f32>> {
    let (bn, c, h, w) = t.dims4()?;
    if n >= bn || c != 1 {
        return Err(Error::Contract(format!(
            "expected batch item {n} of an N×1×H×W depth tensor, got {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[n * h * w..(n + 1) * h * w]
        .iter()
        .map(|&v| unit_to_depth(v, d_max_mm))
        .collect())
}

/// Training tensors of one sample, each with batch size 1.
#[derive(Clone, Debug)]
pub struct SampleTensors {
    pub rgb: Tensor,
    pub semantic: Tensor,
    pub dense: Tensor,
    pub dense_mask: Tensor,
    pub sparse: Tensor,
    pub sparse_mask: Tensor,
}

pub fn tensorize(sample: &Sample, d_max_mm: f32) -> SampleTensors {
    let (dense, dense_mask) = depth_tensor(&sample.dense_depth, d_max_mm);
    let (sparse, sparse_mask) = depth_tensor(&sample.sparse_depth, d_max_mm);
    SampleTensors {
        rgb: image_tensor(&sample.rgb),
        semantic: image_tensor(&sample.semantic_rgb),
        dense,
        dense_mask,
        sparse,
        sparse_mask,
    }
}

/// An in-memory dataset with pre-tensorized samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
    pub tensors: Vec<SampleTensors>,
}

impl Dataset {
    pub fn new(manifest: Manifest, samples: Vec<Sample>) -> Self {
        let tensors = samples.iter().map(|s| tensorize(s, manifest.dmax_mm)).collect();
        Dataset {
            manifest,
            samples,
            tensors,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Builds a dataset in memory without touching the disk.
    pub fn generate(spec: &SceneSpec, count: usize) -> Result<Self> {
        spec.validate()?;
        let samples = (0..count).map(|i| generate_scene(spec, i)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(Manifest::for_spec(spec, count), samples))
    }
}

/// Per-epoch shuffled index stream. Each named stream draws its own
/// permutation every epoch, so streams over the same data are unpaired.
#[derive(Clone, Debug)]
pub struct Sampler {
    seed: u64,
    label: String,
    len: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    pub fn new(seed: u64, label: &str, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config(format!("sampler `{label}` over an empty dataset")));
        }
        let mut s = Sampler {
            seed,
            label: label.to_string(),
            len,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        let mut rng = seed::stream(self.seed, &format!("sampler/{}", self.label), self.epoch);
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Total indices drawn so far.
    pub fn drawn(&self) -> u64 {
        self.epoch * self.len as u64 + self.pos as u64
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next_index()).collect()
    }

    /// Fast-forwards to `drawn` total indices, as after a resume.
    pub fn skip_to(&mut self, drawn: u64) {
        self.epoch = drawn / self.len as u64;
        self.reshuffle();
        self.pos = (drawn % self.len as u64) as usize;
    }
}
