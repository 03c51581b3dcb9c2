use std::fmt::Write as _;

use super::step::{depth_step, semantic_step, Breakdown, DepthBatch, DepthBranch, SemanticBatch, SemanticBranch};
use super::{TrainConfig, DEPTH_KEYS, SEMANTIC_KEYS};
use crate::data::{Dataset, Sampler};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column order of `losses.csv`.
pub const LOSS_COLUMNS: [&str; 16] = [
    "step", "lr", "gan_G_s", "gan_F_s", "cyc_s", "rec_s", "d_X1", "d_Y1", "gan_G_d", "gan_F_d", "cyc_d", "rec_d",
    "depth", "smooth", "d_X2", "d_Y2",
];

/// All eight networks with their optimizer moments, buffers and counters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub semantic: SemanticBranch,
    pub depth: DepthBranch,
    pub epoch: u32,
    pub step: u64,
}

impl TrainerState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(TrainerState {
            semantic: SemanticBranch::new(&config)?,
            depth: DepthBranch::new(&config)?,
            config,
            epoch: 0,
            step: 0,
        })
    }

    /// Networks in checkpoint order.
    pub fn nets(&self) -> [(&'static str, &super::Net); 8] {
        [
            ("G_s", &self.semantic.gs),
            ("F_s", &self.semantic.fs),
            ("D_X1", &self.semantic.dx),
            ("D_Y1", &self.semantic.dy),
            ("G_d", &self.depth.gd),
            ("F_d", &self.depth.fd),
            ("D_X2", &self.depth.dx),
            ("D_Y2", &self.depth.dy),
        ]
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

/// Draws unpaired batches: RGB and semantic images for the semantic branch
/// from two independent shuffles, paired RGB/sparse inputs and unpaired dense
/// targets for the depth branch from two more.
#[derive(Clone, Debug)]
pub struct BatchSource {
    batch: usize,
    x: Sampler,
    y_s: Sampler,
    x_d: Sampler,
    y_d: Sampler,
}

fn stack(idx: &[usize], pick: impl Fn(usize) -> Tensor) -> Result<Tensor> {
    Tensor::stack(&idx.iter().map(|&i| pick(i)).collect::<Vec<_>>())
}

impl BatchSource {
    /// Positioned as after `step` outer steps.
    pub fn new(seed: u64, batch: usize, len: usize, step: u64) -> Result<Self> {
        let mut s = BatchSource {
            batch,
            x: Sampler::new(seed, "x", len)?,
            y_s: Sampler::new(seed, "y_s", len)?,
            x_d: Sampler::new(seed, "x_d", len)?,
            y_d: Sampler::new(seed, "y_d", len)?,
        };
        let drawn = step * batch as u64;
        for smp in [&mut s.x, &mut s.y_s, &mut s.x_d, &mut s.y_d] {
            smp.skip_to(drawn);
        }
        Ok(s)
    }

    pub fn next(&mut self, data: &Dataset) -> Result<(SemanticBatch, DepthBatch)> {
        let t = &data.tensors;
        let x = self.x.next_batch(self.batch);
        let y = self.y_s.next_batch(self.batch);
        let xd = self.x_d.next_batch(self.batch);
        let yd = self.y_d.next_batch(self.batch);
        Ok((
            SemanticBatch {
                x: stack(&x, |i| t[i].rgb.clone())?,
                y: stack(&y, |i| t[i].semantic.clone())?,
            },
            DepthBatch {
                rgb: stack(&xd, |i| t[i].rgb.clone())?,
                sparse: stack(&xd, |i| t[i].sparse.clone())?,
                sparse_mask: stack(&xd, |i| t[i].sparse_mask.clone())?,
                dense: stack(&yd, |i| t[i].dense.clone())?,
            },
        ))
    }
}

/// Losses of one outer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Outer steps completed, counting this one.
    pub step: u64,
    pub lr: f32,
    pub semantic: Breakdown,
    pub depth: Breakdown,
}

impl StepRecord {
    pub fn csv_header() -> String {
        LOSS_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.step, self.lr);
        for k in SEMANTIC_KEYS {
            let _ = write!(s, ",{}", self.semantic[k]);
        }
        for k in DEPTH_KEYS {
            let _ = write!(s, ",{}", self.depth[k]);
        }
        s
    }
}

/// Runs outer steps over an in-memory dataset.
pub struct Trainer<'d> {
    pub state: TrainerState,
    data: &'d Dataset,
    source: BatchSource,
}

impl<'d> Trainer<'d> {
    pub fn new(state: TrainerState, data: &'d Dataset) -> Result<Self> {
        let b = state.config.optimizer.batch_size;
        let source = BatchSource::new(state.seed(), b, data.len(), state.step)?;
        if (data.manifest.width % 4, data.manifest.height % 4) != (0, 0) {
            return Err(Error::Config(format!(
                "image size {}x{} must be a multiple of 4",
                data.manifest.width, data.manifest.height
            )));
        }
        Ok(Trainer { state, data, source })
    }

    pub fn epoch_of(&self, step: u64) -> u32 {
        let b = self.state.config.optimizer.batch_size as u64;
        let total = self.state.config.optimizer.total_epochs() as u64;
        ((step * b) / self.data.len() as u64).min(total) as u32
    }

    /// One semantic step followed by one depth step on the updated `G_s`.
    /// On error the trainer is left exactly as before the call.
    pub fn step(&mut self) -> Result<StepRecord> {
        let s = &self.state;
        let cfg = &s.config;
        let lr = cfg.optimizer.lr(s.epoch as usize);
        let mut source = self.source.clone();
        let (sem_batch, depth_batch) = source.next(self.data)?;
        let mut semantic = s.semantic.clone();
        let mut depth = s.depth.clone();
        let sem = semantic_step(&mut semantic, &sem_batch, cfg, lr, s.step)?;
        let dep = depth_step(&mut depth, &mut semantic.gs, &depth_batch, cfg, &cfg.depth_options(), lr, s.step)?;
        self.state.semantic = semantic;
        self.state.depth = depth;
        self.state.step += 1;
        self.state.epoch = self.epoch_of(self.state.step);
        self.source = source;
        Ok(StepRecord {
            step: self.state.step,
            lr,
            semantic: sem,
            depth: dep,
        })
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }
}
