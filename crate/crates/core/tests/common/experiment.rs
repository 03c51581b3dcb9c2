//! Lock-step ablation runs.
//!
//! One seed trains several semantic variants and several depth variants on
//! the same batch stream. Every depth variant consumes the `G_s` of the full
//! semantic variant, so each (full semantic, depth variant) pair follows
//! exactly the trajectory of a separate `Trainer` run with that config.

#![allow(dead_code)]

use mtgan::data::{Dataset, SceneSpec};
use mtgan::eval::{evaluate_depth, evaluate_seg, DepthMetrics, Palette, SegMetrics};
use mtgan::train::{depth_step, semantic_step, BatchSource, DepthBranch, SemanticBranch, SmoothnessGuide, TrainConfig};
use mtgan::Result;

pub const TRAIN_SEED: u64 = 1;
pub const EVAL_SEED: u64 = 2;
pub const TRAIN_COUNT: usize = 256;
pub const EVAL_COUNT: usize = 64;

pub fn desk_datasets() -> (Dataset, Dataset) {
    let train = Dataset::generate(
        &SceneSpec {
            seed: TRAIN_SEED,
            ..SceneSpec::default()
        },
        TRAIN_COUNT,
    )
    .unwrap();
    let eval = Dataset::generate(
        &SceneSpec {
            seed: EVAL_SEED,
            ..SceneSpec::default()
        },
        EVAL_COUNT,
    )
    .unwrap();
    (train, eval)
}

pub type Variant = (&'static str, fn(&mut TrainConfig));

/// The first entry is the full configuration.
pub const SEMANTIC_VARIANTS: [Variant; 3] = [
    ("mssp+rec", |_| {}),
    ("mssp", |c| c.weights.lambda2 = 0.0),
    ("rec", |c| c.mssp = false),
];

/// The first entry is the full configuration.
pub const DEPTH_VARIANTS: [Variant; 3] = [
    ("full", |_| {}),
    ("rgb_smoothness", |c| c.smoothness_guide = SmoothnessGuide::Rgb),
    ("no_semantic_input", |c| c.use_semantic_input = false),
];

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub baseline_seg: SegMetrics,
    pub baseline_depth: DepthMetrics,
    /// Indexed like [`SEMANTIC_VARIANTS`].
    pub seg: Vec<SegMetrics>,
    /// Indexed like [`DEPTH_VARIANTS`].
    pub depth: Vec<DepthMetrics>,
    pub seconds: f64,
}

fn variant(base: &TrainConfig, v: &Variant) -> TrainConfig {
    let mut c = base.clone();
    (v.1)(&mut c);
    c
}

pub fn run_seed(base: &TrainConfig, train: &Dataset, eval: &Dataset, palette: &Palette) -> Result<SeedOutcome> {
    let start = std::time::Instant::now();
    let sem_cfgs: Vec<TrainConfig> = SEMANTIC_VARIANTS.iter().map(|v| variant(base, v)).collect();
    let depth_cfgs: Vec<TrainConfig> = DEPTH_VARIANTS.iter().map(|v| variant(base, v)).collect();
    let mut sem: Vec<SemanticBranch> = sem_cfgs.iter().map(SemanticBranch::new).collect::<Result<_>>()?;
    let mut depth: Vec<DepthBranch> = depth_cfgs.iter().map(DepthBranch::new).collect::<Result<_>>()?;

    let baseline_seg = evaluate_seg(&sem[0].gs.params, eval, palette, "eval")?.seg.unwrap();
    let baseline_depth = evaluate_depth(&sem[0].gs.params, &depth[0].gd.params, eval, true, "eval")?
        .depth
        .unwrap();

    let opt = &base.optimizer;
    let mut source = BatchSource::new(base.seed, opt.batch_size, train.len(), 0)?;
    for step in 0..base.steps {
        let epoch = ((step * opt.batch_size as u64) / train.len() as u64).min(opt.total_epochs() as u64);
        let lr = opt.lr(epoch as usize);
        let (sb, db) = source.next(train)?;
        for (br, cfg) in sem.iter_mut().zip(&sem_cfgs) {
            semantic_step(br, &sb, cfg, lr, step)?;
        }
        let gs = &mut sem[0].gs;
        for (br, cfg) in depth.iter_mut().zip(&depth_cfgs) {
            depth_step(br, gs, &db, cfg, &cfg.depth_options(), lr, step)?;
        }
    }

    let seg = sem
        .iter()
        .map(|b| Ok(evaluate_seg(&b.gs.params, eval, palette, "eval")?.seg.unwrap()))
        .collect::<Result<_>>()?;
    let depth = depth
        .iter()
        .zip(&depth_cfgs)
        .map(|(b, c)| {
            Ok(evaluate_depth(&sem[0].gs.params, &b.gd.params, eval, c.use_semantic_input, "eval")?
                .depth
                .unwrap())
        })
        .collect::<Result<_>>()?;
    Ok(SeedOutcome {
        seed: base.seed,
        baseline_seg,
        baseline_depth,
        seg,
        depth,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Lower-middle median.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}
