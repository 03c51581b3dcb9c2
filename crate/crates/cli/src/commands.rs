use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mtgan::data::{
    depth_tensor, generate_dataset, image_tensor, load_dataset, read_pgm16, read_ppm, tensor_depth_mm, tensor_image,
    write_pgm16, write_ppm, Image, SceneSpec,
};
use mtgan::eval::{align_palette, evaluate_depth, evaluate_seg, predict_depth, predict_semantic, MetricsReport, Palette};
use mtgan::train::{load_checkpoint, save_checkpoint, StepRecord, TrainConfig, Trainer, TrainerState};
use mtgan::{Error, Result};

use crate::config::{RunConfig, RESOLVED_FILE};
use crate::grid::sample_grid;
use crate::{Command, Direction, EvalDepthArgs, EvalSegArgs, GenDataArgs, InferArgs, TrainArgs};

pub const LOSSES_FILE: &str = "losses.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";
const GRID_ROWS: usize = 4;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::EvalSeg(a) => eval_seg(&a),
        Command::EvalDepth(a) => eval_depth(&a),
        Command::Infer(a) => infer(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SceneSpec {
        seed: a.seed,
        width: a.size.0,
        height: a.size.1,
        rho: a.rho,
        d_max_mm: a.dmax_mm,
        ..SceneSpec::default()
    };
    let m = generate_dataset(&a.out, &spec, a.count)?;
    info!("wrote {} samples of {}x{} to {}", m.count, m.width, m.height, a.out.display());
    Ok(())
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

pub fn grid_name(step: u64) -> String {
    format!("samples_{step:06}.ppm")
}

fn effective_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut rc = RunConfig::load(&a.config)?;
    let cwd = Path::new(".");
    if let Some(d) = &a.data {
        rc.data = Some(d.clone());
    }
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    if let Some(s) = a.steps {
        rc.train.steps = s;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        rc.set(k.trim(), v.trim(), cwd)?;
    }
    rc.resolve()?;
    Ok(rc)
}

/// Keys that may differ between a checkpoint and the config resuming it.
const RESUMABLE_KEYS: [&str; 3] = ["steps", "checkpoint_every", "sample_every"];

fn check_resumable(saved: &TrainConfig, wanted: &TrainConfig) -> Result<()> {
    let diff: Vec<String> = saved
        .entries()
        .into_iter()
        .zip(wanted.entries())
        .filter(|((k, a), (_, b))| a != b && !RESUMABLE_KEYS.contains(k))
        .map(|((k, a), (_, b))| format!("{k}: checkpoint {a}, config {b}"))
        .collect();
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::ModelMismatch(format!("resume config differs ({})", diff.join("; "))))
    }
}

/// Keeps the header and the rows up to `step`; starts a fresh file if none exists.
fn open_losses(path: &Path, step: u64) -> Result<fs::File> {
    let header = StepRecord::csv_header();
    let mut text = format!("{header}\n");
    if step > 0 {
        match fs::read_to_string(path) {
            Ok(old) => {
                for line in old.lines().skip(1) {
                    let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                    if row_step.is_some_and(|s| s <= step) {
                        text.push_str(line);
                        text.push('\n');
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    write_text(path, &text)?;
    fs::OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let rc = effective_config(a)?;
    let data = load_dataset(rc.data_dir()?)?;
    let state = match &a.resume {
        Some(p) => {
            let mut s = load_checkpoint(p)?;
            check_resumable(&s.config, &rc.train)?;
            s.config = rc.train.clone();
            info!("resuming {} at step {}", p.display(), s.step);
            s
        }
        None => TrainerState::new(rc.train.clone())?,
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join(RESOLVED_FILE), &rc.to_text())?;
    let losses_path = a.out.join(LOSSES_FILE);
    let mut losses = open_losses(&losses_path, state.step)?;

    let cfg = rc.train;
    let mut trainer = Trainer::new(state, &data)?;
    while trainer.state.step < cfg.steps {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                let path = a.out.join(LAST_GOOD_CHECKPOINT);
                save_checkpoint(&trainer.state, &path)?;
                warn!("aborting at step {}; kept {}", trainer.state.step + 1, path.display());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(losses, "{}", rec.csv_row()).map_err(|e| Error::io(&losses_path, e))?;
        let step = rec.step;
        if step % 10 == 0 || step == cfg.steps {
            info!(
                "step {step}/{} lr {:.2e} semantic cyc {:.4} depth cyc {:.4} depth {:.4}",
                cfg.steps, rec.lr, rec.semantic["cyc"], rec.depth["cyc"], rec.depth["depth"]
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save_checkpoint(&trainer.state, &a.out.join(checkpoint_name(step)))?;
        }
        if cfg.sample_every > 0 && step % cfg.sample_every == 0 {
            write_ppm(&a.out.join(grid_name(step)), &sample_grid(&trainer.state, &data, GRID_ROWS)?)?;
        }
    }
    let path = a.out.join(FINAL_CHECKPOINT);
    save_checkpoint(&trainer.state, &path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn load_palette(path: &Option<PathBuf>) -> Result<Palette> {
    match path {
        Some(p) => Palette::load(p),
        None => Ok(Palette::cityscapes()),
    }
}

fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write_text(path, &report.to_csv())?;
    info!("{}", report.csv_row());
    Ok(())
}

pub fn eval_seg(a: &EvalSegArgs) -> Result<()> {
    if a.direction == Direction::LabelToImage {
        return Err(Error::Config(
            "label2image evaluation is out of scope: scoring generated images needs a pretrained segmentation network"
                .into(),
        ));
    }
    let palette = load_palette(&a.palette)?;
    let state = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate_seg(&state.semantic.gs.params, &data, &palette, "eval")?;
    write_report(&a.out, &report)
}

pub fn eval_depth(a: &EvalDepthArgs) -> Result<()> {
    let state = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate_depth(
        &state.semantic.gs.params,
        &state.depth.gd.params,
        &data,
        state.config.use_semantic_input,
        "eval",
    )?;
    write_report(&a.out, &report)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    if !(a.dmax_mm > 0.0 && a.dmax_mm <= u16::MAX as f32) {
        return Err(Error::Config(format!("dmax_mm {} out of range", a.dmax_mm)));
    }
    let palette = load_palette(&a.palette)?;
    let state = load_checkpoint(&a.ckpt)?;
    let rgb = read_ppm(&a.rgb)?;
    let sparse = read_pgm16(&a.sparse)?;
    if (rgb.width, rgb.height) != (sparse.width, sparse.height) {
        return Err(Error::Format {
            path: a.sparse.clone(),
            msg: format!(
                "size {}x{} differs from the RGB image {}x{}",
                sparse.width, sparse.height, rgb.width, rgb.height
            ),
        });
    }
    let rgb_t = image_tensor(&rgb);
    let (sparse_t, _) = depth_tensor(&sparse, a.dmax_mm);
    let gs = &state.semantic.gs.params;
    let semantic = predict_semantic(gs, &rgb_t)?;
    let dense = predict_depth(gs, &state.depth.gd.params, &rgb_t, &sparse_t, state.config.use_semantic_input)?;

    let labels = align_palette(&tensor_image(&semantic, 0)?, &palette)?;
    let colors = labels
        .data
        .iter()
        .flat_map(|&id| palette.color(id).expect("aligned ids are palette ids"))
        .collect();
    let sem_img = Image::from_data(rgb.width, rgb.height, 3, colors)?;
    let mm = tensor_depth_mm(&dense, 0, a.dmax_mm)?
        .into_iter()
        .map(|v| {
            if v.is_finite() {
                Ok(v.round().clamp(1.0, u16::MAX as f32) as u16)
            } else {
                Err(Error::NonFinite("dense depth".into()))
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    let dense_img = Image::from_data(rgb.width, rgb.height, 1, mm)?;

    let prefix = a.out.as_os_str().to_string_lossy();
    let sem_path = PathBuf::from(format!("{prefix}_sem.ppm"));
    let dense_path = PathBuf::from(format!("{prefix}_dense.pgm"));
    write_ppm(&sem_path, &sem_img)?;
    write_pgm16(&dense_path, &dense_img)?;
    info!("wrote {} and {}", sem_path.display(), dense_path.display());
    Ok(())
}
