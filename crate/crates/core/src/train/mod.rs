//! Deterministic pretraining loop.
//!
//! One step: pick `batch_volumes` volumes, augment each (flips and quarter
//! turns about z, before tiling), tile into the base grid, embed the bases
//! once, sample `crops_per_volume` random crops with their position labels,
//! evaluate the objective averaged over crops and volumes, and apply one
//! AdamW update at the scheduled rate.

mod checkpoint;
mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, Manifest, RngState, TensorEntry, CHECKPOINT_MAGIC,
};
pub use config::{ConfigError, DataConfig, TrainConfig};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    crop_and_resize, make_base_grid, position_label, sample_random_crop, GeometryError,
    PositionLabel,
};
use crate::loss::{volume_loss, LossError, VolumeLoss};
use crate::model::{Encoder, ModelError, Params};
use crate::optim::AdamW;
use crate::real::Real;
use crate::schedule::lr_at;
use crate::volume::{
    generate_phantom, read_volume, resize_volume, PhantomError, Volume, VolumeError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step}: {source} ({diagnostics})")]
    Loss {
        step: u64,
        source: LossError,
        diagnostics: String,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("no volumes found in {0}")]
    EmptyDataset(PathBuf),
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 0-based index of the update.
    pub step: u64,
    pub lr: f64,
    pub l_pred: f64,
    pub l_reg: f64,
    pub l_total: f64,
    pub mean_abs_s: f64,
    pub max_l: f64,
    pub min_l: f64,
    pub wall_ms: u64,
}

impl StepRecord {
    pub const LOSS_CSV_HEADER: &'static str = "step,lr,L_pred,L_reg,L_total,mean_abs_s,wall_ms";
    pub const DIAG_CSV_HEADER: &'static str = "step,L_pred,L_reg,L_total,mean_abs_s,max_l,min_l";

    pub fn loss_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lr, self.l_pred, self.l_reg, self.l_total, self.mean_abs_s, self.wall_ms
        )
    }

    pub fn diag_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.l_pred, self.l_reg, self.l_total, self.mean_abs_s, self.max_l, self.min_l
        )
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Number of completed updates.
    pub step: u64,
    pub encoder: Encoder<f32>,
    pub optimizer: AdamW<f32>,
    pub rng: ChaCha8Rng,
    pub history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        let encoder = Encoder::new(config.encoder.clone())?;
        let optimizer = AdamW::new(config.optimizer(), encoder.params());
        Ok(Self {
            step: 0,
            optimizer,
            encoder,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: Vec::new(),
        })
    }
}

/// Inputs of the objective for one volume, already resized to the encoder input.
#[derive(Debug, Clone)]
pub struct VolumeExample {
    pub bases: Vec<Volume>,
    pub crops: Vec<Volume>,
    pub labels: Vec<PositionLabel>,
}

/// Random flips on each axis and a quarter-turn count about z. Odd turns
/// are only drawn for square in-plane shapes so the working shape is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub flips: [bool; 3],
    pub quarter_turns: u8,
}

impl Augmentation {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, shape: [usize; 3]) -> Self {
        let flips = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        let quarter_turns = if shape[0] == shape[1] {
            rng.random_range(0..4u8)
        } else {
            2 * rng.random_range(0..2u8)
        };
        Self { flips, quarter_turns }
    }

    pub fn apply(&self, v: &Volume) -> Volume {
        let mut out = v.rotated_z(self.quarter_turns);
        for axis in 0..3 {
            if self.flips[axis] {
                out = out.flipped(axis);
            }
        }
        out
    }
}

/// Loads (or synthesizes) the pretraining volumes and resizes them to the working shape.
pub fn load_dataset(config: &TrainConfig) -> Result<Vec<Volume>, TrainError> {
    let raw = match &config.data.dir {
        Some(dir) => read_volume_dir(dir)?,
        None => config
            .data
            .sample_seeds()
            .map(|s| generate_phantom(&config.data.phantom, s, config.data.volume_shape))
            .collect::<Result<Vec<_>, _>>()?,
    };
    raw.iter()
        .map(|v| Ok(resize_volume(v, config.working_shape)?))
        .collect()
}

/// All `.vol1` files in `dir`, sorted by file name.
pub fn read_volume_dir(dir: &Path) -> Result<Vec<Volume>, TrainError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vol1"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(TrainError::EmptyDataset(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| Ok(read_volume(p)?))
        .collect()
}

/// Augments a working-shape volume, tiles it and draws random crops.
pub fn prepare_volume<R: Rng + ?Sized>(
    volume: &Volume,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<VolumeExample, TrainError> {
    let volume = if config.augment {
        Augmentation::sample(rng, volume.shape()).apply(volume)
    } else {
        volume.clone()
    };
    let input = config.encoder.input_shape;
    let grid = make_base_grid(volume.shape(), config.grid)?;
    let bases = grid
        .cells()
        .iter()
        .map(|c| crop_and_resize(&volume, c, input))
        .collect::<Result<Vec<_>, _>>()?;
    let mut crops = Vec::with_capacity(config.crops_per_volume);
    let mut labels = Vec::with_capacity(config.crops_per_volume);
    for _ in 0..config.crops_per_volume {
        let region = sample_random_crop(volume.shape(), config.effective_crop_size(), rng)?;
        labels.push(position_label(&region, &grid)?);
        crops.push(crop_and_resize(&volume, &region, input)?);
    }
    Ok(VolumeExample {
        bases,
        crops,
        labels,
    })
}

/// Evaluates the objective on one volume and accumulates `scale * dL/dparams`
/// into `grads`. The bases enter the prediction branch as constants.
pub fn volume_objective<T: Real>(
    encoder: &Encoder<T>,
    example: &VolumeExample,
    lambda: T,
    scale: T,
    grads: &mut Params<T>,
) -> Result<VolumeLoss<T>, TrainError> {
    let mut base_fwd = Vec::with_capacity(example.bases.len());
    for b in &example.bases {
        base_fwd.push(encoder.forward(b)?);
    }
    let mut crop_fwd = Vec::with_capacity(example.crops.len());
    for c in &example.crops {
        crop_fwd.push(encoder.forward(c)?);
    }
    let q: Vec<Vec<T>> = base_fwd.iter().map(|(e, _)| e.p.clone()).collect();
    let ps: Vec<Vec<T>> = crop_fwd.iter().map(|(e, _)| e.p.clone()).collect();
    let ys: Vec<Vec<T>> = example
        .labels
        .iter()
        .map(|y| y.values().iter().map(|&v| T::of(v)).collect())
        .collect();
    let (loss, g) = volume_loss(&ps, &q, &ys, lambda).map_err(|source| TrainError::Loss {
        step: 0,
        source,
        diagnostics: String::new(),
    })?;
    let scaled = |v: &[T]| v.iter().map(|&x| x * scale).collect::<Vec<T>>();
    for ((_, cache), dp) in crop_fwd.iter().zip(&g.dp) {
        encoder.backward(cache, &scaled(dp), None, grads);
    }
    for ((_, cache), dq) in base_fwd.iter().zip(&g.dq_regularization) {
        encoder.backward(cache, &scaled(dq), None, grads);
    }
    Ok(loss)
}

/// One optimization step on `batch` (volumes already at the working shape).
pub fn train_step(
    state: &mut TrainState,
    config: &TrainConfig,
    batch: &[Volume],
) -> Result<StepRecord, TrainError> {
    let started = Instant::now();
    let step = state.step;
    let mut grads = state.encoder.params().zeros_like();
    let scale = 1.0 / batch.len() as f32;
    let (mut l_pred, mut l_reg, mut l_total, mut mean_abs_s) = (0.0, 0.0, 0.0, 0.0);
    let (mut max_l, mut min_l) = (f64::NEG_INFINITY, f64::INFINITY);
    for volume in batch {
        let example = prepare_volume(volume, config, &mut state.rng)?;
        let loss = volume_objective(&state.encoder, &example, config.lambda as f32, scale, &mut grads)
            .map_err(|e| match e {
                TrainError::Loss { source, .. } => TrainError::Loss {
                    step,
                    source,
                    diagnostics: format!("volume {}, lr {:e}", volume.id(), lr_at(step + 1, config.warmup_steps, config.steps, config.base_lr)),
                },
                other => other,
            })?;
        l_pred += f64::from(loss.l_pred);
        l_reg += f64::from(loss.l_reg);
        l_total += f64::from(loss.l_total);
        mean_abs_s += f64::from(loss.mean_abs_s);
        for r in &loss.crops {
            max_l = max_l.max(f64::from(r.max_l()));
            min_l = min_l.min(f64::from(r.min_l()));
        }
    }
    let lr = lr_at(step + 1, config.warmup_steps, config.steps, config.base_lr);
    state.optimizer.step(state.encoder.params_mut(), &grads, lr);
    state.step += 1;
    let b = batch.len() as f64;
    let record = StepRecord {
        step,
        lr,
        l_pred: l_pred / b,
        l_reg: l_reg / b,
        l_total: l_total / b,
        mean_abs_s: mean_abs_s / b,
        max_l,
        min_l,
        wall_ms: if config.deterministic {
            0
        } else {
            started.elapsed().as_millis() as u64
        },
    };
    state.history.push(record.clone());
    Ok(record)
}

/// Draws the volumes for the next step.
pub fn select_batch<'a>(
    rng: &mut ChaCha8Rng,
    dataset: &'a [Volume],
    batch_volumes: usize,
) -> Vec<&'a Volume> {
    (0..batch_volumes)
        .map(|_| &dataset[rng.random_range(0..dataset.len())])
        .collect()
}

/// Trajectory-affecting part of a config (logging and probe settings cleared).
fn trajectory_key(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        checkpoint_every: 0,
        deterministic: false,
        probe: Default::default(),
        ..config.clone()
    }
}

#[derive(Debug)]
pub enum RunOutcome {
    Completed(TrainState),
    /// The resumed checkpoint had already reached `steps`.
    AlreadyComplete(TrainState),
}

impl RunOutcome {
    pub fn state(&self) -> &TrainState {
        match self {
            RunOutcome::Completed(s) | RunOutcome::AlreadyComplete(s) => s,
        }
    }

    pub fn into_state(self) -> TrainState {
        match self {
            RunOutcome::Completed(s) | RunOutcome::AlreadyComplete(s) => s,
        }
    }
}

pub const LOSS_CSV: &str = "loss.csv";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const FINAL_CHECKPOINT: &str = "final.vck";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step-{step:06}.vck"))
}

fn write_atomic(path: &Path, text: &str) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `loss.csv` and `diagnostics.csv` for the full history.
pub fn write_logs(out_dir: &Path, history: &[StepRecord]) -> Result<(), TrainError> {
    let mut loss = String::from(StepRecord::LOSS_CSV_HEADER);
    let mut diag = String::from(StepRecord::DIAG_CSV_HEADER);
    loss.push('\n');
    diag.push('\n');
    for r in history {
        loss.push_str(&r.loss_csv_row());
        loss.push('\n');
        diag.push_str(&r.diag_csv_row());
        diag.push('\n');
    }
    write_atomic(&out_dir.join(LOSS_CSV), &loss)?;
    write_atomic(&out_dir.join(DIAGNOSTICS_CSV), &diag)
}

/// Trains to `config.steps`, writing logs and checkpoints under `out_dir`.
/// With `resume`, continues from that checkpoint; the trajectory is the same
/// as an uninterrupted run.
pub fn run(
    config: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunOutcome, TrainError> {
    config.validate()?;
    fs::create_dir_all(out_dir.join("checkpoints")).map_err(io_err(out_dir))?;
    let mut state = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if trajectory_key(&ckpt.config) != trajectory_key(config) {
                return Err(TrainError::ResumeMismatch(format!(
                    "checkpoint {} was written with a different configuration",
                    path.display()
                )));
            }
            if ckpt.state.step >= config.steps {
                return Ok(RunOutcome::AlreadyComplete(ckpt.state));
            }
            ckpt.state
        }
        None => TrainState::new(config)?,
    };
    let dataset = load_dataset(config)?;
    while state.step < config.steps {
        let batch: Vec<Volume> = select_batch(&mut state.rng, &dataset, config.batch_volumes)
            .into_iter()
            .cloned()
            .collect();
        let record = train_step(&mut state, config, &batch)?;
        on_step(&record);
        if config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 {
            save_checkpoint(&state, config, checkpoint_path(out_dir, state.step))?;
            write_logs(out_dir, &state.history)?;
        }
    }
    write_logs(out_dir, &state.history)?;
    save_checkpoint(&state, config, out_dir.join(FINAL_CHECKPOINT))?;
    Ok(RunOutcome::Completed(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;
    use crate::volume::PhantomSpec;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            steps: 6,
            warmup_steps: 2,
            base_lr: 1e-3,
            weight_decay: 1e-2,
            batch_volumes: 2,
            crops_per_volume: 2,
            grid: [2, 2, 1],
            lambda: 1.0,
            seed: 5,
            deterministic: true,
            checkpoint_every: 3,
            working_shape: [16, 16, 8],
            crop_size: None,
            augment: true,
            encoder: EncoderConfig {
                channels_per_stage: vec![4, 8],
                num_stages: 2,
                feature_dim: 8,
                projector_dims: vec![8, 8],
                projector_bias: true,
                input_shape: [8, 8, 8],
                seed: 1,
            },
            data: DataConfig {
                dir: None,
                num_volumes: 3,
                volume_shape: [16, 16, 8],
                first_seed: 0,
                phantom: PhantomSpec::toy(),
            },
            probe: Default::default(),
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let config = TrainConfig {
            base_lr: 0.0,
            ..tiny_config()
        };
        let data = load_dataset(&config).unwrap();
        let mut state = TrainState::new(&config).unwrap();
        let before = state.encoder.params().clone();
        let mut replay = state.rng.clone();
        let r1 = train_step(&mut state, &config, &data[..1]).unwrap();
        assert_eq!(state.encoder.params(), &before);
        // same crops, same frozen weights => same loss
        let mut again = TrainState::new(&config).unwrap();
        std::mem::swap(&mut again.rng, &mut replay);
        let r2 = train_step(&mut again, &config, &data[..1]).unwrap();
        assert_eq!(r1.l_total, r2.l_total);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let config = tiny_config();
        let data = load_dataset(&config).unwrap();
        let mut state = TrainState::new(&config).unwrap();
        train_step(&mut state, &config, &data[..2]).unwrap();
        let bytes = encode_checkpoint(&state, &config);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back.state.step, 1);
        assert_eq!(back.state.encoder.params(), state.encoder.params());
        assert_eq!(back.state.optimizer, state.optimizer);
        assert_eq!(back.state.history, state.history);
        assert_eq!(back.state.rng, state.rng);
    }

    #[test]
    fn corrupted_checkpoints_fail_distinctly() {
        let config = tiny_config();
        let state = TrainState::new(&config).unwrap();
        let good = encode_checkpoint(&state, &config);

        let mut magic = good.clone();
        magic[1] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(CheckpointError::BadMagic(_))));

        let mut manifest = good.clone();
        manifest[16] = b'[';
        assert!(matches!(decode_checkpoint(&manifest), Err(CheckpointError::Manifest(_))));

        assert!(matches!(
            decode_checkpoint(&good[..good.len() - 8]),
            Err(CheckpointError::Truncated(_))
        ));

        let mut flipped = good.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(matches!(decode_checkpoint(&flipped), Err(CheckpointError::Checksum { .. })));

        let mut version = good;
        version[4] = 9;
        assert!(matches!(
            decode_checkpoint(&version),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn resume_reproduces_trajectory() {
        let config = tiny_config();
        let full_dir = tempfile::tempdir().unwrap();
        let full = run(&config, full_dir.path(), None, |_| {}).unwrap().into_state();

        let part_dir = tempfile::tempdir().unwrap();
        let first = TrainConfig { steps: 6, ..config.clone() };
        // stop early by hand: run 3 steps and checkpoint via checkpoint_every = 3
        let mut state = TrainState::new(&first).unwrap();
        let data = load_dataset(&first).unwrap();
        for _ in 0..3 {
            let batch: Vec<Volume> = select_batch(&mut state.rng, &data, first.batch_volumes)
                .into_iter()
                .cloned()
                .collect();
            train_step(&mut state, &first, &batch).unwrap();
        }
        let ckpt = part_dir.path().join("mid.vck");
        save_checkpoint(&state, &first, &ckpt).unwrap();
        let resumed = run(&config, part_dir.path(), Some(&ckpt), |_| {}).unwrap().into_state();
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.encoder.params(), full.encoder.params());
        assert_eq!(
            fs::read(full_dir.path().join(LOSS_CSV)).unwrap(),
            fs::read(part_dir.path().join(LOSS_CSV)).unwrap()
        );
        assert!(checkpoint_path(full_dir.path(), 3).exists());

        let again = run(&config, part_dir.path(), Some(&part_dir.path().join(FINAL_CHECKPOINT)), |_| {}).unwrap();
        assert!(matches!(again, RunOutcome::AlreadyComplete(_)));

        let other = TrainConfig { lambda: 0.5, ..config };
        assert!(matches!(
            run(&other, part_dir.path(), Some(&ckpt), |_| {}),
            Err(TrainError::ResumeMismatch(_))
        ));
    }

    #[test]
    fn augmentation_keeps_square_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = Volume::from_fn([6, 6, 2], "v", |x, y, z| (x + 6 * y + 36 * z) as f32).unwrap();
        for _ in 0..20 {
            let a = Augmentation::sample(&mut rng, v.shape());
            assert_eq!(a.apply(&v).shape(), [6, 6, 2]);
        }
        let rect = [8, 6, 2];
        for _ in 0..20 {
            assert_eq!(Augmentation::sample(&mut rng, rect).quarter_turns % 2, 0);
        }
    }
}
