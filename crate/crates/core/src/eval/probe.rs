//! Frozen-encoder linear probe for base-cell classification.
//!
//! Features are the pooled pre-projection vectors `z`, z-scored with the
//! training split's statistics. A single softmax layer is fit full-batch with
//! AdamW for a fixed budget; the target is the argmax of the position label.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{crop_and_resize, make_base_grid, sample_random_crop, PositionLabel};
use crate::model::{Encoder, Param, Params};
use crate::optim::{AdamW, AdamWConfig};
use crate::volume::{generate_phantom, resize_volume, PhantomSpec, Shape3, Volume};
use crate::position_label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_train_volumes")]
    pub train_volumes: usize,
    #[serde(default = "default_eval_volumes")]
    pub eval_volumes: usize,
    #[serde(default = "default_crops")]
    pub crops_per_volume: usize,
    /// Probe phantoms use sample seeds from here on; must not meet pretraining seeds.
    #[serde(default = "default_first_seed")]
    pub first_seed: u64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_volumes() -> usize {
    12
}
fn default_eval_volumes() -> usize {
    6
}
fn default_crops() -> usize {
    48
}
fn default_first_seed() -> u64 {
    1_000_000
}
fn default_steps() -> u64 {
    200
}
fn default_lr() -> f64 {
    1e-2
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_volumes: default_train_volumes(),
            eval_volumes: default_eval_volumes(),
            crops_per_volume: default_crops(),
            first_seed: default_first_seed(),
            steps: default_steps(),
            lr: default_lr(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn sample_seeds(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + (self.train_volumes + self.eval_volumes) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1_accuracy: f64,
    /// NaN for classes absent from the evaluation split.
    pub per_class_accuracy: Vec<f64>,
    pub num_eval_crops: usize,
    pub chance_level: f64,
    /// Mean absolute error between the softmax output and the soft label.
    pub soft_mae: f64,
}

/// One crop: where it came from, its frozen features and its label.
#[derive(Debug, Clone)]
pub struct ProbeSample {
    pub volume_id: String,
    pub features: Vec<f64>,
    pub label: PositionLabel,
}

impl ProbeSample {
    pub fn class(&self) -> usize {
        self.label.argmax()
    }
}

/// Crops for the probe, split by volume.
#[derive(Debug, Clone)]
pub struct ProbeCrops {
    pub train: Vec<(Volume, Vec<crate::geometry::CropRegion>)>,
    pub eval: Vec<(Volume, Vec<crate::geometry::CropRegion>)>,
}

/// Geometry shared by pretraining and probing.
#[derive(Debug, Clone, Copy)]
pub struct ProbeGeometry {
    pub working_shape: Shape3,
    pub grid: Shape3,
    pub crop_size: Shape3,
    pub input_shape: Shape3,
}

/// Generates the probe phantoms (train split first) at the working shape.
pub fn probe_volumes(
    spec: &PhantomSpec,
    volume_shape: Shape3,
    working_shape: Shape3,
    config: &ProbeConfig,
) -> Result<Vec<Volume>, EvalError> {
    config
        .sample_seeds()
        .map(|s| {
            let v = generate_phantom(spec, s, volume_shape)?;
            Ok(resize_volume(&v, working_shape)?)
        })
        .collect()
}

/// Draws the probe crops once so several encoders can be compared on identical inputs.
pub fn draw_probe_crops(
    volumes: Vec<Volume>,
    num_train: usize,
    geometry: ProbeGeometry,
    config: &ProbeConfig,
) -> Result<ProbeCrops, EvalError> {
    if volumes.len() < 2 || num_train == 0 || num_train >= volumes.len() {
        return Err(EvalError::EmptyDataset(format!(
            "need at least one training and one evaluation volume, got {} volumes with {num_train} for training",
            volumes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut with_regions = Vec::with_capacity(volumes.len());
    for v in volumes {
        let regions = (0..config.crops_per_volume)
            .map(|_| sample_random_crop(geometry.working_shape, geometry.crop_size, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        with_regions.push((v, regions));
    }
    let eval = with_regions.split_off(num_train);
    Ok(ProbeCrops {
        train: with_regions,
        eval,
    })
}

fn embed_split(
    encoder: &Encoder<f32>,
    split: &[(Volume, Vec<crate::geometry::CropRegion>)],
    geometry: ProbeGeometry,
) -> Result<Vec<ProbeSample>, EvalError> {
    let grid = make_base_grid(geometry.working_shape, geometry.grid)?;
    let mut out = Vec::new();
    for (v, regions) in split {
        if v.shape() != geometry.working_shape {
            return Err(EvalError::Shape(format!(
                "volume {} has shape {:?}, expected {:?}",
                v.id(),
                v.shape(),
                geometry.working_shape
            )));
        }
        for r in regions {
            let crop = crop_and_resize(v, r, geometry.input_shape)?;
            let z = encoder.features(&crop)?;
            out.push(ProbeSample {
                volume_id: v.id().to_string(),
                features: z.iter().map(|&x| f64::from(x)).collect(),
                label: position_label(r, &grid)?,
            });
        }
    }
    Ok(out)
}

/// Fails when any evaluation volume id is also a pretraining id.
pub fn assert_disjoint<'a>(
    pretraining_ids: impl IntoIterator<Item = &'a str>,
    probe_ids: impl IntoIterator<Item = &'a str>,
) -> Result<(), EvalError> {
    let seen: BTreeSet<&str> = pretraining_ids.into_iter().collect();
    let shared: Vec<String> = probe_ids
        .into_iter()
        .filter(|id| seen.contains(id))
        .map(str::to_string)
        .collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Leak(shared))
    }
}

/// Runs the probe for `encoder` on pre-drawn crops.
pub fn linear_probe(
    encoder: &Encoder<f32>,
    crops: &ProbeCrops,
    geometry: ProbeGeometry,
    config: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    let train = embed_split(encoder, &crops.train, geometry)?;
    let eval = embed_split(encoder, &crops.eval, geometry)?;
    let n = geometry.grid.iter().product();
    fit_and_score(&train, &eval, n, config)
}

/// Per-feature mean and standard deviation of `x`; a zero deviation becomes 1.
pub fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x.first().map_or(0, Vec::len);
    let m = x.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v / m;
        }
    }
    let mut sd = vec![0.0; d];
    for row in x {
        for ((a, v), mu) in sd.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu) / m;
        }
    }
    for s in &mut sd {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

/// A fitted softmax layer over standardized features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Vec<f64>,
    sd: Vec<f64>,
    params: Params<f64>,
    classes: usize,
}

impl LinearProbe {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let w = &self.params.tensors[0].data;
        let b = &self.params.tensors[1].data;
        let d = self.mean.len();
        let xs: Vec<f64> = (0..d).map(|k| (x[k] - self.mean[k]) / self.sd[k]).collect();
        (0..self.classes)
            .map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Highest-probability class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for c in 1..l.len() {
            if l[c] > l[best] {
                best = c;
            }
        }
        best
    }
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Full-batch cross-entropy fit from zero weights.
pub fn fit_probe(
    x: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    config: &ProbeConfig,
) -> Result<LinearProbe, EvalError> {
    if x.is_empty() {
        return Err(EvalError::EmptyDataset("no training crops".into()));
    }
    let d = x[0].len();
    let (mean, sd) = standardizer(x);
    let mut probe = LinearProbe {
        mean,
        sd,
        params: Params {
            tensors: vec![
                Param {
                    name: "probe.weight".into(),
                    shape: vec![classes, d],
                    data: vec![0.0; classes * d],
                },
                Param {
                    name: "probe.bias".into(),
                    shape: vec![classes],
                    data: vec![0.0; classes],
                },
            ],
        },
        classes,
    };
    let mut opt = AdamW::new(AdamWConfig::default(), &probe.params);
    let scale = 1.0 / x.len() as f64;
    let standardized: Vec<Vec<f64>> = x
        .iter()
        .map(|row| (0..d).map(|k| (row[k] - probe.mean[k]) / probe.sd[k]).collect())
        .collect();
    for _ in 0..config.steps {
        let mut grads = probe.params.zeros_like();
        for (xs, &t) in standardized.iter().zip(labels) {
            let w = &probe.params.tensors[0].data;
            let b = &probe.params.tensors[1].data;
            let logits: Vec<f64> = (0..classes)
                .map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(xs).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let mut g = softmax(&logits);
            g[t] -= 1.0;
            let (gw, gb) = grads.tensors.split_at_mut(1);
            for c in 0..classes {
                let gc = g[c] * scale;
                gb[0].data[c] += gc;
                for (a, v) in gw[0].data[c * d..(c + 1) * d].iter_mut().zip(xs) {
                    *a += gc * v;
                }
            }
        }
        opt.step(&mut probe.params, &grads, config.lr);
    }
    Ok(probe)
}

/// Fits on `train`, scores on `eval`.
pub fn fit_and_score(
    train: &[ProbeSample],
    eval: &[ProbeSample],
    classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    if eval.is_empty() {
        return Err(EvalError::EmptyDataset("no evaluation crops".into()));
    }
    let x: Vec<Vec<f64>> = train.iter().map(|s| s.features.clone()).collect();
    let labels: Vec<usize> = train.iter().map(ProbeSample::class).collect();
    let probe = fit_probe(&x, &labels, classes, config)?;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    let mut abs_err = 0.0;
    for s in eval {
        let c = s.class();
        totals[c] += 1;
        if probe.predict(&s.features) == c {
            hits[c] += 1;
        }
        let p = probe.probabilities(&s.features);
        abs_err += p.iter().zip(s.label.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / classes as f64;
    }
    Ok(ProbeResult {
        top1_accuracy: hits.iter().sum::<usize>() as f64 / eval.len() as f64,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
            .collect(),
        num_eval_crops: eval.len(),
        chance_level: 1.0 / classes as f64,
        soft_mae: abs_err / eval.len() as f64,
    })
}

/// Replaces every label by an i.i.d. uniform one-hot label.
pub fn shuffle_labels<R: Rng + ?Sized>(samples: &mut [ProbeSample], classes: usize, rng: &mut R) {
    for s in samples {
        let mut y = vec![0.0; classes];
        y[rng.random_range(0..classes)] = 1.0;
        s.label = PositionLabel::from_values(y);
    }
}

/// Smallest `[lo, hi]` on the success count of Binomial(`trials`, `p`) with
/// at most `(1 - level) / 2` probability mass in each tail outside it.
pub fn binomial_interval(trials: usize, p: f64, level: f64) -> (usize, usize) {
    let tail = (1.0 - level) / 2.0;
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let mut ln_fact = vec![0.0f64; trials + 1];
    for k in 1..=trials {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let pmf: Vec<f64> = (0..=trials)
        .map(|k| {
            (ln_fact[trials] - ln_fact[k] - ln_fact[trials - k] + k as f64 * ln_p + (trials - k) as f64 * ln_q)
                .exp()
        })
        .collect();
    let mut lo = 0;
    let mut acc = 0.0;
    while lo < trials && acc + pmf[lo] <= tail {
        acc += pmf[lo];
        lo += 1;
    }
    let mut hi = trials;
    acc = 0.0;
    while hi > 0 && acc + pmf[hi] <= tail {
        acc += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}
