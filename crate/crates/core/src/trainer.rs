//! Training loop: per-example combination sampling, batch assembly from
//! random crops, Adam updates, checkpoints and a metrics log.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph};
use crate::colorspace::{rgb_to_lab, RgbImage};
use crate::error::{Error, Result};
use crate::hints::{make_training_example_with, Combination, TrainingExample};
use crate::losses::{total_term, LossBreakdown, LossConfig};
use crate::network::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Side of the square training crops; a multiple of 8.
    pub crop_size: usize,
    /// Probabilities of `none`, `global`, `local`, `both`.
    pub combination_probs: [f64; 4],
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub base_channels: usize,
    #[serde(flatten)]
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            iterations: 40_000,
            learning_rate: 1e-4,
            seed: 0,
            crop_size: 64,
            combination_probs: [0.25; 4],
            checkpoint_every: 1000,
            base_channels: 8,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!("crop_size {} must be a positive multiple of 8", self.crop_size)));
        }
        if self.combination_probs.iter().any(|&p| p < 0.0) || (self.combination_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "combination_probs {:?} must be non-negative and sum to 1",
                self.combination_probs
            )));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        self.loss.validate()?;
        self.model_config()?;
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.base_channels, self.crop_size, self.crop_size)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Draws a combination according to `probs` (`none`, `global`, `local`,
/// `both`).
pub fn sample_combination<R: Rng + ?Sized>(rng: &mut R, probs: &[f64; 4]) -> Combination {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in Combination::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *c;
        }
    }
    // rounding left a sliver above the cumulative sum
    *Combination::ALL.iter().zip(probs).rev().find(|(_, &p)| p > 0.0).map(|(c, _)| c).unwrap_or(&Combination::None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Model<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.value.dims())).collect();
        Adam { first: zeros.clone(), second: zeros, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one bias-corrected update from the gradients stored in the
    /// model's parameters.
    pub fn step(&mut self, model: &mut Model<T>, learning_rate: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let correct1 = T::lit(1.0 - ADAM_BETA1.powi(t));
        let correct2 = T::lit(1.0 - ADAM_BETA2.powi(t));
        let (lr, eps) = (T::lit(learning_rate), T::lit(ADAM_EPSILON));
        for ((p, m), v) in model.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub optimizer: Adam<T>,
    pub iteration: u64,
    pub seed: u64,
    pub loss_history: Vec<LossBreakdown>,
    /// Examples drawn per combination, indexed like [`Combination::ALL`].
    pub combination_counts: [u64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainerMeta {
    iteration: u64,
    seed: u64,
    combination_counts: [u64; 4],
    adam_steps: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.model_config()?, config.seed)?;
        Ok(Self::from_model(model, config.seed))
    }

    pub fn from_model(model: Model<T>, seed: u64) -> Self {
        let optimizer = Adam::new(&model);
        TrainState { model, optimizer, iteration: 0, seed, loss_history: Vec::new(), combination_counts: [0; 4] }
    }

    /// Checkpoint bytes carrying the optimizer moments and loop position.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut aux = Vec::new();
        for ((p, m), v) in self.model.params().iter().zip(&self.optimizer.first).zip(&self.optimizer.second) {
            aux.push((format!("adam.m/{}", p.name), m.clone()));
            aux.push((format!("adam.v/{}", p.name), v.clone()));
        }
        let meta = TrainerMeta {
            iteration: self.iteration,
            seed: self.seed,
            combination_counts: self.combination_counts,
            adam_steps: self.optimizer.steps,
        };
        self.model.to_checkpoint_bytes(&aux, Some(serde_json::to_value(meta)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Restores a state written by [`TrainState::save`]. A plain model
    /// checkpoint starts a fresh optimizer. The loss history is not stored.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (model, aux, manifest) = Model::<T>::from_checkpoint_bytes(bytes)?;
        let Some(meta) = manifest.trainer else {
            return Ok(Self::from_model(model, 0));
        };
        let meta: TrainerMeta = serde_json::from_value(meta)?;
        let mut optimizer = Adam::new(&model);
        optimizer.steps = meta.adam_steps;
        for (i, p) in model.params().iter().enumerate() {
            for (prefix, slot) in [("adam.m/", &mut optimizer.first[i]), ("adam.v/", &mut optimizer.second[i])] {
                let name = format!("{prefix}{}", p.name);
                let (_, t) = aux
                    .iter()
                    .find(|(n, _)| *n == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor `{name}`")))?;
                *slot = t.clone();
            }
        }
        Ok(TrainState {
            model,
            optimizer,
            iteration: meta.iteration,
            seed: meta.seed,
            loss_history: Vec::new(),
            combination_counts: meta.combination_counts,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Loss and parameter gradients of one example.
pub fn example_gradients<T: Scalar>(
    model: &Model<T>,
    example: &TrainingExample,
    loss: &LossConfig,
) -> Result<(LossBreakdown, Gradients<T>)> {
    let mut g = Graph::new();
    let (w, h) = (example.width(), example.height());
    let fwd = model.forward(&mut g, w, h, &example.luminance, &example.global, &example.local)?;
    let vars = total_term(&mut g, fwd.output, &example.target, &example.kcolor, &example.local, loss)?;
    let back = g.backward(vars.total)?;
    Ok((vars.breakdown(&g), back.into_params()))
}

/// One Adam step on the mean loss over `batch`.
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, batch: &[TrainingExample], cfg: &TrainConfig) -> Result<LossBreakdown> {
    let first = batch.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    if batch.iter().any(|e| e.width() != first.width() || e.height() != first.height()) {
        return Err(Error::InvalidArgument("batch examples must share one size".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut mean = LossBreakdown::default();
    let mut total: Option<Gradients<T>> = None;
    for example in batch {
        let (loss, grads) = example_gradients(&state.model, example, &cfg.loss)?;
        mean.add_scaled(&loss, scale);
        match &mut total {
            Some(acc) => acc.merge(grads),
            None => total = Some(grads),
        }
    }
    let grads = total.expect("non-empty batch");

    let params = state.model.params_mut();
    params.zero_grad();
    params.accumulate(&grads);
    for p in params.iter_mut() {
        p.grad.scale(T::lit(scale));
    }
    if !mean.total.is_finite() || params.iter().any(|p| !p.grad.is_finite()) {
        let parameter = params
            .iter()
            .find(|p| !p.grad.is_finite())
            .map(|p| p.name.clone())
            .unwrap_or_else(|| "<none>".to_string());
        return Err(Error::NonFiniteLoss { iteration: state.iteration, parameter });
    }
    state.optimizer.step(&mut state.model, cfg.learning_rate);
    state.iteration += 1;
    state.loss_history.push(mean);
    Ok(mean)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the batch for `iteration`. Examples walk through per-epoch
/// shuffles of `images`; crops, combinations, themes and hints come from a
/// random stream keyed by the example's global position, so a batch depends
/// only on `(seed, iteration)`.
pub fn assemble_batch(
    images: &[RgbImage],
    cfg: &TrainConfig,
    iteration: u64,
    counts: &mut [u64; 4],
) -> Result<Vec<TrainingExample>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("no usable training images".into()));
    }
    let n = images.len() as u64;
    let mut order_cache: Option<(u64, Vec<usize>)> = None;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size as u64 {
        let position = iteration * cfg.batch_size as u64 + b;
        let epoch = position / n;
        if order_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..images.len()).collect();
            order.shuffle(&mut stream_rng(cfg.seed, u64::MAX - epoch));
            order_cache = Some((epoch, order));
        }
        let image = &images[order_cache.as_ref().expect("filled").1[(position % n) as usize]];

        let mut rng = stream_rng(cfg.seed, position);
        let x0 = rng.random_range(0..=image.width() - cfg.crop_size);
        let y0 = rng.random_range(0..=image.height() - cfg.crop_size);
        let crop = image.crop(x0, y0, cfg.crop_size, cfg.crop_size)?;
        let combination = sample_combination(&mut rng, &cfg.combination_probs);
        counts[combination.index()] += 1;
        batch.push(make_training_example_with(&rgb_to_lab(&crop), combination, &mut rng)?);
    }
    Ok(batch)
}

/// Where a training run writes its outputs.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Final checkpoint; periodic ones go next to it as `<stem>-<iter>.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Append-only `iteration l_g l_s l_p total` lines.
    pub metrics_log: Option<PathBuf>,
}

fn periodic_path(final_path: &Path, iteration: u64) -> PathBuf {
    let stem = final_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    final_path.with_file_name(format!("{stem}-{iteration}.ckpt"))
}

/// Runs `state` forward until `cfg.iterations` total steps.
pub fn train_images<T: Scalar>(
    state: &mut TrainState<T>,
    images: &[RgbImage],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<()> {
    cfg.validate()?;
    let usable: Vec<RgbImage> = images
        .iter()
        .filter(|img| {
            let ok = img.width() >= cfg.crop_size && img.height() >= cfg.crop_size;
            if !ok {
                log::warn!("skipping {}x{} image smaller than the {} crop", img.width(), img.height(), cfg.crop_size);
            }
            ok
        })
        .cloned()
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyDataset(format!("no image is at least {0}x{0}", cfg.crop_size)));
    }
    let mut metrics = match &outputs.metrics_log {
        Some(path) => Some(
            OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?,
        ),
        None => None,
    };
    while state.iteration < cfg.iterations {
        let batch = assemble_batch(&usable, cfg, state.iteration, &mut state.combination_counts)?;
        let loss = train_step(state, &batch, cfg)?;
        if let (Some(file), Some(path)) = (metrics.as_mut(), outputs.metrics_log.as_ref()) {
            writeln!(file, "{} {:.9e} {:.9e} {:.9e} {:.9e}", state.iteration, loss.l_g, loss.l_s, loss.l_p, loss.total)
                .map_err(|e| Error::io(path, e))?;
        }
        if cfg.checkpoint_every > 0 && state.iteration.is_multiple_of(cfg.checkpoint_every) {
            log::info!(
                "iteration {}: loss {:.6} (l_g {:.6}, l_s {:.6}, l_p {:.6}); combinations none/global/local/both = {:?}",
                state.iteration,
                loss.total,
                loss.l_g,
                loss.l_s,
                loss.l_p,
                state.combination_counts
            );
            if let Some(path) = &outputs.checkpoint {
                state.save(periodic_path(path, state.iteration))?;
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        state.save(path)?;
    }
    Ok(())
}

/// Reads every PNG in `dir` (sorted by file name); unreadable files are
/// skipped with a warning.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, RgbImage)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut images = Vec::new();
    for path in paths {
        match RgbImage::read_png(&path) {
            Ok(img) => images.push((path, img)),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    Ok(images)
}

/// Trains from a directory of color images, starting fresh or from
/// `resume`, and writes the final checkpoint.
pub fn train<T: Scalar>(
    dataset: impl AsRef<Path>,
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
    resume: Option<&Path>,
) -> Result<TrainState<T>> {
    let images: Vec<RgbImage> = load_image_dir(&dataset)?.into_iter().map(|(_, img)| img).collect();
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("no readable images in {}", dataset.as_ref().display())));
    }
    let mut state = match resume {
        Some(path) => TrainState::load(path)?,
        None => TrainState::new(cfg)?,
    };
    train_images(&mut state, &images, cfg, outputs)?;
    Ok(state)
}
