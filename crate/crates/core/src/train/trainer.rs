use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::loss::loss;
use crate::data::{SequenceBatch, SequenceDataset};
use crate::error::{Error, Result};
use crate::kv::Reader;
use crate::metrics::{MetricReport, SSIM_WINDOW};
use crate::model::{LossMode, Model, ModelConfig, StateValues, Unrolled};
use crate::params::{Graph, ParameterStore};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor, Var};

pub const LOG_HEADER: &str = "step,epoch,train_loss,val_mse,val_ssim";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Frames per phase: each training sequence holds `2 * S` frames.
    pub frames_per_phase: usize,
    pub seed: u64,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Validation sequences scored per epoch; 0 scores all of them.
    pub val_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 10,
            frames_per_phase: 10,
            seed: 0,
            checkpoint_interval: 1,
            val_limit: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errors.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            errors.push("batch_size must be at least 1".to_string());
        }
        if self.frames_per_phase < 2 {
            errors.push(format!(
                "frames_per_phase must be at least 2, got {}",
                self.frames_per_phase
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn apply(&mut self, r: &mut Reader<'_>) {
        self.learning_rate = r.take("learning_rate", self.learning_rate);
        self.batch_size = r.take("batch_size", self.batch_size);
        self.epochs = r.take("epochs", self.epochs);
        self.frames_per_phase = r.take("frames_per_phase", self.frames_per_phase);
        self.seed = r.take("seed", self.seed);
        self.checkpoint_interval = r.take("checkpoint_interval", self.checkpoint_interval);
        self.val_limit = r.take("val_limit", self.val_limit);
    }

    pub fn to_text(&self) -> String {
        format!(
            "learning_rate = {}\nbatch_size = {}\nepochs = {}\nframes_per_phase = {}\nseed = {}\n\
             checkpoint_interval = {}\nval_limit = {}\n",
            self.learning_rate,
            self.batch_size,
            self.epochs,
            self.frames_per_phase,
            self.seed,
            self.checkpoint_interval,
            self.val_limit
        )
    }
}

/// The graph of one training example: predictions, matching targets and
/// the loss, before any backward pass.
pub struct LossGraph {
    pub loss: Var,
    /// `(B, 2S - 1, C, H, W)`: warm-up predictions followed by the rollout.
    pub pred: Var,
    pub target: Var,
    pub unrolled: Unrolled,
}

impl LossGraph {
    /// Number of compared frame pairs per sample.
    pub fn pairs<T: Scalar>(&self, g: &Graph<'_, T>) -> usize {
        g.shape(self.pred)[1]
    }
}

fn frame_var<T: Scalar>(g: &Graph<'_, T>, frames: &Tensor<T>, t: usize) -> Result<Var> {
    let s = frames.shape();
    let f = crate::tensor::kernels::narrow(frames, 1, t, 1)?.reshaped(&[s[0], s[2], s[3], s[4]])?;
    Ok(g.constant(f))
}

/// Builds the two-phase training graph for `(B, 2S, C, H, W)` frames.
///
/// Warm-up runs on `X_0 .. X_{S-2}` and predicts `X_1 .. X_{S-1}`; the
/// rollout starts from `X_{S-1}` with the carried state and predicts the `S`
/// target frames. The loss compares all `2S - 1` predictions with
/// `frames[1..2S]`.
pub fn build_loss<T: Scalar>(
    g: &Graph<'_, T>,
    model: &Model,
    frames: &Tensor<T>,
    s: usize,
    mode: LossMode,
) -> Result<LossGraph> {
    let shape = frames.shape();
    if s < 2 {
        return Err(Error::invalid(
            "train_step",
            format!("frames per phase must be at least 2, got {s}"),
        ));
    }
    if shape.len() != 5 || shape[1] != 2 * s {
        return Err(Error::invalid(
            "train_step",
            format!("expected (B, {}, C, H, W) frames for S = {s}, got {shape:?}", 2 * s),
        ));
    }
    let inputs = (0..s).map(|t| frame_var(g, frames, t)).collect::<Result<Vec<_>>>()?;
    let unrolled = model.unroll(g, &inputs, s)?;
    let (b, c, h, w) = (shape[0], shape[2], shape[3], shape[4]);
    let steps = unrolled
        .warmup
        .iter()
        .chain(&unrolled.predictions)
        .map(|&p| g.reshape(p, &[b, 1, c, h, w]))
        .collect::<Result<Vec<_>>>()?;
    let pred = g.concat(&steps, 1)?;
    let target = g.constant(crate::tensor::kernels::narrow(frames, 1, 1, 2 * s - 1)?);
    let loss = loss(g, pred, target, mode)?;
    Ok(LossGraph {
        loss,
        pred,
        target,
        unrolled,
    })
}

/// Teacher-forced warm-up alone, returning the final state. Used to check
/// the state handed to the rollout.
pub fn warmup_state<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    frames: &Tensor<T>,
    s: usize,
) -> Result<StateValues<T>> {
    let g = Graph::new(store, false);
    let mut state = None;
    for t in 0..s - 1 {
        let x = frame_var(&g, frames, t)?;
        let (_, st) = model.forward_step(&g, x, state.as_ref())?;
        state = Some(st);
    }
    let st = state.ok_or_else(|| Error::invalid("warmup", "S must be at least 2"))?;
    Ok(StateValues::capture(&g, &st))
}

/// One optimisation step; returns the loss before the update.
pub fn train_step<T: Scalar>(
    model: &Model,
    store: &mut ParameterStore<T>,
    adam: &Adam,
    batch: &SequenceBatch<T>,
    s: usize,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (value, grads) = {
        let g = Graph::new(store, true).with_dropout_rng(dropout_rng.clone());
        let lg = build_loss(&g, model, &batch.frames, s, model.config.loss)?;
        let value = g.value(lg.loss).item().to_f64().unwrap_or(f64::NAN);
        let grads = g.backward(lg.loss)?;
        *dropout_rng = g.dropout_rng();
        (value, grads)
    };
    adam.update(store, &grads)?;
    Ok(value)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub val_ssim: Option<f64>,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.step,
            self.epoch,
            self.train_loss,
            opt(self.val_mse),
            opt(self.val_ssim)
        )
    }
}

/// Training loop state: model, parameters with optimizer moments, and the
/// generators that drive shuffling and dropout.
pub struct Trainer {
    pub model: Model,
    pub store: ParameterStore<f32>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    adam: Adam,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (model, store) = Model::init(model_config, config.seed)?;
        Ok(Trainer {
            model,
            store,
            shuffle_rng: stream(config.seed, Stream::Shuffle),
            dropout_rng: stream(config.seed, Stream::Dropout),
            adam: Adam::new(config.learning_rate),
            epoch: 0,
            config,
        })
    }

    /// Continues from a checkpoint. The model configuration comes from the
    /// checkpoint; `config` supplies the remaining schedule.
    pub fn resume(ck: Checkpoint<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(0, Stream::Init);
        let model = Model::new(ck.config.clone(), &mut ParameterStore::<f32>::new(), &mut rng)?;
        let get = |name: &str| {
            ck.rng(name).cloned().ok_or_else(|| Error::Format {
                what: "checkpoint",
                msg: format!("missing `{name}` RNG state"),
            })
        };
        Ok(Trainer {
            shuffle_rng: get("shuffle")?,
            dropout_rng: get("dropout")?,
            adam: Adam::new(config.learning_rate),
            epoch: ck.epoch as usize,
            model,
            store: ck.store,
            config,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint {
            config: self.model.config.clone(),
            store: self.store.clone(),
            epoch: self.epoch as u64,
            rngs: vec![
                ("shuffle".into(), self.shuffle_rng.clone()),
                ("dropout".into(), self.dropout_rng.clone()),
            ],
        }
    }

    fn check_data(&self, data: &SequenceDataset) -> Result<()> {
        let h = &data.header;
        let c = &self.model.config;
        let need = 2 * self.config.frames_per_phase;
        let mut errors = Vec::new();
        if h.frames != need {
            errors.push(format!(
                "sequences have {} frames, frames_per_phase = {} needs {need}",
                h.frames, self.config.frames_per_phase
            ));
        }
        if (h.channels, h.height, h.width) != (c.input_channels, c.height, c.width) {
            errors.push(format!(
                "frames are {}x{}x{}, model expects {}x{}x{}",
                h.channels, h.height, h.width, c.input_channels, c.height, c.width
            ));
        }
        if h.count < self.config.batch_size {
            errors.push(format!(
                "{} sequences is fewer than batch_size {}",
                h.count, self.config.batch_size
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Runs one epoch, calling `on_step` after every update.
    pub fn train_epoch(&mut self, data: &SequenceDataset, mut on_step: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        self.check_data(data)?;
        let s = self.config.frames_per_phase;
        let order = data.epoch_order(Some(&mut self.shuffle_rng));
        let mut rows = Vec::with_capacity(data.num_batches(self.config.batch_size));
        for batch in data.iter_batches_owned::<f32>(order, self.config.batch_size, s) {
            let batch = batch?;
            let loss = train_step(
                &self.model,
                &mut self.store,
                &self.adam,
                &batch,
                s,
                &mut self.dropout_rng,
            )?;
            let row = LogRow {
                step: self.store.step,
                epoch: self.epoch + 1,
                train_loss: loss,
                val_mse: None,
                val_ssim: None,
            };
            on_step(&row);
            rows.push(row);
        }
        self.epoch += 1;
        Ok(rows)
    }

    /// Rollout metrics on a held-out set: `S` observed frames, the rest
    /// predicted.
    pub fn validate(&self, data: &SequenceDataset) -> Result<MetricReport> {
        evaluate(
            &self.model,
            &self.store,
            data,
            self.config.frames_per_phase,
            data.header.frames.saturating_sub(self.config.frames_per_phase),
            self.config.batch_size,
            self.config.val_limit,
        )
    }

    /// Trains until `config.epochs` epochs are complete. With `out_dir`,
    /// appends to `log.csv` and writes checkpoints there.
    pub fn run(
        &mut self,
        data: &SequenceDataset,
        val: Option<&SequenceDataset>,
        out_dir: Option<&Path>,
        mut report: impl FnMut(&str),
    ) -> Result<Vec<LogRow>> {
        self.check_data(data)?;
        let log_path: Option<PathBuf> = out_dir.map(|d| d.join("log.csv"));
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
        }
        if let Some(p) = &log_path {
            if !p.exists() {
                fs::write(p, format!("{LOG_HEADER}\n"))?;
            }
        }
        let mut all = Vec::new();
        while self.epoch < self.config.epochs {
            let mut rows = self.train_epoch(data, |_| {})?;
            let mean = rows.iter().map(|r| r.train_loss).sum::<f64>() / rows.len().max(1) as f64;
            let mut line = format!("epoch {} step {} train_loss {mean:.6}", self.epoch, self.store.step);
            if let Some(v) = val {
                let rep = self.validate(v)?;
                let last = rows.last_mut().expect("at least one batch");
                last.val_mse = Some(rep.average.mse_pixel);
                let c = &self.model.config;
                if c.height >= SSIM_WINDOW && c.width >= SSIM_WINDOW {
                    last.val_ssim = Some(rep.average.ssim);
                }
                let _ = write!(line, " val_mse {:.6}", rep.average.mse_pixel);
                if let Some(s) = last.val_ssim {
                    let _ = write!(line, " val_ssim {s:.4}");
                }
            }
            report(&line);
            if let Some(p) = &log_path {
                let mut f = OpenOptions::new().append(true).open(p)?;
                for r in &rows {
                    writeln!(f, "{}", r.csv())?;
                }
            }
            if let Some(dir) = out_dir {
                let interval = self.config.checkpoint_interval;
                let last = self.epoch == self.config.epochs;
                if (interval > 0 && self.epoch.is_multiple_of(interval)) || last {
                    let ck = self.checkpoint();
                    ck.save(&dir.join(format!("ckpt_epoch{:04}.swls", self.epoch)))?;
                    ck.save(&dir.join("last.swls"))?;
                }
            }
            all.extend(rows);
        }
        Ok(all)
    }
}

/// Rolls the model out over a dataset and scores the predicted frames.
pub fn evaluate<T: Scalar>(
    model: &Model,
    store: &ParameterStore<T>,
    data: &SequenceDataset,
    inputs: usize,
    horizon: usize,
    batch_size: usize,
    limit: usize,
) -> Result<MetricReport> {
    let h = &data.header;
    if inputs == 0 || inputs > h.frames {
        return Err(Error::invalid(
            "evaluate",
            format!("{inputs} input frames from {}-frame sequences", h.frames),
        ));
    }
    if horizon == 0 {
        return Err(Error::invalid("evaluate", "horizon must be at least 1"));
    }
    let scored = h.frames - inputs;
    let shape = [h.channels, h.height, h.width];
    let frame = h.frame_len();
    let n = if limit == 0 { h.count } else { limit.min(h.count) };
    let order: Vec<usize> = (0..n).collect();
    let mut reports = Vec::new();
    for batch in data.iter_batches_owned::<T>(order, batch_size.max(1), inputs) {
        let batch = batch?;
        let b = batch.len();
        let input = batch.input()?;
        let pred = model.rollout(store, &input, horizon)?;
        // Steps past the end of the sequence have no ground truth; score
        // only the overlap.
        let k = horizon.min(scored);
        if k == 0 {
            return Err(Error::invalid("evaluate", "sequences have no frames after the inputs"));
        }
        let p = crate::tensor::kernels::narrow(&pred, 1, 0, k)?;
        let t = batch.slice(inputs, k)?;
        let to64 = |x: &Tensor<T>| -> Vec<f64> { x.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect() };
        debug_assert_eq!(p.numel(), b * k * frame);
        reports.push(MetricReport::compute(&to64(&p), &to64(&t), b, k, shape)?);
    }
    MetricReport::merge(&reports).ok_or_else(|| Error::invalid("evaluate", "empty dataset"))
}
