use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{adamw_step, clip_gradients, lr_at, MetricsRecord, OptimState, RunConfig, METRICS_HEADER};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{loss_and_grads, BatchShape, Checkpoint, ForwardOptions, GptParams, TrainState};
use crate::shards::{next_batch, Cursor, DatasetSplit};
use crate::tensor::Tensor;

/// What one optimizer step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// 0-based index of the step just taken.
    pub step: u64,
    pub train_loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Present on logging steps.
    pub record: Option<MetricsRecord>,
}

/// Owns the parameters, optimizer state and data position of one run.
pub struct Trainer {
    config: RunConfig,
    params: GptParams<f32>,
    decays: Vec<bool>,
    optim: OptimState<f32>,
    train: DatasetSplit,
    val: Option<DatasetSplit>,
    cursor: Cursor,
    step: u64,
    tokens: u64,
    started: Instant,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("step", &self.step)
            .field("tokens", &self.tokens)
            .field("cursor", &self.cursor)
            .finish_non_exhaustive()
    }
}

fn check_vocab(config: &RunConfig, split: &DatasetSplit) -> Result<()> {
    if split.vocab_size() != config.model.vocab_size {
        return Err(Error::VocabMismatch {
            left_name: "model".into(),
            left: config.model.vocab_size,
            right_name: format!("{} shards", split.role().as_str()),
            right: split.vocab_size(),
        });
    }
    Ok(())
}

fn dropout_seed(seed: u64, step: u64, micro: usize) -> u64 {
    seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (micro as u64 + 1).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

impl Trainer {
    /// Fresh run with parameters initialized from the configured seed.
    pub fn new(config: RunConfig, train: DatasetSplit, val: Option<DatasetSplit>) -> Result<Self> {
        config.validate()?;
        let params = GptParams::init(&config.model, config.train.seed)?;
        Self::assemble(config, params, None, train, val, TrainState::default())
    }

    /// Continues from a checkpoint written by a run with the same config.
    pub fn resume(
        config: RunConfig,
        train: DatasetSplit,
        val: Option<DatasetSplit>,
        ck: &Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        if ck.config_hash != config.hash() {
            return Err(Error::ConfigHashMismatch {
                expected: ck.config_hash,
                found: config.hash(),
            });
        }
        if ck.config != config.model {
            return Err(Error::ConfigInvalid("checkpoint model config differs from run config".into()));
        }
        let params = ck.params()?;
        let mut optim = OptimState::zeros(params.tensors());
        for (i, n) in params.names().iter().enumerate() {
            optim.m[i] = ck.require(&format!("m/{n}"))?.data().to_vec();
            optim.v[i] = ck.require(&format!("v/{n}"))?.data().to_vec();
        }
        optim.t = ck.state.step;
        Self::assemble(config, params, Some(optim), train, val, ck.state)
    }

    fn assemble(
        config: RunConfig,
        params: GptParams<f32>,
        optim: Option<OptimState<f32>>,
        train: DatasetSplit,
        val: Option<DatasetSplit>,
        state: TrainState,
    ) -> Result<Self> {
        check_vocab(&config, &train)?;
        if let Some(v) = &val {
            check_vocab(&config, v)?;
            if v.windows_per_epoch(config.model.seq_len) == 0 {
                return Err(Error::SplitEmpty);
            }
        }
        let per_step = (config.train.micro_batch * config.train.grad_accum) as u64;
        let windows = train.windows_per_epoch(config.model.seq_len);
        if windows < per_step {
            return Err(Error::CorpusTooSmall(format!(
                "train split holds {windows} windows of {} tokens, one step needs {per_step}",
                config.model.seq_len
            )));
        }
        let decays = (0..params.len()).map(|i| params.decays(i)).collect();
        let optim = optim.unwrap_or_else(|| OptimState::zeros(params.tensors()));
        Ok(Self {
            config,
            params,
            decays,
            optim,
            train,
            val,
            cursor: Cursor {
                epoch: state.cursor_epoch,
                position: state.cursor_position,
            },
            step: state.step,
            tokens: state.tokens_seen,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &GptParams<f32> {
        &self.params
    }

    pub fn optim(&self) -> &OptimState<f32> {
        &self.optim
    }

    /// Optimizer steps completed.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn tokens_seen(&self) -> u64 {
        self.tokens
    }

    pub fn cursor(&self) -> Cursor {
        self.cursor
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.schedule.total_steps
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            tiling: self.config.tiling,
            ..ForwardOptions::default()
        }
    }

    /// Skips to the next epoch when fewer windows remain than one step needs.
    fn align_cursor(&mut self) {
        let seq = self.config.model.seq_len as u64;
        let need = (self.config.train.micro_batch * self.config.train.grad_accum) as u64;
        let total = self.train.token_count();
        let left = if self.cursor.position + seq < total {
            (total - 1 - self.cursor.position) / seq
        } else {
            0
        };
        if left < need {
            self.cursor = Cursor {
                epoch: self.cursor.epoch + 1,
                position: 0,
            };
        }
    }

    /// Mean loss and mean gradient over the next step's micro-batches,
    /// advancing the data cursor. Each micro-batch gradient is scaled by
    /// `1/grad_accum` before it is added.
    pub fn accumulate(&mut self) -> Result<(f64, Vec<Vec<f32>>)> {
        self.align_cursor();
        let (micro, accum) = (self.config.train.micro_batch, self.config.train.grad_accum);
        let seq = self.config.model.seq_len;
        let scale = 1.0 / accum as f32;
        let mut opts = self.forward_options();
        let mut sum: Vec<Vec<f32>> = self.params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        let mut loss = 0.0;
        for a in 0..accum {
            let (batch, next) = next_batch(&self.train, self.cursor, micro, seq)?;
            self.cursor = next;
            if self.config.model.dropout > 0.0 {
                opts.dropout_seed = Some(dropout_seed(self.config.train.seed, self.step, a));
            }
            let shape = BatchShape { batch: micro, seq };
            let (l, grads) = loss_and_grads(&self.params, &batch.inputs, &batch.targets, shape, &opts)?;
            loss += l / accum as f64;
            for (s, g) in sum.iter_mut().zip(&grads) {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * scale);
            }
        }
        Ok((loss, sum))
    }

    /// Mean loss over the first `val_batches` validation batches.
    pub fn validation_loss(&self) -> Result<Option<f64>> {
        let Some(val) = &self.val else {
            return Ok(None);
        };
        let t = &self.config.train;
        let report = evaluate(&self.params, val, t.val_batches, t.micro_batch, self.config.tiling)?;
        Ok(Some(report.mean_loss))
    }

    /// Runs one optimizer step. Validation on logging steps sees the
    /// parameters before this step's update.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let index = self.step;
        let lr = lr_at(index, &self.config.schedule)?;
        let total = self.config.schedule.total_steps;
        let log = index.is_multiple_of(self.config.train.log_every) || index + 1 == total;
        let val_loss = if log { self.validation_loss()? } else { None };
        let (train_loss, mut grads) = self.accumulate()?;
        let grad_norm = clip_gradients(&mut grads, self.config.optim.clip_norm)?;
        adamw_step(
            self.params.tensors_mut(),
            &self.decays,
            &grads,
            &mut self.optim,
            &self.config.optim,
            lr,
        )?;
        self.step += 1;
        self.tokens += self.config.tokens_per_step();
        let record = log.then(|| MetricsRecord {
            step: index,
            train_loss: Some(train_loss),
            val_loss,
            lr: Some(lr),
            tokens: self.tokens,
            perplexity: val_loss.map(f64::exp),
            wall_time: self.started.elapsed().as_secs_f64(),
        });
        if let Some(r) = &record {
            log::info!(
                "step {} loss {:.4} val {} lr {:.3e} norm {:.3}",
                r.step,
                train_loss,
                val_loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                lr,
                grad_norm
            );
        }
        Ok(StepOutcome {
            step: index,
            train_loss,
            lr,
            grad_norm,
            record,
        })
    }

    /// Steps until `stop` steps are complete (capped at `total_steps`),
    /// returning the logged rows.
    pub fn run_until(&mut self, stop: u64) -> Result<Vec<MetricsRecord>> {
        let stop = stop.min(self.config.schedule.total_steps);
        let mut rows = Vec::new();
        while self.step < stop {
            if let Some(r) = self.step()?.record {
                rows.push(r);
            }
        }
        Ok(rows)
    }

    /// Parameters, moments and position, ready to save.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut arrays = Vec::with_capacity(self.params.len() * 3);
        for (n, t) in self.params.names().iter().zip(self.params.tensors()) {
            arrays.push((n.clone(), t.clone()));
        }
        for (prefix, moments) in [("m", &self.optim.m), ("v", &self.optim.v)] {
            for ((n, t), data) in self.params.names().iter().zip(self.params.tensors()).zip(moments) {
                let tensor = Tensor::new(t.shape().to_vec(), data.clone()).expect("moment shape");
                arrays.push((format!("{prefix}/{n}"), tensor));
            }
        }
        Checkpoint {
            config: self.config.model,
            config_hash: self.config.hash(),
            state: TrainState {
                step: self.step,
                tokens_seen: self.tokens,
                cursor_epoch: self.cursor.epoch,
                cursor_position: self.cursor.position,
            },
            arrays,
        }
    }
}

/// Files produced by [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub tokens: u64,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_path: PathBuf,
    pub records: Vec<MetricsRecord>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.gptc")
}

/// Full run: steps to `total_steps`, appending rows to `metrics.csv` and
/// saving checkpoints at the configured cadence and at the end.
pub fn train(
    config: RunConfig,
    train_split: DatasetSplit,
    val: Option<DatasetSplit>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, train_split, val, &Checkpoint::load(path)?)?,
        None => Trainer::new(config, train_split, val)?,
    };
    let metrics_path = out_dir.join("metrics.csv");
    let io = |e| Error::io(format!("writing {}", metrics_path.display()), e);
    // Rows from before the resume point survive; later ones are rewritten.
    let mut kept = String::new();
    if resume.is_some() && metrics_path.exists() {
        let text = fs::read_to_string(&metrics_path)
            .map_err(|e| Error::io(format!("reading {}", metrics_path.display()), e))?;
        for line in text.lines().skip(1) {
            if MetricsRecord::parse(line).is_some_and(|r| r.step < trainer.step_count()) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    let mut file = File::create(&metrics_path).map_err(io)?;
    write!(file, "{METRICS_HEADER}\n{kept}").map_err(io)?;
    let mut checkpoints = Vec::new();
    let mut records = Vec::new();
    let every = config.train.checkpoint_every;
    while !trainer.is_done() {
        let out = trainer.step()?;
        if let Some(r) = out.record {
            writeln!(file, "{r}").map_err(io)?;
            file.flush().map_err(io)?;
            records.push(r);
        }
        let done = trainer.step_count();
        if (every > 0 && done % every == 0) || trainer.is_done() {
            let path = out_dir.join(checkpoint_name(done));
            trainer.checkpoint().save(&path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainSummary {
        steps: trainer.step_count(),
        tokens: trainer.tokens_seen(),
        checkpoints,
        metrics_path,
        records,
    })
}
