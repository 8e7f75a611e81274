//! Multiscale EPE loss, Adam, the plateau learning-rate schedule, batching,
//! and a resumable trainer.
//!
//! Batches and augmentation draws for iteration `i` come from a ChaCha
//! stream keyed by `(seed, i)`, so a run resumed from a saved state replays
//! exactly the batches an uninterrupted run would have seen. Everything runs
//! on the calling thread; results are bit-reproducible on the same build.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, AugmentConfig};
use crate::error::{Error, Result};
use crate::flow_io::{FlowField, SamplePair};
use crate::graph::{Graph, Var};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{
    forward, infer, load_checkpoint, save_checkpoint, validate_frames, ModelConfig, ModelParams, MultiresOutput,
    ParamVars,
};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    /// Iterations without a 1% improvement of the moving-average eval loss
    /// before the learning rate is halved.
    pub plateau_patience: u64,
    /// Number of evaluations in the moving average.
    pub plateau_window: usize,
    /// `(coarsest, fine, final)` head weights.
    pub loss_weights: (f32, f32, f32),
    pub max_iters: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// `None` trains on the samples as stored.
    pub augment: Option<AugmentConfig>,
    /// Stop as soon as the eval AEE falls below this value.
    pub target_aee: Option<f64>,
    /// Evaluate on at most this many training samples when no eval set is given.
    pub eval_subset: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr: 1e-4,
            lr_min: 1e-6,
            plateau_patience: 2000,
            plateau_window: 3,
            loss_weights: (0.25, 0.25, 0.5),
            max_iters: 5000,
            eval_every: 100,
            seed: 0,
            adam: AdamConfig::default(),
            augment: Some(AugmentConfig::default()),
            target_aee: None,
            eval_subset: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.loss_weights;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr) {
            return bad("lr_min must be positive and not above lr");
        }
        if a < 0.0 || b < 0.0 || c < 0.0 || a + b + c <= 0.0 {
            return bad("loss weights must be non-negative with a positive sum");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.plateau_window == 0 {
            return bad("plateau_window must be at least 1");
        }
        Ok(())
    }

    fn patience_evals(&self) -> usize {
        self.plateau_patience.div_ceil(self.eval_every).max(1) as usize
    }
}

/// Smoothed endpoint error, recorded on `g`.
pub fn epe_loss(g: &mut Graph, pred: Var, gt: &Tensor4, mask: Option<&[bool]>) -> Result<Var> {
    g.epe_loss(pred, gt, mask)
}

/// `w_c * epe(coarsest) + w_f * epe(fine) + w_F * epe(final)`; zero-weight
/// terms are left out of the graph.
pub fn multiscale_loss(
    g: &mut Graph,
    out: &MultiresOutput,
    gt: &Tensor4,
    mask: Option<&[bool]>,
    weights: (f32, f32, f32),
) -> Result<Var> {
    let terms = [
        (out.flow_coarsest, weights.0),
        (out.flow_finer, weights.1),
        (out.flow_final, weights.2),
    ];
    let mut total: Option<Var> = None;
    for (pred, w) in terms {
        if w == 0.0 {
            continue;
        }
        let e = epe_loss(g, pred, gt, mask)?;
        let e = g.mul_scalar(e, w);
        total = Some(match total {
            Some(t) => g.add(t, e)?,
            None => e,
        });
    }
    total.ok_or_else(|| Error::Config("all loss weights are zero".into()))
}

/// Frames, flow targets and an optional validity mask stacked along the batch axis.
#[derive(Debug, Clone)]
pub struct Batch {
    pub frame1: Tensor4,
    pub frame2: Tensor4,
    pub gt: Tensor4,
    pub mask: Option<Vec<bool>>,
}

impl Batch {
    pub fn from_samples(samples: &[&SamplePair]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let f1: Vec<_> = samples.iter().map(|s| s.frame1.to_tensor()).collect();
        let f2: Vec<_> = samples.iter().map(|s| s.frame2.to_tensor()).collect();
        let gt: Vec<_> = samples.iter().map(|s| s.gt.to_tensor()).collect();
        let mask = if samples.iter().any(|s| s.gt.mask.is_some()) {
            let mut m = Vec::new();
            for s in samples {
                m.extend((0..s.gt.len()).map(|i| s.gt.is_valid(i)));
            }
            Some(m)
        } else {
            None
        };
        Ok(Self {
            frame1: Tensor4::stack(&f1)?,
            frame2: Tensor4::stack(&f2)?,
            gt: Tensor4::stack(&gt)?,
            mask,
        })
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            t: 0,
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
        }
    }

    /// One Adam update of `params` with learning rate `lr`.
    pub fn update(&mut self, params: &mut ModelParams, grads: &[(Tensor4, Tensor4)], lr: f64, c: &AdamConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let step = |p: &mut [f32], m: &mut [f32], v: &mut [f32], g: &[f32]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] as f64 / bc1;
                let v_hat = v[i] as f64 / bc2;
                p[i] -= (lr * m_hat / (v_hat.sqrt() + c.eps)) as f32;
            }
        };
        for (l, (gk, gb)) in grads.iter().enumerate() {
            let (p, m, v) = (&mut params.layers[l], &mut self.m.layers[l], &mut self.v.layers[l]);
            step(p.kernels.data_mut(), m.kernels.data_mut(), v.kernels.data_mut(), gk.data());
            step(&mut p.bias, &mut m.bias, &mut v.bias, gb.data());
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    /// L2 norm of the gradient for each entry of [`ModelConfig::layer_groups`].
    pub grad_norms: Vec<(&'static str, f64)>,
}

/// Loss and per-layer `(kernel, bias)` gradients for one batch.
pub fn loss_and_grads(
    model: &ModelConfig,
    params: &ModelParams,
    batch: &Batch,
    weights: (f32, f32, f32),
) -> Result<(f64, Vec<(Tensor4, Tensor4)>)> {
    validate_frames(&batch.frame1, &batch.frame2)?;
    let mut g = Graph::new();
    let vars = ParamVars::leaves(&mut g, params);
    let f1 = g.constant(batch.frame1.clone());
    let f2 = g.constant(batch.frame2.clone());
    let out = forward(&mut g, model, &vars, f1, f2)?;
    let loss = multiscale_loss(&mut g, &out, &batch.gt, batch.mask.as_deref(), weights)?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let mut grads = g.backward(loss, &Tensor4::scalar(1.0))?;
    let mut out = Vec::with_capacity(vars.layers.len());
    for (i, lv) in vars.layers.iter().enumerate() {
        let take = |grads: &mut crate::graph::Gradients, v: Var, like: Tensor4| grads.take(v).unwrap_or(like);
        let gk = take(&mut grads, lv.kernels, Tensor4::zeros(params.layers[i].kernels.shape()));
        let gb = take(&mut grads, lv.bias, params.layers[i].bias_tensor().map(|_| 0.0));
        if !gk.is_finite() || !gb.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i} (loss {value})")));
        }
        out.push((gk, gb));
    }
    Ok((value, out))
}

/// Computes gradients of the multiscale loss and applies one Adam update.
pub fn train_step(
    model: &ModelConfig,
    params: &mut ModelParams,
    batch: &Batch,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepOutput> {
    let (loss, grads) = loss_and_grads(model, params, batch, cfg.loss_weights)?;
    let grad_norms = model
        .layer_groups()
        .into_iter()
        .map(|(name, r)| {
            let sq: f64 = grads[r]
                .iter()
                .flat_map(|(k, b)| k.data().iter().chain(b.data()))
                .map(|&x| (x as f64) * (x as f64))
                .sum();
            (name, sq.sqrt())
        })
        .collect();
    adam.update(params, &grads, lr, &cfg.adam);
    Ok(StepOutput { loss, grad_norms })
}

/// Plateau rule over a history of eval losses: halve `lr` (not below
/// `lr_min`) when the best moving average of the last `patience` entries is
/// not at least 1% below the best moving average before them.
pub fn lr_schedule(history: &[f64], lr: f64, patience: usize, window: usize, lr_min: f64) -> f64 {
    let patience = patience.max(1);
    if history.len() <= patience {
        return lr;
    }
    let window = window.max(1);
    let ma: Vec<f64> = (0..history.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            history[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect();
    let split = ma.len() - patience;
    let before = ma[..split].iter().copied().fold(f64::INFINITY, f64::min);
    let recent = ma[split..].iter().copied().fold(f64::INFINITY, f64::min);
    if recent > before * 0.99 {
        (lr / 2.0).max(lr_min)
    } else {
        lr
    }
}

/// Stateful wrapper around [`lr_schedule`]; the history restarts after each change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub history: Vec<f64>,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self { lr, history: Vec::new() }
    }

    pub fn observe(&mut self, loss: f64, patience: usize, window: usize, lr_min: f64) -> f64 {
        self.history.push(loss);
        let next = lr_schedule(&self.history, self.lr, patience, window, lr_min);
        if next != self.lr {
            self.lr = next;
            self.history = vec![loss];
        }
        self.lr
    }
}

/// Final-head prediction for one sample.
pub fn predict_flow(model: &ModelConfig, params: &ModelParams, s: &SamplePair) -> Result<FlowField> {
    let out = infer(model, params, &s.frame1.to_tensor(), &s.frame2.to_tensor())?;
    FlowField::from_tensor(&out.flow_final, 0)
}

/// AEE and Fl-all of the final head over `samples`, respecting gt masks.
pub fn evaluate_model(model: &ModelConfig, params: &ModelParams, samples: &[SamplePair]) -> Result<EvalReport> {
    let preds = samples
        .iter()
        .map(|s| predict_flow(model, params, s))
        .collect::<Result<Vec<_>>>()?;
    evaluate(
        preds
            .iter()
            .zip(samples)
            .enumerate()
            .map(|(i, (p, s))| (format!("{i:05}"), p, &s.gt)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerMeta {
    iter: u64,
    adam_t: u64,
    scheduler: PlateauScheduler,
    cfg: TrainConfig,
}

const STATE_MAGIC: &[u8; 4] = b"DDCS";
const STATE_VERSION: u32 = 1;

/// Path of the optimizer state saved next to a checkpoint.
pub fn state_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".state");
    PathBuf::from(s)
}

/// What happened during [`Trainer::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iters: u64,
    pub last_train_loss: f64,
    pub last_eval_aee: Option<f64>,
    pub reached_target: bool,
}

/// Owns the parameters, optimizer state and schedule for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelConfig,
    pub cfg: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub scheduler: PlateauScheduler,
    pub iter: u64,
}

impl Trainer {
    /// Fresh He-initialized model seeded from `cfg.seed`.
    pub fn new(model: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        let params = ModelParams::init(&model, cfg.seed);
        Self::with_params(model, params, cfg)
    }

    pub fn with_params(model: ModelConfig, params: ModelParams, cfg: TrainConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        params.check(&model)?;
        Ok(Self {
            adam: AdamState::new(&model),
            scheduler: PlateauScheduler::new(cfg.lr),
            model,
            params,
            cfg,
            iter: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    /// The (possibly augmented) batch used at iteration `iter`.
    pub fn batch_at(&self, iter: u64, train: &[SamplePair]) -> Result<Batch> {
        if train.is_empty() {
            return Err(Error::Input("no training samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(iter);
        let mut owned = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let idx = rng.gen_range(0..train.len());
            let aug_seed: u64 = rng.gen();
            owned.push(match &self.cfg.augment {
                Some(a) => augment_sample(&train[idx], a, aug_seed)?,
                None => train[idx].clone(),
            });
        }
        let refs: Vec<_> = owned.iter().collect();
        Batch::from_samples(&refs)
    }

    pub fn step(&mut self, train: &[SamplePair]) -> Result<StepOutput> {
        let batch = self.batch_at(self.iter, train)?;
        let lr = self.scheduler.lr;
        let out = train_step(&self.model, &mut self.params, &batch, &mut self.adam, &self.cfg, lr)
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("iteration {}, lr {lr}: {m}", self.iter)),
                other => other,
            })?;
        self.iter += 1;
        Ok(out)
    }

    /// Feeds an eval loss to the plateau schedule.
    pub fn observe_eval(&mut self, loss: f64) -> f64 {
        let patience = self.cfg.patience_evals();
        self.scheduler
            .observe(loss, patience, self.cfg.plateau_window, self.cfg.lr_min)
    }

    /// Trains until `max_iters` or the target AEE. `eval` defaults to the
    /// first `eval_subset` training samples. Writes a CSV row
    /// `iter,lr,train_loss,eval_aee` per iteration (eval column blank between
    /// evaluations) and saves `checkpoint` after every evaluation.
    pub fn run(
        &mut self,
        train: &[SamplePair],
        eval: Option<&[SamplePair]>,
        mut log: Option<&mut dyn Write>,
        checkpoint: Option<&Path>,
    ) -> Result<RunSummary> {
        let eval = eval.unwrap_or(&train[..train.len().min(self.cfg.eval_subset)]);
        if self.iter == 0 {
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "iter,lr,train_loss,eval_aee")?;
            }
        }
        let mut summary = RunSummary {
            iters: self.iter,
            last_train_loss: f64::NAN,
            last_eval_aee: None,
            reached_target: false,
        };
        while self.iter < self.cfg.max_iters {
            let lr = self.lr();
            let out = self.step(train)?;
            summary.last_train_loss = out.loss;
            let mut eval_cell = String::new();
            if self.iter % self.cfg.eval_every == 0 || self.iter == self.cfg.max_iters {
                let report = evaluate_model(&self.model, &self.params, eval)?;
                self.observe_eval(report.aee);
                summary.last_eval_aee = Some(report.aee);
                eval_cell = report.aee.to_string();
                if let Some(p) = checkpoint {
                    self.save(p)?;
                }
                if self.cfg.target_aee.is_some_and(|t| report.aee < t) {
                    summary.reached_target = true;
                }
            }
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{},{lr},{},{eval_cell}", self.iter, out.loss)?;
                w.flush()?;
            }
            if summary.reached_target {
                break;
            }
        }
        summary.iters = self.iter;
        Ok(summary)
    }

    /// Writes the model checkpoint to `ckpt` and the optimizer state to
    /// [`state_path`]`(ckpt)`.
    pub fn save(&self, ckpt: &Path) -> Result<()> {
        fs::write(ckpt, save_checkpoint(&self.model, &self.params)?)?;
        fs::write(state_path(ckpt), self.state_bytes()?)?;
        Ok(())
    }

    fn state_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&TrainerMeta {
            iter: self.iter,
            adam_t: self.adam.t,
            scheduler: self.scheduler.clone(),
            cfg: self.cfg.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for moments in [&self.adam.m, &self.adam.v] {
            for l in &moments.layers {
                for v in l.kernels.data().iter().chain(&l.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Restores a trainer saved with [`Trainer::save`]. `cfg` overrides the
    /// stored training config when given (for example to extend `max_iters`).
    pub fn resume(ckpt: &Path, cfg: Option<TrainConfig>) -> Result<Self> {
        let (model, params) = load_checkpoint(&fs::read(ckpt)?)?;
        let bytes = fs::read(state_path(ckpt))?;
        let corrupt = |m: &str| Error::Checkpoint(format!("trainer state: {m}"));
        if bytes.len() < 16 || &bytes[..4] != STATE_MAGIC {
            return Err(corrupt("bad header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != STATE_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let meta: TrainerMeta = serde_json::from_slice(&bytes[16..meta_end])?;
        let cfg = cfg.unwrap_or(meta.cfg);
        let mut t = Self::with_params(model, params, cfg)?;
        let mut floats = bytes[meta_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let expected = 2 * t.model.param_count();
        if bytes.len() - meta_end != 4 * expected {
            return Err(corrupt("moment arrays do not match the model"));
        }
        for moments in [&mut t.adam.m, &mut t.adam.v] {
            for l in &mut moments.layers {
                for v in l.kernels.data_mut().iter_mut().chain(l.bias.iter_mut()) {
                    *v = floats.next().unwrap();
                }
            }
        }
        t.adam.t = meta.adam_t;
        t.iter = meta.iter;
        t.scheduler = meta.scheduler;
        Ok(t)
    }
}
