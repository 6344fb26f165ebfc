//! SGD training loop, learning-rate and teacher-temperature schedules.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GcdError, Result};
use crate::eval::{evaluate, EpochMetrics, EvalSettings};
use crate::losses::{
    detach_targets, objective, EmaState, LossBreakdown, LossWeights, ObjectiveSettings,
};
use crate::model::{backward, forward_batch, ModelDims, ModelParams};
use crate::synthdata::{make_batches, Augmentation, Batch, GcdDataset};

/// Which LegoGCD components are active. All off is plain SimGCD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub ler: bool,
    pub map: bool,
    pub dkl: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            ler: true,
            map: true,
            dkl: true,
        }
    }
}

impl Toggles {
    pub const SIMGCD: Toggles = Toggles {
        ler: false,
        map: false,
        dkl: false,
    };
}

/// Every scalar of the objective, optimiser and schedules.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Weight of the mean-entropy regulariser.
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Confidence threshold for LER selection.
    pub delta: f64,
    pub lambda_ler: f64,
    pub tau_u: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    pub tau_t_start: f64,
    pub tau_t_end: f64,
    pub tau_t_warmup_epochs: usize,
    pub tau_o: f64,
    pub ema_momentum: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradient norm at initialisation above which `lr0` is capped at
    /// [`SAFE_LR`].
    pub grad_norm_guard: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub feat: usize,
    pub proj: usize,
    /// Standard deviation of the additive view noise.
    pub aug_strength: f64,
    pub aug_dropout: f64,
    pub toggles: Toggles,
}

/// Learning rate used when the initial gradient norm trips the guard.
pub const SAFE_LR: f64 = 0.05;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.35,
            epsilon: 1.0,
            alpha: 1.0,
            beta: 2.0,
            delta: 0.85,
            lambda_ler: 0.4,
            tau_u: 0.07,
            tau_c: 1.0,
            tau_s: 0.1,
            tau_t_start: 0.07,
            tau_t_end: 0.04,
            tau_t_warmup_epochs: 30,
            tau_o: 0.05,
            ema_momentum: 0.99,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-5,
            grad_norm_guard: 50.0,
            epochs: 200,
            batch_size: 128,
            seed: 0,
            hidden: 32,
            feat: 16,
            proj: 8,
            aug_strength: 0.1,
            aug_dropout: crate::synthdata::DROPOUT_PROB,
            toggles: Toggles::default(),
        }
    }
}

impl TrainConfig {
    /// SimGCD baseline: LegoGCD components off and `β = 0`.
    pub fn simgcd(mut self) -> Self {
        self.toggles = Toggles::SIMGCD;
        self.beta = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let range =
            |name: &str, msg: &str| Err(GcdError::InvalidParameter(format!("{name}: {msg}")));
        for (name, t) in [
            ("tau_u", self.tau_u),
            ("tau_c", self.tau_c),
            ("tau_s", self.tau_s),
            ("tau_t_start", self.tau_t_start),
            ("tau_t_end", self.tau_t_end),
            ("tau_o", self.tau_o),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return range(name, "temperature must be > 0");
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return range("lambda", "must satisfy 0 <= lambda <= 1");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return range("delta", "must satisfy 0 < delta <= 1");
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return range("alpha/beta", "must be >= 0");
        }
        if !(self.epsilon >= 0.0) || !(self.lambda_ler >= 0.0) {
            return range("epsilon/lambda_ler", "must be >= 0");
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            return range("ema_momentum", "must satisfy 0 < m < 1");
        }
        if !(self.lr0 > 0.0) {
            return range("lr0", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return range("momentum", "must satisfy 0 <= momentum < 1");
        }
        if !(self.weight_decay >= 0.0) || !(self.aug_strength >= 0.0) {
            return range("weight_decay/aug_strength", "must be >= 0");
        }
        if !(0.0..1.0).contains(&self.aug_dropout) {
            return range("aug_dropout", "must satisfy 0 <= p < 1");
        }
        if self.batch_size < 2 {
            return range("batch_size", "must be >= 2");
        }
        if self.hidden == 0 || self.feat == 0 || self.proj == 0 {
            return range("hidden/feat/proj", "must be >= 1");
        }
        if self.toggles.map && !self.toggles.ler {
            return range("toggles.map", "requires toggles.ler");
        }
        Ok(())
    }

    pub fn model_dims(&self, input: usize, classes: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.hidden,
            feat: self.feat,
            proj: self.proj,
            classes,
        }
    }

    pub fn objective_settings(&self, tau_t: f64) -> ObjectiveSettings {
        ObjectiveSettings {
            weights: LossWeights {
                lambda: self.lambda,
                epsilon: self.epsilon,
                alpha: self.alpha,
                beta: self.beta,
            },
            tau_u: self.tau_u,
            tau_c: self.tau_c,
            tau_s: self.tau_s,
            tau_t,
            tau_o: self.tau_o,
            delta: self.delta,
            lambda_ler: self.lambda_ler,
            use_ler: self.toggles.ler,
            use_map: self.toggles.map,
            use_dkl: self.toggles.dkl,
        }
    }

    pub fn augmentation(&self) -> Augmentation {
        Augmentation {
            strength: self.aug_strength,
            dropout: self.aug_dropout,
        }
    }
}

/// `lr0 · ½ (1 + cos(π · epoch / total))`, floored at zero.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = epoch.min(total) as f64 / total as f64;
    (lr0 * 0.5 * (1.0 + (PI * t).cos())).max(0.0)
}

/// Cosine ramp from `tau_t_start` to `tau_t_end` over the warmup epochs,
/// constant afterwards.
pub fn teacher_temperature(epoch: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.tau_t_warmup_epochs;
    if epoch >= w {
        return cfg.tau_t_end;
    }
    let t = epoch as f64 / w as f64;
    cfg.tau_t_end + (cfg.tau_t_start - cfg.tau_t_end) * 0.5 * (1.0 + (PI * t).cos())
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: ModelParams,
    pub ema: EmaState,
    /// Completed epochs.
    pub epoch: usize,
    pub steps: u64,
    /// Learning rate the cosine schedule starts from, after the guard.
    pub lr0: f64,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(dims: &ModelDims, cfg: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(dims, cfg.seed)?;
        Ok(Self {
            velocity: ModelParams::zeros(dims),
            params,
            ema: EmaState::new(dims.classes, cfg.ema_momentum)?,
            epoch: 0,
            steps: 0,
            lr0: cfg.lr0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba7c_4e5f_0001),
            history: Vec::new(),
        })
    }
}

/// Extra information about one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub loss: LossBreakdown,
    pub selected: usize,
    pub grad_norm: f64,
}

/// Loss and parameter gradients on one batch without touching the state
/// except for the EMA, which is advanced once.
pub fn compute_gradients(
    params: &ModelParams,
    ema: &mut EmaState,
    batch: &Batch,
    known: &std::collections::BTreeSet<usize>,
    settings: &ObjectiveSettings,
) -> Result<(LossBreakdown, ModelParams, usize)> {
    let cache = forward_batch(params, batch)?;
    let targets = detach_targets(&cache, &batch.mask, known, settings, ema)?;
    let (loss, out_grads) = objective(&cache, &batch.labels, &batch.mask, settings, &targets)?;
    let grads = backward(params, &cache, &out_grads)?;
    Ok((loss, grads, targets.selection.selected()))
}

/// One optimisation step: forward, objective, backward, SGD with momentum
/// and weight decay. The EMA advances exactly once.
pub fn training_step(
    state: &mut TrainState,
    batch: &Batch,
    known: &std::collections::BTreeSet<usize>,
    cfg: &TrainConfig,
    tau_t: f64,
    lr: f64,
) -> Result<StepInfo> {
    let settings = cfg.objective_settings(tau_t);
    let (loss, grads, selected) =
        compute_gradients(&state.params, &mut state.ema, batch, known, &settings)?;
    if let Some(term) = loss.first_non_finite() {
        return Err(GcdError::NonFinite {
            term,
            epoch: state.epoch,
            step: state.steps as usize,
        });
    }
    let grad_norm = grads.sq_norm().sqrt();
    for ((p, v), g) in state
        .params
        .tensors_mut()
        .into_iter()
        .zip(state.velocity.tensors_mut())
        .zip(grads.tensors())
    {
        for ((w, m), d) in p
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice())
            .zip(g.as_slice())
        {
            *m = cfg.momentum * *m + d + cfg.weight_decay * *w;
            *w -= lr * *m;
        }
    }
    state.steps += 1;
    Ok(StepInfo {
        loss,
        selected,
        grad_norm,
    })
}

/// Applies the learning-rate guard: if the gradient norm on the first batch
/// at initialisation exceeds `cfg.grad_norm_guard`, the schedule starts from
/// `min(lr0, SAFE_LR)` instead.
fn guarded_lr0(
    state: &TrainState,
    batch: &Batch,
    dataset: &GcdDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut ema = state.ema.clone();
    let settings = cfg.objective_settings(teacher_temperature(0, cfg));
    let (_, grads, _) = compute_gradients(
        &state.params,
        &mut ema,
        batch,
        &dataset.known_classes,
        &settings,
    )?;
    let norm = grads.sq_norm().sqrt();
    if norm > cfg.grad_norm_guard && cfg.lr0 > SAFE_LR {
        log::warn!(
            "initial gradient norm {norm:.3} exceeds {}; starting lr lowered from {} to {SAFE_LR}",
            cfg.grad_norm_guard,
            cfg.lr0
        );
        Ok(SAFE_LR)
    } else {
        Ok(cfg.lr0)
    }
}

/// Runs one epoch and appends its metrics.
pub fn train_epoch(
    state: &mut TrainState,
    dataset: &GcdDataset,
    cfg: &TrainConfig,
) -> Result<EpochMetrics> {
    let e = state.epoch;
    let lr = cosine_lr(e, cfg.epochs, state.lr0);
    let tau_t = teacher_temperature(e, cfg);
    let batch_seed = state.rng.random::<u64>();
    let batches = make_batches(
        dataset,
        cfg.batch_size.min(dataset.len()),
        cfg.augmentation(),
        batch_seed,
    )?;
    let mut mean = LossBreakdown::default();
    let mut used = 0usize;
    for batch in batches.iter().filter(|b| b.len() >= 2) {
        let info = training_step(state, batch, &dataset.known_classes, cfg, tau_t, lr)?;
        mean.add_scaled(&info.loss, 1.0);
        used += 1;
    }
    if used > 0 {
        let mut avg = LossBreakdown::default();
        avg.add_scaled(&mean, 1.0 / used as f64);
        mean = avg;
    }
    let ev = evaluate(
        &state.params,
        dataset,
        &EvalSettings {
            tau_s: cfg.tau_s,
            delta: cfg.delta,
        },
    )?;
    state.epoch += 1;
    let m = EpochMetrics {
        epoch: state.epoch,
        acc_all: ev.accuracy.all,
        acc_old: ev.accuracy.old,
        acc_new: ev.accuracy.new,
        loss: mean,
        known_count: ev.known_count,
        lr,
        tau_t,
    };
    state.history.push(m);
    Ok(m)
}

/// Prepares a fresh state for `dataset`, including the learning-rate guard.
pub fn init_state(dataset: &GcdDataset, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    dataset.validate()?;
    let dims = cfg.model_dims(dataset.dim(), dataset.num_classes());
    let mut state = TrainState::new(&dims, cfg)?;
    let probe = make_batches(
        dataset,
        cfg.batch_size.min(dataset.len()),
        cfg.augmentation(),
        cfg.seed,
    )?;
    if let Some(first) = probe.iter().find(|b| b.len() >= 2) {
        state.lr0 = guarded_lr0(&state, first, dataset, cfg)?;
    }
    Ok(state)
}

/// Trains for `cfg.epochs` epochs, evaluating after each.
pub fn train(dataset: &GcdDataset, cfg: &TrainConfig) -> Result<TrainState> {
    train_with(dataset, cfg, |_, _| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<F>(dataset: &GcdDataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainState>
where
    F: FnMut(&TrainState, &EpochMetrics),
{
    let mut state = init_state(dataset, cfg)?;
    for _ in 0..cfg.epochs {
        let m = train_epoch(&mut state, dataset, cfg)?;
        on_epoch(&state, &m);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, SynthSpec};

    fn small_dataset() -> GcdDataset {
        generate_dataset(&SynthSpec {
            n_known: 3,
            n_novel: 2,
            per_class: 20,
            dim: 6,
            separation: 3.0,
            noise: 0.6,
            labeled_ratio: 0.5,
            seed: 1,
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            hidden: 8,
            feat: 6,
            proj: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_pins() {
        assert_eq!(cosine_lr(0, 200, 0.1), 0.1);
        assert!(cosine_lr(200, 200, 0.1).abs() < 1e-12);
        assert!((cosine_lr(100, 200, 0.1) - 0.05).abs() < 1e-12);
        let cfg = TrainConfig::default();
        assert!((teacher_temperature(0, &cfg) - 0.07).abs() < 1e-12);
        assert!((teacher_temperature(15, &cfg) - 0.055).abs() < 1e-12);
        assert_eq!(teacher_temperature(30, &cfg), 0.04);
        assert_eq!(teacher_temperature(150, &cfg), 0.04);
    }

    #[test]
    fn schedules_are_monotone() {
        let cfg = TrainConfig::default();
        for e in 0..cfg.epochs {
            assert!(cosine_lr(e + 1, cfg.epochs, 0.1) <= cosine_lr(e, cfg.epochs, 0.1));
            assert!(teacher_temperature(e + 1, &cfg) <= teacher_temperature(e, &cfg));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            toggles: Toggles {
                ler: false,
                map: true,
                dkl: false,
            },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            delta: 1.5,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            tau_o: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lambda: -0.1,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_epochs_keeps_init() {
        let ds = small_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let state = train(&ds, &cfg).unwrap();
        assert!(state.history.is_empty());
        let init =
            ModelParams::init(&cfg.model_dims(ds.dim(), ds.num_classes()), cfg.seed).unwrap();
        assert_eq!(state.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_dataset();
        let a = train(&ds, &small_cfg()).unwrap();
        let b = train(&ds, &small_cfg()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn one_ema_update_per_step() {
        let ds = small_dataset();
        let cfg = TrainConfig {
            epochs: 2,
            ..small_cfg()
        };
        let state = train(&ds, &cfg).unwrap();
        let per_epoch = ds.len().div_ceil(cfg.batch_size) as u64;
        assert_eq!(state.ema.updates, 2 * per_epoch);
        assert_eq!(state.steps, 2 * per_epoch);
    }

    #[test]
    fn baseline_step_has_no_lego_terms() {
        let ds = small_dataset();
        let cfg = small_cfg().simgcd();
        let mut state = init_state(&ds, &cfg).unwrap();
        let batch = &make_batches(&ds, 32, cfg.augmentation(), 0).unwrap()[0];
        let info = training_step(&mut state, batch, &ds.known_classes, &cfg, 0.07, 0.1).unwrap();
        assert_eq!(info.loss.ler, 0.0);
        assert_eq!(info.loss.dkl, 0.0);
    }

    #[test]
    fn unreachable_threshold_and_identical_views() {
        let ds = small_dataset();
        let cfg = TrainConfig {
            delta: 1.0,
            aug_strength: 0.0,
            aug_dropout: 0.0,
            ..small_cfg()
        };
        let mut state = init_state(&ds, &cfg).unwrap();
        let batch = &make_batches(&ds, 32, cfg.augmentation(), 0).unwrap()[0];
        let info = training_step(&mut state, batch, &ds.known_classes, &cfg, 0.07, 0.1).unwrap();
        assert_eq!(info.loss.ler, 0.0);
        assert_eq!(info.selected, 0);
        assert_eq!(info.loss.dkl, 0.0);
    }

    #[test]
    fn non_finite_loss_names_the_term() {
        let ds = small_dataset();
        let cfg = small_cfg();
        let mut state = init_state(&ds, &cfg).unwrap();
        state.params.w1.as_mut_slice()[0] = f64::NAN;
        let batch = &make_batches(&ds, 32, cfg.augmentation(), 0).unwrap()[0];
        let err = training_step(&mut state, batch, &ds.known_classes, &cfg, 0.07, 0.1).unwrap_err();
        assert!(
            matches!(
                err,
                GcdError::NonFinite {
                    term: "rep_unsup",
                    ..
                }
            ),
            "{err}"
        );
    }
}
