//! The combined training procedure and its evaluation harness.
//!
//! Every optimizer step sees up to five input streams: clean images,
//! adversarial images regenerated against the current parameters,
//! the adversarial images fused with each sample's signed distance
//! field, and de-biased versions of the clean and adversarial images
//! under a freshly sampled transform. The per-stream cross-entropies
//! sum with unit weights into the training objective; ablation modes
//! drop the shape or de-biasing streams. Inference stays a bare
//! classifier: evaluation never touches the auxiliary modules.

use crate::adversary::{attack_batch, pgd_attack, step_attack_config, AttackConfig};
use crate::error::{Error, Result};
use crate::gad::{apply_gad, sample_gad, GadVariant};
use crate::nn::{backward, forward, sgd_update, Batch, Gradients, ModelParams, ModelShape};
use crate::rng::derive_seed;
use crate::sem::{fuse, sem_pipeline, SemConfig};
use crate::synth::{shuffled_indices, Sample};
use crate::tensor::{Image, ScalarField};

const INIT_SEED_TAG: u64 = 0x696e_6974;
const EPOCH_SEED_TAG: u64 = 0x6570_6f63;
const GAD_SEED_TAG: u64 = 0x6761_64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Clean + adversarial streams only.
    Standard,
    /// All five streams.
    ShapePuri,
    /// Clean + adversarial + shape-fused.
    SemOnly,
    /// Clean + adversarial + both de-biased streams.
    GadOnly,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Standard => "standard",
            TrainMode::ShapePuri => "shapepuri",
            TrainMode::SemOnly => "sem-only",
            TrainMode::GadOnly => "gad-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(TrainMode::Standard),
            "shapepuri" => Ok(TrainMode::ShapePuri),
            "sem-only" => Ok(TrainMode::SemOnly),
            "gad-only" => Ok(TrainMode::GadOnly),
            other => Err(Error::Config(format!("unknown train mode '{other}'"))),
        }
    }

    pub fn uses_sdf(&self) -> bool {
        matches!(self, TrainMode::ShapePuri | TrainMode::SemOnly)
    }

    pub fn uses_gad(&self) -> bool {
        matches!(self, TrainMode::ShapePuri | TrainMode::GadOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub step_period: usize,
    pub decay: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub attack: AttackConfig,
    pub sem: SemConfig,
    pub gad_variant: GadVariant,
    pub optimizer: Optimizer,
    pub mode: TrainMode,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: the published schedule (lr 1e-4, halved
    /// every 2500 steps, fusion strength 0.5) over 2000 steps of batch
    /// 16 with a 10-step training attack at 8/255.
    pub fn default_for(height: usize, width: usize) -> Self {
        TrainConfig {
            lr0: 1e-4,
            step_period: 2500,
            decay: 0.5,
            batch_size: 16,
            total_steps: 2000,
            attack: AttackConfig {
                epsilon: 8.0 / 255.0,
                eta: 2.0 / 255.0,
                steps: 10,
                targeted: false,
                target_rule: crate::adversary::TargetRule::RandomOther,
                random_init: true,
                seed: 0,
            },
            sem: SemConfig::default_for(height, width),
            gad_variant: GadVariant::Convolution,
            optimizer: Optimizer::Sgd,
            mode: TrainMode::ShapePuri,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if self.step_period == 0 {
            return Err(Error::Config("step_period must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config("decay must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Config(
                "batch_size and total_steps must be positive".into(),
            ));
        }
        self.sem.validate()
    }

    /// Fusion strength, owned by the shape-encoding config.
    pub fn beta(&self) -> f64 {
        self.sem.beta
    }
}

/// Step-decayed learning rate: lr0 * decay^floor(step / period).
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay.powi((step / cfg.step_period) as i32)
}

/// Per-step loss bookkeeping; absent streams stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub l_base: f64,
    pub l_sdf: Option<f64>,
    pub l_gad: Option<f64>,
    pub l_total: f64,
}

/// History CSV: header plus one row per step, 17 significant digits.
pub fn history_to_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,lr,l_base,l_sdf,l_gad,l_total\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for rec in history {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{},{},{:.17e}\n",
            rec.step,
            rec.lr,
            rec.l_base,
            fmt(rec.l_sdf),
            fmt(rec.l_gad),
            rec.l_total
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub clean_accuracy: f64,
    pub robust_accuracy: Option<f64>,
    pub n_samples: usize,
    pub attack: Option<AttackConfig>,
}

/// Adam first/second moment state, tensor-for-tensor with the params.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(params: &ModelParams) -> Self {
        let sizes = [
            params.conv1_w.len(),
            params.conv1_b.len(),
            params.conv2_w.len(),
            params.conv2_b.len(),
            params.dense_w.len(),
            params.dense_b.len(),
        ];
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

fn adam_update(
    params: &ModelParams,
    state: &mut AdamState,
    grads: &Gradients,
    lr: f64,
) -> ModelParams {
    state.t += 1;
    let t = state.t as i32;
    let correction1 = 1.0 - ADAM_BETA1.powi(t);
    let correction2 = 1.0 - ADAM_BETA2.powi(t);
    let mut out = params.clone();
    let tensors: [(&mut Vec<f64>, &Vec<f64>); 6] = [
        (&mut out.conv1_w, &grads.conv1_w),
        (&mut out.conv1_b, &grads.conv1_b),
        (&mut out.conv2_w, &grads.conv2_w),
        (&mut out.conv2_b, &grads.conv2_b),
        (&mut out.dense_w, &grads.dense_w),
        (&mut out.dense_b, &grads.dense_b),
    ];
    for (slot, (dst, g)) in tensors.into_iter().enumerate() {
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        for i in 0..dst.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            dst[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    out
}

/// Mutable training state threaded through the step function.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub step: usize,
    adam: Option<AdamState>,
}

impl TrainState {
    pub fn new(params: ModelParams, cfg: &TrainConfig) -> Self {
        let adam = matches!(cfg.optimizer, Optimizer::Adam).then(|| AdamState::new(&params));
        TrainState {
            params,
            step: 0,
            adam,
        }
    }
}

/// A batch plus the cached signed distance fields of its clean images
/// (aligned index-for-index; empty when the mode ignores them).
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub batch: Batch,
    pub sdfs: Vec<ScalarField>,
}

/// Loss values of the active streams for one batch, without touching
/// any gradients. The total is the unit-weight sum of present terms.
pub fn compute_losses(
    params: &ModelParams,
    batch: &Batch,
    adv_batch: &Batch,
    sdf_fields: &[ScalarField],
    gad_params: Option<&crate::gad::GadParams>,
    cfg: &TrainConfig,
) -> Result<(f64, Option<f64>, Option<f64>, f64)> {
    let ce = |b: &Batch| -> Result<f64> {
        Ok(crate::nn::cross_entropy(&forward(params, b)?, &b.labels))
    };
    let l_base = ce(batch)? + ce(adv_batch)?;
    let l_sdf = if cfg.mode.uses_sdf() {
        let fused = fused_batch(adv_batch, sdf_fields, cfg.beta(), params.shape.classes)?;
        Some(ce(&fused)?)
    } else {
        None
    };
    let l_gad = if cfg.mode.uses_gad() {
        let gp = gad_params.ok_or_else(|| Error::Config("mode needs gad params".into()))?;
        let clean = gad_batch(batch, gp, params.shape.classes)?;
        let adv = gad_batch(adv_batch, gp, params.shape.classes)?;
        Some(ce(&clean)? + ce(&adv)?)
    } else {
        None
    };
    let l_total = l_base + l_sdf.unwrap_or(0.0) + l_gad.unwrap_or(0.0);
    Ok((l_base, l_sdf, l_gad, l_total))
}

fn fused_batch(adv: &Batch, sdfs: &[ScalarField], beta: f64, classes: usize) -> Result<Batch> {
    if sdfs.len() != adv.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} SDFs for {} samples",
            sdfs.len(),
            adv.len()
        )));
    }
    let images = adv
        .images
        .iter()
        .zip(sdfs)
        .map(|(img, sdf)| fuse(img, sdf, beta))
        .collect::<Result<Vec<_>>>()?;
    Batch::new(images, adv.labels.clone(), classes)
}

fn gad_batch(batch: &Batch, gp: &crate::gad::GadParams, classes: usize) -> Result<Batch> {
    let images = batch
        .images
        .iter()
        .map(|img| apply_gad(img, gp))
        .collect::<Result<Vec<_>>>()?;
    Batch::new(images, batch.labels.clone(), classes)
}

/// One optimizer step: regenerate the attack against the current
/// parameters, build the active streams, accumulate their gradients
/// with unit weights, and apply the scheduled update. Deterministic in
/// (state, batch, config, step index).
pub fn train_step(
    state: &mut TrainState,
    prepared: &PreparedBatch,
    cfg: &TrainConfig,
) -> Result<LossRecord> {
    let step = state.step;
    let lr = lr_schedule(step, cfg);
    let batch = &prepared.batch;
    let classes = state.params.shape.classes;

    let attack_cfg = step_attack_config(&cfg.attack, step as u64);
    let adv_batch = attack_batch(&state.params, batch, &attack_cfg)?;

    let gad_params = cfg.mode.uses_gad().then(|| {
        let s = &state.params.shape;
        sample_gad(
            derive_seed(derive_seed(cfg.seed, GAD_SEED_TAG), step as u64),
            s.channels,
            s.height,
            s.width,
            cfg.gad_variant,
        )
    });

    let mut total = Gradients::empty_like(&state.params);
    let (clean_loss, g) = backward(&state.params, batch)?;
    total.accumulate(&g);
    let (adv_loss, g) = backward(&state.params, &adv_batch)?;
    total.accumulate(&g);
    let l_base = clean_loss + adv_loss;

    let l_sdf = if cfg.mode.uses_sdf() {
        let fused = fused_batch(&adv_batch, &prepared.sdfs, cfg.beta(), classes)?;
        let (loss, g) = backward(&state.params, &fused)?;
        total.accumulate(&g);
        Some(loss)
    } else {
        None
    };

    let l_gad = if let Some(gp) = &gad_params {
        let clean_gad = gad_batch(batch, gp, classes)?;
        let (loss_clean, g) = backward(&state.params, &clean_gad)?;
        total.accumulate(&g);
        let adv_gad = gad_batch(&adv_batch, gp, classes)?;
        let (loss_adv, g) = backward(&state.params, &adv_gad)?;
        total.accumulate(&g);
        Some(loss_clean + loss_adv)
    } else {
        None
    };

    state.params = match (&cfg.optimizer, state.adam.as_mut()) {
        (Optimizer::Adam, Some(adam)) => adam_update(&state.params, adam, &total, lr),
        _ => sgd_update(&state.params, &total, lr),
    };
    state.step += 1;

    let l_total = l_base + l_sdf.unwrap_or(0.0) + l_gad.unwrap_or(0.0);
    Ok(LossRecord {
        step,
        lr,
        l_base,
        l_sdf,
        l_gad,
        l_total,
    })
}

/// Signed distance fields of every clean sample, computed once; the
/// encoding pipeline is deterministic in the image, so the cache is
/// exact across epochs.
pub fn precompute_sdfs(dataset: &[Sample], cfg: &SemConfig) -> Result<Vec<ScalarField>> {
    dataset
        .iter()
        .map(|s| Ok(sem_pipeline(&s.image, cfg)?.1))
        .collect()
}

/// Full training run: seeded init, per-epoch seeded shuffling, one
/// history record per step.
pub fn train_loop(dataset: &[Sample], cfg: &TrainConfig) -> Result<(ModelParams, Vec<LossRecord>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {}",
            cfg.batch_size,
            dataset.len()
        )));
    }
    let first = &dataset[0].image;
    let classes = dataset.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let shape = ModelShape::new(first.channels(), first.height(), first.width(), classes)?;
    let params = ModelParams::init(shape, derive_seed(cfg.seed, INIT_SEED_TAG));
    let mut state = TrainState::new(params, cfg);

    let sdf_cache = if cfg.mode.uses_sdf() {
        precompute_sdfs(dataset, &cfg.sem)?
    } else {
        Vec::new()
    };

    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.total_steps);
    let mut epoch_order: Vec<usize> = Vec::new();
    for step in 0..cfg.total_steps {
        let slot = step % steps_per_epoch;
        if slot == 0 {
            let epoch = (step / steps_per_epoch) as u64;
            epoch_order =
                shuffled_indices(n, derive_seed(derive_seed(cfg.seed, EPOCH_SEED_TAG), epoch));
        }
        let lo = slot * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(n);
        let idx = &epoch_order[lo..hi];
        let images = idx.iter().map(|&i| dataset[i].image.clone()).collect();
        let labels = idx.iter().map(|&i| dataset[i].label).collect();
        let batch = Batch::new(images, labels, classes)?;
        let sdfs = if cfg.mode.uses_sdf() {
            idx.iter().map(|&i| sdf_cache[i].clone()).collect()
        } else {
            Vec::new()
        };
        let record = train_step(&mut state, &PreparedBatch { batch, sdfs }, cfg)?;
        history.push(record);
    }
    Ok((state.params, history))
}

/// First maximal logit index; ties resolve to the lowest class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Clean accuracy on raw inputs and, when an attack is supplied,
/// robust accuracy on per-sample attacked inputs. Inference is the
/// bare classifier; no shape encoding or de-biasing runs here.
pub fn evaluate(
    params: &ModelParams,
    dataset: &[Sample],
    attack: Option<&AttackConfig>,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = params.shape.classes;
    let mut clean_correct = 0usize;
    for s in dataset {
        let batch = Batch::new(vec![s.image.clone()], vec![s.label], classes)?;
        let logits = forward(params, &batch)?;
        if argmax(&logits[0]) == s.label {
            clean_correct += 1;
        }
    }
    let robust_accuracy = match attack {
        None => None,
        Some(cfg) => {
            let mut robust_correct = 0usize;
            for (index, s) in dataset.iter().enumerate() {
                let sample_cfg = AttackConfig {
                    seed: cfg.seed.wrapping_add(index as u64),
                    ..cfg.clone()
                };
                let adv = pgd_attack(params, &s.image, s.label, &sample_cfg)?;
                let batch = Batch::new(vec![adv], vec![s.label], classes)?;
                let logits = forward(params, &batch)?;
                if argmax(&logits[0]) == s.label {
                    robust_correct += 1;
                }
            }
            Some(robust_correct as f64 / dataset.len() as f64)
        }
    };
    Ok(EvalReport {
        clean_accuracy: clean_correct as f64 / dataset.len() as f64,
        robust_accuracy,
        n_samples: dataset.len(),
        attack: attack.cloned(),
    })
}

/// Convenience wrapper for a single image: predicted class.
pub fn predict(params: &ModelParams, image: &Image) -> Result<usize> {
    let batch = Batch::new(vec![image.clone()], vec![0], params.shape.classes)?;
    Ok(argmax(&forward(params, &batch)?[0]))
}
