//! L-infinity projected gradient descent attacks, untargeted and
//! targeted, with per-sample seeded determinism.

use crate::error::Result;
use crate::nn::{input_gradient, Batch, ModelParams};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Image;

/// How the target class is chosen for targeted attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// Seeded uniform draw over classes other than the true label.
    RandomOther,
    /// Always attack toward this class.
    FixedClass(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// L-infinity budget, as a fraction of the [0, 1] dynamic range.
    pub epsilon: f64,
    /// Step size per iteration, same units as epsilon.
    pub eta: f64,
    pub steps: usize,
    pub targeted: bool,
    pub target_rule: TargetRule,
    /// Start from a uniform draw inside the epsilon ball instead of
    /// the clean image.
    pub random_init: bool,
    pub seed: u64,
}

impl AttackConfig {
    /// Untargeted defaults matching the heavier evaluation protocol:
    /// eps 4/255, step 1/255, 100 iterations.
    pub fn untargeted_pgd100() -> Self {
        AttackConfig {
            epsilon: 4.0 / 255.0,
            eta: 1.0 / 255.0,
            steps: 100,
            targeted: false,
            target_rule: TargetRule::RandomOther,
            random_init: true,
            seed: 0,
        }
    }

    /// Targeted defaults: eps 16/255, step 0.4/255, 40 iterations.
    pub fn targeted_pgd40() -> Self {
        AttackConfig {
            epsilon: 16.0 / 255.0,
            eta: 0.4 / 255.0,
            steps: 40,
            targeted: true,
            target_rule: TargetRule::RandomOther,
            random_init: true,
            seed: 0,
        }
    }

    /// A non-blocking advisory: step sizes above the budget waste
    /// iterations on projection.
    pub fn advisory(&self) -> Option<String> {
        (self.eta > self.epsilon).then(|| {
            format!(
                "step size {} exceeds epsilon {}; iterates will saturate the ball",
                self.eta, self.epsilon
            )
        })
    }
}

/// Zero-gradient components take no step; avoids the sign(0) ambiguity.
#[inline]
fn step_sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs PGD from `image` against `params`. Untargeted mode ascends the
/// true-label loss; targeted mode descends the target-label loss. After
/// the initial draw and after every step the iterate is projected onto
/// the epsilon ball around the input and clipped to [0, 1], so the
/// returned image always satisfies both constraints.
pub fn pgd_attack(
    params: &ModelParams,
    image: &Image,
    label: usize,
    cfg: &AttackConfig,
) -> Result<Image> {
    let mut rng = Rng::new(cfg.seed);
    let attack_label = if cfg.targeted {
        match cfg.target_rule {
            TargetRule::FixedClass(k) => k,
            TargetRule::RandomOther => {
                let classes = params.shape.classes;
                let draw = rng.below(classes - 1);
                if draw >= label {
                    draw + 1
                } else {
                    draw
                }
            }
        }
    } else {
        label
    };
    let direction = if cfg.targeted { -1.0 } else { 1.0 };

    let mut x: Vec<f64> = image.data().to_vec();
    if cfg.random_init {
        for (xi, orig) in x.iter_mut().zip(image.data()) {
            *xi = orig + rng.uniform_in(-cfg.epsilon, cfg.epsilon);
        }
        project(&mut x, image.data(), cfg.epsilon);
    }
    for _ in 0..cfg.steps {
        let candidate = image.with_data(x.clone())?;
        let grad = input_gradient(params, &candidate, attack_label)?;
        for (xi, g) in x.iter_mut().zip(grad.data()) {
            *xi += direction * cfg.eta * step_sign(*g);
        }
        project(&mut x, image.data(), cfg.epsilon);
    }
    image.with_data(x)
}

fn project(x: &mut [f64], origin: &[f64], epsilon: f64) {
    for (xi, &o) in x.iter_mut().zip(origin) {
        *xi = xi.clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
    }
}

/// Attacks every sample independently with a per-sample seed of
/// `cfg.seed + index`, so a batch attack equals the per-sample ones.
pub fn attack_batch(params: &ModelParams, batch: &Batch, cfg: &AttackConfig) -> Result<Batch> {
    let mut adv_images = Vec::with_capacity(batch.len());
    for (index, (img, &label)) in batch.images.iter().zip(&batch.labels).enumerate() {
        let sample_cfg = AttackConfig {
            seed: cfg.seed.wrapping_add(index as u64),
            ..cfg.clone()
        };
        adv_images.push(pgd_attack(params, img, label, &sample_cfg)?);
    }
    Batch::new(adv_images, batch.labels.clone(), params.shape.classes)
}

/// Derives a fresh attack seed for an optimizer step, keeping replay
/// deterministic in (config seed, step index).
pub fn step_attack_config(cfg: &AttackConfig, step: u64) -> AttackConfig {
    AttackConfig {
        seed: derive_seed(cfg.seed, step),
        ..cfg.clone()
    }
}
