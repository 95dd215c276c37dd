//! Browser demo bindings: interactive shape encoding, appearance
//! de-biasing, and a live attack-vs-defense experiment, all running
//! in wasm on synthetic shapes.
//!
//! Build with `wasm-pack build --target web crates/shapepuri-wasm`
//! and open `www/index.html` from a static server.

use wasm_bindgen::prelude::*;

use shapepuri::adversary::{pgd_attack, AttackConfig, TargetRule};
use shapepuri::gad::{apply_gad, sample_gad, GadVariant};
use shapepuri::sem::{fuse, sem_pipeline, SemConfig};
use shapepuri::synth::{generate_dataset, generate_single, DataConfig, ShapeClass};
use shapepuri::tensor::{to_grayscale, Image, ScalarField};
use shapepuri::training::{evaluate, predict, train_loop, TrainConfig, TrainMode};

fn parse_class(name: &str) -> Result<ShapeClass, JsValue> {
    ShapeClass::parse(name).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn demo_data_config(size: usize, texture_noise: f64, seed: u64) -> DataConfig {
    DataConfig {
        n_train: 1,
        n_test: 1,
        height: size,
        width: size,
        texture_noise,
        intensity_jitter: 0.3,
        seed,
        ..DataConfig::default()
    }
}

/// Grayscale [0,1] values to RGBA bytes.
fn gray_rgba(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend_from_slice(&[b, b, b, 255]);
    }
    out
}

/// Signed field to a blue-white-red diverging map over [-1, 1].
fn diverging_rgba(field: &ScalarField) -> Vec<u8> {
    let peak = field.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let mut out = Vec::with_capacity(field.data().len() * 4);
    for &v in field.data() {
        let t = v * scale;
        let (r, g, b) = if t >= 0.0 {
            // white -> red
            (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
        } else {
            // white -> blue
            (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
        };
        out.extend_from_slice(&[r as u8, g as u8, b as u8, 255]);
    }
    out
}

fn image_rgba(image: &Image) -> Vec<u8> {
    let gray = to_grayscale(image).expect("demo images are 1- or 3-channel");
    gray_rgba(gray.data())
}

/// Min-max normalized RGBA rendering for images that may leave [0,1].
fn image_rgba_normalized(image: &Image) -> Vec<u8> {
    let gray = to_grayscale(image).expect("demo images are 1- or 3-channel");
    let lo = gray.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gray
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    gray_rgba(
        &gray
            .data()
            .iter()
            .map(|v| (v - lo) / span)
            .collect::<Vec<_>>(),
    )
}

/// The shape-encoding walkthrough: input, refined mask, signed
/// distance field, and the fused image, each as an RGBA buffer.
#[wasm_bindgen]
pub struct SdfPanels {
    size: usize,
    input: Vec<u8>,
    mask: Vec<u8>,
    sdf: Vec<u8>,
    fused: Vec<u8>,
}

#[wasm_bindgen]
impl SdfPanels {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn input(&self) -> Vec<u8> {
        self.input.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mask(&self) -> Vec<u8> {
        self.mask.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sdf(&self) -> Vec<u8> {
        self.sdf.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn fused(&self) -> Vec<u8> {
        self.fused.clone()
    }
}

/// Runs the full shape-encoding pipeline on one synthetic sample.
#[wasm_bindgen]
pub fn sdf_panels(
    class: &str,
    size: usize,
    texture_noise: f64,
    seed: u64,
    sigma: f64,
    beta: f64,
) -> Result<SdfPanels, JsValue> {
    let class = parse_class(class)?;
    let data_cfg = demo_data_config(size, texture_noise, seed);
    let sample =
        generate_single(&data_cfg, class, seed).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let sem_cfg = SemConfig {
        sigma,
        beta,
        ..SemConfig::default_for(size, size)
    };
    let (mask, sdf) =
        sem_pipeline(&sample.image, &sem_cfg).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let fused = fuse(&sample.image, &sdf, beta).map_err(|e| JsValue::from_str(&e.to_string()))?;
    Ok(SdfPanels {
        size,
        input: image_rgba(&sample.image),
        mask: gray_rgba(
            &mask
                .data()
                .iter()
                .map(|&v| f64::from(v))
                .collect::<Vec<_>>(),
        ),
        sdf: diverging_rgba(&sdf),
        fused: image_rgba_normalized(&fused),
    })
}

/// Before/after pair for the stochastic appearance de-biasing.
#[wasm_bindgen]
pub struct GadPanels {
    size: usize,
    input: Vec<u8>,
    output: Vec<u8>,
    alpha: f64,
}

#[wasm_bindgen]
impl GadPanels {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn input(&self) -> Vec<u8> {
        self.input.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn output(&self) -> Vec<u8> {
        self.output.clone()
    }

    /// The sampled interpolation coefficient actually applied.
    #[wasm_bindgen(getter)]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Applies a freshly sampled de-biasing transform. `alpha_override`
/// outside [0,1] keeps the sampled coefficient.
#[wasm_bindgen]
pub fn gad_panels(
    class: &str,
    size: usize,
    texture_noise: f64,
    image_seed: u64,
    variant: &str,
    transform_seed: u64,
    alpha_override: f64,
) -> Result<GadPanels, JsValue> {
    let class = parse_class(class)?;
    let variant = GadVariant::parse(variant).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let data_cfg = demo_data_config(size, texture_noise, image_seed);
    let sample = generate_single(&data_cfg, class, image_seed)
        .map_err(|e| JsValue::from_str(&e.to_string()))?;
    let mut params = sample_gad(transform_seed, 1, size, size, variant);
    if (0.0..=1.0).contains(&alpha_override) {
        params.alpha = alpha_override;
    }
    let output =
        apply_gad(&sample.image, &params).map_err(|e| JsValue::from_str(&e.to_string()))?;
    Ok(GadPanels {
        size,
        input: image_rgba(&sample.image),
        output: image_rgba_normalized(&output),
        alpha: params.alpha,
    })
}

/// Outcome of the in-browser attack experiment on a micro model.
#[wasm_bindgen]
pub struct AttackDemo {
    size: usize,
    clean: Vec<u8>,
    adversarial: Vec<u8>,
    perturbation: Vec<u8>,
    clean_prediction: String,
    adversarial_prediction: String,
    true_class: String,
    clean_accuracy: f64,
    robust_accuracy: f64,
}

#[wasm_bindgen]
impl AttackDemo {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn clean(&self) -> Vec<u8> {
        self.clean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn adversarial(&self) -> Vec<u8> {
        self.adversarial.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn perturbation(&self) -> Vec<u8> {
        self.perturbation.clone()
    }

    #[wasm_bindgen(getter = cleanPrediction)]
    pub fn clean_prediction(&self) -> String {
        self.clean_prediction.clone()
    }

    #[wasm_bindgen(getter = adversarialPrediction)]
    pub fn adversarial_prediction(&self) -> String {
        self.adversarial_prediction.clone()
    }

    #[wasm_bindgen(getter = trueClass)]
    pub fn true_class(&self) -> String {
        self.true_class.clone()
    }

    #[wasm_bindgen(getter = cleanAccuracy)]
    pub fn clean_accuracy(&self) -> f64 {
        self.clean_accuracy
    }

    #[wasm_bindgen(getter = robustAccuracy)]
    pub fn robust_accuracy(&self) -> f64 {
        self.robust_accuracy
    }
}

/// Trains a micro classifier (16x16, disk vs square vs triangle) with
/// the chosen objective, then attacks one test sample and reports
/// accuracies over a small test set. Heavy enough to feel real, light
/// enough for a click.
#[wasm_bindgen]
pub fn attack_demo(
    mode: &str,
    train_steps: usize,
    epsilon: f64,
    attack_steps: usize,
    seed: u64,
) -> Result<AttackDemo, JsValue> {
    let err = |e: shapepuri::Error| JsValue::from_str(&e.to_string());
    let mode = TrainMode::parse(mode).map_err(err)?;
    let size = 16;
    let data_cfg = DataConfig {
        n_train: 96,
        n_test: 48,
        height: size,
        width: size,
        classes: vec![ShapeClass::Disk, ShapeClass::Square, ShapeClass::Triangle],
        texture_noise: 0.4,
        intensity_jitter: 0.3,
        seed,
        ..DataConfig::default()
    };
    let (train, test) = generate_dataset(&data_cfg).map_err(err)?;
    let train_cfg = TrainConfig {
        lr0: 2e-3,
        total_steps: train_steps.clamp(1, 2000),
        batch_size: 16,
        mode,
        optimizer: shapepuri::training::Optimizer::Adam,
        seed,
        attack: AttackConfig {
            epsilon: 8.0 / 255.0,
            eta: 2.0 / 255.0,
            steps: 0,
            targeted: false,
            target_rule: TargetRule::RandomOther,
            random_init: false,
            seed,
        },
        ..TrainConfig::default_for(size, size)
    };
    let (params, _) = train_loop(&train, &train_cfg).map_err(err)?;

    let attack = AttackConfig {
        epsilon,
        eta: (epsilon / 4.0).max(1.0 / 255.0),
        steps: attack_steps.clamp(1, 200),
        targeted: false,
        target_rule: TargetRule::RandomOther,
        random_init: true,
        seed,
    };
    let report = evaluate(&params, &test, Some(&attack)).map_err(err)?;

    let victim = &test[0];
    let adv = pgd_attack(&params, &victim.image, victim.label, &attack).map_err(err)?;
    let clean_pred = predict(&params, &victim.image).map_err(err)?;
    let adv_pred = predict(&params, &adv).map_err(err)?;
    let class_name = |k: usize| data_cfg.classes[k].as_str().to_string();

    let delta: Vec<f64> = adv
        .data()
        .iter()
        .zip(victim.image.data())
        .map(|(a, c)| a - c)
        .collect();
    let delta_field = ScalarField::new(size, size, delta).map_err(err)?;

    Ok(AttackDemo {
        size,
        clean: image_rgba(&victim.image),
        adversarial: image_rgba(&adv),
        perturbation: diverging_rgba(&delta_field),
        clean_prediction: class_name(clean_pred),
        adversarial_prediction: class_name(adv_pred),
        true_class: class_name(victim.label),
        clean_accuracy: report.clean_accuracy,
        robust_accuracy: report.robust_accuracy.unwrap_or(0.0),
    })
}
