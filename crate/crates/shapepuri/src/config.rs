//! Flat INI-style run configuration.
//!
//! Six sections mirror the library's config structs by exact
//! lowercase snake_case key names:
//!
//! ```ini
//! [data]    ; dataset generation
//! n_train = 256
//! classes = disk,square,triangle,annulus
//! [sem]     ; shape encoding (sigma, tau, delta, beta)
//! [gad]     ; de-biasing policy (variant)
//! [model]   ; reserved; no keys defined
//! [attack]  ; PGD configuration
//! [train]   ; optimization schedule and mode
//! ```
//!
//! Every key is optional with library defaults; unknown sections or
//! keys are hard errors, raised before any computation starts.

use crate::adversary::{AttackConfig, TargetRule};
use crate::error::{Error, Result};
use crate::gad::GadVariant;
use crate::sem::SemConfig;
use crate::synth::{DataConfig, ShapeClass};
use crate::training::{Optimizer, TrainConfig, TrainMode};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Shape-encoding parameters (shared with the training config).
    pub fn sem(&self) -> &SemConfig {
        &self.train.sem
    }

    pub fn attack(&self) -> &AttackConfig {
        &self.train.attack
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let sections = split_sections(text)?;
        for section in sections.keys() {
            if !["data", "sem", "gad", "model", "attack", "train"].contains(&section.as_str()) {
                return Err(Error::Config(format!("unknown section [{section}]")));
            }
        }
        let empty = Vec::new();
        let get = |name: &str| sections.get(name).unwrap_or(&empty);

        let mut data = DataConfig::default();
        for (key, value, line) in get("data") {
            match key.as_str() {
                "n_train" => data.n_train = parse_num(value, key, *line)?,
                "n_test" => data.n_test = parse_num(value, key, *line)?,
                "height" => data.height = parse_num(value, key, *line)?,
                "width" => data.width = parse_num(value, key, *line)?,
                "channels" => data.channels = parse_num(value, key, *line)?,
                "classes" => {
                    data.classes = value
                        .split(',')
                        .map(|s| ShapeClass::parse(s.trim()))
                        .collect::<Result<Vec<_>>>()?;
                }
                "texture_noise" => data.texture_noise = parse_num(value, key, *line)?,
                "intensity_jitter" => data.intensity_jitter = parse_num(value, key, *line)?,
                "seed" => data.seed = parse_num(value, key, *line)?,
                other => return Err(unknown_key("data", other, *line)),
            }
        }

        let mut sem = SemConfig::default_for(data.height, data.width);
        for (key, value, line) in get("sem") {
            match key.as_str() {
                "sigma" => sem.sigma = parse_num(value, key, *line)?,
                "tau" => sem.tau = parse_num(value, key, *line)?,
                "delta" => sem.delta = parse_num(value, key, *line)?,
                "beta" => sem.beta = parse_num(value, key, *line)?,
                other => return Err(unknown_key("sem", other, *line)),
            }
        }

        let mut gad_variant = GadVariant::Convolution;
        for (key, value, line) in get("gad") {
            match key.as_str() {
                "variant" => gad_variant = GadVariant::parse(value)?,
                other => return Err(unknown_key("gad", other, *line)),
            }
        }

        if let Some((key, _, line)) = get("model").first() {
            return Err(unknown_key("model", key, *line));
        }

        let mut attack = TrainConfig::default_for(data.height, data.width).attack;
        for (key, value, line) in get("attack") {
            match key.as_str() {
                "epsilon" => attack.epsilon = parse_num(value, key, *line)?,
                "eta" => attack.eta = parse_num(value, key, *line)?,
                "steps" => attack.steps = parse_num(value, key, *line)?,
                "targeted" => attack.targeted = parse_bool(value, key, *line)?,
                "target_rule" => {
                    attack.target_rule = if *value == "random-other" {
                        TargetRule::RandomOther
                    } else if let Some(k) = value.strip_prefix("fixed-class:") {
                        TargetRule::FixedClass(parse_num(k, key, *line)?)
                    } else {
                        return Err(Error::Config(format!(
                            "line {line}: target_rule must be 'random-other' or 'fixed-class:K'"
                        )));
                    };
                }
                "random_init" => attack.random_init = parse_bool(value, key, *line)?,
                "seed" => attack.seed = parse_num(value, key, *line)?,
                other => return Err(unknown_key("attack", other, *line)),
            }
        }

        let mut train = TrainConfig {
            attack,
            sem,
            gad_variant,
            ..TrainConfig::default_for(data.height, data.width)
        };
        for (key, value, line) in get("train") {
            match key.as_str() {
                "lr0" => train.lr0 = parse_num(value, key, *line)?,
                "step_period" => train.step_period = parse_num(value, key, *line)?,
                "decay" => train.decay = parse_num(value, key, *line)?,
                "batch_size" => train.batch_size = parse_num(value, key, *line)?,
                "total_steps" => train.total_steps = parse_num(value, key, *line)?,
                "optimizer" => train.optimizer = Optimizer::parse(value)?,
                "mode" => train.mode = TrainMode::parse(value)?,
                "seed" => train.seed = parse_num(value, key, *line)?,
                other => return Err(unknown_key("train", other, *line)),
            }
        }

        data.validate()?;
        train.validate()?;
        Ok(RunConfig { data, train })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse("").expect("empty config uses pure defaults")
    }
}

fn unknown_key(section: &str, key: &str, line: usize) -> Error {
    Error::Config(format!("line {line}: unknown key '{key}' in [{section}]"))
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value '{value}' for {key}")))
}

fn parse_bool(value: &str, key: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "line {line}: bad boolean '{value}' for {key}"
        ))),
    }
}

type SectionMap = std::collections::BTreeMap<String, Vec<(String, String, usize)>>;

fn split_sections(text: &str) -> Result<SectionMap> {
    let mut sections: SectionMap = Default::default();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        // Comments start with '#' or ';'.
        let line = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section")))?
                .trim()
                .to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {line_no}: expected 'key = value', got '{line}'"
            )));
        };
        let section = current
            .clone()
            .ok_or_else(|| Error::Config(format!("line {line_no}: key before any section")))?;
        sections.entry(section).or_default().push((
            key.trim().to_string(),
            value.trim().to_string(),
            line_no,
        ));
    }
    Ok(sections)
}
