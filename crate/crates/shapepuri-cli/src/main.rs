//! Command-line surface for the shapepuri pipeline.
//!
//! Subcommands: sdf, gen-data, train, eval, attack. Exit codes:
//! 0 success, 2 configuration error, 3 i/o error, 4 pipeline or
//! numeric error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use shapepuri::adversary::pgd_attack;
use shapepuri::config::RunConfig;
use shapepuri::error::Error;
use shapepuri::imageio::{field_to_pnm, read_pnm, write_field_csv, write_pnm};
use shapepuri::nn::{read_checkpoint, write_checkpoint};
use shapepuri::sem::{fuse, sem_pipeline};
use shapepuri::synth::generate_dataset;
use shapepuri::tensor::Image;
use shapepuri::training::{evaluate, history_to_csv, train_loop};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_PIPELINE: u8 = 4;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn usage_of(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Failure {
        let code = match &err {
            Error::Config(_) => EXIT_CONFIG,
            Error::Io(_) | Error::MalformedPnm(_) | Error::Checkpoint(_) => EXIT_IO,
            _ => EXIT_PIPELINE,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

const USAGE: &str = "\
usage: shapepuri <command> [options]

commands:
  sdf       --config PATH --input IMAGE.pgm --out PREFIX
            write mask.pgm, sdf.csv, sdf_vis.pgm, fused.pgm
  gen-data  --config PATH --out DIR [--seed N]
            export the synthetic dataset as PGM/PPM files + manifest.csv
  train     --config PATH --out CHECKPOINT [--seed N]
            train and write the checkpoint plus CHECKPOINT.history.csv
  eval      --config PATH --checkpoint PATH --attack on|off [--seed N]
            print clean_accuracy= and (if attacked) robust_accuracy=
  attack    --config PATH --checkpoint PATH --input IMAGE.pgm --label N \\
            --out IMAGE.pgm [--seed N]
            write one adversarial example

exit codes: 0 ok, 2 config error, 3 i/o error, 4 pipeline error";

#[derive(Default)]
struct Flags {
    config: Option<PathBuf>,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    label: Option<usize>,
    attack: Option<bool>,
    seed: Option<u64>,
}

fn parse_flags(args: &[String]) -> Result<Flags, Failure> {
    let mut flags = Flags::default();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next()
                .ok_or_else(|| usage_of(EXIT_CONFIG, format!("{flag} needs a value")))
        };
        match flag.as_str() {
            "--config" => flags.config = Some(PathBuf::from(value()?)),
            "--input" => flags.input = Some(PathBuf::from(value()?)),
            "--out" => flags.out = Some(PathBuf::from(value()?)),
            "--checkpoint" => flags.checkpoint = Some(PathBuf::from(value()?)),
            "--label" => {
                flags.label =
                    Some(value()?.parse().map_err(|_| {
                        usage_of(EXIT_CONFIG, "--label must be a non-negative integer")
                    })?)
            }
            "--attack" => {
                flags.attack = Some(match value()?.as_str() {
                    "on" => true,
                    "off" => false,
                    other => {
                        return Err(usage_of(
                            EXIT_CONFIG,
                            format!("--attack must be on or off, got '{other}'"),
                        ))
                    }
                })
            }
            "--seed" => {
                flags.seed = Some(
                    value()?
                        .parse()
                        .map_err(|_| usage_of(EXIT_CONFIG, "--seed must be an integer"))?,
                )
            }
            other => {
                return Err(usage_of(EXIT_CONFIG, format!("unknown flag '{other}'")));
            }
        }
    }
    Ok(flags)
}

fn run(args: &[String]) -> Result<(), Failure> {
    let Some(command) = args.first() else {
        return Err(usage_of(EXIT_CONFIG, USAGE));
    };
    let flags = parse_flags(&args[1..])?;
    match command.as_str() {
        "sdf" => cmd_sdf(flags),
        "gen-data" => cmd_gen_data(flags),
        "train" => cmd_train(flags),
        "eval" => cmd_eval(flags),
        "attack" => cmd_attack(flags),
        "--help" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(usage_of(
            EXIT_CONFIG,
            format!("unknown command '{other}'\n{USAGE}"),
        )),
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig, Failure> {
    let path = flags
        .config
        .as_ref()
        .ok_or_else(|| usage_of(EXIT_CONFIG, "--config is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage_of(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}

fn require<'a, T>(opt: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    opt.as_ref()
        .ok_or_else(|| usage_of(EXIT_CONFIG, format!("{flag} is required")))
}

fn read_image(path: &Path) -> Result<Image, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| usage_of(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    Ok(read_pnm(&bytes)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)
        .map_err(|e| usage_of(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

fn cmd_sdf(flags: Flags) -> Result<(), Failure> {
    let cfg = load_config(&flags)?;
    let input = read_image(require(&flags.input, "--input")?)?;
    let prefix = require(&flags.out, "--out")?;
    let (mask, sdf) = sem_pipeline(&input, cfg.sem())?;
    let fused = fuse(&input, &sdf, cfg.sem().beta)?;

    let mask_img = Image::new(
        mask.height(),
        mask.width(),
        1,
        mask.data().iter().map(|&v| f64::from(v)).collect(),
    )?;
    let prefixed = |name: &str| -> PathBuf {
        let mut s = prefix.as_os_str().to_os_string();
        s.push(name);
        PathBuf::from(s)
    };
    write_file(&prefixed("mask.pgm"), &write_pnm(&mask_img)?)?;
    write_file(&prefixed("sdf.csv"), write_field_csv(&sdf).as_bytes())?;
    write_file(&prefixed("sdf_vis.pgm"), &write_pnm(&field_to_pnm(&sdf))?)?;
    // Fusion can leave [0, 1]; renormalize only for visualization.
    let fused_vis = shapepuri::imageio::field_to_pnm(&shapepuri::tensor::to_grayscale(&fused)?);
    write_file(&prefixed("fused.pgm"), &write_pnm(&fused_vis)?)?;
    Ok(())
}

fn cmd_gen_data(flags: Flags) -> Result<(), Failure> {
    let mut cfg = load_config(&flags)?;
    if let Some(seed) = flags.seed {
        cfg.data.seed = seed;
    }
    let out_dir = require(&flags.out, "--out")?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| usage_of(EXIT_IO, format!("cannot create {}: {e}", out_dir.display())))?;
    let (train, test) = generate_dataset(&cfg.data)?;
    let ext = if cfg.data.channels == 1 { "pgm" } else { "ppm" };
    let mut manifest = String::new();
    for (split, samples) in [("train", &train), ("test", &test)] {
        for (idx, sample) in samples.iter().enumerate() {
            let name = format!("{split}_{idx:05}.{ext}");
            write_file(&out_dir.join(&name), &write_pnm(&sample.image)?)?;
            manifest.push_str(&format!("{name},{}\n", sample.label));
        }
    }
    write_file(&out_dir.join("manifest.csv"), manifest.as_bytes())?;
    Ok(())
}

fn cmd_train(flags: Flags) -> Result<(), Failure> {
    let mut cfg = load_config(&flags)?;
    if let Some(seed) = flags.seed {
        cfg.train.seed = seed;
    }
    let out = require(&flags.out, "--out")?;
    let (train_set, _) = generate_dataset(&cfg.data)?;
    let log_every = (cfg.train.total_steps / 10).max(1);
    eprintln!(
        "training: mode={} steps={} batch={} n={}",
        cfg.train.mode.as_str(),
        cfg.train.total_steps,
        cfg.train.batch_size,
        train_set.len()
    );
    let (params, history) = train_loop(&train_set, &cfg.train)?;
    for rec in history.iter().filter(|r| r.step % log_every == 0) {
        eprintln!(
            "step {:>6}  lr {:.3e}  l_total {:.6}",
            rec.step, rec.lr, rec.l_total
        );
    }
    write_file(out, &write_checkpoint(&params))?;
    let mut history_path = out.as_os_str().to_os_string();
    history_path.push(".history.csv");
    write_file(
        &PathBuf::from(history_path),
        history_to_csv(&history).as_bytes(),
    )?;
    Ok(())
}

fn cmd_eval(flags: Flags) -> Result<(), Failure> {
    let mut cfg = load_config(&flags)?;
    if let Some(seed) = flags.seed {
        cfg.train.attack.seed = seed;
    }
    let checkpoint_path = require(&flags.checkpoint, "--checkpoint")?;
    let bytes = std::fs::read(checkpoint_path).map_err(|e| {
        usage_of(
            EXIT_IO,
            format!("cannot read {}: {e}", checkpoint_path.display()),
        )
    })?;
    let params = read_checkpoint(&bytes)?;
    let (_, test_set) = generate_dataset(&cfg.data)?;
    let attacked = flags.attack.unwrap_or(false);
    if attacked {
        if let Some(note) = cfg.attack().advisory() {
            eprintln!("warning: {note}");
        }
    }
    let attack = attacked.then(|| cfg.attack().clone());
    let report = evaluate(&params, &test_set, attack.as_ref())?;
    println!("clean_accuracy={:.6}", report.clean_accuracy);
    if let Some(robust) = report.robust_accuracy {
        println!("robust_accuracy={robust:.6}");
    }
    Ok(())
}

fn cmd_attack(flags: Flags) -> Result<(), Failure> {
    let mut cfg = load_config(&flags)?;
    if let Some(seed) = flags.seed {
        cfg.train.attack.seed = seed;
    }
    let checkpoint_path = require(&flags.checkpoint, "--checkpoint")?;
    let bytes = std::fs::read(checkpoint_path).map_err(|e| {
        usage_of(
            EXIT_IO,
            format!("cannot read {}: {e}", checkpoint_path.display()),
        )
    })?;
    let params = read_checkpoint(&bytes)?;
    let image = read_image(require(&flags.input, "--input")?)?;
    let label = *require(&flags.label, "--label")?;
    let out = require(&flags.out, "--out")?;
    let adv = pgd_attack(&params, &image, label, cfg.attack())?;
    write_file(out, &write_pnm(&adv)?)?;
    Ok(())
}
