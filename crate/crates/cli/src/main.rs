mod pgm;
mod run_config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use swinlstm::data::{build_dataset, load_idx, GeneratorConfig, SampleType, SequenceDataset, Sprites};
use swinlstm::train::{evaluate, Checkpoint, Trainer};
use swinlstm::{selfcheck, Error, Model, Result, Tensor};

use run_config::{RunConfig, KEYS};

#[derive(Parser)]
#[command(name = "swinlstm", version, about = "SwinLSTM spatiotemporal predictor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    U8,
    F32,
    F64,
}

impl From<Dtype> for SampleType {
    fn from(d: Dtype) -> Self {
        match d {
            Dtype::U8 => SampleType::U8,
            Dtype::F32 => SampleType::F32,
            Dtype::F64 => SampleType::F64,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bouncing-digit dataset.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10000)]
        count: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        /// IDX image file to draw digits from (procedural glyphs otherwise).
        #[arg(long)]
        mnist_images: Option<PathBuf>,
        /// Canvas side in pixels; sprites and speeds scale with it.
        #[arg(long, default_value_t = 64)]
        canvas: usize,
        #[arg(long, value_enum, default_value_t = Dtype::F32)]
        dtype: Dtype,
    },
    /// Train a model (warm-up then rollout per sequence).
    #[command(after_help = config_help())]
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Any config key, as `key=value` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score rollouts against ground truth.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        /// Observed frames per sequence (default: half the sequence).
        #[arg(long)]
        inputs: Option<usize>,
        /// Per-frame CSV report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// Score only the first N sequences (0: all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
    },
    /// Roll out one sequence and dump frames as PGM images.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long)]
        inputs: Option<usize>,
        #[arg(long)]
        dump_dir: PathBuf,
        /// Also dump channel-mean images of hidden, cell and STB outputs.
        #[arg(long)]
        dump_states: bool,
    },
    /// Gradient checks, window-op roundtrips, mask oracle and cell algebra.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: break the backward rule of the named op.
        #[arg(long, hide = true)]
        corrupt_backward: Option<String>,
    },
}

fn config_help() -> String {
    let mut s = String::from("Config file keys (`key = value`, `#` comments; flags override the file):\n");
    for (k, doc) in KEYS {
        s.push_str(&format!("  {k:<24} {doc}\n"));
    }
    s
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData {
            seed,
            count,
            frames,
            out,
            mnist_images,
            canvas,
            dtype,
        } => gen_data(seed, count, frames, &out, mnist_images.as_deref(), canvas, dtype.into()),
        Command::Train {
            config,
            data,
            val,
            out_dir,
            resume,
            seed,
            epochs,
            batch_size,
            learning_rate,
            set,
        } => {
            let mut overrides = Vec::new();
            for kv in &set {
                match kv.split_once('=') {
                    Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
                    None => return Err(Error::Config(vec![format!("--set expects KEY=VALUE, got `{kv}`")])),
                }
            }
            let flags = [
                ("seed", seed.map(|v| v.to_string())),
                ("epochs", epochs.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("learning_rate", learning_rate.map(|v| v.to_string())),
            ];
            overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            train(
                cfg,
                config.is_some(),
                &data,
                val.as_deref(),
                &out_dir,
                resume.as_deref(),
            )
        }
        Command::Eval {
            ckpt,
            data,
            horizon,
            inputs,
            report,
            batch_size,
            limit,
        } => eval(&ckpt, &data, horizon, inputs, report.as_deref(), batch_size, limit),
        Command::Predict {
            ckpt,
            input,
            index,
            horizon,
            inputs,
            dump_dir,
            dump_states,
        } => predict(&ckpt, &input, index, horizon, inputs, &dump_dir, dump_states),
        Command::Selfcheck { seed, corrupt_backward } => {
            let report = selfcheck::run(seed, corrupt_backward.as_deref())?;
            for c in &report.checks {
                println!("{c}");
            }
            println!("{report}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn gen_data(
    seed: u64,
    count: usize,
    frames: usize,
    out: &Path,
    mnist: Option<&Path>,
    canvas: usize,
    dtype: SampleType,
) -> Result<ExitCode> {
    let mut problems = Vec::new();
    if count == 0 {
        problems.push("--count must be at least 1".to_string());
    }
    if frames == 0 {
        problems.push("--frames must be at least 1".to_string());
    }
    if canvas < 8 {
        problems.push(format!("--canvas {canvas} is too small (minimum 8)"));
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let cfg = GeneratorConfig::for_canvas(canvas, frames);
    let bitmaps = mnist
        .map(|p| with_path(p, load_idx(p, None)))
        .transpose()?
        .map(|(b, _)| b);
    let sprites = match &bitmaps {
        Some(b) => Sprites::Bitmaps(b),
        None => Sprites::Procedural,
    };
    let mut ds = build_dataset(seed, count, &cfg, sprites)?;
    ds.header.dtype = dtype;
    let bytes = ds.write(out)?;
    println!(
        "wrote {count} sequences x {frames} frames ({canvas}x{canvas}) to {}: {bytes} bytes, seed {seed}",
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(
    cfg: RunConfig,
    model_from_config: bool,
    data: &Path,
    val: Option<&Path>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<ExitCode> {
    let data = read_dataset(data)?;
    let val = val.map(read_dataset).transpose()?;
    let mut trainer = match resume {
        Some(p) => {
            let expected = model_from_config.then_some(&cfg.model);
            let ck = with_path(p, Checkpoint::<f32>::load(p, expected))?;
            println!(
                "resuming from {} at epoch {}, step {}",
                p.display(),
                ck.epoch,
                ck.store.step
            );
            Trainer::resume(ck, cfg.train.clone())?
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    fs::create_dir_all(out_dir)?;
    let effective = RunConfig {
        model: trainer.model.config.clone(),
        train: cfg.train,
    };
    fs::write(out_dir.join("config.txt"), effective.to_text())?;
    trainer.run(&data, val.as_ref(), Some(out_dir), |line| println!("{line}"))?;
    println!("checkpoint {}", out_dir.join("last.swls").display());
    Ok(ExitCode::SUCCESS)
}

/// Names the file in I/O errors, which otherwise carry no path.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn read_dataset(path: &Path) -> Result<SequenceDataset> {
    with_path(path, SequenceDataset::read(path))
}

fn load_model(ckpt: &Path) -> Result<(Model, Checkpoint<f32>)> {
    let ck = with_path(ckpt, Checkpoint::<f32>::load(ckpt, None))?;
    let (model, _) = Model::init::<f32>(ck.config.clone(), 0)?;
    Ok((model, ck))
}

fn default_inputs(inputs: Option<usize>, frames: usize) -> Result<usize> {
    let n = inputs.unwrap_or(frames / 2).max(1);
    if n > frames {
        return Err(Error::Config(vec![format!(
            "--inputs {n} exceeds the {frames}-frame sequences"
        )]));
    }
    Ok(n)
}

fn eval(
    ckpt: &Path,
    data: &Path,
    horizon: usize,
    inputs: Option<usize>,
    report: Option<&Path>,
    batch_size: usize,
    limit: usize,
) -> Result<ExitCode> {
    if horizon == 0 {
        return Err(Error::Config(vec!["--horizon must be at least 1".into()]));
    }
    let (model, ck) = load_model(ckpt)?;
    let data = read_dataset(data)?;
    let inputs = default_inputs(inputs, data.header.frames)?;
    let rep = evaluate(&model, &ck.store, &data, inputs, horizon, batch_size, limit)?;
    let scored = rep.per_frame.len();
    if scored < horizon {
        println!("note: horizon {horizon} runs past the data; scoring the {scored} steps with ground truth");
    }
    println!("{}", rep.summary());
    if let Some(p) = report {
        fs::write(p, rep.to_csv())?;
        println!("report {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn predict(
    ckpt: &Path,
    input: &Path,
    index: usize,
    horizon: usize,
    inputs: Option<usize>,
    dump_dir: &Path,
    dump_states: bool,
) -> Result<ExitCode> {
    if horizon == 0 {
        return Err(Error::Config(vec!["--horizon must be at least 1".into()]));
    }
    let (model, ck) = load_model(ckpt)?;
    let data = read_dataset(input)?;
    let h = data.header.clone();
    let inputs = default_inputs(inputs, h.frames)?;
    let seq = data.sequence(index)?;
    let frame_len = h.frame_len();
    let batch = data.batch::<f32>(&[index], inputs)?;
    let (pred, traces) = model.rollout_traced(&ck.store, &batch.input()?, horizon, dump_states)?;
    fs::create_dir_all(dump_dir)?;
    // Multi-channel frames are dumped as their channel mean.
    let plane = |frame: &[f32]| -> Vec<f64> {
        let hw = h.height * h.width;
        (0..hw)
            .map(|p| (0..h.channels).map(|c| frame[c * hw + p] as f64).sum::<f64>() / h.channels as f64)
            .collect()
    };
    let mut written = 0;
    let mut dump = |name: String, values: &[f64], gh: usize, gw: usize| -> Result<()> {
        pgm::write(&dump_dir.join(name), gh, gw, values)?;
        written += 1;
        Ok(())
    };
    for t in 0..h.frames {
        let frame = plane(&seq[t * frame_len..(t + 1) * frame_len]);
        let name = if t < inputs {
            format!("input_{t:02}.pgm")
        } else {
            format!("truth_{:02}.pgm", t - inputs)
        };
        dump(name, &frame, h.height, h.width)?;
    }
    for (t, frame) in pred.data().chunks(frame_len).enumerate() {
        dump(format!("pred_{t:02}.pgm"), &plane(frame), h.height, h.width)?;
    }
    for (t, step) in traces.iter().enumerate() {
        for (name, tensor) in step {
            let (gh, gw, values) = channel_mean(tensor)?;
            dump(format!("{name}_{t:02}.pgm"), &pgm::normalize(&values), gh, gw)?;
        }
    }
    println!("wrote {written} images to {}", dump_dir.display());
    Ok(ExitCode::SUCCESS)
}

/// Channel mean of the first batch element of a `(B, H, W, D)` feature map.
fn channel_mean(t: &Tensor<f32>) -> Result<(usize, usize, Vec<f64>)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArgument {
            op: "predict",
            msg: format!("feature map of shape {s:?}"),
        });
    }
    let (gh, gw, d) = (s[1], s[2], s[3]);
    let values = t.data()[..gh * gw * d]
        .chunks(d)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / d as f64)
        .collect();
    Ok((gh, gw, values))
}
