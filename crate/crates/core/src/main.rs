use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ddcnet::erf::{compute_erf, render_erf, write_profile_csv, ErfChannel, ErfStageSummary};
use ddcnet::error::{Error, Result};
use ddcnet::flow_io::{
    generate_sample, read_dataset, read_flo, write_dataset, write_flo, DatasetManifest, FlowField, GenConfig,
    RgbImage, SampleFiles,
};
use ddcnet::metrics::{error_map, evaluate, flow_to_color};
use ddcnet::model::{default_config, infer, load_checkpoint, ModelConfig, Stage};
use ddcnet::training::{evaluate_model, state_path, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "ddcnet", version, about = "Multi-resolution dilated-convolution optical flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic layered-affine dataset.
    Datagen(DatagenArgs),
    /// Train (or resume training) a model.
    Train(TrainArgs),
    /// Estimate flow for one frame pair.
    Infer(InferArgs),
    /// Score a checkpoint or stored predictions against a dataset.
    Eval(EvalArgs),
    /// Effective receptive fields of the cascade stages.
    Erf(ErfArgs),
    /// Render a .flo file as a colour image or an error map.
    Viz(VizArgs),
}

#[derive(Args, Serialize)]
struct DatagenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 12.0)]
    max_disp: f32,
    #[arg(long, default_value_t = 3)]
    sprites: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    max_rot: f32,
    #[arg(long, default_value_t = 0.05)]
    scale_jitter: f32,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Held-out set; defaults to a subset of the training data.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// JSON training config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON model config; defaults to the canonical architecture.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// CSV log path; defaults to `<out>.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from `<out>` and `<out>.state` when they exist.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    img1: PathBuf,
    #[arg(long)]
    img2: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    viz: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    ckpt: Option<PathBuf>,
    /// Directory of `NNNNN_flow.flo` predictions to score instead of a model.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct ErfArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// coarsest, fine, finest or all.
    #[arg(long, default_value = "all")]
    probe: String,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
    /// Probe frames from this dataset instead of fresh synthetic pairs.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 12.0)]
    max_disp: f32,
    #[arg(long, default_value_t = 1_000_000)]
    seed: u64,
    /// u, v or both.
    #[arg(long, default_value = "both")]
    channel: String,
}

#[derive(Args, Serialize)]
struct VizArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render the endpoint error against this ground-truth .flo instead.
    #[arg(long)]
    error_against: Option<PathBuf>,
    #[arg(long)]
    max_mag: Option<f32>,
}

fn log_config(name: &str, args: &impl Serialize) -> Result<()> {
    eprintln!("{name} {}", serde_json::to_string(args)?);
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn datagen(a: DatagenArgs) -> Result<()> {
    log_config("datagen", &a)?;
    let gen = GenConfig {
        max_rot_deg: a.max_rot,
        scale_jitter: a.scale_jitter,
        ..GenConfig::new(a.size, a.sprites, a.max_disp)
    };
    gen.validate()?;
    let seeds: Vec<u64> = (0..a.count as u64).map(|i| a.seed.wrapping_add(i)).collect();
    let samples = seeds.iter().map(|&s| generate_sample(s, &gen)).collect::<Result<Vec<_>>>()?;
    write_dataset(&a.out, &DatasetManifest { generator: gen, seeds }, &samples)
}

fn train(a: TrainArgs) -> Result<()> {
    let file_cfg: Option<TrainConfig> = a.config.as_deref().map(read_json).transpose()?;
    let overrides = |mut cfg: TrainConfig| {
        if let Some(n) = a.max_iters {
            cfg.max_iters = n;
        }
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        cfg
    };
    let model: ModelConfig = match &a.model {
        Some(p) => read_json(p)?,
        None => default_config(),
    };
    let train_set = read_dataset(&a.data)?;
    let eval_set = a.eval.as_deref().map(read_dataset).transpose()?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".csv");
        PathBuf::from(s)
    });

    let resuming = a.resume && a.out.exists() && state_path(&a.out).exists();
    // a resumed run keeps its stored config unless one is given explicitly
    let mut trainer = if resuming {
        let mut t = Trainer::resume(&a.out, file_cfg)?;
        t.cfg = overrides(t.cfg.clone());
        t.cfg.validate()?;
        t
    } else {
        Trainer::new(model, overrides(file_cfg.unwrap_or_default()))?
    };
    eprintln!(
        "train {}",
        serde_json::json!({ "args": &a, "train": &trainer.cfg, "model": &trainer.model, "resumed_at": trainer.iter })
    );
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resuming)
        .write(true)
        .truncate(!resuming)
        .open(&log_path)?;
    let summary = trainer.run(&train_set, eval_set.as_deref(), Some(&mut log as &mut dyn Write), Some(&a.out))?;
    trainer.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({
            "iters": summary.iters,
            "train_loss": summary.last_train_loss,
            "eval_aee": summary.last_eval_aee,
            "reached_target": summary.reached_target,
        })
    );
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    log_config("infer", &a)?;
    let (cfg, params) = load_checkpoint(&fs::read(&a.ckpt)?)?;
    let img1 = RgbImage::load_png(&a.img1)?;
    let img2 = RgbImage::load_png(&a.img2)?;
    if (img1.h, img1.w) != (img2.h, img2.w) {
        return Err(Error::Input(format!(
            "frames differ in size: {}x{} vs {}x{}",
            img1.h, img1.w, img2.h, img2.w
        )));
    }
    let (h, w) = (img1.h, img1.w);
    let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
    let (f1, f2) = if (ph, pw) != (h, w) {
        eprintln!("warning: {h}x{w} is not a multiple of 4; reflect-padding to {ph}x{pw} and cropping the result");
        (img1.pad_reflect(ph, pw)?, img2.pad_reflect(ph, pw)?)
    } else {
        (img1, img2)
    };
    let out = infer(&cfg, &params, &f1.to_tensor(), &f2.to_tensor())?;
    let flow = FlowField::from_tensor(&out.flow_final, 0)?.crop(h, w)?;
    fs::write(&a.out, write_flo(&flow))?;
    if let Some(p) = &a.viz {
        flow_to_color(&flow, None).save(p).map_err(Error::from)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    log_config("eval", &a)?;
    let data = read_dataset(&a.data)?;
    let report = if let Some(ckpt) = &a.ckpt {
        let (cfg, params) = load_checkpoint(&fs::read(ckpt)?)?;
        evaluate_model(&cfg, &params, &data)?
    } else {
        let dir = a.pred.as_deref().expect("clap enforces --ckpt or --pred");
        let preds = (0..data.len())
            .map(|i| read_flo(&fs::read(SampleFiles::new(dir, i).flow)?))
            .collect::<Result<Vec<_>>>()?;
        evaluate(
            preds
                .iter()
                .zip(&data)
                .enumerate()
                .map(|(i, (p, s))| (format!("{i:05}"), p, &s.gt)),
        )?
    };
    fs::write(&a.report, serde_json::to_vec_pretty(&report)?)?;
    println!("{}", serde_json::json!({ "aee": report.aee, "fl_all": report.fl_all, "n_pixels": report.n_pixels }));
    Ok(())
}

fn erf_cmd(a: ErfArgs) -> Result<()> {
    log_config("erf", &a)?;
    let stages: Vec<Stage> = if a.probe == "all" {
        Stage::ALL.to_vec()
    } else {
        vec![a.probe.parse()?]
    };
    let channel: ErfChannel = a.channel.parse()?;
    if a.samples == 0 {
        return Err(Error::Config("--samples must be at least 1".into()));
    }
    let (cfg, params) = load_checkpoint(&fs::read(&a.ckpt)?)?;
    let samples = match &a.data {
        Some(dir) => {
            let mut d = read_dataset(dir)?;
            d.truncate(a.samples);
            d
        }
        None => {
            let gen = GenConfig::new(a.size, 3, a.max_disp);
            (0..a.samples as u64)
                .map(|i| generate_sample(a.seed.wrapping_add(i), &gen))
                .collect::<Result<Vec<_>>>()?
        }
    };
    fs::create_dir_all(&a.out)?;
    let mut summary = Vec::new();
    for stage in stages {
        let map = compute_erf(&cfg, &params, stage, &samples, channel)?;
        let (img, profile) = render_erf(&map);
        img.save(a.out.join(format!("erf_{}.png", stage.name()))).map_err(Error::from)?;
        write_profile_csv(&a.out.join(format!("erf_{}_profile.csv", stage.name())), &profile)?;
        summary.push(ErfStageSummary::new(stage, &map));
    }
    let json = serde_json::to_vec_pretty(&summary)?;
    fs::write(a.out.join("erf_summary.json"), &json)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn viz(a: VizArgs) -> Result<()> {
    log_config("viz", &a)?;
    let flow = read_flo(&fs::read(&a.flow)?)?;
    match &a.error_against {
        Some(gt) => {
            let gt = read_flo(&fs::read(gt)?)?;
            error_map(&flow, &gt)?.save(&a.out)?;
        }
        None => flow_to_color(&flow, a.max_mag).save(&a.out)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen(a) => datagen(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Erf(a) => erf_cmd(a),
        Command::Viz(a) => viz(a),
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "exit_code": code, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let summary: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.is_empty() && !l.starts_with("Usage:"))
                .collect();
            return fail("usage", 2, summary.join(" ").trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            fail(kind.as_str(), kind.exit_code() as u8, &e.to_string())
        }
    }
}
