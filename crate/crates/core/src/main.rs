use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use didnet::color::{reference_tonemap, BitDepth, ColorSpace};
use didnet::degradation::{ClipPair, CLIP_LEN, MID};
use didnet::io::{self, Config};
use didnet::metrics::{reports_to_csv, reports_to_markdown};
use didnet::net::{self, Dataset, NetConfig, Params};
use didnet::source::{corpus, SourceOptions, TEST_SEED_OFFSET};
use didnet::{prove, Error};

#[derive(Parser)]
#[command(name = "didnet", version, about = "SDR to HDR conversion with joint artifact removal")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set steps=100`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/ and test/ manifests under --out)
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ingest pre-degraded clips instead: one subdirectory per clip with
        /// `lq/` (7 SDR frames) and `hdr.png` or `hdr.dten` (HDR centre frame)
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Train from a manifest and write a checkpoint directory
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a directory of SDR frames to HDR frames
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a manifest; writes <out>.csv and <out>.md
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every property suite
    Prove,
    /// Print the modulation cost table
    Flops,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn load_config(c: &Common) -> Result<Config, Failure> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn required(p: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    p.or_else(|| fallback.clone()).ok_or_else(|| Failure::Usage(format!("missing {what}: pass --{what} or set `{what}=` in the config")))
}

fn synth(common: Common, out: Option<PathBuf>, import: Option<PathBuf>) -> Outcome {
    let cfg = load_config(&common)?;
    let out = required(out, &cfg.out, "out")?;
    if let Some(dir) = import {
        let clips = import_clips(&dir, cfg.qp)?;
        let manifest = io::write_dataset(&out, &clips)?;
        println!("imported {} clips -> {}", clips.len(), manifest.display());
        return Ok(());
    }
    let opts = SourceOptions::new(cfg.height, cfg.width);
    let named = |clips: Vec<ClipPair>, tag: &str| clips.into_iter().enumerate().map(|(i, c)| (format!("{tag}{i:03}"), c)).collect::<Vec<_>>();
    let train = corpus(opts, cfg.qp, cfg.seed..cfg.seed + cfg.train_clips as u64)?;
    let t0 = cfg.seed + TEST_SEED_OFFSET;
    let test = corpus(opts, cfg.qp, t0..t0 + cfg.test_clips as u64)?;
    let a = io::write_dataset(&out.join("train"), &named(train, "train"))?;
    let b = io::write_dataset(&out.join("test"), &named(test, "test"))?;
    println!("{}\n{}", a.display(), b.display());
    Ok(())
}

fn import_clips(dir: &Path, qp: u32) -> Result<Vec<(String, ClipPair)>, Failure> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    subdirs.sort();
    let mut clips = Vec::new();
    for sub in subdirs {
        let lq = io::read_sdr_dir(&sub.join("lq"))?;
        if lq.len() != CLIP_LEN {
            return Err(Failure::Usage(format!("{}: expected {CLIP_LEN} LQ frames, found {}", sub.display(), lq.len())));
        }
        let hdr_path = ["hdr.png", "hdr.dten"].iter().map(|n| sub.join(n)).find(|p| p.exists());
        let hdr_path = hdr_path.ok_or_else(|| Failure::Usage(format!("{}: missing hdr.png or hdr.dten", sub.display())))?;
        let hdr = io::read_frame(&hdr_path, ColorSpace::HdrBt2020Pq, BitDepth::Float)?;
        let sdr = reference_tonemap(&hdr)?;
        let id = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        clips.push((id, ClipPair::new(lq, sdr, hdr, qp, 0)?));
    }
    if clips.is_empty() {
        return Err(Failure::Usage(format!("{}: no clip directories found", dir.display())));
    }
    Ok(clips)
}

fn train(common: Common, data: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let cfg = load_config(&common)?;
    let data = required(data, &cfg.data, "data")?;
    let out = required(out, &cfg.out, "out")?;
    let clips = io::read_dataset(&data)?.into_iter().map(|(_, c)| c).collect();
    let init: Option<Params<f32>> = match &cfg.checkpoint {
        Some(dir) => Some(net::load_checkpoint(dir)?.1),
        None => None,
    };
    fs::create_dir_all(&out)?;
    let result = net::train::<f32>(&cfg.net, &cfg.train, &Dataset { clips }, init, |step, params| {
        let dir = if step == cfg.train.steps { out.clone() } else { out.join(format!("step{step:06}")) };
        net::save_checkpoint(&dir, &cfg.net, params)
    })?;
    net::write_trainlog(&out.join("trainlog.csv"), &result.log)?;
    if let Some(last) = result.log.last() {
        println!("trained {} steps, final loss {:.6} -> {}", result.log.len(), last.loss, out.display());
    }
    Ok(())
}

fn convert(checkpoint: &Path, input: &Path, out: &Path) -> Outcome {
    let frames = io::read_sdr_dir(input)?;
    if frames.len() < CLIP_LEN {
        return Err(Failure::Usage(format!("convert needs at least {CLIP_LEN} frames, found {} in {}", frames.len(), input.display())));
    }
    let (net_cfg, params): (NetConfig, Params<f32>) = net::load_checkpoint(checkpoint)?;
    let hdr = net::temporal_outputs(&net_cfg, &params, &frames)?;
    fs::create_dir_all(out)?;
    for (i, f) in hdr.iter().enumerate() {
        io::write_frame(&out.join(format!("hdr_{i:04}.png")), f)?;
    }
    println!("wrote {} HDR frames to {} (centre frame index {MID} of each window)", hdr.len(), out.display());
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, out: &Path) -> Outcome {
    let (net_cfg, params): (NetConfig, Params<f32>) = net::load_checkpoint(checkpoint)?;
    let clips: Vec<ClipPair> = io::read_dataset(data)?.into_iter().map(|(_, c)| c).collect();
    let s = net::evaluate(&net_cfg, &params, &clips)?;
    fs::write(out.with_extension("csv"), reports_to_csv(&s.reports))?;
    fs::write(out.with_extension("md"), reports_to_markdown(&s.reports))?;
    println!(
        "PSNR HDR {:.3} dB (baseline {:.3}), SDR {:.3} dB (input {:.3}), HF-PSNR {:.3}, dE_ITP {:.3}",
        s.psnr_hdr, s.psnr_baseline, s.psnr_sdr, s.psnr_lq_sdr, s.hf_psnr_hdr, s.delta_e
    );
    Ok(())
}

fn run_prove() -> Outcome {
    let mut failed = 0;
    for o in prove::run_all() {
        println!("{} {:<24} {:>7.2}s  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.seconds, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(Error::Contract(format!("{failed} property suite(s) failed"))));
    }
    Ok(())
}

fn flops() -> Outcome {
    println!("{:<10} {:>16} {:>10} {:>10}", "size", "feature-wise", "folded", "ratio");
    for (label, _, _, feat, fold) in prove::cost_rows() {
        println!("{label:<10} {feat:>16} {fold:>10} {:>10.0}", feat as f64 / fold as f64);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Synth { common, out, import } => synth(common, out, import),
        Command::Train { common, data, out } => train(common, data, out),
        Command::Convert { checkpoint, input, out } => convert(&checkpoint, &input, &out),
        Command::Eval { checkpoint, data, out } => eval(&checkpoint, &data, &out),
        Command::Prove => run_prove(),
        Command::Flops => flops(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\nRun `didnet --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
