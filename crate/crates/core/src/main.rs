use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lungseg::config::{read_pairs, Profile, RunConfig};
use lungseg::dataset::{scan_dataset, split, write_synthetic, Layout, Manifest, SampleLoader, Split};
use lungseg::eval::{check_threshold, evaluate, predict_mask};
use lungseg::imaging::io;
use lungseg::train::{history_tsv, train_epochs};
use lungseg::unet::{load_checkpoint, UNet};
use lungseg::{Error, Result};

#[derive(Parser)]
#[command(name = "lungseg", version, about = "Lung field segmentation for chest radiographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic phantom image/mask pairs in the generic layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scan, split and train; writes the best checkpoint and a history TSV.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// History TSV path (default: `<out>.history.tsv`).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        threshold: Option<f64>,
        /// Per-sample TSV path (default: `<ckpt>.eval.tsv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output mask path (.png or .pgm).
        #[arg(long)]
        out: PathBuf,
        /// Optional RGB overlay with the mask outline.
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root; repeat to pool several roots before splitting.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// montgomery, shenzhen or generic; repeat once per root or give once for all.
    #[arg(long)]
    layout: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// desk or paper.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra key=value settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self, mut extra: Vec<(String, String)>) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => read_pairs(p)?,
            None => Vec::new(),
        };
        let profile = self.profile.as_deref().map(str::parse::<Profile>).transpose()?;
        let mut overrides = Vec::new();
        if let Some(seed) = self.seed {
            overrides.push(("seed".to_string(), seed.to_string()));
        }
        overrides.append(&mut extra);
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let [layout] = self.layout.as_slice() {
            overrides.push(("layout".to_string(), layout.clone()));
        }
        RunConfig::resolve(profile, &file, &overrides)
    }

    /// Scans every root into one pooled manifest and splits it.
    fn manifest(&self, cfg: &RunConfig) -> Result<Manifest> {
        let layouts: Vec<Layout> = match self.layout.len() {
            0 | 1 => vec![cfg.layout; self.data.len()],
            n if n == self.data.len() => self
                .layout
                .iter()
                .map(|l| l.parse())
                .collect::<Result<_>>()?,
            n => {
                return Err(Error::Usage(format!(
                    "{n} layouts given for {} data roots",
                    self.data.len()
                )))
            }
        };
        let mut parts = Vec::new();
        for (root, layout) in self.data.iter().zip(layouts) {
            let scanned = scan_dataset(root, layout)?;
            for s in &scanned.skipped {
                log::warn!("skipped {}: {}", s.path.display(), s.reason);
            }
            info!("{}: {} samples ({layout})", root.display(), scanned.manifest.len());
            parts.push(scanned.manifest);
        }
        split(&Manifest::merge(parts)?, cfg.train.seed, cfg.test_frac, cfg.val_frac)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(
    run: &RunArgs,
    out: &Path,
    no_augment: bool,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    history: Option<PathBuf>,
) -> Result<()> {
    let mut extra = Vec::new();
    if no_augment {
        extra.push(("augment".into(), "false".into()));
    }
    for (k, v) in [
        ("epochs", epochs.map(|v| v.to_string())),
        ("batch_size", batch_size.map(|v| v.to_string())),
        ("lr", lr.map(|v| v.to_string())),
    ] {
        if let Some(v) = v {
            extra.push((k.into(), v));
        }
    }
    extra.push(("checkpoint".into(), out.display().to_string()));
    if let Some(h) = &history {
        extra.push(("history".into(), h.display().to_string()));
    }
    let mut cfg = run.resolve(extra)?;
    let history_path = cfg.history.clone().unwrap_or_else(|| with_suffix(out, ".history.tsv"));
    cfg.history = Some(history_path.clone());

    let header = cfg.header_lines();
    for line in &header {
        println!("# {line}");
    }
    let manifest = run.manifest(&cfg)?;
    manifest.save(with_suffix(out, ".manifest.tsv"))?;
    println!(
        "# split train={} val={} test={}",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );

    let mut train = SampleLoader::new(&manifest, Split::Train, cfg.preprocess())?;
    let mut val = SampleLoader::new(&manifest, Split::Val, cfg.preprocess())?;
    let net = UNet::<f32>::build(cfg.unet, cfg.train.seed)?;
    let outcome = train_epochs(net, &cfg.train, &mut train, &mut val)?;

    let tsv = history_tsv(&header, &outcome.history);
    write_text(&history_path, &tsv)?;
    for line in tsv.lines().filter(|l| !l.starts_with('#')) {
        println!("{line}");
    }
    println!("best_epoch\t{}", outcome.best_epoch);
    Ok(())
}

fn cmd_eval(run: &RunArgs, ckpt: &Path, split_name: &str, threshold: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(t) = threshold {
        check_threshold(t)?;
        extra.push(("threshold".to_string(), t.to_string()));
    }
    let cfg = run.resolve(extra)?;
    let net: UNet<f32> = load_checkpoint(ckpt)?;
    let mut manifest = run.manifest(&cfg)?;
    let which = if split_name == "all" {
        manifest = manifest.with_split(Split::Test);
        Split::Test
    } else {
        split_name.parse()?
    };
    let pre = lungseg::dataset::Preprocess {
        size: net.config().input_size,
        dilate_iterations: cfg.dilate_iterations,
    };
    let mut loader = SampleLoader::new(&manifest, which, pre)?;
    let report = evaluate(&net, &mut loader, cfg.threshold, cfg.train.batch_size)?;
    let out = out.unwrap_or_else(|| with_suffix(ckpt, ".eval.tsv"));
    write_text(&out, &report.to_tsv())?;
    println!("split\t{split_name}");
    print!("{}", report.summary());
    Ok(())
}

fn cmd_predict(ckpt: &Path, image: &Path, out: &Path, overlay: Option<&Path>, threshold: f64) -> Result<()> {
    check_threshold(threshold)?;
    let net: UNet<f32> = load_checkpoint(ckpt)?;
    let gray = io::read_gray(image)?;
    let mask = predict_mask(&net, &gray, threshold)?;
    io::write_mask(out, &mask)?;
    if let Some(p) = overlay {
        io::write_overlay(p, &gray, &mask)?;
    }
    println!("mask\t{}\t{}x{}\tforeground={:.6}", out.display(), mask.width(), mask.height(), mask.fraction());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, size, seed } => {
            let m = write_synthetic(&out, count, size, seed)?;
            println!("wrote {} phantoms to {}", m.len(), out.display());
            Ok(())
        }
        Command::Train {
            run,
            out,
            no_augment,
            epochs,
            batch_size,
            lr,
            history,
        } => cmd_train(&run, &out, no_augment, epochs, batch_size, lr, history),
        Command::Eval {
            run,
            ckpt,
            split,
            threshold,
            out,
        } => cmd_eval(&run, &ckpt, &split, threshold, out),
        Command::Predict {
            ckpt,
            image,
            out,
            overlay,
            threshold,
        } => cmd_predict(&ckpt, &image, &out, overlay.as_deref(), threshold),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lungseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
