//! The `graspp` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checks::run_suite;
use crate::config::RunConfig;
use crate::data::{
    load_image, load_pair, load_paired_dataset, procedural_scene, save_image, save_pair,
    scan_paired_dir, synthesize_rain, PairedSample, RainPreset, RainSynthesisConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, Derainer, Passthrough};
use crate::model::{Generator, MIN_SIDE};
use crate::train::{run_ablation, Checkpoint, Trainer, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "graspp",
    version,
    about = "Single-image deraining: synthesis, training, inference and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a paired `rainy/`, `clean/` dataset with synthetic streaks.
    SynthData(SynthArgs),
    /// Train one variant and write checkpoints plus a step log.
    Train(TrainArgs),
    /// Derain a PNG, or every PNG in a directory, at full resolution.
    Derain(DerainArgs),
    /// Score a checkpoint on a paired dataset.
    Evaluate(EvaluateArgs),
    /// Train all three variants from one seed and compare them.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suite.
    GradCheck(GradCheckArgs),
}

/// Settings shared by commands that resolve a run configuration.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` file applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds shuffling, crops and initialisation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    /// Channel multiplier for both networks.
    #[arg(long)]
    pub width: Option<f64>,
    /// Any config key, e.g. `--set loss.beta=0.01`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        self.apply_flags(&mut run)?;
        Ok(run)
    }

    pub fn apply_flags(&self, run: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            run.set_seed(s);
        }
        if let Some(v) = self.epochs {
            run.train.epochs = v;
        }
        if let Some(v) = self.warmup_epochs {
            run.train.warmup_epochs = v;
        }
        if let Some(v) = self.batch_size {
            run.train.batch_size = v;
        }
        if let Some(v) = self.crop {
            run.train.crop = v;
        }
        if let Some(v) = self.width {
            run.generator.width = v;
            run.discriminator.width = v;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
            run.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Clean PNGs to add rain to; procedural scenes are drawn when omitted.
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "heavy")]
    pub preset: String,
    /// Number of pairs (default: every clean image, or 16 scenes).
    #[arg(long)]
    pub count: Option<usize>,
    /// Side of procedural scenes.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    /// Continue from a checkpoint; its configuration is used, with `--epochs` honoured.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DerainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file, or directory when `--in` is a directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint to score; without it the rainy inputs themselves are scored.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving `metrics.txt` and `metrics.kv`.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out pairs to score on (default: the training pairs).
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Probes per parameter tensor in the network checks.
    #[arg(long, default_value_t = 3)]
    pub network_coords: usize,
}

/// Maps an error to the documented exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Invalid(_) => EXIT_USAGE,
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::SynthData(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Derain(a) => derain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn synth(a: SynthArgs) -> Result<i32> {
    let preset: RainPreset = a.preset.parse()?;
    let rain = RainSynthesisConfig::preset(preset, a.seed);
    let mut rng = rain.rng();
    create_dir(&a.out_dir)?;
    let cleans: Vec<(String, crate::tensor::Tensor<f32>)> = match &a.clean_dir {
        Some(dir) => {
            let mut names = Vec::new();
            for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                let path = entry.map_err(|e| Error::io(dir, e))?.path();
                if path
                    .extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
                {
                    names.push(path);
                }
            }
            names.sort();
            if names.is_empty() {
                return Err(Error::Data(format!("no PNG files in {}", dir.display())));
            }
            names.truncate(a.count.unwrap_or(names.len()));
            names
                .into_iter()
                .map(|p| {
                    let id = p
                        .file_name()
                        .and_then(|n| n.to_str())
                        .unwrap_or("image.png")
                        .to_string();
                    load_image(&p).map(|t| (id, t))
                })
                .collect::<Result<_>>()?
        }
        None => {
            if a.size < MIN_SIDE {
                return Err(Error::Config(format!("--size must be at least {MIN_SIDE}")));
            }
            (0..a.count.unwrap_or(16))
                .map(|i| {
                    (
                        format!("{i:04}.png"),
                        procedural_scene(a.size, a.size, &mut rng),
                    )
                })
                .collect()
        }
    };
    for (id, clean) in cleans {
        let rainy = synthesize_rain(&clean, &rain, &mut rng)?;
        save_pair(&a.out_dir, &PairedSample::new(id, rainy, clean)?)?;
    }
    println!(
        "wrote pairs to {} (preset {preset}, seed {})",
        a.out_dir.display(),
        a.seed
    );
    Ok(EXIT_OK)
}

fn train(a: TrainArgs) -> Result<i32> {
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            if let Some(e) = a.config.epochs {
                ck.run.train.epochs = e;
            }
            if let Some(v) = &a.variant {
                let v: Variant = v.parse()?;
                if v != ck.run.train.variant {
                    ck.run.train.variant = v;
                }
            }
            Trainer::resume(ck)?
        }
        None => {
            let mut run = a.config.resolve()?;
            if let Some(v) = &a.variant {
                run.train.variant = v.parse()?;
            }
            Trainer::new(&run)?
        }
    };
    let run = trainer.state().run.clone();
    print!("{}", run.to_text());
    let data = load_paired_dataset(&a.data)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), &run.to_text())?;
    let log_path = a.out.join("steps.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    trainer.train(
        &data,
        |r| writeln!(log, "{r}").map_err(|e| Error::io(&log_path, e)),
        |s, t| {
            let ck = t.checkpoint();
            ck.save(&a.out.join(format!("epoch-{:03}.ckpt", s.epoch + 1)))?;
            ck.save(&a.out.join("latest.ckpt"))?;
            println!(
                "epoch {} steps {} l2 {:.6} lg {:.6} lgan {:.6} total {:.6} lr_g {:e} lr_d {:e}{}",
                s.epoch + 1,
                s.steps,
                s.mean_l2,
                s.mean_lg,
                s.mean_lgan,
                s.mean_total,
                s.lr_g,
                s.lr_d,
                if s.adversarial { " adversarial" } else { "" }
            );
            Ok(())
        },
    )?;
    Ok(EXIT_OK)
}

fn derain(a: DerainArgs) -> Result<i32> {
    let mut gen: Generator<f32> = Checkpoint::load(&a.ckpt)?.generator;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        create_dir(&a.out)?;
        let mut files = Vec::new();
        for entry in fs::read_dir(&a.input).map_err(|e| Error::io(&a.input, e))? {
            let p = entry.map_err(|e| Error::io(&a.input, e))?.path();
            if p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            {
                let name = p.file_name().map(PathBuf::from).unwrap_or_default();
                files.push((p, a.out.join(name)));
            }
        }
        files.sort();
        files
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    for (src, dst) in jobs {
        let img = load_image(&src)?;
        let out = gen.derain(&img)?;
        save_image(&out, &dst)?;
        println!("{} -> {}", src.display(), dst.display());
    }
    Ok(EXIT_OK)
}

fn evaluate(a: EvaluateArgs) -> Result<i32> {
    let entries = scan_paired_dir(&a.data)?;
    let items = entries.iter().map(|e| (e.id.clone(), load_pair(e)));
    let report = match &a.ckpt {
        Some(p) => {
            let mut gen = Checkpoint::load(p)?.generator;
            evaluate_dataset(&mut gen, items)?
        }
        None => evaluate_dataset(&mut Passthrough, items)?,
    };
    create_dir(&a.report)?;
    let table = report.to_table();
    write_file(&a.report.join("metrics.txt"), &table)?;
    write_file(&a.report.join("metrics.kv"), &report.to_records())?;
    print!("{table}");
    Ok(if report.skipped.is_empty() {
        EXIT_OK
    } else {
        EXIT_DATA
    })
}

fn ablate(a: AblateArgs) -> Result<i32> {
    let run = a.config.resolve()?;
    print!("{}", run.to_text());
    let train = load_paired_dataset(&a.data)?;
    let eval = match &a.eval_data {
        Some(p) => load_paired_dataset(p)?,
        None => train.clone(),
    };
    create_dir(&a.out)?;
    write_file(&a.out.join("config.txt"), &run.to_text())?;
    let report = run_ablation(
        &run,
        &train,
        &eval,
        |_, _| Ok(()),
        |v, t| {
            println!("trained {} ({} steps)", v.label(), t.state().step);
            t.checkpoint()
                .save(&a.out.join(format!("{}.ckpt", v.name())))
        },
    )?;
    let table = report.to_table();
    write_file(&a.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn grad_check(a: GradCheckArgs) -> Result<i32> {
    let results = run_suite(a.network_coords.max(1))?;
    let mut failed = 0;
    for r in &results {
        println!("{}", r.line());
        if !r.passed() {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERIC })
}
