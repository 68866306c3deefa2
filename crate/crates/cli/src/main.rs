use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lesion_core::augment::expand_dataset;
use lesion_core::dataset::{derive_task_manifest, load_manifest, stratified_split, Task};
use lesion_core::ensemble::{ensemble_mean, predict_dataset, PredictionSet, DEFAULT_THRESHOLD};
use lesion_core::experiment::{
    generate_synthetic, prepare_output_dir, preset, run_experiment, surrogate_of, with_failure_marker,
    ExperimentConfig, PipelineOptions, SyntheticSpec, FAILED_MARKER, SNAPSHOT_FILE,
};
use lesion_core::metrics::evaluate;
use lesion_core::nn::ModelState;

#[derive(Parser)]
#[command(name = "lesion", version, about = "Dermoscopy lesion classification pipeline")]
struct Cli {
    /// Base directory for relative output paths.
    #[arg(long, global = true, env = "LESION_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,

    /// Replace existing outputs instead of refusing to run.
    #[arg(long, global = true)]
    overwrite: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic dataset (PNG images + ground-truth CSV).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Stratified train/validation split of a ground-truth manifest.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 2017)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize the class-rebalancing augmented training set.
    Augment {
        #[command(flatten)]
        data: DataArgs,
        /// Take the augmentation settings from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, augment and train every model of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full experiment: train, predict, fuse and evaluate.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a manifest with a checkpoint; writes `image_id,score` CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Softmax-mean fusion of prediction CSVs.
    Ensemble {
        #[arg(long)]
        task: Task,
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy, sensitivity, specificity, ROC and AUC of a prediction CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Ground-truth manifest.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the shipped recipes end to end.
    ReproducePaper {
        #[arg(long)]
        task: Task,
        /// Tiny surrogate backbones on the synthetic dataset.
        #[arg(long)]
        surrogate: bool,
        /// Directory the preset's relative data paths refer to.
        #[arg(long, default_value = ".")]
        data_root: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a shipped experiment config.
    Preset {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    image_root: PathBuf,
    #[arg(long, default_value = "jpg")]
    ext: String,
}

struct Ctx {
    root: PathBuf,
    overwrite: bool,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.root.join(p)
        } else {
            p.to_path_buf()
        }
    }

    fn claim_file(&self, p: &Path) -> Result<PathBuf> {
        let path = self.out(p);
        if path.exists() && !self.overwrite {
            bail!("{} already exists (pass --overwrite to replace it)", path.display());
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let _ = fs::remove_file(failed_marker_for(&path));
        Ok(path)
    }
}

fn failed_marker_for(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{FAILED_MARKER}"));
    file.with_file_name(name)
}

/// Runs `body` writing a single output file; on failure the file is removed
/// and `<file>.FAILED` holds the error.
fn file_output(path: &Path, body: impl FnOnce() -> Result<()>) -> Result<()> {
    let res = body();
    if let Err(e) = &res {
        let _ = fs::remove_file(path);
        let _ = fs::write(failed_marker_for(path), format!("{e:#}\n"));
    }
    res
}

fn snapshot(dir: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let path = dir.join(SNAPSHOT_FILE);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(ctx: &Ctx, path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(base) = path.parent() {
        cfg.resolve_paths(base);
    }
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    cfg.output_dir = ctx.out(&cfg.output_dir);
    Ok(cfg)
}

fn print_outcome_summary(dir: &Path) {
    let report = dir.join("report").join("report.txt");
    if let Ok(text) = fs::read_to_string(&report) {
        print!("{text}");
    }
    println!("outputs in {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        root: cli.output_root,
        overwrite: cli.overwrite,
    };
    match cli.command {
        Command::Synth { out, seed } => {
            let dir = ctx.out(&out);
            prepare_output_dir(&dir, ctx.overwrite)?;
            let spec = SyntheticSpec {
                seed,
                ..Default::default()
            };
            let ds = with_failure_marker(&dir, || generate_synthetic(&dir, &spec))?;
            println!(
                "{} images; manifest {}",
                ds.manifest.len(),
                ds.manifest_path.display()
            );
        }
        Command::Split {
            data,
            fraction,
            seed,
            out,
        } => {
            let dir = ctx.out(&out);
            prepare_output_dir(&dir, ctx.overwrite)?;
            snapshot(
                &dir,
                &[
                    ("manifest", data.manifest.display().to_string()),
                    ("fraction", fraction.to_string()),
                    ("seed", seed.to_string()),
                ],
            )?;
            with_failure_marker(&dir, || {
                let load = load_manifest(&data.manifest, &data.image_root, &data.ext)?;
                if !load.missing_images.is_empty() {
                    log::warn!("{} listed images are missing", load.missing_images.len());
                }
                let split = stratified_split(&load.manifest, fraction, seed)?;
                split.write_to(&dir)?;
                println!("{} train / {} validation", split.train.len(), split.validation.len());
                Ok(())
            })?;
        }
        Command::Augment {
            data,
            config,
            seed,
            out,
        } => {
            let mut aug = match &config {
                Some(p) => ExperimentConfig::load(p)?.augmentation_config(),
                None => Default::default(),
            };
            if let Some(s) = seed {
                aug.seed = s;
            }
            let dir = ctx.out(&out);
            let load = load_manifest(&data.manifest, &data.image_root, &data.ext)?;
            if let Some(m) = load.missing_images.first() {
                bail!("{} listed images are missing (first: {})", load.missing_images.len(), m.display());
            }
            let manifest = expand_dataset(&load.manifest, &aug, &dir, ctx.overwrite)?;
            snapshot(
                &dir,
                &[
                    ("manifest", data.manifest.display().to_string()),
                    ("augmentation", format!("{aug:?}")),
                ],
            )?;
            println!("{} images from {} sources", manifest.len(), load.manifest.len());
        }
        Command::Train { config, seed } => {
            let cfg = load_config(&ctx, &config, seed)?;
            let outcome = run_experiment(
                &cfg,
                PipelineOptions {
                    overwrite: ctx.overwrite,
                    train_only: true,
                },
            )?;
            for r in &outcome.runs {
                println!(
                    "{}: selected epoch {} ({})",
                    r.run_id,
                    r.selected_epoch,
                    r.selected_checkpoint().map_or("-".into(), |p| p.display().to_string())
                );
            }
        }
        Command::Run { config, seed } => {
            let cfg = load_config(&ctx, &config, seed)?;
            let outcome = run_experiment(
                &cfg,
                PipelineOptions {
                    overwrite: ctx.overwrite,
                    train_only: false,
                },
            )?;
            print_outcome_summary(&outcome.dir);
        }
        Command::Predict {
            checkpoint,
            data,
            task,
            out,
        } => {
            let path = ctx.claim_file(&out)?;
            file_output(&path, || {
                let model = ModelState::load_checkpoint(&checkpoint)?;
                let load = load_manifest(&data.manifest, &data.image_root, &data.ext)?;
                let set = predict_dataset(&model, &derive_task_manifest(&load.manifest, task))?;
                set.write_csv(&path)?;
                println!("{} predictions written to {}", set.len(), path.display());
                Ok(())
            })?;
        }
        Command::Ensemble { task, inputs, out } => {
            let path = ctx.claim_file(&out)?;
            file_output(&path, || {
                let sets = inputs
                    .iter()
                    .map(|p| PredictionSet::read_csv(p, task))
                    .collect::<lesion_core::Result<Vec<_>>>()?;
                let fused = ensemble_mean(&sets)?;
                fused.write_csv(&path)?;
                println!("fused {} sets into {}", sets.len(), path.display());
                Ok(())
            })?;
        }
        Command::Evaluate {
            predictions,
            manifest,
            task,
            threshold,
            out,
        } => {
            if !(threshold > 0.0 && threshold < 1.0) {
                bail!("threshold {threshold} outside (0, 1)");
            }
            let dir = ctx.out(&out);
            prepare_output_dir(&dir, ctx.overwrite)?;
            snapshot(
                &dir,
                &[
                    ("predictions", predictions.display().to_string()),
                    ("manifest", manifest.display().to_string()),
                    ("task", task.to_string()),
                    ("threshold", threshold.to_string()),
                ],
            )?;
            with_failure_marker(&dir, || {
                let pred = PredictionSet::read_csv(&predictions, task)?;
                // only labels are needed; image files are not opened
                let gt = load_manifest(&manifest, Path::new("."), "")?.manifest;
                let labels = derive_task_manifest(&gt, task).labels();
                let report = evaluate(&pred, &labels, threshold)?;
                report.write_to(&dir)?;
                print!("{}", report.to_text());
                Ok(())
            })?;
        }
        Command::ReproducePaper {
            task,
            surrogate,
            data_root,
            seed,
            out,
        } => {
            let name = match task {
                Task::SeborrheicKeratosis => "sk_alexnet350",
                Task::Melanoma => "mel_ensemble",
            };
            let mut cfg = preset(name)?;
            if surrogate {
                let synth_dir = ctx.out(Path::new("synthetic"));
                let manifest = synth_dir.join("ground_truth.csv");
                let images = synth_dir.join("images");
                if !manifest.is_file() {
                    prepare_output_dir(&synth_dir, ctx.overwrite)?;
                    generate_synthetic(&synth_dir, &SyntheticSpec::default())?;
                }
                cfg = surrogate_of(cfg, &manifest, &images);
            } else {
                cfg.resolve_paths(&data_root);
            }
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            cfg.output_dir = ctx.out(out.as_deref().unwrap_or(&cfg.output_dir));
            let outcome = run_experiment(
                &cfg,
                PipelineOptions {
                    overwrite: ctx.overwrite,
                    train_only: false,
                },
            )?;
            print_outcome_summary(&outcome.dir);
        }
        Command::Preset { name, out } => {
            let text = preset(&name)?.to_text();
            match out {
                Some(p) => {
                    let path = ctx.claim_file(&p)?;
                    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
