//! Command-line front end: synth / analyze / train / infer / eval / ablate /
//! gradcheck over one flat config (file + `--set key=value` overrides).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dfd::eval::ingest_mvtec_layout;
use dfd::imagery::{load_image, save_png};
use dfd::pipeline::{
    checkpoint_sha256, evaluate, heat_overlay, run_dir_name, run_manifest, save_score_map,
    score_image, train, ModelBundle, RunError, TrainConfig,
};
use dfd::synth::fixture::{generate_fixture, FixtureSpec};

fn config_keys_help() -> &'static str {
    let mut s = String::from("Config keys (config file and --set overrides):\n");
    for (key, help) in dfd::pipeline::config::KEY_HELP {
        s.push_str(&format!("  {key:<18} {help}\n"));
    }
    Box::leak(s.into_boxed_str())
}

#[derive(Parser)]
#[command(
    name = "dfd",
    version,
    about = "Few-shot anomaly detection with dual frequency-band discriminators",
    after_long_help = config_keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set seed=7`. Repeatable; wins over
    /// the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, RunError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| RunError::Config(format!("read {path:?}: {e}")))?;
                TrainConfig::parse(&text)?
            }
            None => TrainConfig::default(),
        };
        for kv in &self.sets {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(RunError::Config(format!(
                    "--set expects KEY=VALUE, got '{kv}'"
                )));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic texture fixture and/or an augmented sample set.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the fixture tree here instead of the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of fixture categories.
        #[arg(long, default_value_t = 5)]
        categories: usize,
        /// Normal training images per category.
        #[arg(long, default_value_t = 4)]
        train_good: usize,
        /// Normal test images per category.
        #[arg(long, default_value_t = 10)]
        test_good: usize,
        /// Defective test images per category.
        #[arg(long, default_value_t = 10)]
        test_defect: usize,
        /// Also export an augmented pseudo-anomaly set from this image.
        #[arg(long)]
        augment_source: Option<PathBuf>,
    },
    /// Emit radial energy profiles and gray-level histograms as CSV.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        /// Images or directories of images.
        inputs: Vec<PathBuf>,
        /// Output directory (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on the first `shots` images of `<data_root>/<category>/train/good`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score images with a trained model; writes DFDS maps and heat overlays.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory produced by `train` (holds model.dfdw + config.txt).
        #[arg(long)]
        model: PathBuf,
        images: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained model on a category's test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Train/evaluate the standard sweep of component configurations.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the gradient verification suite.
    Gradcheck,
}

fn main() -> ExitCode {
    let threads = dfd::worker_threads();
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(|e| RunError::Io(format!("create {path:?}: {e}")))
}

fn write(path: &Path, content: &str) -> Result<(), RunError> {
    fs::write(path, content).map_err(|e| RunError::Io(format!("write {path:?}: {e}")))
}

fn dispatch(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Synth {
            config,
            out,
            categories,
            train_good,
            test_good,
            test_defect,
            augment_source,
        } => {
            let cfg = config.resolve()?;
            let run_dir = out.unwrap_or_else(|| {
                Path::new(&cfg.out_dir).join(run_dir_name("synth", &cfg))
            });
            ensure_dir(&run_dir)?;
            let spec = FixtureSpec {
                resolution: cfg.resolution,
                categories,
                train_good,
                test_good,
                test_defect,
            };
            let names = generate_fixture(&run_dir, &spec, cfg.seed)?;
            println!(
                "fixture: {} categories at {}x{} under {}",
                names.len(),
                cfg.resolution,
                cfg.resolution,
                run_dir.display()
            );
            if let Some(src) = augment_source {
                let img = load_image(&src)?;
                let img = dfd::imagery::resize(&img, cfg.resolution, cfg.resolution)?;
                let samples = dfd::synth::augment(&img, &cfg.augment_policy(), cfg.seed)?;
                let aug_dir = run_dir.join("augmented");
                dfd::synth::export_samples(&samples, &aug_dir)?;
                println!(
                    "augmented: {} samples under {}",
                    samples.len(),
                    aug_dir.display()
                );
            }
            write(&run_dir.join("manifest.txt"), &run_manifest(&cfg, None, "n/a"))?;
            Ok(())
        }
        Command::Analyze { config, inputs, out } => {
            let cfg = config.resolve()?;
            if inputs.is_empty() {
                return Err(RunError::Argument("analyze needs at least one input".into()));
            }
            let mut files = Vec::new();
            for input in &inputs {
                if input.is_dir() {
                    let mut dir_files: Vec<PathBuf> = fs::read_dir(input)
                        .map_err(|e| RunError::Io(format!("{input:?}: {e}")))?
                        .filter_map(|e| e.ok())
                        .map(|e| e.path())
                        .filter(|p| {
                            matches!(
                                p.extension().and_then(|x| x.to_str()),
                                Some("png" | "ppm" | "pgm")
                            )
                        })
                        .collect();
                    dir_files.sort();
                    files.extend(dir_files);
                } else {
                    files.push(input.clone());
                }
            }
            if files.is_empty() {
                return Err(RunError::Argument("no images found in inputs".into()));
            }
            let run_dir = out.unwrap_or_else(|| {
                Path::new(&cfg.out_dir).join(run_dir_name("analyze", &cfg))
            });
            ensure_dir(&run_dir)?;

            let mut mean_energy: Vec<f64> = Vec::new();
            let mut mean_hist = vec![0.0f64; 256];
            for path in &files {
                let img = load_image(path)?;
                let gray = if img.channels == 3 {
                    dfd::imagery::to_grayscale(&img)
                } else {
                    img.clone()
                };
                let spectrum = dfd::frequency::dft2(&gray);
                let profile = dfd::frequency::radial_energy(&spectrum);
                let hist = dfd::frequency::gray_histogram(&img);
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image");
                let mut energy_csv = String::from("radius,energy\n");
                for (r, e) in profile.energy.iter().enumerate() {
                    energy_csv.push_str(&format!("{r},{e:.9}\n"));
                }
                write(&run_dir.join(format!("{stem}_energy.csv")), &energy_csv)?;
                let mut hist_csv = String::from("bin,count\n");
                for (b, c) in hist.iter().enumerate() {
                    hist_csv.push_str(&format!("{b},{c}\n"));
                }
                write(&run_dir.join(format!("{stem}_hist.csv")), &hist_csv)?;
                if mean_energy.len() < profile.energy.len() {
                    mean_energy.resize(profile.energy.len(), 0.0);
                }
                for (acc, e) in mean_energy.iter_mut().zip(&profile.energy) {
                    *acc += e;
                }
                for (acc, &c) in mean_hist.iter_mut().zip(&hist) {
                    *acc += c as f64;
                }
            }
            let n = files.len() as f64;
            let mut energy_csv = String::from("radius,energy\n");
            for (r, e) in mean_energy.iter().enumerate() {
                energy_csv.push_str(&format!("{r},{:.9}\n", e / n));
            }
            write(&run_dir.join("mean_energy.csv"), &energy_csv)?;
            let mut hist_csv = String::from("bin,count\n");
            for (b, c) in mean_hist.iter().enumerate() {
                hist_csv.push_str(&format!("{b},{:.6}\n", c / n));
            }
            write(&run_dir.join("mean_hist.csv"), &hist_csv)?;
            println!(
                "analyzed {} images into {}",
                files.len(),
                run_dir.display()
            );
            Ok(())
        }
        Command::Train { config } => {
            let cfg = config.resolve()?;
            let outcome = train_from_layout(&cfg)?;
            let run_dir = Path::new(&cfg.out_dir).join(run_dir_name("train", &cfg));
            ensure_dir(&run_dir)?;
            outcome.bundle.save(&run_dir)?;
            write(&run_dir.join("loss.csv"), &outcome.loss_log)?;
            let hash = checkpoint_sha256(&run_dir)?;
            write(&run_dir.join("manifest.txt"), &run_manifest(&cfg, None, &hash))?;
            println!("trained {} steps into {}", outcome.steps, run_dir.display());
            if let Some(l) = outcome.final_losses {
                println!("final loss: total {:.4} (gau {:.4}, per {:.4}, sim {:.4})", l.total, l.gau, l.per, l.sim);
            }
            Ok(())
        }
        Command::Infer {
            config,
            model,
            images,
            out,
        } => {
            let cfg = config.resolve()?;
            if images.is_empty() {
                return Err(RunError::Argument("infer needs at least one image".into()));
            }
            let bundle = ModelBundle::load(&model)?;
            let run_dir =
                out.unwrap_or_else(|| Path::new(&cfg.out_dir).join(run_dir_name("infer", &cfg)));
            ensure_dir(&run_dir)?;
            for path in &images {
                let img = load_image(path)?;
                let (map, s_a) = score_image(&img, &bundle)?;
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image");
                save_score_map(&map, &run_dir.join(format!("{stem}.dfds")))?;
                save_png(
                    &heat_overlay(&img, &map),
                    &run_dir.join(format!("{stem}_heat.png")),
                )?;
                println!("{} score {:.6}", path.display(), s_a);
            }
            Ok(())
        }
        Command::Eval { config, model } => {
            let overrides = config.clone();
            let bundle = ModelBundle::load(&model)?;
            // evaluation target comes from the model's config unless overridden
            let mut cfg = bundle.config.clone();
            if let Some(path) = &overrides.config {
                let text = fs::read_to_string(path)
                    .map_err(|e| RunError::Config(format!("read {path:?}: {e}")))?;
                cfg.merge(&text)?;
            }
            for kv in &overrides.sets {
                let Some((k, v)) = kv.split_once('=') else {
                    return Err(RunError::Config(format!(
                        "--set expects KEY=VALUE, got '{kv}'"
                    )));
                };
                cfg.set(k.trim(), v.trim())?;
            }
            if cfg.data_root.is_empty() || cfg.category.is_empty() {
                return Err(RunError::Config(
                    "eval needs data_root and category (from model config or --set)".into(),
                ));
            }
            let layout = ingest_mvtec_layout(Path::new(&cfg.data_root), &cfg.category)?;
            let metrics = evaluate(&bundle, &layout)?;
            let run_dir = Path::new(&cfg.out_dir).join(run_dir_name("eval", &cfg));
            ensure_dir(&run_dir)?;
            write(&run_dir.join("metrics.txt"), &metrics.report())?;
            let csv = format!(
                "category,shots,seed,auroc_image,auroc_pixel,pro\n{},{},{},{:.6},{:.6},{:.6}\n",
                cfg.category, cfg.shots, cfg.seed, metrics.auroc_image, metrics.auroc_pixel,
                metrics.pro
            );
            write(&run_dir.join("metrics.csv"), &csv)?;
            let hash = checkpoint_sha256(&model)?;
            write(
                &run_dir.join("manifest.txt"),
                &run_manifest(&cfg, Some(&metrics), &hash),
            )?;
            print!("{}", metrics.report());
            Ok(())
        }
        Command::Ablate { config } => {
            let base = config.resolve()?;
            if base.data_root.is_empty() || base.category.is_empty() {
                return Err(RunError::Config(
                    "ablate needs data_root and category".into(),
                ));
            }
            let variants: Vec<(&str, Box<dyn Fn(&mut TrainConfig) + Send + Sync>)> = vec![
                ("full", Box::new(|_| {})),
                ("no_mfic", Box::new(|c| c.mfic_on = false)),
                ("gaussian_only", Box::new(|c| c.perlin_disc_on = false)),
                ("perlin_only", Box::new(|c| c.gaussian_disc_on = false)),
                ("no_sim", Box::new(|c| c.sim_loss_on = false)),
                ("cross-entropy", Box::new(|c| {
                    c.loss_kind = dfd::losses::LossKind::CrossEntropy
                })),
                ("focal", Box::new(|c| c.loss_kind = dfd::losses::LossKind::Focal)),
                ("mse", Box::new(|c| c.loss_kind = dfd::losses::LossKind::Mse)),
            ];
            let rows: Result<Vec<String>, RunError> = variants
                .par_iter()
                .map(|(name, tweak)| {
                    let mut cfg = base.clone();
                    tweak(&mut cfg);
                    let outcome = train_from_layout(&cfg)?;
                    let layout =
                        ingest_mvtec_layout(Path::new(&cfg.data_root), &cfg.category)?;
                    let m = evaluate(&outcome.bundle, &layout)?;
                    Ok(format!(
                        "{name},{:.6},{:.6},{:.6}",
                        m.auroc_image, m.auroc_pixel, m.pro
                    ))
                })
                .collect();
            let rows = rows?;
            let mut csv = String::from("variant,auroc_image,auroc_pixel,pro\n");
            for row in &rows {
                csv.push_str(row);
                csv.push('\n');
            }
            let run_dir = Path::new(&base.out_dir).join(run_dir_name("ablate", &base));
            ensure_dir(&run_dir)?;
            write(&run_dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Gradcheck => {
            let mut worst = 0.0f64;
            let mut all_passed = true;
            for outcome in dfd::gradsuite::gradient_suite() {
                println!(
                    "{:<44} max rel err {:.3e} (tol {:.0e}) {}",
                    outcome.name,
                    outcome.max_rel_err,
                    outcome.tolerance,
                    if outcome.passed { "ok" } else { "FAIL" }
                );
                worst = worst.max(outcome.max_rel_err);
                all_passed &= outcome.passed;
            }
            println!("worst relative error: {worst:.3e}");
            if !all_passed {
                return Err(RunError::Numeric {
                    step: 0,
                    detail: "gradient suite exceeded tolerance".into(),
                });
            }
            Ok(())
        }
    }
}

/// Loads the first `shots` training images of the configured category and
/// trains on them.
fn train_from_layout(cfg: &TrainConfig) -> Result<dfd::pipeline::TrainOutcome, RunError> {
    if cfg.data_root.is_empty() || cfg.category.is_empty() {
        return Err(RunError::Config(
            "train needs data_root and category".into(),
        ));
    }
    let layout = ingest_mvtec_layout(Path::new(&cfg.data_root), &cfg.category)?;
    if layout.train_good.len() < cfg.shots {
        return Err(RunError::Config(format!(
            "category '{}' has {} training images, config wants {} shots",
            cfg.category,
            layout.train_good.len(),
            cfg.shots
        )));
    }
    let shots: Vec<_> = layout.train_good[..cfg.shots]
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<_, _>>()?;
    train(&shots, cfg)
}
