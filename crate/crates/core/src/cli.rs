//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adversary::{pretrain_autoencoder, AutoencoderConfig};
use crate::data::{
    export_dataset, generate_moving_sprites, load_dataset, make_windows_all, save_frame_dir, save_gif,
    MovingSpriteSpec, WindowSpec,
};
use crate::metrics::{plot_series, render_table};
use crate::train::trainer::{TRAIN_LOG, VAL_LOG};
use crate::train::{evaluate_run, fit, EvalReport, FitOptions, ModelConfig, Trainer};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "vidpred", version, about = "Stochastic adversarial video prediction")]
pub struct Cli {
    /// Overrides every seed the command uses.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a bouncing-sprite dataset.
    GenData {
        /// Sprite spec JSON file.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Frames per sequence.
        #[arg(long, default_value_t = 20)]
        length: usize,
    },
    /// Pretrain and freeze the manifold autoencoder.
    PretrainAe {
        #[arg(long)]
        data: PathBuf,
        /// Autoencoder config JSON file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the predictor.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/model.ckpt`.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        steps: Option<u64>,
        /// Progress line every this many steps.
        #[arg(long, default_value_t = 0)]
        progress: u64,
    },
    /// Write prior-sampled futures for the first frames of each sequence.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frames to predict; defaults to the trained horizon.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Also write an animated GIF per prediction.
        #[arg(long)]
        gif: bool,
    },
    /// Score best-of-k and mean-of-k predictions on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `n->m`, for example `10->10`.
        #[arg(long)]
        task: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine evaluation and training outputs into one table and plots.
    Report {
        /// Evaluation or training output directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidSpec(_) => 2,
        _ => 1,
    }
}

/// Parses `"10->20"` (an arrow `→` is accepted too).
pub fn parse_task(task: &str) -> Result<(usize, usize)> {
    let bad = || Error::config("task", format!("expected `n->m`, got `{task}`"));
    let (n, m) = task.split_once("->").or_else(|| task.split_once('→')).ok_or_else(bad)?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let m: usize = m.trim().parse().map_err(|_| bad())?;
    if n == 0 || m == 0 {
        return Err(bad());
    }
    Ok((n, m))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(field, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(field, format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            spec,
            out,
            count,
            length,
        } => {
            let mut spec: MovingSpriteSpec = match spec {
                Some(p) => read_json(&p, "spec")?,
                None => MovingSpriteSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let seqs = (0..count as u64)
                .map(|i| generate_moving_sprites(&spec.with_seed(spec.seed + i), length))
                .collect::<Result<Vec<_>>>()?;
            export_dataset(&out, &seqs, Some(&spec))?;
            println!("wrote {count} sequences to {}", out.display());
        }
        Command::PretrainAe {
            data,
            config,
            out,
            steps,
        } => {
            let mut cfg: AutoencoderConfig = match config {
                Some(p) => read_json(&p, "config")?,
                None => AutoencoderConfig::default(),
            };
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let seqs = load_dataset(&data)?;
            let pre = pretrain_autoencoder(&seqs, &cfg)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            pre.encoder.save(&out)?;
            println!(
                "held-out reconstruction mse {:.6} -> {:.6}; encoder {} digest {}",
                pre.initial_heldout_mse,
                pre.final_heldout_mse,
                out.display(),
                pre.encoder.digest()
            );
        }
        Command::Train {
            config,
            out,
            resume,
            steps,
            progress,
        } => {
            let mut cfg = ModelConfig::load(&config)?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let summary = fit(
                &cfg,
                &out,
                &FitOptions {
                    resume,
                    report_every: progress,
                },
            )?;
            if let Some((before, after)) = summary.autoencoder_mse {
                println!("autoencoder held-out mse {before:.6} -> {after:.6}");
            }
            if let Some((step, v)) = summary.validation.last() {
                println!("validation l1 at step {step}: {v:.6}");
            }
            println!("{} steps; checkpoint {}", summary.steps, summary.checkpoint.display());
        }
        Command::Predict {
            checkpoint,
            data,
            out,
            horizon,
            samples,
            gif,
        } => {
            let trainer = Trainer::load(&checkpoint)?;
            let model = &trainer.model;
            let n = model.config.generator.context_len;
            let m = horizon.unwrap_or(model.config.generator.horizon);
            let seed = cli.seed.unwrap_or(model.config.seed);
            let seqs = load_dataset(&data)?;
            if seqs.is_empty() {
                return Err(Error::Empty(format!("no sequences under {}", data.display())));
            }
            std::fs::create_dir_all(&out)?;
            for s in &seqs {
                let ctx = s.slice(0, n, s.id())?;
                for j in 0..samples {
                    let pred = model.predict(&[&ctx], m, crate::train::sample_seed(seed, j))?.remove(0);
                    let name = format!("{}_s{j}", s.id());
                    save_frame_dir(&pred, &out.join(&name))?;
                    if gif {
                        save_gif(&ctx.concat(&pred)?, &out.join(format!("{name}.gif")), 100)?;
                    }
                }
            }
            println!("wrote {} predictions to {}", seqs.len() * samples, out.display());
        }
        Command::Evaluate {
            checkpoint,
            data,
            task,
            samples,
            out,
        } => {
            let (n, m) = parse_task(&task)?;
            let trainer = Trainer::load(&checkpoint)?;
            let model = &trainer.model;
            if n != model.config.generator.context_len {
                return Err(Error::Misuse(format!(
                    "task {task} needs {n} context frames, the checkpoint was trained on {}",
                    model.config.generator.context_len
                )));
            }
            let samples = samples.unwrap_or(model.config.eval_samples);
            let seqs = load_dataset(&data)?;
            let windows = make_windows_all(&seqs, &WindowSpec::new(n, m, n + m)?).windows;
            if windows.is_empty() {
                return Err(Error::Empty(format!("no {}-frame sequences under {}", n + m, data.display())));
            }
            let seed = cli.seed.unwrap_or(model.config.seed);
            let report = evaluate_run(model, &windows, samples, seed, model.config.metrics_reduction)?;
            write_eval(&out, &report)?;
            print!("{}", render_table(&report.best.task, &[&report.best, &report.mean]));
        }
        Command::Report { runs, out } => {
            let mut reports: Vec<EvalReport> = Vec::new();
            let mut logs = Vec::new();
            for dir in &runs {
                let path = dir.join("report.json");
                if path.exists() {
                    reports.push(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
                } else if dir.join(TRAIN_LOG).exists() {
                    logs.push(dir);
                } else {
                    return Err(Error::Empty(format!("{} holds no report.json or {TRAIN_LOG}", dir.display())));
                }
            }
            let mut tasks: Vec<&str> = reports.iter().map(|r| r.best.task.as_str()).collect();
            tasks.dedup();
            let mut text = String::new();
            for task in tasks {
                let rows: Vec<_> = reports
                    .iter()
                    .filter(|r| r.best.task == task)
                    .flat_map(|r| [&r.best, &r.mean])
                    .collect();
                text.push_str(&render_table(task, &rows));
                text.push('\n');
            }
            print!("{text}");
            if let Some(out) = out {
                std::fs::create_dir_all(&out)?;
                std::fs::write(out.join("report.txt"), &text)?;
                for (i, dir) in logs.iter().enumerate() {
                    plot_log(&dir.join(TRAIN_LOG), &out.join(format!("train_losses_{i}.png")))?;
                    if dir.join(VAL_LOG).exists() {
                        plot_log(&dir.join(VAL_LOG), &out.join(format!("val_l1_{i}.png")))?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `best.csv`, `mean.csv`, `report.txt`, `report.json` and one PNG per metric.
pub fn write_eval(out: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("best.csv"), report.best.to_csv())?;
    std::fs::write(out.join("mean.csv"), report.mean.to_csv())?;
    std::fs::write(
        out.join("report.txt"),
        render_table(&report.best.task, &[&report.best, &report.mean]),
    )?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let mut steps = String::from("step,mse,psnr,ssim\n");
    for (t, [a, b, c]) in report.per_timestep.iter().enumerate() {
        steps.push_str(&format!("{},{a:.9},{b:.6},{c:.9}\n", t + 1));
    }
    std::fs::write(out.join("per_timestep.csv"), steps)?;
    for (k, name) in ["mse", "psnr", "ssim"].iter().enumerate() {
        let series = vec![report.per_timestep.iter().map(|s| s[k]).collect()];
        plot_series(&out.join(format!("{name}_per_step.png")), &series)?;
    }
    Ok(())
}

fn plot_log(csv: &Path, png: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv)?;
    let columns = text.lines().next().map_or(0, |h| h.split(',').count());
    let mut series = vec![Vec::new(); columns.saturating_sub(1)];
    for line in text.lines().skip(1) {
        for (s, v) in series.iter_mut().zip(line.split(',').skip(1)) {
            s.push(v.parse::<f64>().unwrap_or(f64::NAN));
        }
    }
    plot_series(png, &series)
}

