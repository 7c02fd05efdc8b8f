//! Command-line surface for the incremental terrain-field laboratory.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 numeric failure,
//! 3 broken invariant.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use terra_nerf::controller::CompositeField;
use terra_nerf::error::{Error, Result};
use terra_nerf::experiment::{
    emit_report, metrics_from_csv, run_ablation, run_experiment, ExperimentPlan, Method,
};
use terra_nerf::field::FieldParams;
use terra_nerf::scene::{gen_terrain, load_dataset, make_dataset, save_dataset, DatasetConfig};
use terra_nerf::select::{select_views, SelectConfig};
use terra_nerf::train::{
    distill_student, train_base, train_baseline, train_incremental, Baseline, TrainConfig,
};

#[derive(Parser)]
#[command(name = "terra-nerf", about = "Incremental terrain radiance-field laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic terrain scene and a view dataset.
    GenScene {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 8.0)]
        relief: f64,
        #[arg(long, default_value_t = 6)]
        initial: usize,
        #[arg(long, default_value_t = 4)]
        incremental: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run view selection over the initial pool of a dataset.
    SelectViews {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        tau: f64,
        #[arg(long, default_value_t = 0.35)]
        floor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the base field on the initial views.
    TrainBase {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Selected-view manifest restricting the initial pool.
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the residual controller against a frozen base.
    TrainIncremental {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one forgetting baseline.
    TrainBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        /// One of: joint, initial_only, finetune, finetune_kd, ewc.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill the gated model into a compact student.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        composite: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full comparison experiment and emit metrics + plots.
    Evaluate {
        /// Comma-separated scene seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset of methods (default: all).
        #[arg(long)]
        methods: Option<String>,
        /// Run view selection on the initial pool first.
        #[arg(long, default_value_t = false)]
        select: bool,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the 2^3 toggle ablation on one seed.
    Ablate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate plots from an existing metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_train_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn parse_baseline(s: &str) -> Result<Baseline> {
    Ok(match s {
        "joint" => Baseline::Joint,
        "initial_only" => Baseline::InitialOnly,
        "finetune" => Baseline::Finetune,
        "finetune_kd" => Baseline::FinetuneKd,
        "ewc" => Baseline::Ewc,
        other => return Err(Error::Config(format!("unknown baseline '{other}'"))),
    })
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(match s {
        "ours_gated" => Method::OursGated,
        "ours_ungated" => Method::OursUngated,
        "student" => Method::Student,
        other => Method::Baseline(parse_baseline(other)?),
    })
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed '{p}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenScene {
            seed,
            grid,
            relief,
            initial,
            incremental,
            test,
            image_size,
            out,
        } => {
            let scene = gen_terrain(seed, grid, relief)?;
            let cfg = DatasetConfig {
                image_size,
                ..DatasetConfig::default()
            };
            let split = make_dataset(&scene, initial, incremental, test, seed, &cfg)?;
            save_dataset(&out, &scene, &split)?;
            println!(
                "wrote scene (grid {grid}) and {} views to {}",
                initial + incremental + test,
                out.display()
            );
        }
        Cmd::SelectViews {
            data,
            tau,
            floor,
            seed,
            out,
        } => {
            let (_, split) = load_dataset(&data)?;
            let cfg = SelectConfig {
                tau,
                facet_floor: floor,
                seed,
                ..SelectConfig::default()
            };
            let report = select_views(&split.initial, &cfg)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("selection.txt"), report.to_text())?;
            std::fs::write(out.join("selected_views.txt"), report.manifest())?;
            println!(
                "selected {} of {} views (coverage {:.3}, validation {})",
                report.selected.len(),
                split.initial.len(),
                report.coverage,
                if report.validation.pass { "PASS" } else { "FAIL" }
            );
        }
        Cmd::TrainBase {
            data,
            config,
            views,
            out,
        } => {
            let (scene, split) = load_dataset(&data)?;
            let cfg = load_train_config(&config)?;
            let indices: Vec<usize> = match views {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)?;
                    text.lines()
                        .filter(|l| !l.trim().is_empty())
                        .map(|l| {
                            l.trim()
                                .parse()
                                .map_err(|_| Error::Config(format!("bad view index '{l}'")))
                        })
                        .collect::<Result<_>>()?
                }
                None => (0..split.initial.len()).collect(),
            };
            let pool = indices
                .iter()
                .map(|&i| {
                    split
                        .initial
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("view index {i} out of range")))
                })
                .collect::<Result<Vec<_>>>()?;
            let (field, log) = train_base(&scene, &pool, &cfg)?;
            std::fs::create_dir_all(&out)?;
            // Record which initial views the base saw, so later phases use
            // the same pool.
            field.save_checkpoint(
                &out.join("base.ckpt"),
                "base",
                serde_json::json!({ "initial_views": indices }),
            )?;
            log.write_csv(&out.join("base_log.csv"))?;
            log.write_timing(&out.join("base_timing.csv"))?;
            println!(
                "base trained on {} views, final loss {:.6}",
                pool.len(),
                log.final_total()
            );
        }
        Cmd::TrainIncremental {
            data,
            base,
            config,
            out,
        } => {
            let (scene, split) = load_dataset(&data)?;
            let cfg = load_train_config(&config)?;
            let (base_field, _) = FieldParams::load_checkpoint(&base, "base")?;
            let (comp, log) = train_incremental(&scene, base_field, &split.incremental, &cfg)?;
            std::fs::create_dir_all(&out)?;
            comp.save_checkpoint(&out.join("composite.ckpt"))?;
            log.write_csv(&out.join("incremental_log.csv"))?;
            log.write_timing(&out.join("incremental_timing.csv"))?;
            println!(
                "controller trained on {} views, final loss {:.6}",
                split.incremental.len(),
                log.final_total()
            );
        }
        Cmd::TrainBaseline {
            data,
            base,
            kind,
            config,
            out,
        } => {
            let (scene, split) = load_dataset(&data)?;
            let cfg = load_train_config(&config)?;
            let kind = parse_baseline(&kind)?;
            let (base_field, extra) = FieldParams::load_checkpoint(&base, "base")?;
            let initial = match extra.get("initial_views").and_then(|v| v.as_array()) {
                Some(idx) => idx
                    .iter()
                    .map(|v| {
                        let i = v.as_u64().unwrap_or(u64::MAX) as usize;
                        split
                            .initial
                            .get(i)
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("view index {i} out of range")))
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => split.initial.clone(),
            };
            let (field, log) =
                train_baseline(&scene, &base_field, &initial, &split.incremental, kind, &cfg)?;
            std::fs::create_dir_all(&out)?;
            field.save_checkpoint(
                &out.join(format!("{}.ckpt", kind.name())),
                "base",
                serde_json::json!({ "baseline": kind.name() }),
            )?;
            log.write_csv(&out.join(format!("{}_log.csv", kind.name())))?;
            println!("{} trained, final loss {:.6}", kind.name(), log.final_total());
        }
        Cmd::Distill {
            data,
            base,
            composite,
            config,
            out,
        } => {
            let (scene, split) = load_dataset(&data)?;
            let cfg = load_train_config(&config)?;
            let (base_field, extra) = FieldParams::load_checkpoint(&base, "base")?;
            let initial_used = match extra.get("initial_views").and_then(|v| v.as_array()) {
                Some(idx) => idx
                    .iter()
                    .filter_map(|v| v.as_u64())
                    .filter_map(|i| split.initial.get(i as usize).cloned())
                    .collect(),
                None => split.initial.clone(),
            };
            let comp = CompositeField::load_checkpoint(&composite, base_field)?;
            // Teacher views come from the gated model on the training pool.
            let plan = ExperimentPlan {
                train: cfg.clone(),
                ..ExperimentPlan::default()
            };
            let run = terra_nerf::experiment::SeedRun {
                scene: scene.clone(),
                initial_used,
                ds: split,
                base: comp.base.clone(),
                selection: None,
            };
            let teachers = terra_nerf::experiment::teacher_views(&run, &comp, &plan)?;
            let (student, log) = distill_student(&scene, &teachers, comp.param_count(), &cfg)?;
            std::fs::create_dir_all(&out)?;
            student.save_checkpoint(
                &out.join("student.ckpt"),
                "student",
                serde_json::json!({ "teacher_params": comp.param_count() }),
            )?;
            log.write_csv(&out.join("student_log.csv"))?;
            println!(
                "student: {} params ({:.1}% of teacher), final loss {:.6}",
                student.param_count(),
                100.0 * student.param_count() as f64 / comp.param_count() as f64,
                log.final_total()
            );
        }
        Cmd::Evaluate {
            seeds,
            config,
            methods,
            select,
            image_size,
            out,
        } => {
            let mut plan = ExperimentPlan {
                seeds: parse_seeds(&seeds)?,
                train: load_train_config(&config)?,
                use_selection: select,
                ..ExperimentPlan::default()
            };
            plan.dataset.image_size = image_size;
            if let Some(m) = methods {
                plan.methods = m
                    .split(',')
                    .map(|s| parse_method(s.trim()))
                    .collect::<Result<_>>()?;
            }
            let rows = run_experiment(&plan, Some(&out))?;
            println!("{}", terra_nerf::experiment::metrics_to_csv(&rows));
        }
        Cmd::Ablate {
            seed,
            config,
            image_size,
            out,
        } => {
            let mut plan = ExperimentPlan {
                seeds: vec![seed],
                train: load_train_config(&config)?,
                ..ExperimentPlan::default()
            };
            plan.dataset.image_size = image_size;
            let rows = run_ablation(&plan, Some(&out))?;
            println!("{}", terra_nerf::experiment::metrics_to_csv(&rows));
        }
        Cmd::Report { metrics, out } => {
            let text = std::fs::read_to_string(&metrics)?;
            let rows = metrics_from_csv(&text)?;
            emit_report(&rows, &out)?;
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
