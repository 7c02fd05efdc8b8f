//! Experiment orchestration: runs the full pipeline (scene, selection,
//! base training, per-method incremental phase, distillation, shared-test
//! evaluation) and emits deterministic CSV tables, rendered images, and
//! SVG bar charts.

mod plot;

pub use plot::write_bar_chart_svg;

use crate::controller::CompositeField;
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::gate::{fuse_renders, GateConfig, GateMode};
use crate::metrics::{mae_elevation, psnr, ssim};
use crate::render::{clip_ray, render_image, EmbedSource, RenderedImage, WorldMap};
use crate::scene::{make_dataset, DatasetConfig, DatasetSplit, SceneModel, ViewRecord};
use crate::select::{select_views, SelectConfig};
use crate::train::{
    distill_student, train_base, train_baseline, train_incremental, Baseline, TeacherView,
    TrainConfig,
};
use std::fmt::Write as _;
use std::path::Path;

/// A method under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Frozen base + controller, uncertainty-gated fusion.
    OursGated,
    /// Frozen base + controller, composite render only.
    OursUngated,
    /// Compact student distilled from the gated model.
    Student,
    Baseline(Baseline),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::OursGated => "ours_gated".into(),
            Method::OursUngated => "ours_ungated".into(),
            Method::Student => "student".into(),
            Method::Baseline(b) => b.name().into(),
        }
    }

    pub fn all() -> Vec<Method> {
        vec![
            Method::OursGated,
            Method::OursUngated,
            Method::Student,
            Method::Baseline(Baseline::Joint),
            Method::Baseline(Baseline::InitialOnly),
            Method::Baseline(Baseline::Finetune),
            Method::Baseline(Baseline::FinetuneKd),
            Method::Baseline(Baseline::Ewc),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub seeds: Vec<u64>,
    pub grid: usize,
    pub relief: f64,
    pub n_initial: usize,
    pub n_incremental: usize,
    pub n_test: usize,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub gate_lambda: f64,
    pub methods: Vec<Method>,
    /// Run view selection on the initial pool and train on the subset.
    pub use_selection: bool,
    pub select: SelectConfig,
    /// Rays per render chunk during evaluation.
    pub chunk_rays: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            seeds: vec![1],
            grid: 32,
            relief: 8.0,
            n_initial: 4,
            n_incremental: 3,
            n_test: 2,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            gate_lambda: 10.0,
            methods: Method::all(),
            use_selection: false,
            select: SelectConfig::default(),
            chunk_rays: 256,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("experiment needs at least one method".into()));
        }
        self.train.validate()
    }
}

/// One row of the metric table. Wall time is tracked separately so the
/// metric CSV is byte-reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub params: usize,
}

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("seed,method,psnr,ssim,mae,params\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6e},{:.6e},{:.6e},{}",
            r.seed, r.method, r.psnr, r.ssim, r.mae, r.params
        );
    }
    s
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Config(format!("metrics csv: bad line {i}")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Config(format!("metrics csv: bad number '{s}'")))
        };
        rows.push(MetricRow {
            seed: f[0].parse().map_err(|_| Error::Config("metrics csv: bad seed".into()))?,
            method: f[1].to_string(),
            psnr: num(f[2])?,
            ssim: num(f[3])?,
            mae: num(f[4])?,
            params: f[5].parse().map_err(|_| Error::Config("metrics csv: bad params".into()))?,
        });
    }
    Ok(rows)
}

/// Render one view with a standalone field (held-out views use the mean
/// appearance embedding).
pub fn render_field_view(
    field: &FieldParams,
    scene: &SceneModel,
    view: &ViewRecord,
    n_samples: usize,
    chunk_rays: usize,
    initial_rows: usize,
) -> Result<RenderedImage> {
    let world = WorldMap::for_scene(scene);
    // Held-out views render with the mean appearance code of the initial
    // era (0 = whole table), so models with extended tables are compared
    // under the same nominal conditions.
    let emb = EmbedSource::Fixed(if initial_rows == 0 {
        field.mean_embedding()
    } else {
        field.mean_embedding_rows(initial_rows)
    });
    render_image(
        &|t| Ok(field.stage(t, false)),
        &world,
        &|o, d| clip_ray(scene, o, d),
        &view.camera,
        view.sun_dir,
        &emb,
        n_samples,
        chunk_rays,
    )
}

/// Render one view with the base + controller composite.
pub fn render_composite_view(
    comp: &CompositeField,
    scene: &SceneModel,
    view: &ViewRecord,
    n_samples: usize,
    chunk_rays: usize,
) -> Result<RenderedImage> {
    let world = WorldMap::for_scene(scene);
    let emb = EmbedSource::Fixed(comp.base.mean_embedding());
    render_image(
        &|t| Ok(comp.stage(t, false)),
        &world,
        &|o, d| clip_ray(scene, o, d),
        &view.camera,
        view.sun_dir,
        &emb,
        n_samples,
        chunk_rays,
    )
}

/// Mean test-set metrics for a batch of (render, ground truth) pairs.
fn mean_metrics(renders: &[(RenderedImage, &ViewRecord)]) -> Result<(f64, f64, f64)> {
    let mut p = 0.0;
    let mut s = 0.0;
    let mut m = 0.0;
    for (r, v) in renders {
        p += psnr(&r.rgb, &v.rgb)?;
        s += ssim(&r.rgb, &v.rgb)?;
        m += mae_elevation(&r.depth, &v.depth_gt, &v.camera)?;
    }
    let n = renders.len() as f64;
    Ok((p / n, s / n, m / n))
}

/// Everything produced for one scene seed.
pub struct SeedRun {
    pub scene: SceneModel,
    pub ds: DatasetSplit,
    /// Initial views actually used for base training (after selection).
    pub initial_used: Vec<ViewRecord>,
    pub base: FieldParams,
    pub selection: Option<crate::select::SelectionReport>,
}

/// Generate the scene + dataset and train the base field for one seed.
pub fn prepare_seed(plan: &ExperimentPlan, seed: u64) -> Result<SeedRun> {
    let scene = crate::scene::gen_terrain(seed, plan.grid, plan.relief)?;
    let ds = make_dataset(
        &scene,
        plan.n_initial,
        plan.n_incremental,
        plan.n_test,
        seed,
        &plan.dataset,
    )?;
    let (initial_used, selection) = if plan.use_selection {
        let mut sc = plan.select.clone();
        sc.seed = seed;
        let report = select_views(&ds.initial, &sc)?;
        let subset: Vec<ViewRecord> = report.selected.iter().map(|&i| ds.initial[i].clone()).collect();
        (subset, Some(report))
    } else {
        (ds.initial.clone(), None)
    };
    let mut tc = plan.train.clone();
    tc.seed = seed;
    let (base, _) = train_base(&scene, &initial_used, &tc)?;
    Ok(SeedRun {
        scene,
        ds,
        initial_used,
        base,
        selection,
    })
}

fn gate_cfg(plan: &ExperimentPlan) -> GateConfig {
    GateConfig {
        lambda: plan.gate_lambda,
        mode: GateMode::Eval,
        ..GateConfig::default()
    }
}

/// Train the composite once per seed (shared by the gated, ungated, and
/// student methods).
pub fn train_composite_for_seed(run: &SeedRun, plan: &ExperimentPlan, seed: u64) -> Result<CompositeField> {
    let mut tc = plan.train.clone();
    tc.seed = seed;
    let (comp, _) = train_incremental(&run.scene, run.base.clone(), &run.ds.incremental, &tc)?;
    Ok(comp)
}

/// Gated teacher renders of the training views, used for distillation.
pub fn teacher_views(
    run: &SeedRun,
    comp: &CompositeField,
    plan: &ExperimentPlan,
) -> Result<Vec<TeacherView>> {
    let cfg = gate_cfg(plan);
    let mut out = Vec::new();
    for v in run.initial_used.iter().chain(run.ds.incremental.iter()) {
        let b =
            render_field_view(&run.base, &run.scene, v, plan.train.n_samples, plan.chunk_rays, 0)?;
        let r = render_composite_view(comp, &run.scene, v, plan.train.n_samples, plan.chunk_rays)?;
        let fused = fuse_renders(b, r, Some(&v.rgb), &cfg)?;
        out.push(TeacherView {
            rgb: fused.rgb,
            depth: fused.depth,
            camera: v.camera.clone(),
            sun_dir: v.sun_dir,
        });
    }
    Ok(out)
}

/// Evaluate one method on the shared test set, optionally writing renders
/// of the first test view under `img_dir`.
pub fn eval_method(
    run: &SeedRun,
    comp: Option<&CompositeField>,
    method: Method,
    plan: &ExperimentPlan,
    seed: u64,
    img_dir: Option<&Path>,
) -> Result<MetricRow> {
    let n = plan.train.n_samples;
    let chunk = plan.chunk_rays;
    let mut tc = plan.train.clone();
    tc.seed = seed;

    let comp_needed = matches!(method, Method::OursGated | Method::OursUngated | Method::Student);
    if comp_needed && comp.is_none() {
        return Err(Error::Contract("method needs a trained composite".into()));
    }

    // Produce one render per test view (plus an optional gate map).
    let mut renders: Vec<(RenderedImage, &ViewRecord)> = Vec::new();
    let mut first_gate: Option<crate::img::ScalarMap> = None;
    let params;
    match method {
        Method::OursGated | Method::OursUngated => {
            let comp = comp.unwrap();
            params = comp.param_count();
            for v in &run.ds.test {
                let r = render_composite_view(comp, &run.scene, v, n, chunk)?;
                if method == Method::OursGated {
                    let b = render_field_view(&run.base, &run.scene, v, n, chunk, 0)?;
                    let fused = fuse_renders(b, r, Some(&v.rgb), &gate_cfg(plan))?;
                    if first_gate.is_none() {
                        first_gate = Some(fused.gate_map.clone());
                    }
                    renders.push((
                        RenderedImage {
                            rgb: fused.rgb,
                            depth: fused.depth,
                            beta: fused.res.beta.clone(),
                            acc: fused.res.acc.clone(),
                        },
                        v,
                    ));
                } else {
                    renders.push((r, v));
                }
            }
        }
        Method::Student => {
            let comp = comp.unwrap();
            let teachers = teacher_views(run, comp, plan)?;
            let (student, _) = distill_student(&run.scene, &teachers, comp.param_count(), &tc)?;
            params = student.param_count();
            for v in &run.ds.test {
                renders.push((render_field_view(&student, &run.scene, v, n, chunk, 0)?, v));
            }
        }
        Method::Baseline(kind) => {
            let (field, _) = train_baseline(
                &run.scene,
                &run.base,
                &run.initial_used,
                &run.ds.incremental,
                kind,
                &tc,
            )?;
            params = field.param_count();
            for v in &run.ds.test {
                renders.push((render_field_view(
                    &field,
                    &run.scene,
                    v,
                    n,
                    chunk,
                    run.base.embed.rows(),
                )?, v));
            }
        }
    }

    if let Some(dir) = img_dir {
        std::fs::create_dir_all(dir)?;
        let name = method.name();
        if let Some((r, _)) = renders.first() {
            r.rgb.save_png(&dir.join(format!("{name}_rgb.png")))?;
            r.depth.save_png_normalized(&dir.join(format!("{name}_depth.png")))?;
        }
        if let Some(g) = &first_gate {
            g.save_png_normalized(&dir.join(format!("{name}_gate.png")))?;
        }
    }

    let (psnr, ssim, mae) = mean_metrics(&renders)?;
    Ok(MetricRow {
        seed,
        method: method.name(),
        psnr,
        ssim,
        mae,
        params,
    })
}

/// Run the full plan. Artifacts go under `out_dir` when provided:
/// metrics.csv, selection report, per-seed renders, and bar charts.
pub fn run_experiment(plan: &ExperimentPlan, out_dir: Option<&Path>) -> Result<Vec<MetricRow>> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &seed in &plan.seeds {
        let run = prepare_seed(plan, seed)?;
        let comp_needed = plan
            .methods
            .iter()
            .any(|m| matches!(m, Method::OursGated | Method::OursUngated | Method::Student));
        let comp = if comp_needed {
            Some(train_composite_for_seed(&run, plan, seed)?)
        } else {
            None
        };
        let seed_dir = out_dir.map(|d| d.join(format!("seed_{seed}")));
        if let (Some(dir), Some(report)) = (&seed_dir, &run.selection) {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("selection.txt"), report.to_text())?;
            std::fs::write(dir.join("selected_views.txt"), report.manifest())?;
        }
        for &m in &plan.methods {
            rows.push(eval_method(&run, comp.as_ref(), m, plan, seed, seed_dir.as_deref())?);
        }
    }
    if let Some(dir) = out_dir {
        emit_report(&rows, dir)?;
    }
    Ok(rows)
}

/// Write metrics.csv plus one SVG bar chart per metric.
pub fn emit_report(rows: &[MetricRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Contract("emit_report: no rows".into()));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_to_csv(rows))?;
    // Aggregate per method (mean over seeds), preserving first-seen order.
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !names.contains(&r.method) {
            names.push(r.method.clone());
        }
    }
    let mean_of = |f: &dyn Fn(&MetricRow) -> f64| -> Vec<f64> {
        names
            .iter()
            .map(|n| {
                let vals: Vec<f64> =
                    rows.iter().filter(|r| &r.method == n).map(|r| f(r)).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    };
    let labels: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    write_bar_chart_svg(
        &dir.join("psnr.svg"),
        "PSNR (dB)",
        &labels,
        &mean_of(&|r| r.psnr),
    )?;
    write_bar_chart_svg(
        &dir.join("ssim.svg"),
        "SSIM",
        &labels,
        &mean_of(&|r| r.ssim),
    )?;
    write_bar_chart_svg(
        &dir.join("mae.svg"),
        "Elevation MAE",
        &labels,
        &mean_of(&|r| r.mae),
    )?;
    Ok(())
}

/// The three ablation axes: controller, distillation anchor, gating.
#[derive(Clone, Copy, Debug)]
pub struct AblationToggles {
    pub controller: bool,
    pub kd: bool,
    pub gating: bool,
}

impl AblationToggles {
    pub fn label(&self) -> String {
        format!(
            "ctrl={}_kd={}_gate={}",
            self.controller as u8, self.kd as u8, self.gating as u8
        )
    }
}

/// Evaluate one toggle combination: without the controller the incremental
/// phase finetunes the whole base; KD toggles the anchor loss; gating
/// toggles the fused render at evaluation time.
pub fn run_ablation_case(
    run: &SeedRun,
    plan: &ExperimentPlan,
    seed: u64,
    t: AblationToggles,
) -> Result<MetricRow> {
    let mut tc = plan.train.clone();
    tc.seed = seed;
    if !t.kd {
        tc.lambda_kd = 0.0;
    }
    let n = plan.train.n_samples;
    let chunk = plan.chunk_rays;
    let mut renders: Vec<(RenderedImage, &ViewRecord)> = Vec::new();
    let params;

    let updated_render: Box<dyn Fn(&ViewRecord) -> Result<RenderedImage>> = if t.controller {
        let (comp, _) = train_incremental(&run.scene, run.base.clone(), &run.ds.incremental, &tc)?;
        params = comp.param_count();
        let comp = std::rc::Rc::new(comp);
        let scene = &run.scene;
        Box::new(move |v| render_composite_view(&comp, scene, v, n, chunk))
    } else {
        let kind = if t.kd { Baseline::FinetuneKd } else { Baseline::Finetune };
        let (field, _) =
            train_baseline(&run.scene, &run.base, &run.initial_used, &run.ds.incremental, kind, &tc)?;
        params = field.param_count();
        let field = std::rc::Rc::new(field);
        let scene = &run.scene;
        let initial_rows = run.base.embed.rows();
        Box::new(move |v| render_field_view(&field, scene, v, n, chunk, initial_rows))
    };

    for v in &run.ds.test {
        let r = updated_render(v)?;
        if t.gating {
            let b = render_field_view(&run.base, &run.scene, v, n, chunk, 0)?;
            let fused = fuse_renders(b, r, Some(&v.rgb), &gate_cfg(plan))?;
            renders.push((
                RenderedImage {
                    rgb: fused.rgb,
                    depth: fused.depth,
                    beta: fused.res.beta.clone(),
                    acc: fused.res.acc.clone(),
                },
                v,
            ));
        } else {
            renders.push((r, v));
        }
    }
    let (psnr, ssim, mae) = mean_metrics(&renders)?;
    Ok(MetricRow {
        seed,
        method: format!("ablate_{}", t.label()),
        psnr,
        ssim,
        mae,
        params,
    })
}

/// Run all eight toggle combinations on the first seed of the plan.
pub fn run_ablation(plan: &ExperimentPlan, out_dir: Option<&Path>) -> Result<Vec<MetricRow>> {
    plan.validate()?;
    let seed = plan.seeds[0];
    let run = prepare_seed(plan, seed)?;
    let mut rows = Vec::new();
    for ctrl in [false, true] {
        for kd in [false, true] {
            for gating in [false, true] {
                let t = AblationToggles {
                    controller: ctrl,
                    kd,
                    gating,
                };
                rows.push(run_ablation_case(&run, plan, seed, t)?);
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.csv"), metrics_to_csv(&rows))?;
    }
    Ok(rows)
}
