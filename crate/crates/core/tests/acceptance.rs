//! Release acceptance gate. Each test checks one criterion end to end and
//! prints a single `ACCEPTANCE <criterion>: PASS|FAIL` line (visible with
//! `--nocapture`; the per-test ok/FAILED line mirrors it otherwise).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::OnceLock;
use terra_nerf::autodiff::{grad_check, Tape, Tensor, ValueId};
use terra_nerf::controller::CompositeField;
use terra_nerf::error::Result;
use terra_nerf::experiment::{
    metrics_to_csv, run_experiment, ExperimentPlan, Method, MetricRow,
};
use terra_nerf::field::{positional_encode, FieldArch, FieldParams};
use terra_nerf::gate::{fuse, gate, fuse_renders, GateConfig, GateMode};
use terra_nerf::render::{
    clip_ray, composite, render_image, EmbedSource, WorldMap,
};
use terra_nerf::scene::{gen_terrain, make_dataset, DatasetConfig};
use terra_nerf::select::{coverage, depth_range, select_views, SelectConfig};
use terra_nerf::train::{
    ewc_penalty, rgb_beta_weighted, train_base, train_baseline, Baseline, TrainConfig,
};

fn verdict(name: &str, pass: bool) {
    println!("ACCEPTANCE {name}: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name} failed");
}

// ---------------------------------------------------------------------------
// Shared toy experiment (criteria 6, 7, 8, 10): one full multi-method run
// over three scene seeds, computed once.

fn shared_plan() -> ExperimentPlan {
    ExperimentPlan {
        seeds: vec![1, 2, 3],
        grid: 32,
        relief: 8.0,
        n_initial: 4,
        n_incremental: 3,
        n_test: 2,
        dataset: DatasetConfig {
            image_size: 16,
            ..DatasetConfig::default()
        },
        train: TrainConfig {
            width: 28,
            ctrl_width: 16,
            student_width: 20,
            steps_base: 500,
            steps_incremental: 300,
            steps_distill: 1200,
            batch_rays: 64,
            n_samples: 8,
            fisher_rays: 32,
            lambda_kd: 1.0,
            ..TrainConfig::default()
        },
        methods: Method::all(),
        chunk_rays: 256,
        gate_lambda: 2.0,
        ..ExperimentPlan::default()
    }
}

static ROWS: OnceLock<Vec<MetricRow>> = OnceLock::new();

fn rows() -> &'static [MetricRow] {
    ROWS.get_or_init(|| run_experiment(&shared_plan(), None).expect("shared experiment"))
}

fn psnr_by_seed(method: &str) -> Vec<(u64, f64)> {
    rows()
        .iter()
        .filter(|r| r.method == method)
        .map(|r| (r.seed, r.psnr))
        .collect()
}

fn mean_psnr(method: &str) -> f64 {
    let v = psnr_by_seed(method);
    v.iter().map(|(_, p)| p).sum::<f64>() / v.len() as f64
}

fn params_of(method: &str) -> usize {
    rows().iter().find(|r| r.method == method).expect(method).params
}

// ---------------------------------------------------------------------------

fn fresh_composite(seed: u64, width: usize) -> CompositeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = FieldParams::new(FieldArch::base(width), 3, &mut rng).unwrap();
    CompositeField::new(base, 12, 2, &mut rng).unwrap()
}

fn random_query_inputs(
    t: &mut Tape,
    arch: &FieldArch,
    m: usize,
    seed: u64,
) -> (ValueId, ValueId, ValueId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 3]> = (0..m)
        .map(|_| {
            [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() - 0.5,
            ]
        })
        .collect();
    let dirs: Vec<[f64; 3]> = (0..m).map(|_| [0.3, -0.1, -0.95]).collect();
    let ex = t.constant(positional_encode(&pts, arch.levels_pos));
    let ed = t.constant(positional_encode(&dirs, arch.levels_dir));
    let su = t.constant(
        Tensor::new(vec![m, 3], [0.2, 0.3, 0.933].iter().cycle().take(3 * m).copied().collect())
            .unwrap(),
    );
    (ex, ed, su)
}

#[test]
fn criterion_01_identity_at_init() {
    // Point queries: 1000 random positions, all five outputs bit-equal.
    let comp = fresh_composite(11, 16);
    let m = 1000;
    let mut t = Tape::new();
    let cq = comp.stage(&mut t, false);
    let bq = comp.base.stage(&mut t, false);
    let (ex, ed, su) = random_query_inputs(&mut t, &comp.base.arch, m, 5);
    let ec = cq.base.embed_rows(&mut t, &vec![0; m]).unwrap();
    let eb = bq.embed_rows(&mut t, &vec![0; m]).unwrap();
    let pc = cq.point_forward(&mut t, ex, ed, su, ec).unwrap();
    let pb = bq.point_forward(&mut t, ex, ed, su, eb).unwrap();
    let mut points_ok = true;
    for (a, b) in [
        (pc.sigma, pb.sigma),
        (pc.rgb_eff, pb.rgb_eff),
        (pc.beta, pb.beta),
        (pc.sun_vis, pb.sun_vis),
        (pc.sky, pb.sky),
    ] {
        points_ok &= t.value(a).data() == t.value(b).data();
    }

    // Full 64x64 rendered view, bit-exact.
    let scene = gen_terrain(11, 32, 8.0).unwrap();
    let ds = make_dataset(
        &scene, 1, 1, 1, 11,
        &DatasetConfig { image_size: 64, ..DatasetConfig::default() },
    )
    .unwrap();
    let view = &ds.test[0];
    let world = WorldMap::for_scene(&scene);
    let emb = EmbedSource::Fixed(comp.base.mean_embedding());
    let render = |composite: bool| {
        if composite {
            render_image(
                &|t: &mut Tape| Ok(comp.stage(t, false)),
                &world,
                &|o, d| clip_ray(&scene, o, d),
                &view.camera,
                view.sun_dir,
                &emb,
                6,
                512,
            )
            .unwrap()
        } else {
            render_image(
                &|t: &mut Tape| Ok(comp.base.stage(t, false)),
                &world,
                &|o, d| clip_ray(&scene, o, d),
                &view.camera,
                view.sun_dir,
                &emb,
                6,
                512,
            )
            .unwrap()
        }
    };
    let rc = render(true);
    let rb = render(false);
    let image_ok = rc.rgb == rb.rgb && rc.depth == rb.depth && rc.beta == rb.beta && rc.acc == rb.acc;
    verdict("1 identity-at-init", points_ok && image_ok);
}

#[test]
fn criterion_02_frozen_base_immutability() {
    let scene = gen_terrain(7, 32, 8.0).unwrap();
    let ds = make_dataset(
        &scene, 2, 2, 1, 7,
        &DatasetConfig { image_size: 8, ..DatasetConfig::default() },
    )
    .unwrap();
    let cfg = TrainConfig {
        seed: 7,
        width: 16,
        ctrl_width: 10,
        steps_base: 10,
        steps_incremental: 15,
        batch_rays: 16,
        n_samples: 4,
        ..TrainConfig::default()
    };
    let (base, _) = train_base(&scene, &ds.initial, &cfg).unwrap();
    let base_hash = base.params_hash();
    let (comp, _) =
        terra_nerf::train::train_incremental(&scene, base, &ds.incremental, &cfg).unwrap();
    // Reconstruct the frozen prefix and compare its digest to the original.
    let mut check = comp.base.clone();
    let rows = check.embed_frozen_rows;
    let cols = check.embed.cols();
    check.embed =
        Tensor::new(vec![rows, cols], check.embed.data()[..rows * cols].to_vec()).unwrap();
    check.embed_frozen_rows = 0;
    verdict(
        "2 frozen-base-immutability",
        check.params_hash() == base_hash && !comp.ctrl.is_identity(),
    );
}

#[test]
fn criterion_03_gradient_correctness() {
    // (a) Composite forward through trunk + head residuals.
    let mut comp = fresh_composite(17, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    use terra_nerf::autodiff::ParamsMut;
    comp.for_each_mut(&mut |_, t, _| {
        for v in t.data_mut() {
            *v += 0.05 * (rng.gen::<f64>() - 0.5);
        }
        Ok(())
    })
    .unwrap();
    let probe = comp.ctrl.inject[3].w.clone();
    let f_forward = |tape: &mut Tape, xs: &[ValueId]| -> Result<ValueId> {
        let mut cq = comp.stage(tape, false);
        cq.inject[3].w = xs[0];
        let (ex, ed, su) = random_query_inputs(tape, &comp.base.arch, 4, 77);
        let emb = cq.base.embed_rows(tape, &vec![0; 4])?;
        let out = cq.point_forward(tape, ex, ed, su, emb)?;
        let a = tape.sum_all(out.rgb_eff)?;
        let b = tape.sum_all(out.sigma)?;
        let c = tape.sum_all(out.beta)?;
        let ab = tape.add(a, b)?;
        tape.add(ab, c)
    };
    let rel_a = grad_check(&f_forward, &[probe.clone()], 1e-5).unwrap();

    // (b) Beta-weighted RGB loss (epoch >= 2 form) through a composite
    // render of a 3-ray batch.
    let gt = Tensor::new(vec![3, 3], vec![0.2, 0.4, 0.1, 0.6, 0.3, 0.5, 0.15, 0.8, 0.45]).unwrap();
    let ts = Tensor::new(vec![3, 4], (0..12).map(|i| 1.0 + i as f64 * 0.25).collect()).unwrap();
    let deltas = Tensor::new(vec![3, 4], vec![0.25; 12]).unwrap();
    let f_loss = |tape: &mut Tape, xs: &[ValueId]| -> Result<ValueId> {
        let mut cq = comp.stage(tape, false);
        cq.inject[3].w = xs[0];
        let (ex, ed, su) = random_query_inputs(tape, &comp.base.arch, 12, 31);
        let emb = cq.base.embed_rows(tape, &vec![0; 12])?;
        let out = cq.point_forward(tape, ex, ed, su, emb)?;
        let sun_rays = tape.constant(Tensor::new(
            vec![3, 3],
            [0.2, 0.3, 0.933].iter().cycle().take(9).copied().collect(),
        )?);
        let bg = terra_nerf::render::StagedQuery::sky_color(&cq, tape, sun_rays)?;
        let batch = terra_nerf::render::composite_staged(
            tape, out.sigma, out.rgb_eff, out.beta, &ts, &deltas, bg, 4,
        )?;
        rgb_beta_weighted(tape, batch.color, batch.beta, &gt)
    };
    let rel_b = grad_check(&f_loss, &[probe.clone()], 1e-5).unwrap();

    // (c) EWC penalty.
    let anchor = BTreeMap::from([(
        "x".to_string(),
        Tensor::new(vec![2, 3], vec![0.1; 6]).unwrap(),
    )]);
    let fisher = BTreeMap::from([(
        "x".to_string(),
        Tensor::new(vec![2, 3], vec![0.4, 1.0, 0.2, 0.7, 0.05, 0.9]).unwrap(),
    )]);
    let f_ewc = |tape: &mut Tape, xs: &[ValueId]| -> Result<ValueId> {
        let leaves = vec![("x".to_string(), xs[0])];
        ewc_penalty(tape, &leaves, &anchor, &fisher, 1.3)
    };
    let point = Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.5, 0.05, 0.6, -0.4]).unwrap();
    let rel_c = grad_check(&f_ewc, &[point], 1e-5).unwrap();

    println!("  grad_check rel errs: forward {rel_a:.3e}, beta-loss {rel_b:.3e}, ewc {rel_c:.3e}");
    verdict(
        "3 gradient-correctness",
        rel_a <= 1e-4 && rel_b <= 1e-4 && rel_c <= 1e-4,
    );
}

#[test]
fn criterion_04_gate_algebra() {
    let mut ok = true;
    // Equal errors -> exactly one half.
    for s in [0.01, 1.0, 50.0] {
        ok &= gate(10.0, s, 0.42, 0.42) == 0.5;
    }
    // Symmetry and convexity over 1e5 random triples.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100_000 {
        let (e1, e2) = (rng.gen::<f64>(), rng.gen::<f64>());
        let s = 0.01 + rng.gen::<f64>() * 40.0;
        ok &= (gate(10.0, s, e1, e2) + gate(10.0, s, e2, e1) - 1.0).abs() < 1e-12;
        let g: f64 = rng.gen();
        let cr = [rng.gen(), rng.gen(), rng.gen()];
        let cb = [rng.gen(), rng.gen(), rng.gen()];
        let f = fuse(g, cr, cb);
        for i in 0..3 {
            ok &= f[i] >= cr[i].min(cb[i]) - 1e-15 && f[i] <= cr[i].max(cb[i]) + 1e-15;
        }
    }
    // Depth is bit-identical with gating on and off.
    let comp = fresh_composite(23, 16);
    let scene = gen_terrain(23, 32, 8.0).unwrap();
    let ds = make_dataset(
        &scene, 1, 1, 1, 23,
        &DatasetConfig { image_size: 12, ..DatasetConfig::default() },
    )
    .unwrap();
    let view = &ds.test[0];
    let world = WorldMap::for_scene(&scene);
    let emb = EmbedSource::Fixed(comp.base.mean_embedding());
    let render_res = || {
        render_image(
            &|t: &mut Tape| Ok(comp.stage(t, false)),
            &world,
            &|o, d| clip_ray(&scene, o, d),
            &view.camera,
            view.sun_dir,
            &emb,
            6,
            64,
        )
        .unwrap()
    };
    let render_base = || {
        render_image(
            &|t: &mut Tape| Ok(comp.base.stage(t, false)),
            &world,
            &|o, d| clip_ray(&scene, o, d),
            &view.camera,
            view.sun_dir,
            &emb,
            6,
            64,
        )
        .unwrap()
    };
    let ungated_depth = render_res().depth;
    let eval = fuse_renders(
        render_base(),
        render_res(),
        Some(&view.rgb),
        &GateConfig::default(),
    )
    .unwrap();
    let deploy = fuse_renders(
        render_base(),
        render_res(),
        None,
        &GateConfig { mode: GateMode::Deploy, ..GateConfig::default() },
    )
    .unwrap();
    ok &= eval.depth == ungated_depth && deploy.depth == ungated_depth;
    verdict("4 gate-algebra", ok);
}

#[test]
fn criterion_05_rendering_conservation() {
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 8;
    for _ in 0..100_000 {
        let sigmas: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 3.0).collect();
        let colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let betas: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let ts: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.3).collect();
        let deltas: Vec<f64> = (0..n).map(|_| 0.1 + rng.gen::<f64>() * 0.4).collect();
        let out = composite(&sigmas, &colors, &betas, &ts, &deltas, [0.5, 0.6, 0.9]).unwrap();
        ok &= out.acc >= 0.0 && out.acc <= 1.0;
        // Transmittance telescoping, exact.
        let mut t_run = 1.0f64;
        for i in 0..n {
            ok &= out.trans[i] == t_run;
            let alpha = 1.0 - (-sigmas[i] * deltas[i]).exp();
            t_run *= 1.0 - alpha;
        }
        if !ok {
            break;
        }
    }
    // Two-sample worked example: alpha = 1/2 both, weights 1/2 and 1/4.
    let s = std::f64::consts::LN_2;
    let out = composite(
        &[s, s],
        &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        &[0.2, 0.4],
        &[1.0, 2.0],
        &[1.0, 1.0],
        [0.0, 0.0, 1.0],
    )
    .unwrap();
    ok &= (out.weights[0] - 0.5).abs() < 1e-12 && (out.weights[1] - 0.25).abs() < 1e-12;
    ok &= (out.acc - 0.75).abs() < 1e-12;
    // color = 0.5*red + 0.25*green + 0.25*sky(blue)
    ok &= (out.color[0] - 0.5).abs() < 1e-12
        && (out.color[1] - 0.25).abs() < 1e-12
        && (out.color[2] - 0.25).abs() < 1e-12;
    // depth = (0.5*1 + 0.25*2) / 0.75 = 4/3
    ok &= (out.depth - 4.0 / 3.0).abs() < 1e-12;
    // beta = 0.5*0.2 + 0.25*0.4 = 0.2
    ok &= (out.beta - 0.2).abs() < 1e-12;
    verdict("5 rendering-conservation", ok);
}

#[test]
fn criterion_06_forgetting_mitigation_ordering() {
    let gated = mean_psnr("ours_gated");
    let kd = mean_psnr("finetune_kd");
    let ft = mean_psnr("finetune");
    let joint = mean_psnr("joint");
    println!(
        "  PSNR means: gated {gated:.2}, finetune_kd {kd:.2}, finetune {ft:.2}, joint {joint:.2}"
    );
    verdict(
        "6 forgetting-mitigation-ordering",
        gated >= kd && kd >= ft && gated >= joint - 1.5,
    );
}

#[test]
fn criterion_07_gating_direction() {
    let gated = psnr_by_seed("ours_gated");
    let ungated = psnr_by_seed("ours_ungated");
    let mut ok = gated.len() == 3;
    for ((s1, g), (s2, u)) in gated.iter().zip(&ungated) {
        println!("  seed {s1}: gated {g:.2} vs ungated {u:.2}");
        ok &= s1 == s2 && g > u;
    }
    verdict("7 gating-direction", ok);
}

#[test]
fn criterion_08_distillation_budget_and_fidelity() {
    let teacher_params = params_of("ours_gated");
    let student_params = params_of("student");
    let teacher = mean_psnr("ours_gated");
    let student = mean_psnr("student");
    println!(
        "  params: student {student_params} / teacher {teacher_params}; PSNR student {student:.2} vs teacher {teacher:.2}"
    );
    verdict(
        "8 distillation-budget-and-fidelity",
        5 * student_params <= teacher_params && student >= teacher - 2.0,
    );
}

#[test]
fn criterion_09_view_selection() {
    // A 17-view pool spanning several camera distances, so depth ranges,
    // appearance, and sun geometry all vary meaningfully.
    let scene = gen_terrain(41, 32, 8.0).unwrap();
    let mut pool = Vec::new();
    for (i, (count, dist)) in [(4usize, 0.8), (4, 1.1), (3, 1.5), (3, 2.0), (3, 2.6)]
        .iter()
        .enumerate()
    {
        let ds = make_dataset(
            &scene, *count, 1, 1, 41 + i as u64,
            &DatasetConfig { image_size: 16, distance_factor: *dist, ..DatasetConfig::default() },
        )
        .unwrap();
        pool.extend(ds.initial);
    }
    assert_eq!(pool.len(), 17);
    let report = select_views(&pool, &SelectConfig::default()).unwrap();
    println!(
        "  selected {} of 17 (coverage {:.3}, validation {})",
        report.selected.len(),
        report.coverage,
        report.validation.pass
    );
    for (name, score) in &report.validation.facets {
        println!("  facet {name}: {score:.3} (floor {:.2})", report.validation.floor);
    }
    let mut ok =
        report.selected.len() <= 9 && report.coverage >= 0.95 && report.validation.pass;
    // Coverage monotonicity over 1000 random subset pairs of this pool.
    let ranges: Vec<(f64, f64)> = pool
        .iter()
        .map(|v| depth_range(&v.depth_gt).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let mut s: Vec<usize> = (0..17).filter(|_| rng.gen::<bool>()).collect();
        if s.is_empty() {
            s.push(rng.gen_range(0..17));
        }
        let mut sup = s.clone();
        let extra = rng.gen_range(0..17);
        if !sup.contains(&extra) {
            sup.push(extra);
        }
        ok &= coverage(&s, &ranges) <= coverage(&sup, &ranges) + 1e-15;
    }
    verdict("9 view-selection", ok);
}

#[test]
fn criterion_10_baseline_sanity() {
    // EWC with zero lambda walks the finetune trajectory bit-for-bit.
    let scene = gen_terrain(9, 32, 8.0).unwrap();
    let ds = make_dataset(
        &scene, 2, 2, 1, 9,
        &DatasetConfig { image_size: 8, ..DatasetConfig::default() },
    )
    .unwrap();
    let cfg = TrainConfig {
        seed: 9,
        width: 16,
        ctrl_width: 10,
        steps_base: 8,
        steps_incremental: 10,
        batch_rays: 16,
        n_samples: 4,
        lambda_ewc: 0.0,
        ..TrainConfig::default()
    };
    let (base, _) = train_base(&scene, &ds.initial, &cfg).unwrap();
    let (ft, _) = train_baseline(
        &scene, &base, &ds.initial, &ds.incremental, Baseline::Finetune, &cfg,
    )
    .unwrap();
    let (ewc, _) = train_baseline(
        &scene, &base, &ds.initial, &ds.incremental, Baseline::Ewc, &cfg,
    )
    .unwrap();
    let bitmatch = ft.params_hash() == ewc.params_hash();

    // Penalty at the anchor point is exactly zero.
    let anchor = BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![0.3, -1.2]))]);
    let fisher = BTreeMap::from([("p".to_string(), Tensor::from_vec(vec![2.0, 0.5]))]);
    let mut t = Tape::new();
    let leaf = t.leaf(Tensor::from_vec(vec![0.3, -1.2]));
    let pen = ewc_penalty(&mut t, &[("p".to_string(), leaf)], &anchor, &fisher, 3.0).unwrap();
    let zero_at_anchor = t.value(pen).data()[0] == 0.0;

    // Joint >= Initial-Only on every shared-run seed.
    let joint = psnr_by_seed("joint");
    let init = psnr_by_seed("initial_only");
    let mut joint_ok = joint.len() == 3;
    for ((s1, j), (s2, i)) in joint.iter().zip(&init) {
        println!("  seed {s1}: joint {j:.2} vs initial-only {i:.2}");
        joint_ok &= s1 == s2 && j >= i;
    }
    verdict("10 baseline-sanity", bitmatch && zero_at_anchor && joint_ok);
}

#[test]
fn criterion_11_end_to_end_determinism() {
    let plan = ExperimentPlan {
        seeds: vec![4],
        n_initial: 2,
        n_incremental: 2,
        n_test: 1,
        dataset: DatasetConfig {
            image_size: 8,
            ..DatasetConfig::default()
        },
        train: TrainConfig {
            width: 12,
            ctrl_width: 8,
            student_width: 8,
            steps_base: 6,
            steps_incremental: 5,
            steps_distill: 5,
            batch_rays: 8,
            n_samples: 4,
            fisher_rays: 4,
            ..TrainConfig::default()
        },
        methods: Method::all(),
        chunk_rays: 64,
        ..ExperimentPlan::default()
    };
    let a = metrics_to_csv(&run_experiment(&plan, None).unwrap());
    let b = metrics_to_csv(&run_experiment(&plan, None).unwrap());
    verdict("11 end-to-end-determinism", !a.is_empty() && a == b);
}

