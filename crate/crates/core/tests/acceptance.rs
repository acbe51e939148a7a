//! End-to-end acceptance suite.
//!
//! Every criterion prints one `PASS`/`FAIL` line straight to stderr (not
//! captured by the test harness) and the test fails if any criterion fails.
//! Set `ACCEPTANCE=1,3,7` to run a subset.

use std::io::Write;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use factor_fields::engine::param::{FieldParams, ParamStore};
use factor_fields::engine::tape::{composite_ray, Tape};
use factor_fields::factors::{FactorSpec, Role};
use factor_fields::io::{
    decode_png, decode_ppm, decode_sdf, encode_png, encode_ppm, encode_sdf, Checkpoint, StoredTensor, TensorData,
};
use factor_fields::model::{build_preset, Connector, Model, ModelConfig, PresetOptions, ProjectionSpec};
use factor_fields::tasks::render::RadianceSource;
use factor_fields::tasks::*;
use factor_fields::transforms::{ContractionSpec, TransformKind, TransformSpec};
use factor_fields::{Exec, Result as FfResult};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn emit(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        _ => true,
    }
}

#[test]
fn acceptance_suite() {
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient exactness", gradient_exactness),
        (2, "reduction chain", reduction_chain),
        (3, "compositing conservation", compositing_conservation),
        (4, "image regression", image_regression),
        (5, "sdf reconstruction", sdf_reconstruction),
        (6, "radiance field self-consistency", radiance_self_consistency),
        (7, "parameter accounting", parameter_accounting),
        (8, "shared-basis generalization", shared_basis_generalization),
        (9, "format round-trips", format_round_trips),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected(id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        emit(&format!(
            "[{status}] AC{id} {name}: {} ({:.1}s)",
            out.detail,
            start.elapsed().as_secs_f64()
        ));
        if !out.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn minutes(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() / 60.0
}

// ---------------------------------------------------------------- AC1

const GRAD_PRESETS: [&str; 7] = [
    "occnet",
    "nerf",
    "ingp",
    "tensorf_vm",
    "tensorf_cp",
    "dif_grid",
    "dif_mlp_b",
];
const FD_STEP: f64 = 1e-5;
const KINK_RADIUS: f64 = 1e-3;
/// Relative-error denominators never drop below this fraction of the largest
/// gradient entry, where double-precision differences bottom out.
const FD_FLOOR: f64 = 1e-6;

fn small_options() -> PresetOptions {
    let mut o = PresetOptions::new(3);
    o.eta = Some(0);
    o.levels = Some(3);
    o.coef_res = Some(5);
    o.basis_res = Some(vec![4, 5, 6]);
    o.tensor_res = 6;
    o.tensor_rank = 3;
    o.hash_log2 = 6;
    o
}

/// Distance of `x` to the nearest kink of the periodic transforms in `cfg`.
fn kink_distance(cfg: &ModelConfig, x: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for f in &cfg.factors {
        let t = f.level_transform();
        let offsets: &[f64] = match t.kind {
            TransformKind::Sawtooth => &[0.0],
            TransformKind::Triangular => &[0.0, 0.5],
            _ => continue,
        };
        for &freq in &t.frequencies {
            for &v in x {
                for &o in offsets {
                    let u = v * freq - o;
                    best = best.min((u - u.round()).abs() / freq);
                }
            }
        }
    }
    best
}

/// Predictions for the batch plus the sign pattern of every recorded value.
fn predict_with_signs(model: &Model, params: &FieldParams<f64>, xs: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut tape = Tape::new(Exec::Sequential);
    let out = model.forward(params.view(), &mut tape, xs, None, None).unwrap();
    let signs = (0..tape.len())
        .flat_map(|i| tape.value(i).iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect();
    (tape.value(out).to_vec(), signs)
}

/// Central difference of the MSE loss, `(L(+h) - L(-h)) / 2h`, expanded as
/// `sum (p+ - p-)(p+ + p- - 2y) / n` so the loss itself never cancels.
fn mse_central_difference(plus: &[f64], minus: &[f64], ys: &[f64], h: f64) -> f64 {
    let s: f64 = plus
        .iter()
        .zip(minus)
        .zip(ys)
        .map(|((&a, &b), &y)| (a - b) * (a + b - 2.0 * y))
        .sum();
    s / (ys.len() as f64 * 2.0 * h)
}

fn entry(params: &mut FieldParams<f64>, shared: bool, t: usize, i: usize) -> &mut f64 {
    let store = if shared { &mut params.shared } else { &mut params.local };
    &mut store.get_mut(t).values[i]
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let mut failures = Vec::new();
    for (pi, name) in GRAD_PRESETS.iter().enumerate() {
        let cfg = build_preset(name, &small_options()).unwrap();
        let model = Model::new(cfg.clone()).unwrap();
        let q = cfg.projection.outputs();
        for draw in 0..20u64 {
            let seed = 1000 * pi as u64 + draw;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = model.init_params::<f64>(seed);
            for store in [&mut params.shared, &mut params.local] {
                for t in store.iter_mut() {
                    t.values.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
                }
            }
            let mut xs = Vec::with_capacity(150);
            while xs.len() < 150 {
                let x: [f64; 3] = [0; 3].map(|_| rng.random::<f64>());
                if kink_distance(&cfg, &x) > KINK_RADIUS {
                    xs.extend_from_slice(&x);
                }
            }
            let ys: Vec<f64> = (0..50 * q).map(|_| rng.random::<f64>()).collect();

            params.zero_grads();
            let mut tape = Tape::new(Exec::Sequential);
            let out = model.forward(params.view(), &mut tape, &xs, None, None).unwrap();
            let loss = tape.mse(out, ys.clone()).unwrap();
            tape.backward(loss, &mut params.view_mut()).unwrap();
            let (_, base_signs) = predict_with_signs(&model, &params, &xs);

            let mut all = Vec::new();
            for (shared, store) in [(true, &params.shared), (false, &params.local)] {
                for (ti, t) in store.iter().enumerate() {
                    all.extend(t.grad.iter().enumerate().map(|(i, &g)| (shared, ti, i, g)));
                }
            }
            let gmax = all.iter().fold(0.0f64, |m, e| m.max(e.3.abs()));
            let nonzero: Vec<_> = all.iter().copied().filter(|e| e.3 != 0.0).collect();
            let mut picks: Vec<_> = (0..128.min(nonzero.len()))
                .map(|_| nonzero[rng.random_range(0..nonzero.len())])
                .collect();
            picks.extend((0..32).map(|_| all[rng.random_range(0..all.len())]));

            for (shared, ti, i, analytic) in picks {
                let v0 = *entry(&mut params, shared, ti, i);
                *entry(&mut params, shared, ti, i) = v0 + FD_STEP;
                let (pp, sp) = predict_with_signs(&model, &params, &xs);
                *entry(&mut params, shared, ti, i) = v0 - FD_STEP;
                let (pm, sm) = predict_with_signs(&model, &params, &xs);
                *entry(&mut params, shared, ti, i) = v0;
                if sp != base_signs || sm != base_signs {
                    skipped += 1;
                    continue;
                }
                let numeric = mse_central_difference(&pp, &pm, &ys, FD_STEP);
                let scale = analytic.abs().max(numeric.abs()).max(FD_FLOOR * gmax);
                let err = if scale == 0.0 {
                    0.0
                } else {
                    (analytic - numeric).abs() / scale
                };
                checked += 1;
                worst = worst.max(err);
                if err >= 1e-6 && failures.len() < 5 {
                    failures.push(format!("{name} draw {draw}: analytic {analytic:e} numeric {numeric:e}"));
                }
            }
        }
    }
    let elapsed = minutes(start);
    let pass = worst < 1e-6 && failures.is_empty() && elapsed < 2.0 && checked > 0;
    Outcome::new(
        pass,
        format!(
            "7 presets x 20 draws x 50 points, {checked} entries checked, {skipped} skipped at activation kinks, \
             max relative error {worst:.2e} (< 1e-6, denominator floor {FD_FLOOR:e} x max gradient), {elapsed:.2} min (< 2){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------- AC2

const DYADIC_LEVELS: [(f64, usize); 3] = [(1.0, 5), (2.0, 9), (4.0, 17)];

fn dyadic_dif(transform: TransformKind) -> ModelConfig {
    let freqs = DYADIC_LEVELS.iter().map(|l| l.0).collect();
    let res = DYADIC_LEVELS.iter().map(|l| l.1).collect();
    let t = if transform == TransformKind::Identity {
        TransformSpec::identity()
    } else {
        TransformSpec::new(transform, freqs)
    };
    ModelConfig {
        dims: 2,
        factors: vec![
            FactorSpec::grid(TransformSpec::identity(), vec![2; 3], vec![9; 3], Role::Coefficient),
            FactorSpec::grid(t, vec![2; 3], res, Role::Basis),
        ],
        connector: Connector::Hadamard,
        projection: ProjectionSpec::linear(1),
        contraction: ContractionSpec::unit(2),
    }
}

/// Bilinear interpolation of channel `c` of an `m x m x k` grid.
fn bilinear(values: &[f64], m: usize, k: usize, c: usize, u: [f64; 2]) -> f64 {
    let top = (m - 1) as f64;
    let split = |v: f64| {
        let p = v.clamp(0.0, 1.0) * top;
        let i = (p.floor() as usize).min(m - 2);
        (i, p - i as f64)
    };
    let ((i, a), (j, b)) = (split(u[0]), split(u[1]));
    let at = |r: usize, s: usize| values[(r * m + s) * k + c];
    (1.0 - a) * ((1.0 - b) * at(i, j) + b * at(i, j + 1)) + a * ((1.0 - b) * at(i + 1, j) + b * at(i + 1, j + 1))
}

fn oracle_scalar(params: &FieldParams<f64>, x: [f64; 2], periodic: bool) -> f64 {
    let mut s = 0.0;
    for (l, &(f, m)) in DYADIC_LEVELS.iter().enumerate() {
        let coef = &params.tensor(&format!("f0.l{l}")).unwrap().values;
        let basis = &params.tensor(&format!("f1.l{l}")).unwrap().values;
        let u = if periodic {
            x.map(|v| {
                let t = v * f;
                t - t.floor()
            })
        } else {
            x
        };
        for c in 0..2 {
            s += bilinear(coef, 9, 2, c, x) * bilinear(basis, m, 2, c, u);
        }
    }
    s
}

fn fill_dyadic(params: &mut FieldParams<f64>, prefix: &str, rng: &mut ChaCha8Rng) {
    for store in [&mut params.shared, &mut params.local] {
        for t in store.iter_mut().filter(|t| t.name.starts_with(prefix)) {
            t.values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-256..=256) as f64 / 256.0);
        }
    }
}

fn fill_const(params: &mut FieldParams<f64>, prefix: &str, value: f64) {
    for store in [&mut params.shared, &mut params.local] {
        for t in store.iter_mut().filter(|t| t.name.starts_with(prefix)) {
            t.values.fill(value);
        }
    }
}

/// Counts rows where the model and the oracle differ in any bit.
fn reduction_mismatches(kind: TransformKind, unit_coefficients: bool, seed: u64) -> usize {
    let model = Model::new(dyadic_dif(kind)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.zero_params::<f64>();
    fill_dyadic(&mut params, "f1.", &mut rng);
    if unit_coefficients {
        fill_const(&mut params, "f0.", 1.0);
    } else {
        fill_dyadic(&mut params, "f0.", &mut rng);
    }
    fill_const(&mut params, "proj.", 1.0);
    let mut xs: Vec<f64> = (0..4000).map(|_| rng.random_range(0..=1024) as f64 / 1024.0).collect();
    xs.extend_from_slice(&[0.0, 0.0, 1.0, 1.0, 0.5, 0.25]);
    let pred = model.predict(params.view(), Exec::Sequential, &xs, None, 512).unwrap();
    let periodic = kind != TransformKind::Identity;
    xs.chunks(2)
        .zip(&pred)
        .filter(|(x, &p)| p.to_bits() != oracle_scalar(&params, [x[0], x[1]], periodic).to_bits())
        .count()
}

fn reduction_chain() -> Outcome {
    let eq2 = reduction_mismatches(TransformKind::Sawtooth, true, 1);
    let eq1 = reduction_mismatches(TransformKind::Identity, true, 2);
    let general = reduction_mismatches(TransformKind::Sawtooth, false, 3);
    Outcome::new(
        eq2 + eq1 + general == 0,
        format!(
            "bitwise mismatches over 2003 points: unit coefficients with sawtooth basis {eq2}, \
             identity basis {eq1}, dyadic coefficients {general}"
        ),
    )
}

// ---------------------------------------------------------------- AC3

/// `(sigma, r, g, b)` from a closure of the point.
struct Field<F>(F);

impl<F: Fn([f64; 3]) -> [f64; 4]> RadianceSource for Field<F> {
    fn query(&self, points: &[f64], _dirs: &[f64]) -> FfResult<Vec<f64>> {
        Ok(points.chunks(3).flat_map(|p| (self.0)([p[0], p[1], p[2]])).collect())
    }
}

fn axis_ray() -> RayBatch {
    let mut rays = RayBatch::default();
    rays.push([0.0, 0.0, -3.0], [0.0, 0.0, 1.0]);
    rays.clip_to_box([-1.0; 3], [1.0; 3]);
    rays
}

fn compositing_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut weights = Vec::new();
    for _ in 0..10_000 {
        let n = rng.random_range(1..=128);
        let samples: Vec<f64> = (0..n)
            .flat_map(|_| {
                let sigma = if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random_range(0.0..50.0)
                };
                [sigma, rng.random(), rng.random(), rng.random()]
            })
            .collect();
        let deltas: Vec<f64> = (0..n).map(|_| rng.random_range(1e-4..0.1)).collect();
        composite_ray(&samples, &deltas, [1.0; 3], Some(&mut weights));
        worst = worst.max((weights.iter().sum::<f64>() - 1.0).abs());
    }

    let empty = render_rays(
        &Field(|_: [f64; 3]| [0.0, 1.0, 0.0, 0.0]),
        &axis_ray(),
        16,
        [0.2, 0.3, 0.4],
        None,
    )
    .unwrap();
    let opaque_samples = [1e30, 0.1, 0.6, 0.9];
    let mut opaque_w = Vec::new();
    composite_ray(&opaque_samples, &[0.5], [1.0; 3], Some(&mut opaque_w));
    let opaque = render_rays(
        &Field(|_: [f64; 3]| [1e30, 0.1, 0.6, 0.9]),
        &axis_ray(),
        1,
        [1.0; 3],
        None,
    )
    .unwrap();
    let half = std::f64::consts::LN_2;
    let pair = render_rays(
        &Field(|p: [f64; 3]| {
            if p[2] < 0.0 {
                [half, 1.0, 0.0, 0.0]
            } else {
                [1e30, 0.0, 1.0, 0.0]
            }
        }),
        &axis_ray(),
        2,
        [0.0; 3],
        None,
    )
    .unwrap();
    let ex1 = empty == [0.2, 0.3, 0.4];
    let ex2 = opaque == [0.1, 0.6, 0.9] && opaque_w[0] == 1.0;
    let ex3 = pair == [0.5, 0.5, 0.0];
    Outcome::new(
        worst < 1e-6 && ex1 && ex2 && ex3,
        format!(
            "10^4 rays, max |sum T*alpha + T_res - 1| = {worst:.2e} (< 1e-6); empty space {}, opaque sample {}, \
             two-sample mix {:?}",
            if ex1 { "exact" } else { "wrong" },
            if ex2 { "exact" } else { "wrong" },
            pair
        ),
    )
}

// ---------------------------------------------------------------- AC4

fn image_fit(connector: Connector, image: &ImageSignal) -> (f64, f64) {
    let mut o = PresetOptions::new(2);
    o.extent = image.width.min(image.height) as f64;
    o.output_dim = Some(image.channels);
    let mut cfg = build_preset("dif_grid", &o).unwrap();
    cfg.connector = connector;
    let model = Model::new(cfg).unwrap();
    let mut params = model.init_params::<f32>(0);
    let data = image.to_direct::<f32>();
    let schedule = Schedule {
        steps: 5000,
        batch: 2048,
        log_every: 5000,
        ..Default::default()
    };
    let start = Instant::now();
    train_direct(&model, &mut params, &data, &schedule).unwrap();
    let pred = model
        .predict(params.view(), Exec::Sequential, &data.xs, None, 8192)
        .unwrap();
    (psnr(&pred, &data.ys), minutes(start))
}

fn image_regression() -> Outcome {
    let image = synthetic_image(256, 256, 0);
    let (product, t_product) = image_fit(Connector::Hadamard, &image);
    let (concat, _) = image_fit(Connector::Concatenate, &image);
    Outcome::new(
        product >= 35.0 && t_product <= 5.0 && product > concat,
        format!(
            "256x256, dif_grid 2D, 5k steps: product {product:.2} dB (>= 35) in {t_product:.2} min (<= 5), \
             concatenation {concat:.2} dB"
        ),
    )
}

// ---------------------------------------------------------------- AC5

fn sdf_fit(shape: Shape) -> (f64, f64, f64) {
    let mut cfg = build_preset("dif_grid", &PresetOptions::new(3)).unwrap();
    cfg.contraction = ContractionSpec::bounded(SDF_BBOX.0.to_vec(), SDF_BBOX.1.to_vec());
    let model = Model::new(cfg).unwrap();
    let start = Instant::now();
    let train = sample_sdf(shape, 800_000, 0.8, SDF_BBOX, 1).to_direct::<f32>();
    let mut params = model.init_params::<f32>(0);
    let schedule = Schedule {
        steps: 10_000,
        batch: 4096,
        mu: 0.0,
        lr_decay: 0.1,
        log_every: 10_000,
        ..Default::default()
    };
    train_direct(&model, &mut params, &train, &schedule).unwrap();
    let elapsed = minutes(start);
    let eval = |near: f64, seed: u64| {
        let test = sample_sdf(shape, 100_000, near, SDF_BBOX, seed).to_direct::<f32>();
        let pred = model
            .predict(params.view(), Exec::Sequential, &test.xs, None, 8192)
            .unwrap();
        giou(&pred, &test.ys)
    };
    (eval(0.8, 2), eval(0.0, 3), elapsed)
}

fn sdf_reconstruction() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for shape in ["sphere", "torus"].map(|s| Shape::parse(s).unwrap()) {
        let (g, uniform, t) = sdf_fit(shape);
        pass &= g >= 0.99 && t <= 10.0;
        parts.push(format!(
            "{} gIoU {g:.4} (>= 0.99) in {t:.2} min (<= 10), uniform-only gIoU {uniform:.4}",
            shape.name()
        ));
    }
    Outcome::new(
        pass,
        format!("8e5 samples, 10k steps, 1e5 fresh 80/20 samples: {}", parts.join("; ")),
    )
}

// ---------------------------------------------------------------- AC6

const RF_SIZE: usize = 32;
const RF_TRAIN_SAMPLES: usize = 64;
const RF_TRUTH_SAMPLES: usize = 128;

fn radiance_self_consistency() -> Outcome {
    let start = Instant::now();
    let scene = BlobScene::random(6, 0);
    let cameras = orbit_cameras(72, 4.0, RF_SIZE, 0.7);
    let views = synthetic_views(&scene, &cameras, SDF_BBOX, RF_TRUTH_SAMPLES, [1.0; 3]).unwrap();
    let (mut train, mut test) = (RayBatch::default(), RayBatch::default());
    for (i, v) in views.iter().enumerate() {
        if i % 9 == 4 {
            test.extend(v);
        } else {
            train.extend(v);
        }
    }

    let mut o = PresetOptions::new(3);
    o.radiance = true;
    o.coef_res = Some(32);
    o.extent = 256.0;
    let mut cfg = build_preset("dif_grid", &o).unwrap();
    cfg.contraction = ContractionSpec::bounded(SDF_BBOX.0.to_vec(), SDF_BBOX.1.to_vec());
    let model = Model::new(cfg).unwrap();
    let mut params = model.init_params::<f32>(0);
    let data = RadianceData::<f32>::new(train.clone(), RF_TRAIN_SAMPLES).unwrap();
    let schedule = Schedule {
        steps: 4000,
        batch: 256,
        log_every: 4000,
        ..Default::default()
    };
    train_direct(&model, &mut params, &data, &schedule).unwrap();
    let field = FittedField {
        model: &model,
        params: params.view(),
        exec: Exec::Sequential,
        chunk: 8192,
    };
    let pred = render_rays(&field, &test, RF_TRUTH_SAMPLES, [1.0; 3], None).unwrap();
    let held_out = psnr(&pred, &test.targets);
    let elapsed = minutes(start);
    Outcome::new(
        held_out >= 30.0 && elapsed <= 20.0,
        format!(
            "{} training views, {} held out ({RF_SIZE}x{RF_SIZE}): held-out PSNR {held_out:.2} dB (>= 30) \
             in {elapsed:.2} min (<= 20)",
            views.len() - views.len() / 9,
            views.len() / 9
        ),
    )
}

// ---------------------------------------------------------------- AC7

struct HandConfig {
    dims: usize,
    channels: Vec<usize>,
    coef_res: Vec<usize>,
    basis_res: Vec<usize>,
    projection: ProjectionSpec,
    /// Parameter count worked out by hand.
    expected: usize,
}

impl HandConfig {
    fn model(&self) -> ModelConfig {
        let levels = self.channels.len();
        let mut coef = FactorSpec::grid(
            TransformSpec::identity(),
            self.channels.clone(),
            self.coef_res.clone(),
            Role::Coefficient,
        );
        coef.broadcast = true;
        let basis = FactorSpec::grid(
            TransformSpec::new(TransformKind::Sawtooth, (0..levels).map(|l| 2.0 + l as f64).collect()),
            self.channels.clone(),
            self.basis_res.clone(),
            Role::Basis,
        );
        ModelConfig {
            dims: self.dims,
            factors: vec![coef, basis],
            connector: Connector::Hadamard,
            projection: self.projection.clone(),
            contraction: ContractionSpec::unit(self.dims),
        }
    }

    /// `|P| + sum_l M_c^D + K_l M_b^D`.
    fn formula(&self) -> usize {
        let k: usize = self.channels.iter().sum();
        let p = &self.projection;
        let mut widths = vec![k];
        widths.extend(&p.hidden);
        widths.push(p.output_dim);
        let proj: usize = if p.hidden.is_empty() && p.kind == factor_fields::model::ProjectionKind::Linear {
            k * p.output_dim
        } else {
            widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
        };
        let d = self.dims as u32;
        proj + self
            .channels
            .iter()
            .zip(&self.coef_res)
            .zip(&self.basis_res)
            .map(|((&kl, &mc), &mb)| mc.pow(d) + kl * mb.pow(d))
            .sum::<usize>()
    }
}

fn parameter_accounting() -> Outcome {
    let total = build_preset("dif_grid", &PresetOptions::new(3))
        .unwrap()
        .param_count()
        .total;
    let rel = (total as f64 - 5.10e6).abs() / 5.10e6;
    let mut mlp = ProjectionSpec::mlp(2);
    mlp.hidden = vec![8];
    let hand = [
        HandConfig {
            dims: 2,
            channels: vec![2],
            coef_res: vec![4],
            basis_res: vec![8],
            projection: ProjectionSpec::linear(1),
            expected: 146,
        },
        HandConfig {
            dims: 3,
            channels: vec![4, 2],
            coef_res: vec![3, 5],
            basis_res: vec![4, 6],
            projection: mlp,
            expected: 914,
        },
        HandConfig {
            dims: 2,
            channels: vec![4, 4, 2],
            coef_res: vec![2, 3, 4],
            basis_res: vec![5, 6, 7],
            projection: ProjectionSpec::linear(3),
            expected: 401,
        },
    ];
    let mut exact = true;
    let mut counts = Vec::new();
    for h in &hand {
        let got = h.model().param_count().total;
        exact &= got == h.expected && got == h.formula();
        counts.push(format!("{got}/{}", h.expected));
    }
    Outcome::new(
        rel <= 0.05 && exact,
        format!(
            "dif_grid 3D defaults {total} params ({:.2}% from 5.10M, <= 5%); hand configs {}",
            rel * 100.0,
            counts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- AC8

const TEXTURE: usize = 64;

fn texture_model() -> Model {
    let mut o = PresetOptions::new(2);
    o.eta = Some(1);
    o.coef_res = Some(16);
    o.extent = 256.0;
    Model::new(build_preset("dif_grid", &o).unwrap()).unwrap()
}

fn masked_psnr(
    model: &Model,
    shared: &ParamStore<f32>,
    local: &ParamStore<f32>,
    img: &ImageSignal,
    keep: &[bool],
) -> f64 {
    let data = img.to_direct::<f32>();
    let view = factor_fields::engine::param::Params { shared, local };
    let pred = model.predict(view, Exec::Sequential, &data.xs, None, 8192).unwrap();
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (i, &k) in keep.iter().enumerate() {
        if !k {
            p.extend_from_slice(&pred[3 * i..3 * i + 3]);
            t.extend_from_slice(&data.ys[3 * i..3 * i + 3]);
        }
    }
    psnr(&p, &t)
}

fn shared_basis_trial(seed: u64) -> (f64, f64) {
    let model = texture_model();
    let pattern = 100 + seed;
    let textures: Vec<ImageSignal> = (0..5)
        .map(|i| patterned_texture(TEXTURE, 10 * seed + i, pattern))
        .collect();
    let signals: Vec<DirectData<f32>> = textures[..4].iter().map(|t| t.to_direct()).collect();
    let mut shared = model.init_params::<f32>(seed).shared;
    let mut locals: Vec<ParamStore<f32>> = (0..4).map(|i| model.init_local(seed * 10 + i)).collect();
    let pretrain = Schedule {
        steps: 1500,
        batch: 1024,
        seed,
        log_every: 1500,
        ..Default::default()
    };
    train_shared(&model, &mut shared, &mut locals, &signals, &pretrain).unwrap();

    let target = &textures[4];
    let keep = square_mask(TEXTURE, TEXTURE, 0.3, seed);
    let visible = [target.masked_direct::<f32>(&keep)];
    let finetune = Schedule {
        steps: 1000,
        seed: seed + 1,
        ..pretrain
    };

    let mut frozen = shared.clone();
    frozen.set_learnable(false);
    let mut local = [mean_local(&locals).unwrap()];
    train_shared(&model, &mut frozen, &mut local, &visible, &finetune).unwrap();
    let pretrained = masked_psnr(&model, &frozen, &local[0], target, &keep);

    let fresh = model.init_params::<f32>(seed + 500);
    let mut fresh_shared = fresh.shared;
    let mut fresh_local = [fresh.local];
    train_shared(&model, &mut fresh_shared, &mut fresh_local, &visible, &finetune).unwrap();
    let scratch = masked_psnr(&model, &fresh_shared, &fresh_local[0], target, &keep);
    (pretrained, scratch)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn shared_basis_generalization() -> Outcome {
    let trials: Vec<(f64, f64)> = (0..5).map(shared_basis_trial).collect();
    let gain = median(trials.iter().map(|t| t.0 - t.1).collect());
    let per_seed: Vec<String> = trials.iter().map(|t| format!("{:.2}/{:.2}", t.0, t.1)).collect();
    Outcome::new(
        gain >= 1.0,
        format!(
            "masked-region PSNR pretrained/fresh per seed [{}], median gain {gain:.2} dB (>= 1)",
            per_seed.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- AC9

const ROUND_TRIP_CASES: u32 = 1000;

fn f32_bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn tensor_strategy(index: usize) -> impl Strategy<Value = StoredTensor> {
    (prop::collection::vec(0usize..4, 0..=3), any::<bool>(), "[a-z]{1,6}").prop_flat_map(move |(shape, wide, stem)| {
        let n: usize = shape.iter().product();
        let name = format!("{stem}.{index}");
        let data = if wide {
            prop::collection::vec(any::<u64>().prop_map(f64::from_bits), n)
                .prop_map(TensorData::F64)
                .boxed()
        } else {
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
                .prop_map(TensorData::F32)
                .boxed()
        };
        data.prop_map(move |data| StoredTensor {
            name: name.clone(),
            shape: shape.clone(),
            data,
        })
    })
}

fn checkpoint_strategy() -> impl Strategy<Value = Checkpoint> {
    (0usize..6)
        .prop_flat_map(|n| (0..n).map(tensor_strategy).collect::<Vec<_>>())
        .prop_flat_map(|tensors| ("[ -~\n]{0,64}", Just(tensors)))
        .prop_map(|(config, tensors)| Checkpoint { config, tensors })
}

fn data_bits(d: &TensorData) -> Vec<u64> {
    match d {
        TensorData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        TensorData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
    }
}

fn check_checkpoint(c: Checkpoint) -> std::result::Result<(), TestCaseError> {
    let bytes = c.encode();
    let back = Checkpoint::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&back.config, &c.config);
    let mut sorted: Vec<&StoredTensor> = c.tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    prop_assert_eq!(back.tensors.len(), sorted.len());
    for (a, b) in back.tensors.iter().zip(sorted) {
        prop_assert_eq!(&a.name, &b.name);
        prop_assert_eq!(&a.shape, &b.shape);
        prop_assert_eq!(a.data.dtype(), b.data.dtype());
        prop_assert_eq!(data_bits(&a.data), data_bits(&b.data));
    }
    prop_assert_eq!(back.encode(), bytes);
    Ok(())
}

fn image_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<u8>)> {
    (1usize..12, 1usize..12, prop::sample::select(vec![1usize, 3, 4]))
        .prop_flat_map(|(w, h, c)| (Just(w), Just(h), Just(c), prop::collection::vec(any::<u8>(), w * h * c)))
}

fn check_image((w, h, c, raw): (usize, usize, usize, Vec<u8>)) -> std::result::Result<(), TestCaseError> {
    let fail = |e: factor_fields::Error| TestCaseError::fail(e.to_string());
    if c != 4 {
        let mut ppm = format!("{}\n{w} {h}\n255\n", if c == 3 { "P6" } else { "P5" }).into_bytes();
        ppm.extend_from_slice(&raw);
        let img = decode_ppm(&ppm).map_err(fail)?;
        prop_assert_eq!(encode_ppm(&img).map_err(fail)?, ppm);
    }
    let grey_or_rgb = if c == 4 {
        // the PPM reader has no alpha, so build from a wider PPM-free path
        let values = raw.iter().map(|&b| b as f32 / 255.0).collect();
        ImageSignal::new(w, h, 4, values).map_err(fail)?
    } else {
        let mut ppm = format!("{}\n{w} {h}\n255\n", if c == 3 { "P6" } else { "P5" }).into_bytes();
        ppm.extend_from_slice(&raw);
        decode_ppm(&ppm).map_err(fail)?
    };
    let png = encode_png(&grey_or_rgb).map_err(fail)?;
    let back = decode_png(&png).map_err(fail)?;
    prop_assert_eq!((back.width, back.height, back.channels), (w, h, c));
    prop_assert_eq!(f32_bits(&back.values), f32_bits(&grey_or_rgb.values));
    prop_assert_eq!(encode_png(&back).map_err(fail)?, png);
    Ok(())
}

fn sdf_strategy() -> impl Strategy<Value = SdfSampleSet> {
    (0usize..64).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), 3 * n),
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n),
        )
            .prop_map(move |(points, sdf)| SdfSampleSet {
                points,
                sdf,
                tags: vec![SampleTag::Unknown; n],
            })
    })
}

fn check_sdf(set: SdfSampleSet) -> std::result::Result<(), TestCaseError> {
    let bytes = encode_sdf(&set);
    let back = decode_sdf(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(f32_bits(&back.points), f32_bits(&set.points));
    prop_assert_eq!(f32_bits(&back.sdf), f32_bits(&set.sdf));
    prop_assert_eq!(&back.tags, &set.tags);
    prop_assert_eq!(encode_sdf(&back), bytes);
    Ok(())
}

fn run_property<S: Strategy>(
    strategy: S,
    check: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) -> std::result::Result<(), String> {
    let mut runner = TestRunner::new(PropConfig {
        cases: ROUND_TRIP_CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

fn format_round_trips() -> Outcome {
    let results = [
        ("checkpoint", run_property(checkpoint_strategy(), check_checkpoint)),
        ("PPM/PNG", run_property(image_strategy(), check_image)),
        ("SDF samples", run_property(sdf_strategy(), check_sdf)),
    ];
    let pass = results.iter().all(|r| r.1.is_ok());
    let parts: Vec<String> = results
        .iter()
        .map(|(name, r)| match r {
            Ok(()) => format!("{name} ok"),
            Err(e) => format!("{name} failed: {e}"),
        })
        .collect();
    Outcome::new(
        pass,
        format!("{ROUND_TRIP_CASES} cases each, bit-exact: {}", parts.join(", ")),
    )
}
