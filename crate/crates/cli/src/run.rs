use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use factor_fields::engine::FieldParams;
use factor_fields::exec::init_threads;
use factor_fields::io::{
    dump_config, load_checkpoint, load_image, load_rays, load_sdf_samples, parse_config, parse_config_with,
    save_checkpoint, save_image, save_rays, save_sdf_samples, FinalRecord, MetricReport, RayDataset, RunConfig,
};
use factor_fields::model::{Model, ProjectionKind};
use factor_fields::tasks::{
    giou, mse, orbit_cameras, patterned_texture, pixel_coords, psnr, render_rays, sample_sdf, synthetic_image,
    synthetic_views, train_direct, train_shared as joint, BlobScene, DirectData, FittedField, ImageSignal,
    RadianceData, RayBatch, SdfSampleSet, Shape, TrainLog, SDF_BBOX,
};
use factor_fields::{DType, Real};

use crate::Common;

const PREDICT_CHUNK: usize = 8192;
const TRUTH_SAMPLES: usize = 128;
const ORBIT_RADIUS: f64 = 4.0;
const ORBIT_FOV: f64 = 0.7;

macro_rules! with_real {
    ($precision:expr, $f:ident ( $($arg:expr),* )) => {
        match $precision {
            DType::F32 => $f::<f32>($($arg),*),
            DType::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn read_config(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(String::new()),
    }
}

fn resolve(common: &Common, defaults: &[String]) -> Result<RunConfig> {
    let text = read_config(common.config.as_deref())?;
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = common.threads {
        overrides.push(format!("threads={t}"));
    }
    let run = parse_config_with(&text, defaults, &overrides)?;
    init_threads(run.threads);
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(run)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

fn finish(
    out: &Path,
    run: &RunConfig,
    params: &FieldParams<impl Real>,
    log: &TrainLog,
    fin: FinalRecord,
) -> Result<()> {
    save_checkpoint(out.join("model.ffld"), &dump_config(run), params)?;
    MetricReport::from_log(log, fin.clone()).save(out.join("metrics.log"))?;
    println!("{}", fin.summary());
    Ok(())
}

fn final_record(task: &str, run: &RunConfig, log: &TrainLog) -> FinalRecord {
    FinalRecord::new(
        task,
        run.schedule.seed,
        run.schedule.steps,
        run.model.param_count(),
        log.total_ms,
    )
}

fn image_defaults(img: &ImageSignal) -> Vec<String> {
    vec![
        "dims=2".into(),
        format!("extent={}", img.width.min(img.height)),
        format!("output_dim={}", img.channels),
    ]
}

fn to_image(width: usize, height: usize, channels: usize, values: &[impl Real]) -> Result<ImageSignal> {
    Ok(ImageSignal::new(
        width,
        height,
        channels,
        values.iter().map(|v| v.as_f64() as f32).collect(),
    )?)
}

fn image_psnr<T: Real>(
    model: &Model,
    params: &FieldParams<T>,
    run: &RunConfig,
    img: &ImageSignal,
) -> Result<(f64, Vec<T>)> {
    let data: DirectData<T> = img.to_direct();
    let pred = model.predict(params.view(), run.schedule.exec, &data.xs, None, PREDICT_CHUNK)?;
    Ok((psnr(&pred, &data.ys), pred))
}

pub fn fit_image(common: &Common, path: &Path) -> Result<()> {
    let img = load_image(path)?;
    let run = resolve(common, &image_defaults(&img))?;
    with_real!(run.precision, fit_image_as(common, path, &run, &img))
}

fn fit_image_as<T: Real>(common: &Common, path: &Path, run: &RunConfig, img: &ImageSignal) -> Result<()> {
    let model = Model::new(run.model.clone())?;
    let mut params = model.init_params::<T>(run.schedule.seed);
    let log = train_direct(&model, &mut params, &img.to_direct::<T>(), &run.schedule)?;
    let (p, pred) = image_psnr(&model, &params, run, img)?;
    let recon = to_image(img.width, img.height, img.channels, &pred)?;
    save_image(common.out.join(format!("{}_recon.png", stem(path))), &recon)?;
    let mut fin = final_record("fit-image", run, &log);
    fin.psnr = Some(p);
    finish(&common.out, run, &params, &log, fin)
}

fn sdf_giou<T: Real>(
    model: &Model,
    params: &FieldParams<T>,
    run: &RunConfig,
    set: &SdfSampleSet,
) -> Result<(f64, f64)> {
    let data: DirectData<T> = set.to_direct();
    let pred = model.predict(params.view(), run.schedule.exec, &data.xs, None, PREDICT_CHUNK)?;
    Ok((giou(&pred, &data.ys), mse(&pred, &data.ys)))
}

/// Signed distance on the `z = 0` plane of the bounding box, mapped to grey.
fn sdf_slice<T: Real>(model: &Model, params: &FieldParams<T>, run: &RunConfig, size: usize) -> Result<ImageSignal> {
    let c = &run.model.contraction;
    let uv: Vec<f64> = pixel_coords(size, size);
    let zc = 0.5 * (c.min[2] + c.max[2]);
    let xs: Vec<T> = uv
        .chunks(2)
        .flat_map(|p| {
            [
                T::of(c.min[0] + p[0] * (c.max[0] - c.min[0])),
                T::of(c.max[1] - p[1] * (c.max[1] - c.min[1])),
                T::of(zc),
            ]
        })
        .collect();
    let pred = model.predict(params.view(), run.schedule.exec, &xs, None, PREDICT_CHUNK)?;
    let grey: Vec<f32> = pred
        .iter()
        .map(|v| {
            let s = v.as_f64();
            let shade = 0.5 + 0.5 * (4.0 * s).tanh();
            (if s < 0.0 { 0.6 * shade } else { shade }) as f32
        })
        .collect();
    Ok(ImageSignal::new(size, size, 1, grey)?)
}

fn sdf_defaults() -> Vec<String> {
    let (lo, hi) = SDF_BBOX;
    vec![
        "dims=3".into(),
        "output_dim=1".into(),
        format!("bbox={},{},{},{},{},{}", lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]),
    ]
}

pub fn fit_sdf(common: &Common, path: &Path, test: Option<&Path>) -> Result<()> {
    let set = load_sdf_samples(path)?;
    let test = test.map(load_sdf_samples).transpose()?;
    let run = resolve(common, &sdf_defaults())?;
    with_real!(run.precision, fit_sdf_as(common, &run, &set, test.as_ref()))
}

fn fit_sdf_as<T: Real>(
    common: &Common,
    run: &RunConfig,
    set: &SdfSampleSet,
    test: Option<&SdfSampleSet>,
) -> Result<()> {
    let model = Model::new(run.model.clone())?;
    let mut params = model.init_params::<T>(run.schedule.seed);
    let log = train_direct(&model, &mut params, &set.to_direct::<T>(), &run.schedule)?;
    let (g, m) = sdf_giou(&model, &params, run, test.unwrap_or(set))?;
    save_image(common.out.join("sdf_slice.png"), &sdf_slice(&model, &params, run, 256)?)?;
    let mut fin = final_record("fit-sdf", run, &log);
    fin.giou = Some(g);
    fin.extra.insert("mse".into(), m);
    finish(&common.out, run, &params, &log, fin)
}

fn rf_defaults(data: &RayDataset) -> Vec<String> {
    let (lo, hi) = data.bbox;
    vec![
        "dims=3".into(),
        "radiance=true".into(),
        format!("bbox={},{},{},{},{},{}", lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]),
    ]
}

fn render_field<T: Real>(model: &Model, params: &FieldParams<T>, run: &RunConfig, rays: &RayBatch) -> Result<Vec<f64>> {
    let field = FittedField {
        model,
        params: params.view(),
        exec: run.schedule.exec,
        chunk: PREDICT_CHUNK,
    };
    Ok(render_rays(
        &field,
        rays,
        run.task.ray_samples,
        run.model.projection.background,
        None,
    )?)
}

fn save_views<T: Real>(
    out: &Path,
    model: &Model,
    params: &FieldParams<T>,
    run: &RunConfig,
    data: &RayDataset,
    limit: usize,
) -> Result<Vec<f64>> {
    let all = render_field(model, params, run, &data.rays)?;
    let n = data.view_width * data.view_height;
    for v in 0..data.views().min(limit) {
        let img = to_image(data.view_width, data.view_height, 3, &all[3 * v * n..3 * (v + 1) * n])?;
        save_image(out.join(format!("view_{v:03}.png")), &img)?;
    }
    Ok(all)
}

pub fn fit_rf(common: &Common, path: &Path, test: Option<&Path>) -> Result<()> {
    let data = load_rays(path)?;
    if data.rays.targets.is_empty() {
        bail!("{}: training rays carry no target colours", path.display());
    }
    let test = test.map(load_rays).transpose()?;
    let run = resolve(common, &rf_defaults(&data))?;
    with_real!(run.precision, fit_rf_as(common, &run, &data, test.as_ref()))
}

fn fit_rf_as<T: Real>(common: &Common, run: &RunConfig, data: &RayDataset, test: Option<&RayDataset>) -> Result<()> {
    let model = Model::new(run.model.clone())?;
    let mut params = model.init_params::<T>(run.schedule.seed);
    let objective = RadianceData::<T>::new(data.rays.clone(), run.task.ray_samples)?;
    let log = train_direct(&model, &mut params, &objective, &run.schedule)?;
    let eval = test.unwrap_or(data);
    let pred = save_views(&common.out, &model, &params, run, eval, 8)?;
    let mut fin = final_record("fit-rf", run, &log);
    fin.psnr = Some(psnr(&pred, &eval.rays.targets));
    finish(&common.out, run, &params, &log, fin)
}

pub fn train_shared(common: &Common, paths: &[PathBuf]) -> Result<()> {
    let images = paths.iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
    let first = &images[0];
    if let Some((p, _)) = paths
        .iter()
        .zip(&images)
        .find(|(_, i)| (i.width, i.height, i.channels) != (first.width, first.height, first.channels))
    {
        bail!("{}: every image must match the first in size and channels", p.display());
    }
    let run = resolve(common, &image_defaults(first))?;
    with_real!(run.precision, train_shared_as(common, &run, paths, &images))
}

fn train_shared_as<T: Real>(common: &Common, run: &RunConfig, paths: &[PathBuf], images: &[ImageSignal]) -> Result<()> {
    let model = Model::new(run.model.clone())?;
    let seed = run.schedule.seed;
    let FieldParams { mut shared, local } = model.init_params::<T>(seed);
    let mut locals = vec![local];
    locals.extend((1..images.len()).map(|i| model.init_local::<T>(seed + i as u64)));
    let signals: Vec<DirectData<T>> = images.iter().map(|i| i.to_direct()).collect();
    let log = joint(&model, &mut shared, &mut locals, &signals, &run.schedule)?;
    let mut fin = final_record("train-shared", run, &log);
    let mut total = 0.0;
    for (i, (local, img)) in locals.into_iter().zip(images).enumerate() {
        let params = FieldParams {
            shared: shared.clone(),
            local,
        };
        let (p, pred) = image_psnr(&model, &params, run, img)?;
        total += p;
        fin.extra.insert(format!("psnr_{i}"), p);
        let recon = to_image(img.width, img.height, img.channels, &pred)?;
        save_image(common.out.join(format!("{}_recon.png", stem(&paths[i]))), &recon)?;
        let name = if i == 0 {
            "model.ffld".to_string()
        } else {
            format!("model_{i}.ffld")
        };
        save_checkpoint(common.out.join(name), &dump_config(run), &params)?;
    }
    fin.psnr = Some(total / images.len() as f64);
    MetricReport::from_log(&log, fin.clone()).save(common.out.join("metrics.log"))?;
    println!("{}", fin.summary());
    Ok(())
}

fn load_model(path: &Path, threads: Option<usize>) -> Result<(RunConfig, Model, factor_fields::io::Checkpoint)> {
    let ckpt = load_checkpoint(path)?;
    let overrides: Vec<String> = threads.map(|t| format!("threads={t}")).into_iter().collect();
    let run = parse_config(&ckpt.config, &overrides).with_context(|| format!("{}: stored config", path.display()))?;
    init_threads(run.threads);
    let model = Model::new(run.model.clone())?;
    Ok((run, model, ckpt))
}

fn detect(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"SDF1") {
        "sdf"
    } else if bytes.starts_with(b"FFRD") {
        "rays"
    } else {
        "image"
    }
}

pub fn eval(checkpoint: &Path, input: &Path, threads: Option<usize>) -> Result<()> {
    let (run, model, ckpt) = load_model(checkpoint, threads)?;
    let head = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    with_real!(run.precision, eval_as(&run, &model, &ckpt, input, detect(&head)))
}

fn eval_as<T: Real>(
    run: &RunConfig,
    model: &Model,
    ckpt: &factor_fields::io::Checkpoint,
    input: &Path,
    kind: &str,
) -> Result<()> {
    let params = ckpt.to_params::<T>(model)?;
    let count = run.model.param_count();
    let line = match kind {
        "sdf" => {
            let (g, m) = sdf_giou(model, &params, run, &load_sdf_samples(input)?)?;
            format!("eval giou={g:.6} mse={m:.6e}")
        }
        "rays" => {
            let data = load_rays(input)?;
            if data.rays.targets.is_empty() {
                bail!("{}: rays carry no target colours", input.display());
            }
            let pred = render_field(model, &params, run, &data.rays)?;
            format!("eval psnr={:.6}", psnr(&pred, &data.rays.targets))
        }
        _ => {
            let (p, _) = image_psnr(model, &params, run, &load_image(input)?)?;
            format!("eval psnr={p:.6}")
        }
    };
    println!("{line} params={}", count.total);
    Ok(())
}

pub fn render(checkpoint: &Path, size: usize, views: usize, out: &Path, threads: Option<usize>) -> Result<()> {
    let (run, model, ckpt) = load_model(checkpoint, threads)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    with_real!(run.precision, render_as(&run, &model, &ckpt, size, views, out))
}

fn render_as<T: Real>(
    run: &RunConfig,
    model: &Model,
    ckpt: &factor_fields::io::Checkpoint,
    size: usize,
    views: usize,
    out: &Path,
) -> Result<()> {
    let params = ckpt.to_params::<T>(model)?;
    let cfg = &run.model;
    if cfg.projection.kind == ProjectionKind::VolumeRender {
        let c = &cfg.contraction;
        let cams = orbit_cameras(views, ORBIT_RADIUS, size, ORBIT_FOV);
        let mut rays = RayBatch::default();
        for cam in &cams {
            let mut r = cam.rays();
            r.clip_to_box([c.min[0], c.min[1], c.min[2]], [c.max[0], c.max[1], c.max[2]]);
            rays.extend(&r);
        }
        let data = RayDataset {
            view_width: size,
            view_height: size,
            bbox: ([c.min[0], c.min[1], c.min[2]], [c.max[0], c.max[1], c.max[2]]),
            rays,
        };
        save_views(out, model, &params, run, &data, views)?;
        println!("rendered {views} views");
    } else if cfg.dims == 3 {
        save_image(out.join("sdf_slice.png"), &sdf_slice(model, &params, run, size)?)?;
        println!("rendered sdf_slice.png");
    } else if cfg.dims == 2 {
        let xs: Vec<T> = pixel_coords(size, size);
        let pred = model.predict(params.view(), run.schedule.exec, &xs, None, PREDICT_CHUNK)?;
        save_image(
            out.join("render.png"),
            &to_image(size, size, cfg.projection.outputs(), &pred)?,
        )?;
        println!("rendered render.png");
    } else {
        bail!("rendering supports 2-D images, 3-D distance fields and radiance fields");
    }
    Ok(())
}

pub fn info(config: Option<&Path>, overrides: &[String]) -> Result<()> {
    let run = parse_config(&read_config(config)?, overrides)?;
    let c = run.model.param_count();
    println!(
        "projection={} coefficient={} basis={} total={}",
        c.projection, c.coefficient, c.basis, c.total
    );
    Ok(())
}

pub fn make_synthetic(
    kind: &str,
    out: &Path,
    count: usize,
    size: usize,
    seed: u64,
    views: usize,
    holdout: usize,
) -> Result<()> {
    match kind {
        "image" => save_image(out, &synthetic_image(size, size, seed))?,
        "texture" => save_image(out, &patterned_texture(size, seed, 0))?,
        "sphere-sdf" | "torus-sdf" => {
            let shape = Shape::parse(kind.trim_end_matches("-sdf")).expect("known shape");
            save_sdf_samples(out, &sample_sdf(shape, count, 0.8, SDF_BBOX, seed))?;
        }
        "blob-rays" => {
            let scene = BlobScene::random(6, seed);
            let cams = orbit_cameras(views + holdout, ORBIT_RADIUS, size, ORBIT_FOV);
            let rendered = synthetic_views(&scene, &cams, SDF_BBOX, TRUTH_SAMPLES, [1.0; 3])?;
            let pack = |batches: &[RayBatch]| {
                let mut rays = RayBatch::default();
                batches.iter().for_each(|b| rays.extend(b));
                RayDataset {
                    view_width: size,
                    view_height: size,
                    bbox: SDF_BBOX,
                    rays,
                }
            };
            save_rays(out, &pack(&rendered[..views]))?;
            if holdout > 0 {
                let test = out.with_file_name(format!(
                    "{}_test.{}",
                    stem(out),
                    out.extension()
                        .map_or("ffrd".into(), |e| e.to_string_lossy().into_owned())
                ));
                save_rays(&test, &pack(&rendered[views..]))?;
            }
        }
        other => bail!("unknown synthetic kind `{other}` (image, texture, sphere-sdf, torus-sdf, blob-rays)"),
    }
    println!("wrote {}", out.display());
    Ok(())
}
