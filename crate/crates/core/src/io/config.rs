//! Plain-text run configuration.
//!
//! The format is `key = value` lines with `#` comments. Top-level keys select
//! a preset and its options, the optimizer schedule and task settings.
//! `[projection]` and `[factor.N]` sections override or define individual
//! parts of the model. Lists are comma separated, optionally bracketed.
//!
//! Without a `preset` key and with no factor sections the `dif_grid` preset
//! is used. Without a `preset` key but with factor sections the model is
//! built from the sections alone, which is the form [`dump_config`] writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::engine::adam::AdamConfig;
use crate::engine::tape::Activation;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::factors::{FactorKind, FactorSpec, Role};
use crate::model::{build_preset, Connector, ModelConfig, PresetOptions, ProjectionKind, ProjectionSpec};
use crate::real::DType;
use crate::tasks::train::{Schedule, StreamMode};
use crate::transforms::{ContractionMode, ContractionSpec, TransformKind, TransformSpec};

const TOP_KEYS: &[&str] = &[
    "preset",
    "dims",
    "eta",
    "levels",
    "freqs",
    "coef_res",
    "basis_res",
    "extent",
    "output_dim",
    "radiance",
    "hash_log2",
    "tensor_res",
    "tensor_rank",
    "connector",
    "contraction",
    "bbox",
    "lr",
    "lr_decay",
    "beta1",
    "beta2",
    "eps",
    "mu",
    "batch",
    "steps",
    "seed",
    "log_every",
    "threads",
    "streams",
    "precision",
    "ray_samples",
    "eval_samples",
];
const PRESET_KEYS: &[&str] = &[
    "eta",
    "levels",
    "freqs",
    "coef_res",
    "basis_res",
    "extent",
    "output_dim",
    "radiance",
    "hash_log2",
    "tensor_res",
    "tensor_rank",
];
const PROJECTION_KEYS: &[&str] = &[
    "kind",
    "output_dim",
    "hidden",
    "activation",
    "view_levels",
    "density_shift",
    "background",
];
const FACTOR_KEYS: &[&str] = &[
    "kind",
    "role",
    "shared",
    "transform",
    "freqs",
    "hash_log2",
    "channels",
    "res",
    "hidden",
    "activation",
    "components",
    "broadcast",
];

/// Settings used by the task drivers rather than the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOptions {
    /// Samples per ray for radiance fitting.
    pub ray_samples: usize,
    /// Fresh evaluation samples for SDF metrics.
    pub eval_samples: usize,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            ray_samples: 64,
            eval_samples: 100_000,
        }
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub precision: DType,
    pub threads: usize,
    pub task: TaskOptions,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    default: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Top,
    Projection,
    Factor(usize),
}

#[derive(Debug, Default)]
struct Raw {
    sections: BTreeMap<Section, BTreeMap<String, Entry>>,
    lines: usize,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn allowed(section: &Section) -> &'static [&'static str] {
    match section {
        Section::Top => TOP_KEYS,
        Section::Projection => PROJECTION_KEYS,
        Section::Factor(_) => FACTOR_KEYS,
    }
}

fn parse_section(name: &str, line: usize) -> Result<Section> {
    if name == "projection" {
        return Ok(Section::Projection);
    }
    if let Some(n) = name.strip_prefix("factor.") {
        return n
            .parse()
            .map(Section::Factor)
            .map_err(|_| err(line, format!("bad factor index in section `[{name}]`")));
    }
    Err(err(line, format!("unknown section `[{name}]`")))
}

impl Raw {
    fn insert(&mut self, section: Section, key: &str, value: &str, line: usize, replace: bool) -> Result<()> {
        self.insert_entry(section, key, value, line, replace, false)
    }

    fn insert_entry(
        &mut self,
        section: Section,
        key: &str,
        value: &str,
        line: usize,
        replace: bool,
        default: bool,
    ) -> Result<()> {
        if !allowed(&section).contains(&key) {
            let hint = match &section {
                Section::Top => String::new(),
                Section::Projection => " in [projection]".into(),
                Section::Factor(i) => format!(" in [factor.{i}]"),
            };
            return Err(err(line, format!("unknown key `{key}`{hint}")));
        }
        let map = self.sections.entry(section).or_default();
        if default && map.contains_key(key) {
            return Ok(());
        }
        if !replace && map.contains_key(key) {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
        map.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line,
                default,
            },
        );
        Ok(())
    }

    fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::default();
        let mut section = Section::Top;
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            raw.lines = n;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(n, "unterminated section header"))?;
                section = parse_section(name.trim(), n)?;
                raw.sections.entry(section.clone()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(n, format!("expected `key = value`, got `{line}`")))?;
            raw.insert(section.clone(), k.trim(), v, n, false)?;
        }
        Ok(raw)
    }

    /// `key=value` with an optional `projection.` or `factor.N.` prefix.
    /// Overrides are numbered after the last line of the text.
    fn apply_override(&mut self, ov: &str, index: usize, default: bool) -> Result<()> {
        let line = if default { 0 } else { self.lines + index + 1 };
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| err(line, format!("override `{ov}` is not `key=value`")))?;
        let k = k.trim();
        let (section, key) = if let Some(rest) = k.strip_prefix("projection.") {
            (Section::Projection, rest)
        } else if let Some(rest) = k.strip_prefix("factor.") {
            let (idx, key) = rest
                .split_once('.')
                .ok_or_else(|| err(line, format!("override `{k}` needs `factor.N.key`")))?;
            (parse_section(&format!("factor.{idx}"), line)?, key)
        } else {
            (Section::Top, k)
        };
        self.insert_entry(section, key, v, line, true, default)
    }

    fn get(&self, section: &Section, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|m| m.get(key))
    }

    fn factor_indices(&self) -> Vec<usize> {
        self.sections
            .keys()
            .filter_map(|s| match s {
                Section::Factor(i) => Some(*i),
                _ => None,
            })
            .collect()
    }
}

fn value<T: FromStr>(e: &Entry, key: &str, what: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| err(e.line, format!("`{key}` expects {what}, got `{}`", e.value)))
}

fn list<T: FromStr>(e: &Entry, key: &str, what: &str) -> Result<Vec<T>> {
    let s = e.value.trim();
    let s = s
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(s)
        .trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| err(e.line, format!("`{key}` expects a list of {what}, got `{}`", e.value)))
        })
        .collect()
}

fn boolean(e: &Entry, key: &str) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(e.line, format!("`{key}` expects true or false, got `{}`", e.value))),
    }
}

fn named<T>(e: &Entry, key: &str, parse: impl Fn(&str) -> Option<T>, valid: &str) -> Result<T> {
    parse(&e.value).ok_or_else(|| err(e.line, format!("`{key}` must be one of {valid}, got `{}`", e.value)))
}

struct Ctx<'a> {
    raw: &'a Raw,
    section: Section,
}

impl Ctx<'_> {
    fn entry(&self, key: &str) -> Option<&Entry> {
        self.raw.get(&self.section, key)
    }

    fn value<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        self.entry(key).map(|e| value(e, key, what)).transpose()
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        self.entry(key).map(|e| list(e, key, what)).transpose()
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        self.entry(key).map(|e| boolean(e, key)).transpose()
    }

    fn named<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>, valid: &str) -> Result<Option<T>> {
        self.entry(key).map(|e| named(e, key, parse, valid)).transpose()
    }

    fn line(&self) -> usize {
        self.raw
            .sections
            .get(&self.section)
            .and_then(|m| m.values().map(|e| e.line).min())
            .unwrap_or(0)
    }
}

const FACTOR_KINDS: &str = "grid, hash, mlp, raw";
const TRANSFORMS: &str = "identity, sawtooth, triangular, sinusoidal, sincos, hashing, orthogonal1d, orthogonal2d";
const ACTIVATIONS: &str = "identity, relu, sigmoid, softplus, tanh";

fn apply_factor(c: &Ctx<'_>, base: Option<FactorSpec>) -> Result<FactorSpec> {
    let kind = c.named("kind", FactorKind::parse, FACTOR_KINDS)?;
    let mut f = match (base, kind) {
        (Some(f), None) => f,
        (Some(f), Some(k)) if f.kind == k => f,
        (_, Some(k)) => {
            let t = TransformSpec::identity();
            match k {
                FactorKind::DenseGrid => FactorSpec::grid(t, vec![], vec![], Role::Coefficient),
                FactorKind::HashedVectors => FactorSpec::hashed(19, vec![], vec![]),
                FactorKind::Mlp => FactorSpec::mlp(t, vec![], vec![], Role::Coefficient),
                FactorKind::RawCoords => FactorSpec::raw(t),
            }
        }
        (None, None) => return Err(err(c.line(), "a new factor section needs a `kind` key")),
    };
    if let Some(r) = c.named("role", Role::parse, "coef, basis")? {
        f.role = r;
        f.shared = r == Role::Basis;
    }
    if let Some(s) = c.boolean("shared")? {
        f.shared = s;
    }
    if let Some(t) = c.named("transform", TransformKind::parse, TRANSFORMS)? {
        f.transform.kind = t;
    }
    if let Some(v) = c.list("freqs", "numbers")? {
        f.transform.frequencies = v;
    }
    if let Some(v) = c.value("hash_log2", "an integer")? {
        f.transform.hash_table_log2_size = v;
    }
    if let Some(v) = c.list("channels", "integers")? {
        f.channels_per_level = v;
    }
    if let Some(v) = c.list("res", "integers")? {
        f.grid_resolutions = v;
    }
    if let Some(v) = c.list("hidden", "integers")? {
        f.mlp_hidden = v;
    }
    if let Some(v) = c.named("activation", Activation::parse, ACTIVATIONS)? {
        f.mlp_activation = v;
    }
    if let Some(e) = c.entry("components") {
        f.components = if e.value == "all" {
            None
        } else {
            Some(list(e, "components", "integers")?)
        };
    }
    if let Some(v) = c.boolean("broadcast")? {
        f.broadcast = v;
    }
    Ok(f)
}

fn apply_projection(c: &Ctx<'_>, mut p: ProjectionSpec) -> Result<ProjectionSpec> {
    if let Some(k) = c.named("kind", ProjectionKind::parse, "linear, mlp, volume")? {
        if k != p.kind {
            let q = p.output_dim;
            p = match k {
                ProjectionKind::Linear => ProjectionSpec::linear(q),
                ProjectionKind::Mlp => ProjectionSpec::mlp(q),
                ProjectionKind::VolumeRender => ProjectionSpec::volume(),
            };
        }
    }
    if let Some(v) = c.value("output_dim", "an integer")? {
        p.output_dim = v;
    }
    if let Some(v) = c.list("hidden", "integers")? {
        p.hidden = v;
    }
    if let Some(v) = c.named("activation", Activation::parse, ACTIVATIONS)? {
        p.activation = v;
    }
    if let Some(v) = c.value("view_levels", "an integer")? {
        p.view_levels = v;
    }
    if let Some(v) = c.value("density_shift", "a number")? {
        p.density_shift = v;
    }
    if let Some(e) = c.entry("background") {
        let v: Vec<f64> = list(e, "background", "numbers")?;
        p.background = v
            .try_into()
            .map_err(|_| err(e.line, "`background` expects three numbers"))?;
    }
    Ok(p)
}

fn resolve(raw: &Raw) -> Result<RunConfig> {
    let top = Ctx {
        raw,
        section: Section::Top,
    };
    let dims: usize = top.value("dims", "an integer")?.unwrap_or(2);
    if !(1..=3).contains(&dims) {
        return Err(err(top.entry("dims").map_or(0, |e| e.line), "`dims` must be 1, 2 or 3"));
    }
    let factor_ids = raw.factor_indices();
    let preset = top.entry("preset").map(|e| (e.value.clone(), e.line));
    let mut model = if preset.is_none() && !factor_ids.is_empty() {
        if let Some(k) = PRESET_KEYS.iter().find(|k| top.entry(k).is_some_and(|e| !e.default)) {
            return Err(err(
                top.entry(k).unwrap().line,
                format!("`{k}` only applies together with `preset`"),
            ));
        }
        ModelConfig {
            dims,
            factors: Vec::new(),
            connector: Connector::Hadamard,
            projection: ProjectionSpec::mlp(if dims == 2 { 3 } else { 1 }),
            contraction: ContractionSpec::unit(dims),
        }
    } else {
        let mut o = PresetOptions::new(dims);
        o.eta = top.value("eta", "an integer")?;
        o.levels = top.value("levels", "an integer")?;
        o.frequencies = top.list("freqs", "numbers")?;
        o.coef_res = top.value("coef_res", "an integer")?;
        o.basis_res = top.list("basis_res", "integers")?;
        if let Some(v) = top.value("extent", "a number")? {
            o.extent = v;
        }
        o.output_dim = top.value("output_dim", "an integer")?;
        if let Some(v) = top.boolean("radiance")? {
            o.radiance = v;
        }
        if let Some(v) = top.value("hash_log2", "an integer")? {
            o.hash_log2 = v;
        }
        if let Some(v) = top.value("tensor_res", "an integer")? {
            o.tensor_res = v;
        }
        if let Some(v) = top.value("tensor_rank", "an integer")? {
            o.tensor_rank = v;
        }
        let (name, line) = preset.unwrap_or(("dif_grid".into(), 0));
        build_preset(&name, &o).map_err(|e| err(line, e.to_string()))?
    };
    for &i in &factor_ids {
        let c = Ctx {
            raw,
            section: Section::Factor(i),
        };
        if i > model.factors.len() {
            return Err(err(
                c.line(),
                format!("factor sections must be numbered 0, 1, ...; found [factor.{i}]"),
            ));
        }
        if i < model.factors.len() {
            model.factors[i] = apply_factor(&c, Some(model.factors[i].clone()))?;
        } else {
            model.factors.push(apply_factor(&c, None)?);
        }
    }
    let proj = Ctx {
        raw,
        section: Section::Projection,
    };
    model.projection = apply_projection(&proj, model.projection.clone())?;
    if let Some(v) = top.named("connector", Connector::parse, "product, concat")? {
        model.connector = v;
    }
    if let Some(v) = top.named("contraction", ContractionMode::parse, "bounded, unbounded")? {
        model.contraction.mode = v;
    }
    if let Some(e) = top.entry("bbox") {
        let v: Vec<f64> = list(e, "bbox", "numbers")?;
        if v.len() != 2 * dims {
            return Err(err(
                e.line,
                format!("`bbox` expects {} numbers (min then max)", 2 * dims),
            ));
        }
        model.contraction.min = v[..dims].to_vec();
        model.contraction.max = v[dims..].to_vec();
    }
    model.validate()?;

    let d = Schedule::default();
    let threads: usize = top.value("threads", "an integer")?.unwrap_or(1);
    let schedule = Schedule {
        steps: top.value("steps", "an integer")?.unwrap_or(d.steps),
        batch: top.value("batch", "an integer")?.unwrap_or(d.batch),
        seed: top.value("seed", "an integer")?.unwrap_or(d.seed),
        adam: AdamConfig {
            lr: top.value("lr", "a number")?.unwrap_or(d.adam.lr),
            beta1: top.value("beta1", "a number")?.unwrap_or(d.adam.beta1),
            beta2: top.value("beta2", "a number")?.unwrap_or(d.adam.beta2),
            eps: top.value("eps", "a number")?.unwrap_or(d.adam.eps),
        },
        lr_decay: top.value("lr_decay", "a number")?.unwrap_or(d.lr_decay),
        mu: top.value("mu", "a number")?.unwrap_or(d.mu),
        log_every: top.value("log_every", "an integer")?.unwrap_or(d.log_every),
        exec: Exec::from_threads(threads),
        streams: top
            .named("streams", parse_streams, "independent, identical")?
            .unwrap_or(d.streams),
    };
    if !(0.0..1.0).contains(&schedule.mu) {
        return Err(err(top.entry("mu").map_or(0, |e| e.line), "`mu` must lie in [0, 1)"));
    }
    if !(schedule.lr_decay > 0.0 && schedule.lr_decay.is_finite()) {
        return Err(err(
            top.entry("lr_decay").map_or(0, |e| e.line),
            "`lr_decay` must be positive",
        ));
    }
    if schedule.batch == 0 {
        return Err(err(
            top.entry("batch").map_or(0, |e| e.line),
            "`batch` must be positive",
        ));
    }
    let td = TaskOptions::default();
    Ok(RunConfig {
        model,
        schedule,
        precision: top.named("precision", parse_dtype, "f32, f64")?.unwrap_or(DType::F32),
        threads: threads.max(1),
        task: TaskOptions {
            ray_samples: top.value("ray_samples", "an integer")?.unwrap_or(td.ray_samples),
            eval_samples: top.value("eval_samples", "an integer")?.unwrap_or(td.eval_samples),
        },
    })
}

fn parse_streams(s: &str) -> Option<StreamMode> {
    match s {
        "independent" => Some(StreamMode::Independent),
        "identical" => Some(StreamMode::Identical),
        _ => None,
    }
}

fn stream_name(s: StreamMode) -> &'static str {
    match s {
        StreamMode::Independent => "independent",
        StreamMode::Identical => "identical",
    }
}

fn parse_dtype(s: &str) -> Option<DType> {
    match s {
        "f32" => Some(DType::F32),
        "f64" => Some(DType::F64),
        _ => None,
    }
}

/// Resolves configuration text; overrides (`key=value`, optionally prefixed
/// with `projection.` or `factor.N.`) apply before validation.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    parse_config_with(text, &[], overrides)
}

/// Like [`parse_config`], with `defaults` filling keys the text leaves unset.
/// Preset options among the defaults are ignored when the model is built
/// from explicit factor sections.
pub fn parse_config_with(text: &str, defaults: &[String], overrides: &[String]) -> Result<RunConfig> {
    let mut raw = Raw::parse(text)?;
    for (i, d) in defaults.iter().enumerate() {
        raw.apply_override(d, i, true)?;
    }
    for (i, ov) in overrides.iter().enumerate() {
        raw.apply_override(ov, i, false)?;
    }
    resolve(&raw)
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Canonical, fully explicit text form; `parse_config(dump_config(c))`
/// reproduces `c`.
pub fn dump_config(c: &RunConfig) -> String {
    let m = &c.model;
    let s = &c.schedule;
    let mut out = String::new();
    let bbox: Vec<f64> = m.contraction.min.iter().chain(&m.contraction.max).copied().collect();
    let precision = match c.precision {
        DType::F32 => "f32",
        DType::F64 => "f64",
    };
    let _ = writeln!(out, "dims = {}", m.dims);
    let _ = writeln!(out, "connector = {}", m.connector.name());
    let _ = writeln!(out, "contraction = {}", m.contraction.mode.name());
    let _ = writeln!(out, "bbox = {}", join(&bbox));
    let _ = writeln!(out, "lr = {}", s.adam.lr);
    let _ = writeln!(out, "lr_decay = {}", s.lr_decay);
    let _ = writeln!(out, "beta1 = {}", s.adam.beta1);
    let _ = writeln!(out, "beta2 = {}", s.adam.beta2);
    let _ = writeln!(out, "eps = {:e}", s.adam.eps);
    let _ = writeln!(out, "mu = {}", s.mu);
    let _ = writeln!(out, "batch = {}", s.batch);
    let _ = writeln!(out, "steps = {}", s.steps);
    let _ = writeln!(out, "seed = {}", s.seed);
    let _ = writeln!(out, "log_every = {}", s.log_every);
    let _ = writeln!(out, "threads = {}", c.threads);
    let _ = writeln!(out, "streams = {}", stream_name(s.streams));
    let _ = writeln!(out, "precision = {precision}");
    let _ = writeln!(out, "ray_samples = {}", c.task.ray_samples);
    let _ = writeln!(out, "eval_samples = {}", c.task.eval_samples);
    let p = &m.projection;
    let _ = writeln!(out, "\n[projection]");
    let _ = writeln!(out, "kind = {}", p.kind.name());
    let _ = writeln!(out, "output_dim = {}", p.output_dim);
    let _ = writeln!(out, "hidden = {}", join(&p.hidden));
    let _ = writeln!(out, "activation = {}", p.activation.name());
    let _ = writeln!(out, "view_levels = {}", p.view_levels);
    let _ = writeln!(out, "density_shift = {}", p.density_shift);
    let _ = writeln!(out, "background = {}", join(&p.background));
    for (i, f) in m.factors.iter().enumerate() {
        let _ = writeln!(out, "\n[factor.{i}]");
        let _ = writeln!(out, "kind = {}", f.kind.name());
        let _ = writeln!(out, "role = {}", f.role.name());
        let _ = writeln!(out, "shared = {}", f.shared);
        let _ = writeln!(out, "transform = {}", f.transform.kind.name());
        let _ = writeln!(out, "freqs = {}", join(&f.transform.frequencies));
        let _ = writeln!(out, "hash_log2 = {}", f.transform.hash_table_log2_size);
        let _ = writeln!(out, "channels = {}", join(&f.channels_per_level));
        let _ = writeln!(out, "res = {}", join(&f.grid_resolutions));
        let _ = writeln!(out, "hidden = {}", join(&f.mlp_hidden));
        let _ = writeln!(out, "activation = {}", f.mlp_activation.name());
        match &f.components {
            Some(v) => {
                let _ = writeln!(out, "components = {}", join(v));
            }
            None => {
                let _ = writeln!(out, "components = all");
            }
        }
        let _ = writeln!(out, "broadcast = {}", f.broadcast);
    }
    out
}
