//! The full estimator: factors joined by a connector, then projected.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::dropout::DropoutMask;
use crate::engine::init::{dct_init, uniform_init};
use crate::engine::param::{FieldParams, ParamRef, ParamStore, ParamTensor, Params, Slot};
use crate::engine::tape::{Activation, NodeId, Tape};
use crate::error::{Error, Result};
use crate::factors::{mlp_forward, mlp_tensors, FactorKind, FactorSpec, Init, Role, TensorDecl};
use crate::real::Real;
use crate::transforms::{contract_batch, ContractionSpec, TransformKind, TransformSpec, DEFAULT_FREQUENCIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connector {
    Hadamard,
    Concatenate,
}

impl Connector {
    pub fn name(self) -> &'static str {
        match self {
            Connector::Hadamard => "product",
            Connector::Concatenate => "concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "product" | "hadamard" => Some(Connector::Hadamard),
            "concat" => Some(Connector::Concatenate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Linear,
    Mlp,
    VolumeRender,
}

impl ProjectionKind {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionKind::Linear => "linear",
            ProjectionKind::Mlp => "mlp",
            ProjectionKind::VolumeRender => "volume",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ProjectionKind::Linear),
            "mlp" => Some(ProjectionKind::Mlp),
            "volume" => Some(ProjectionKind::VolumeRender),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpec {
    pub kind: ProjectionKind,
    /// Signal channels `Q`; ignored by the volume head, which emits
    /// density plus RGB.
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Frequency bands of the view-direction encoding.
    pub view_levels: usize,
    /// Added to the initial density pre-activation.
    pub density_shift: f64,
    pub background: [f64; 3],
}

impl ProjectionSpec {
    pub fn linear(output_dim: usize) -> Self {
        Self {
            kind: ProjectionKind::Linear,
            output_dim,
            hidden: Vec::new(),
            activation: Activation::Relu,
            view_levels: 0,
            density_shift: 0.0,
            background: [1.0; 3],
        }
    }

    pub fn mlp(output_dim: usize) -> Self {
        Self {
            kind: ProjectionKind::Mlp,
            hidden: vec![64, 64],
            ..Self::linear(output_dim)
        }
    }

    pub fn volume() -> Self {
        Self {
            kind: ProjectionKind::VolumeRender,
            output_dim: 4,
            hidden: vec![64, 64],
            view_levels: 2,
            density_shift: -1.0,
            ..Self::linear(4)
        }
    }

    pub fn outputs(&self) -> usize {
        match self.kind {
            ProjectionKind::VolumeRender => 4,
            _ => self.output_dim,
        }
    }

    pub fn view_dim(&self) -> usize {
        match self.kind {
            ProjectionKind::VolumeRender => 3 + 6 * self.view_levels,
            _ => 0,
        }
    }
}

/// Encodes unit view directions as `(d, sin(2^k pi d), cos(2^k pi d))`.
pub fn encode_views<T: Real>(dirs: &[T], levels: usize) -> Vec<T> {
    let width = 3 + 6 * levels;
    let mut out = Vec::with_capacity(dirs.len() / 3 * width);
    for d in dirs.chunks(3) {
        out.extend_from_slice(d);
        for k in 0..levels {
            let f = T::of(std::f64::consts::PI * (1u64 << k) as f64);
            out.extend(d.iter().map(|&v| (v * f).sin()));
            out.extend(d.iter().map(|&v| (v * f).cos()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dims: usize,
    pub factors: Vec<FactorSpec>,
    pub connector: Connector,
    pub projection: ProjectionSpec,
    pub contraction: ContractionSpec,
}

/// Parameter totals split by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub projection: usize,
    pub coefficient: usize,
    pub basis: usize,
    pub total: usize,
}

/// Which part of the model a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Factor(usize),
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelTensor {
    pub decl: TensorDecl,
    pub slot: Slot,
    pub owner: Owner,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::InvalidModel("a model needs at least one factor".into()));
        }
        if !(1..=3).contains(&self.dims) {
            return Err(Error::InvalidModel(format!(
                "dims must be 1, 2 or 3, got {}",
                self.dims
            )));
        }
        self.contraction.validate()?;
        if self.contraction.dims() != self.dims {
            return Err(Error::InvalidModel("bbox dimension does not match dims".into()));
        }
        for (i, f) in self.factors.iter().enumerate() {
            f.validate(self.dims)
                .map_err(|e| Error::InvalidModel(format!("factor {i}: {e}")))?;
        }
        if self.connector == Connector::Hadamard {
            let ks: Vec<usize> = self.product_factors().map(|(_, f)| f.output_dim(self.dims)).collect();
            if ks.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::InvalidModel(format!(
                    "product connector needs equal channel counts, got {ks:?}"
                )));
            }
        }
        let p = &self.projection;
        if p.outputs() == 0 {
            return Err(Error::InvalidModel("projection output_dim must be positive".into()));
        }
        if p.kind == ProjectionKind::VolumeRender && self.dims != 3 {
            return Err(Error::InvalidModel("volume rendering needs 3-D input".into()));
        }
        if p.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidModel("projection hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn product_factors(&self) -> impl Iterator<Item = (usize, &FactorSpec)> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind != FactorKind::RawCoords)
    }

    /// Width of the joined factor features the dropout mask acts on.
    pub fn dropout_dim(&self) -> usize {
        match self.connector {
            Connector::Hadamard => self
                .product_factors()
                .next()
                .map_or(0, |(_, f)| f.output_dim(self.dims)),
            Connector::Concatenate => self.product_factors().map(|(_, f)| f.output_dim(self.dims)).sum(),
        }
    }

    /// Width of the feature vector fed to the projection (without views).
    pub fn feature_dim(&self) -> usize {
        let raw: usize = self
            .factors
            .iter()
            .filter(|f| f.kind == FactorKind::RawCoords)
            .map(|f| f.output_dim(self.dims))
            .sum();
        self.dropout_dim() + raw
    }

    /// Every parameter tensor in store order.
    pub fn tensors(&self) -> Vec<ModelTensor> {
        let mut out = Vec::new();
        for (i, f) in self.factors.iter().enumerate() {
            let slot = if f.shared { Slot::Shared } else { Slot::Local };
            out.extend(f.tensors(i, self.dims).into_iter().map(|decl| ModelTensor {
                decl,
                slot,
                owner: Owner::Factor(i),
            }));
        }
        let p = &self.projection;
        let input = self.feature_dim() + p.view_dim();
        let decls = match p.kind {
            ProjectionKind::Linear => vec![TensorDecl {
                name: "proj.w0".into(),
                shape: vec![p.output_dim, input],
                init: Init::Uniform(1.0 / (input as f64).sqrt()),
            }],
            _ => mlp_tensors("proj", input, &p.hidden, p.outputs()),
        };
        out.extend(decls.into_iter().map(|decl| ModelTensor {
            decl,
            slot: Slot::Shared,
            owner: Owner::Projection,
        }));
        out
    }

    pub fn param_count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for t in self.tensors() {
            let n = t.decl.len();
            match t.owner {
                Owner::Projection => c.projection += n,
                Owner::Factor(i) => match self.factors[i].role {
                    Role::Coefficient => c.coefficient += n,
                    Role::Basis => c.basis += n,
                },
            }
            c.total += n;
        }
        c
    }
}

/// A validated config with its parameter references resolved.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    factor_refs: Vec<Vec<ParamRef>>,
    proj_refs: Vec<ParamRef>,
    tensors: Vec<ModelTensor>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.tensors();
        let mut factor_refs = vec![Vec::new(); config.factors.len()];
        let mut proj_refs = Vec::new();
        let (mut shared, mut local) = (0, 0);
        for t in &tensors {
            let index = match t.slot {
                Slot::Shared => {
                    shared += 1;
                    shared - 1
                }
                Slot::Local => {
                    local += 1;
                    local - 1
                }
            };
            let r = ParamRef { slot: t.slot, index };
            match t.owner {
                Owner::Factor(i) => factor_refs[i].push(r),
                Owner::Projection => proj_refs.push(r),
            }
        }
        Ok(Self {
            config,
            factor_refs,
            proj_refs,
            tensors,
        })
    }

    pub fn tensors(&self) -> &[ModelTensor] {
        &self.tensors
    }

    pub fn factor_refs(&self, i: usize) -> &[ParamRef] {
        &self.factor_refs[i]
    }

    pub fn projection_refs(&self) -> &[ParamRef] {
        &self.proj_refs
    }

    /// Zero-filled parameters with the right names and shapes.
    pub fn zero_params<T: Real>(&self) -> FieldParams<T> {
        let mut shared = ParamStore::new();
        let mut local = ParamStore::new();
        for t in &self.tensors {
            let p = ParamTensor::zeros(t.decl.name.clone(), t.decl.shape.clone());
            let store = match t.slot {
                Slot::Shared => &mut shared,
                Slot::Local => &mut local,
            };
            store.insert(p).expect("tensor names are unique per config");
        }
        FieldParams { shared, local }
    }

    /// Freshly initialized parameters; the same seed gives the same values.
    pub fn init_params<T: Real>(&self, seed: u64) -> FieldParams<T> {
        let mut params = self.zero_params::<T>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &self.tensors {
            let p = params.tensor_mut(&t.decl.name).expect("declared tensor");
            match t.decl.init {
                Init::Dct => dct_init(p),
                Init::Uniform(s) => uniform_init(p, s, &mut rng),
                Init::Zeros => {}
                Init::Constant(c) => p.values.fill(T::of(c)),
            }
        }
        let proj = &self.config.projection;
        if proj.kind == ProjectionKind::VolumeRender {
            let last = format!("proj.b{}", proj.hidden.len());
            if let Some(b) = params.tensor_mut(&last) {
                b.values[0] += T::of(proj.density_shift);
            }
        }
        params
    }

    /// Parameters of one slot only, for a new signal that shares the rest.
    pub fn init_local<T: Real>(&self, seed: u64) -> ParamStore<T> {
        self.init_params::<T>(seed).local
    }

    /// Records the joined factor features (before dropout and projection).
    pub fn features<T: Real>(
        &self,
        params: Params<'_, T>,
        tape: &mut Tape<T>,
        xs: &[T],
    ) -> Result<(NodeId, Option<NodeId>)> {
        let c = &self.config;
        if xs.len() % c.dims != 0 {
            return Err(Error::Shape("coordinate batch is not a multiple of dims".into()));
        }
        let xn = contract_batch(&c.contraction, xs);
        let mut joined: Option<NodeId> = None;
        let mut parts = Vec::new();
        let mut raw = Vec::new();
        for (i, f) in c.factors.iter().enumerate() {
            let out = f.eval(c.dims, &self.factor_refs[i], params, tape, &xn)?;
            if f.kind == FactorKind::RawCoords {
                raw.push(out);
                continue;
            }
            match c.connector {
                Connector::Hadamard => {
                    joined = Some(match joined {
                        Some(acc) => tape.mul(acc, out)?,
                        None => out,
                    });
                }
                Connector::Concatenate => parts.push(out),
            }
        }
        if c.connector == Connector::Concatenate && !parts.is_empty() {
            joined = Some(tape.concat(parts)?);
        }
        let raw = if raw.is_empty() { None } else { Some(tape.concat(raw)?) };
        // raw-only models feed their coordinates straight to the projection
        match (joined, raw) {
            (Some(j), r) => Ok((j, r)),
            (None, Some(r)) => Ok((r, None)),
            (None, None) => Err(Error::InvalidModel("model has no factors".into())),
        }
    }

    /// `rows x outputs` predictions. Volume heads return `(sigma, r, g, b)`
    /// after their output activations and need `views`.
    pub fn forward<T: Real>(
        &self,
        params: Params<'_, T>,
        tape: &mut Tape<T>,
        xs: &[T],
        views: Option<&[T]>,
        mask: Option<&DropoutMask>,
    ) -> Result<NodeId> {
        let rows = xs.len() / self.config.dims;
        let (mut feat, raw) = self.features(params, tape, xs)?;
        let raw_only = self.config.dropout_dim() == 0;
        if let (Some(m), false) = (mask, raw_only) {
            if m.k() != self.config.dropout_dim() {
                return Err(Error::Shape(format!(
                    "dropout mask has {} channels, features {}",
                    m.k(),
                    self.config.dropout_dim()
                )));
            }
            feat = tape.col_scale(feat, m.scales())?;
        }
        if let Some(r) = raw {
            feat = tape.concat(vec![feat, r])?;
        }
        let p = &self.config.projection;
        if p.kind == ProjectionKind::VolumeRender {
            let Some(v) = views else {
                return Err(Error::InvalidArgument("volume projection needs view directions".into()));
            };
            if v.len() != rows * 3 {
                return Err(Error::Shape("one view direction per query".into()));
            }
            let enc = encode_views(v, p.view_levels);
            let vn = tape.input(rows, p.view_dim(), enc)?;
            feat = tape.concat(vec![feat, vn])?;
        }
        match p.kind {
            ProjectionKind::Linear => tape.linear(params, feat, self.proj_refs[0], None),
            ProjectionKind::Mlp => mlp_forward(tape, params, feat, &self.proj_refs, p.activation, Activation::Identity),
            ProjectionKind::VolumeRender => {
                let out = mlp_forward(tape, params, feat, &self.proj_refs, p.activation, Activation::Identity)?;
                tape.col_act(
                    out,
                    vec![
                        Activation::Softplus,
                        Activation::Sigmoid,
                        Activation::Sigmoid,
                        Activation::Sigmoid,
                    ],
                )
            }
        }
    }

    /// Evaluation without recording gradients, in chunks of `batch` rows.
    pub fn predict<T: Real>(
        &self,
        params: Params<'_, T>,
        exec: crate::exec::Exec,
        xs: &[T],
        views: Option<&[T]>,
        batch: usize,
    ) -> Result<Vec<T>> {
        let d = self.config.dims;
        let rows = xs.len() / d;
        let q = self.config.projection.outputs();
        let batch = batch.max(1);
        let mut out = Vec::with_capacity(rows * q);
        let mut start = 0;
        while start < rows {
            let end = (start + batch).min(rows);
            let mut tape = Tape::new(exec);
            let v = views.map(|v| &v[start * 3..end * 3]);
            let n = self.forward(params, &mut tape, &xs[start * d..end * d], v, None)?;
            out.extend_from_slice(tape.value(n));
            start = end;
        }
        Ok(out)
    }
}

pub const PRESETS: [&str; 12] = [
    "occnet",
    "nerf",
    "dvgo",
    "eg3d",
    "ingp",
    "tensorf_vm",
    "tensorf_cp",
    "dif_grid",
    "dif_mlp_b",
    "dif_mlp_c",
    "dif_no_c",
    "dif_sl",
];

/// Scene extent (in samples along the shortest bbox side) assumed for 3-D
/// presets when no task supplies one.
pub const DEFAULT_EXTENT_3D: f64 = 688.0;

/// Knobs shared by every preset.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetOptions {
    pub dims: usize,
    /// Channel multiplier exponent; defaults to 3 in 2-D and 0 in 3-D.
    pub eta: Option<u32>,
    pub levels: Option<usize>,
    pub frequencies: Option<Vec<f64>>,
    pub coef_res: Option<usize>,
    pub basis_res: Option<Vec<usize>>,
    /// Scene extent in samples; basis resolutions scale with `extent / 1024`.
    pub extent: f64,
    pub output_dim: Option<usize>,
    pub radiance: bool,
    pub hash_log2: u32,
    /// Per-axis resolution of orthogonal factors.
    pub tensor_res: usize,
    pub tensor_rank: usize,
}

impl PresetOptions {
    pub fn new(dims: usize) -> Self {
        Self {
            dims,
            eta: None,
            levels: None,
            frequencies: None,
            coef_res: None,
            basis_res: None,
            extent: if dims == 3 { DEFAULT_EXTENT_3D } else { 1024.0 },
            output_dim: None,
            radiance: false,
            hash_log2: 19,
            tensor_res: 128,
            tensor_rank: 16,
        }
    }

    pub fn eta(&self) -> u32 {
        self.eta.unwrap_or(if self.dims == 2 { 3 } else { 0 })
    }

    pub fn coef_res(&self) -> usize {
        self.coef_res.unwrap_or(if self.dims == 2 { 128 } else { 48 })
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim.unwrap_or(if self.dims == 2 { 3 } else { 1 })
    }

    /// `[4, 4, 4, 2, 2, 2] * 2^eta` for six levels; the first half of the
    /// levels get 4 channels, the rest 2.
    pub fn channels(&self, levels: usize) -> Vec<usize> {
        (0..levels)
            .map(|l| (if l < levels / 2 { 4 } else { 2 }) << self.eta())
            .collect()
    }

    pub fn frequencies(&self, levels: usize) -> Vec<f64> {
        if let Some(f) = &self.frequencies {
            return f.clone();
        }
        if levels == DEFAULT_FREQUENCIES.len() {
            return DEFAULT_FREQUENCIES.to_vec();
        }
        let (lo, hi) = (DEFAULT_FREQUENCIES[0], DEFAULT_FREQUENCIES[5]);
        if levels == 1 {
            return vec![lo];
        }
        (0..levels)
            .map(|l| lo + (hi - lo) * l as f64 / (levels - 1) as f64)
            .collect()
    }

    /// Linear ramp over `[32, 128]` scaled by `extent / 1024`.
    pub fn basis_res(&self, levels: usize) -> Vec<usize> {
        if let Some(r) = &self.basis_res {
            return r.clone();
        }
        let scale = self.extent / 1024.0;
        (0..levels)
            .map(|l| {
                let t = if levels == 1 {
                    1.0
                } else {
                    l as f64 / (levels - 1) as f64
                };
                (((32.0 + 96.0 * t) * scale).round() as usize).max(2)
            })
            .collect()
    }

    fn projection(&self) -> ProjectionSpec {
        if self.radiance {
            ProjectionSpec::volume()
        } else {
            ProjectionSpec::mlp(self.output_dim())
        }
    }
}

pub fn preset(name: &str, dims: usize) -> Result<ModelConfig> {
    build_preset(name, &PresetOptions::new(dims))
}

pub fn build_preset(name: &str, o: &PresetOptions) -> Result<ModelConfig> {
    let d = o.dims;
    let levels = o.levels.unwrap_or(if name == "dif_sl" { 1 } else { 6 });
    let k = o.channels(levels);
    let k_total: usize = o.channels(6).iter().sum();
    let coef = |channels: Vec<usize>| {
        let n = channels.len();
        FactorSpec::grid(
            TransformSpec::identity(),
            channels,
            vec![o.coef_res(); n],
            Role::Coefficient,
        )
    };
    let basis_grid = || {
        FactorSpec::grid(
            TransformSpec::new(TransformKind::Sawtooth, o.frequencies(levels)),
            k.clone(),
            o.basis_res(levels),
            Role::Basis,
        )
    };
    let ortho = |kind: TransformKind, role: Role| {
        FactorSpec::grid(
            TransformSpec::new(kind, vec![]),
            vec![o.tensor_rank],
            vec![o.tensor_res],
            role,
        )
    };
    let factors = match name {
        "occnet" => vec![FactorSpec::raw(TransformSpec::identity())],
        "nerf" => {
            let f = o
                .frequencies(levels)
                .iter()
                .map(|f| f * std::f64::consts::TAU)
                .collect();
            vec![FactorSpec::raw(TransformSpec::new(TransformKind::SinCos, f))]
        }
        "dvgo" => vec![coef(vec![k_total])],
        "eg3d" => vec![ortho(TransformKind::Orthogonal2D, Role::Coefficient)],
        "ingp" => {
            let n = o.levels.unwrap_or(16);
            let (lo, hi) = (16.0f64, 512.0f64);
            let res = (0..n)
                .map(|l| {
                    let t = if n == 1 { 0.0 } else { l as f64 / (n - 1) as f64 };
                    (lo * (hi / lo).powf(t)).round() as usize
                })
                .collect();
            vec![FactorSpec::hashed(o.hash_log2, vec![2; n], res)]
        }
        "tensorf_vm" => vec![
            ortho(TransformKind::Orthogonal2D, Role::Coefficient),
            ortho(TransformKind::Orthogonal1D, Role::Basis),
        ],
        "tensorf_cp" => (0..3)
            .map(|i| {
                let role = if i == 0 { Role::Coefficient } else { Role::Basis };
                let mut f = ortho(TransformKind::Orthogonal1D, role);
                f.components = Some(vec![i]);
                f
            })
            .collect(),
        "dif_grid" => vec![coef(k.clone()), basis_grid()],
        "dif_mlp_b" => vec![
            coef(k.clone()),
            FactorSpec::mlp(
                TransformSpec::new(TransformKind::Sawtooth, o.frequencies(levels)),
                k.clone(),
                vec![32, 32],
                Role::Basis,
            ),
        ],
        "dif_mlp_c" => vec![
            FactorSpec::mlp(
                TransformSpec::identity(),
                vec![k.iter().sum()],
                vec![64, 64],
                Role::Coefficient,
            ),
            basis_grid(),
        ],
        "dif_no_c" => vec![basis_grid()],
        "dif_sl" => {
            let single = if o.levels.is_some() { k.clone() } else { vec![k_total] };
            let res = match &o.basis_res {
                Some(r) => r.clone(),
                None => vec![o.basis_res(6)[5]; single.len()],
            };
            vec![
                coef(single.clone()),
                FactorSpec::grid(
                    TransformSpec::new(TransformKind::Sawtooth, o.frequencies(single.len())),
                    single,
                    res,
                    Role::Basis,
                ),
            ]
        }
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESETS.join(", "),
            })
        }
    };
    let config = ModelConfig {
        dims: d,
        factors,
        connector: Connector::Hadamard,
        projection: o.projection(),
        contraction: ContractionSpec::unit(d),
    };
    config.validate()?;
    Ok(config)
}
