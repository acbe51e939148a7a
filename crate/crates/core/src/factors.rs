//! Factor representations: dense per-level grids, hashed tables, coordinate
//! MLPs and the raw-coordinate pass-through.

use crate::engine::param::{ParamRef, Params};
use crate::engine::tape::{Activation, Gather, NodeId, Tape};
use crate::error::{Error, Result};
use crate::exec::{for_each_row_chunk2, Exec};
use crate::real::Real;
use crate::transforms::{dense_index, lattice_size, pyramid, spatial_hash, Routed, TransformKind, TransformSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    DenseGrid,
    HashedVectors,
    Mlp,
    RawCoords,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::DenseGrid => "grid",
            FactorKind::HashedVectors => "hash",
            FactorKind::Mlp => "mlp",
            FactorKind::RawCoords => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid" => Some(FactorKind::DenseGrid),
            "hash" => Some(FactorKind::HashedVectors),
            "mlp" => Some(FactorKind::Mlp),
            "raw" => Some(FactorKind::RawCoords),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Coefficient,
    Basis,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Coefficient => "coef",
            Role::Basis => "basis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coef" => Some(Role::Coefficient),
            "basis" => Some(Role::Basis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    pub kind: FactorKind,
    pub transform: TransformSpec,
    pub channels_per_level: Vec<usize>,
    /// Nodes per axis for each level (grid and hash kinds).
    pub grid_resolutions: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub mlp_activation: Activation,
    pub role: Role,
    /// Reused across signals in joint training.
    pub shared: bool,
    /// Subset of orthogonal components to evaluate; `None` means all.
    pub components: Option<Vec<usize>>,
    /// Grid kinds store one channel per level, replicated across `K_l`.
    pub broadcast: bool,
}

impl FactorSpec {
    pub fn grid(transform: TransformSpec, channels: Vec<usize>, resolutions: Vec<usize>, role: Role) -> Self {
        Self {
            kind: FactorKind::DenseGrid,
            transform,
            channels_per_level: channels,
            grid_resolutions: resolutions,
            mlp_hidden: Vec::new(),
            mlp_activation: Activation::Relu,
            role,
            shared: role == Role::Basis,
            components: None,
            broadcast: false,
        }
    }

    pub fn hashed(log2_size: u32, channels: Vec<usize>, resolutions: Vec<usize>) -> Self {
        let mut transform = TransformSpec::new(TransformKind::Hashing, Vec::new());
        transform.hash_table_log2_size = log2_size;
        Self {
            kind: FactorKind::HashedVectors,
            ..Self::grid(transform, channels, resolutions, Role::Basis)
        }
    }

    pub fn mlp(transform: TransformSpec, channels: Vec<usize>, hidden: Vec<usize>, role: Role) -> Self {
        Self {
            kind: FactorKind::Mlp,
            mlp_hidden: hidden,
            ..Self::grid(transform, channels, Vec::new(), role)
        }
    }

    pub fn raw(transform: TransformSpec) -> Self {
        Self {
            kind: FactorKind::RawCoords,
            ..Self::grid(transform, Vec::new(), Vec::new(), Role::Coefficient)
        }
    }

    /// Level count `L`.
    pub fn levels(&self) -> usize {
        match self.kind {
            FactorKind::RawCoords => self.transform.levels(),
            _ => self.channels_per_level.len(),
        }
    }

    /// Transform with the frequency list resolved to one entry per level.
    pub fn level_transform(&self) -> TransformSpec {
        let mut t = self.transform.clone();
        if t.frequencies.is_empty() && self.kind != FactorKind::RawCoords {
            t.frequencies = vec![1.0; self.levels()];
        }
        t
    }

    pub fn active_components(&self) -> Vec<usize> {
        match &self.components {
            Some(c) => c.clone(),
            None => (0..self.transform.components()).collect(),
        }
    }

    /// Output channel count.
    pub fn output_dim(&self, dims: usize) -> usize {
        match self.kind {
            FactorKind::RawCoords => {
                self.active_components().len() * self.transform.levels() * self.transform.component_dim(dims)
            }
            _ => self.active_components().len() * self.channels_per_level.iter().sum::<usize>(),
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        self.transform.validate()?;
        let kind = self.transform.kind;
        if kind.is_orthogonal() && dims != 3 {
            return bad("orthogonal transforms need 3-D input".into());
        }
        if let Some(c) = &self.components {
            if !kind.is_orthogonal() {
                return bad("component selection needs an orthogonal transform".into());
            }
            if c.is_empty() || c.iter().any(|&i| i >= 3) {
                return bad(format!("invalid component selection {c:?}"));
            }
        }
        if self.kind == FactorKind::RawCoords {
            return Ok(());
        }
        let l = self.levels();
        if l == 0 || self.channels_per_level.iter().any(|&k| k == 0) {
            return bad("every level needs at least one channel".into());
        }
        if !self.transform.frequencies.is_empty() && self.transform.frequencies.len() != l {
            return bad(format!(
                "{} frequencies for {l} levels",
                self.transform.frequencies.len()
            ));
        }
        match self.kind {
            FactorKind::DenseGrid | FactorKind::HashedVectors => {
                if kind == TransformKind::SinCos {
                    return bad("sincos output cannot index a grid".into());
                }
                if self.kind == FactorKind::HashedVectors && kind.is_orthogonal() {
                    return bad("hashed factors take the full coordinate".into());
                }
                if self.grid_resolutions.len() != l {
                    return bad(format!(
                        "{} grid resolutions for {l} levels",
                        self.grid_resolutions.len()
                    ));
                }
                if self.grid_resolutions.iter().any(|&m| m < 2) {
                    return bad("grid resolutions must be at least 2".into());
                }
                if self.role == Role::Basis
                    && self.kind == FactorKind::DenseGrid
                    && self.grid_resolutions.windows(2).any(|w| w[1] < w[0])
                {
                    return bad("basis grid resolutions must not decrease with level".into());
                }
                let d = self.transform.component_dim(dims);
                if self.kind == FactorKind::DenseGrid {
                    for &m in &self.grid_resolutions {
                        if lattice_size(m, d).map_or(true, |n| n > u32::MAX as usize) {
                            return bad(format!("grid resolution {m} too large"));
                        }
                    }
                }
            }
            FactorKind::Mlp => {
                if self.mlp_hidden.iter().any(|&w| w == 0) {
                    return bad("mlp hidden widths must be positive".into());
                }
            }
            FactorKind::RawCoords => {}
        }
        Ok(())
    }

    /// Rows in a level's hashed table.
    pub fn hash_rows(&self, level: usize, dims: usize) -> usize {
        let table = 1usize << self.transform.hash_table_log2_size;
        lattice_size(self.grid_resolutions[level], dims).map_or(table, |n| n.min(table))
    }

    /// Parameter tensors this factor owns, in evaluation order.
    pub fn tensors(&self, index: usize, dims: usize) -> Vec<TensorDecl> {
        let mut out = Vec::new();
        let comps = self.active_components();
        let orth = self.transform.kind.is_orthogonal();
        let d = self.transform.component_dim(dims);
        let prefix = |c: usize, l: usize| {
            if orth {
                format!("f{index}.c{c}.l{l}")
            } else {
                format!("f{index}.l{l}")
            }
        };
        match self.kind {
            FactorKind::RawCoords => {}
            FactorKind::DenseGrid => {
                for &c in &comps {
                    for (l, (&k, &m)) in self.channels_per_level.iter().zip(&self.grid_resolutions).enumerate() {
                        let mut shape = vec![m; d];
                        shape.push(if self.broadcast { 1 } else { k });
                        let init = match self.role {
                            Role::Basis => Init::Dct,
                            Role::Coefficient => Init::Uniform(0.1),
                        };
                        out.push(TensorDecl {
                            name: prefix(c, l),
                            shape,
                            init,
                        });
                    }
                }
            }
            FactorKind::HashedVectors => {
                for (l, &k) in self.channels_per_level.iter().enumerate() {
                    out.push(TensorDecl {
                        name: prefix(0, l),
                        shape: vec![self.hash_rows(l, d), if self.broadcast { 1 } else { k }],
                        init: Init::Uniform(1e-4),
                    });
                }
            }
            FactorKind::Mlp => {
                for &c in &comps {
                    for (l, &k) in self.channels_per_level.iter().enumerate() {
                        let p = prefix(c, l);
                        out.extend(mlp_tensors(&p, d, &self.mlp_hidden, k));
                    }
                }
            }
        }
        out
    }

    /// Records this factor's output for contracted `rows x dims` input.
    pub fn eval<T: Real>(
        &self,
        dims: usize,
        refs: &[ParamRef],
        params: Params<'_, T>,
        tape: &mut Tape<T>,
        xs: &[T],
    ) -> Result<NodeId> {
        let blocks = self.routed(dims, xs)?;
        let rows = xs.len() / dims;
        match self.kind {
            FactorKind::RawCoords => {
                let width: usize = blocks.iter().map(|b| b.dim).sum();
                let mut v = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    for b in &blocks {
                        v.extend_from_slice(&b.values[r * b.dim..(r + 1) * b.dim]);
                    }
                }
                tape.input(rows, width, v)
            }
            FactorKind::DenseGrid | FactorKind::HashedVectors => {
                let mut parts = Vec::with_capacity(blocks.len());
                for (b, &p) in blocks.iter().zip(refs) {
                    let k = self.channels_per_level[b.level];
                    let res = self.grid_resolutions[b.level];
                    let table = if self.kind == FactorKind::HashedVectors {
                        Some(params.get(p).shape[0])
                    } else {
                        None
                    };
                    let (index, weight) = grid_lookup(tape.exec(), &b.values, b.dim, res, table);
                    parts.push(tape.gather(
                        params,
                        Gather {
                            param: p,
                            corners: 1 << b.dim,
                            index,
                            weight,
                            out_channels: k,
                            broadcast: self.broadcast,
                        },
                    )?);
                }
                tape.concat(parts)
            }
            FactorKind::Mlp => {
                let per = 2 * (self.mlp_hidden.len() + 1);
                let mut parts = Vec::with_capacity(blocks.len());
                for (i, b) in blocks.into_iter().enumerate() {
                    let x = tape.input(rows, b.dim, b.values)?;
                    let layer_refs = &refs[i * per..(i + 1) * per];
                    parts.push(mlp_forward(
                        tape,
                        params,
                        x,
                        layer_refs,
                        self.mlp_activation,
                        Activation::Identity,
                    )?);
                }
                tape.concat(parts)
            }
        }
    }

    fn routed<T: Real>(&self, dims: usize, xs: &[T]) -> Result<Vec<Routed<T>>> {
        let blocks = pyramid(&self.level_transform(), xs, dims)?;
        Ok(match &self.components {
            Some(sel) => {
                let mut picked = Vec::new();
                for &c in sel {
                    picked.extend(blocks.iter().filter(|b| b.component == c).cloned());
                }
                picked
            }
            None => blocks,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Dct,
    Uniform(f64),
    Zeros,
    Constant(f64),
}

/// Shape and initialization of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorDecl {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weight and bias declarations for a fully-connected stack, `w{j}` then
/// `b{j}` per layer.
pub fn mlp_tensors(prefix: &str, input: usize, hidden: &[usize], output: usize) -> Vec<TensorDecl> {
    let mut out = Vec::new();
    let mut fan_in = input;
    for (j, &width) in hidden.iter().chain(std::iter::once(&output)).enumerate() {
        let s = 1.0 / (fan_in as f64).sqrt();
        out.push(TensorDecl {
            name: format!("{prefix}.w{j}"),
            shape: vec![width, fan_in],
            init: Init::Uniform(s),
        });
        out.push(TensorDecl {
            name: format!("{prefix}.b{j}"),
            shape: vec![width],
            init: Init::Uniform(s),
        });
        fan_in = width;
    }
    out
}

/// Hidden layers use `act`; the last layer uses `last`.
pub fn mlp_forward<T: Real>(
    tape: &mut Tape<T>,
    params: Params<'_, T>,
    mut x: NodeId,
    refs: &[ParamRef],
    act: Activation,
    last: Activation,
) -> Result<NodeId> {
    let layers = refs.len() / 2;
    for j in 0..layers {
        x = tape.linear(params, x, refs[2 * j], Some(refs[2 * j + 1]))?;
        let a = if j + 1 == layers { last } else { act };
        if a != Activation::Identity {
            x = tape.act(x, a);
        }
    }
    Ok(x)
}

/// Corner slots and multilinear weights for every row of `coords`.
///
/// With `hash_rows`, slots come from the spatial hash unless the lattice fits
/// in the table, in which case they are dense indices.
pub fn grid_lookup<T: Real>(
    exec: Exec,
    coords: &[T],
    dim: usize,
    res: usize,
    hash_rows: Option<usize>,
) -> (Vec<u32>, Vec<T>) {
    assert!((1..=3).contains(&dim), "grid lookups support 1 to 3 axes");
    let rows = coords.len() / dim;
    let corners = 1 << dim;
    let mut index = vec![0u32; rows * corners];
    let mut weight = vec![T::zero(); rows * corners];
    let hashed = hash_rows.filter(|&t| lattice_size(res, dim).map_or(true, |n| n > t));
    let top = res.max(2) - 1;
    let topf = T::of(top as f64);
    for_each_row_chunk2(exec, &mut index, corners, &mut weight, corners, |first, idx, w| {
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        let mut node = [0usize; 3];
        for r in 0..idx.len() / corners {
            let x = &coords[(first + r) * dim..(first + r + 1) * dim];
            for a in 0..dim {
                let p = x[a].max(T::zero()).min(T::one()) * topf;
                let i = p.floor().to_usize().unwrap_or(0).min(top - 1);
                base[a] = i;
                frac[a] = p - T::of(i as f64);
            }
            for c in 0..corners {
                let mut wt = T::one();
                for a in 0..dim {
                    let hi = (c >> (dim - 1 - a)) & 1;
                    node[a] = base[a] + hi;
                    wt *= if hi == 1 { frac[a] } else { T::one() - frac[a] };
                }
                let slot = match hashed {
                    Some(t) => spatial_hash(&node[..dim], t),
                    None => dense_index(&node[..dim], res),
                };
                idx[r * corners + c] = slot as u32;
                w[r * corners + c] = wt;
            }
        }
    });
    (index, weight)
}
