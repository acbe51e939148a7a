//! Checkpoint files.
//!
//! Layout: `"FFLD"`, `u32` version, `u64` config length and UTF-8 config
//! text, `u64` tensor count, then per tensor (sorted by name): `u32` name
//! length and name, `u8` dtype code, `u32` rank, `u64` extents, raw values.

use std::path::Path;

use super::{read_file, write_file, Reader};
use crate::engine::param::FieldParams;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::real::{DType, Real};

const MAGIC: &[u8; 4] = b"FFLD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_real<T: Real>(values: &[T]) -> Self {
        match T::DTYPE {
            DType::F32 => TensorData::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => TensorData::F64(values.iter().map(|v| v.as_f64()).collect()),
        }
    }

    /// Converts to `T`; exact when `T` matches the stored dtype.
    pub fn to_real<T: Real>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(config: impl Into<String>, params: &FieldParams<T>) -> Self {
        Self {
            config: config.into(),
            tensors: params
                .sorted_tensors()
                .into_iter()
                .map(|t| StoredTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: TensorData::from_real(&t.values),
                })
                .collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Fills a fresh parameter set for `model`; every model tensor must be
    /// present with a matching shape.
    pub fn to_params<T: Real>(&self, model: &Model) -> Result<FieldParams<T>> {
        let mut params = model.zero_params::<T>();
        let mut seen = 0;
        for st in &self.tensors {
            let t = params.tensor_mut(&st.name).ok_or_else(|| {
                Error::InvalidModel(format!("checkpoint tensor `{}` is not part of the model", st.name))
            })?;
            if t.shape != st.shape {
                return Err(Error::Shape(format!(
                    "tensor `{}`: checkpoint shape {:?}, model shape {:?}",
                    st.name, st.shape, t.shape
                )));
            }
            t.values = st.data.to_real();
            seen += 1;
        }
        let expected = params.shared.len() + params.local.len();
        if seen != expected {
            return Err(Error::InvalidModel(format!(
                "checkpoint holds {seen} of the model's {expected} tensors"
            )));
        }
        Ok(params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut sorted: Vec<&StoredTensor> = self.tensors.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend((sorted.len() as u64).to_le_bytes());
        for t in sorted {
            out.extend((t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype() as u8);
            out.extend((t.shape.len() as u32).to_le_bytes());
            for &e in &t.shape {
                out.extend((e as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("checkpoint", bytes);
        r.magic(MAGIC)?;
        let at = r.pos();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(
                at,
                format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let at = r.pos();
        let len = r.u64("config length")? as usize;
        let config = std::str::from_utf8(r.take(len, "config text")?)
            .map_err(|e| r.error(at + 8 + e.valid_up_to(), "config text is not UTF-8"))?
            .to_string();
        let count = r.u64("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let at = r.pos();
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| r.error(at + 4, "tensor name is not UTF-8"))?
                .to_string();
            let at = r.pos();
            let code = r.u8("dtype")?;
            let dtype = DType::from_code(code).ok_or_else(|| r.error(at, format!("unknown dtype code {code}")))?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64("extent")? as usize);
            }
            let at = r.pos();
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| r.error(at, "tensor size overflows"))?;
            let raw = r.take(n, "tensor values")?;
            let data = match dtype {
                DType::F32 => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::F64 => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            tensors.push(StoredTensor { name, shape, data });
        }
        r.finish()?;
        Ok(Self { config, tensors })
    }
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, config: &str, params: &FieldParams<T>) -> Result<()> {
    write_file(path.as_ref(), &Checkpoint::from_params(config, params).encode())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_preset, PresetOptions};

    fn small() -> Model {
        let mut o = PresetOptions::new(2);
        o.eta = Some(0);
        o.levels = Some(2);
        o.coef_res = Some(4);
        o.basis_res = Some(vec![3, 5]);
        Model::new(build_preset("dif_grid", &o).unwrap()).unwrap()
    }

    #[test]
    fn save_load_save_is_identical() {
        let model = small();
        let params = model.init_params::<f32>(7);
        let bytes = Checkpoint::from_params("dims = 2\n", &params).encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.config, "dims = 2\n");
        let restored = back.to_params::<f32>(&model).unwrap();
        for t in params.sorted_tensors() {
            assert_eq!(restored.tensor(&t.name).unwrap().values, t.values);
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(Checkpoint::decode(b"FFLX\x01\0\0\0").is_err());
        assert!(Checkpoint::decode(b"FFLD\x02\0\0\0").is_err());
        let mut c = Checkpoint {
            config: String::new(),
            tensors: vec![StoredTensor {
                name: "a".into(),
                shape: vec![1],
                data: TensorData::F32(vec![1.0]),
            }],
        }
        .encode();
        let dtype_at = 4 + 4 + 8 + 8 + 4 + 1;
        c[dtype_at] = 9;
        let err = Checkpoint::decode(&c).unwrap_err().to_string();
        assert!(err.contains("dtype"), "{err}");
    }

    #[test]
    fn tensor_order_is_canonical() {
        let t = |n: &str| StoredTensor {
            name: n.into(),
            shape: vec![],
            data: TensorData::F64(vec![0.5]),
        };
        let a = Checkpoint {
            config: "x".into(),
            tensors: vec![t("b"), t("a")],
        };
        let b = Checkpoint {
            config: "x".into(),
            tensors: vec![t("a"), t("b")],
        };
        assert_eq!(a.encode(), b.encode());
    }
}
