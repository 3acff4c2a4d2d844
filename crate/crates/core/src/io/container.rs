//! Binary container for checkpoints and fitted curvature states.
//!
//! Layout: the 8-byte magic `INFLCKPT`, a little-endian `u32` format
//! version, a little-endian `u32` header length, a UTF-8 JSON header, then
//! the arrays listed in the header as little-endian `f64`, in order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{io_err, write_atomic, IoError};
use crate::ihvp::{EkfacLayer, EkfacState, KfacState};
use crate::model::{MlpSpec, ModelParams};

pub const CONTAINER_MAGIC: &[u8; 8] = b"INFLCKPT";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn vector(name: impl Into<String>, data: &[f64]) -> Self {
        Self {
            name: name.into(),
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    /// A matrix stored column-major.
    pub fn matrix(name: impl Into<String>, m: &DMatrix<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    /// What the arrays describe: `model`, `kfac` or `ekfac`.
    pub kind: String,
    pub spec: MlpSpec,
    pub l2_penalty: f64,
    /// Free-form provenance.
    pub meta: Value,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    spec: MlpSpec,
    l2_penalty: f64,
    meta: Value,
    arrays: Vec<ArrayHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            spec: self.spec.clone(),
            l2_penalty: self.l2_penalty,
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayHeader {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let total: usize = self.arrays.iter().map(|a| a.data.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * total);
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self, IoError> {
        let truncated = |what, missing| IoError::Truncated {
            path: path.to_path_buf(),
            what,
            missing,
        };
        if bytes.len() < 16 {
            return Err(truncated("container preamble", 16 - bytes.len()));
        }
        if &bytes[..8] != CONTAINER_MAGIC {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                message: "not a checkpoint container (bad magic)".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CONTAINER_VERSION {
            return Err(IoError::UnsupportedVersion {
                path: path.to_path_buf(),
                found: version.into(),
                supported: CONTAINER_VERSION.into(),
            });
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let rest = &bytes[16..];
        if rest.len() < header_len {
            return Err(truncated("container header", header_len - rest.len()));
        }
        let header: Header = serde_json::from_slice(&rest[..header_len]).map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            message: format!("container header: {e}"),
        })?;
        let mut payload = &rest[header_len..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let len: usize = a.shape.iter().product();
            if payload.len() < 8 * len {
                return Err(truncated("array data", 8 * len - payload.len()));
            }
            let data = payload[..8 * len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[8 * len..];
            arrays.push(NamedArray {
                name: a.name,
                shape: a.shape,
                data,
            });
        }
        if !payload.is_empty() {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                message: format!("{} trailing bytes after the last array", payload.len()),
            });
        }
        Ok(Self {
            kind: header.kind,
            spec: header.spec,
            l2_penalty: header.l2_penalty,
            meta: header.meta,
            arrays,
        })
    }

    fn array(&self, path: &Path, name: &str) -> Result<&NamedArray, IoError> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            message: format!("missing array `{name}`"),
        })
    }

    fn matrix(&self, path: &Path, name: &str) -> Result<DMatrix<f64>, IoError> {
        let a = self.array(path, name)?;
        match a.shape[..] {
            [r, c] => Ok(DMatrix::from_column_slice(r, c, &a.data)),
            _ => Err(IoError::Format {
                path: path.to_path_buf(),
                message: format!("array `{name}` is not a matrix"),
            }),
        }
    }

    fn expect_kind(&self, path: &Path, kind: &str) -> Result<(), IoError> {
        if self.kind != kind {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                message: format!("container holds `{}`, expected `{kind}`", self.kind),
            });
        }
        Ok(())
    }

    fn samples(&self, path: &Path) -> Result<usize, IoError> {
        self.meta
            .get("samples")
            .and_then(Value::as_u64)
            .map(|s| s as usize)
            .ok_or_else(|| IoError::Format {
                path: path.to_path_buf(),
                message: "missing `samples` in metadata".into(),
            })
    }
}

pub fn write_container(path: &Path, container: &Container) -> Result<(), IoError> {
    write_atomic(path, &container.to_bytes())
}

pub fn read_container(path: &Path) -> Result<Container, IoError> {
    Container::from_bytes(path, &fs::read(path).map_err(io_err(path))?)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: Value) -> Result<(), IoError> {
    write_container(
        path,
        &Container {
            kind: "model".into(),
            spec: params.spec().clone(),
            l2_penalty: params.l2_penalty(),
            meta,
            arrays: vec![NamedArray::vector("theta", params.theta().as_slice())],
        },
    )
}

/// Load model parameters and their provenance metadata.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Value), IoError> {
    let c = read_container(path)?;
    c.expect_kind(path, "model")?;
    let theta = DVector::from_vec(c.array(path, "theta")?.data.clone());
    let params = ModelParams::new(c.spec.clone(), theta)?.with_l2_penalty(c.l2_penalty)?;
    Ok((params, c.meta))
}

fn with_samples(mut meta: Value, samples: usize) -> Value {
    if !meta.is_object() {
        meta = Value::Object(Default::default());
    }
    meta["samples"] = samples.into();
    meta
}

/// Store the K-FAC factors; eigendecompositions are recomputed on load.
pub fn save_kfac(path: &Path, state: &KfacState, meta: Value) -> Result<(), IoError> {
    let mut arrays = Vec::new();
    for (l, layer) in state.layers().iter().enumerate() {
        arrays.push(NamedArray::matrix(format!("a{l}"), &layer.a));
        arrays.push(NamedArray::matrix(format!("y{l}"), &layer.y));
    }
    write_container(
        path,
        &Container {
            kind: "kfac".into(),
            spec: state.spec().clone(),
            l2_penalty: state.l2_penalty(),
            meta: with_samples(meta, state.samples()),
            arrays,
        },
    )
}

pub fn load_kfac(path: &Path) -> Result<(KfacState, Value), IoError> {
    let c = read_container(path)?;
    c.expect_kind(path, "kfac")?;
    let factors = (0..c.spec.num_layers())
        .map(|l| Ok((c.matrix(path, &format!("a{l}"))?, c.matrix(path, &format!("y{l}"))?)))
        .collect::<Result<Vec<_>, IoError>>()?;
    let state = KfacState::from_factors(c.spec.clone(), factors, c.samples(path)?, c.l2_penalty)?;
    Ok((state, c.meta))
}

pub fn save_ekfac(path: &Path, state: &EkfacState, meta: Value) -> Result<(), IoError> {
    let mut arrays = Vec::new();
    for (l, layer) in state.layers().iter().enumerate() {
        arrays.push(NamedArray::matrix(format!("q_a{l}"), &layer.q_a));
        arrays.push(NamedArray::matrix(format!("q_y{l}"), &layer.q_y));
        arrays.push(NamedArray::vector(format!("lambda{l}"), layer.lambda.as_slice()));
    }
    write_container(
        path,
        &Container {
            kind: "ekfac".into(),
            spec: state.spec().clone(),
            l2_penalty: state.l2_penalty(),
            meta: with_samples(meta, state.samples()),
            arrays,
        },
    )
}

pub fn load_ekfac(path: &Path) -> Result<(EkfacState, Value), IoError> {
    let c = read_container(path)?;
    c.expect_kind(path, "ekfac")?;
    let layers = (0..c.spec.num_layers())
        .map(|l| {
            Ok(EkfacLayer {
                q_a: c.matrix(path, &format!("q_a{l}"))?,
                q_y: c.matrix(path, &format!("q_y{l}"))?,
                lambda: DVector::from_vec(c.array(path, &format!("lambda{l}"))?.data.clone()),
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let state = EkfacState::from_parts(c.spec.clone(), layers, c.samples(path)?, c.l2_penalty)?;
    Ok((state, c.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use serde_json::json;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let params = ModelParams::init(&spec, 11).with_l2_penalty(1e-3).unwrap();
        save_checkpoint(&p, &params, json!({"seed": 11})).unwrap();
        let (back, meta) = load_checkpoint(&p).unwrap();
        assert_eq!(back, params);
        assert_eq!(meta["seed"], 11);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], CONTAINER_MAGIC);
    }

    #[test]
    fn rejects_bad_version_and_truncation() {
        let spec = MlpSpec::linear(2, 2).unwrap();
        let params = ModelParams::init(&spec, 0);
        let c = Container {
            kind: "model".into(),
            spec,
            l2_penalty: 0.0,
            meta: Value::Null,
            arrays: vec![NamedArray::vector("theta", params.theta().as_slice())],
        };
        let mut bytes = c.to_bytes();
        let p = Path::new("c");
        assert_eq!(Container::from_bytes(p, &bytes).unwrap(), c);
        assert!(matches!(
            Container::from_bytes(p, &bytes[..bytes.len() - 3]),
            Err(IoError::Truncated { missing: 3, .. })
        ));
        bytes[8] = 9;
        assert!(matches!(Container::from_bytes(p, &bytes), Err(IoError::UnsupportedVersion { found: 9, .. })));
    }
}
