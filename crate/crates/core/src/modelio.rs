//! The `SLM1` model file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SLM1" | u32 header length | JSON header | zero padding to 8 bytes | payload
//! ```
//!
//! The payload concatenates every parameter as raw `f32` values, each blob
//! starting on an 8-byte boundary relative to the payload start. The header
//! records the architecture, input shape, class names, preprocessing, layer
//! stack and a tensor table of `{name, shape, offset, length, trainable}`,
//! plus an FNV-1a 64-bit checksum of the whole payload.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, ModelSpec};
use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::nn::{LayerConfig, ParameterStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SLM1";
pub const FORMAT_VERSION: u32 = 1;
const ALIGN: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: usize,
    /// Byte length of the blob.
    pub length: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub architecture: Architecture,
    pub input_shape: [usize; 4],
    pub num_classes: usize,
    pub feature_extractor_trainable: bool,
    pub class_names: Vec<String>,
    pub preprocess: PreprocessConfig,
    pub layers: Vec<LayerConfig>,
    pub tensors: Vec<TensorEntry>,
    /// FNV-1a 64 of the payload, as 16 lowercase hex digits.
    pub checksum: String,
}

/// Everything needed to run prediction on raw clips.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub spec: ModelSpec,
    pub params: ParameterStore<f32>,
    pub preprocess: PreprocessConfig,
    pub class_names: Vec<String>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn mismatch(detail: impl Into<String>) -> Error {
    Error::ArchitectureMismatch(detail.into())
}

/// Checks that `params` holds exactly the tensors `spec` declares.
fn check_params(spec: &ModelSpec, params: &ParameterStore<f32>) -> Result<()> {
    let shapes = spec.param_shapes()?;
    if shapes.len() != params.len() {
        return Err(mismatch(format!(
            "{} parameters for an architecture with {}",
            params.len(),
            shapes.len()
        )));
    }
    for (name, shape, trainable) in &shapes {
        let p = params
            .get(name)
            .ok_or_else(|| mismatch(format!("missing parameter `{name}`")))?;
        if p.value.shape() != shape.as_slice() {
            return Err(mismatch(format!("`{name}` has shape {:?}, expected {shape:?}", p.value.shape())));
        }
        if p.trainable != *trainable {
            return Err(mismatch(format!("`{name}` trainable flag disagrees with the architecture")));
        }
    }
    Ok(())
}

/// Serializes a model. Identical inputs always yield identical bytes.
pub fn to_bytes(model: &SavedModel) -> Result<Vec<u8>> {
    let SavedModel {
        spec,
        params,
        preprocess,
        class_names,
    } = model;
    check_params(spec, params)?;
    if class_names.len() != spec.num_classes {
        return Err(mismatch(format!(
            "{} class names for {} classes",
            class_names.len(),
            spec.num_classes
        )));
    }
    if preprocess.clip_shape() != spec.input_shape {
        return Err(mismatch("preprocessing does not produce the model's input shape"));
    }
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, trainable) in spec.param_shapes()? {
        let p = params.get(&name).expect("checked above");
        payload.resize(align(payload.len()), 0);
        let offset = payload.len();
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape,
            offset,
            length: payload.len() - offset,
            trainable,
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        architecture: spec.architecture,
        input_shape: spec.input_shape,
        num_classes: spec.num_classes,
        feature_extractor_trainable: spec.feature_extractor_trainable,
        class_names: class_names.clone(),
        preprocess: *preprocess,
        layers: spec.layers.clone(),
        tensors,
        checksum: format!("{:016x}", fnv1a64(&payload)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Header(e.to_string()))?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(align(8 + json.len()) + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(align(out.len()), 0);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and fully validates a serialized model.
pub fn from_bytes(bytes: &[u8]) -> Result<SavedModel> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let len_bytes: [u8; 4] = bytes
        .get(4..8)
        .ok_or_else(|| Error::Truncated("missing header length".into()))?
        .try_into()
        .expect("four bytes");
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes runs past the end of the file")))?;
    let raw: serde_json::Value = serde_json::from_slice(json).map_err(|e| Error::Header(e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Header("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion(u32::try_from(version).unwrap_or(u32::MAX)));
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Header(e.to_string()))?;

    let payload_start = align(8 + header_len);
    let payload = bytes.get(payload_start..).unwrap_or(&[]);
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let elems: usize = t.shape.iter().product();
        if t.length != elems * 4 || t.offset % ALIGN != 0 {
            return Err(Error::Header(format!("tensor `{}` has an inconsistent table entry", t.name)));
        }
        let end = t.offset.checked_add(t.length).filter(|&e| e <= payload.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!(
                "tensor `{}` ends past the payload ({} bytes)",
                t.name,
                payload.len()
            )));
        };
        spans.push((t.offset, end));
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::Header("tensor table entries overlap".into()));
    }
    let found = fnv1a64(payload);
    let expected = u64::from_str_radix(&header.checksum, 16)
        .map_err(|_| Error::Header(format!("invalid checksum `{}`", header.checksum)))?;
    if found != expected {
        return Err(Error::Checksum { expected, found });
    }

    let spec = ModelSpec::build(
        header.architecture,
        header.input_shape,
        header.num_classes,
        header.feature_extractor_trainable,
    )
    .map_err(|e| mismatch(e.to_string()))?;
    if spec.layers != header.layers {
        return Err(mismatch(format!("layer stack differs from the {} builder", spec.architecture)));
    }
    if header.class_names.len() != spec.num_classes {
        return Err(mismatch("class name count differs from num_classes"));
    }
    if header.preprocess.clip_shape() != spec.input_shape {
        return Err(mismatch("preprocessing does not produce the model's input shape"));
    }
    let mut params = ParameterStore::new();
    for t in &header.tensors {
        let data = payload[t.offset..t.offset + t.length]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
            .collect();
        let value = Tensor::new(t.shape.clone(), data).map_err(|e| Error::Header(e.to_string()))?;
        params
            .insert(t.name.clone(), value, t.trainable)
            .map_err(|_| Error::Header(format!("tensor `{}` listed twice", t.name)))?;
    }
    check_params(&spec, &params)?;
    Ok(SavedModel {
        spec,
        params,
        preprocess: header.preprocess,
        class_names: header.class_names,
    })
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Parses only the header, without checking the payload.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes")) as usize;
    let json = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| Error::Truncated("header runs past the end of the file".into()))?;
    serde_json::from_slice(json).map_err(|e| Error::Header(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    const SHAPE: [usize; 4] = [4, 8, 8, 1];

    fn model(arch: Architecture) -> SavedModel {
        let spec = ModelSpec::build(arch, SHAPE, 3, arch != Architecture::CnnRnnLstm).unwrap();
        let params = spec.init_params(&mut Rng::new(4)).unwrap();
        SavedModel {
            spec,
            params,
            preprocess: PreprocessConfig {
                target_height: 8,
                target_width: 8,
                channels: 1,
                sequence_length: 4,
            },
            class_names: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_is_exact() {
        for arch in Architecture::ALL {
            let m = model(arch);
            let bytes = to_bytes(&m).unwrap();
            assert_eq!(bytes, to_bytes(&m).unwrap());
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back).unwrap(), bytes);
            let clip = Tensor::uniform(SHAPE.to_vec(), 0.0, 1.0, &mut Rng::new(1));
            let a = m.spec.predict(&m.params, &clip).unwrap();
            let b = back.spec.predict(&back.params, &clip).unwrap();
            assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn layout_accounts_for_every_byte() {
        let bytes = to_bytes(&model(Architecture::Cnn3d)).unwrap();
        let header = read_header(&bytes).unwrap();
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let start = align(8 + header_len);
        assert_eq!(start % 8, 0);
        let mut cursor = 0;
        let mut padding = 0;
        for t in &header.tensors {
            assert_eq!(t.offset % 8, 0);
            padding += t.offset - cursor;
            cursor = t.offset + t.length;
        }
        let lengths: usize = header.tensors.iter().map(|t| t.length).sum();
        assert_eq!(bytes.len(), 8 + header_len + (start - 8 - header_len) + padding + lengths);
    }

    #[test]
    fn rejects_damage_with_distinct_errors() {
        let bytes = to_bytes(&model(Architecture::CnnTd)).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        let err = from_bytes(&bad_magic).unwrap_err();
        assert!(matches!(err, Error::BadMagic));
        assert_eq!(err.to_string(), "not a model file");

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(from_bytes(truncated), Err(Error::Truncated(_))));
        assert!(matches!(from_bytes(&bytes[..6]), Err(Error::Truncated(_))));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        assert!(matches!(from_bytes(&flipped), Err(Error::Checksum { .. })));

        let json = String::from_utf8(bytes[8..8 + u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize].to_vec()).unwrap();
        let v2 = json.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(from_bytes(&rewrap(&v2, &bytes)), Err(Error::UnsupportedVersion(2))));

        let wrong_arch = json.replace("\"architecture\":\"cnn_td\"", "\"architecture\":\"cnn3d\"");
        assert!(matches!(from_bytes(&rewrap(&wrong_arch, &bytes)), Err(Error::ArchitectureMismatch(_))));
    }

    /// Replaces the header of `original` while keeping its payload.
    fn rewrap(json: &str, original: &[u8]) -> Vec<u8> {
        let old_len = u32::from_le_bytes(original[4..8].try_into().unwrap()) as usize;
        let payload = &original[align(8 + old_len)..];
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.resize(align(out.len()), 0);
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn save_requires_complete_params() {
        let mut m = model(Architecture::CnnLstm);
        let other = model(Architecture::CnnTd);
        m.params = other.params;
        assert!(matches!(to_bytes(&m), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.slm");
        let m = model(Architecture::CnnRnnLstm);
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert!(matches!(load_model(&dir.path().join("missing.slm")), Err(Error::Io { .. })));
    }
}
