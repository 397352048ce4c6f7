//! Model file persistence.
//!
//! A `.ddpgd` file is a JSON manifest (geometry, grid axes, tolerances,
//! mode counts, format version) followed by a binary section of
//! little-endian float64 arrays whose lengths are implied by the manifest.
//! Round trips are bit-exact.

use super::{ModelMetadata, Subdomain, SurrogateModel};
use crate::fem::{SideTag, StructuredMesh};
use crate::separated::{Mode, ParamAxis, ParamGrid, SeparatedTensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DDPGD\0\r\n";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a ddpgd model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("model failed validation after load: {0}")]
    Invalid(String),
    #[error("cannot rebuild mesh: {0}")]
    Mesh(#[from] crate::fem::FemError),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    subdomain: SubdomainManifest,
    grid: Vec<AxisManifest>,
    metadata: ModelMetadata,
    tensors: Vec<TensorManifest>,
    payload_len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubdomainManifest {
    id: String,
    origin: (f64, f64),
    extent: (f64, f64),
    nx: usize,
    ny: usize,
    side_tags: [SideTag; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct AxisManifest {
    name: String,
    lower: f64,
    upper: f64,
    step: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorManifest {
    role: String,
    q: Option<usize>,
    n_space: usize,
    n_modes: usize,
}

fn side_tags_of(mesh: &StructuredMesh) -> [SideTag; 4] {
    // the rectangle constructor tags whole sides; recover one tag per side
    // from any edge on it
    let (ox, oy) = mesh.origin();
    let (ex, ey) = mesh.extent();
    let h = mesh.hx().min(mesh.hy()) * 1e-9;
    let mut tags: [Option<SideTag>; 4] = [None, None, None, None];
    for edge in mesh.boundary_edges() {
        let (xa, ya) = mesh.coords(edge.nodes[0]);
        let (xb, yb) = mesh.coords(edge.nodes[1]);
        let side = if (xa - ox).abs() < h && (xb - ox).abs() < h {
            0
        } else if (xa - (ox + ex)).abs() < h && (xb - (ox + ex)).abs() < h {
            1
        } else if (ya - oy).abs() < h && (yb - oy).abs() < h {
            2
        } else if (ya - (oy + ey)).abs() < h && (yb - (oy + ey)).abs() < h {
            3
        } else {
            continue;
        };
        tags[side] = Some(SideTag {
            kind: edge.kind,
            label: edge.label.clone(),
        });
    }
    tags.map(|t| t.expect("every rectangle side carries edges"))
}

fn push_tensor_payload(payload: &mut Vec<u8>, tensor: &SeparatedTensor) {
    for mode in tensor.modes() {
        for &v in &mode.spatial {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for phi in &mode.parametric {
            for &v in phi {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

/// Serialize a model to its on-disk byte representation.
pub fn model_to_bytes(model: &SurrogateModel) -> Result<Vec<u8>, ModelIoError> {
    let mut tensors = Vec::with_capacity(1 + model.uq.len());
    tensors.push(TensorManifest {
        role: "u0".into(),
        q: None,
        n_space: model.u0.n_space(),
        n_modes: model.u0.rank(),
    });
    for (q, uq) in model.uq.iter().enumerate() {
        tensors.push(TensorManifest {
            role: "uq".into(),
            q: Some(q),
            n_space: uq.n_space(),
            n_modes: uq.rank(),
        });
    }

    let mut payload = Vec::new();
    push_tensor_payload(&mut payload, &model.u0);
    for uq in &model.uq {
        push_tensor_payload(&mut payload, uq);
    }

    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        subdomain: SubdomainManifest {
            id: model.subdomain.id.clone(),
            origin: model.subdomain.mesh.origin(),
            extent: model.subdomain.mesh.extent(),
            nx: model.subdomain.mesh.nx(),
            ny: model.subdomain.mesh.ny(),
            side_tags: side_tags_of(&model.subdomain.mesh),
        },
        grid: model
            .grid
            .axes()
            .iter()
            .map(|a| AxisManifest {
                name: a.name.clone(),
                lower: a.lower,
                upper: a.upper,
                step: a.step,
            })
            .collect(),
        metadata: model.metadata.clone(),
        tensors,
        payload_len: payload.len() as u64,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_model(model: &SurrogateModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let bytes = model_to_bytes(model)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn read_exact_chunk(bytes: &[u8], offset: &mut usize, len: usize) -> Result<Vec<f64>, ModelIoError> {
    let end = *offset + len * 8;
    if end > bytes.len() {
        return Err(ModelIoError::Corrupt(format!(
            "payload truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let out = bytes[*offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    *offset = end;
    Ok(out)
}

/// Deserialize a model from its on-disk byte representation.
pub fn model_from_bytes(bytes: &[u8]) -> Result<SurrogateModel, ModelIoError> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let mut offset = MAGIC.len();
    let manifest_len =
        u64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes")) as usize;
    offset += 8;
    if offset + manifest_len > bytes.len() {
        return Err(ModelIoError::Corrupt("manifest truncated".into()));
    }
    let manifest: ModelManifest = serde_json::from_slice(&bytes[offset..offset + manifest_len])?;
    offset += manifest_len;
    if manifest.format_version != FORMAT_VERSION {
        return Err(ModelIoError::Version(manifest.format_version));
    }
    let payload = &bytes[offset..];
    if payload.len() as u64 != manifest.payload_len {
        return Err(ModelIoError::Corrupt(format!(
            "payload length {} does not match manifest {}",
            payload.len(),
            manifest.payload_len
        )));
    }

    let sm = &manifest.subdomain;
    let mesh = StructuredMesh::rectangle(sm.origin, sm.extent, sm.nx, sm.ny, sm.side_tags.clone())?;
    let subdomain = Subdomain::from_mesh(sm.id.clone(), mesh);

    let axes: Result<Vec<ParamAxis>, _> = manifest
        .grid
        .iter()
        .map(|a| ParamAxis::new(a.name.clone(), a.lower, a.upper, a.step))
        .collect();
    let grid = ParamGrid::new(axes.map_err(|e| ModelIoError::Corrupt(e.to_string()))?)
        .map_err(|e| ModelIoError::Corrupt(e.to_string()))?;

    let mut cursor = 0usize;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for tm in &manifest.tensors {
        let mut modes = Vec::with_capacity(tm.n_modes);
        for _ in 0..tm.n_modes {
            let spatial = read_exact_chunk(payload, &mut cursor, tm.n_space)?;
            let parametric: Result<Vec<Vec<f64>>, ModelIoError> = grid
                .axes()
                .iter()
                .map(|a| read_exact_chunk(payload, &mut cursor, a.n_points()))
                .collect();
            modes.push(Mode {
                spatial,
                parametric: parametric?,
            });
        }
        tensors.push(
            SeparatedTensor::new(tm.n_space, grid.clone(), modes)
                .map_err(|e| ModelIoError::Corrupt(e.to_string()))?,
        );
    }
    if cursor != payload.len() {
        return Err(ModelIoError::Corrupt(format!(
            "{} trailing payload bytes",
            payload.len() - cursor
        )));
    }
    if tensors.len() != 1 + subdomain.n_interface_nodes() {
        return Err(ModelIoError::Corrupt(format!(
            "{} tensors for {} interface nodes",
            tensors.len(),
            subdomain.n_interface_nodes()
        )));
    }

    let u0 = tensors.remove(0);
    let model = SurrogateModel {
        subdomain,
        grid,
        u0,
        uq: tensors,
        metadata: manifest.metadata,
    };

    // invariant validation at 3 sampled parameter points
    let samples = model.validation_samples();
    model
        .validate_at(&samples, 1e-12)
        .map_err(ModelIoError::Invalid)?;
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SurrogateModel, ModelIoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}
