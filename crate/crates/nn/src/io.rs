//! Parameter files: `AENN` magic, format version, a JSON model card, a
//! tensor table (name and shape), then every tensor as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use gridwise_core::sensor::SensorKind;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, NnResult};
use crate::loss::Scheme;
use crate::model::{AeModel, ModelConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"AENN";
pub const MODEL_VERSION: u32 = 1;

/// What a saved model was trained on, so it is only applied to matching inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub config: ModelConfig,
    pub side: usize,
    pub resolution: f64,
    pub sensor: Option<SensorKind>,
    pub scheme: Option<Scheme>,
    pub tau: f64,
    pub v_thresh: f64,
}

impl ModelCard {
    pub fn window(&self) -> f64 {
        self.side as f64 * self.resolution
    }
}

fn tensors(model: &AeModel<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut out: Vec<(String, Vec<usize>, &[f32])> = model
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.shape.clone(), p.value.as_slice()))
        .collect();
    out.extend(model.buffers().into_iter().map(|(n, b)| (n, vec![b.len()], b.as_slice())));
    out
}

pub fn write_model_to(model: &AeModel<f32>, card: &ModelCard, w: &mut impl Write) -> NnResult<()> {
    if card.config != model.config {
        return Err(NnError::ShapeMismatch("model card describes another architecture".into()));
    }
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(card)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let table = tensors(model);
    w.write_all(&(table.len() as u32).to_le_bytes())?;
    for (name, shape, _) in &table {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for (_, _, data) in &table {
        for v in *data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_model(model: &AeModel<f32>, card: &ModelCard, path: impl AsRef<Path>) -> NnResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(model, card, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> NnResult<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_model_from(r: &mut impl Read, name: &Path) -> NnResult<(AeModel<f32>, ModelCard)> {
    let bad = |reason: String| NnError::VersionMismatch {
        path: name.to_path_buf(),
        reason,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(bad("missing AENN magic".into()));
    }
    let version = read_u32(r)?;
    if version != MODEL_VERSION {
        return Err(bad(format!("version {version}, expected {MODEL_VERSION}")));
    }
    let json_len = read_u32(r)? as usize;
    if json_len > 1 << 20 {
        return Err(bad("implausible header length".into()));
    }
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let card: ModelCard = serde_json::from_slice(&json)?;
    let mut model = AeModel::<f32>::new(card.config, 0)?;

    let n = read_u32(r)? as usize;
    let expected: Vec<(String, Vec<usize>)> = tensors(&model).into_iter().map(|(n, s, _)| (n, s)).collect();
    if n != expected.len() {
        return Err(NnError::ShapeMismatch(format!("{n} tensors in file, architecture has {}", expected.len())));
    }
    for (want_name, want_shape) in &expected {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut nb = vec![0u8; u16::from_le_bytes(lb) as usize];
        r.read_exact(&mut nb)?;
        let mut nd = [0u8; 1];
        r.read_exact(&mut nd)?;
        let shape = (0..nd[0]).map(|_| read_u32(r).map(|d| d as usize)).collect::<NnResult<Vec<_>>>()?;
        if nb != want_name.as_bytes() || &shape != want_shape {
            return Err(NnError::ShapeMismatch(format!(
                "tensor {} {:?} does not match {} {:?}",
                String::from_utf8_lossy(&nb),
                shape,
                want_name,
                want_shape
            )));
        }
    }
    let mut read_vec = |len: usize| -> NnResult<Vec<f32>> {
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
    };
    for (_, p) in model.params_mut() {
        p.value = read_vec(p.value.len())?;
    }
    for (_, b) in model.buffers_mut() {
        *b = read_vec(b.len())?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after parameter data".into()));
    }
    Ok((model, card))
}

pub fn load_model(path: impl AsRef<Path>) -> NnResult<(AeModel<f32>, ModelCard)> {
    let path = path.as_ref();
    read_model_from(&mut BufReader::new(File::open(path)?), path)
}

/// Loads parameters into an existing model, which must have the same architecture.
pub fn load_into(model: &mut AeModel<f32>, path: impl AsRef<Path>) -> NnResult<ModelCard> {
    let (loaded, card) = load_model(path)?;
    if loaded.config != model.config {
        return Err(NnError::ShapeMismatch(format!(
            "file holds {:?}, model is {:?}",
            loaded.config, model.config
        )));
    }
    *model = loaded;
    Ok(card)
}
