//! Binary checkpoints. The byte layout is described in `docs/checkpoint.md`.
//!
//! ```text
//! "SDCK" | version u32 LE | header_len u32 LE | header JSON (UTF-8)
//!        | param_count u64 LE | param_count × f64 LE
//! ```
//!
//! Every network's parameters sit in the one trailing array at the offset
//! its header entry names.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::GaussianHead;
use crate::model::{LatentDiffusionModel, ModelDims, EMBED_DIM};
use crate::net::{Activation, Network};
use crate::schedule::ScheduleSpec;

pub const MAGIC: [u8; 4] = *b"SDCK";
pub const VERSION: u32 = 1;

const KIND_MODEL: &str = "model";
const KIND_NETWORK: &str = "network";
const FINAL_STEP_NOISE: &str = "zero";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkEntry {
    role: String,
    layer_dims: Vec<usize>,
    activation: Activation,
    residual: bool,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dims: Option<ModelDims>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embed_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_kl: Option<f64>,
    // null until the model has been trained
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_sq: Option<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps_kl: Option<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    final_step_noise: Option<String>,
    networks: Vec<NetworkEntry>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn encode(header: &Header, params: &[&[f64]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let count: usize = params.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(4 + 4 + 4 + json.len() + 8 + 8 * count);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header_len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in params {
        for v in *p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn decode(mut bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if take(&mut bytes, 4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(take(&mut bytes, 4, "header length")?.try_into().unwrap());
    let header: Header = serde_json::from_slice(take(&mut bytes, header_len as usize, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = u64::from_le_bytes(take(&mut bytes, 8, "parameter count")?.try_into().unwrap());
    let count = usize::try_from(count).map_err(|_| Error::Checkpoint("parameter count overflows".into()))?;
    if bytes.len() != count.checked_mul(8).ok_or(Error::Checkpoint("parameter count overflows".into()))? {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, params))
}

fn entry(role: &str, net: &Network, offset: &mut u64) -> NetworkEntry {
    let e = NetworkEntry {
        role: role.to_string(),
        layer_dims: net.layer_dims().to_vec(),
        activation: net.activation(),
        residual: net.residual(),
        offset: *offset,
        len: net.num_params() as u64,
    };
    *offset += e.len;
    e
}

fn rebuild(entries: &[NetworkEntry], role: &str, params: &[f64]) -> Result<Network> {
    let e = entries
        .iter()
        .find(|e| e.role == role)
        .ok_or_else(|| Error::Checkpoint(format!("no `{role}` network")))?;
    let start = e.offset as usize;
    let end = start
        .checked_add(e.len as usize)
        .filter(|&end| end <= params.len())
        .ok_or_else(|| Error::Checkpoint(format!("`{role}` parameters out of bounds")))?;
    Network::from_params(&e.layer_dims, e.activation, e.residual, params[start..end].to_vec())
        .map_err(|err| Error::Checkpoint(format!("`{role}`: {err}")))
}

pub fn model_to_bytes(model: &LatentDiffusionModel) -> Result<Vec<u8>> {
    let mut offset = 0;
    let networks = vec![
        entry("denoiser", model.denoiser(), &mut offset),
        entry("prior", model.prior().net(), &mut offset),
        entry("posterior", model.posterior().net(), &mut offset),
    ];
    let header = Header {
        kind: KIND_MODEL.into(),
        schedule: Some(model.schedule().spec()),
        dims: Some(model.dims()),
        embed_dim: Some(EMBED_DIM),
        beta_kl: Some(model.beta_kl()),
        delta_sq: Some(finite(model.delta_sq())),
        eps_kl: Some(finite(model.eps_kl())),
        final_step_noise: Some(FINAL_STEP_NOISE.into()),
        networks,
    };
    encode(
        &header,
        &[
            model.denoiser().params(),
            model.prior().net().params(),
            model.posterior().net().params(),
        ],
    )
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<LatentDiffusionModel> {
    let (h, params) = decode(bytes)?;
    if h.kind != KIND_MODEL {
        return Err(Error::Checkpoint(format!("expected a model checkpoint, found `{}`", h.kind)));
    }
    let missing = |f: &str| Error::Checkpoint(format!("model checkpoint lacks `{f}`"));
    if h.embed_dim != Some(EMBED_DIM) {
        return Err(Error::Checkpoint(format!(
            "step embedding width {:?} unsupported, expected {EMBED_DIM}",
            h.embed_dim
        )));
    }
    if h.final_step_noise.as_deref() != Some(FINAL_STEP_NOISE) {
        return Err(Error::Checkpoint("unsupported final-step noise rule".into()));
    }
    let schedule = h.schedule.ok_or_else(|| missing("schedule"))?.build()?;
    let dims = h.dims.ok_or_else(|| missing("dims"))?;
    let beta_kl = h.beta_kl.ok_or_else(|| missing("beta_kl"))?;
    let denoiser = rebuild(&h.networks, "denoiser", &params)?;
    let prior = GaussianHead::new(rebuild(&h.networks, "prior", &params)?)?;
    let posterior = GaussianHead::new(rebuild(&h.networks, "posterior", &params)?)?;
    let mut model = LatentDiffusionModel::from_parts(denoiser, prior, posterior, schedule, dims, beta_kl)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    model.set_training_stats(
        h.delta_sq.flatten().unwrap_or(f64::NAN),
        h.eps_kl.flatten().unwrap_or(f64::NAN),
    );
    Ok(model)
}

pub fn network_to_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut offset = 0;
    let header = Header {
        kind: KIND_NETWORK.into(),
        schedule: None,
        dims: None,
        embed_dim: None,
        beta_kl: None,
        delta_sq: None,
        eps_kl: None,
        final_step_noise: None,
        networks: vec![entry("network", net, &mut offset)],
    };
    encode(&header, &[net.params()])
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<Network> {
    let (h, params) = decode(bytes)?;
    if h.kind != KIND_NETWORK {
        return Err(Error::Checkpoint(format!("expected a network checkpoint, found `{}`", h.kind)));
    }
    rebuild(&h.networks, "network", &params)
}

pub fn save_model(model: &LatentDiffusionModel, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LatentDiffusionModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> LatentDiffusionModel {
        let mut cfg = ModelConfig::new(ModelDims {
            state: 2,
            cond: 3,
            latent: 2,
        });
        cfg.denoiser_hidden = vec![8, 8];
        cfg.head_hidden = vec![5];
        cfg.seed = 4;
        LatentDiffusionModel::new(&cfg).unwrap()
    }

    fn same(a: &LatentDiffusionModel, b: &LatentDiffusionModel) {
        assert_eq!(a.denoiser(), b.denoiser());
        assert_eq!(a.prior(), b.prior());
        assert_eq!(a.posterior(), b.posterior());
        assert_eq!(a.schedule(), b.schedule());
        assert_eq!(a.dims(), b.dims());
        assert_eq!(a.beta_kl(), b.beta_kl());
    }

    #[test]
    fn model_round_trip() {
        let mut m = model();
        let bytes = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        same(&m, &back);
        assert!(back.delta_sq().is_nan());
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);

        m.set_training_stats(0.125, 0.5);
        let back = model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap();
        assert_eq!(back.delta_sq(), 0.125);
        assert_eq!(back.eps_kl(), 0.5);
    }

    #[test]
    fn layout_is_as_documented() {
        let m = model();
        let bytes = model_to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"SDCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hl = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hl]).unwrap();
        assert_eq!(header["kind"], "model");
        assert_eq!(header["schedule"]["K"], 5);
        assert_eq!(header["final_step_noise"], "zero");
        assert!(header["delta_sq"].is_null());
        let count = u64::from_le_bytes(bytes[12 + hl..20 + hl].try_into().unwrap()) as usize;
        let total = m.denoiser().num_params() + m.prior().net().num_params() + m.posterior().net().num_params();
        assert_eq!(count, total);
        assert_eq!(bytes.len(), 20 + hl + 8 * count);
        let first = f64::from_le_bytes(bytes[20 + hl..28 + hl].try_into().unwrap());
        assert_eq!(first, m.denoiser().params()[0]);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = model_to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(model_from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        let err = model_from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        assert!(model_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(model_from_bytes(&bytes[..10]).is_err());
        assert!(network_from_bytes(&bytes).is_err());
    }

    #[test]
    fn network_round_trip() {
        let net = Network::new(&[3, 4, 2], Activation::Mish, 1).unwrap().with_residual(true);
        let back = network_from_bytes(&network_to_bytes(&net).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("sdck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        let m = model();
        save_model(&m, &path).unwrap();
        same(&m, &load_model(&path).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
