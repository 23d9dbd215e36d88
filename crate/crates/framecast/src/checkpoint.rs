//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "FRAMECST" | u32 version | u32 header length | JSON header
//! u32 tensor count | per tensor: u16 name length, name, u8 rank, u32 dims.., f32 values..
//! ```
//!
//! The header carries the model kind and configuration and, for training
//! checkpoints, everything needed to resume: step, optimizer settings, split,
//! generator position and loss statistics. Tensors are named
//! `<layer>.weight` / `<layer>.bias`, with Adam moments under `adam.m.` and
//! `adam.v.`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use framecast_core::data::{ActionLabel, SplitSpec};
use framecast_core::model::{Architecture, LayerParams, ModelConfig, ModelParameters, Network};
use framecast_core::training::{LossStats, TrainConfig, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"FRAMECST";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TimeConditioned,
    Baseline,
}

impl ModelKind {
    pub fn of(config: &ModelConfig) -> Self {
        if config.has_time_branch() {
            ModelKind::TimeConditioned
        } else {
            ModelKind::Baseline
        }
    }
}

/// Run settings stored alongside a training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub action: Option<ActionLabel>,
}

#[derive(Debug, Clone)]
pub enum Body {
    Model(Network<f32>),
    Training { state: TrainState<f32>, meta: TrainingMeta },
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Displacement a baseline network was trained for.
    pub baseline_step_millis: Option<f64>,
    pub body: Body,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline_step_millis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingHeader {
    step: u64,
    #[serde(flatten)]
    meta: TrainingMeta,
    rng: RngHeader,
    loss: LossHeader,
}

/// ChaCha8 position: key, stream and word offset (a u128, kept as a string).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossHeader {
    last: Option<f64>,
    average: Option<f64>,
    best: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Checkpoint {
    pub fn from_network(network: Network<f32>, baseline_step_millis: Option<f64>) -> Self {
        Self { baseline_step_millis, body: Body::Model(network) }
    }

    pub fn from_training(state: TrainState<f32>, meta: TrainingMeta, baseline_step_millis: Option<f64>) -> Self {
        Self { baseline_step_millis, body: Body::Training { state, meta } }
    }

    pub fn network(&self) -> &Network<f32> {
        match &self.body {
            Body::Model(n) => n,
            Body::Training { state, .. } => state.network(),
        }
    }

    pub fn into_network(self) -> Network<f32> {
        match self.body {
            Body::Model(n) => n,
            Body::Training { state, .. } => state.into_network(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        ModelKind::of(self.network().config())
    }

    pub fn training(&self) -> Option<(&TrainState<f32>, &TrainingMeta)> {
        match &self.body {
            Body::Model(_) => None,
            Body::Training { state, meta } => Some((state, meta)),
        }
    }

    /// Fails with a model-kind error unless this checkpoint holds `kind`.
    pub fn require(&self, kind: ModelKind) -> Result<()> {
        if self.kind() != kind {
            return Err(framecast_core::Error::ModelKind(format!(
                "expected a {kind:?} checkpoint, found a {:?} one",
                self.kind()
            ))
            .into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let network = self.network();
        let training = self.training().map(|(state, meta)| {
            let rng = state.rng();
            let loss = state.loss();
            TrainingHeader {
                step: state.step(),
                meta: meta.clone(),
                rng: RngHeader {
                    seed: hex::encode(rng.get_seed()),
                    stream: rng.get_stream(),
                    word_pos: rng.get_word_pos().to_string(),
                },
                loss: LossHeader { last: finite(loss.last), average: finite(loss.average), best: finite(loss.best) },
            }
        });
        let header = Header {
            kind: self.kind(),
            model: network.config().clone(),
            baseline_step_millis: self.baseline_step_millis,
            training,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut tensors: Vec<(String, &[usize], &[f32])> = Vec::new();
        let push_params = |tensors: &mut Vec<_>, prefix: &str, params: &'_ ModelParameters<f32>| {
            for layer in params.layers() {
                tensors.push((format!("{prefix}{}.weight", layer.name), layer.weight_shape.clone(), layer.weight.clone()));
                tensors.push((format!("{prefix}{}.bias", layer.name), vec![layer.bias.len()], layer.bias.clone()));
            }
        };
        let mut owned: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        push_params(&mut owned, "", network.params());
        if let Some((state, _)) = self.training() {
            let (m, v) = state.moments();
            push_params(&mut owned, "adam.m.", m);
            push_params(&mut owned, "adam.v.", v);
        }
        tensors.extend(owned.iter().map(|(n, d, v)| (n.clone(), d.as_slice(), v.as_slice())));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, dims, values) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(origin, m);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(&bad)? != MAGIC {
            return Err(bad("not a framecast checkpoint".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u32().map_err(&bad)? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len).map_err(&bad)?).map_err(|e| bad(format!("header: {e}")))?;
        let count = r.u32().map_err(&bad)? as usize;
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16().map_err(&bad)? as usize;
            let name = std::str::from_utf8(r.take(name_len).map_err(&bad)?)
                .map_err(|_| bad("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1).map_err(&bad)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>().map_err(&bad)?;
            let len: usize = dims.iter().product();
            let raw = r.take(len * 4).map_err(&bad)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if tensors.insert(name.clone(), (dims, values)).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        if ModelKind::of(&header.model) != header.kind {
            return Err(bad(format!("header kind {:?} contradicts the model configuration", header.kind)));
        }
        let arch = Architecture::from_config(&header.model)?;
        let params = take_params(&arch, "", &mut tensors)?;
        let network = Network::new(header.model, params)?;
        let body = match header.training {
            None => Body::Model(network),
            Some(t) => {
                let m = take_params(&arch, "adam.m.", &mut tensors)?;
                let v = take_params(&arch, "adam.v.", &mut tensors)?;
                let mut rng = ChaCha8Rng::from_seed(decode_seed(&t.rng.seed).map_err(&bad)?);
                rng.set_stream(t.rng.stream);
                rng.set_word_pos(t.rng.word_pos.parse().map_err(|_| bad("rng word position".into()))?);
                let nan = f64::NAN;
                let loss = LossStats {
                    last: t.loss.last.unwrap_or(nan),
                    average: t.loss.average.unwrap_or(nan),
                    best: t.loss.best.unwrap_or(nan),
                };
                let state = TrainState::from_parts(t.step, network, m, v, rng, loss)?;
                Body::Training { state, meta: t.meta }
            }
        };
        if let Some(name) = tensors.keys().next() {
            return Err(bad(format!("unexpected tensor {name}")));
        }
        Ok(Self { baseline_step_millis: header.baseline_step_millis, body })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }

    /// Writes through a temporary file and a rename, so an interrupted save
    /// never leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp).at(&tmp)?;
            f.write_all(&self.to_bytes()).at(&tmp)?;
            f.sync_all().at(&tmp)?;
        }
        fs::rename(&tmp, path).at(path)
    }
}

fn decode_seed(s: &str) -> std::result::Result<[u8; 32], String> {
    let v = hex::decode(s).map_err(|e| format!("rng seed: {e}"))?;
    v.try_into().map_err(|_| "rng seed must be 32 bytes".to_string())
}

/// Removes and checks every tensor of one parameter set.
fn take_params(
    arch: &Architecture,
    prefix: &str,
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>,
) -> Result<ModelParameters<f32>> {
    let mut layers = Vec::new();
    for spec in arch.layers() {
        let mut take = |suffix: &str, shape: Vec<usize>| -> Result<Vec<f32>> {
            let name = format!("{prefix}{}.{suffix}", spec.name);
            let (dims, values) = tensors
                .remove(&name)
                .ok_or_else(|| framecast_core::Error::ShapeAudit(format!("missing tensor {name}")))?;
            if dims != shape {
                return Err(framecast_core::Error::ShapeAudit(format!(
                    "tensor {name} has shape {dims:?}, the configuration implies {shape:?}"
                ))
                .into());
            }
            Ok(values)
        };
        let weight = take("weight", spec.weight_shape())?;
        let bias = take("bias", vec![spec.bias_len()])?;
        layers.push(LayerParams { name: spec.name.clone(), weight_shape: spec.weight_shape(), weight, bias });
    }
    let params = ModelParameters::from_layers(layers);
    params.audit(arch)?;
    Ok(params)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }
}
