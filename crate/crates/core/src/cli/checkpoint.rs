//! Versioned JSON checkpoints for tree pairs.
//!
//! Every parameter is stored twice: as a JSON number for people and as a C99
//! hexadecimal float string (`0x1.8p+1`) that loads back bit-exactly. Loading
//! reads the hex strings only.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderPair, TrainConfig};
use crate::error::{Error, Result};
use crate::soft_tree::{GatingSplit, LeafKind, LeafModel, SoftTree};

pub const FORMAT_VERSION: u64 = 1;

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;

/// Shortest C99 hex-float rendering of a finite `f64`.
pub fn to_hex_float(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & MANTISSA_MASK;
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - 1023) };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses the output of [`to_hex_float`].
pub fn from_hex_float(s: &str) -> Option<f64> {
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (significand, exp) = rest.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = significand.split_once('.').unwrap_or((significand, ""));
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let mantissa = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let magnitude = match lead {
        "1" if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << MANTISSA_BITS) | mantissa,
        "0" if mantissa == 0 && exp == 0 => 0,
        "0" if exp == -1022 => mantissa,
        _ => return None,
    };
    Some(f64::from_bits(magnitude | (u64::from(negative) << 63)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum NodePayload {
    Split {
        weights: Vec<f64>,
        weights_hex: Vec<String>,
    },
    Leaf {
        model: LeafKind,
        values: Vec<f64>,
        values_hex: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TreePayload {
    input_dim: usize,
    output_dim: usize,
    depth: usize,
    nodes: Vec<NodePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u64,
    leaf_kind: LeafKind,
    seed: u64,
    config: TrainConfig,
    encoder: TreePayload,
    decoder: TreePayload,
}

fn hex_values(values: &[f64]) -> Vec<String> {
    values.iter().map(|&v| to_hex_float(v)).collect()
}

fn tree_payload(tree: &SoftTree) -> TreePayload {
    let splits = tree.splits().iter().map(|s| NodePayload::Split {
        weights: s.weights().to_vec(),
        weights_hex: hex_values(s.weights()),
    });
    let leaves = tree.leaves().iter().map(|l| NodePayload::Leaf {
        model: l.kind(),
        values: l.params().to_vec(),
        values_hex: hex_values(l.params()),
    });
    TreePayload {
        input_dim: tree.input_dim(),
        output_dim: tree.output_dim(),
        depth: tree.depth(),
        nodes: splits.chain(leaves).collect(),
    }
}

fn decode_values(decimal: &[f64], hex: &[String], what: &str) -> Result<Vec<f64>> {
    if decimal.len() != hex.len() {
        return Err(Error::Corrupt(format!(
            "{what}: {} decimal values but {} hex values",
            decimal.len(),
            hex.len()
        )));
    }
    hex.iter()
        .map(|h| from_hex_float(h).ok_or_else(|| Error::Corrupt(format!("{what}: bad hex float `{h}`"))))
        .collect()
}

fn tree_from_payload(payload: TreePayload, kind: LeafKind, name: &str) -> Result<SoftTree> {
    let TreePayload {
        input_dim,
        output_dim,
        depth,
        nodes,
    } = payload;
    if depth == 0 || depth >= usize::BITS as usize {
        return Err(Error::Corrupt(format!("{name}: invalid depth {depth}")));
    }
    let expected = (1usize << depth) - 1;
    if nodes.len() != expected {
        return Err(Error::Corrupt(format!(
            "{name}: depth {depth} needs {expected} nodes, found {}",
            nodes.len()
        )));
    }
    let n_internal = (1usize << (depth - 1)) - 1;
    let mut splits = Vec::with_capacity(n_internal);
    let mut leaves = Vec::with_capacity(n_internal + 1);
    for (m, node) in nodes.into_iter().enumerate() {
        let what = format!("{name} node {m}");
        match node {
            NodePayload::Split { weights, weights_hex } if m < n_internal => {
                splits.push(GatingSplit::new(decode_values(&weights, &weights_hex, &what)?));
            }
            NodePayload::Leaf {
                model,
                values,
                values_hex,
            } if m >= n_internal => {
                if model != kind {
                    return Err(Error::Corrupt(format!(
                        "{what}: {model} leaf in a {kind}-leaf checkpoint"
                    )));
                }
                let params = decode_values(&values, &values_hex, &what)?;
                leaves.push(match model {
                    LeafKind::Constant => LeafModel::Constant { response: params },
                    LeafKind::Linear => LeafModel::Linear { map: params },
                });
            }
            _ => return Err(Error::Corrupt(format!("{what}: node type out of level order"))),
        }
    }
    SoftTree::from_parts(input_dim, output_dim, splits, leaves).map_err(|e| Error::Corrupt(format!("{name}: {e}")))
}

/// A pair together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub pair: AutoencoderPair,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format_version: FORMAT_VERSION,
            leaf_kind: self.pair.encoder.leaf_kind(),
            seed: self.config.seed,
            config: self.config.clone(),
            encoder: tree_payload(&self.pair.encoder),
            decoder: tree_payload(&self.pair.decoder),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Structural(format!("cannot serialise checkpoint: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("not valid JSON: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let file: CheckpointFile =
            serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("schema mismatch: {e}")))?;
        if file.config.leaf_kind != file.leaf_kind {
            return Err(Error::Corrupt(
                "config leaf kind disagrees with checkpoint leaf kind".into(),
            ));
        }
        if file.config.seed != file.seed {
            return Err(Error::Corrupt("config seed disagrees with checkpoint seed".into()));
        }
        let encoder = tree_from_payload(file.encoder, file.leaf_kind, "encoder")?;
        let decoder = tree_from_payload(file.decoder, file.leaf_kind, "decoder")?;
        let pair = AutoencoderPair::new(encoder, decoder).map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(Self {
            pair,
            config: file.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_model(pair: &AutoencoderPair, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint {
        pair: pair.clone(),
        config: cfg.clone(),
    }
    .save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AutoencoderPair> {
    Checkpoint::load(path).map(|c| c.pair)
}
