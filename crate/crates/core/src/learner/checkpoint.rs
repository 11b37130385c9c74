//! Network checkpoint files.
//!
//! ```text
//! spikegrow-network\n
//! {"format_version":1, "d":.., "lif":{..}, "neurons":n, "frozen_prefix":k,
//!  "categories":[..], "lineage":[..], "sections":[{"name","bytes","sha256"}, ..]}\n
//! <hidden section: n x (w_1..w_d, v) as little-endian f64>
//! <beta section: n x m row-major little-endian f64>
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HiddenNeuron, LearnerError, LineageRecord, Network};
use crate::dataset::CategoryId;
use crate::fsutil::write_atomic;
use crate::lif::LifParams;
use crate::readout::OutputWeights;

pub const CHECKPOINT_VERSION: u64 = 1;
const MAGIC: &[u8] = b"spikegrow-network\n";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u64,
    d: usize,
    lif: LifParams,
    neurons: usize,
    frozen_prefix: usize,
    categories: Vec<CategoryId>,
    lineage: Vec<LineageRecord>,
    sections: Vec<Section>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    name: String,
    bytes: usize,
    sha256: String,
}

fn f64_block(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(f64::to_le_bytes).collect()
}

fn section(name: &str, data: &[u8]) -> Section {
    Section {
        name: name.into(),
        bytes: data.len(),
        sha256: hex::encode(Sha256::digest(data)),
    }
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let hidden = f64_block(
        net.hidden
            .iter()
            .flat_map(|n| n.w.iter().copied().chain([n.v])),
    );
    let beta = net.beta.matrix();
    let beta_bytes =
        f64_block((0..beta.nrows()).flat_map(|i| (0..beta.ncols()).map(move |q| beta[(i, q)])));
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        d: net.d,
        lif: net.lif,
        neurons: net.hidden.len(),
        frozen_prefix: net.frozen_prefix,
        categories: net.categories.clone(),
        lineage: net.lineage.clone(),
        sections: vec![section("hidden", &hidden), section("beta", &beta_bytes)],
    };
    let mut out = MAGIC.to_vec();
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&hidden);
    out.extend_from_slice(&beta_bytes);
    out
}

fn malformed(msg: impl Into<String>) -> LearnerError {
    LearnerError::MalformedCheckpoint(msg.into())
}

pub fn decode_network(bytes: &[u8]) -> Result<Network, LearnerError> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| malformed("missing magic line"))?;
    let eol = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("header is not newline-terminated"))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&rest[..eol]).map_err(|e| malformed(format!("header: {e}")))?;
    match raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(CHECKPOINT_VERSION) => {}
        Some(found) => {
            return Err(LearnerError::VersionMismatch {
                found,
                expected: CHECKPOINT_VERSION,
            })
        }
        None => return Err(malformed("missing format_version")),
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| malformed(format!("header: {e}")))?;
    let n = header.neurons;
    let m = header.categories.len();
    let expected = [("hidden", n * (header.d + 1) * 8), ("beta", n * m * 8)];
    if header.sections.len() != expected.len() {
        return Err(malformed(format!("expected {} sections", expected.len())));
    }

    let mut body = &rest[eol + 1..];
    let mut blocks = Vec::with_capacity(expected.len());
    for (sec, (name, len)) in header.sections.iter().zip(expected) {
        if sec.name != name || sec.bytes != len {
            return Err(malformed(format!(
                "section `{}` ({} bytes) where `{name}` ({len} bytes) was expected",
                sec.name, sec.bytes
            )));
        }
        if body.len() < len {
            return Err(malformed(format!("section `{name}` is truncated")));
        }
        let (data, tail) = body.split_at(len);
        if hex::encode(Sha256::digest(data)) != sec.sha256 {
            return Err(LearnerError::Checksum {
                section: name.into(),
            });
        }
        blocks.push(data);
        body = tail;
    }
    if !body.is_empty() {
        return Err(malformed(format!("{} trailing bytes", body.len())));
    }

    let read = |data: &[u8]| -> Vec<f64> {
        data.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect()
    };
    let hidden_values = read(blocks[0]);
    let hidden = hidden_values
        .chunks_exact(header.d + 1)
        .map(|c| HiddenNeuron {
            w: c[..header.d].to_vec(),
            v: c[header.d],
        })
        .collect();
    let beta = OutputWeights::from_matrix(DMatrix::from_row_slice(n, m, &read(blocks[1])));
    Network::new(
        header.d,
        header.lif,
        hidden,
        header.frozen_prefix,
        beta,
        header.categories,
        header.lineage,
    )
}

pub fn save_network(net: &Network, path: &Path) -> Result<(), LearnerError> {
    write_atomic(path, &encode_network(net)).map_err(|source| LearnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_network(path: &Path) -> Result<Network, LearnerError> {
    let bytes = std::fs::read(path).map_err(|source| LearnerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_network(&bytes)
}
