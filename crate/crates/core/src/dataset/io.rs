//! Line-oriented dataset files.
//!
//! ```text
//! {"format_version":1,"d":64,"T":25,"dt_ms":1.0,"categories":[0,1,...],"samples":N}
//! {"label_index":0,"spikes":[[3,7,19],[],...]}
//! ... N sample records, one per line, each terminated by '\n'
//! ```
//!
//! `spikes` holds one ascending list of spike time indices per channel.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CategoryId, DatasetError, LabeledDataset, LabeledSample};
use crate::fsutil::write_atomic;
use crate::spikes::SpikeTrain;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u64,
    d: usize,
    #[serde(rename = "T")]
    steps: usize,
    dt_ms: f64,
    categories: Vec<CategoryId>,
    samples: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    label_index: usize,
    spikes: Vec<Vec<usize>>,
}

pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        d: ds.channels(),
        steps: ds.steps(),
        dt_ms: ds.dt_ms(),
        categories: ds.categories().to_vec(),
        samples: ds.len(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (sample, &label_index) in ds.samples().iter().zip(ds.label_indices()) {
        let record = SampleRecord {
            label_index,
            spikes: sample
                .channels
                .iter()
                .map(|c| c.spike_times().collect())
                .collect(),
        };
        serde_json::to_writer(&mut out, &record).expect("sample serializes");
        out.push(b'\n');
    }
    out
}

/// Hex SHA-256 of the canonical encoding.
pub fn fingerprint(ds: &LabeledDataset) -> String {
    hex::encode(Sha256::digest(encode_dataset(ds)))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset, DatasetError> {
    let mut lines = Lines { bytes, pos: 0 };
    let (offset, line, terminated) = lines.next().ok_or(DatasetError::MalformedHeader {
        offset: 0,
        msg: "empty file".into(),
    })?;
    if !terminated {
        return Err(DatasetError::MalformedHeader {
            offset,
            msg: "header record is not newline-terminated".into(),
        });
    }
    let raw: serde_json::Value =
        serde_json::from_slice(line).map_err(|e| DatasetError::MalformedHeader {
            offset,
            msg: e.to_string(),
        })?;
    match raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(FORMAT_VERSION) => {}
        Some(found) => {
            return Err(DatasetError::VersionMismatch {
                offset,
                found,
                expected: FORMAT_VERSION,
            })
        }
        None => {
            return Err(DatasetError::MalformedHeader {
                offset,
                msg: "missing or non-integer format_version".into(),
            })
        }
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| DatasetError::MalformedHeader {
            offset,
            msg: e.to_string(),
        })?;
    if header.categories.is_empty() && header.samples > 0 {
        return Err(DatasetError::MalformedHeader {
            offset,
            msg: "samples present but no categories".into(),
        });
    }

    let mut samples = Vec::with_capacity(header.samples);
    for k in 0..header.samples {
        let Some((offset, line, terminated)) = lines.next() else {
            return Err(DatasetError::Truncated {
                offset: bytes.len(),
                msg: format!("expected {} samples, found {k}", header.samples),
            });
        };
        if !terminated {
            return Err(DatasetError::Truncated {
                offset,
                msg: format!("sample {k} record is cut off"),
            });
        }
        samples.push(parse_sample(line, offset, &header)?);
    }
    if let Some((offset, _, _)) = lines.next() {
        return Err(DatasetError::MalformedSample {
            offset,
            msg: format!("trailing data after {} declared samples", header.samples),
        });
    }
    LabeledDataset::new(
        samples,
        header.categories,
        header.d,
        header.steps,
        header.dt_ms,
    )
}

fn parse_sample(
    line: &[u8],
    offset: usize,
    header: &Header,
) -> Result<LabeledSample, DatasetError> {
    let bad = |msg: String| DatasetError::MalformedSample { offset, msg };
    let record: SampleRecord = serde_json::from_slice(line).map_err(|e| bad(e.to_string()))?;
    let label = *header
        .categories
        .get(record.label_index)
        .ok_or_else(|| bad(format!("label_index {} out of range", record.label_index)))?;
    if record.spikes.len() != header.d {
        return Err(bad(format!(
            "{} channels, header declares d = {}",
            record.spikes.len(),
            header.d
        )));
    }
    let channels = record
        .spikes
        .iter()
        .enumerate()
        .map(|(k, times)| {
            if times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad(format!(
                    "channel {k} spike times are not strictly ascending"
                )));
            }
            SpikeTrain::from_spike_times(header.steps, times).ok_or_else(|| {
                bad(format!(
                    "channel {k} has a spike time >= T = {}",
                    header.steps
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledSample { channels, label })
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Iterator for Lines<'a> {
    /// `(byte offset, line without '\n', newline-terminated)`
    type Item = (usize, &'a [u8], bool);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.bytes[start..];
        match rest.iter().position(|&b| b == b'\n') {
            Some(n) => {
                self.pos = start + n + 1;
                Some((start, &rest[..n], true))
            }
            None => {
                self.pos = self.bytes.len();
                Some((start, rest, false))
            }
        }
    }
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), DatasetError> {
    write_atomic(path, &encode_dataset(ds)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_family, GeneratorConfig};

    fn two_samples() -> LabeledDataset {
        let a = LabeledSample {
            channels: vec![
                SpikeTrain::from_spike_times(6, &[0, 5]).unwrap(),
                SpikeTrain::zeros(6),
            ],
            label: 10,
        };
        let b = LabeledSample {
            channels: vec![
                SpikeTrain::from_spike_times(6, &[2]).unwrap(),
                SpikeTrain::from_spike_times(6, &[1, 2, 3]).unwrap(),
            ],
            label: 20,
        };
        LabeledDataset::new(vec![a, b], vec![20, 10], 2, 6, 1.5).unwrap()
    }

    #[test]
    fn round_trip_small() {
        let ds = two_samples();
        let bytes = encode_dataset(&ds);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with(
            r#"{"format_version":1,"d":2,"T":6,"dt_ms":1.5,"categories":[20,10],"samples":2}"#
        ));
        assert!(text.contains(r#"{"label_index":1,"spikes":[[0,5],[]]}"#));
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ds");
        let ds = two_samples();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        assert!(matches!(
            load_dataset(&dir.path().join("missing.ds")),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn full_family_preserves_every_spike() {
        let fam = generate_family(&GeneratorConfig::default(), &[5, 10, 15, 20]).unwrap();
        let last = &fam.stages()[3];
        let back = decode_dataset(&encode_dataset(last)).unwrap();
        assert_eq!(back.len(), 4000);
        for (a, b) in last.samples().iter().zip(back.samples()) {
            assert_eq!(a.label, b.label);
            for (ca, cb) in a.channels.iter().zip(&b.channels) {
                assert!(ca.spike_times().eq(cb.spike_times()));
            }
        }
        assert_eq!(&back, last);
    }

    #[test]
    fn tampered_channel_count() {
        let text = String::from_utf8(encode_dataset(&two_samples())).unwrap();
        let bad = text.replacen(r#""d":2"#, r#""d":3"#, 1);
        let header_len = text.find('\n').unwrap() + 1;
        match decode_dataset(bad.as_bytes()) {
            Err(DatasetError::MalformedSample { offset, .. }) => assert_eq!(offset, header_len),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_corruption_errors() {
        let bytes = encode_dataset(&two_samples());
        let text = String::from_utf8(bytes.clone()).unwrap();

        let versioned = text.replacen(r#""format_version":1"#, r#""format_version":2"#, 1);
        assert!(matches!(
            decode_dataset(versioned.as_bytes()),
            Err(DatasetError::VersionMismatch {
                found: 2,
                offset: 0,
                ..
            })
        ));

        assert!(matches!(
            decode_dataset(b"{not json\n"),
            Err(DatasetError::MalformedHeader { offset: 0, .. })
        ));
        assert!(matches!(
            decode_dataset(b""),
            Err(DatasetError::MalformedHeader { .. })
        ));

        let cut = &bytes[..bytes.len() - 5];
        let second = text.find('\n').unwrap() + 1;
        let third = second + text[second..].find('\n').unwrap() + 1;
        match decode_dataset(cut) {
            Err(DatasetError::Truncated { offset, .. }) => assert_eq!(offset, third),
            other => panic!("unexpected {other:?}"),
        }
        match decode_dataset(&bytes[..third]) {
            Err(DatasetError::Truncated { offset, .. }) => assert_eq!(offset, third),
            other => panic!("unexpected {other:?}"),
        }

        let out_of_range = text.replacen("[1,2,3]", "[1,2,6]", 1);
        assert!(matches!(
            decode_dataset(out_of_range.as_bytes()),
            Err(DatasetError::MalformedSample { .. })
        ));
        let unsorted = text.replacen("[1,2,3]", "[2,1,3]", 1);
        assert!(matches!(
            decode_dataset(unsorted.as_bytes()),
            Err(DatasetError::MalformedSample { .. })
        ));
        let mut trailing = bytes.clone();
        trailing.extend_from_slice(b"{}\n");
        assert!(matches!(
            decode_dataset(&trailing),
            Err(DatasetError::MalformedSample { .. })
        ));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let ds = two_samples();
        assert_eq!(fingerprint(&ds), fingerprint(&ds.clone()));
        assert_eq!(fingerprint(&ds).len(), 64);
        let other = LabeledDataset::new(
            ds.samples()[..1].to_vec(),
            ds.categories().to_vec(),
            2,
            6,
            1.5,
        )
        .unwrap();
        assert_ne!(fingerprint(&ds), fingerprint(&other));
    }
}
