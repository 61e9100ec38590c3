//! Episode serialization: one JSON document per line, versioned.
//!
//! Floats round-trip exactly (shortest-representation decimals), so a
//! write/read cycle is bit-faithful. Any malformed line fails the whole read
//! with its line number; partial datasets are never returned.

use super::{DatapipeError, Episode};
use serde::{Deserialize, Serialize};

pub const EPISODE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    format_version: u32,
    #[serde(flatten)]
    episode: Episode,
}

pub fn episodes_to_jsonl(episodes: &[Episode]) -> String {
    let mut out = String::new();
    for ep in episodes {
        let record = EpisodeRecord {
            format_version: EPISODE_FORMAT_VERSION,
            episode: ep.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("episodes serialize infallibly"));
        out.push('\n');
    }
    out
}

pub fn episodes_from_jsonl(data: &str) -> Result<Vec<Episode>, DatapipeError> {
    let mut episodes = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: EpisodeRecord = serde_json::from_str(line).map_err(|e| {
            DatapipeError::MalformedLine { line: line_no, message: e.to_string() }
        })?;
        if record.format_version != EPISODE_FORMAT_VERSION {
            return Err(DatapipeError::UnsupportedVersion {
                line: line_no,
                version: record.format_version,
            });
        }
        record.episode.validate().map_err(|e| DatapipeError::InvalidEpisode {
            line: line_no,
            reason: e.to_string(),
        })?;
        episodes.push(record.episode);
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_dataset;

    #[test]
    fn round_trip_is_lossless() {
        let eps = sample_dataset(19, 5);
        let text = episodes_to_jsonl(&eps);
        let back = episodes_from_jsonl(&text).unwrap();
        assert_eq!(eps, back);
        // byte-for-byte stable re-serialization
        assert_eq!(text, episodes_to_jsonl(&back));
    }

    #[test]
    fn empty_input_gives_empty_set() {
        assert!(episodes_from_jsonl("").unwrap().is_empty());
        assert!(episodes_from_jsonl("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let eps = sample_dataset(23, 2);
        let mut text = episodes_to_jsonl(&eps);
        text.push_str("{not json\n");
        match episodes_from_jsonl(&text) {
            Err(DatapipeError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let eps = sample_dataset(29, 1);
        let text = episodes_to_jsonl(&eps).replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            episodes_from_jsonl(&text),
            Err(DatapipeError::UnsupportedVersion { line: 1, version: 9 })
        ));
    }
}
