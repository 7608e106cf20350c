use std::path::PathBuf;

use crate::detector::Detection;
use crate::error::{Error, Result};

/// One JSON object per detection, newline-terminated.
pub fn detections_to_jsonl(dets: &[Detection]) -> Result<String> {
    let mut out = String::new();
    for d in dets {
        let line = serde_json::to_string(d)
            .map_err(|e| Error::invalid(format!("serializing detection: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_detections_jsonl(text: &str) -> Result<Vec<Detection>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Decode(format!("detection line {}: {e}", i + 1)))
        })
        .collect()
}

/// Extended M3U listing the clips in playback order.
pub fn playlist_m3u(paths: &[PathBuf]) -> String {
    let mut out = String::from("#EXTM3U\n");
    for p in paths {
        out.push_str(&p.display().to_string());
        out.push('\n');
    }
    out
}
