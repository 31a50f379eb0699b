//! Recognition and validation of every file the toolchain writes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::inference::Checkpoint;
use crate::ingest::{self, StepEvent};
use crate::primitives::{self, BoundaryAgreement, PrimitiveStats, RunReport};
use crate::simulate::{GroundTruth, TRUTH_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FileKind {
    Data,
    Segments,
    Loglik,
    Stats,
    Report,
    Checkpoint,
    Truth,
    Validation,
}

impl FileKind {
    pub const ALL: [FileKind; 8] = [
        FileKind::Data,
        FileKind::Segments,
        FileKind::Loglik,
        FileKind::Stats,
        FileKind::Report,
        FileKind::Checkpoint,
        FileKind::Truth,
        FileKind::Validation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FileKind::Data => "data",
            FileKind::Segments => "segments",
            FileKind::Loglik => "loglik",
            FileKind::Stats => "stats",
            FileKind::Report => "report",
            FileKind::Checkpoint => "checkpoint",
            FileKind::Truth => "truth",
            FileKind::Validation => "validation",
        }
    }

    pub fn parse(name: &str) -> Option<FileKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for FileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Guess the kind from the CSV header or the JSON shape.
pub fn detect_kind(path: impl AsRef<Path>) -> Result<FileKind> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: Value = serde_json::from_str(trimmed)?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Invalid("top-level JSON is not an object".into()))?;
        let kind = match obj.get("format").and_then(Value::as_str) {
            Some(crate::inference::CHECKPOINT_FORMAT) => FileKind::Checkpoint,
            Some(TRUTH_FORMAT) => FileKind::Truth,
            _ if obj.contains_key("recall") => FileKind::Validation,
            _ if obj.contains_key("primitive_sets") => FileKind::Report,
            _ if obj.contains_key("sets") => FileKind::Stats,
            _ => {
                return Err(Error::Invalid(format!(
                    "{}: unrecognized JSON file",
                    path.display()
                )))
            }
        };
        return Ok(kind);
    }
    let first = trimmed.lines().next().unwrap_or("").trim();
    let kind = match first {
        "start_s,end_s,label" => FileKind::Segments,
        "sweep,loglik" => FileKind::Loglik,
        h if h.starts_with("time_s,") => FileKind::Data,
        _ => {
            return Err(Error::Invalid(format!(
                "{}: unrecognized file",
                path.display()
            )))
        }
    };
    Ok(kind)
}

fn strict_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn check_pct(stats: &PrimitiveStats) -> Result<()> {
    let total: usize = stats.labels.iter().map(|l| l.count).sum();
    if total != stats.total || stats.sets != stats.labels.len() {
        return Err(Error::Invalid("stats counts are inconsistent".into()));
    }
    let pct: f64 = stats.labels.iter().map(|l| l.pct).sum();
    if (pct - 100.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("percentages sum to {pct}, not 100")));
    }
    for (i, l) in stats.labels.iter().enumerate() {
        if l.id != i {
            return Err(Error::Invalid(format!("label ids not sequential at {i}")));
        }
    }
    Ok(())
}

fn check_events(events: &[StepEvent]) -> Result<()> {
    for pair in events.windows(2) {
        if (pair[0].frame, pair[0].channel) > (pair[1].frame, pair[1].channel) {
            return Err(Error::Invalid("events are not sorted by frame".into()));
        }
    }
    if events
        .iter()
        .any(|e| e.channel == 0 || !e.time_s.is_finite())
    {
        return Err(Error::Invalid(
            "event with channel 0 or non-finite time".into(),
        ));
    }
    Ok(())
}

/// Validate `path` as `kind`; returns a one-line summary.
pub fn check_file(path: impl AsRef<Path>, kind: FileKind) -> Result<String> {
    let path = path.as_ref();
    match kind {
        FileKind::Data => {
            let seq = ingest::load_csv(path, None)?;
            Ok(format!(
                "data: T={} K={} d={} rate={} Hz",
                seq.len(),
                seq.num_channels(),
                seq.dim(),
                seq.sample_rate_hz()
            ))
        }
        FileKind::Segments => {
            let recs = primitives::read_segments_csv(path)?;
            let stats = primitives::stats_from_labels(recs.iter().map(|r| r.label))?;
            Ok(format!(
                "segments: {} primitives in {} sets",
                stats.total, stats.sets
            ))
        }
        FileKind::Loglik => {
            let mut rdr = csv::Reader::from_path(path)?;
            if rdr.headers()?.iter().collect::<Vec<_>>() != ["sweep", "loglik"] {
                return Err(Error::Invalid("expected header sweep,loglik".into()));
            }
            let mut n = 0usize;
            for rec in rdr.deserialize::<(usize, f64)>() {
                let (sweep, ll) = rec?;
                if sweep != n + 1 || !ll.is_finite() {
                    return Err(Error::Invalid(format!("bad row for sweep {sweep}")));
                }
                n += 1;
            }
            Ok(format!("loglik: {n} sweeps"))
        }
        FileKind::Stats => {
            let stats: PrimitiveStats = strict_json(path)?;
            check_pct(&stats)?;
            Ok(format!(
                "stats: {} sets, {} primitives",
                stats.sets, stats.total
            ))
        }
        FileKind::Report => {
            let r: RunReport = strict_json(path)?;
            if r.primitive_sets > r.total_primitives || r.d < 2 || !(r.t_seconds > 0.0) {
                return Err(Error::Invalid(format!("inconsistent report {r:?}")));
            }
            Ok(format!(
                "report: {} sets, {} primitives, {} s, d={}",
                r.primitive_sets, r.total_primitives, r.t_seconds, r.d
            ))
        }
        FileKind::Checkpoint => {
            let cp = Checkpoint::load(path)?;
            Ok(format!(
                "checkpoint: sweep {} of d={} data, T={}",
                cp.sweep, cp.dim, cp.frames
            ))
        }
        FileKind::Truth => {
            let truth: GroundTruth = strict_json(path)?;
            if truth.format != TRUTH_FORMAT || truth.version != 1 {
                return Err(Error::Invalid("not a version-1 truth file".into()));
            }
            check_events(&truth.events)?;
            if truth.change_frames.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(
                    "change frames not strictly increasing".into(),
                ));
            }
            Ok(format!("truth: {} events", truth.events.len()))
        }
        FileKind::Validation => {
            let v: BoundaryAgreement = strict_json(path)?;
            if v.matched.len() + v.missed.len() != v.total_events
                || !(0.0..=1.0).contains(&v.recall)
            {
                return Err(Error::Invalid("inconsistent boundary agreement".into()));
            }
            Ok(format!(
                "validation: recall {} over {} events",
                v.recall, v.total_events
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn names_round_trip() {
        for k in FileKind::ALL {
            assert_eq!(FileKind::parse(k.name()), Some(k));
        }
        assert_eq!(FileKind::parse("nope"), None);
    }

    #[test]
    fn detects_and_checks_small_files() {
        let f = tmp("start_s,end_s,label\n0,0.5,3\n0.6,1,1\n");
        assert_eq!(detect_kind(f.path()).unwrap(), FileKind::Segments);
        assert!(check_file(f.path(), FileKind::Segments)
            .unwrap()
            .contains("2 primitives"));

        let f = tmp("sweep,loglik\n1,-10.5\n2,-9\n");
        assert_eq!(detect_kind(f.path()).unwrap(), FileKind::Loglik);
        check_file(f.path(), FileKind::Loglik).unwrap();

        let f = tmp("sweep,loglik\n1,-10.5\n3,-9\n");
        assert!(check_file(f.path(), FileKind::Loglik).is_err());

        let f = tmp(
            r#"{"vehicle_id":null,"primitive_sets":2,"total_primitives":5,"T_seconds":10.0,"d":17}"#,
        );
        assert_eq!(detect_kind(f.path()).unwrap(), FileKind::Report);
        check_file(f.path(), FileKind::Report).unwrap();

        let f = tmp(
            r#"{"vehicle_id":null,"primitive_sets":2,"total_primitives":5,"T_seconds":10.0,"d":17,"x":1}"#,
        );
        assert!(check_file(f.path(), FileKind::Report).is_err());
    }

    #[test]
    fn stats_percentages_checked() {
        let good = primitives::stats_from_labels([1, 2, 1]).unwrap();
        let f = tmp(&serde_json::to_string(&good).unwrap());
        assert_eq!(detect_kind(f.path()).unwrap(), FileKind::Stats);
        check_file(f.path(), FileKind::Stats).unwrap();
        let mut bad = good;
        bad.labels[0].pct = 50.0;
        let f = tmp(&serde_json::to_string(&bad).unwrap());
        assert!(check_file(f.path(), FileKind::Stats).is_err());
    }

    #[test]
    fn unknown_files_rejected() {
        let f = tmp("a,b\n1,2\n");
        assert!(detect_kind(f.path()).is_err());
        let f = tmp("{\"hello\": 1}");
        assert!(detect_kind(f.path()).is_err());
    }
}
