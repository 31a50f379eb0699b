//! Traffic primitives: maximal constant-label runs of a state sequence, their
//! statistics, and agreement of their boundaries with channel step events.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{GibbsChain, StateSequence};
use crate::ingest::{StepEvent, TrafficSequence};

/// Default boundary-matching tolerance in seconds.
pub const DEFAULT_TOLERANCE_S: f64 = 0.5;

/// Slack for floating-point time comparisons.
const TIME_EPS: f64 = 1e-9;

/// A maximal run of one label over frames `start_frame..=end_frame`.
/// `start_s`/`end_s` are the timestamps of the first and last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub label: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl PrimitiveSegment {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn states_to_segments(
    states: &StateSequence,
    timestamps: &[f64],
) -> Result<Vec<PrimitiveSegment>> {
    let labels = states.labels();
    if labels.is_empty() {
        return Err(Error::Invalid(
            "cannot segment an empty state sequence".into(),
        ));
    }
    if labels.len() != timestamps.len() {
        return Err(Error::Invalid(format!(
            "{} labels for {} timestamps",
            labels.len(),
            timestamps.len()
        )));
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            segments.push(PrimitiveSegment {
                start_frame: start,
                end_frame: t - 1,
                label: labels[start],
                start_s: timestamps[start],
                end_s: timestamps[t - 1],
            });
            start = t;
        }
    }
    Ok(segments)
}

/// Per-frame labels covered by `segments`.
pub fn expand_segments(segments: &[PrimitiveSegment]) -> Vec<usize> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.len()))
        .collect()
}

/// Check that segments tile `0..frames` with distinct adjacent labels.
pub fn check_tiling(segments: &[PrimitiveSegment], frames: usize) -> Result<()> {
    let mut next = 0;
    for (i, s) in segments.iter().enumerate() {
        if s.start_frame != next || s.end_frame < s.start_frame {
            return Err(Error::Invalid(format!(
                "segment {i} covers frames {}..={}, expected to start at {next}",
                s.start_frame, s.end_frame
            )));
        }
        if i > 0 && segments[i - 1].label == s.label {
            return Err(Error::Invalid(format!(
                "segments {} and {i} share label {}",
                i - 1,
                s.label
            )));
        }
        next = s.end_frame + 1;
    }
    if next != frames {
        return Err(Error::Invalid(format!(
            "segments cover {next} frames, expected {frames}"
        )));
    }
    Ok(())
}

/// Share of one primitive set. `id` ranks sets by descending count
/// (ties by raw label); `label` is the raw sampler label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStat {
    pub id: usize,
    pub label: usize,
    pub count: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveStats {
    pub labels: Vec<LabelStat>,
    pub sets: usize,
    pub total: usize,
}

pub fn primitive_stats(segments: &[PrimitiveSegment]) -> Result<PrimitiveStats> {
    stats_from_labels(segments.iter().map(|s| s.label))
}

/// Statistics over the labels of consecutive primitives.
pub fn stats_from_labels(labels: impl IntoIterator<Item = usize>) -> Result<PrimitiveStats> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0;
    for label in labels {
        *counts.entry(label).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Invalid("no segments".into()));
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let labels: Vec<LabelStat> = ranked
        .into_iter()
        .enumerate()
        .map(|(id, (label, count))| LabelStat {
            id,
            label,
            count,
            pct: 100.0 * count as f64 / total as f64,
        })
        .collect();
    Ok(PrimitiveStats {
        sets: labels.len(),
        labels,
        total,
    })
}

/// Times at which a new segment starts (the first segment excluded).
pub fn segment_boundaries(segments: &[PrimitiveSegment]) -> Vec<f64> {
    segments.iter().skip(1).map(|s| s.start_s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedEvent {
    pub event: StepEvent,
    pub boundary_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAgreement {
    pub tol_s: f64,
    pub recall: f64,
    pub total_events: usize,
    pub matched: Vec<MatchedEvent>,
    pub missed: Vec<StepEvent>,
}

/// Match events to segment boundaries within `±tol_s`, greedily closest pair
/// first, each boundary used at most once. Recall is 1 when there are no events.
pub fn boundary_agreement(
    segments: &[PrimitiveSegment],
    events: &[StepEvent],
    tol_s: f64,
) -> Result<BoundaryAgreement> {
    if !(tol_s >= 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be >= 0, got {tol_s}"
        )));
    }
    let boundaries = segment_boundaries(segments);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (e, ev) in events.iter().enumerate() {
        for (b, &t) in boundaries.iter().enumerate() {
            let dist = (ev.time_s - t).abs();
            if dist <= tol_s + TIME_EPS {
                pairs.push((dist, e, b));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut event_match: Vec<Option<usize>> = vec![None; events.len()];
    let mut boundary_used = vec![false; boundaries.len()];
    for (_, e, b) in pairs {
        if event_match[e].is_none() && !boundary_used[b] {
            event_match[e] = Some(b);
            boundary_used[b] = true;
        }
    }
    let mut matched = Vec::new();
    let mut missed = Vec::new();
    for (ev, m) in events.iter().zip(event_match) {
        match m {
            Some(b) => matched.push(MatchedEvent {
                event: ev.clone(),
                boundary_s: boundaries[b],
            }),
            None => missed.push(ev.clone()),
        }
    }
    let recall = if events.is_empty() {
        1.0
    } else {
        matched.len() as f64 / events.len() as f64
    };
    Ok(BoundaryAgreement {
        tol_s,
        recall,
        total_events: events.len(),
        matched,
        missed,
    })
}

/// One row in the per-vehicle extraction summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub vehicle_id: Option<String>,
    pub primitive_sets: usize,
    pub total_primitives: usize,
    #[serde(rename = "T_seconds")]
    pub t_seconds: f64,
    pub d: usize,
}

pub fn report_from_segments(
    segments: &[PrimitiveSegment],
    seq: &TrafficSequence,
    vehicle_id: Option<String>,
) -> Result<RunReport> {
    let stats = primitive_stats(segments)?;
    Ok(RunReport {
        vehicle_id,
        primitive_sets: stats.sets,
        total_primitives: stats.total,
        t_seconds: seq.duration_s(),
        d: seq.dim(),
    })
}

/// Summary computed from the chain's MAP sample.
pub fn summarize_run(chain: &GibbsChain, seq: &TrafficSequence) -> Result<RunReport> {
    let best = chain
        .map_sample()
        .ok_or_else(|| Error::Invalid("chain has no retained samples".into()))?;
    let segments = states_to_segments(&best.states, seq.timestamps())?;
    report_from_segments(&segments, seq, None)
}

/// Fraction of frames whose estimated label disagrees with the truth after the
/// best one-to-one relabelling (Hungarian assignment on the confusion matrix).
pub fn matched_hamming_error(truth: &[usize], estimate: &[usize]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::Invalid(format!(
            "label sequences differ in length: {} vs {}",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let nt = truth.iter().max().unwrap() + 1;
    let ne = estimate.iter().max().unwrap() + 1;
    let mut confusion = vec![vec![0i64; ne]; nt];
    for (&a, &b) in truth.iter().zip(estimate) {
        confusion[a][b] += 1;
    }
    let n = nt.max(ne);
    let weight = |i: usize, j: usize| if i < nt && j < ne { confusion[i][j] } else { 0 };
    let assignment = max_weight_assignment(n, weight);
    let agree: i64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| weight(i, j))
        .sum();
    Ok(1.0 - agree as f64 / truth.len() as f64)
}

/// Hungarian algorithm with potentials on an `n×n` weight matrix; returns the
/// column assigned to each row.
fn max_weight_assignment(n: usize, weight: impl Fn(usize, usize) -> i64) -> Vec<usize> {
    // 1-based arrays; column 0 is the virtual start.
    let cost = |i: usize, j: usize| -weight(i - 1, j - 1);
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Segments CSV: `start_s,end_s,label`.
pub fn write_segments_csv<W: std::io::Write>(
    segments: &[PrimitiveSegment],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start_s", "end_s", "label"])?;
    for s in segments {
        w.write_record([
            s.start_s.to_string(),
            s.end_s.to_string(),
            s.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A row of the segments CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start_s: f64,
    pub end_s: f64,
    pub label: usize,
}

pub fn read_segments_csv(path: impl AsRef<Path>) -> Result<Vec<SegmentRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["start_s", "end_s", "label"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header start_s,end_s,label, got {}",
                header.join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<SegmentRecord>() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !(rec.start_s.is_finite() && rec.end_s.is_finite() && rec.end_s >= rec.start_s) {
            return Err(Error::Invalid(format!("bad segment times {rec:?}")));
        }
        if let Some(prev) = out.last().map(|p: &SegmentRecord| p.end_s) {
            if !(rec.start_s > prev) {
                return Err(Error::Invalid(format!(
                    "segment starting at {} overlaps previous end {prev}",
                    rec.start_s
                )));
            }
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{}: no segments", path.display())));
    }
    Ok(out)
}

fn frame_at(timestamps: &[f64], time_s: f64) -> Result<usize> {
    let idx = timestamps.partition_point(|t| *t < time_s - TIME_EPS);
    match timestamps.get(idx) {
        Some(t) if (t - time_s).abs() <= TIME_EPS.max(1e-9 * t.abs()) => Ok(idx),
        _ => Err(Error::Invalid(format!(
            "segment time {time_s} does not coincide with a frame timestamp"
        ))),
    }
}

/// Attach frame indices to CSV segment rows using the data's timestamps and
/// check that they tile the whole sequence.
pub fn segments_from_records(
    records: &[SegmentRecord],
    timestamps: &[f64],
) -> Result<Vec<PrimitiveSegment>> {
    let segments = records
        .iter()
        .map(|r| {
            Ok(PrimitiveSegment {
                start_frame: frame_at(timestamps, r.start_s)?,
                end_frame: frame_at(timestamps, r.end_s)?,
                label: r.label,
                start_s: r.start_s,
                end_s: r.end_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_tiling(&segments, timestamps.len())?;
    Ok(segments)
}
