//! Channelized traffic logs: one ego channel `[a_x, v_x]` plus `K` target-car
//! channels `[Δd_x, Δv, Δd_y]`. A target channel with all three values equal to
//! zero is inactive (no car detected).

use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::regularize_covariance;
use crate::observations::Observations;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 10.0;
const RATE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSequence {
    sample_rate_hz: f64,
    timestamps: Vec<f64>,
    ego: Vec<[f64; 2]>,
    channels: Vec<Vec<[f64; 3]>>,
}

impl TrafficSequence {
    pub fn new(
        sample_rate_hz: f64,
        timestamps: Vec<f64>,
        ego: Vec<[f64; 2]>,
        channels: Vec<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let t = timestamps.len();
        if ego.len() != t {
            return Err(Error::Invalid(format!(
                "ego channel has {} frames, timestamps {t}",
                ego.len()
            )));
        }
        if let Some((k, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != t) {
            return Err(Error::Invalid(format!(
                "channel {} has {} frames, timestamps {t}",
                k + 1,
                c.len()
            )));
        }
        if let Some(i) = (1..t).find(|&i| !(timestamps[i] > timestamps[i - 1])) {
            return Err(Error::Invalid(format!(
                "timestamps not strictly increasing at frame {i}"
            )));
        }
        Ok(Self {
            sample_rate_hz,
            timestamps,
            ego,
            channels,
        })
    }

    /// Split a `(3K + 2) × T` observation matrix back into channels.
    pub fn from_observations(
        obs: &Observations,
        timestamps: Vec<f64>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        let d = obs.dim();
        if d < 2 || !(d - 2).is_multiple_of(3) {
            return Err(Error::Invalid(format!(
                "dimension {d} is not of the form 3K + 2"
            )));
        }
        if timestamps.len() != obs.len() {
            return Err(Error::Invalid(format!(
                "{} timestamps for {} frames",
                timestamps.len(),
                obs.len()
            )));
        }
        let k = (d - 2) / 3;
        let m = obs.matrix();
        let ego = (0..obs.len()).map(|t| [m[(0, t)], m[(1, t)]]).collect();
        let channels = (0..k)
            .map(|c| {
                let base = 2 + 3 * c;
                (0..obs.len())
                    .map(|t| [m[(base, t)], m[(base + 1, t)], m[(base + 2, t)]])
                    .collect()
            })
            .collect();
        Self::new(sample_rate_hz, timestamps, ego, channels)
    }

    /// Frames at `0, 1/rate, 2/rate, …`.
    pub fn uniform_timestamps(frames: usize, sample_rate_hz: f64) -> Vec<f64> {
        (0..frames).map(|t| t as f64 / sample_rate_hz).collect()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn ego(&self) -> &[[f64; 2]] {
        &self.ego
    }

    pub fn channels(&self) -> &[Vec<[f64; 3]>] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// `d = 3K + 2`.
    pub fn dim(&self) -> usize {
        3 * self.channels.len() + 2
    }

    /// Duration in seconds, `T / rate`.
    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Whether 0-based channel `k` carries a detection at frame `t`.
    pub fn channel_active(&self, k: usize, t: usize) -> bool {
        self.channels[k][t].iter().any(|v| *v != 0.0)
    }

    pub fn observations(&self) -> Observations {
        let t = self.len();
        let mut m = DMatrix::zeros(self.dim(), t);
        for i in 0..t {
            m[(0, i)] = self.ego[i][0];
            m[(1, i)] = self.ego[i][1];
            for (c, ch) in self.channels.iter().enumerate() {
                for j in 0..3 {
                    m[(2 + 3 * c + j, i)] = ch[i][j];
                }
            }
        }
        Observations::new(m)
    }

    pub fn header(num_channels: usize) -> Vec<String> {
        let mut h = vec!["time_s".to_string(), "ax".into(), "vx".into()];
        for k in 1..=num_channels {
            for v in ["dx", "dv", "dy"] {
                h.push(format!("ch{k}_{v}"));
            }
        }
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::header(self.num_channels()))?;
        for t in 0..self.len() {
            let mut row = vec![
                self.timestamps[t].to_string(),
                self.ego[t][0].to_string(),
                self.ego[t][1].to_string(),
            ];
            for ch in &self.channels {
                row.extend(ch[t].iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Options for `load_csv_with`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub expected_channels: Option<usize>,
    pub nominal_rate_hz: f64,
    /// Channel triples with every `|value| <= zero_epsilon` are stored as exact
    /// zeros. Default 0: only exact zeros mean "no detection".
    pub zero_epsilon: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            expected_channels: None,
            nominal_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            zero_epsilon: 0.0,
        }
    }
}

/// Load a traffic CSV, inferring `K` from the header.
pub fn load_csv(
    path: impl AsRef<Path>,
    expected_channels: Option<usize>,
) -> Result<TrafficSequence> {
    load_csv_with(
        path,
        &LoadOptions {
            expected_channels,
            ..LoadOptions::default()
        },
    )
}

pub fn load_csv_with(path: impl AsRef<Path>, options: &LoadOptions) -> Result<TrafficSequence> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, path, options)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    path: &Path,
    options: &LoadOptions,
) -> Result<TrafficSequence> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || !(header.len() - 3).is_multiple_of(3) {
        return Err(parse_err(
            1,
            format!("header has {} columns; expected 3 + 3K", header.len()),
        ));
    }
    let k = (header.len() - 3) / 3;
    let expected = TrafficSequence::header(k);
    if let Some((i, (got, want))) = header
        .iter()
        .zip(&expected)
        .enumerate()
        .find(|(_, (g, w))| g != w)
    {
        return Err(parse_err(
            1,
            format!("column {} is {got:?}, expected {want:?}", i + 1),
        ));
    }
    if let Some(want_k) = options.expected_channels {
        if want_k != k {
            return Err(parse_err(
                1,
                format!("header declares {k} channels, expected {want_k}"),
            ));
        }
    }

    let mut timestamps = Vec::new();
    let mut ego = Vec::new();
    let mut channels: Vec<Vec<[f64; 3]>> = vec![Vec::new(); k];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("{} columns, expected {}", record.len(), header.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(i, field)| {
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(
                            line,
                            format!("column {:?}: bad number {field:?}", header[i]),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(&prev) = timestamps.last() {
            if !(values[0] > prev) {
                return Err(parse_err(
                    line,
                    format!(
                        "timestamp {} does not increase (previous {prev})",
                        values[0]
                    ),
                ));
            }
        }
        timestamps.push(values[0]);
        ego.push([values[1], values[2]]);
        for (c, ch) in channels.iter_mut().enumerate() {
            let base = 3 + 3 * c;
            let mut triple = [values[base], values[base + 1], values[base + 2]];
            if triple.iter().all(|v| v.abs() <= options.zero_epsilon) {
                triple = [0.0; 3];
            }
            ch.push(triple);
        }
    }
    if timestamps.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }

    let mut rate = options.nominal_rate_hz;
    if timestamps.len() >= 2 {
        let span = timestamps[timestamps.len() - 1] - timestamps[0];
        let inferred = (timestamps.len() - 1) as f64 / span;
        if ((inferred - options.nominal_rate_hz) / options.nominal_rate_hz).abs() > RATE_TOLERANCE {
            warn!(
                "{}: sample rate {inferred:.4} Hz differs from nominal {} Hz by more than 1%",
                path.display(),
                options.nominal_rate_hz
            );
        }
        rate = inferred;
    }
    TrafficSequence::new(rate, timestamps, ego, channels)
}

/// Remove target channels that are inactive in every frame.
pub fn drop_inactive_channels(seq: &TrafficSequence) -> TrafficSequence {
    let channels = seq
        .channels
        .iter()
        .filter(|ch| ch.iter().any(|f| f.iter().any(|v| *v != 0.0)))
        .cloned()
        .collect();
    TrafficSequence {
        channels,
        ..seq.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Appearance,
    Disappearance,
}

/// Appearance or disappearance of a target car in one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// 1-based target channel (channel 0 is the ego vehicle).
    pub channel: usize,
    /// First frame of the new activity status.
    pub frame: usize,
    pub time_s: f64,
    pub kind: EventKind,
}

/// Every inactive↔active switch of a target channel, ordered by time then channel.
pub fn detect_step_events(seq: &TrafficSequence) -> Vec<StepEvent> {
    let mut events = Vec::new();
    for k in 0..seq.num_channels() {
        for t in 1..seq.len() {
            let (before, now) = (seq.channel_active(k, t - 1), seq.channel_active(k, t));
            if before != now {
                events.push(StepEvent {
                    channel: k + 1,
                    frame: t,
                    time_s: seq.timestamps[t],
                    kind: if now {
                        EventKind::Appearance
                    } else {
                        EventKind::Disappearance
                    },
                });
            }
        }
    }
    events.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.channel.cmp(&b.channel)));
    events
}

/// Unbiased covariance of the full `d`-dimensional sequence (zero-filled
/// frames included), regularized when rank-deficient.
pub fn empirical_covariance(seq: &TrafficSequence) -> Result<DMatrix<f64>> {
    Ok(regularize_covariance(
        &seq.observations().sample_covariance()?,
    ))
}
