//! Synthetic data: ancestral sampling from a learned model, binary cut-in /
//! cut-out scenarios with known events, and exhaustive path enumeration.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{emission_loglik, sample_log_categorical, StateSequence};
use crate::ingest::{detect_step_events, EventKind, StepEvent, TrafficSequence};
use crate::linalg;
use crate::model::{EmissionParams, ModelState};
use crate::observations::Observations;

/// Draw `T` frames by ancestral sampling; returns observations and true states.
pub fn sample_hmm<R: Rng + ?Sized>(
    model: &ModelState,
    frames: usize,
    rng: &mut R,
) -> Result<(Observations, StateSequence)> {
    model.validate()?;
    let d = model.dim();
    let factors = model
        .theta
        .iter()
        .map(|p| Ok(linalg::cholesky(p.sigma())?.unpack()))
        .collect::<Result<Vec<DMatrix<f64>>>>()?;
    let log_init: Vec<f64> = model.initial_dist.iter().map(|p| p.ln()).collect();
    let log_pi: DMatrix<f64> = model.pi.map(f64::ln);
    let mut data = DMatrix::zeros(d, frames);
    let mut labels = Vec::with_capacity(frames);
    for t in 0..frames {
        let k = match labels.last() {
            None => sample_log_categorical(&log_init, rng)?,
            Some(&prev) => {
                let row: Vec<f64> = log_pi.row(prev).iter().copied().collect();
                sample_log_categorical(&row, rng)?
            }
        };
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let o = model.theta[k].mu() + &factors[k] * z;
        data.set_column(t, &o);
        labels.push(k);
    }
    Ok((Observations::new(data), StateSequence::from_labels(labels)))
}

/// Three well-separated zero-mean states in `d = 2` with self-transition 0.95.
pub fn recovery_fixture() -> ModelState {
    let covs = [
        DMatrix::from_diagonal_element(2, 2, 0.1),
        DMatrix::from_diagonal_element(2, 2, 5.0),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]),
    ];
    let theta = covs
        .into_iter()
        .map(|c| EmissionParams::zero_mean(c).expect("fixture covariance is SPD"))
        .collect();
    let stay = 0.95;
    let leave = (1.0 - stay) / 2.0;
    let pi = DMatrix::from_fn(3, 3, |i, j| if i == j { stay } else { leave });
    ModelState::new(vec![1.0 / 3.0; 3], 0.0, pi, theta, vec![1.0 / 3.0; 3])
        .expect("fixture is a valid model")
}

/// Target-car motion inside its visible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarDynamics {
    pub range_m: f64,
    pub range_rate_mps: f64,
    pub lateral_m: f64,
    pub noise: f64,
}

impl Default for CarDynamics {
    fn default() -> Self {
        Self {
            range_m: 30.0,
            range_rate_mps: 0.0,
            lateral_m: 1.5,
            noise: 1.0,
        }
    }
}

/// One target car visible in `channel` (1-based) over `[appear_s, disappear_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarSpec {
    pub channel: usize,
    pub appear_s: f64,
    pub disappear_s: f64,
    pub dynamics: CarDynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryScenarioSpec {
    pub channels: usize,
    pub frames: usize,
    pub sample_rate_hz: f64,
    pub cars: Vec<CarSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryScenario {
    pub sequence: TrafficSequence,
    pub events: Vec<StepEvent>,
    pub change_frames: Vec<usize>,
}

fn frame_of(time_s: f64, rate: f64) -> usize {
    (time_s * rate).round() as usize
}

/// Build a scenario whose channels are zero outside each car's interval and
/// follow smooth noisy dynamics inside it. Events at frame 0 (car present from
/// the start) or at `T` (still present at the end) are not steps and are not
/// listed.
pub fn make_binary_scenario<R: Rng + ?Sized>(
    spec: &BinaryScenarioSpec,
    rng: &mut R,
) -> Result<BinaryScenario> {
    let rate = spec.sample_rate_hz;
    let frames = spec.frames;
    if !(rate > 0.0) {
        return Err(Error::Invalid(format!(
            "sample rate must be positive, got {rate}"
        )));
    }
    let horizon = frames as f64 / rate;
    let mut intervals: Vec<Vec<(usize, usize)>> = vec![Vec::new(); spec.channels];
    for car in &spec.cars {
        if car.channel == 0 || car.channel > spec.channels {
            return Err(Error::Invalid(format!(
                "car channel {} outside 1..={}",
                car.channel, spec.channels
            )));
        }
        if !(0.0 <= car.appear_s
            && car.appear_s < car.disappear_s
            && car.disappear_s <= horizon + 1e-9)
        {
            return Err(Error::Invalid(format!(
                "need 0 <= appear < disappear <= {horizon}, got [{}, {})",
                car.appear_s, car.disappear_s
            )));
        }
        let span = (
            frame_of(car.appear_s, rate),
            frame_of(car.disappear_s, rate).min(frames),
        );
        if span.0 >= span.1 {
            return Err(Error::Invalid(format!(
                "car in channel {} is visible for no whole frame",
                car.channel
            )));
        }
        let slot = &mut intervals[car.channel - 1];
        if slot.iter().any(|&(a, b)| span.0 < b && a < span.1) {
            return Err(Error::Invalid(format!(
                "overlapping cars in channel {}",
                car.channel
            )));
        }
        slot.push(span);
    }

    let dt = 1.0 / rate;
    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };

    let mut ego = Vec::with_capacity(frames);
    let (mut ax, mut vx) = (0.0_f64, 15.0_f64);
    for _ in 0..frames {
        ax = 0.95 * ax + 0.1 * normal(rng);
        vx = (vx + ax * dt).max(0.5);
        ego.push([ax, vx]);
    }

    let mut channels = vec![vec![[0.0; 3]; frames]; spec.channels];
    for car in &spec.cars {
        let (start, end) = (
            frame_of(car.appear_s, rate),
            frame_of(car.disappear_s, rate).min(frames),
        );
        let dyn_ = car.dynamics;
        let (mut dx, mut dv) = (dyn_.range_m, dyn_.range_rate_mps);
        for frame in channels[car.channel - 1][start..end].iter_mut() {
            dv = 0.98 * dv + 0.05 * dyn_.noise * normal(rng);
            dx = (dx + dv * dt).max(2.0);
            let range = (dx + 0.2 * dyn_.noise * normal(rng)).max(1.0);
            let lateral = dyn_.lateral_m + 0.1 * dyn_.noise * normal(rng);
            *frame = [range, dv, lateral];
        }
    }

    let sequence = TrafficSequence::new(
        rate,
        TrafficSequence::uniform_timestamps(frames, rate),
        ego,
        channels,
    )?;

    let mut events = Vec::new();
    for car in &spec.cars {
        let (start, end) = (
            frame_of(car.appear_s, rate),
            frame_of(car.disappear_s, rate).min(frames),
        );
        if start > 0 && !intervals[car.channel - 1].iter().any(|&(_, b)| b == start) {
            events.push(StepEvent {
                channel: car.channel,
                frame: start,
                time_s: sequence.timestamps()[start],
                kind: EventKind::Appearance,
            });
        }
        if end < frames && !intervals[car.channel - 1].iter().any(|&(a, _)| a == end) {
            events.push(StepEvent {
                channel: car.channel,
                frame: end,
                time_s: sequence.timestamps()[end],
                kind: EventKind::Disappearance,
            });
        }
    }
    events.sort_by(|a, b| a.frame.cmp(&b.frame).then(a.channel.cmp(&b.channel)));
    let mut change_frames: Vec<usize> = events.iter().map(|e| e.frame).collect();
    change_frames.dedup();

    debug_assert_eq!(detect_step_events(&sequence), events);
    Ok(BinaryScenario {
        sequence,
        events,
        change_frames,
    })
}

/// Five channels at 10 Hz over 100 s with cars only in channels 1 to 3
/// (channels 4 and 5 stay zero, as in a typical highway log). Five cars give
/// ten events, at least 3 s apart and away from both ends.
pub fn default_binary_spec<R: Rng + ?Sized>(rng: &mut R) -> BinaryScenarioSpec {
    const CHANNELS: usize = 5;
    const USED_CHANNELS: usize = 3;
    const CARS: usize = 5;
    const RATE: f64 = 10.0;
    const FRAMES: usize = 1000;
    let min_gap_s = 3.0;
    let last_event_s = FRAMES as f64 / RATE - 2.0;
    loop {
        let cars: Vec<CarSpec> = (0..CARS)
            .map(|i| {
                let channel = if i < USED_CHANNELS {
                    i + 1
                } else {
                    rng.random_range(1..=USED_CHANNELS)
                };
                let appear = rng.random_range(20..800) as f64 / RATE;
                let dur = rng.random_range(80..300) as f64 / RATE;
                CarSpec {
                    channel,
                    appear_s: appear,
                    disappear_s: appear + dur,
                    dynamics: CarDynamics {
                        range_m: rng.random_range(12.0..70.0),
                        range_rate_mps: rng.random_range(-1.5..1.5),
                        lateral_m: rng.random_range(-2.0..2.0),
                        noise: 1.0,
                    },
                }
            })
            .collect();
        let disjoint = cars.iter().enumerate().all(|(i, a)| {
            cars[i + 1..].iter().all(|b| {
                a.channel != b.channel
                    || a.disappear_s + min_gap_s <= b.appear_s
                    || b.disappear_s + min_gap_s <= a.appear_s
            })
        });
        let mut times: Vec<f64> = cars
            .iter()
            .flat_map(|c| [c.appear_s, c.disappear_s])
            .collect();
        times.sort_by(f64::total_cmp);
        let separated = times.windows(2).all(|w| w[1] - w[0] >= min_gap_s);
        if disjoint && separated && times[times.len() - 1] <= last_event_s {
            return BinaryScenarioSpec {
                channels: CHANNELS,
                frames: FRAMES,
                sample_rate_hz: RATE,
                cars,
            };
        }
    }
}

/// Guard on the number of enumerated paths.
pub const MAX_ENUMERATED_PATHS: f64 = 1e7;

/// Path enumeration order for `brute_force_marginal_ordered`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOrder {
    /// Last frame varies fastest.
    Lexicographic,
    /// First frame varies fastest, labels counted downward.
    Reversed,
}

fn for_each_path(l: usize, frames: usize, order: PathOrder, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0usize; frames];
    if order == PathOrder::Reversed {
        path.fill(l - 1);
    }
    loop {
        f(&path);
        // Odometer increment.
        let mut advanced = false;
        let positions: Box<dyn Iterator<Item = usize>> = match order {
            PathOrder::Lexicographic => Box::new((0..frames).rev()),
            PathOrder::Reversed => Box::new(0..frames),
        };
        for pos in positions {
            match order {
                PathOrder::Lexicographic if path[pos] + 1 < l => {
                    path[pos] += 1;
                    advanced = true;
                }
                PathOrder::Lexicographic => path[pos] = 0,
                PathOrder::Reversed if path[pos] > 0 => {
                    path[pos] -= 1;
                    advanced = true;
                }
                PathOrder::Reversed => path[pos] = l - 1,
            }
            if advanced {
                break;
            }
        }
        if !advanced {
            return;
        }
    }
}

/// `log p(o, path)` for every state path, in lexicographic order.
pub fn path_logliks(obs: &Observations, model: &ModelState) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    visit_path_logliks(obs, model, PathOrder::Lexicographic, |v| out.push(v))?;
    Ok(out)
}

fn visit_path_logliks(
    obs: &Observations,
    model: &ModelState,
    order: PathOrder,
    mut f: impl FnMut(f64),
) -> Result<()> {
    let l = model.num_states();
    let frames = obs.len();
    let count = (l as f64).powi(frames as i32);
    if count > MAX_ENUMERATED_PATHS {
        return Err(Error::TooLarge(count));
    }
    let lik = emission_loglik(obs, model)?;
    if frames == 0 {
        f(0.0);
        return Ok(());
    }
    for_each_path(l, frames, order, |path| {
        let mut total = model.initial_dist[path[0]].ln() + lik[(0, path[0])];
        for t in 1..frames {
            total += model.pi[(path[t - 1], path[t])].ln() + lik[(t, path[t])];
        }
        f(total);
    });
    Ok(())
}

/// `log Σ exp(xᵢ)` with Neumaier-compensated accumulation of the scaled terms.
pub fn log_sum_exp_compensated(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let x = (v - max).exp();
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    max + (sum + comp).ln()
}

/// Exact `log p(o_{1:T})` by summing over all `L^T` state paths.
pub fn brute_force_marginal(obs: &Observations, model: &ModelState) -> Result<f64> {
    brute_force_marginal_ordered(obs, model, PathOrder::Lexicographic)
}

pub fn brute_force_marginal_ordered(
    obs: &Observations,
    model: &ModelState,
    order: PathOrder,
) -> Result<f64> {
    let mut values = Vec::new();
    visit_path_logliks(obs, model, order, |v| values.push(v))?;
    Ok(log_sum_exp_compensated(&values))
}

pub const TRUTH_FORMAT: &str = "primseg-truth";

/// Ground-truth sidecar written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub format: String,
    pub version: u32,
    pub states: Option<Vec<usize>>,
    pub events: Vec<StepEvent>,
    pub change_frames: Vec<usize>,
}

impl GroundTruth {
    pub fn new(
        states: Option<Vec<usize>>,
        events: Vec<StepEvent>,
        change_frames: Vec<usize>,
    ) -> Self {
        Self {
            format: TRUTH_FORMAT.into(),
            version: 1,
            states,
            events,
            change_frames,
        }
    }
}
