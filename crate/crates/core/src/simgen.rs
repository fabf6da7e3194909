//! Trajectory generation: sinusoidal thruster excitation, fixed-step RK4
//! integration, sampling and additive sensor noise.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use nalgebra::{SVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contexts::derive_seed;
use crate::error::{Error, Result};
use crate::hydro::{self, ControlInput, VehicleParams, VehicleState};

/// Classical fourth-order Runge-Kutta step for `y' = f(y)`.
pub fn rk4<const N: usize, F>(f: F, y: &SVector<f64, N>, dt: f64) -> Result<SVector<f64, N>>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let k1 = f(y)?;
    let k2 = f(&(y + k1 * (dt / 2.0)))?;
    let k3 = f(&(y + k2 * (dt / 2.0)))?;
    let k4 = f(&(y + k3 * dt))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Advances the vehicle by `dt` seconds with the command held constant.
pub fn rk4_step(
    params: &VehicleParams,
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "integration step {dt} must be positive"
        )));
    }
    let y = state.to_vector();
    let next = rk4(
        |x| hydro::state_derivative(params, &VehicleState::from_vector(x), input),
        &y,
        dt,
    )?;
    let out = VehicleState::from_vector(&next).wrapped();
    out.check_finite()?;
    Ok(out)
}

/// Ranges from which the per-segment sinusoid parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub segment_length: f64,
    pub period_range: (f64, f64),
    /// Per-segment amplitude range (rad/s). A single value by default, so
    /// that only the periods change between segments.
    pub amplitude_range: (f64, f64),
    /// Drive every context with the same command schedule, so that the
    /// commands alone carry no information about the label.
    pub shared: bool,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            segment_length: 1000.0,
            period_range: (20.0, 70.0),
            amplitude_range: (150.0, 150.0),
            shared: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineSegment {
    pub start: f64,
    pub amplitudes: Vec<f64>,
    pub periods: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Piecewise sinusoidal thruster commands, re-drawn at every segment start.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPlan {
    pub config: ExcitationConfig,
    pub seed: u64,
    pub segments: Vec<SineSegment>,
}

impl ExcitationPlan {
    pub fn draw(
        config: ExcitationConfig,
        duration: f64,
        n_thrusters: usize,
        seed: u64,
    ) -> Result<Self> {
        let (p_lo, p_hi) = config.period_range;
        let (a_lo, a_hi) = config.amplitude_range;
        if !(config.segment_length > 0.0
            && p_lo > 0.0
            && p_lo <= p_hi
            && 0.0 <= a_lo
            && a_lo <= a_hi)
        {
            return Err(Error::Config(format!(
                "invalid excitation ranges {config:?}"
            )));
        }
        let n_segments = (duration / config.segment_length).round();
        if n_segments < 1.0 || (n_segments * config.segment_length - duration).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "duration {duration} s is not a multiple of the {} s segment",
                config.segment_length
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segments = (0..n_segments as usize)
            .map(|s| {
                let mut draw = |lo: f64, hi: f64| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..=hi)
                    }
                };
                let amplitudes = (0..n_thrusters).map(|_| draw(a_lo, a_hi)).collect();
                let periods = (0..n_thrusters).map(|_| draw(p_lo, p_hi)).collect();
                let phases = (0..n_thrusters).map(|_| draw(0.0, TAU)).collect();
                SineSegment {
                    start: s as f64 * config.segment_length,
                    amplitudes,
                    periods,
                    phases,
                }
            })
            .collect();
        Ok(ExcitationPlan {
            config,
            seed,
            segments,
        })
    }

    pub fn duration(&self) -> f64 {
        self.segments.len() as f64 * self.config.segment_length
    }

    pub fn segment_at(&self, t: f64) -> &SineSegment {
        let idx = (t / self.config.segment_length).floor().max(0.0) as usize;
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    pub fn command(&self, t: f64) -> ControlInput {
        let seg = self.segment_at(t);
        let local = t - seg.start;
        ControlInput::new(
            seg.amplitudes
                .iter()
                .zip(&seg.periods)
                .zip(&seg.phases)
                .map(|((a, p), ph)| a * (TAU * local / p + ph).sin())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration: f64,
    pub sample_hz: f64,
    pub inner_dt: f64,
    /// Generation fails once `|nu|_inf` exceeds this bound.
    pub divergence_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 40_000.0,
            sample_hz: 1.0,
            inner_dt: 0.1,
            divergence_bound: 50.0,
        }
    }
}

impl SimConfig {
    fn substeps(&self) -> Result<usize> {
        let ratio = 1.0 / (self.sample_hz * self.inner_dt);
        let n = ratio.round();
        if !(self.sample_hz > 0.0 && self.inner_dt > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "inner step {} s must divide the sample period {} s",
                self.inner_dt,
                1.0 / self.sample_hz
            )));
        }
        Ok(n as usize)
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_hz).round() as usize
    }
}

/// One sample of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub t: f64,
    pub nu_dot: Vector6<f64>,
    pub nu: Vector6<f64>,
    pub eta: Vector6<f64>,
    pub command: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub label: u32,
    pub rows: Vec<RawRow>,
}

impl RawTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_thrusters(&self) -> usize {
        self.rows.first().map_or(0, |r| r.command.len())
    }
}

/// Integrates the vehicle from `initial` under `plan` and records one row
/// per sample. The recorded `nu_dot` is the model derivative at the sample.
pub fn generate_trajectory(
    params: &VehicleParams,
    plan: &ExcitationPlan,
    config: &SimConfig,
    initial: VehicleState,
    label: u32,
) -> Result<RawTrajectory> {
    let substeps = config.substeps()?;
    if (plan.duration() - config.duration).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "excitation plan covers {} s, simulation needs {} s",
            plan.duration(),
            config.duration
        )));
    }
    let n = config.n_samples();
    let mut rows = Vec::with_capacity(n);
    let mut state = initial;
    for k in 0..n {
        let t = k as f64 / config.sample_hz;
        let cmd = plan.command(t);
        let deriv = hydro::state_derivative(params, &state, &cmd)?;
        rows.push(RawRow {
            t,
            nu_dot: deriv.fixed_rows::<6>(6).into(),
            nu: state.nu,
            eta: state.eta,
            command: cmd.speeds,
        });
        for s in 0..substeps {
            let ts = t + s as f64 * config.inner_dt;
            state = rk4_step(params, &state, &plan.command(ts), config.inner_dt)?;
        }
        let norm = state.nu.amax();
        if !(norm <= config.divergence_bound) {
            return Err(Error::Diverged {
                t: t + 1.0 / config.sample_hz,
                norm,
            });
        }
    }
    Ok(RawTrajectory { label, rows })
}

/// Simulates every context. The excitation seed is derived from `seed`
/// alone when the plan is shared, otherwise from `seed` and the label.
/// Output order follows `contexts`, independent of scheduling.
pub fn simulate_contexts(
    contexts: &[(u32, VehicleParams)],
    excitation: &ExcitationConfig,
    config: &SimConfig,
    seed: u64,
) -> Result<Vec<RawTrajectory>> {
    contexts
        .par_iter()
        .map(|(label, params)| {
            let plan = ExcitationPlan::draw(
                *excitation,
                config.duration,
                params.n_thrusters(),
                if excitation.shared {
                    derive_seed(seed, u64::MAX)
                } else {
                    derive_seed(seed, *label as u64)
                },
            )?;
            generate_trajectory(params, &plan, config, VehicleState::zero(), *label)
                .map_err(|e| e.context(format!("simulating class {label}")))
        })
        .collect()
}

/// Per-channel standard deviations of the measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSigmas {
    pub nu_dot: [f64; 6],
    pub nu: [f64; 6],
    pub eta: [f64; 6],
}

impl Default for NoiseSigmas {
    fn default() -> Self {
        NoiseSigmas {
            nu_dot: [0.05; 6],
            nu: [0.01; 6],
            eta: [0.005; 6],
        }
    }
}

impl NoiseSigmas {
    pub fn zero() -> Self {
        NoiseSigmas {
            nu_dot: [0.0; 6],
            nu: [0.0; 6],
            eta: [0.0; 6],
        }
    }

    fn validate(&self) -> Result<()> {
        let all = self.nu_dot.iter().chain(&self.nu).chain(&self.eta);
        if all.clone().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(
                "noise sigmas must be finite and non-negative".into(),
            ))
        }
    }
}

/// Adds independent Gaussian noise to the measured channels. Commands are
/// left untouched. The noise stream depends only on `seed`, not on the label.
pub fn add_noise(traj: &RawTrajectory, sigmas: &NoiseSigmas, seed: u64) -> Result<RawTrajectory> {
    sigmas.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = traj.clone();
    let perturb = |v: &mut Vector6<f64>, s: &[f64; 6], rng: &mut ChaCha8Rng| {
        for i in 0..6 {
            let z: f64 = StandardNormal.sample(rng);
            if s[i] > 0.0 {
                v[i] += s[i] * z;
            }
        }
    };
    for row in &mut out.rows {
        perturb(&mut row.nu_dot, &sigmas.nu_dot, &mut rng);
        perturb(&mut row.nu, &sigmas.nu, &mut rng);
        perturb(&mut row.eta, &sigmas.eta, &mut rng);
    }
    Ok(out)
}

const STATE_COLUMNS: [&str; 18] = [
    "du", "dv", "dw", "dp", "dq", "dr", "u", "v", "w", "p", "q", "r", "x", "y", "z", "phi",
    "theta", "psi",
];

pub fn csv_header(n_thrusters: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "label".to_string()];
    h.extend(STATE_COLUMNS.iter().map(|s| s.to_string()));
    h.extend((1..=n_thrusters).map(|j| format!("n{j}")));
    h
}

/// Writes the trajectory as comma-separated text with a header row.
pub fn write_csv<W: Write>(traj: &RawTrajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::format("trajectory csv", e.to_string());
    w.write_record(csv_header(traj.n_thrusters())).map_err(io)?;
    for row in &traj.rows {
        let mut rec = vec![row.t.to_string(), traj.label.to_string()];
        rec.extend(
            row.nu_dot
                .iter()
                .chain(row.nu.iter())
                .chain(row.eta.iter())
                .map(f64::to_string),
        );
        rec.extend(row.command.iter().map(f64::to_string));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trajectory written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<RawTrajectory> {
    let err = |reason: String| Error::format("trajectory csv", reason);
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 21 {
        return Err(err(format!(
            "expected at least 21 columns, got {}",
            header.len()
        )));
    }
    let m = header.len() - 20;
    if header != csv_header(m) {
        return Err(err("unexpected header".into()));
    }
    let mut rows = Vec::new();
    let mut label = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad number {:?}", &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("non-finite value in column {}", header[i])))
            }
        };
        let row_label: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("bad label {:?}", &rec[1])))?;
        if *label.get_or_insert(row_label) != row_label {
            return Err(err("rows carry different labels".into()));
        }
        let vec6 = |start: usize| -> Result<Vector6<f64>> {
            let mut v = Vector6::zeros();
            for i in 0..6 {
                v[i] = num(start + i)?;
            }
            Ok(v)
        };
        let t = num(0)?;
        if let Some(prev) = rows.last().map(|r: &RawRow| r.t) {
            if !(t > prev) {
                return Err(err(format!("time {t} does not increase after {prev}")));
            }
        }
        rows.push(RawRow {
            t,
            nu_dot: vec6(2)?,
            nu: vec6(8)?,
            eta: vec6(14)?,
            command: (20..20 + m).map(num).collect::<Result<_>>()?,
        });
    }
    if rows.len() > 2 {
        let dt = rows[1].t - rows[0].t;
        if rows
            .windows(2)
            .any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-6 * dt.max(1.0))
        {
            return Err(err("samples are not evenly spaced".into()));
        }
    }
    Ok(RawTrajectory {
        label: label.unwrap_or(0),
        rows,
    })
}
