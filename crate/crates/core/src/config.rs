//! Flight-condition tables, sensor layout, signal normalization, and the
//! observation window shared by every other module.

use std::collections::VecDeque;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation timestep in seconds.
pub const TIMESTEP: f64 = 0.05;
/// Steps per training episode.
pub const EPISODE_STEPS: usize = 200;
/// Length of the observation window (most recent per-step vectors).
pub const WINDOW_LEN: usize = 10;
/// Normalized pressure signals are clamped to ±this value.
pub const PRESSURE_CLAMP: f64 = 2.5;
/// Chordwise pressure-tap positions as fractions of the chord.
pub const TAP_POSITIONS: [f64; 6] = [0.0, 0.015, 0.05, 0.10, 0.40, 0.50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlightCondition {
    HighLift,
    MedLift,
    LowLift,
}

impl FlightCondition {
    pub const ALL: [FlightCondition; 3] = [
        FlightCondition::HighLift,
        FlightCondition::MedLift,
        FlightCondition::LowLift,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FlightCondition::HighLift => "high-lift",
            FlightCondition::MedLift => "med-lift",
            FlightCondition::LowLift => "low-lift",
        }
    }
}

impl FromStr for FlightCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high-lift" | "high" => Ok(FlightCondition::HighLift),
            "med-lift" | "medium-lift" | "med" | "medium" => Ok(FlightCondition::MedLift),
            "low-lift" | "low" => Ok(FlightCondition::LowLift),
            other => Err(Error::InvalidConfig(format!(
                "unknown flight condition '{other}' (expected high-lift, med-lift, or low-lift)"
            ))),
        }
    }
}

impl std::fmt::Display for FlightCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One operating point: baseline lift, flow, gust ranges, lift anchors, and
/// the discrete voltage-signal action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightConditionConfig {
    pub condition: FlightCondition,
    /// Baseline lift L_B in newtons.
    pub baseline_lift: f64,
    /// Flow speed U in m/s.
    pub flow_speed: f64,
    /// Angle of attack in degrees.
    pub alpha_deg: f64,
    /// Smallest gust-generator deflection magnitude used during training (degrees).
    pub training_min_deflection: f64,
    /// Largest training deflection magnitude (degrees); also the hard plant limit.
    pub training_max_deflection: f64,
    /// Signed test deflections in degrees, ascending (three magnitudes × two directions).
    pub testing_deflections: Vec<f64>,
    /// (deflection °, ΔL newtons) anchors, ascending in deflection.
    pub lift_anchors: Vec<(f64, f64)>,
    /// Gust hold duration T in seconds for testing.
    pub gust_duration: f64,
    /// Discrete MFC voltage-signal changes, ascending, symmetric about zero.
    pub action_deltas: Vec<f64>,
    /// Simulation timestep in seconds.
    pub timestep: f64,
    /// Steps per training episode.
    pub episode_steps: usize,
}

impl FlightConditionConfig {
    /// The built-in table row for a flight condition.
    pub fn builtin(condition: FlightCondition) -> Self {
        match condition {
            FlightCondition::HighLift => FlightConditionConfig {
                condition,
                baseline_lift: 3.5,
                flow_speed: 10.0,
                alpha_deg: 10.0,
                training_min_deflection: 3.5,
                training_max_deflection: 13.5,
                testing_deflections: vec![-12.5, -10.0, -7.5, 7.5, 10.0, 12.5],
                lift_anchors: vec![
                    (-12.5, -0.17),
                    (-10.0, -0.15),
                    (-7.5, -0.08),
                    (7.5, 0.09),
                    (10.0, 0.10),
                    (12.5, 0.14),
                ],
                gust_duration: 10.0,
                action_deltas: vec![-0.6, -0.2, -0.1, 0.0, 0.1, 0.2, 0.6],
                timestep: TIMESTEP,
                episode_steps: EPISODE_STEPS,
            },
            FlightCondition::MedLift => FlightConditionConfig {
                condition,
                baseline_lift: 2.5,
                flow_speed: 15.0,
                alpha_deg: 4.0,
                training_min_deflection: 0.5,
                training_max_deflection: 7.5,
                testing_deflections: vec![-6.0, -4.5, -3.0, 3.0, 4.5, 6.0],
                lift_anchors: vec![
                    (-6.0, -0.61),
                    (-4.5, -0.43),
                    (-3.0, -0.26),
                    (3.0, 0.21),
                    (4.5, 0.36),
                    (6.0, 0.51),
                ],
                gust_duration: 5.0,
                action_deltas: vec![-0.25, 0.0, 0.25],
                timestep: TIMESTEP,
                episode_steps: EPISODE_STEPS,
            },
            FlightCondition::LowLift => FlightConditionConfig {
                condition,
                baseline_lift: 1.2,
                flow_speed: 10.0,
                alpha_deg: 4.0,
                training_min_deflection: 1.0,
                training_max_deflection: 9.0,
                testing_deflections: vec![-8.0, -6.0, -4.0, 4.0, 6.0, 8.0],
                lift_anchors: vec![
                    (-8.0, -0.35),
                    (-6.0, -0.24),
                    (-4.0, -0.14),
                    (4.0, 0.13),
                    (6.0, 0.22),
                    (8.0, 0.28),
                ],
                gust_duration: 5.0,
                action_deltas: vec![-0.25, 0.0, 0.25],
                timestep: TIMESTEP,
                episode_steps: EPISODE_STEPS,
            },
        }
    }

    /// Hard deflection limit for the gust generator, degrees.
    pub fn hard_deflection_limit(&self) -> f64 {
        self.training_max_deflection
    }

    /// Largest |ΔL| anchor magnitude, newtons.
    pub fn max_abs_anchor(&self) -> f64 {
        self.lift_anchors
            .iter()
            .map(|&(_, dl)| dl.abs())
            .fold(0.0, f64::max)
    }

    /// Uniform random signed deflection magnitude within the training range.
    pub fn sample_training_deflection<R: Rng>(&self, rng: &mut R) -> f64 {
        let mag = rng.gen_range(self.training_min_deflection..=self.training_max_deflection);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.baseline_lift.is_finite() && self.baseline_lift > 0.0) {
            return fail("baseline_lift must be positive".into());
        }
        if self.flow_speed <= 0.0 {
            return fail("flow_speed must be positive".into());
        }
        if self.timestep <= 0.0 {
            return fail("timestep must be positive".into());
        }
        if self.episode_steps == 0 {
            return fail("episode_steps must be nonzero".into());
        }
        if self.training_min_deflection < 0.0
            || self.training_min_deflection >= self.training_max_deflection
        {
            return fail("training deflection range must satisfy 0 <= min < max".into());
        }
        if self.testing_deflections.len() != 6 {
            return fail(format!(
                "expected 6 testing deflections, got {}",
                self.testing_deflections.len()
            ));
        }
        for &d in &self.testing_deflections {
            if d.abs() > self.training_max_deflection {
                return fail(format!(
                    "testing deflection {d}° exceeds training max {}°",
                    self.training_max_deflection
                ));
            }
        }
        // Action space: ascending, symmetric about zero, contains zero.
        if !self.action_deltas.contains(&0.0) {
            return fail("action_deltas must contain 0".into());
        }
        let mut mirrored: Vec<f64> = self.action_deltas.iter().map(|&a| -a).collect();
        mirrored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if self
            .action_deltas
            .iter()
            .zip(&mirrored)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return fail("action_deltas must be symmetric about 0".into());
        }
        if self.action_deltas.windows(2).any(|w| w[0] >= w[1]) {
            return fail("action_deltas must be strictly ascending".into());
        }
        // Anchors: strictly increasing in deflection, strictly increasing in ΔL,
        // and sign(ΔL) = sign(deflection).
        if self.lift_anchors.len() != 6 {
            return fail(format!(
                "expected 6 lift anchors, got {}",
                self.lift_anchors.len()
            ));
        }
        for w in self.lift_anchors.windows(2) {
            if w[0].0 >= w[1].0 || w[0].1 >= w[1].1 {
                return fail("lift anchors must be strictly increasing".into());
            }
        }
        for &(d, dl) in &self.lift_anchors {
            if d == 0.0 || dl.signum() != d.signum() {
                return fail(format!("anchor ({d}°, {dl} N) must match sign"));
            }
        }
        if self.gust_duration <= 0.0 {
            return fail("gust_duration must be positive".into());
        }
        Ok(())
    }
}

/// Which taps feed the controller. Active sets are prefixes of the chordwise order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TapConfig {
    One,
    Three,
    Six,
}

impl TapConfig {
    pub const ALL: [TapConfig; 3] = [TapConfig::One, TapConfig::Three, TapConfig::Six];

    pub fn count(self) -> usize {
        match self {
            TapConfig::One => 1,
            TapConfig::Three => 3,
            TapConfig::Six => 6,
        }
    }

    pub fn indices(self) -> &'static [usize] {
        match self {
            TapConfig::One => &[0],
            TapConfig::Three => &[0, 1, 2],
            TapConfig::Six => &[0, 1, 2, 3, 4, 5],
        }
    }

    /// Channels fed to the networks: active taps plus the MFC signal.
    pub fn channel_count(self) -> usize {
        self.count() + 1
    }

    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            1 => Ok(TapConfig::One),
            3 => Ok(TapConfig::Three),
            6 => Ok(TapConfig::Six),
            other => Err(Error::InvalidConfig(format!(
                "tap count must be 1, 3, or 6 (got {other})"
            ))),
        }
    }
}

/// Scale a raw pressure-tap signal and clamp to the state-space range.
pub fn normalize_pressure(raw: f64, scale: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::NonFinite("pressure signal"));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "pressure scale must be positive (got {scale})"
        )));
    }
    Ok((raw * scale).clamp(-PRESSURE_CLAMP, PRESSURE_CLAMP))
}

/// Guard clamp for the already unit-normalized MFC voltage signal.
pub fn normalize_mfc(voltage_signal: f64) -> Result<f64> {
    if !voltage_signal.is_finite() {
        return Err(Error::NonFinite("MFC signal"));
    }
    Ok(voltage_signal.clamp(-1.0, 1.0))
}

/// FIFO window of the most recent per-step signal vectors, oldest first.
#[derive(Clone, Debug)]
pub struct ObsWindow {
    channels: usize,
    buf: VecDeque<Vec<f64>>,
}

impl ObsWindow {
    pub fn new(channels: usize) -> Self {
        let buf = (0..WINDOW_LEN).map(|_| vec![0.0; channels]).collect();
        ObsWindow { channels, buf }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn push(&mut self, v: Vec<f64>) {
        assert_eq!(v.len(), self.channels, "observation vector width");
        self.buf.pop_front();
        self.buf.push_back(v);
    }

    /// Channel-major flattening for the 1D conv input: `[c * WINDOW_LEN + t]`.
    pub fn as_network_input(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels * WINDOW_LEN];
        for (t, v) in self.buf.iter().enumerate() {
            for (c, &x) in v.iter().enumerate() {
                out[c * WINDOW_LEN + t] = x;
            }
        }
        out
    }

    pub fn entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.buf.iter()
    }
}
