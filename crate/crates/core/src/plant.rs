//! Surrogate wind-tunnel plant: gust schedules, wake transport delay,
//! baseline gust lift, direction-dependent pressure-tap signals, actuator
//! coupling, sensor noise, and total lift.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::actuator::{lift_from_camber, ActuatorParams, ActuatorState};
use crate::config::{normalize_mfc, normalize_pressure, FlightConditionConfig};
use crate::error::{Error, Result};

/// Gust-generator-to-wing distance, meters.
pub const WAKE_DISTANCE: f64 = 0.30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// One deflection held for the whole episode (training gusts).
    TrainingHold,
    /// Neutral quarter, gust half, neutral quarter (testing).
    TestQuarters,
}

/// Deflection schedule for the gust generator over one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GustSchedule {
    pub kind: ScheduleKind,
    /// Deflection held during initialization, before the schedule clock starts.
    pub initial_deflection: f64,
    /// (deflection °, duration s) segments.
    pub segments: Vec<(f64, f64)>,
}

impl GustSchedule {
    /// Training episode: initialize at `initial` (baseline capture), then hold
    /// the gust deflection for the whole episode.
    pub fn training_hold(initial: f64, gust_deflection: f64, episode_secs: f64) -> Self {
        GustSchedule {
            kind: ScheduleKind::TrainingHold,
            initial_deflection: initial,
            segments: vec![(gust_deflection, episode_secs)],
        }
    }

    /// Test episode: first quarter neutral, middle half at the gust
    /// deflection, last quarter neutral, where `gust_duration` = T.
    pub fn test_quarters(test_deflection: f64, gust_duration: f64) -> Self {
        let t = gust_duration;
        GustSchedule {
            kind: ScheduleKind::TestQuarters,
            initial_deflection: 0.0,
            segments: vec![(0.0, t / 2.0), (test_deflection, t), (0.0, t / 2.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScheduleKind::TrainingHold => {
                if self.segments.len() != 1 {
                    return Err(Error::InvalidConfig(
                        "TrainingHold must have exactly 1 segment".into(),
                    ));
                }
            }
            ScheduleKind::TestQuarters => {
                if self.segments.len() != 3 {
                    return Err(Error::InvalidConfig(
                        "TestQuarters must have exactly 3 segments".into(),
                    ));
                }
                let t = self.segments[1].1;
                if self.initial_deflection != 0.0
                    || self.segments[0] != (0.0, t / 2.0)
                    || self.segments[2] != (0.0, t / 2.0)
                {
                    return Err(Error::InvalidConfig(
                        "TestQuarters must be (0, T/2), (δ, T), (0, T/2)".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|&(_, d)| d).sum()
    }

    /// Deflection at schedule time `t` (clamped to the last segment).
    pub fn deflection_at(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &(d, dur) in &self.segments {
            acc += dur;
            if t < acc {
                return d;
            }
        }
        self.segments.last().map(|&(d, _)| d).unwrap_or(0.0)
    }
}

/// Per-tap gust sensitivity, split by gust direction, plus sensor noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapSensitivityProfile {
    /// Sensitivity to upward gusts, tap 1 (leading edge) to tap 6, strictly decreasing.
    pub up_sensitivity: [f64; 6],
    /// Sensitivity to downward gusts.
    pub down_sensitivity: [f64; 6],
    /// Gaussian noise sigma added to each normalized tap signal per step.
    pub noise_sigma: f64,
}

impl Default for TapSensitivityProfile {
    fn default() -> Self {
        TapSensitivityProfile {
            up_sensitivity: [1.0, 0.8, 0.6, 0.3, 0.12, 0.06],
            // Down-gust sensitivities are strongly asymmetric: taps 2 and 3
            // carry the measured reductions (to 73% and 16.7% of the upward
            // sensitivity), and the leading tap is nearly blind to downward
            // gusts, so single-tap sensing degrades on half the gust set.
            down_sensitivity: [0.05, 0.584, 0.1002, 0.21, 0.08, 0.04],
            noise_sigma: 0.2,
        }
    }
}

impl TapSensitivityProfile {
    pub fn validate(&self) -> Result<()> {
        if self.up_sensitivity.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig(
                "up_sensitivity must be strictly decreasing from leading edge".into(),
            ));
        }
        if self
            .up_sensitivity
            .iter()
            .chain(&self.down_sensitivity)
            .any(|&s| !(s.is_finite() && s > 0.0))
        {
            return Err(Error::InvalidConfig(
                "tap sensitivities must be positive".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// All plant calibration constants beyond the flight-condition table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub actuator: ActuatorParams,
    pub profile: TapSensitivityProfile,
    /// Camber-to-pressure coupling per tap, largest at the rear taps.
    pub camber_coupling: [f64; 6],
    /// Gaussian noise sigma on the lift measurement, newtons.
    pub lift_noise_sigma: f64,
    /// Raw-to-normalized pressure scale (signal units per unit gust strength).
    pub pressure_scale: f64,
}

impl PlantParams {
    /// Defaults calibrated to a flight condition: full-authority actuator gain
    /// with 20% margin, and a pressure scale placing the strongest training
    /// gust at |signal| ≈ 2.0 on tap 1.
    pub fn defaults_for(cfg: &FlightConditionConfig) -> Self {
        let profile = TapSensitivityProfile::default();
        let gain = 1.2 * cfg.max_abs_anchor();
        let actuator = ActuatorParams {
            play_width: 0.1,
            lag_tau: 0.1,
            creep_rate: 0.01,
            camber_lift_gain: gain,
        };
        let max_d = cfg.hard_deflection_limit();
        let denom = cfg.max_abs_anchor();
        let up = profile.up_sensitivity[0] * (gust_lift_map(max_d, cfg).unwrap() / denom).abs();
        let down = profile.down_sensitivity[0] * (gust_lift_map(-max_d, cfg).unwrap() / denom).abs();
        let pressure_scale = 2.0 / up.max(down);
        PlantParams {
            actuator,
            profile,
            camber_coupling: [0.02, 0.03, 0.05, 0.10, 0.20, 0.25],
            lift_noise_sigma: 0.01,
            pressure_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.actuator.validate()?;
        self.profile.validate()?;
        if self.lift_noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("lift_noise_sigma must be >= 0".into()));
        }
        if !(self.pressure_scale.is_finite() && self.pressure_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "pressure_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Change in lift produced by a held gust-generator deflection: monotone
/// piecewise-linear through (0, 0) and the six signed anchors, with linear
/// extrapolation beyond the outermost anchors.
pub fn gust_lift_map(deflection: f64, cfg: &FlightConditionConfig) -> Result<f64> {
    let limit = cfg.hard_deflection_limit();
    if !deflection.is_finite() || deflection.abs() > limit + 1e-9 {
        return Err(Error::DeflectionOutOfRange(deflection, limit));
    }
    let mut pts: Vec<(f64, f64)> = cfg.lift_anchors.clone();
    pts.push((0.0, 0.0));
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Anchors are hit exactly, immune to interpolation rounding.
    if let Some(&(_, dl)) = pts.iter().find(|&&(d, _)| d == deflection) {
        return Ok(dl);
    }

    let seg = |a: (f64, f64), b: (f64, f64), x: f64| -> f64 {
        a.1 + (b.1 - a.1) / (b.0 - a.0) * (x - a.0)
    };
    if deflection <= pts[0].0 {
        return Ok(seg(pts[0], pts[1], deflection));
    }
    for w in pts.windows(2) {
        if deflection <= w[1].0 {
            return Ok(seg(w[0], w[1], deflection));
        }
    }
    let n = pts.len();
    Ok(seg(pts[n - 2], pts[n - 1], deflection))
}

/// Wake transport delay in whole simulation steps (nearest step, at least one
/// so sensing always leads the lift response).
pub fn wake_delay_steps(cfg: &FlightConditionConfig) -> usize {
    let delay = WAKE_DISTANCE / cfg.flow_speed;
    ((delay / cfg.timestep).round() as usize).max(1)
}

/// Full surrogate state between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub time: f64,
    pub generator_deflection: f64,
    pub wake_deflection: f64,
    pub actuator: ActuatorState,
    pub lift: f64,
    /// Lift at initialization; the episode's rejection target.
    pub goal_lift: f64,
    /// Raw per-tap signals captured at initialization.
    pub baseline_raw_taps: [f64; 6],
    delay_line: VecDeque<f64>,
}

/// One plant step's outputs.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// All six normalized tap signals (the harness selects the active prefix).
    pub tap_signals: [f64; 6],
    /// Normalized MFC voltage signal.
    pub mfc_signal: f64,
    pub lift: f64,
}

/// One surrogate plant instance. Strictly sequential; independent instances
/// may run in parallel.
#[derive(Clone, Debug)]
pub struct Plant {
    pub cfg: FlightConditionConfig,
    pub params: PlantParams,
    pub schedule: GustSchedule,
    pub state: PlantState,
    steps_taken: usize,
    init_steps_remaining: usize,
    delay_steps: usize,
}

impl Plant {
    /// Reset: actuator zeroed, generator at the schedule's initial deflection,
    /// delay line flushed to it, baselines captured, time zero. The plant
    /// holds the initial deflection for `init_steps` before the schedule runs.
    pub fn reset(
        cfg: &FlightConditionConfig,
        params: &PlantParams,
        schedule: GustSchedule,
        init_steps: usize,
    ) -> Result<Plant> {
        schedule.validate()?;
        let d0 = schedule.initial_deflection;
        let goal_lift = cfg.baseline_lift + gust_lift_map(d0, cfg)?;
        let mut baseline = [0.0; 6];
        for (i, b) in baseline.iter_mut().enumerate() {
            *b = raw_tap_signal(i, d0, 0.0, cfg, params)?;
        }
        let delay_steps = wake_delay_steps(cfg);
        let state = PlantState {
            time: 0.0,
            generator_deflection: d0,
            wake_deflection: d0,
            actuator: ActuatorState::default(),
            lift: goal_lift,
            goal_lift,
            baseline_raw_taps: baseline,
            delay_line: std::iter::repeat(d0).take(delay_steps).collect(),
        };
        Ok(Plant {
            cfg: cfg.clone(),
            params: params.clone(),
            schedule,
            state,
            steps_taken: 0,
            init_steps_remaining: init_steps,
            delay_steps,
        })
    }

    /// Apply an action by index and advance the plant one timestep.
    pub fn step(&mut self, action_index: usize, rng: &mut ChaCha8Rng) -> Result<StepOutput> {
        let deltas = &self.cfg.action_deltas;
        let &delta_v = deltas
            .get(action_index)
            .ok_or(Error::ActionIndexOutOfRange(action_index, deltas.len()))?;
        let dt = self.cfg.timestep;

        let acted = self.state.actuator.apply_action(delta_v, deltas)?;
        let actuator = acted.step_dynamics(&self.params.actuator, dt);

        // Generator follows the schedule once initialization is over.
        let generator = if self.init_steps_remaining > 0 {
            self.init_steps_remaining -= 1;
            self.schedule.initial_deflection
        } else {
            let sched_t = (self.steps_taken as f64) * dt;
            self.steps_taken += 1;
            self.schedule.deflection_at(sched_t)
        };

        self.state.delay_line.push_back(generator);
        let wake = self.state.delay_line.pop_front().unwrap();

        let camber = actuator.effective_camber;
        let mut lift = self.cfg.baseline_lift
            + gust_lift_map(wake, &self.cfg)?
            + lift_from_camber(camber, &self.params.actuator);
        if self.params.lift_noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.params.lift_noise_sigma).unwrap();
            lift += n.sample(rng);
        }

        let mut taps = [0.0; 6];
        for (i, t) in taps.iter_mut().enumerate() {
            let raw = raw_tap_signal(i, wake, camber, &self.cfg, &self.params)?
                - self.state.baseline_raw_taps[i];
            let mut sig = raw * self.params.pressure_scale;
            if self.params.profile.noise_sigma > 0.0 {
                let n = Normal::new(0.0, self.params.profile.noise_sigma).unwrap();
                sig += n.sample(rng);
            }
            *t = normalize_pressure(sig, 1.0)?;
        }

        let mfc = normalize_mfc(actuator.commanded_signal)?;

        self.state.time += dt;
        self.state.generator_deflection = generator;
        self.state.wake_deflection = wake;
        self.state.actuator = actuator;
        self.state.lift = lift;

        Ok(StepOutput {
            tap_signals: taps,
            mfc_signal: mfc,
            lift,
        })
    }

    /// Steps taken since the initialization period ended.
    pub fn schedule_steps(&self) -> usize {
        self.steps_taken
    }

    pub fn wake_delay(&self) -> usize {
        self.delay_steps
    }
}

/// Raw (pre-normalization) tap signal: direction-dependent gust sensitivity
/// times the normalized gust strength, plus camber coupling.
fn raw_tap_signal(
    tap: usize,
    wake_deflection: f64,
    camber: f64,
    cfg: &FlightConditionConfig,
    params: &PlantParams,
) -> Result<f64> {
    let strength = gust_lift_map(wake_deflection, cfg)? / cfg.max_abs_anchor();
    let sens = if wake_deflection >= 0.0 {
        params.profile.up_sensitivity[tap]
    } else {
        params.profile.down_sensitivity[tap]
    };
    Ok(sens * strength + params.camber_coupling[tap] * camber)
}
