//! MFC camber-morphing trailing edge: voltage-signal command to camber with
//! play-operator hysteresis, bounded creep, and a first-order rate lag, plus
//! the linear camber-to-lift gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Creep saturates at this fraction of the signal half-range.
pub const CREEP_SATURATION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    /// Half-width of the backlash/play element, signal units.
    pub play_width: f64,
    /// First-order lag time constant, seconds.
    pub lag_tau: f64,
    /// Creep drift rate, signal units per second.
    pub creep_rate: f64,
    /// Lift per unit camber, newtons.
    pub camber_lift_gain: f64,
}

impl ActuatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.play_width) {
            return Err(Error::InvalidConfig(format!(
                "play_width must be in [0, 0.5) (got {})",
                self.play_width
            )));
        }
        if self.lag_tau <= 0.0 {
            return Err(Error::InvalidConfig("lag_tau must be positive".into()));
        }
        if self.creep_rate < 0.0 {
            return Err(Error::InvalidConfig("creep_rate must be >= 0".into()));
        }
        if self.camber_lift_gain <= 0.0 {
            return Err(Error::InvalidConfig(
                "camber_lift_gain must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    /// Commanded voltage signal, clamped to [-1, 1].
    pub commanded_signal: f64,
    /// Play-operator memory; trails the command by at most the play width.
    pub play_memory: f64,
    /// Camber actually realized after lag and creep, in [-1, 1].
    pub effective_camber: f64,
    /// Bounded creep drift, signal units.
    pub creep_accumulator: f64,
}

impl ActuatorState {
    /// Add a discrete voltage-signal change to the command. Dynamics are not advanced.
    pub fn apply_action(&self, delta_v: f64, action_deltas: &[f64]) -> Result<ActuatorState> {
        if !action_deltas.iter().any(|&a| (a - delta_v).abs() < 1e-12) {
            return Err(Error::UnknownActionDelta(delta_v));
        }
        let mut next = *self;
        next.commanded_signal = (self.commanded_signal + delta_v).clamp(-1.0, 1.0);
        Ok(next)
    }

    /// Advance the play operator, creep, and rate lag by `dt` seconds.
    pub fn step_dynamics(&self, params: &ActuatorParams, dt: f64) -> ActuatorState {
        assert!(dt > 0.0, "dt must be positive");
        let w = params.play_width;
        let play = self
            .play_memory
            .clamp(self.commanded_signal - w, self.commanded_signal + w);

        // Creep drifts toward a bounded offset in the direction the actuator is held.
        let target = if play == 0.0 {
            0.0
        } else {
            play.signum() * CREEP_SATURATION
        };
        let max_step = params.creep_rate * dt;
        let creep = self.creep_accumulator
            + (target - self.creep_accumulator).clamp(-max_step, max_step);

        let camber = (self.effective_camber
            + (dt / params.lag_tau) * (play + creep - self.effective_camber))
            .clamp(-1.0, 1.0);

        ActuatorState {
            commanded_signal: self.commanded_signal,
            play_memory: play,
            effective_camber: camber,
            creep_accumulator: creep,
        }
    }
}

/// Lift increment produced by a camber deflection.
pub fn lift_from_camber(camber: f64, params: &ActuatorParams) -> f64 {
    debug_assert!(camber.abs() <= 1.0 + 1e-12);
    params.camber_lift_gain * camber
}
