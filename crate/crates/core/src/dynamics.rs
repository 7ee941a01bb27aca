//! Exchange laws, discretized per tick.
//!
//! During a connected session the receiver's copy of each donor element
//! approaches the donor's level exponentially, scaled by the receiver's
//! geometry factor. Outside sessions foreign traces fade linearly. A single
//! global audio envelope modulates displayed vividness.

use std::collections::BTreeSet;

use glam::DVec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::model::{AgentState, ElementKind, Umwelt, EPS_VIS};

/// Distance under which two positions are considered coincident.
pub const DEGENERATE_DIST: f64 = 1e-9;

/// Intensity at which a fading trace has fully run out.
pub const FADE_FLOOR: f64 = 1e-9;

/// Default audio gain applied by [`vividness`].
pub const DEFAULT_VIVIDNESS_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    /// 1/s
    pub k_transfer: f64,
    /// 1/s
    pub k_spread: f64,
    /// 1/s; a full-intensity trace fades out in `1 / r_decay` seconds.
    pub r_decay: f64,
    pub g_min: f64,
    pub eps_vis: f64,
    /// seconds
    pub dt: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            k_transfer: 0.3,
            k_spread: 0.2,
            r_decay: 1.0 / 30.0,
            g_min: 0.2,
            eps_vis: EPS_VIS,
            dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("{0} must be strictly positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("g_min must lie in (0, 1], got {0}")]
    GMin(f64),
    #[error("dt must lie in (0, 0.1], got {0}")]
    Dt(f64),
    #[error("eps_vis must lie in (0, 1), got {0}")]
    EpsVis(f64),
}

impl DynamicsParams {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        for (name, v) in [
            ("k_transfer", self.k_transfer),
            ("k_spread", self.k_spread),
            ("r_decay", self.r_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParamsError::NonPositive(name, v));
            }
        }
        if !(self.g_min > 0.0 && self.g_min <= 1.0) {
            return Err(ParamsError::GMin(self.g_min));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(ParamsError::Dt(self.dt));
        }
        if !(self.eps_vis > 0.0 && self.eps_vis < 1.0) {
            return Err(ParamsError::EpsVis(self.eps_vis));
        }
        Ok(())
    }
}

/// Orientation weight of a receiver towards a donor:
/// `max(g_min, (1 + cos φ) / 2)` where φ is the angle between the receiver's
/// facing and the direction to the donor.
///
/// Coincident positions are an authoring error; they log a warning and
/// yield 1.
pub fn geometry_factor(receiver: &AgentState, donor: &AgentState, g_min: f64) -> f64 {
    geometry_factor_at(receiver.position, receiver.facing, donor.position, g_min)
}

pub fn geometry_factor_at(
    receiver_pos: DVec3,
    receiver_facing: DVec3,
    donor_pos: DVec3,
    g_min: f64,
) -> f64 {
    let offset = donor_pos - receiver_pos;
    let dist = offset.length();
    if dist <= DEGENERATE_DIST {
        warn!(?receiver_pos, ?donor_pos, "degenerate positions in geometry factor");
        return 1.0;
    }
    let facing = receiver_facing.try_normalize().unwrap_or(DVec3::X);
    let cos_phi = (facing.dot(offset / dist)).clamp(-1.0, 1.0);
    ((1.0 + cos_phi) * 0.5).max(g_min).min(1.0)
}

/// Kinds that received transfer this tick and are exempt from decay.
pub type Protected = BTreeSet<ElementKind>;

/// Raises the receiver's traces towards the donor's visible traces.
///
/// Each tick integrates `dI/dt = k·g·(I_donor − I)` exactly with the donor
/// held constant, so the step is `(I_donor − I)·(1 − e^(−k·g·dt))`. Transfer
/// never lowers a trace; a donor trace at or below the receiver's
/// level leaves it untouched. New traces carry the donor trace's origin.
/// Returns the kinds actively transferred.
pub fn step_transfer(
    receiver: &mut Umwelt,
    donor: &Umwelt,
    g: f64,
    params: &DynamicsParams,
) -> Protected {
    let mut protected = Protected::new();
    let native = receiver.native_kind();
    for donor_trace in donor.traces() {
        if donor_trace.kind == native || donor_trace.intensity < params.eps_vis {
            continue;
        }
        let current = receiver
            .get(donor_trace.kind)
            .map_or(0.0, |t| t.intensity);
        if donor_trace.intensity <= current {
            continue;
        }
        let trace = receiver.entry_foreign(donor_trace.kind, donor_trace.origin);
        let gain = -(-params.k_transfer * g * params.dt).exp_m1();
        let delta = gain * (donor_trace.intensity - trace.intensity);
        trace.intensity = (trace.intensity + delta).clamp(0.0, 1.0);
        trace.spread = (trace.spread + params.k_spread * params.dt).min(1.0);
        protected.insert(donor_trace.kind);
    }
    protected
}

/// Linear fade of every unprotected foreign trace; a trace that runs out is
/// removed. The native trace never fades.
pub fn step_decay(u: &mut Umwelt, protected: &Protected, params: &DynamicsParams) {
    let step = params.r_decay * params.dt;
    for trace in u.foreign_mut() {
        if protected.contains(&trace.kind) {
            continue;
        }
        trace.intensity = (trace.intensity - step).max(0.0);
        trace.spread = (trace.spread - step).max(0.0);
    }
    u.retain_foreign(|t| protected.contains(&t.kind) || t.intensity > FADE_FLOOR);
}

/// Global audio envelope driven by scripted band energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioEnvelope {
    pub level: f64,
    /// 1/s
    pub attack: f64,
    /// 1/s
    pub release: f64,
}

impl Default for AudioEnvelope {
    fn default() -> Self {
        Self {
            level: 0.0,
            attack: 20.0,
            release: 2.0,
        }
    }
}

pub fn step_audio(env: AudioEnvelope, impulse: f64, dt: f64) -> AudioEnvelope {
    let impulse = impulse.clamp(0.0, 1.0);
    let level = if impulse > env.level {
        env.level + env.attack * (impulse - env.level) * dt
    } else {
        env.level * (1.0 - env.release * dt)
    };
    AudioEnvelope {
        level: level.clamp(0.0, 1.0),
        ..env
    }
}

/// Displayed vividness of a trace under the current audio level. Not part of
/// replicated state.
pub fn vividness(intensity: f64, env: &AudioEnvelope, gain: f64) -> f64 {
    intensity * (1.0 + gain * env.level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentId, ElementTrace};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn agent_facing(pos: DVec3, facing: DVec3) -> AgentState {
        AgentState::new(AgentId(0), pos, facing)
    }

    #[test]
    fn geometry_factor_examples() {
        let donor = agent_facing(DVec3::new(1.0, 0.0, 0.0), -DVec3::X);
        let facing = |phi: f64| DVec3::new(phi.cos(), phi.sin(), 0.0);
        let g = |phi| geometry_factor(&agent_facing(DVec3::ZERO, facing(phi)), &donor, 0.2);
        assert!((g(0.0) - 1.0).abs() < 1e-12);
        assert!((g(FRAC_PI_2) - 0.5).abs() < 1e-12);
        assert!((g(PI) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn geometry_factor_degenerate_is_one() {
        let a = agent_facing(DVec3::ONE, -DVec3::X);
        assert_eq!(geometry_factor(&a, &a.clone(), 0.2), 1.0);
    }

    #[test]
    fn transfer_never_lowers() {
        let params = DynamicsParams::default();
        let mut rx = Umwelt::new(AgentId(1), ElementKind::Water);
        let mut t = ElementTrace::seed(ElementKind::Sugar, AgentId(9));
        t.intensity = 0.7;
        t.spread = 0.3;
        rx.set_foreign(t);
        let mut donor = Umwelt::new(AgentId(2), ElementKind::Nitrogen);
        t.intensity = 0.4;
        donor.set_foreign(t);
        let before = rx.clone();
        let protected = step_transfer(&mut rx, &donor, 1.0, &params);
        assert_eq!(rx.get(ElementKind::Sugar), before.get(ElementKind::Sugar));
        assert!(!protected.contains(&ElementKind::Sugar));
        assert!(protected.contains(&ElementKind::Nitrogen));
    }

    #[test]
    fn transfer_preserves_secondhand_origin() {
        let params = DynamicsParams::default();
        let mut rx = Umwelt::new(AgentId(3), ElementKind::Water);
        let mut donor = Umwelt::new(AgentId(1), ElementKind::Nitrogen);
        let mut t = ElementTrace::seed(ElementKind::Sugar, AgentId(2));
        t.intensity = 0.6;
        donor.set_foreign(t);
        step_transfer(&mut rx, &donor, 1.0, &params);
        assert_eq!(rx.get(ElementKind::Sugar).unwrap().origin, AgentId(2));
        assert_eq!(rx.get(ElementKind::Nitrogen).unwrap().origin, AgentId(1));
    }

    #[test]
    fn donor_kind_matching_receiver_native_is_skipped() {
        let params = DynamicsParams::default();
        let mut rx = Umwelt::new(AgentId(1), ElementKind::Water);
        let donor = Umwelt::new(AgentId(2), ElementKind::Water);
        let protected = step_transfer(&mut rx, &donor, 1.0, &params);
        assert!(protected.is_empty());
        assert_eq!(rx.len(), 1);
        rx.check_invariants().unwrap();
    }

    #[test]
    fn faint_new_trace_survives_while_protected() {
        // g = g_min gives a first increment below eps_vis.
        let params = DynamicsParams::default();
        let mut rx = Umwelt::new(AgentId(1), ElementKind::Water);
        let donor = Umwelt::new(AgentId(2), ElementKind::Sugar);
        let protected = step_transfer(&mut rx, &donor, params.g_min, &params);
        step_decay(&mut rx, &protected, &params);
        let t = rx.get(ElementKind::Sugar).unwrap();
        assert!(t.intensity > 0.0 && t.intensity < params.eps_vis);
    }

    fn faded(seconds: f64) -> Option<f64> {
        let params = DynamicsParams::default();
        let mut u = Umwelt::new(AgentId(1), ElementKind::Water);
        let mut t = ElementTrace::seed(ElementKind::Sugar, AgentId(2));
        t.intensity = 1.0;
        t.spread = 1.0;
        u.set_foreign(t);
        let ticks = (seconds / params.dt).round() as usize;
        for _ in 0..ticks {
            step_decay(&mut u, &Protected::new(), &params);
        }
        u.get(ElementKind::Sugar).map(|t| t.intensity)
    }

    #[test]
    fn decay_examples() {
        let half = faded(15.0).unwrap();
        assert!((half - 0.5).abs() <= 1.0 / 600.0 + 1e-12, "{half}");
        assert!(faded(29.95).is_some());
        assert_eq!(faded(30.0), None);
    }

    #[test]
    fn native_never_fades() {
        let params = DynamicsParams::default();
        let mut u = Umwelt::new(AgentId(1), ElementKind::Water);
        for _ in 0..20_000 {
            step_decay(&mut u, &Protected::new(), &params);
        }
        assert_eq!(u.get(ElementKind::Water).unwrap().intensity, 1.0);
    }

    #[test]
    fn audio_examples() {
        let env = AudioEnvelope::default();
        let up = step_audio(env, 1.0, 0.05);
        assert_eq!(up.level, 1.0);
        let down = step_audio(AudioEnvelope { level: 0.5, ..env }, 0.0, 0.05);
        assert!((down.level - 0.45).abs() < 1e-12);
        let mut e = AudioEnvelope { level: 1.0, ..env };
        for _ in 0..2000 {
            e = step_audio(e, 0.0, 0.05);
        }
        assert!(e.level < 1e-12);
    }

    #[test]
    fn vividness_examples() {
        let quiet = AudioEnvelope::default();
        let loud = AudioEnvelope { level: 1.0, ..quiet };
        assert_eq!(vividness(0.8, &quiet, 0.5), 0.8);
        assert!((vividness(0.8, &loud, 0.5) - 1.2).abs() < 1e-12);
        assert_eq!(vividness(0.0, &loud, 0.5), 0.0);
    }

    #[test]
    fn params_validation() {
        DynamicsParams::default().validate().unwrap();
        assert!(DynamicsParams::default().with_dt(0.2).validate().is_err());
        let bad = DynamicsParams {
            g_min: 0.0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ParamsError::GMin(0.0)));
    }
}
