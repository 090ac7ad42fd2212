//! Gyroscope mode: a servo drives the ramp frequency so the counter phase
//! cancels the Sagnac phase, and the integral of that frequency measures
//! the accumulated rotation angle.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::estimate::Detection;
use crate::fringe::{complex_fringe_amplitude, ShifterPair};
use crate::physics::{InterferometerGeometry, VelocityDistribution};

/// Earth's rotation rate, rad/s.
pub const EARTH_RATE: f64 = 7.292_115e-5;

/// Consecutive steps of growing residual that count as divergence.
const DIVERGENCE_STEPS: usize = 10;
/// Per-step growth factor that counts as "growing".
const DIVERGENCE_GROWTH: f64 = 1.05;

/// Rotation rate, piecewise linear between samples and held constant
/// outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationProfile {
    times: Vec<f64>,
    omegas: Vec<f64>,
}

impl RotationProfile {
    pub fn new(times: Vec<f64>, omegas: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != omegas.len() {
            return Err(Error::domain("profile needs equal, non-empty time and rate lists"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("profile time grid must be strictly increasing"));
        }
        if omegas.iter().chain(&times).any(|x| !x.is_finite()) {
            return Err(Error::domain("profile values must be finite"));
        }
        Ok(Self { times, omegas })
    }

    pub fn constant(omega: f64, duration: f64) -> Result<Self> {
        Self::new(vec![0.0, duration], vec![omega, omega])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn omega_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.omegas[0];
        }
        if t >= self.times[n - 1] {
            return self.omegas[n - 1];
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (w0, w1) = (self.omegas[i], self.omegas[i + 1]);
        w0 + (w1 - w0) * (t - t0) / (t1 - t0)
    }

    /// Exact `∫₀ᵀ Ω dt`.
    pub fn integral(&self, t_end: f64) -> f64 {
        let mut knots = vec![0.0];
        knots.extend(self.times.iter().copied().filter(|&t| t > 0.0 && t < t_end));
        knots.push(t_end);
        knots
            .windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.omega_at(w[0]) + self.omega_at(w[1])))
            .sum()
    }
}

/// Ramp frequency whose counter phase `2πfL_shifters/v` cancels the
/// Sagnac phase `2k_gL_g²Ω/v` at every speed.
pub fn rotation_to_frequency(omega: f64, k_g: f64, l_g: f64, l_shifters: f64) -> Result<f64> {
    if !(l_shifters > 0.0) {
        return Err(Error::domain("l_shifters must be positive"));
    }
    Ok(k_g * l_g * l_g * omega / (PI * l_shifters))
}

/// Rotation angle represented by one second of ramp at 1 Hz, rad.
pub fn angle_per_cycle(geom: &InterferometerGeometry) -> f64 {
    PI * geom.l_shifters / (geom.k_g * geom.l_g * geom.l_g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoState {
    /// Ramp frequency, Hz (signed: negative swaps the ramp signs).
    pub f: f64,
    pub residual: f64,
    /// Accumulated angle, rad.
    pub angle: f64,
    /// Frequency correction per radian of residual, Hz/rad.
    pub gain: f64,
    /// Loop update interval, s.
    pub interval: f64,
}

impl ServoState {
    /// Starts at rest with the default gain, which removes half of the
    /// residual each update.
    pub fn at_rest(beam: &VelocityDistribution, geom: &InterferometerGeometry, interval: f64) -> Self {
        Self { f: 0.0, residual: 0.0, angle: 0.0, gain: default_gain(beam, geom), interval }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0) {
            return Err(Error::domain("servo update interval must be positive"));
        }
        if !(self.gain > 0.0) {
            return Err(Error::domain("servo gain must be positive"));
        }
        Ok(())
    }
}

/// `0.5 / |dφ′/df|` with `dφ′/df = 2πL_shifters/v0`.
pub fn default_gain(beam: &VelocityDistribution, geom: &InterferometerGeometry) -> f64 {
    0.5 * beam.v0 / (2.0 * PI * geom.l_shifters)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoSample {
    pub t: f64,
    pub omega: f64,
    pub f: f64,
    pub residual: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSetup {
    pub beam: VelocityDistribution,
    pub geometry: InterferometerGeometry,
    pub detection: Detection,
}

/// Runs the loop for `duration` seconds.
///
/// Each update reads the residual fringe phase from a synthetic scan at the
/// current rotation rate and ramp frequency, steps the frequency by
/// `gain·residual`, and integrates the frequency (trapezoid) into angle.
pub fn run_servo(
    profile: &RotationProfile,
    state0: ServoState,
    setup: &GyroSetup,
    duration: f64,
) -> Result<Vec<ServoSample>> {
    state0.validate()?;
    setup.beam.validate()?;
    setup.geometry.validate()?;
    setup.detection.validate()?;
    if !(duration > 0.0) {
        return Err(Error::domain("servo duration must be positive"));
    }
    let g = setup.geometry;
    let steps = (duration / state0.interval).round() as usize;
    let scale = angle_per_cycle(&g);
    let sagnac_coeff = 2.0 * g.k_g * g.l_g * g.l_g;

    let mut state = state0;
    let mut out = Vec::with_capacity(steps + 1);
    let mut growing = 0usize;
    let mut last_abs = f64::NAN;
    for k in 0..=steps {
        let t = k as f64 * state.interval;
        let omega = profile.omega_at(t);
        let amp = complex_fringe_amplitude(
            &|v: f64| sagnac_coeff * omega / v,
            &ShifterPair::ideal(state.f),
            &setup.beam,
            &g,
            0.0,
        )?;
        let fit = setup.detection.measure(g.k_g, amp.contrast, amp.phase, k as u64)?;
        state.residual = fit.phase;
        out.push(ServoSample { t, omega, f: state.f, residual: state.residual, angle: state.angle });

        let abs = state.residual.abs();
        if abs > 1e-9 && abs > DIVERGENCE_GROWTH * last_abs {
            growing += 1;
            if growing >= DIVERGENCE_STEPS {
                return Err(Error::Unstable(format!(
                    "residual phase grew for {DIVERGENCE_STEPS} consecutive updates (t = {t} s, |residual| = {abs:.3} rad)"
                )));
            }
        } else {
            growing = 0;
        }
        last_abs = abs;

        if k < steps {
            let f_next = state.f + state.gain * state.residual;
            state.angle += 0.5 * (state.f + f_next) * state.interval * scale;
            state.f = f_next;
        }
    }
    Ok(out)
}
