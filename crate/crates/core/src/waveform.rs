//! Phase-shifter drive signals.
//!
//! Each shifter applies a periodic differential phase: an ideal sawtooth
//! ramping linearly to ±2π, or the RC-filtered approximation
//! `±γ(1 − e^{−t/RC})²` that is reset to zero by a diode during the off
//! part of the duty cycle. Two shifters of opposite sign separated by a
//! flight distance produce a time-independent counter phase `−2πfL/v`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::HBAR;
use crate::quadrature::GaussLegendre;

/// Gauss–Legendre nodes per smooth piece of a ramp period.
pub const NODES_PER_PIECE: usize = 48;

/// Nominal RC drive: peak scale 0.83π rad.
pub const NOMINAL_GAMMA: f64 = 0.83 * PI;
/// Nominal RC drive: `rc·f = 1/2.4`.
pub const NOMINAL_RC_TIMES_F: f64 = 1.0 / 2.4;
pub const NOMINAL_DUTY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Linear ramp from 0 to `sign·amplitude` over each period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealSawtooth {
    pub f: f64,
    pub sign: Sign,
    /// Ramp maximum, nominally 2π.
    pub amplitude: f64,
}

impl IdealSawtooth {
    pub fn new(f: f64, sign: Sign) -> Self {
        Self { f, sign, amplitude: 2.0 * PI }
    }
}

/// RC-filtered square-root voltage ramp driving a `V²` phase response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcRamp {
    pub f: f64,
    /// On fraction of the period, `0 < duty < 1`.
    pub duty: f64,
    /// Peak-scale parameter, rad.
    pub gamma: f64,
    /// Filter time constant, s.
    pub rc: f64,
    pub sign: Sign,
}

impl RcRamp {
    /// Drive with the nominal γ = 0.83π, rc = 1/(2.4f), 90% duty cycle.
    pub fn nominal(f: f64, sign: Sign) -> Self {
        Self {
            f,
            duty: NOMINAL_DUTY,
            gamma: NOMINAL_GAMMA,
            rc: NOMINAL_RC_TIMES_F / f,
            sign,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Waveform {
    /// Identically zero phase.
    Null,
    Ideal(IdealSawtooth),
    Rc(RcRamp),
}

impl Waveform {
    pub fn ideal(f: f64, sign: Sign) -> Self {
        Waveform::Ideal(IdealSawtooth::new(f, sign))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Waveform::Null => Ok(()),
            Waveform::Ideal(w) => {
                if !(w.f > 0.0 && w.f.is_finite()) {
                    return Err(Error::domain("sawtooth frequency must be positive"));
                }
                if !w.amplitude.is_finite() {
                    return Err(Error::domain("sawtooth amplitude must be finite"));
                }
                Ok(())
            }
            Waveform::Rc(w) => {
                if !(w.f > 0.0 && w.f.is_finite()) {
                    return Err(Error::domain("RC ramp frequency must be positive"));
                }
                if !(w.duty > 0.0 && w.duty < 1.0) {
                    return Err(Error::domain("duty cycle must lie in (0, 1)"));
                }
                if !(w.gamma > 0.0) {
                    return Err(Error::domain("gamma must be positive"));
                }
                if !(w.rc > 0.0) {
                    return Err(Error::domain("rc must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Ramp frequency; `None` for the null waveform.
    pub fn frequency(&self) -> Option<f64> {
        match self {
            Waveform::Null => None,
            Waveform::Ideal(w) => Some(w.f),
            Waveform::Rc(w) => Some(w.f),
        }
    }

    pub fn sign(&self) -> Option<Sign> {
        match self {
            Waveform::Null => None,
            Waveform::Ideal(w) => Some(w.sign),
            Waveform::Rc(w) => Some(w.sign),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Waveform::Null)
    }

    /// The same waveform with opposite sign.
    pub fn mirrored(&self) -> Waveform {
        match *self {
            Waveform::Null => Waveform::Null,
            Waveform::Ideal(w) => Waveform::Ideal(IdealSawtooth { sign: w.sign.flipped(), ..w }),
            Waveform::Rc(w) => Waveform::Rc(RcRamp { sign: w.sign.flipped(), ..w }),
        }
    }

    /// Multiplies the ramp maximum (amplitude or γ) by `factor`.
    pub fn scaled(&self, factor: f64) -> Waveform {
        match *self {
            Waveform::Null => Waveform::Null,
            Waveform::Ideal(w) => Waveform::Ideal(IdealSawtooth {
                amplitude: w.amplitude * factor,
                ..w
            }),
            Waveform::Rc(w) => Waveform::Rc(RcRamp { gamma: w.gamma * factor, ..w }),
        }
    }

    /// Applied phase at time `t`, wrapped to one period.
    pub fn phase_at(&self, t: f64) -> f64 {
        match *self {
            Waveform::Null => 0.0,
            Waveform::Ideal(w) => {
                let period = 1.0 / w.f;
                let tp = t.rem_euclid(period);
                w.sign.value() * w.amplitude * w.f * tp
            }
            Waveform::Rc(w) => {
                let period = 1.0 / w.f;
                let tp = t.rem_euclid(period);
                if tp < w.duty * period {
                    let rise = 1.0 - (-tp / w.rc).exp();
                    w.sign.value() * w.gamma * rise * rise
                } else {
                    0.0
                }
            }
        }
    }

    /// Discontinuities within one period, as fractions of the period.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Waveform::Null => Vec::new(),
            Waveform::Ideal(_) => vec![0.0],
            Waveform::Rc(w) => vec![0.0, w.duty],
        }
    }
}

/// Common ramp period of two waveforms, ignoring null ones.
pub(crate) fn common_period(w1: &Waveform, w2: &Waveform) -> Result<Option<f64>> {
    match (w1.frequency(), w2.frequency()) {
        (None, None) => Ok(None),
        (Some(f), None) | (None, Some(f)) => Ok(Some(1.0 / f)),
        (Some(a), Some(b)) => {
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
                Err(Error::domain(format!(
                    "waveforms must share one ramp frequency, got {a} Hz and {b} Hz"
                )))
            } else {
                Ok(Some(1.0 / a))
            }
        }
    }
}

/// Average of `g(t)` over `[0, period)`, split at the given breakpoint times
/// so that each piece is smooth.
pub(crate) fn period_average<T, G>(period: f64, breaks: &[f64], nodes: usize, g: G) -> T
where
    T: Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    G: Fn(f64) -> T,
{
    let mut cuts: Vec<f64> = breaks
        .iter()
        .map(|&b| b.rem_euclid(period))
        .chain([0.0, period])
        .collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * period);
    let rule = GaussLegendre::cached(nodes);
    let mut acc = T::default();
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a <= 0.0 {
            continue;
        }
        for (t, w) in rule.on_interval(a, b) {
            acc = acc + g(t) * (w / period);
        }
    }
    acc
}

/// Breakpoint times in `[0, period)` for `w` evaluated at `t + shift`.
pub(crate) fn shifted_breaks(w: &Waveform, period: f64, shift: f64) -> Vec<f64> {
    w.breakpoints()
        .into_iter()
        .map(|b| (b * period - shift).rem_euclid(period))
        .collect()
}

/// Counter phase `−2π·f·L/v`, unwrapped.
pub fn counter_phase(v: f64, f: f64, l_shifters: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::domain(format!("speed must be positive, got {v}")));
    }
    Ok(-2.0 * PI * f * l_shifters / v)
}

/// `φ₁(t) + φ₂(t + τ)`.
pub fn pair_sum_phase(w1: &Waveform, w2: &Waveform, t: f64, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::domain("flight time must be non-negative"));
    }
    Ok(w1.phase_at(t) + w2.phase_at(t + tau))
}

/// Mean of `φ₁(t) + φ₂(t)` over one ramp period.
pub fn asymmetry_error(w1: &Waveform, w2: &Waveform) -> Result<f64> {
    let Some(period) = common_period(w1, w2)? else {
        return Ok(0.0);
    };
    let mut breaks = shifted_breaks(w1, period, 0.0);
    breaks.extend(shifted_breaks(w2, period, 0.0));
    Ok(period_average(period, &breaks, NODES_PER_PIECE, |t| {
        w1.phase_at(t) + w2.phase_at(t)
    }))
}

/// First Fourier coefficient of `exp(iφ(t))` at the ramp's own rotation
/// sense: `⟨exp(iφ(t))·exp(−i·sign·2πft)⟩`.
pub fn first_harmonic(w: &Waveform) -> Complex64 {
    let (Some(f), Some(sign)) = (w.frequency(), w.sign()) else {
        return Complex64::new(0.0, 0.0);
    };
    let period = 1.0 / f;
    let s = sign.value();
    period_average(period, &shifted_breaks(w, period, 0.0), NODES_PER_PIECE, |t| {
        Complex64::from_polar(1.0, w.phase_at(t) - s * 2.0 * PI * f * t)
    })
}

/// RMS over arrival time of the deviation between the applied pair phase
/// and the ideal counter phase `−2πfτ`, wrapped to (−π, π].
pub fn counter_phase_error_rms(w1: &Waveform, w2: &Waveform, tau: f64) -> Result<f64> {
    let Some(period) = common_period(w1, w2)? else {
        return Ok(0.0);
    };
    let f = 1.0 / period;
    let mut breaks = shifted_breaks(w1, period, 0.0);
    breaks.extend(shifted_breaks(w2, period, tau));
    let ideal = -2.0 * PI * f * tau;
    let ms = period_average(period, &breaks, NODES_PER_PIECE, |t| {
        let e = wrap_to_pi(w1.phase_at(t) + w2.phase_at(t + tau) - ideal);
        e * e
    });
    Ok(ms.sqrt())
}

/// Wraps an angle into (−π, π].
pub fn wrap_to_pi(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// Cylinder-and-ground-plane gradient field phase shifter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShifterGeometry {
    /// Cylinder radius, m.
    pub r: f64,
    /// Cylinder axis to ground plane, m.
    pub a: f64,
    /// Separation of the two interferometer paths, m.
    pub w: f64,
    /// Mean distance of the paths from the cylinder axis, m.
    pub x: f64,
    /// Dimensionless leading constant, nominally π/2.
    pub prefactor: f64,
}

impl Default for ShifterGeometry {
    fn default() -> Self {
        Self {
            r: 0.5e-3,
            a: 1.5e-3,
            w: 50e-6,
            x: 1.0e-3,
            prefactor: PI / 2.0,
        }
    }
}

impl ShifterGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r < self.a) {
            return Err(Error::domain("cylinder geometry requires 0 < r < a"));
        }
        if !(self.w > 0.0 && self.x > 0.0) {
            return Err(Error::domain("path separation and distance must be positive"));
        }
        Ok(())
    }
}

/// Differential phase from a charged cylinder at voltage `v0_volts`:
/// `prefactor/ħ · ln⁻²(2a/r) · α·w·V0²/(v·x²)`.
pub fn cylinder_phase(geom: &ShifterGeometry, v0_volts: f64, v: f64, alpha: f64) -> Result<f64> {
    geom.validate()?;
    if !(v > 0.0) {
        return Err(Error::domain(format!("speed must be positive, got {v}")));
    }
    let log = (2.0 * geom.a / geom.r).ln();
    Ok(geom.prefactor / HBAR / (log * log) * alpha * geom.w * v0_volts * v0_volts
        / (v * geom.x * geom.x))
}

/// Result of tuning an RC drive for the largest first harmonic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcOptimum {
    pub gamma: f64,
    pub rc_times_f: f64,
    pub harmonic: f64,
}

/// Maximizes `|first_harmonic|` of an RC ramp over `(γ, rc·f)` at fixed duty.
pub fn optimize_rc_ramp(duty: f64) -> Result<RcOptimum> {
    if !(duty > 0.0 && duty < 1.0) {
        return Err(Error::domain("duty cycle must lie in (0, 1)"));
    }
    let score = |gamma: f64, rcf: f64| -> f64 {
        if gamma <= 0.0 || rcf <= 0.0 {
            return 0.0;
        }
        let w = Waveform::Rc(RcRamp { f: 1.0, duty, gamma, rc: rcf, sign: Sign::Plus });
        first_harmonic(&w).norm()
    };
    let mut best = (0.0, 1.0, 1.0);
    for i in 0..40 {
        let gamma = 0.5 + 0.5 * i as f64;
        for j in 0..30 {
            let rcf = 0.05 + 0.1 * j as f64;
            let s = score(gamma, rcf);
            if s > best.0 {
                best = (s, gamma, rcf);
            }
        }
    }
    // compass search refinement
    let (mut s, mut g, mut r) = best;
    let (mut dg, mut dr) = (0.25, 0.05);
    while dg > 1e-7 || dr > 1e-8 {
        let mut improved = false;
        for (cg, cr) in [(g + dg, r), (g - dg, r), (g, r + dr), (g, r - dr)] {
            let c = score(cg, cr);
            if c > s {
                (s, g, r) = (c, cg, cr);
                improved = true;
            }
        }
        if !improved {
            dg *= 0.5;
            dr *= 0.5;
        }
    }
    Ok(RcOptimum { gamma: g, rc_times_f: r, harmonic: s })
}
