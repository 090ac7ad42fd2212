//! Closed-form phase formulas: transit-time interaction phases, the Stark
//! shift, Sagnac rotation phase, generic power-law dispersion, and the
//! rephasing condition for a `1/v` counter phase.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant, J·s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_8128e-12;
/// Converts a polarizability volume in Å³ to SI units (C·m²/V).
pub const ALPHA_SI_PER_CUBIC_ANGSTROM: f64 = 4.0 * PI * EPSILON_0 * 1e-30;
/// Sodium ground-state polarizability, Å³.
pub const SODIUM_ALPHA_A3: f64 = 24.1;
/// Wavevector of a 100 nm period grating, rad/m.
pub const DEFAULT_K_G: f64 = 2.0 * PI / 100e-9;

pub const DEFAULT_V0: f64 = 1722.6;
pub const DEFAULT_SIGMA_RATIO: f64 = 0.04;
pub const DEFAULT_TRUNC_K: f64 = 5.0;
pub const DEFAULT_L_SHIFTERS: f64 = 1.0;
pub const DEFAULT_L_INT: f64 = 0.1;
pub const DEFAULT_PLATE_GAP: f64 = 2.0e-3;
pub const DEFAULT_L_G: f64 = 0.66;

pub fn alpha_from_cubic_angstrom(a3: f64) -> f64 {
    a3 * ALPHA_SI_PER_CUBIC_ANGSTROM
}

pub fn alpha_to_cubic_angstrom(alpha_si: f64) -> f64 {
    alpha_si / ALPHA_SI_PER_CUBIC_ANGSTROM
}

fn require_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {x}")))
    }
}

/// Truncated Gaussian distribution of beam speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityDistribution {
    pub v0: f64,
    pub sigma_v: f64,
    pub trunc_k: f64,
}

impl VelocityDistribution {
    pub fn new(v0: f64, sigma_v: f64, trunc_k: f64) -> Result<Self> {
        let d = Self { v0, sigma_v, trunc_k };
        d.validate()?;
        Ok(d)
    }

    /// Distribution with `sigma_v = ratio · v0` and the default truncation.
    pub fn from_ratio(v0: f64, ratio: f64) -> Result<Self> {
        Self::new(v0, ratio * v0, DEFAULT_TRUNC_K)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("v0", self.v0)?;
        require_positive("sigma_v", self.sigma_v)?;
        if !(self.trunc_k >= 3.0) {
            return Err(Error::domain(format!(
                "trunc_k must be at least 3, got {}",
                self.trunc_k
            )));
        }
        if self.v0 - self.trunc_k * self.sigma_v <= 0.0 {
            return Err(Error::domain(
                "truncated velocity support reaches non-positive speeds",
            ));
        }
        Ok(())
    }

    pub fn sigma_ratio(&self) -> f64 {
        self.sigma_v / self.v0
    }

    /// Lower and upper speed of the truncated support.
    pub fn support(&self) -> (f64, f64) {
        let h = self.trunc_k * self.sigma_v;
        (self.v0 - h, self.v0 + h)
    }

    fn norm(&self) -> f64 {
        libm::erf(self.trunc_k / std::f64::consts::SQRT_2)
    }

    /// Probability density, renormalized over the truncated support.
    pub fn pdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v < lo || v > hi {
            return 0.0;
        }
        let z = (v - self.v0) / self.sigma_v;
        (-0.5 * z * z).exp() / (self.sigma_v * (2.0 * PI).sqrt() * self.norm())
    }

    /// Draws one speed by rejection from the untruncated Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= self.trunc_k {
                return self.v0 + self.sigma_v * z;
            }
        }
    }
}

impl Default for VelocityDistribution {
    fn default() -> Self {
        Self {
            v0: DEFAULT_V0,
            sigma_v: DEFAULT_SIGMA_RATIO * DEFAULT_V0,
            trunc_k: DEFAULT_TRUNC_K,
        }
    }
}

/// Parallel-plate interaction region on one interferometer arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionRegion {
    /// Plate voltage, V.
    pub voltage: f64,
    /// Plate separation, m.
    pub d: f64,
    /// Region length, m.
    pub l_int: f64,
    /// Polarizability, C·m²/V.
    pub alpha: f64,
}

impl InteractionRegion {
    pub fn validate(&self) -> Result<()> {
        require_positive("d", self.d)?;
        require_positive("l_int", self.l_int)?;
        require_positive("alpha", self.alpha)?;
        if !(self.voltage >= 0.0) {
            return Err(Error::domain("plate voltage must be non-negative"));
        }
        Ok(())
    }

    pub fn omega_int(&self) -> Result<f64> {
        stark_angular_frequency(self.voltage, self.d, self.alpha)
    }

    /// Interaction phase for an atom of speed `v`.
    pub fn phase(&self, v: f64) -> Result<f64> {
        interaction_phase(self.omega_int()?, self.l_int, v)
    }

    /// Phase per unit V² at speed `v`, rad/V².
    pub fn phase_per_volt_squared(&self, v: f64) -> Result<f64> {
        let unit = InteractionRegion { voltage: 1.0, ..*self };
        unit.phase(v)
    }
}

impl Default for InteractionRegion {
    fn default() -> Self {
        Self {
            voltage: 0.0,
            d: DEFAULT_PLATE_GAP,
            l_int: DEFAULT_L_INT,
            alpha: alpha_from_cubic_angstrom(SODIUM_ALPHA_A3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerGeometry {
    /// Distance between the two phase shifters, m.
    pub l_shifters: f64,
    /// Grating separation, m.
    pub l_g: f64,
    /// Grating wavevector, rad/m.
    pub k_g: f64,
}

impl InterferometerGeometry {
    pub fn validate(&self) -> Result<()> {
        require_positive("l_shifters", self.l_shifters)?;
        require_positive("l_g", self.l_g)?;
        require_positive("k_g", self.k_g)
    }

    pub fn fringe_period(&self) -> f64 {
        2.0 * PI / self.k_g
    }
}

impl Default for InterferometerGeometry {
    fn default() -> Self {
        Self {
            l_shifters: DEFAULT_L_SHIFTERS,
            l_g: DEFAULT_L_G,
            k_g: DEFAULT_K_G,
        }
    }
}

/// Transit-time phase `ω·L/v` of a uniform potential region.
pub fn interaction_phase(omega_int: f64, l_int: f64, v: f64) -> Result<f64> {
    require_positive("v", v)?;
    require_positive("l_int", l_int)?;
    Ok(omega_int * l_int / v)
}

/// Stark shift `½αV²/d²` expressed as an angular frequency.
pub fn stark_angular_frequency(voltage: f64, d: f64, alpha: f64) -> Result<f64> {
    require_positive("d", d)?;
    require_positive("alpha", alpha)?;
    Ok(0.5 * alpha * voltage * voltage / (d * d) / HBAR)
}

pub fn power_law_phase(v: f64, phi0: f64, v0: f64, n: i32) -> Result<f64> {
    require_positive("v", v)?;
    require_positive("v0", v0)?;
    Ok(phi0 * (v / v0).powi(n))
}

/// Interaction phase with the best signal to noise when no counter phase is
/// applied: `|1/n|·v0/σ_v`.
pub fn optimal_uncompensated_phase(n: i32, v0: f64, sigma_v: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n = 0 has no dispersion and no optimum"));
    }
    require_positive("v0", v0)?;
    require_positive("sigma_v", sigma_v)?;
    Ok((v0 / sigma_v) / f64::from(n.abs()))
}

/// Operating point reachable with a `1/v` counter phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseBound {
    Finite(f64),
    /// The counter phase cancels the dispersion exactly (`n = −1`).
    Unbounded,
}

impl PhaseBound {
    pub fn value(self) -> Option<f64> {
        match self {
            PhaseBound::Finite(x) => Some(x),
            PhaseBound::Unbounded => None,
        }
    }
}

/// `|1/(n(n+1))|·(v0/σ_v)²`, or `Unbounded` for `n = −1`.
pub fn compensated_phase_bound(n: i32, v0: f64, sigma_v: f64) -> Result<PhaseBound> {
    if n == 0 {
        return Err(Error::domain("n = 0 has no dispersion to compensate"));
    }
    require_positive("v0", v0)?;
    require_positive("sigma_v", sigma_v)?;
    if n == -1 {
        return Ok(PhaseBound::Unbounded);
    }
    let r = v0 / sigma_v;
    let nn = f64::from(n) * f64::from(n + 1);
    Ok(PhaseBound::Finite(r * r / nn.abs()))
}

/// Rotation phase `2·k_g·L_g²·Ω/v`.
pub fn sagnac_phase(v: f64, omega: f64, k_g: f64, l_g: f64) -> Result<f64> {
    require_positive("v", v)?;
    Ok(2.0 * k_g * l_g * l_g * omega / v)
}

/// Ramp frequency `ω·L_int/(2π·L_shifters)` at which the counter phase
/// cancels a transit-time interaction for every speed.
pub fn rephasing_frequency(omega_int: f64, l_int: f64, l_shifters: f64) -> Result<f64> {
    require_positive("l_shifters", l_shifters)?;
    Ok(omega_int * l_int / (2.0 * PI * l_shifters))
}

/// Signed ramp frequency whose counter phase cancels the first-order
/// velocity dependence of `phi0·(v/v0)ⁿ` around `v0`.
///
/// A negative result means the ramp signs must be swapped.
pub fn first_order_counter_frequency(n: i32, phi0: f64, v0: f64, l_shifters: f64) -> Result<f64> {
    require_positive("v0", v0)?;
    require_positive("l_shifters", l_shifters)?;
    Ok(-f64::from(n) * phi0 * v0 / (2.0 * PI * l_shifters))
}

/// Velocity dependence of an interaction phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InteractionModel {
    /// `phi0·(v/v0)ⁿ`.
    PowerLaw { phi0: f64, v0: f64, n: i32 },
    /// First-order Taylor expansion of the power law around `v0`.
    Linearized { phi0: f64, v0: f64, n: i32 },
}

impl InteractionModel {
    pub fn inverse_velocity(phi0: f64, v0: f64) -> Self {
        InteractionModel::PowerLaw { phi0, v0, n: -1 }
    }

    pub fn phase(&self, v: f64) -> f64 {
        match *self {
            InteractionModel::PowerLaw { phi0, v0, n } => phi0 * (v / v0).powi(n),
            InteractionModel::Linearized { phi0, v0, n } => {
                phi0 * (1.0 + f64::from(n) * (v - v0) / v0)
            }
        }
    }

    /// Phase at the reference speed.
    pub fn phi0(&self) -> f64 {
        match *self {
            InteractionModel::PowerLaw { phi0, .. } | InteractionModel::Linearized { phi0, .. } => {
                phi0
            }
        }
    }
}
