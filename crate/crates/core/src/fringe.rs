//! Velocity- and time-averaged fringe synthesis.
//!
//! The observable fringe is the average of the unit phasor
//! `exp{i[φ_int(v) + φ₁(t) + φ₂(t + L/v)]}` over the beam's speed
//! distribution and over arrival times within one ramp period. Its modulus
//! is the contrast C′ and its argument the fringe phase φ′.
//!
//! Two engines compute the average: a deterministic Gauss–Legendre
//! quadrature with a node-doubling convergence check, and a Monte Carlo
//! atom-counting estimate used as an independent oracle.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{InterferometerGeometry, VelocityDistribution};
use crate::quadrature::GaussLegendre;
use crate::waveform::{common_period, period_average, shifted_breaks, Sign, Waveform};

/// Velocity nodes of the base quadrature rule.
pub const VELOCITY_NODES: usize = 257;
/// Largest change in C′ tolerated when the node count is doubled.
pub const CONVERGENCE_TOL: f64 = 1e-6;
const TIME_NODES: usize = 48;
const MC_BLOCKS: usize = 100;
pub const MIN_MC_ATOMS: usize = 10_000;

/// The two phase shifters. The second is evaluated at `t + offset + L/v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShifterPair {
    pub first: Waveform,
    pub second: Waveform,
    /// Relative ramp start of the second shifter, s.
    pub offset: f64,
}

impl ShifterPair {
    pub fn none() -> Self {
        Self { first: Waveform::Null, second: Waveform::Null, offset: 0.0 }
    }

    pub fn new(first: Waveform, second: Waveform) -> Self {
        Self { first, second, offset: 0.0 }
    }

    /// Ideal opposed sawtooth pair. Negative `f` swaps the ramp signs;
    /// zero gives no shifters.
    pub fn ideal(f: f64) -> Self {
        if f == 0.0 {
            return Self::none();
        }
        let s = if f > 0.0 { Sign::Plus } else { Sign::Minus };
        Self::new(Waveform::ideal(f.abs(), s), Waveform::ideal(f.abs(), s.flipped()))
    }

    pub fn validate(&self) -> Result<()> {
        self.first.validate()?;
        self.second.validate()?;
        common_period(&self.first, &self.second)?;
        if !self.offset.is_finite() {
            return Err(Error::domain("shifter offset must be finite"));
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        self.first.is_null() && self.second.is_null()
    }

    /// Signed counter-phase frequency: `+f` when the first shifter ramps up.
    pub fn counter_frequency(&self) -> f64 {
        match (self.first.frequency(), self.first.sign()) {
            (Some(f), Some(s)) => s.value() * f,
            _ => 0.0,
        }
    }

    /// `Some(s)` when both shifters are full 2π sawtooths of opposite sign
    /// at one frequency, so the pair sum is `−s·2πfδ` at every arrival time.
    fn exact_ideal_sign(&self) -> Option<f64> {
        match (self.first, self.second) {
            (Waveform::Ideal(a), Waveform::Ideal(b))
                if a.f == b.f
                    && a.sign != b.sign
                    && a.amplitude == 2.0 * PI
                    && b.amplitude == 2.0 * PI =>
            {
                Some(a.sign.value())
            }
            _ => None,
        }
    }

    /// Arrival-time averaged phasor `⟨exp{i[φ₁(t) + φ₂(t + τ + offset)]}⟩ₜ`.
    pub fn time_factor(&self, tau: f64) -> Result<Complex64> {
        let Some(period) = common_period(&self.first, &self.second)? else {
            return Ok(Complex64::new(1.0, 0.0));
        };
        let delay = tau + self.offset;
        if let Some(s) = self.exact_ideal_sign() {
            let f = 1.0 / period;
            return Ok(Complex64::from_polar(1.0, -s * 2.0 * PI * (f * delay).fract()));
        }
        let mut breaks = shifted_breaks(&self.first, period, 0.0);
        breaks.extend(shifted_breaks(&self.second, period, delay));
        Ok(period_average(period, &breaks, TIME_NODES, |t| {
            Complex64::from_polar(1.0, self.first.phase_at(t) + self.second.phase_at(t + delay))
        }))
    }

    fn instantaneous(&self, t: f64, tau: f64) -> f64 {
        self.first.phase_at(t) + self.second.phase_at(t + tau + self.offset)
    }
}

/// Velocity-averaged complex fringe amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeAmplitude {
    pub contrast: f64,
    /// Fringe phase, unwrapped against the caller's reference.
    pub phase: f64,
    /// |ΔC′| between the base and the doubled quadrature rule.
    pub convergence: f64,
}

/// Returns the representative of `phase + 2πk` closest to `reference`.
pub fn unwrap_near(phase: f64, reference: f64) -> f64 {
    phase + 2.0 * PI * ((reference - phase) / (2.0 * PI)).round()
}

/// Unwraps a sequence by continuity, the first element against `first_ref`.
pub fn unwrap_sequence(phases: &[f64], first_ref: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut reference = first_ref;
    for &p in phases {
        let u = unwrap_near(p, reference);
        out.push(u);
        reference = u;
    }
    out
}

/// Speeds at which a reset of the second shifter coincides with a reset of
/// the first. The arrival-time average has a kink there.
fn coincidence_speeds(pair: &ShifterPair, lo: f64, hi: f64, l_shifters: f64) -> Result<Vec<f64>> {
    if pair.first.is_null() || pair.second.is_null() || pair.exact_ideal_sign().is_some() {
        return Ok(Vec::new());
    }
    let Some(period) = common_period(&pair.first, &pair.second)? else {
        return Ok(Vec::new());
    };
    let cycles = |v: f64| (l_shifters / v + pair.offset) / period;
    let (q_min, q_max) = (cycles(hi), cycles(lo));
    let mut out = Vec::new();
    for b1 in pair.first.breakpoints() {
        for b2 in pair.second.breakpoints() {
            let c = b2 - b1;
            let m_lo = (q_min - c).ceil() as i64;
            let m_hi = (q_max - c).floor() as i64;
            for m in m_lo..=m_hi {
                let delay = (c + m as f64) * period - pair.offset;
                if delay > 0.0 {
                    let v = l_shifters / delay;
                    if v > lo && v < hi {
                        out.push(v);
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    Ok(out)
}

fn velocity_average<F>(
    phi_int: &F,
    pair: &ShifterPair,
    dist: &VelocityDistribution,
    l_shifters: f64,
    nodes: usize,
) -> Result<Complex64>
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    let (lo, hi) = dist.support();
    let mut cuts = vec![lo];
    cuts.extend(coincidence_speeds(pair, lo, hi, l_shifters)?);
    cuts.push(hi);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut norm = 0.0;
    for panel in cuts.windows(2) {
        let (a, b) = (panel[0], panel[1]);
        let share = ((b - a) / (hi - lo) * nodes as f64).ceil() as usize;
        let rule = GaussLegendre::cached(share.max(8));
        for (v, w) in rule.on_interval(a, b) {
            let weight = w * dist.pdf(v);
            let tf = pair.time_factor(l_shifters / v)?;
            acc += Complex64::from_polar(weight, phi_int(v)) * tf;
            norm += weight;
        }
    }
    Ok(acc / norm)
}

/// Complex fringe amplitude by quadrature over speed and arrival time.
///
/// `reference` selects the 2π branch of the returned phase.
pub fn complex_fringe_amplitude<F>(
    phi_int: &F,
    pair: &ShifterPair,
    dist: &VelocityDistribution,
    geom: &InterferometerGeometry,
    reference: f64,
) -> Result<FringeAmplitude>
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    dist.validate()?;
    geom.validate()?;
    pair.validate()?;
    let coarse = velocity_average(phi_int, pair, dist, geom.l_shifters, VELOCITY_NODES)?;
    let fine = velocity_average(phi_int, pair, dist, geom.l_shifters, 2 * VELOCITY_NODES)?;
    let convergence = (fine.norm() - coarse.norm()).abs();
    if !(convergence <= CONVERGENCE_TOL) {
        return Err(Error::Numerical(format!(
            "velocity quadrature not converged: doubling nodes changed contrast by {convergence:.3e}"
        )));
    }
    Ok(FringeAmplitude {
        contrast: fine.norm().min(1.0),
        phase: unwrap_near(fine.arg(), reference),
        convergence,
    })
}

/// Closed-form Gaussian envelope `(C′, φ′)` for a `1/v` interaction with
/// an ideal counter phase at frequency `f`.
pub fn gaussian_envelope(
    phi_int_v0: f64,
    sigma_ratio: f64,
    f: f64,
    l_shifters: f64,
    v0: f64,
) -> Result<(f64, f64)> {
    if !(sigma_ratio > 0.0) {
        return Err(Error::domain("sigma ratio must be positive"));
    }
    if !(v0 > 0.0) {
        return Err(Error::domain("v0 must be positive"));
    }
    let phase = phi_int_v0 - 2.0 * PI * f * l_shifters / v0;
    let contrast = (-0.5 * sigma_ratio * sigma_ratio * phase * phase).exp();
    Ok((contrast, phase))
}

/// Monte Carlo estimate of the fringe amplitude with jackknife errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McAmplitude {
    pub contrast: f64,
    pub phase: f64,
    pub se_contrast: f64,
    pub se_phase: f64,
    pub n_atoms: usize,
}

/// Samples atom speeds and arrival times and averages the unit phasors.
///
/// Atoms are split into a fixed number of blocks, each with its own ChaCha
/// stream, and block sums are reduced in block order, so the result depends
/// only on `seed` and `n_atoms`.
pub fn monte_carlo_amplitude<F>(
    phi_int: &F,
    pair: &ShifterPair,
    dist: &VelocityDistribution,
    geom: &InterferometerGeometry,
    n_atoms: usize,
    seed: u64,
    reference: f64,
) -> Result<McAmplitude>
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    if n_atoms < MIN_MC_ATOMS {
        return Err(Error::domain(format!(
            "Monte Carlo needs at least {MIN_MC_ATOMS} atoms, got {n_atoms}"
        )));
    }
    dist.validate()?;
    geom.validate()?;
    pair.validate()?;
    let period = common_period(&pair.first, &pair.second)?;
    let blocks = MC_BLOCKS.min(n_atoms);
    let base = n_atoms / blocks;
    let extra = n_atoms % blocks;

    let sums: Vec<(Complex64, usize)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = base + usize::from(b < extra);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut acc = Complex64::new(0.0, 0.0);
            for _ in 0..count {
                let v = dist.sample(&mut rng);
                let mut phase = phi_int(v);
                if let Some(p) = period {
                    let t = rng.gen::<f64>() * p;
                    phase += pair.instantaneous(t, geom.l_shifters / v);
                }
                acc += Complex64::from_polar(1.0, phase);
            }
            (acc, count)
        })
        .collect();

    let total: Complex64 = sums.iter().map(|(s, _)| *s).sum();
    let mean = total / n_atoms as f64;
    let contrast = mean.norm();
    let phase = unwrap_near(mean.arg(), reference);

    // leave-one-block-out jackknife
    let bf = blocks as f64;
    let loo: Vec<(f64, f64)> = sums
        .iter()
        .map(|(s, c)| {
            let m = (total - s) / (n_atoms - c) as f64;
            (m.norm(), unwrap_near(m.arg(), phase))
        })
        .collect();
    let mean_c = loo.iter().map(|x| x.0).sum::<f64>() / bf;
    let mean_p = loo.iter().map(|x| x.1).sum::<f64>() / bf;
    let var_c = (bf - 1.0) / bf * loo.iter().map(|x| (x.0 - mean_c).powi(2)).sum::<f64>();
    let var_p = (bf - 1.0) / bf * loo.iter().map(|x| (x.1 - mean_p).powi(2)).sum::<f64>();

    Ok(McAmplitude {
        contrast,
        phase,
        se_contrast: var_c.sqrt(),
        se_phase: var_p.sqrt(),
        n_atoms,
    })
}

/// Fringe parameters: mean rate N, amplitude A, contrast C′ and phase φ′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeObservable {
    /// Mean intensity, counts/s.
    pub mean_rate: f64,
    /// Fringe amplitude before dephasing, counts/s.
    pub amplitude: f64,
    pub contrast: f64,
    pub phase: f64,
}

impl FringeObservable {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_rate >= 0.0) {
            return Err(Error::domain("mean rate must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::domain(format!("contrast {} outside [0, 1]", self.contrast)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude <= self.mean_rate) {
            return Err(Error::domain("fringe amplitude must satisfy 0 ≤ A ≤ N"));
        }
        Ok(())
    }

    /// Expected rate at grating offset `z`.
    pub fn rate(&self, k_g: f64, z: f64) -> f64 {
        self.mean_rate + self.amplitude * self.contrast * (k_g * z + self.phase).cos()
    }
}

/// How detector counts are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountNoise {
    /// Expected (non-integer) counts, no noise.
    Expected,
    Poisson { seed: u64 },
}

/// Detected counts versus grating position.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorScan {
    pub z: Vec<f64>,
    pub counts: Vec<f64>,
    /// Integration time per point, s.
    pub dwell: f64,
    pub seed: Option<u64>,
}

impl DetectorScan {
    pub fn validate(&self, k_g: f64) -> Result<()> {
        if self.z.len() != self.counts.len() {
            return Err(Error::domain("positions and counts differ in length"));
        }
        if self.z.len() < 2 {
            return Err(Error::domain("scan needs at least two points"));
        }
        if self.counts.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::domain("counts must be non-negative"));
        }
        if !(self.dwell > 0.0) {
            return Err(Error::domain("dwell must be positive"));
        }
        let lo = self.z.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = self.z.len() as f64;
        let covered = (hi - lo) * n / (n - 1.0);
        if covered < (2.0 * PI / k_g) * (1.0 - 1e-9) {
            return Err(Error::domain("scan does not cover a full fringe period"));
        }
        Ok(())
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// CSV with `# key=value` metadata lines followed by `z_m,counts` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dwell_s={}", self.dwell);
        match self.seed {
            Some(seed) => {
                let _ = writeln!(s, "# seed={seed}");
            }
            None => s.push_str("# seed=none\n"),
        }
        s.push_str("z_m,counts\n");
        for (z, c) in self.z.iter().zip(&self.counts) {
            let _ = writeln!(s, "{z:e},{c}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut dwell = None;
        let mut seed = None;
        let mut z = Vec::new();
        let mut counts = Vec::new();
        let mut header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "dwell_s" => dwell = v.trim().parse::<f64>().ok(),
                        "seed" => seed = v.trim().parse::<u64>().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if !header {
                if line != "z_m,counts" {
                    return Err(Error::domain(format!("unexpected scan header `{line}`")));
                }
                header = true;
                continue;
            }
            let bad = || Error::domain(format!("malformed scan row {}: `{line}`", lineno + 1));
            let (a, b) = line.split_once(',').ok_or_else(bad)?;
            z.push(a.trim().parse::<f64>().map_err(|_| bad())?);
            counts.push(b.trim().parse::<f64>().map_err(|_| bad())?);
        }
        let dwell = dwell.ok_or_else(|| Error::domain("scan is missing `# dwell_s=`"))?;
        Ok(Self { z, counts, dwell, seed })
    }
}

/// Evenly spaced positions tiling `periods` fringe periods.
pub fn scan_positions(k_g: f64, points: usize, periods: f64) -> Vec<f64> {
    let span = periods * 2.0 * PI / k_g;
    (0..points).map(|i| span * i as f64 / points as f64).collect()
}

/// Draws detector counts for the fringe `obs` at positions `z`.
pub fn synthesize_scan(
    obs: &FringeObservable,
    z: &[f64],
    k_g: f64,
    dwell: f64,
    noise: CountNoise,
) -> Result<DetectorScan> {
    obs.validate()?;
    if !(dwell > 0.0) {
        return Err(Error::domain("dwell must be positive"));
    }
    let expected: Vec<f64> = z.iter().map(|&zi| dwell * obs.rate(k_g, zi)).collect();
    if let Some(bad) = expected.iter().find(|&&m| m < 0.0) {
        return Err(Error::domain(format!("negative expected count {bad}")));
    }
    let (counts, seed) = match noise {
        CountNoise::Expected => (expected, None),
        CountNoise::Poisson { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let counts = expected
                .iter()
                .map(|&m| {
                    if m > 0.0 {
                        Poisson::new(m).map(|p| p.sample(&mut rng)).map_err(|e| {
                            Error::Numerical(format!("poisson mean {m}: {e}"))
                        })
                    } else {
                        Ok(0.0)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            (counts, Some(seed))
        }
    };
    Ok(DetectorScan { z: z.to_vec(), counts, dwell, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::InteractionModel;
    use crate::waveform::RcRamp;
    use proptest::prelude::*;

    fn defaults() -> (VelocityDistribution, InterferometerGeometry) {
        (VelocityDistribution::default(), InterferometerGeometry::default())
    }

    #[test]
    fn dephased_inverse_velocity_contrast() {
        let (dist, geom) = defaults();
        let model = InteractionModel::inverse_velocity(25.0, dist.v0);
        let a = complex_fringe_amplitude(&|v| model.phase(v), &ShifterPair::none(), &dist, &geom, 25.0)
            .unwrap();
        assert!((a.contrast - (-0.5f64).exp()).abs() < 1e-2, "{a:?}");
        assert!((a.phase - 25.0).abs() < 0.1, "{a:?}");
    }

    #[test]
    fn zero_interaction_is_perfect() {
        let (dist, geom) = defaults();
        let a = complex_fringe_amplitude(&|_| 0.0, &ShifterPair::none(), &dist, &geom, 0.0).unwrap();
        assert!((a.contrast - 1.0).abs() < 1e-14);
        assert!(a.phase.abs() < 1e-14);
    }

    #[test]
    fn ideal_pair_at_rephasing_frequency() {
        let (dist, geom) = defaults();
        let f = 40e3;
        let phi0 = 2.0 * PI * f * geom.l_shifters / dist.v0;
        let model = InteractionModel::inverse_velocity(phi0, dist.v0);
        let a = complex_fringe_amplitude(&|v| model.phase(v), &ShifterPair::ideal(f), &dist, &geom, 0.0)
            .unwrap();
        assert!((a.contrast - 1.0).abs() < 1e-9, "{a:?}");
        assert!(a.phase.abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn linearized_matches_envelope() {
        let (dist, geom) = defaults();
        for phi in [0.0, 5.0, 17.0, 25.0, 40.0] {
            let model = InteractionModel::Linearized { phi0: phi, v0: dist.v0, n: -1 };
            let a = complex_fringe_amplitude(&|v| model.phase(v), &ShifterPair::none(), &dist, &geom, phi)
                .unwrap();
            let (c, p) = gaussian_envelope(phi, 0.04, 0.0, 1.0, dist.v0).unwrap();
            assert!((a.contrast - c).abs() < 1e-3, "phi={phi} {a:?} {c}");
            assert!((a.phase - p).abs() < 1e-9);
        }
    }

    #[test]
    fn envelope_examples() {
        let (c, p) = gaussian_envelope(25.0, 0.04, 0.0, 1.0, 1722.6).unwrap();
        assert!((c - 0.6065).abs() < 1e-4 && p == 25.0);
        assert_eq!(gaussian_envelope(0.0, 0.04, 0.0, 1.0, 1722.6).unwrap(), (1.0, 0.0));
        let phi = 2.0 * PI * 17e3 / 1722.6;
        let (c, p) = gaussian_envelope(phi, 0.04, 17e3, 1.0, 1722.6).unwrap();
        assert!((c - 1.0).abs() < 1e-15 && p.abs() < 1e-12);
        assert!((phi - 62.0).abs() < 0.01);
        assert!(gaussian_envelope(1.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn unconverged_quadrature_is_reported() {
        let (dist, geom) = defaults();
        let err = complex_fringe_amplitude(&|v: f64| 1e7 * dist.v0 / v, &ShifterPair::none(), &dist, &geom, 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn time_factor_of_exact_pair_matches_numeric_average() {
        let pair = ShifterPair::ideal(17e3);
        let tau = 1.0 / 1722.6;
        let fast = pair.time_factor(tau).unwrap();
        // the numeric path, forced by a tiny amplitude perturbation
        let slow_pair = ShifterPair::new(pair.first.scaled(1.0 + 1e-13), pair.second);
        let slow = slow_pair.time_factor(tau).unwrap();
        assert!((fast - slow).norm() < 1e-9, "{fast} {slow}");
    }

    #[test]
    fn mc_examples() {
        let (dist, geom) = defaults();
        let a = monte_carlo_amplitude(&|_| 0.0, &ShifterPair::none(), &dist, &geom, 20_000, 3, 0.0).unwrap();
        assert_eq!(a.contrast, 1.0);
        assert_eq!(a.se_contrast, 0.0);
        let model = InteractionModel::inverse_velocity(30.0, dist.v0);
        let pair = ShifterPair::new(
            Waveform::Rc(RcRamp::nominal(17e3, Sign::Plus)),
            Waveform::Rc(RcRamp::nominal(17e3, Sign::Minus)),
        );
        let r1 = monte_carlo_amplitude(&|v| model.phase(v), &pair, &dist, &geom, 50_000, 11, 0.0).unwrap();
        let r2 = monte_carlo_amplitude(&|v| model.phase(v), &pair, &dist, &geom, 50_000, 11, 0.0).unwrap();
        assert_eq!(r1, r2);
        let r3 = monte_carlo_amplitude(&|v| model.phase(v), &pair, &dist, &geom, 50_000, 12, 0.0).unwrap();
        assert_ne!(r1.contrast, r3.contrast);
        assert!(monte_carlo_amplitude(&|_| 0.0, &pair, &dist, &geom, 999, 1, 0.0).is_err());
    }

    #[test]
    fn mc_agrees_with_quadrature_for_rc_pair() {
        let (dist, geom) = defaults();
        let model = InteractionModel::inverse_velocity(50.0, dist.v0);
        let pair = ShifterPair::new(
            Waveform::Rc(RcRamp::nominal(17e3, Sign::Plus)),
            Waveform::Rc(RcRamp::nominal(17e3, Sign::Minus)),
        );
        let q = complex_fringe_amplitude(&|v| model.phase(v), &pair, &dist, &geom, 0.0).unwrap();
        let m = monte_carlo_amplitude(&|v| model.phase(v), &pair, &dist, &geom, 200_000, 5, q.phase).unwrap();
        assert!((q.contrast - m.contrast).abs() < 4.0 * m.se_contrast, "{q:?} {m:?}");
        assert!((q.phase - m.phase).abs() < 4.0 * m.se_phase, "{q:?} {m:?}");
    }

    #[test]
    fn scan_examples() {
        let obs = FringeObservable { mean_rate: 1000.0, amplitude: 0.0, contrast: 0.5, phase: 0.3 };
        let z = scan_positions(crate::physics::DEFAULT_K_G, 4000, 2.0);
        let s = synthesize_scan(&obs, &z, crate::physics::DEFAULT_K_G, 0.1, CountNoise::Poisson { seed: 4 }).unwrap();
        let mean = s.total_counts() / s.counts.len() as f64;
        assert!((mean - 100.0).abs() < 1.0, "{mean}");
        let s2 = synthesize_scan(&obs, &z, crate::physics::DEFAULT_K_G, 0.1, CountNoise::Poisson { seed: 4 }).unwrap();
        assert_eq!(s, s2);

        let obs = FringeObservable { mean_rate: 200.0, amplitude: 50.0, contrast: 1.0, phase: 0.0 };
        let s = synthesize_scan(&obs, &[0.0], crate::physics::DEFAULT_K_G, 2.0, CountNoise::Expected).unwrap();
        assert_eq!(s.counts[0], 500.0);

        let bad = FringeObservable { mean_rate: 10.0, amplitude: 20.0, contrast: 1.0, phase: 0.0 };
        assert!(synthesize_scan(&bad, &[0.0], 1.0, 1.0, CountNoise::Expected).is_err());
    }

    #[test]
    fn scan_csv_round_trip() {
        let obs = FringeObservable { mean_rate: 300.0, amplitude: 60.0, contrast: 0.8, phase: 1.0 };
        let k = crate::physics::DEFAULT_K_G;
        let s = synthesize_scan(&obs, &scan_positions(k, 16, 1.0), k, 0.125, CountNoise::Poisson { seed: 9 }).unwrap();
        let text = s.to_csv();
        assert!(text.contains("z_m,counts\n"));
        assert!(text.starts_with("# dwell_s=0.125\n# seed=9\n"));
        assert_eq!(DetectorScan::from_csv(&text).unwrap(), s);
        s.validate(k).unwrap();
        let short = DetectorScan { z: s.z[..4].to_vec(), counts: s.counts[..4].to_vec(), ..s.clone() };
        assert!(short.validate(k).is_err());
    }

    #[test]
    fn unwrap_helpers() {
        assert!((unwrap_near(0.1, 4.0 * PI) - (0.1 + 4.0 * PI)).abs() < 1e-12);
        let seq = unwrap_sequence(&[3.0, -3.0, -0.5], 0.0);
        assert!((seq[1] - (2.0 * PI - 3.0)).abs() < 1e-12);
        assert!((seq[2] - (2.0 * PI - 0.5)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn contrast_never_exceeds_one(phi in -150.0f64..150.0, f in 0.0f64..45e3) {
            let (dist, geom) = defaults();
            let model = InteractionModel::inverse_velocity(phi, dist.v0);
            let a = complex_fringe_amplitude(&|v| model.phase(v), &ShifterPair::ideal(f), &dist, &geom, 0.0).unwrap();
            prop_assert!(a.contrast <= 1.0 && a.contrast >= 0.0);
        }
    }
}
