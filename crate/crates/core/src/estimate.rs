//! Polarizability measurement pipeline.
//!
//! Detector scans are fitted with a linear sinusoid model at the known
//! grating wavevector, the fitted phases of a voltage sweep are unwrapped
//! and fitted with a line in V², and the zero crossing of that line gives
//! the rephasing voltage from which α follows.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fringe::{
    complex_fringe_amplitude, scan_positions, synthesize_scan, unwrap_near, CountNoise,
    DetectorScan, FringeObservable, ShifterPair,
};
use crate::physics::{InteractionRegion, InterferometerGeometry, VelocityDistribution, PLANCK};

/// Points fitted around the phase zero by default.
pub const DEFAULT_WINDOW: usize = 10;
pub const MIN_SCAN_POINTS: usize = 8;

/// Result of fitting `N + A·C′·cos(k_g z + φ′)` to a scan. Rates in counts/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub mean_rate: f64,
    /// Fitted fringe amplitude `A·C′`, non-negative.
    pub amplitude: f64,
    /// Fringe phase in (−π, π].
    pub phase: f64,
    /// One-sigma phase uncertainty.
    pub dphi: f64,
    /// Covariance of (offset, cos, sin) coefficients in (counts/s)².
    pub covariance: [[f64; 3]; 3],
}

/// Fits a scan by weighted linear least squares on `{1, cos k_g z, sin k_g z}`.
///
/// Pass one is unweighted; pass two weights each point by the inverse of
/// the model-predicted Poisson variance from pass one.
pub fn fit_fringe(scan: &DetectorScan, k_g: f64) -> Result<FringeFit> {
    if scan.z.len() < MIN_SCAN_POINTS {
        return Err(Error::Fit(format!(
            "need at least {MIN_SCAN_POINTS} scan points, got {}",
            scan.z.len()
        )));
    }
    scan.validate(k_g).map_err(|e| Error::Fit(e.to_string()))?;

    let rows: Vec<Vector3<f64>> = scan
        .z
        .iter()
        .map(|&z| Vector3::new(1.0, (k_g * z).cos(), (k_g * z).sin()))
        .collect();
    let mean_count = scan.total_counts() / scan.counts.len() as f64;
    let floor = 1e-6 * mean_count.max(1e-300);

    let solve = |weights: &[f64]| -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let mut normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for ((x, &y), &w) in rows.iter().zip(&scan.counts).zip(weights) {
            normal += w * x * x.transpose();
            rhs += w * y * x;
        }
        let scale = normal[(0, 0)] * normal[(1, 1)] * normal[(2, 2)];
        if !(scale > 0.0) || normal.determinant().abs() <= 1e-10 * scale {
            return Err(Error::Fit("singular design matrix (degenerate z grid)".into()));
        }
        let inv = normal
            .try_inverse()
            .ok_or_else(|| Error::Fit("singular design matrix".into()))?;
        Ok((inv * rhs, inv))
    };

    let (first, _) = solve(&vec![1.0; rows.len()])?;
    let weights: Vec<f64> = rows.iter().map(|x| 1.0 / x.dot(&first).max(floor)).collect();
    let (coef, cov_counts) = solve(&weights)?;

    let d2 = scan.dwell * scan.dwell;
    let cov = cov_counts / d2;
    let (a, b) = (coef[1] / scan.dwell, coef[2] / scan.dwell);
    let r2 = a * a + b * b;
    let var_phi = (b * b * cov[(1, 1)] - 2.0 * a * b * cov[(1, 2)] + a * a * cov[(2, 2)]) / (r2 * r2);
    let mut covariance = [[0.0; 3]; 3];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cov[(i, j)];
        }
    }
    Ok(FringeFit {
        mean_rate: coef[0] / scan.dwell,
        amplitude: r2.sqrt(),
        phase: (-b).atan2(a),
        dphi: if r2 > 0.0 { var_phi.sqrt() } else { f64::INFINITY },
        covariance,
    })
}

/// Count-rate model of the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Mean count rate N, counts/s.
    pub flux: f64,
    /// Instrument fringe visibility A/N before dephasing.
    pub visibility: f64,
    /// Integration time per scan point, s.
    pub dwell: f64,
    pub scan_points: usize,
    /// Fringe periods covered by one scan.
    pub scan_periods: f64,
    pub noise: bool,
    pub seed: u64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(self.flux > 0.0) {
            return Err(Error::domain("flux must be positive"));
        }
        if !(self.visibility > 0.0 && self.visibility <= 1.0) {
            return Err(Error::domain("visibility must lie in (0, 1]"));
        }
        if !(self.dwell > 0.0) {
            return Err(Error::domain("dwell must be positive"));
        }
        if self.scan_points < MIN_SCAN_POINTS {
            return Err(Error::domain(format!("scan needs at least {MIN_SCAN_POINTS} points")));
        }
        if !(self.scan_periods >= 1.0) {
            return Err(Error::domain("scan must cover at least one fringe period"));
        }
        Ok(())
    }

    /// Measurement time of one scan, s.
    pub fn scan_time(&self) -> f64 {
        self.dwell * self.scan_points as f64
    }

    pub fn noise_for(&self, index: u64) -> CountNoise {
        if self.noise {
            CountNoise::Poisson { seed: substream_seed(self.seed, index) }
        } else {
            CountNoise::Expected
        }
    }

    /// Synthesizes and fits one scan of a fringe with contrast `contrast`
    /// and phase `phase`.
    pub fn measure(&self, k_g: f64, contrast: f64, phase: f64, index: u64) -> Result<FringeFit> {
        let obs = FringeObservable {
            mean_rate: self.flux,
            amplitude: self.flux * self.visibility,
            contrast,
            phase,
        };
        let z = scan_positions(k_g, self.scan_points, self.scan_periods);
        let scan = synthesize_scan(&obs, &z, k_g, self.dwell, self.noise_for(index))?;
        fit_fringe(&scan, k_g)
    }
}

/// SplitMix64 mix of a base seed and a stream index.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phase uncertainty per √s of a fringe with total visibility `v` and mean
/// rate `flux`, from the Poisson Fisher information averaged over a period.
pub fn phase_sensitivity(flux: f64, v: f64) -> f64 {
    1.0 / (flux * (1.0 - (1.0 - v * v).sqrt())).sqrt()
}

/// Mean rate giving `sensitivity` rad/√s at the uncompensated optimum,
/// where the dephased contrast is `e^{−1/2}`.
pub fn calibrated_flux(sensitivity: f64, visibility: f64) -> f64 {
    let v = visibility * (-0.5f64).exp();
    1.0 / (sensitivity * sensitivity * (1.0 - (1.0 - v * v).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSweepPoint {
    pub v_squared: f64,
    /// Unwrapped fringe phase, rad.
    pub phi: f64,
    pub dphi: f64,
    /// Fitted amplitude relative to the undephased amplitude A.
    pub contrast: f64,
}

/// Everything a voltage sweep needs besides the voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSetup {
    pub beam: VelocityDistribution,
    pub geometry: InterferometerGeometry,
    /// Interaction region; its voltage is replaced by each sweep value.
    pub region: InteractionRegion,
    pub shifters: ShifterPair,
    pub detection: Detection,
    /// Steady-state ramp asymmetry subtracted from every phase.
    pub phase_correction: f64,
}

impl SweepSetup {
    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        self.geometry.validate()?;
        self.region.validate()?;
        self.shifters.validate()?;
        self.detection.validate()
    }

    /// Gaussian-envelope phase prediction at `v_squared`.
    pub fn predicted_phase(&self, v_squared: f64) -> Result<f64> {
        let per_v2 = self.region.phase_per_volt_squared(self.beam.v0)?;
        let f = self.shifters.counter_frequency();
        Ok(per_v2 * v_squared - 2.0 * PI * f * self.geometry.l_shifters / self.beam.v0)
    }
}

/// Simulates and fits one scan per `V²` value; phases are unwrapped along
/// the sweep starting from the envelope prediction.
pub fn run_voltage_sweep(setup: &SweepSetup, v_squared: &[f64]) -> Result<Vec<PhaseSweepPoint>> {
    setup.validate()?;
    if let Some(bad) = v_squared.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::domain(format!("V² must be non-negative, got {bad}")));
    }
    let k_g = setup.geometry.k_g;
    let raw: Vec<(f64, FringeFit)> = v_squared
        .par_iter()
        .enumerate()
        .map(|(i, &v2)| {
            let region = InteractionRegion { voltage: v2.sqrt(), ..setup.region };
            let omega = region.omega_int()?;
            let l_int = region.l_int;
            let reference = setup.predicted_phase(v2)?;
            let amp = complex_fringe_amplitude(
                &|v: f64| omega * l_int / v,
                &setup.shifters,
                &setup.beam,
                &setup.geometry,
                reference,
            )?;
            let fit = setup.detection.measure(k_g, amp.contrast, amp.phase, i as u64)?;
            Ok((v2, fit))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(raw.len());
    let mut reference = match v_squared.first() {
        Some(&v2) => setup.predicted_phase(v2)?,
        None => 0.0,
    };
    for (v2, fit) in raw {
        let phi = unwrap_near(fit.phase, reference);
        reference = phi;
        out.push(PhaseSweepPoint {
            v_squared: v2,
            phi: correct_asymmetry(phi, setup.phase_correction),
            dphi: fit.dphi,
            contrast: fit.amplitude / (setup.detection.flux * setup.detection.visibility),
        });
    }
    Ok(out)
}

/// Removes the steady-state shifter asymmetry from a measured phase.
pub fn correct_asymmetry(phase: f64, phi_error: f64) -> f64 {
    phase - phi_error
}

/// Weighted straight-line fit through the phase zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroCrossing {
    pub v_squared_reph: f64,
    /// Fitted slope, rad/V².
    pub slope: f64,
    pub intercept: f64,
    /// One-sigma uncertainty of the crossing, V².
    pub sigma_v_squared: f64,
    /// One-sigma uncertainty of the fitted phase at the crossing, rad.
    pub sigma_phase: f64,
    /// Half-open index range of the points used.
    pub window: (usize, usize),
}

/// Fits `window` points centred on the first sign change of the phase.
pub fn zero_crossing_fit(points: &[PhaseSweepPoint], window: usize) -> Result<ZeroCrossing> {
    if window < 3 {
        return Err(Error::domain("zero-crossing window needs at least 3 points"));
    }
    if points.len() < 3 {
        return Err(Error::domain("zero-crossing fit needs at least 3 points"));
    }
    let change = points
        .windows(2)
        .position(|w| w[0].phi == 0.0 || w[0].phi.signum() != w[1].phi.signum())
        .ok_or_else(|| Error::Range("phase has no sign change across the sweep".into()))?;
    let width = window.min(points.len());
    let start = (change + 1).saturating_sub(width / 2).min(points.len() - width);
    let sel = &points[start..start + width];

    if let Some(p) = sel.iter().find(|p| !(p.dphi > 0.0 && p.dphi.is_finite())) {
        return Err(Error::Fit(format!("non-positive phase uncertainty at V² = {}", p.v_squared)));
    }
    // A single scan's dphi shrinks exactly when its fitted amplitude
    // fluctuates up, so raw inverse-variance weights favour lucky points and
    // understate the error. Flooring at the window median keeps genuinely
    // poor points down-weighted without that bias.
    let mut sorted: Vec<f64> = sel.iter().map(|p| p.dphi).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let weight = |p: &PhaseSweepPoint| 1.0 / p.dphi.max(median).powi(2);
    let wsum: f64 = sel.iter().map(weight).sum();
    let xbar = sel.iter().map(|p| weight(p) * p.v_squared).sum::<f64>() / wsum;
    let (mut sxx, mut sxy, mut sy) = (0.0, 0.0, 0.0);
    for p in sel {
        let w = weight(p);
        let dx = p.v_squared - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * p.phi;
        sy += w * p.phi;
    }
    if !(sxx > 0.0) {
        return Err(Error::Fit("all window points share one V²".into()));
    }
    // phi = c + slope·(x − xbar); c and slope are uncorrelated
    let slope = sxy / sxx;
    let c = sy / wsum;
    if slope == 0.0 {
        return Err(Error::Fit("zero slope".into()));
    }
    let x0 = xbar - c / slope;
    let dx0 = x0 - xbar;
    let var_phase = 1.0 / wsum + dx0 * dx0 / sxx;
    let sigma_phase = var_phase.sqrt();
    Ok(ZeroCrossing {
        v_squared_reph: x0,
        slope,
        intercept: c - slope * xbar,
        sigma_v_squared: sigma_phase / slope.abs(),
        sigma_phase,
        window: (start, start + width),
    })
}

/// `α = 2·h·f·L_shifters·d² / (L_int·V²_reph)`.
pub fn extract_alpha(f: f64, l_shifters: f64, d: f64, l_int: f64, v_squared_reph: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::domain("ramp frequency must be positive: no rephasing at f = 0"));
    }
    if !(v_squared_reph > 0.0) {
        return Err(Error::domain("rephasing V² must be positive"));
    }
    if !(l_shifters > 0.0 && d > 0.0 && l_int > 0.0) {
        return Err(Error::domain("lengths must be positive"));
    }
    Ok(2.0 * PLANCK * f * l_shifters * d * d / (l_int * v_squared_reph))
}

/// `Δα/α = Δφ′/φ_int(v0)`.
pub fn alpha_fractional_uncertainty(dphi: f64, phi_int_v0: f64) -> Result<f64> {
    if !(phi_int_v0 > 0.0) {
        return Err(Error::domain("interaction phase must be positive"));
    }
    Ok(dphi / phi_int_v0)
}

/// Sweep values of V² placed symmetrically around the expected rephasing
/// voltage so the residual phase spans `center ± span`.
pub fn rephasing_sweep(
    setup: &SweepSetup,
    alpha_guess: f64,
    points: usize,
    span: f64,
    center: f64,
) -> Result<Vec<f64>> {
    if points < 3 {
        return Err(Error::domain("sweep needs at least 3 points"));
    }
    let f = setup.shifters.counter_frequency();
    let g = &setup.geometry;
    let r = &setup.region;
    let v2_reph = extract_alpha(f, g.l_shifters, r.d, r.l_int, 1.0)? / alpha_guess;
    let phi_c = 2.0 * PI * f * g.l_shifters / setup.beam.v0;
    let per_v2 = phi_c / v2_reph;
    let lo = v2_reph + (center - span) / per_v2;
    let step = 2.0 * span / per_v2 / (points - 1) as f64;
    let out: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    if out[0] < 0.0 {
        return Err(Error::domain("sweep span reaches negative V²"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizabilityResult {
    pub alpha: f64,
    pub frac_uncertainty: f64,
    pub v_squared_reph: f64,
    pub window: (usize, usize),
    /// Phase uncertainty at the crossing, rad.
    pub dphi: f64,
    /// Measured interaction phase at the crossing, rad.
    pub phi_int_v0: f64,
    pub sweep: Vec<PhaseSweepPoint>,
}

/// Sweep → zero crossing → α and its fractional uncertainty.
pub fn measure_polarizability(
    setup: &SweepSetup,
    v_squared: &[f64],
    window: usize,
) -> Result<PolarizabilityResult> {
    let f = setup.shifters.counter_frequency();
    if !(f > 0.0) {
        return Err(Error::domain("rephasing pipeline requires f > 0"));
    }
    let sweep = run_voltage_sweep(setup, v_squared)?;
    let zc = zero_crossing_fit(&sweep, window)?;
    let alpha = extract_alpha(
        f,
        setup.geometry.l_shifters,
        setup.region.d,
        setup.region.l_int,
        zc.v_squared_reph,
    )?;
    let phi_int_v0 = zc.slope * zc.v_squared_reph;
    let frac_uncertainty = alpha_fractional_uncertainty(zc.sigma_phase, phi_int_v0)?;
    Ok(PolarizabilityResult {
        alpha,
        frac_uncertainty,
        v_squared_reph: zc.v_squared_reph,
        window: zc.window,
        dphi: zc.sigma_phase,
        phi_int_v0,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fringe::{scan_positions, synthesize_scan};
    use crate::physics::{alpha_from_cubic_angstrom, DEFAULT_K_G, SODIUM_ALPHA_A3};
    use crate::waveform::{asymmetry_error, Waveform};
    use proptest::prelude::*;

    const K: f64 = DEFAULT_K_G;

    fn scan_of(obs: FringeObservable, dwell: f64, noise: CountNoise) -> DetectorScan {
        synthesize_scan(&obs, &scan_positions(K, 16, 1.0), K, dwell, noise).unwrap()
    }

    fn detection(noise: bool) -> Detection {
        Detection {
            flux: calibrated_flux(0.8, 0.2),
            visibility: 0.2,
            dwell: 0.125,
            scan_points: 16,
            scan_periods: 1.0,
            noise,
            seed: 7,
        }
    }

    fn setup(f: f64) -> SweepSetup {
        SweepSetup {
            beam: VelocityDistribution::default(),
            geometry: InterferometerGeometry::default(),
            region: InteractionRegion::default(),
            shifters: ShifterPair::ideal(f),
            detection: detection(false),
            phase_correction: 0.0,
        }
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let obs = FringeObservable { mean_rate: 500.0, amplitude: 100.0, contrast: 0.7, phase: -2.1 };
        let fit = fit_fringe(&scan_of(obs, 0.5, CountNoise::Expected), K).unwrap();
        assert!((fit.mean_rate - 500.0).abs() < 1e-10);
        assert!((fit.amplitude - 70.0).abs() < 1e-10);
        assert!((fit.phase + 2.1).abs() < 1e-10);
        assert!(fit.dphi > 0.0);
    }

    #[test]
    fn dphi_halves_when_dwell_quadruples() {
        let obs = FringeObservable { mean_rate: 200.0, amplitude: 40.0, contrast: 0.9, phase: 0.4 };
        let a = fit_fringe(&scan_of(obs, 0.1, CountNoise::Expected), K).unwrap();
        let b = fit_fringe(&scan_of(obs, 0.4, CountNoise::Expected), K).unwrap();
        assert!((b.dphi / a.dphi - 0.5).abs() < 1e-9);
        // and scales as 1/C′
        let half = FringeObservable { contrast: 0.45, ..obs };
        let c = fit_fringe(&scan_of(half, 0.1, CountNoise::Expected), K).unwrap();
        assert!((c.dphi / a.dphi - 2.0).abs() < 0.02, "{}", c.dphi / a.dphi);
    }

    #[test]
    fn fit_rejects_degenerate_grids() {
        let obs = FringeObservable { mean_rate: 100.0, amplitude: 10.0, contrast: 1.0, phase: 0.0 };
        let period = 2.0 * PI / K;
        let z: Vec<f64> = (0..10).map(|i| i as f64 * period).collect();
        let mut scan = synthesize_scan(&obs, &z, K, 1.0, CountNoise::Expected).unwrap();
        assert!(matches!(fit_fringe(&scan, K), Err(Error::Fit(_))));
        scan.z.truncate(5);
        scan.counts.truncate(5);
        assert!(matches!(fit_fringe(&scan, K), Err(Error::Fit(_))));
    }

    #[test]
    fn poisson_phase_interval_coverage() {
        let obs = FringeObservable { mean_rate: 211.8, amplitude: 42.4, contrast: 0.6, phase: 1.3 };
        let trials = 1000;
        let mut inside = 0;
        for seed in 0..trials {
            let fit = fit_fringe(&scan_of(obs, 0.5, CountNoise::Poisson { seed }), K).unwrap();
            let d = crate::waveform::wrap_to_pi(fit.phase - obs.phase);
            if d.abs() <= 1.96 * fit.dphi {
                inside += 1;
            }
        }
        let frac = inside as f64 / trials as f64;
        assert!((0.93..=0.97).contains(&frac), "coverage {frac}");
    }

    #[test]
    fn calibration_hits_requested_sensitivity() {
        let flux = calibrated_flux(0.8, 0.2);
        let s = phase_sensitivity(flux, 0.2 * (-0.5f64).exp());
        assert!((s - 0.8).abs() < 1e-12);
        // and the fit reproduces it for one second of data
        let obs = FringeObservable { mean_rate: flux, amplitude: 0.2 * flux, contrast: (-0.5f64).exp(), phase: 0.0 };
        let z = scan_positions(K, 64, 1.0);
        let fit = fit_fringe(&synthesize_scan(&obs, &z, K, 1.0 / 64.0, CountNoise::Expected).unwrap(), K).unwrap();
        assert!((fit.dphi - 0.8).abs() < 0.01, "{}", fit.dphi);
    }

    #[test]
    fn sweep_without_shifters_is_linear_in_v_squared() {
        let s = setup(0.0);
        let v2: Vec<f64> = (0..8).map(|i| i as f64 * 2e3).collect();
        let pts = run_voltage_sweep(&s, &v2).unwrap();
        let per_v2 = s.region.phase_per_volt_squared(s.beam.v0).unwrap();
        let slope = (pts[7].phi - pts[0].phi) / (v2[7] - v2[0]);
        assert!((slope / per_v2 - 1.0).abs() < 5e-3, "{} {}", slope, per_v2);
        assert!(pts[0].phi.abs() < 1e-9);
    }

    #[test]
    fn zero_voltage_sweep_gives_zero_phase() {
        let s = setup(0.0);
        let pts = run_voltage_sweep(&s, &[0.0; 4]).unwrap();
        for p in pts {
            assert!(p.phi.abs() < 1e-9);
            assert!((p.contrast - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn contrast_peaks_at_phase_zero() {
        let s = setup(40e3);
        let alpha = s.region.alpha;
        let v2 = rephasing_sweep(&s, alpha, 21, 8.0, 0.0).unwrap();
        let pts = run_voltage_sweep(&s, &v2).unwrap();
        let best = pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.contrast.total_cmp(&b.1.contrast))
            .unwrap()
            .0;
        assert_eq!(best, 10);
        assert!(pts[10].phi.abs() < 1e-6);
    }

    #[test]
    fn zero_crossing_examples() {
        let pts: Vec<PhaseSweepPoint> = (0..20)
            .map(|i| {
                let x = 1000.0 + 50.0 * i as f64;
                PhaseSweepPoint { v_squared: x, phi: 0.01 * (x - 1433.0), dphi: 0.1, contrast: 1.0 }
            })
            .collect();
        let zc = zero_crossing_fit(&pts, DEFAULT_WINDOW).unwrap();
        assert!((zc.v_squared_reph - 1433.0).abs() < 1e-9);
        assert_eq!(zc.window.1 - zc.window.0, 10);
        assert!((zc.sigma_v_squared - zc.sigma_phase / 0.01).abs() < 1e-12);
        let flat: Vec<PhaseSweepPoint> = pts.iter().map(|p| PhaseSweepPoint { phi: 1.0, ..*p }).collect();
        assert!(matches!(zero_crossing_fit(&flat, 10), Err(Error::Range(_))));
        assert!(zero_crossing_fit(&pts, 2).is_err());
    }

    #[test]
    fn crossing_uncertainty_matches_seed_scatter() {
        // long dwell keeps each phase fit in its linear, small-error regime
        let mut s = setup(40e3);
        s.detection.noise = true;
        s.detection.dwell = 1.0;
        let v2 = rephasing_sweep(&s, s.region.alpha, 10, 3.0, 0.0).unwrap();
        let mut xs = Vec::new();
        let mut sig = Vec::new();
        for seed in 0..200 {
            s.detection.seed = seed;
            let zc = zero_crossing_fit(&run_voltage_sweep(&s, &v2).unwrap(), 10).unwrap();
            xs.push(zc.v_squared_reph);
            sig.push(zc.sigma_v_squared);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let reported = sig.iter().sum::<f64>() / n;
        assert!((sd / reported - 1.0).abs() < 0.15, "sd {sd} reported {reported}");
    }

    #[test]
    fn extract_alpha_examples() {
        let alpha = alpha_from_cubic_angstrom(SODIUM_ALPHA_A3);
        let v2 = extract_alpha(40e3, 1.0, 2e-3, 0.1, 1.0).unwrap() / alpha;
        assert!((v2 - 7.9e5).abs() < 0.02e5, "{v2}");
        let a1 = extract_alpha(40e3, 1.0, 2e-3, 0.1, v2).unwrap();
        let a2 = extract_alpha(40e3, 1.0, 4e-3, 0.1, v2).unwrap();
        assert!((a2 / a1 - 4.0).abs() < 1e-12);
        assert!(extract_alpha(40e3, 1.0, 2e-3, 0.1, 0.0).is_err());
        assert!(extract_alpha(0.0, 1.0, 2e-3, 0.1, v2).is_err());
    }

    #[test]
    fn fractional_uncertainty_examples() {
        let r = alpha_fractional_uncertainty(0.130, 66.0).unwrap();
        assert!((r - 0.00197).abs() < 1e-5);
        assert_eq!(alpha_fractional_uncertainty(2.5, 2.5).unwrap(), 1.0);
        assert!((alpha_fractional_uncertainty(0.015, 150.0).unwrap() - 1e-4).abs() < 1e-12);
        assert!(alpha_fractional_uncertainty(0.1, 0.0).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let s = setup(40e3);
        let alpha = s.region.alpha;
        // deliberately off-centre sweep
        let v2 = rephasing_sweep(&s, alpha * 1.01, 10, 3.0, 0.5).unwrap();
        let r = measure_polarizability(&s, &v2, 10).unwrap();
        assert!((r.alpha / alpha - 1.0).abs() < 5e-4, "{}", r.alpha / alpha);
        assert!(r.frac_uncertainty > 0.0);
        assert!(measure_polarizability(&setup(0.0), &v2, 10).is_err());
    }

    #[test]
    fn asymmetry_correction() {
        assert_eq!(correct_asymmetry(1.25, 0.0), 1.25);
        let mut s = setup(18e3);
        let w2 = Waveform::ideal(18e3, crate::waveform::Sign::Minus).scaled(1.01);
        s.shifters = ShifterPair::new(s.shifters.first, w2);
        let alpha = s.region.alpha;
        let v2 = rephasing_sweep(&s, alpha, 10, 3.0, 0.0).unwrap();
        let raw = measure_polarizability(&s, &v2, 10).unwrap();
        s.phase_correction = asymmetry_error(&s.shifters.first, &s.shifters.second).unwrap();
        let fixed = measure_polarizability(&s, &v2, 10).unwrap();
        let (b_raw, b_fix) = ((raw.alpha / alpha - 1.0).abs(), (fixed.alpha / alpha - 1.0).abs());
        assert!(b_fix < 5e-4 && b_fix < 0.1 * b_raw, "raw {b_raw} fixed {b_fix}");
    }

    proptest! {
        #[test]
        fn crossing_shifts_with_constant_offset(c in -0.5f64..0.5, slope in 1e-4f64..1e-2, x0 in 2000.0f64..3000.0) {
            let pts: Vec<PhaseSweepPoint> = (0..12)
                .map(|i| {
                    let x = 1500.0 + 180.0 * i as f64;
                    PhaseSweepPoint { v_squared: x, phi: slope * (x - x0), dphi: 0.05 + 0.01 * i as f64, contrast: 1.0 }
                })
                .collect();
            let base = zero_crossing_fit(&pts, 10).unwrap();
            let shifted: Vec<PhaseSweepPoint> = pts.iter().map(|p| PhaseSweepPoint { phi: p.phi + c, ..*p }).collect();
            let moved = zero_crossing_fit(&shifted, 10);
            if let Ok(m) = moved {
                if m.window == base.window {
                    prop_assert!((m.v_squared_reph - (base.v_squared_reph - c / slope)).abs() < 1e-6 * x0);
                }
            }
        }

        #[test]
        fn fit_exact_on_noiseless_data(n in 50.0f64..1e4, frac in 0.0f64..1.0, c in 0.05f64..1.0, phi in -3.1f64..3.1) {
            let obs = FringeObservable { mean_rate: n, amplitude: frac * n, contrast: c, phase: phi };
            let fit = fit_fringe(&scan_of(obs, 0.2, CountNoise::Expected), K).unwrap();
            prop_assert!((fit.mean_rate - n).abs() < 1e-8 * n);
            prop_assert!((fit.amplitude - frac * c * n).abs() < 1e-8 * n);
            if frac * c > 1e-3 {
                prop_assert!(crate::waveform::wrap_to_pi(fit.phase - phi).abs() < 1e-8);
            }
        }
    }
}
