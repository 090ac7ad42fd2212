//! Experiment runners. Each returns the files it would write plus a
//! key=value summary; nothing here touches the filesystem.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::{ExperimentKind, Scenario, ShifterKind};
use crate::error::{Error, Result};
use crate::estimate::{measure_polarizability, rephasing_sweep, PolarizabilityResult, SweepSetup};
use crate::fringe::{
    complex_fringe_amplitude, monte_carlo_amplitude, scan_positions, synthesize_scan,
    FringeAmplitude, FringeObservable,
};
use crate::gyro::{run_servo, rotation_to_frequency, GyroSetup, RotationProfile, ServoSample, ServoState};
use crate::waveform::{asymmetry_error, cylinder_phase};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest round-trip form, switching to exponent notation for very small
/// or very large magnitudes.
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// (file name, contents) in write order.
    pub files: Vec<(String, String)>,
    pub summary: String,
    /// False when a validation experiment failed its own check.
    pub passed: bool,
}

/// Comment block opening every output file.
pub fn header(s: &Scenario, kind: ExperimentKind, seed: &str) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "# rephase {VERSION}");
    let _ = writeln!(h, "# experiment = {}", kind.name());
    let _ = writeln!(h, "# seed = {seed}");
    h.push_str("# scenario:\n");
    for line in s.to_toml().lines() {
        if line.is_empty() {
            h.push_str("#\n");
        } else {
            let _ = writeln!(h, "# {line}");
        }
    }
    h
}

pub fn run(s: &Scenario, kind: ExperimentKind) -> Result<Report> {
    match kind {
        ExperimentKind::ContrastSweep => run_contrast_sweep(s),
        ExperimentKind::FringeScan => run_fringe_scan(s),
        ExperimentKind::Polarizability => run_polarizability(s),
        ExperimentKind::McValidate => run_mc_validate(s),
        ExperimentKind::Gyro => run_gyro(s),
    }
}

fn with_header(s: &Scenario, kind: ExperimentKind, seed: &str, body: &str) -> String {
    let mut out = header(s, kind, seed);
    out.push_str(body);
    out
}

/// `φ(v) = φ₀·v₀/v` for an interaction with phase `phi0` at the mean speed.
fn inverse_velocity(phi0: f64, v0: f64) -> impl Fn(f64) -> f64 + Sync {
    move |v: f64| phi0 * v0 / v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastRow {
    pub f: f64,
    pub phi_int: f64,
    pub contrast: f64,
    pub phase: f64,
}

/// Contrast and phase versus interaction phase at v₀ for one counter
/// frequency, using the configured shifter kind.
pub fn contrast_curve(s: &Scenario, f: f64, phis: &[f64]) -> Result<Vec<ContrastRow>> {
    let beam = s.beam()?;
    let geom = s.geometry();
    let pair = s.shifter_pair(f)?;
    let counter = 2.0 * PI * f * geom.l_shifters / beam.v0;
    phis.par_iter()
        .map(|&phi| {
            let a = complex_fringe_amplitude(&inverse_velocity(phi, beam.v0), &pair, &beam, &geom, phi - counter)?;
            Ok(ContrastRow { f, phi_int: phi, contrast: a.contrast, phase: a.phase })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub phi_int: f64,
    pub contrast: f64,
    /// Full width at half maximum; NaN when the curve does not fall to half
    /// on both sides inside the sweep.
    pub fwhm: f64,
}

/// Highest interior local maximum of the grid (the global maximum when the
/// curve is monotone), refined by a parabola through its neighbours.
pub fn locate_peak(rows: &[ContrastRow]) -> Peak {
    let best = |candidates: &mut dyn Iterator<Item = usize>| {
        candidates.fold(None, |acc: Option<usize>, i| match acc {
            Some(j) if rows[j].contrast >= rows[i].contrast => Some(j),
            _ => Some(i),
        })
    };
    let interior = best(&mut (1..rows.len().saturating_sub(1))
        .filter(|&i| rows[i].contrast >= rows[i - 1].contrast && rows[i].contrast > rows[i + 1].contrast));
    let i = interior.or_else(|| best(&mut (0..rows.len()))).expect("non-empty curve");
    let mut peak = Peak { phi_int: rows[i].phi_int, contrast: rows[i].contrast, fwhm: f64::NAN };
    if i > 0 && i + 1 < rows.len() {
        let (y0, y1, y2) = (rows[i - 1].contrast, rows[i].contrast, rows[i + 1].contrast);
        let denom = y0 - 2.0 * y1 + y2;
        if denom < 0.0 {
            let h = rows[i + 1].phi_int - rows[i].phi_int;
            let dx = 0.5 * (y0 - y2) / denom;
            peak.phi_int = rows[i].phi_int + dx * h;
            peak.contrast = y1 - 0.25 * (y0 - y2) * dx;
        }
    }
    let half = 0.5 * rows[i].contrast;
    let cross = |a: &ContrastRow, b: &ContrastRow| {
        a.phi_int + (half - a.contrast) / (b.contrast - a.contrast) * (b.phi_int - a.phi_int)
    };
    let left = (1..=i).rev().find(|&j| rows[j - 1].contrast < half).map(|j| cross(&rows[j - 1], &rows[j]));
    let right = (i..rows.len() - 1).find(|&j| rows[j + 1].contrast < half).map(|j| cross(&rows[j], &rows[j + 1]));
    if let (Some(l), Some(r)) = (left, right) {
        peak.fwhm = r - l;
    }
    peak
}

fn run_contrast_sweep(s: &Scenario) -> Result<Report> {
    let c = &s.contrast_sweep;
    let phis: Vec<f64> = (0..c.points)
        .map(|i| c.phi_min_rad + (c.phi_max_rad - c.phi_min_rad) * i as f64 / (c.points - 1) as f64)
        .collect();
    let mut body = String::from("f_hz,phi_int_rad,contrast,phi_prime_rad\n");
    let mut summary = String::new();
    for (k, &f) in c.f_hz.iter().enumerate() {
        let rows = contrast_curve(s, f, &phis)?;
        for r in &rows {
            let _ = writeln!(body, "{},{},{},{}", Num(r.f), Num(r.phi_int), Num(r.contrast), Num(r.phase));
        }
        // look for the revival itself, not the unshifted remnant near φ = 0
        let counter = 2.0 * PI * f * s.geometry.l_shifters_m / s.beam.v0_m_s;
        let near: Vec<ContrastRow> = rows
            .iter()
            .copied()
            .filter(|r| f == 0.0 || (r.phi_int - counter).abs() <= 0.5 * counter.abs())
            .collect();
        let p = if near.is_empty() { locate_peak(&rows) } else { locate_peak(&near) };
        let _ = writeln!(summary, "curve.{k}.f_hz={}", Num(f));
        let _ = writeln!(summary, "curve.{k}.peak_phi_int_rad={}", Num(p.phi_int));
        let _ = writeln!(summary, "curve.{k}.peak_contrast={}", Num(p.contrast));
        let _ = writeln!(summary, "curve.{k}.fwhm_rad={}", Num(p.fwhm));
    }
    let kind = ExperimentKind::ContrastSweep;
    Ok(Report {
        files: vec![
            ("contrast_sweep.csv".into(), with_header(s, kind, "none", &body)),
            ("contrast_sweep_summary.txt".into(), with_header(s, kind, "none", &summary)),
        ],
        summary,
        passed: true,
    })
}

/// Drive voltage that gives the configured ramp maximum at v₀.
fn shifter_voltage(s: &Scenario) -> Result<Option<f64>> {
    let Some(geom) = s.cylinder() else { return Ok(None) };
    let peak = match s.shifters.kind {
        ShifterKind::Ideal => s.shifters.amplitude_rad,
        ShifterKind::Rc => s.shifters.gamma_rad,
        ShifterKind::None => return Ok(None),
    };
    let per_volt2 = cylinder_phase(&geom, 1.0, s.beam.v0_m_s, s.interaction.alpha_si)?;
    Ok(Some((peak / per_volt2).sqrt()))
}

fn run_fringe_scan(s: &Scenario) -> Result<Report> {
    let beam = s.beam()?;
    let geom = s.geometry();
    let det = s.detection();
    let f = s.shifters.f_hz;
    let phi = s.fringe_scan.phi_int_rad;
    let pair = s.shifter_pair(f)?;
    let reference = phi - 2.0 * PI * f * geom.l_shifters / beam.v0;
    let amp: FringeAmplitude =
        complex_fringe_amplitude(&inverse_velocity(phi, beam.v0), &pair, &beam, &geom, reference)?;
    let obs = FringeObservable {
        mean_rate: det.flux,
        amplitude: det.flux * det.visibility,
        contrast: amp.contrast,
        phase: amp.phase,
    };
    let z = scan_positions(geom.k_g, det.scan_points, det.scan_periods);
    let scan = synthesize_scan(&obs, &z, geom.k_g, det.dwell, det.noise_for(0))?;
    let fit = crate::estimate::fit_fringe(&scan, geom.k_g)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "f_hz={}", Num(f));
    let _ = writeln!(summary, "phi_int_rad={}", Num(phi));
    let _ = writeln!(summary, "contrast={}", Num(amp.contrast));
    let _ = writeln!(summary, "phi_prime_rad={}", Num(amp.phase));
    let _ = writeln!(summary, "fit_mean_rate_hz={}", Num(fit.mean_rate));
    let _ = writeln!(summary, "fit_contrast={}", Num(fit.amplitude / (det.flux * det.visibility)));
    let _ = writeln!(summary, "fit_phase_rad={}", Num(fit.phase));
    let _ = writeln!(summary, "fit_dphi_rad={}", Num(fit.dphi));
    let _ = writeln!(summary, "total_counts={}", Num(scan.total_counts()));
    if let Some(v) = shifter_voltage(s)? {
        let _ = writeln!(summary, "shifter_peak_voltage_v={}", Num(v));
    }
    let kind = ExperimentKind::FringeScan;
    let seed = s.detection.seed.to_string();
    Ok(Report {
        files: vec![
            ("fringe_scan.csv".into(), with_header(s, kind, &seed, &scan.to_csv())),
            ("fringe_scan_summary.txt".into(), with_header(s, kind, &seed, &summary)),
        ],
        summary,
        passed: true,
    })
}

/// Counter frequency the polarizability run uses.
pub fn polarizability_frequency(s: &Scenario) -> f64 {
    match s.polarizability.target_phase_rad {
        Some(t) => t * s.beam.v0_m_s / (2.0 * PI * s.geometry.l_shifters_m),
        None => s.shifters.f_hz,
    }
}

pub fn sweep_setup(s: &Scenario) -> Result<SweepSetup> {
    let f = polarizability_frequency(s);
    if s.shifters.kind == ShifterKind::None || !(f > 0.0) {
        return Err(Error::domain("rephasing pipeline requires f > 0"));
    }
    let shifters = s.shifter_pair(f)?;
    let phase_correction = if s.polarizability.correct_asymmetry {
        asymmetry_error(&shifters.first, &shifters.second)?
    } else {
        0.0
    };
    Ok(SweepSetup {
        beam: s.beam()?,
        geometry: s.geometry(),
        region: s.region(),
        shifters,
        detection: s.detection(),
        phase_correction,
    })
}

pub fn polarizability(s: &Scenario) -> Result<PolarizabilityResult> {
    let setup = sweep_setup(s)?;
    let p = &s.polarizability;
    let guess = p.alpha_guess_si.unwrap_or(s.interaction.alpha_si);
    let v2 = rephasing_sweep(&setup, guess, p.points, p.phase_span_rad, p.center_offset_rad)?;
    measure_polarizability(&setup, &v2, p.window)
}

fn run_polarizability(s: &Scenario) -> Result<Report> {
    let r = polarizability(s)?;
    let mut body = String::from("V2_volt2,phi_rad,dphi_rad,contrast\n");
    for p in &r.sweep {
        let _ = writeln!(body, "{},{},{},{}", Num(p.v_squared), Num(p.phi), Num(p.dphi), Num(p.contrast));
    }
    let truth = s.interaction.alpha_si;
    let det = s.detection();
    let mut summary = String::new();
    let _ = writeln!(summary, "f_hz={}", Num(polarizability_frequency(s)));
    let _ = writeln!(summary, "alpha_true_si={}", Num(truth));
    let _ = writeln!(summary, "alpha_extracted_si={}", Num(r.alpha));
    let _ = writeln!(summary, "alpha_relative_error={}", Num(r.alpha / truth - 1.0));
    let _ = writeln!(summary, "frac_uncertainty={}", Num(r.frac_uncertainty));
    let _ = writeln!(summary, "v2_reph_volt2={}", Num(r.v_squared_reph));
    let _ = writeln!(summary, "dphi_rad={}", Num(r.dphi));
    let _ = writeln!(summary, "phi_int_v0_rad={}", Num(r.phi_int_v0));
    let _ = writeln!(summary, "window={}..{}", r.window.0, r.window.1);
    let _ = writeln!(summary, "measurement_time_s={}", Num(det.scan_time() * r.sweep.len() as f64));
    if let Some(v) = shifter_voltage(s)? {
        let _ = writeln!(summary, "shifter_peak_voltage_v={}", Num(v));
    }
    let kind = ExperimentKind::Polarizability;
    let seed = s.detection.seed.to_string();
    Ok(Report {
        files: vec![
            ("polarizability_sweep.csv".into(), with_header(s, kind, &seed, &body)),
            ("polarizability_summary.txt".into(), with_header(s, kind, &seed, &summary)),
        ],
        summary,
        passed: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McComparison {
    pub seed: u64,
    pub quadrature: FringeAmplitude,
    pub mc: crate::fringe::McAmplitude,
    pub z_contrast: f64,
    pub z_phase: f64,
}

pub fn mc_comparisons(s: &Scenario) -> Result<Vec<McComparison>> {
    let beam = s.beam()?;
    let geom = s.geometry();
    let m = &s.mc_validate;
    let f = s.shifters.f_hz;
    let pair = s.shifter_pair(f)?;
    let phi = inverse_velocity(m.phi_int_rad, beam.v0);
    let reference = m.phi_int_rad - 2.0 * PI * f * geom.l_shifters / beam.v0;
    let q = complex_fringe_amplitude(&phi, &pair, &beam, &geom, reference)?;
    let mc_geom = crate::physics::InterferometerGeometry {
        l_shifters: geom.l_shifters * m.l_shifters_scale,
        ..geom
    };
    m.seeds
        .iter()
        .map(|&seed| {
            let mc = monte_carlo_amplitude(&phi, &pair, &beam, &mc_geom, m.n_atoms, seed, q.phase)?;
            Ok(McComparison {
                seed,
                quadrature: q,
                mc,
                z_contrast: (mc.contrast - q.contrast) / mc.se_contrast,
                z_phase: (mc.phase - q.phase) / mc.se_phase,
            })
        })
        .collect()
}

fn run_mc_validate(s: &Scenario) -> Result<Report> {
    let rows = mc_comparisons(s)?;
    let mut body = String::from(
        "seed,contrast_quad,contrast_mc,se_contrast,z_contrast,phase_quad,phase_mc,se_phase,z_phase\n",
    );
    for r in &rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{}",
            r.seed,
            Num(r.quadrature.contrast),
            Num(r.mc.contrast),
            Num(r.mc.se_contrast),
            Num(r.z_contrast),
            Num(r.quadrature.phase),
            Num(r.mc.phase),
            Num(r.mc.se_phase),
            Num(r.z_phase)
        );
    }
    let max_z = rows
        .iter()
        .map(|r| r.z_contrast.abs().max(r.z_phase.abs()))
        .fold(0.0, f64::max);
    let passed = max_z < 3.0;
    let mut summary = String::new();
    let _ = writeln!(summary, "n_atoms={}", s.mc_validate.n_atoms);
    let _ = writeln!(summary, "runs={}", rows.len());
    let _ = writeln!(summary, "max_abs_z={}", Num(max_z));
    let _ = writeln!(summary, "result={}", if passed { "PASS" } else { "FAIL" });
    let kind = ExperimentKind::McValidate;
    let seeds: Vec<String> = s.mc_validate.seeds.iter().map(|x| x.to_string()).collect();
    let seed = seeds.join(",");
    Ok(Report {
        files: vec![
            ("mc_validate.csv".into(), with_header(s, kind, &seed, &body)),
            ("mc_validate_summary.txt".into(), with_header(s, kind, &seed, &summary)),
        ],
        summary,
        passed,
    })
}

pub fn gyro_run(s: &Scenario) -> Result<(RotationProfile, Vec<ServoSample>)> {
    let y = &s.gyro;
    let profile = RotationProfile::new(y.times_s.clone(), y.omega_rad_s.clone())?;
    let setup = GyroSetup { beam: s.beam()?, geometry: s.geometry(), detection: s.detection() };
    let mut state = ServoState::at_rest(&setup.beam, &setup.geometry, y.interval_s);
    if let Some(g) = y.gain_hz_per_rad {
        state.gain = g;
    }
    let run = run_servo(&profile, state, &setup, y.duration_s)?;
    Ok((profile, run))
}

fn run_gyro(s: &Scenario) -> Result<Report> {
    let (profile, run) = gyro_run(s)?;
    let mut body = String::from("t_s,omega_in_rad_s,f_hz,residual_rad,theta_rad\n");
    for x in &run {
        let _ = writeln!(body, "{},{},{},{},{}", Num(x.t), Num(x.omega), Num(x.f), Num(x.residual), Num(x.angle));
    }
    let last = run.last().expect("servo returns at least one sample");
    let g = s.geometry();
    let target = rotation_to_frequency(last.omega, g.k_g, g.l_g, g.l_shifters)?;
    let exact = profile.integral(last.t);
    let mut summary = String::new();
    let _ = writeln!(summary, "duration_s={}", Num(last.t));
    let _ = writeln!(summary, "final_f_hz={}", Num(last.f));
    let _ = writeln!(summary, "target_f_hz={}", Num(target));
    let _ = writeln!(summary, "final_residual_rad={}", Num(last.residual));
    let _ = writeln!(summary, "theta_rad={}", Num(last.angle));
    let _ = writeln!(summary, "integral_omega_rad={}", Num(exact));
    let _ = writeln!(summary, "theta_relative_error={}", Num(last.angle / exact - 1.0));
    let kind = ExperimentKind::Gyro;
    let seed = s.detection.seed.to_string();
    Ok(Report {
        files: vec![
            ("gyro_telemetry.csv".into(), with_header(s, kind, &seed, &body)),
            ("gyro_summary.txt".into(), with_header(s, kind, &seed, &summary)),
        ],
        summary,
        passed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(points: &[(f64, f64)]) -> Vec<ContrastRow> {
        points.iter().map(|&(x, c)| ContrastRow { f: 0.0, phi_int: x, contrast: c, phase: 0.0 }).collect()
    }

    #[test]
    fn peak_of_parabola_is_exact() {
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64, 1.0 - 0.01 * (i as f64 - 4.3).powi(2))).collect();
        let p = locate_peak(&rows(&pts));
        assert!((p.phi_int - 4.3).abs() < 1e-12);
        assert!((p.contrast - 1.0).abs() < 1e-12);
        assert!(p.fwhm.is_nan());
    }

    #[test]
    fn fwhm_of_triangle() {
        let pts: Vec<(f64, f64)> = (0..21).map(|i| (i as f64, (1.0 - (i as f64 - 10.0).abs() / 8.0).max(0.0))).collect();
        assert!((locate_peak(&rows(&pts)).fwhm - 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_frequency_polarizability_is_refused() {
        let s = Scenario::from_toml("[shifters]\nf_hz = 0.0\n", &[]).unwrap();
        let e = polarizability(&s).unwrap_err();
        assert!(e.to_string().contains("rephasing pipeline requires f > 0"), "{e}");
    }

    #[test]
    fn header_echoes_resolved_scenario() {
        let s = Scenario::from_toml("", &[]).unwrap();
        let h = header(&s, ExperimentKind::Gyro, "1");
        assert!(h.starts_with("# rephase "));
        assert!(h.contains("# flux_hz = "));
        assert!(h.lines().all(|l| l.starts_with('#')));
    }

    #[test]
    fn contrast_sweep_peaks_at_counter_phase() {
        let s = Scenario::from_toml("", &[]).unwrap();
        let phis: Vec<f64> = (0..41).map(|i| 52.0 + 0.5 * i as f64).collect();
        let p = locate_peak(&contrast_curve(&s, 17e3, &phis).unwrap());
        let expect = 2.0 * PI * 17e3 / s.beam.v0_m_s;
        assert!((p.phi_int - expect).abs() < 0.5, "{} vs {expect}", p.phi_int);
        assert!(p.contrast > 0.999);
    }
}
