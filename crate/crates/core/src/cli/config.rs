//! Scenario files: TOML schema, defaults, `--set` overrides and validation.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{calibrated_flux, Detection, DEFAULT_WINDOW};
use crate::fringe::ShifterPair;
use crate::physics::{
    alpha_from_cubic_angstrom, InteractionRegion, InterferometerGeometry, VelocityDistribution,
    DEFAULT_K_G, DEFAULT_L_G, DEFAULT_L_INT, DEFAULT_L_SHIFTERS, DEFAULT_PLATE_GAP,
    DEFAULT_SIGMA_RATIO, DEFAULT_TRUNC_K, DEFAULT_V0, SODIUM_ALPHA_A3,
};
use crate::waveform::{
    IdealSawtooth, RcRamp, ShifterGeometry, Sign, Waveform, NOMINAL_DUTY, NOMINAL_GAMMA,
    NOMINAL_RC_TIMES_F,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ContrastSweep,
    FringeScan,
    Polarizability,
    McValidate,
    Gyro,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ContrastSweep => "contrast-sweep",
            ExperimentKind::FringeScan => "fringe-scan",
            ExperimentKind::Polarizability => "polarizability",
            ExperimentKind::McValidate => "mc-validate",
            ExperimentKind::Gyro => "gyro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    pub beam: BeamConfig,
    pub geometry: GeometryConfig,
    pub interaction: InteractionConfig,
    pub shifters: ShiftersConfig,
    pub detection: DetectionConfig,
    pub contrast_sweep: ContrastSweepConfig,
    pub fringe_scan: FringeScanConfig,
    pub polarizability: PolarizabilityConfig,
    pub mc_validate: McValidateConfig,
    pub gyro: GyroConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub v0_m_s: f64,
    pub sigma_over_v0: f64,
    /// Truncation of the speed distribution in units of σ_v.
    pub trunc_k: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { v0_m_s: DEFAULT_V0, sigma_over_v0: DEFAULT_SIGMA_RATIO, trunc_k: DEFAULT_TRUNC_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub l_shifters_m: f64,
    pub l_g_m: f64,
    pub k_g_rad_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { l_shifters_m: DEFAULT_L_SHIFTERS, l_g_m: DEFAULT_L_G, k_g_rad_m: DEFAULT_K_G }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    pub d_m: f64,
    pub l_int_m: f64,
    pub alpha_si: f64,
    pub voltage_v: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            d_m: DEFAULT_PLATE_GAP,
            l_int_m: DEFAULT_L_INT,
            alpha_si: alpha_from_cubic_angstrom(SODIUM_ALPHA_A3),
            voltage_v: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShifterKind {
    Ideal,
    Rc,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftersConfig {
    pub kind: ShifterKind,
    /// Counter-phase frequency; negative reverses both ramps.
    pub f_hz: f64,
    /// Peak phase of an ideal ramp.
    pub amplitude_rad: f64,
    pub gamma_rad: f64,
    /// RC time constant; when absent `rc_times_f / f_hz` is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rc_s: Option<f64>,
    pub rc_times_f: f64,
    pub duty: f64,
    /// Fractional excess amplitude of the second shifter.
    pub asymmetry: f64,
    pub offset_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cylinder: Option<CylinderConfig>,
}

impl Default for ShiftersConfig {
    fn default() -> Self {
        Self {
            kind: ShifterKind::Ideal,
            f_hz: 17_000.0,
            amplitude_rad: 2.0 * PI,
            gamma_rad: NOMINAL_GAMMA,
            rc_s: None,
            rc_times_f: NOMINAL_RC_TIMES_F,
            duty: NOMINAL_DUTY,
            asymmetry: 0.0,
            offset_s: 0.0,
            cylinder: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CylinderConfig {
    pub r_m: f64,
    pub a_m: f64,
    pub w_m: f64,
    pub x_m: f64,
    pub prefactor: f64,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        let g = ShifterGeometry::default();
        Self { r_m: g.r, a_m: g.a, w_m: g.w, x_m: g.x, prefactor: g.prefactor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub dwell_s: f64,
    /// Mean count rate; when absent it is calibrated from
    /// `sensitivity_rad_sqrt_s` and `visibility`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux_hz: Option<f64>,
    pub visibility: f64,
    pub sensitivity_rad_sqrt_s: f64,
    pub seed: u64,
    pub scan_points: usize,
    pub scan_periods: f64,
    pub noise: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            dwell_s: 0.125,
            flux_hz: None,
            visibility: 0.2,
            sensitivity_rad_sqrt_s: 0.8,
            seed: 1,
            scan_points: 16,
            scan_periods: 1.0,
            noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastSweepConfig {
    pub f_hz: Vec<f64>,
    pub phi_min_rad: f64,
    pub phi_max_rad: f64,
    pub points: usize,
}

impl Default for ContrastSweepConfig {
    fn default() -> Self {
        Self { f_hz: vec![0.0, 17_000.0, 40_000.0], phi_min_rad: 0.0, phi_max_rad: 200.0, points: 401 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FringeScanConfig {
    /// Interaction phase at v₀.
    pub phi_int_rad: f64,
}

impl Default for FringeScanConfig {
    fn default() -> Self {
        Self { phi_int_rad: 62.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarizabilityConfig {
    pub points: usize,
    pub window: usize,
    /// Half-range of residual phase covered by the sweep.
    pub phase_span_rad: f64,
    /// Residual phase at the sweep centre.
    pub center_offset_rad: f64,
    /// When set, overrides `shifters.f_hz` so the counter phase at v₀ is this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_phase_rad: Option<f64>,
    /// Prior used to place the sweep; defaults to `interaction.alpha_si`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_guess_si: Option<f64>,
    pub correct_asymmetry: bool,
}

impl Default for PolarizabilityConfig {
    fn default() -> Self {
        Self {
            points: 10,
            window: DEFAULT_WINDOW,
            phase_span_rad: 3.0,
            center_offset_rad: 0.0,
            target_phase_rad: None,
            alpha_guess_si: None,
            correct_asymmetry: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McValidateConfig {
    pub n_atoms: usize,
    pub phi_int_rad: f64,
    pub seeds: Vec<u64>,
    /// Scales L_shifters in the Monte Carlo engine only (fault injection).
    pub l_shifters_scale: f64,
}

impl Default for McValidateConfig {
    fn default() -> Self {
        Self { n_atoms: 1_000_000, phi_int_rad: 50.0, seeds: vec![1, 2, 3, 4, 5], l_shifters_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GyroConfig {
    pub times_s: Vec<f64>,
    pub omega_rad_s: Vec<f64>,
    pub duration_s: f64,
    pub interval_s: f64,
    /// Hz per rad of residual; when absent half the residual is removed per update.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_hz_per_rad: Option<f64>,
}

impl Default for GyroConfig {
    fn default() -> Self {
        let earth = crate::gyro::EARTH_RATE;
        Self {
            times_s: vec![0.0, 10.0],
            omega_rad_s: vec![earth, earth],
            duration_s: 1.0,
            interval_s: 1e-3,
            gain_hz_per_rad: None,
        }
    }
}

fn positive(key: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {x}")))
    }
}

fn finite(key: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be finite, got {x}")))
    }
}

fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Domain(reason) => Error::config(section, reason),
        other => other,
    })
}

impl Scenario {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::config("<file>", e.message().trim().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut path = serde_path_to_error::Track::new();
        let de = serde_path_to_error::Deserializer::new(toml::Value::Table(doc), &mut path);
        let mut s: Scenario = Scenario::deserialize(de).map_err(|e: toml::de::Error| {
            let key = path.path().to_string();
            Error::config(if key == "?" { "<file>".to_string() } else { key }, e.message().trim().to_string())
        })?;
        s.resolve()?;
        Ok(s)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Fills derived defaults and checks every invariant.
    pub fn resolve(&mut self) -> Result<()> {
        let d = &self.detection;
        positive("detection.visibility", d.visibility)?;
        if d.visibility > 1.0 {
            return Err(Error::config("detection.visibility", "must not exceed 1"));
        }
        if self.detection.flux_hz.is_none() {
            positive("detection.sensitivity_rad_sqrt_s", d.sensitivity_rad_sqrt_s)?;
            self.detection.flux_hz = Some(calibrated_flux(d.sensitivity_rad_sqrt_s, d.visibility));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.beam;
        positive("beam.v0_m_s", b.v0_m_s)?;
        positive("beam.sigma_over_v0", b.sigma_over_v0)?;
        positive("beam.trunc_k", b.trunc_k)?;
        in_section("beam", self.beam()?.validate())?;

        let g = &self.geometry;
        positive("geometry.l_shifters_m", g.l_shifters_m)?;
        positive("geometry.l_g_m", g.l_g_m)?;
        positive("geometry.k_g_rad_m", g.k_g_rad_m)?;

        let i = &self.interaction;
        positive("interaction.d_m", i.d_m)?;
        positive("interaction.l_int_m", i.l_int_m)?;
        positive("interaction.alpha_si", i.alpha_si)?;
        finite("interaction.voltage_v", i.voltage_v)?;

        let s = &self.shifters;
        finite("shifters.f_hz", s.f_hz)?;
        finite("shifters.offset_s", s.offset_s)?;
        finite("shifters.asymmetry", s.asymmetry)?;
        if s.asymmetry <= -1.0 {
            return Err(Error::config("shifters.asymmetry", "must exceed -1"));
        }
        match s.kind {
            ShifterKind::Ideal => positive("shifters.amplitude_rad", s.amplitude_rad)?,
            ShifterKind::Rc => {
                positive("shifters.gamma_rad", s.gamma_rad)?;
                positive("shifters.duty", s.duty)?;
                if s.duty >= 1.0 {
                    return Err(Error::config("shifters.duty", "must be below 1"));
                }
                match s.rc_s {
                    Some(rc) => positive("shifters.rc_s", rc)?,
                    None => positive("shifters.rc_times_f", s.rc_times_f)?,
                }
            }
            ShifterKind::None => {}
        }
        if let Some(c) = &s.cylinder {
            positive("shifters.cylinder.r_m", c.r_m)?;
            positive("shifters.cylinder.a_m", c.a_m)?;
            positive("shifters.cylinder.w_m", c.w_m)?;
            positive("shifters.cylinder.x_m", c.x_m)?;
            positive("shifters.cylinder.prefactor", c.prefactor)?;
            in_section("shifters.cylinder", self.cylinder().expect("present").validate())?;
        }
        in_section("shifters", self.shifter_pair(s.f_hz)?.validate())?;

        let d = &self.detection;
        positive("detection.dwell_s", d.dwell_s)?;
        if let Some(f) = d.flux_hz {
            positive("detection.flux_hz", f)?;
        }
        if d.scan_points < crate::estimate::MIN_SCAN_POINTS {
            return Err(Error::config(
                "detection.scan_points",
                format!("must be at least {}", crate::estimate::MIN_SCAN_POINTS),
            ));
        }
        if !(d.scan_periods >= 1.0 && d.scan_periods.is_finite()) {
            return Err(Error::config("detection.scan_periods", "must be at least 1"));
        }

        let c = &self.contrast_sweep;
        if c.f_hz.is_empty() {
            return Err(Error::config("contrast_sweep.f_hz", "needs at least one frequency"));
        }
        for f in &c.f_hz {
            finite("contrast_sweep.f_hz", *f)?;
        }
        finite("contrast_sweep.phi_min_rad", c.phi_min_rad)?;
        finite("contrast_sweep.phi_max_rad", c.phi_max_rad)?;
        if !(c.phi_max_rad > c.phi_min_rad) {
            return Err(Error::config("contrast_sweep.phi_max_rad", "must exceed phi_min_rad"));
        }
        if c.points < 2 {
            return Err(Error::config("contrast_sweep.points", "must be at least 2"));
        }

        finite("fringe_scan.phi_int_rad", self.fringe_scan.phi_int_rad)?;

        let p = &self.polarizability;
        if p.points < 3 {
            return Err(Error::config("polarizability.points", "must be at least 3"));
        }
        if p.window < 3 {
            return Err(Error::config("polarizability.window", "must be at least 3"));
        }
        positive("polarizability.phase_span_rad", p.phase_span_rad)?;
        finite("polarizability.center_offset_rad", p.center_offset_rad)?;
        if let Some(t) = p.target_phase_rad {
            finite("polarizability.target_phase_rad", t)?;
        }
        if let Some(a) = p.alpha_guess_si {
            positive("polarizability.alpha_guess_si", a)?;
        }

        let m = &self.mc_validate;
        if m.n_atoms < crate::fringe::MIN_MC_ATOMS {
            return Err(Error::config(
                "mc_validate.n_atoms",
                format!("must be at least {}", crate::fringe::MIN_MC_ATOMS),
            ));
        }
        finite("mc_validate.phi_int_rad", m.phi_int_rad)?;
        if m.seeds.is_empty() {
            return Err(Error::config("mc_validate.seeds", "needs at least one seed"));
        }
        positive("mc_validate.l_shifters_scale", m.l_shifters_scale)?;

        let y = &self.gyro;
        in_section("gyro", crate::gyro::RotationProfile::new(y.times_s.clone(), y.omega_rad_s.clone()))?;
        positive("gyro.duration_s", y.duration_s)?;
        positive("gyro.interval_s", y.interval_s)?;
        if let Some(k) = y.gain_hz_per_rad {
            positive("gyro.gain_hz_per_rad", k)?;
        }
        Ok(())
    }

    pub fn beam(&self) -> Result<VelocityDistribution> {
        let b = &self.beam;
        in_section("beam", VelocityDistribution::new(b.v0_m_s, b.sigma_over_v0 * b.v0_m_s, b.trunc_k))
    }

    pub fn geometry(&self) -> InterferometerGeometry {
        let g = &self.geometry;
        InterferometerGeometry { l_shifters: g.l_shifters_m, l_g: g.l_g_m, k_g: g.k_g_rad_m }
    }

    pub fn region(&self) -> InteractionRegion {
        let i = &self.interaction;
        InteractionRegion { voltage: i.voltage_v, d: i.d_m, l_int: i.l_int_m, alpha: i.alpha_si }
    }

    pub fn cylinder(&self) -> Option<ShifterGeometry> {
        self.shifters.cylinder.as_ref().map(|c| ShifterGeometry {
            r: c.r_m,
            a: c.a_m,
            w: c.w_m,
            x: c.x_m,
            prefactor: c.prefactor,
        })
    }

    /// The configured pair of shifters driven at counter frequency `f`.
    pub fn shifter_pair(&self, f: f64) -> Result<ShifterPair> {
        let s = &self.shifters;
        if s.kind == ShifterKind::None || f == 0.0 {
            return Ok(ShifterPair::none());
        }
        let sign = if f > 0.0 { Sign::Plus } else { Sign::Minus };
        let f = f.abs();
        let first = match s.kind {
            ShifterKind::Ideal => Waveform::Ideal(IdealSawtooth { f, sign, amplitude: s.amplitude_rad }),
            ShifterKind::Rc => Waveform::Rc(RcRamp {
                f,
                duty: s.duty,
                gamma: s.gamma_rad,
                rc: s.rc_s.unwrap_or(s.rc_times_f / f),
                sign,
            }),
            ShifterKind::None => unreachable!(),
        };
        let second = first.mirrored().scaled(1.0 + s.asymmetry);
        Ok(ShifterPair { first, second, offset: s.offset_s })
    }

    pub fn detection(&self) -> Detection {
        let d = &self.detection;
        Detection {
            flux: d.flux_hz.expect("resolved scenario has a flux"),
            visibility: d.visibility,
            dwell: d.dwell_s,
            scan_points: d.scan_points,
            scan_periods: d.scan_periods,
            noise: d.noise,
            seed: d.seed,
        }
    }
}

/// Applies `a.b.c=value`; the value is read as a TOML literal and falls back
/// to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::config(assignment, "empty key"));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for (n, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(parts[..=n].join("."), "is not a section"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let s = Scenario::from_toml("experiment = \"fringe-scan\"\n", &[]).unwrap();
        assert_eq!(s.experiment, Some(ExperimentKind::FringeScan));
        assert_eq!(s.beam, BeamConfig::default());
        assert_eq!(s.shifters.f_hz, 17_000.0);
        let flux = s.detection.flux_hz.unwrap();
        assert!((flux - calibrated_flux(0.8, 0.2)).abs() < 1e-9);
    }

    #[test]
    fn save_load_round_trip() {
        let s = Scenario::from_toml("[beam]\nv0_m_s = 1722.6\nsigma_over_v0 = 0.04\n", &[]).unwrap();
        let again = Scenario::from_toml(&s.to_toml(), &[]).unwrap();
        assert_eq!(s, again);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        s.save(&p).unwrap();
        assert_eq!(Scenario::load(&p, &[]).unwrap(), s);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Scenario::from_toml("[interaction]\nd_m = 0.0\n", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "interaction.d_m"), "{e}");
        let e = Scenario::from_toml("[beam]\nv0 = 3.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("v0"), "{e}");
        let e = Scenario::from_toml("[detection]\nseed = \"x\"\n", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "detection.seed"), "{e}");
        let e = Scenario::from_toml("experiment = \"dance\"\n", &[]).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "experiment"), "{e}");
    }

    #[test]
    fn overrides_apply_before_validation() {
        let s = Scenario::from_toml("", &["shifters.f_hz=40000".into(), "shifters.kind=rc".into()]).unwrap();
        assert_eq!(s.shifters.f_hz, 40_000.0);
        assert_eq!(s.shifters.kind, ShifterKind::Rc);
        let s = Scenario::from_toml("", &["contrast_sweep.f_hz=[0, 5000]".into()]).unwrap();
        assert_eq!(s.contrast_sweep.f_hz, vec![0.0, 5000.0]);
        assert!(Scenario::from_toml("", &["beam.v0_m_s=-1".into()]).is_err());
        assert!(Scenario::from_toml("", &["nonsense".into()]).is_err());
    }

    #[test]
    fn asymmetry_scales_second_shifter() {
        let s = Scenario::from_toml("[shifters]\nasymmetry = 0.01\n", &[]).unwrap();
        let p = s.shifter_pair(17e3).unwrap();
        match (p.first, p.second) {
            (Waveform::Ideal(a), Waveform::Ideal(b)) => {
                assert!((b.amplitude / a.amplitude - 1.01).abs() < 1e-12);
                assert_ne!(a.sign, b.sign);
            }
            other => panic!("{other:?}"),
        }
    }
}
