//! Experiment configuration: named JSON blocks, built-in profiles and validation.
//!
//! Powers may be given in dBm or watts; dBm values are converted here and
//! nowhere else.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xlris::codebook::{CodebookSpec, LevelSpec, Method};
use xlris::geometry::{dbm_to_watts, SystemGeometry};
use xlris::im::{FairnessParams, ImConfig};
use xlris::solvers::IpddConfig;

use crate::error::{SimError, SimResult};

fn field(path: &str, msg: impl Into<String>) -> SimError {
    SimError::Config { field: path.to_string(), message: msg.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub wavelength_m: f64,
    /// Defaults to half a wavelength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_spacing_m: Option<f64>,
    pub n1: usize,
    pub n2: usize,
    pub m_antennas: usize,
    pub bs_position_m: [f64; 3],
    #[serde(default)]
    pub user_plane_y_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power_w: Option<f64>,
}

fn power(dbm: Option<f64>, w: Option<f64>, name: &str) -> SimResult<f64> {
    match (dbm, w) {
        (Some(d), None) => Ok(dbm_to_watts(d)),
        (None, Some(w)) => Ok(w),
        (Some(_), Some(_)) => Err(field(&format!("geometry.{name}"), "give either _dbm or _w, not both")),
        (None, None) => Err(field(&format!("geometry.{name}"), "missing (set _dbm or _w)")),
    }
}

impl GeometryBlock {
    pub fn resolve(&self) -> SimResult<SystemGeometry> {
        let geom = SystemGeometry {
            wavelength_m: self.wavelength_m,
            element_spacing_m: self.element_spacing_m.unwrap_or(self.wavelength_m / 2.0),
            n1: self.n1,
            n2: self.n2,
            m_antennas: self.m_antennas,
            bs_position_m: self.bs_position_m,
            user_plane_y_m: self.user_plane_y_m,
            max_power_w: power(self.max_power_dbm, self.max_power_w, "max_power")?,
            noise_power_w: power(self.noise_power_dbm, self.noise_power_w, "noise_power")?,
        };
        geom.validate().map_err(|e| field("geometry", e.to_string()))?;
        Ok(geom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookBlock {
    pub x_range_m: [f64; 2],
    pub z_range_m: [f64; 2],
    pub levels: Vec<LevelSpec>,
    pub gain_db: f64,
    pub method: Method,
    pub bits: u32,
    #[serde(default)]
    pub ipdd: IpddConfig,
    /// `[level, region_index]` pairs (1-based level) whose beam patterns are exported.
    #[serde(default)]
    pub export_patterns: Vec<[usize; 2]>,
}

impl CodebookBlock {
    pub fn spec(&self) -> SimResult<CodebookSpec> {
        let spec = CodebookSpec {
            x_range_m: self.x_range_m,
            z_range_m: self.z_range_m,
            levels: self.levels.clone(),
            gain_db: self.gain_db,
            method: self.method,
            ipdd: IpddConfig { bits: self.bits, ..self.ipdd },
        };
        spec.validate().map_err(|e| field("codebook", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Noiseless,
    Awgn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    /// Seeded user placements, uniform over the codebook search window.
    pub placements: usize,
    pub noise: NoiseMode,
    /// Probe SNR reference: when set, the noise power is chosen so that a
    /// unit-amplitude received signal has this SNR. Otherwise the geometry
    /// noise power is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Also run exhaustive search over the leaves for comparison.
    #[serde(default = "yes")]
    pub exhaustive: bool,
}

fn yes() -> bool {
    true
}

/// Initial `chi` and adaptation settings; missing fields take the default
/// initialization `(sqrt(P)/K, 0.01, 0.5, 1, 1)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<f64>,
}

impl ParamsBlock {
    pub fn resolve(&self, p_max: f64, k: usize) -> SimResult<FairnessParams> {
        let d = FairnessParams::initial(p_max, k);
        let p = FairnessParams {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            gamma1: self.gamma1.unwrap_or(d.gamma1),
            gamma2: self.gamma2.unwrap_or(d.gamma2),
            gamma3: self.gamma3.unwrap_or(d.gamma3),
            eps_h: self.eps_h.unwrap_or(d.eps_h),
            step: self.step.unwrap_or(d.step),
            perturb: self.perturb.unwrap_or(d.perturb),
        };
        p.validate().map_err(|e| field("im.params", e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImBlock {
    pub users: usize,
    /// Antenna count for multiuser runs; defaults to the geometry's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_antennas: Option<usize>,
    /// Fixed positions shared by every instance; otherwise users are placed
    /// uniformly in the ranges below.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_m: Option<Vec<[f64; 3]>>,
    pub x_range_m: [f64; 2],
    pub z_range_m: [f64; 2],
    pub instances: usize,
    pub bits: u32,
    #[serde(default)]
    pub params: ParamsBlock,
    #[serde(default)]
    pub solver: ImConfig,
    #[serde(default)]
    pub ipdd: IpddConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkBlock {
    pub wmmse_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridBlock {
    pub rf_chains: usize,
    pub rounds: usize,
    pub bits: u32,
    /// Antenna count of the codebook being factorized; defaults to the geometry's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_antennas: Option<usize>,
    /// Codebook levels to build and factorize (from the top); defaults to all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// RIS columns `n1`.
    N1,
    /// BS antennas.
    MAntennas,
    /// Phase resolution in bits.
    Bits,
    /// BS power budget in dBm.
    MaxPowerDbm,
}

impl FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> SimResult<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| field("sweep.parameter", format!("unknown parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<CodebookBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<ImBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// Experiment kinds; each needs a different set of blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CodebookBuild,
    Train,
    Im,
    Wmmse,
    Hybrid,
    Sweep,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::CodebookBuild => "codebook-build",
            Self::Train => "train",
            Self::Im => "im",
            Self::Wmmse => "wmmse",
            Self::Hybrid => "hybrid",
            Self::Sweep => "sweep",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Self::CodebookBuild => &["geometry", "codebook"],
            Self::Train => &["geometry", "codebook", "training"],
            Self::Im => &["geometry", "im"],
            Self::Wmmse => &["geometry", "im", "benchmark"],
            Self::Hybrid => &["geometry", "codebook", "hybrid"],
            Self::Sweep => &["geometry", "im", "benchmark", "sweep"],
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Self::Train | Self::Im | Self::Wmmse | Self::Sweep)
    }
}

/// Built-in parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small arrays and a near search window; runs in seconds to minutes.
    Desk,
    /// Full-scale 128 x 4 surface and the wide search window.
    Full,
}

const DESK: &str = r#"{
  "seed": 1,
  "geometry": {
    "wavelength_m": 0.03, "n1": 128, "n2": 1, "m_antennas": 4,
    "bs_position_m": [-40.0, 0.0, -25.0], "user_plane_y_m": 0.0,
    "max_power_dbm": 40.0, "noise_power_dbm": -110.0
  },
  "codebook": {
    "x_range_m": [-0.45, 0.45], "z_range_m": [0.15, 0.45],
    "levels": [
      {"s_x": 8, "s_z": 4, "design_x": 32, "design_z": 8},
      {"s_x": 64, "s_z": 16, "design_x": 4, "design_z": 2}
    ],
    "gain_db": 52.0, "method": "socc", "bits": 2
  },
  "training": {"placements": 100, "noise": "noiseless"},
  "im": {
    "users": 3, "m_antennas": 8,
    "x_range_m": [-0.45, 0.45], "z_range_m": [0.15, 0.45],
    "instances": 10, "bits": 3
  },
  "benchmark": {"wmmse_iters": 20},
  "hybrid": {"rf_chains": 4, "rounds": 20, "bits": 2, "m_antennas": 16, "levels": 1},
  "sweep": {"parameter": "bits", "values": [1, 2, 3, 4]}
}"#;

const FULL: &str = r#"{
  "seed": 1,
  "geometry": {
    "wavelength_m": 0.03, "n1": 128, "n2": 4, "m_antennas": 4,
    "bs_position_m": [-40.0, 0.0, -25.0], "user_plane_y_m": 0.0,
    "max_power_dbm": 40.0, "noise_power_dbm": -110.0
  },
  "codebook": {
    "x_range_m": [-30.0, 30.0], "z_range_m": [15.0, 75.0],
    "levels": [
      {"s_x": 8, "s_z": 4, "design_x": 32, "design_z": 8},
      {"s_x": 64, "s_z": 16, "design_x": 4, "design_z": 2}
    ],
    "gain_db": 30.0, "method": "jocc", "bits": 2
  },
  "training": {"placements": 100, "noise": "noiseless"},
  "im": {
    "users": 3, "m_antennas": 16,
    "x_range_m": [-30.0, 30.0], "z_range_m": [15.0, 75.0],
    "instances": 10, "bits": 3
  },
  "benchmark": {"wmmse_iters": 20},
  "hybrid": {"rf_chains": 4, "rounds": 20, "bits": 2, "m_antennas": 16},
  "sweep": {"parameter": "n1", "values": [32, 64, 128, 256]}
}"#;

impl Profile {
    pub fn json(self) -> Value {
        let text = match self {
            Self::Desk => DESK,
            Self::Full => FULL,
        };
        serde_json::from_str(text).expect("built-in profile is valid JSON")
    }

    pub fn config(self) -> ExperimentConfig {
        serde_json::from_value(self.json()).expect("built-in profile matches the schema")
    }
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ExperimentConfig {
    /// Parses a config document; with a profile, the document overrides it field by field.
    pub fn from_json(text: &str, profile: Option<Profile>) -> SimResult<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| field("config", e.to_string()))?;
        let value = match profile {
            Some(p) => {
                let mut base = p.json();
                merge(&mut base, doc);
                base
            }
            None => doc,
        };
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "config".to_string() } else { path };
            field(&path, e.into_inner().to_string())
        })
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> SimResult<SystemGeometry> {
        self.geometry.as_ref().ok_or_else(|| field("geometry", "block is missing"))?.resolve()
    }

    pub fn seed(&self) -> SimResult<u64> {
        self.seed.ok_or_else(|| field("seed", "a seed is required for stochastic runs"))
    }

    /// Checks that every block the experiment reads is present and valid.
    pub fn validate_for(&self, exp: Experiment) -> SimResult<()> {
        for &block in exp.required() {
            let present = match block {
                "geometry" => self.geometry.is_some(),
                "codebook" => self.codebook.is_some(),
                "training" => self.training.is_some(),
                "im" => self.im.is_some(),
                "benchmark" => self.benchmark.is_some(),
                "hybrid" => self.hybrid.is_some(),
                "sweep" => self.sweep.is_some(),
                _ => unreachable!("unknown block name"),
            };
            if !present {
                return Err(field(block, format!("block is missing (required by {})", exp.name())));
            }
        }
        if exp.stochastic() {
            self.seed()?;
        }
        let geom = self.geometry()?;
        if let Some(cb) = &self.codebook {
            cb.spec()?;
        }
        if let Some(t) = &self.training {
            if t.placements == 0 {
                return Err(field("training.placements", "must be at least 1"));
            }
            if t.snr_db.is_some_and(|s| !s.is_finite()) {
                return Err(field("training.snr_db", "must be finite"));
            }
        }
        if let Some(im) = &self.im {
            self.validate_im(im, &geom)?;
        }
        if let Some(b) = &self.benchmark {
            if b.wmmse_iters == 0 {
                return Err(field("benchmark.wmmse_iters", "must be at least 1"));
            }
        }
        if let Some(h) = &self.hybrid {
            let m = h.m_antennas.unwrap_or(geom.m_antennas);
            if h.rf_chains == 0 || h.rf_chains > m {
                return Err(field("hybrid.rf_chains", format!("must lie in 1..={m}")));
            }
            IpddConfig::with_bits(h.bits).validate().map_err(|e| field("hybrid.bits", e.to_string()))?;
            if let (Some(l), Some(cb)) = (h.levels, &self.codebook) {
                if l == 0 || l > cb.levels.len() {
                    return Err(field("hybrid.levels", format!("must lie in 1..={}", cb.levels.len())));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(field("sweep.values", "must not be empty"));
            }
            for &v in &s.values {
                let ok = match s.parameter {
                    SweepParam::MaxPowerDbm => v.is_finite(),
                    SweepParam::Bits => v.fract() == 0.0 && (1.0..=16.0).contains(&v),
                    SweepParam::N1 | SweepParam::MAntennas => v.fract() == 0.0 && v >= 1.0,
                };
                if !ok {
                    return Err(field("sweep.values", format!("{v} is not a valid {:?} value", s.parameter)));
                }
            }
        }
        Ok(())
    }

    fn validate_im(&self, im: &ImBlock, geom: &SystemGeometry) -> SimResult<()> {
        if im.users == 0 {
            return Err(field("im.users", "must be at least 1"));
        }
        if im.instances == 0 {
            return Err(field("im.instances", "must be at least 1"));
        }
        if im.m_antennas == Some(0) {
            return Err(field("im.m_antennas", "must be at least 1"));
        }
        if let Some(pos) = &im.positions_m {
            if pos.len() != im.users {
                return Err(field("im.positions_m", format!("{} positions for {} users", pos.len(), im.users)));
            }
        }
        for (name, r) in [("im.x_range_m", im.x_range_m), ("im.z_range_m", im.z_range_m)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(field(name, "must be an increasing finite pair"));
            }
        }
        IpddConfig { bits: im.bits, ..im.ipdd }.validate().map_err(|e| field("im.ipdd", e.to_string()))?;
        if im.solver.iters == 0 {
            return Err(field("im.solver.iters", "must be at least 1"));
        }
        im.params.resolve(geom.max_power_w, im.users)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_for_every_experiment() {
        for p in [Profile::Desk, Profile::Full] {
            let cfg = p.config();
            for e in [
                Experiment::CodebookBuild,
                Experiment::Train,
                Experiment::Im,
                Experiment::Wmmse,
                Experiment::Hybrid,
                Experiment::Sweep,
            ] {
                cfg.validate_for(e).unwrap();
            }
        }
    }

    #[test]
    fn dbm_is_converted_once() {
        let g = Profile::Desk.config().geometry().unwrap();
        assert!((g.max_power_w - 10.0).abs() < 1e-12);
        assert!((g.noise_power_w - 1e-14).abs() < 1e-26);
    }

    #[test]
    fn missing_geometry_is_named() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 3}"#, None).unwrap();
        let err = cfg.validate_for(Experiment::CodebookBuild).unwrap_err();
        assert!(matches!(&err, SimError::Config { field, .. } if field == "geometry"), "{err}");
    }

    #[test]
    fn stochastic_runs_need_a_seed() {
        let mut cfg = Profile::Desk.config();
        cfg.seed = None;
        cfg.validate_for(Experiment::CodebookBuild).unwrap();
        let err = cfg.validate_for(Experiment::Im).unwrap_err();
        assert!(matches!(&err, SimError::Config { field, .. } if field == "seed"));
    }

    #[test]
    fn overlay_overrides_single_fields() {
        let cfg =
            ExperimentConfig::from_json(r#"{"geometry": {"n1": 64}, "im": {"bits": 2}}"#, Some(Profile::Desk)).unwrap();
        assert_eq!(cfg.geometry.as_ref().unwrap().n1, 64);
        assert_eq!(cfg.geometry.as_ref().unwrap().n2, 1);
        assert_eq!(cfg.im.as_ref().unwrap().bits, 2);
        assert_eq!(cfg.im.as_ref().unwrap().users, 3);
    }

    #[test]
    fn conflicting_power_units_are_rejected() {
        let cfg = ExperimentConfig::from_json(r#"{"geometry": {"max_power_w": 1.0}}"#, Some(Profile::Desk)).unwrap();
        let err = cfg.geometry().unwrap_err();
        assert!(matches!(&err, SimError::Config { field, .. } if field == "geometry.max_power"));
    }

    #[test]
    fn bad_values_name_their_field() {
        let cases = [
            (r#"{"im": {"users": 0}}"#, "im.users"),
            (r#"{"im": {"positions_m": [[0, 0, 1]]}}"#, "im.positions_m"),
            (r#"{"hybrid": {"rf_chains": 17}}"#, "hybrid.rf_chains"),
            (r#"{"sweep": {"values": []}}"#, "sweep.values"),
            (r#"{"training": {"placements": 0}}"#, "training.placements"),
            (r#"{"im": {"params": {"step": -1.0}}}"#, "im.params"),
            (r#"{"geometry": {"n1": 0}}"#, "geometry"),
            (r#"{"codebook": {"levels": []}}"#, "codebook"),
        ];
        for (doc, name) in cases {
            let cfg = ExperimentConfig::from_json(doc, Some(Profile::Desk)).unwrap();
            let err = cfg
                .validate_for(Experiment::Sweep)
                .and_then(|_| cfg.validate_for(Experiment::Train))
                .and_then(|_| cfg.validate_for(Experiment::Hybrid))
                .unwrap_err();
            assert!(matches!(&err, SimError::Config { field, .. } if field == name), "{doc}: {err}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"geometry": {"n3": 1}}"#, Some(Profile::Desk)).is_err());
        assert!(ExperimentConfig::from_json(r#"{"extra": 1}"#, None).is_err());
    }

    #[test]
    fn sweep_parameter_parses() {
        assert_eq!("max_power_dbm".parse::<SweepParam>().unwrap(), SweepParam::MaxPowerDbm);
        assert!("power".parse::<SweepParam>().is_err());
    }
}
