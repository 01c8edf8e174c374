//! Run configuration: one JSON file holding every setting a run depends on.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use handground::control::{ControlConfig, DeviceConfig};
use handground::experiment::presets::SUBJECTS;
use handground::experiment::{
    fingerprint, ObserverDescriptor, ObserverModel, RunStamp, StimulusProtocol, SubjectiveRatings,
    DEFAULT_COMPARISONS_NM, DEFAULT_REFERENCE_NM, DEFAULT_REPETITIONS,
};
use handground::haptic_env::{PressProfile, StudyAxis};
use handground::kinematics::GroundingMode;
use handground::psychometrics::FitConfig;
use handground::ValidationError;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every session seed is derived from it.
    pub seed: u64,
    pub device: DeviceConfig,
    pub control: ControlConfig,
    pub press: PressProfile,
    pub protocol: ProtocolConfig,
    pub observers: ObserverConfig,
    pub analysis: FitConfig,
    pub simulate: SimulateConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            device: DeviceConfig::default(),
            control: ControlConfig::default(),
            press: PressProfile::default(),
            protocol: ProtocolConfig::default(),
            observers: ObserverConfig::default(),
            analysis: FitConfig::default(),
            simulate: SimulateConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub reference_nm: f64,
    pub comparisons_nm: Vec<f64>,
    pub repetitions: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            reference_nm: DEFAULT_REFERENCE_NM,
            comparisons_nm: DEFAULT_COMPARISONS_NM.to_vec(),
            repetitions: DEFAULT_REPETITIONS,
        }
    }
}

impl ProtocolConfig {
    pub fn for_condition(&self, axis: StudyAxis, mode: GroundingMode) -> StimulusProtocol {
        StimulusProtocol {
            reference: self.reference_nm,
            comparisons: self.comparisons_nm.clone(),
            repetitions: self.repetitions,
            axis,
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    /// Include the 24 built-in subject presets (12 per axis).
    pub presets: bool,
    pub custom: Vec<ObserverSpec>,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { presets: true, custom: Vec::new() }
    }
}

/// An observer taking part in one study axis, with a model per grounding mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    pub id: String,
    pub axis: StudyAxis,
    pub back_of_hand: ObserverModel,
    pub proximal_phalanx: ObserverModel,
    pub middle_phalanx: ObserverModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<SubjectiveRatings>,
}

impl ObserverSpec {
    pub fn model(&self, mode: GroundingMode) -> ObserverModel {
        match mode {
            GroundingMode::BackOfHand => self.back_of_hand,
            GroundingMode::ProximalPhalanx => self.proximal_phalanx,
            GroundingMode::MiddlePhalanx => self.middle_phalanx,
        }
    }

    pub fn descriptor(&self, mode: GroundingMode) -> ObserverDescriptor {
        ObserverDescriptor { id: self.id.clone(), model: self.model(mode), ratings: self.ratings }
    }
}

pub fn axis_letter(axis: StudyAxis) -> char {
    match axis {
        StudyAxis::AlongFingerAxis => 'A',
        StudyAxis::FlexionExtension => 'B',
    }
}

impl ObserverConfig {
    /// Presets first (`A01`..`A12`, `B01`..`B12`), then custom observers.
    pub fn roster(&self, reference: f64) -> Vec<ObserverSpec> {
        let mut out = Vec::new();
        if self.presets {
            for row in &SUBJECTS {
                let model = |mode| {
                    let (pse, jnd) = row.pse_jnd(mode);
                    ObserverModel::from_pse_jnd(pse, jnd, reference)
                };
                out.push(ObserverSpec {
                    id: format!("{}{:02}", axis_letter(row.axis), row.subject),
                    axis: row.axis,
                    back_of_hand: model(GroundingMode::BackOfHand),
                    proximal_phalanx: model(GroundingMode::ProximalPhalanx),
                    middle_phalanx: model(GroundingMode::MiddlePhalanx),
                    ratings: None,
                });
            }
        }
        out.extend(self.custom.iter().cloned());
        out
    }
}

/// Desired-force input for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceProfile {
    Step { force_n: f64 },
    Ramp { rate_n_per_s: f64 },
}

impl ForceProfile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            ForceProfile::Step { force_n } => force_n,
            ForceProfile::Ramp { rate_n_per_s } => rate_n_per_s * t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub profile: ForceProfile,
    pub duration_s: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { profile: ForceProfile::Step { force_n: 5.0 }, duration_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn is_safe_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Validation(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.device.validate().map_err(|e| e.within("device"))?;
        self.device
            .geometry
            .validate()
            .map_err(|e| ValidationError::new("device.geometry", e.to_string()))?;
        self.control.validate().map_err(|e| e.within("control"))?;
        self.press.validate().map_err(|e| e.within("press"))?;
        self.protocol
            .for_condition(StudyAxis::AlongFingerAxis, GroundingMode::BackOfHand)
            .validate()
            .map_err(|e| e.within("protocol"))?;
        self.analysis.validate().map_err(|e| e.within("analysis"))?;

        let mut seen = BTreeSet::new();
        for (i, spec) in self.observers.roster(self.protocol.reference_nm).iter().enumerate() {
            let at = |field: &str| format!("observers.custom[{}].{field}", i.saturating_sub(self.preset_count()));
            if !is_safe_id(&spec.id) {
                return Err(ValidationError::new(at("id"), "must be non-empty ASCII letters, digits, `_` or `-`"));
            }
            if !seen.insert((spec.axis, spec.id.clone())) {
                return Err(ValidationError::new(at("id"), format!("duplicate observer `{}` for {}", spec.id, spec.axis)));
            }
            for mode in GroundingMode::ALL {
                spec.model(mode).validate().map_err(|e| e.within(&at(mode.as_str())))?;
            }
        }

        if !(self.simulate.duration_s.is_finite() && self.simulate.duration_s > 0.0) {
            return Err(ValidationError::new("simulate.duration_s", "must be positive"));
        }
        let magnitude = match self.simulate.profile {
            ForceProfile::Step { force_n } => ("simulate.profile.force_n", force_n),
            ForceProfile::Ramp { rate_n_per_s } => ("simulate.profile.rate_n_per_s", rate_n_per_s),
        };
        if !magnitude.1.is_finite() {
            return Err(ValidationError::new(magnitude.0, "must be finite"));
        }
        Ok(())
    }

    fn preset_count(&self) -> usize {
        if self.observers.presets {
            SUBJECTS.len()
        } else {
            0
        }
    }

    /// Hash of everything that affects results. The output directory is
    /// excluded so that relocating a run does not change its artifacts.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        fingerprint(&c)
    }

    pub fn stamp(&self) -> RunStamp {
        RunStamp { version: env!("CARGO_PKG_VERSION").to_string(), config_hash: self.hash(), seed: self.seed }
    }
}

/// Seed of one session, derived from the master seed and the session's
/// identity so that sessions can be produced in any order.
pub fn session_seed(master: u64, axis: StudyAxis, mode: GroundingMode, observer: &str) -> u64 {
    let digest = fingerprint(&(master, axis, mode, observer));
    u64::from_str_radix(&digest[..16], 16).expect("sha-256 hex digest")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fall_back_to_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "control": {"gains": {"k_d": 0.5}}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.control.gains.k_d, 0.5);
        assert_eq!(cfg.control.gains.k_p, RunConfig::default().control.gains.k_p);
        assert_eq!(cfg.device, DeviceConfig::default());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig { output: OutputConfig { dir: "elsewhere".into() }, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig { seed: 2, ..a.clone() }.hash());
    }

    #[test]
    fn default_roster_has_twelve_observers_per_axis() {
        let roster = ObserverConfig::default().roster(DEFAULT_REFERENCE_NM);
        for axis in StudyAxis::ALL {
            assert_eq!(roster.iter().filter(|s| s.axis == axis).count(), 12);
        }
        assert_eq!(roster[0].id, "A01");
        assert_eq!(roster[23].id, "B12");
    }

    #[test]
    fn session_seeds_differ_by_identity() {
        let m = GroundingMode::BackOfHand;
        let s = session_seed(1, StudyAxis::AlongFingerAxis, m, "A01");
        assert_eq!(s, session_seed(1, StudyAxis::AlongFingerAxis, m, "A01"));
        assert_ne!(s, session_seed(2, StudyAxis::AlongFingerAxis, m, "A01"));
        assert_ne!(s, session_seed(1, StudyAxis::AlongFingerAxis, m, "A02"));
        assert_ne!(s, session_seed(1, StudyAxis::FlexionExtension, m, "A01"));
        assert_ne!(s, session_seed(1, StudyAxis::AlongFingerAxis, GroundingMode::MiddlePhalanx, "A01"));
    }
}
