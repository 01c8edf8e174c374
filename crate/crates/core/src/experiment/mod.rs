//! Two-alternative forced-choice, method-of-constant-stimuli stiffness
//! discrimination run against simulated observers.
//!
//! Every trial renders both surfaces through the full device loop and the
//! observer judges the *rendered* stiffness values, so loop imperfections show
//! up in the psychophysics.

mod log;
pub mod presets;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::control::{ControlConfig, ControlError, DeviceConfig};
use crate::haptic_env::{render_press, PressProfile, StudyAxis, Surface, SurfaceLabel};
use crate::kinematics::GroundingMode;
use crate::validate::{positive, ValidationError};

pub use log::{export_log, import_log, read_log_csv, sidecar_path, write_log_csv, LogError, SCHEMA_VERSION};

/// `Φ⁻¹(0.75)`, the z-score of the upper quartile.
pub const UPPER_QUARTILE_Z: f64 = 0.674_489_750_196_081_7;

pub const DEFAULT_REFERENCE_NM: f64 = 100.0;
pub const DEFAULT_COMPARISONS_NM: [f64; 11] =
    [10.0, 28.0, 46.0, 64.0, 82.0, 100.0, 118.0, 136.0, 154.0, 172.0, 190.0];
pub const DEFAULT_REPETITIONS: usize = 10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: ControlError,
    },
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusProtocol {
    /// N/m
    pub reference: f64,
    /// Comparison ladder (N/m), strictly increasing and containing the reference.
    pub comparisons: Vec<f64>,
    pub repetitions: usize,
    pub axis: StudyAxis,
    pub mode: GroundingMode,
}

impl Default for StimulusProtocol {
    fn default() -> Self {
        Self {
            reference: DEFAULT_REFERENCE_NM,
            comparisons: DEFAULT_COMPARISONS_NM.to_vec(),
            repetitions: DEFAULT_REPETITIONS,
            axis: StudyAxis::AlongFingerAxis,
            mode: GroundingMode::BackOfHand,
        }
    }
}

impl StimulusProtocol {
    pub fn for_condition(axis: StudyAxis, mode: GroundingMode) -> Self {
        Self { axis, mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        positive("reference", self.reference)?;
        if self.repetitions == 0 {
            return Err(ValidationError::new("repetitions", "must be at least 1"));
        }
        if self.comparisons.is_empty() {
            return Err(ValidationError::new("comparisons", "must not be empty"));
        }
        for (i, &k) in self.comparisons.iter().enumerate() {
            positive(&format!("comparisons[{i}]"), k)?;
        }
        if self.comparisons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ValidationError::new("comparisons", "must be strictly increasing"));
        }
        if !self.comparisons.contains(&self.reference) {
            return Err(ValidationError::new("comparisons", "must include the reference value"));
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.comparisons.len() * self.repetitions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSide {
    Left,
    Right,
}

impl ReferenceSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceSide::Left => "left",
            ReferenceSide::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    /// N/m
    pub comparison: f64,
    pub reference_side: ReferenceSide,
    /// Random substream of the master seed used by this trial.
    pub seed_stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub chose_comparison_stiffer: bool,
    /// Undefined when the comparison equals the reference.
    pub correct: Option<bool>,
    pub latency_s: Option<f64>,
}

impl Response {
    pub fn new(chose_comparison_stiffer: bool, k_ref: f64, k_cmp: f64) -> Self {
        let correct = if k_cmp == k_ref { None } else { Some(chose_comparison_stiffer == (k_cmp > k_ref)) };
        Self { chose_comparison_stiffer, correct, latency_s: None }
    }
}

/// Generative stand-in for a subject: every presentation is perceived with
/// independent Gaussian noise, the reference is shifted by `pse_bias`, and with
/// probability `lapse_rate` the answer is a coin flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverModel {
    /// N/m
    pub pse_bias: f64,
    /// N/m
    pub noise_sigma: f64,
    pub lapse_rate: f64,
}

impl ObserverModel {
    /// Observer whose analytic psychometric curve has the given PSE and JND.
    pub fn from_pse_jnd(pse: f64, jnd: f64, reference: f64) -> Self {
        Self {
            pse_bias: pse - reference,
            noise_sigma: jnd / (UPPER_QUARTILE_Z * std::f64::consts::SQRT_2),
            lapse_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !self.pse_bias.is_finite() {
            return Err(ValidationError::new("pse_bias", "must be finite"));
        }
        positive("noise_sigma", self.noise_sigma)?;
        if !(0.0..=0.1).contains(&self.lapse_rate) {
            return Err(ValidationError::new("lapse_rate", "must lie in [0, 0.1]"));
        }
        Ok(())
    }

    /// Spread of the difference of two independent perceptions.
    pub fn difference_sigma(&self) -> f64 {
        self.noise_sigma * std::f64::consts::SQRT_2
    }

    /// Probability of calling the comparison stiffer.
    pub fn choice_probability(&self, k_ref: f64, k_cmp: f64) -> f64 {
        let z = (k_cmp - k_ref - self.pse_bias) / self.difference_sigma();
        let phi = Normal::standard().cdf(z);
        (1.0 - self.lapse_rate) * phi + self.lapse_rate / 2.0
    }

    pub fn analytic_pse(&self, reference: f64) -> f64 {
        reference + self.pse_bias
    }

    pub fn analytic_jnd(&self) -> f64 {
        UPPER_QUARTILE_Z * self.difference_sigma()
    }
}

/// Simulated judgement: `true` when the comparison is called stiffer.
pub fn observer_decide<R: Rng + ?Sized>(obs: &ObserverModel, k_ref: f64, k_cmp: f64, rng: &mut R) -> bool {
    if obs.lapse_rate > 0.0 && rng.random::<f64>() < obs.lapse_rate {
        return rng.random::<bool>();
    }
    let n_cmp: f64 = rng.sample(StandardNormal);
    let n_ref: f64 = rng.sample(StandardNormal);
    let perceived_cmp = k_cmp + obs.noise_sigma * n_cmp;
    let perceived_ref = k_ref + obs.pse_bias + obs.noise_sigma * n_ref;
    if perceived_cmp == perceived_ref {
        rng.random::<bool>()
    } else {
        perceived_cmp > perceived_ref
    }
}

/// Random stream `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded random permutation of the full comparison × repetition factorial.
/// Stream 0 drives the ordering; trial `i` owns stream `i + 1`.
pub fn build_schedule(protocol: &StimulusProtocol, seed: u64) -> Vec<Trial> {
    let mut rng = stream_rng(seed, 0);
    let mut levels: Vec<f64> = protocol
        .comparisons
        .iter()
        .flat_map(|&k| std::iter::repeat_n(k, protocol.repetitions))
        .collect();
    levels.shuffle(&mut rng);
    levels
        .into_iter()
        .enumerate()
        .map(|(index, comparison)| Trial {
            index,
            comparison,
            reference_side: if rng.random::<bool>() { ReferenceSide::Left } else { ReferenceSide::Right },
            seed_stream: index as u64 + 1,
        })
        .collect()
}

/// Device, loop and press settings used to render the surfaces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderSetup {
    pub device: DeviceConfig,
    pub control: ControlConfig,
    pub press: PressProfile,
}

/// Renders surfaces for one study axis. Rendering is deterministic, so the
/// effective stiffness of each nominal value is computed once and reused.
#[derive(Debug, Clone)]
pub struct SurfaceRenderer {
    setup: RenderSetup,
    axis: StudyAxis,
    cache: HashMap<u64, f64>,
}

impl SurfaceRenderer {
    pub fn new(setup: &RenderSetup, axis: StudyAxis, mode: GroundingMode) -> Self {
        let mut setup = setup.clone();
        setup.device.mode = mode;
        Self { setup, axis, cache: HashMap::new() }
    }

    pub fn setup(&self) -> &RenderSetup {
        &self.setup
    }

    /// Effective stiffness (N/m) delivered at the fingertip for a surface of
    /// nominal stiffness `k`.
    pub fn rendered(&mut self, k: f64, label: SurfaceLabel) -> Result<f64, ControlError> {
        if let Some(&v) = self.cache.get(&k.to_bits()) {
            return Ok(v);
        }
        let surface = Surface::for_axis(self.axis, k, label)?;
        let s = &self.setup;
        let out = render_press(&surface, self.axis, &s.device, &s.control, &s.press, false)?;
        self.cache.insert(k.to_bits(), out.rendered_stiffness);
        Ok(out.rendered_stiffness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: Trial,
    pub response: Response,
    pub rendered_k_ref: f64,
    pub rendered_k_cmp: f64,
}

/// Present both surfaces through the device and let the observer choose.
pub fn run_trial(
    trial: &Trial,
    reference: f64,
    obs: &ObserverModel,
    renderer: &mut SurfaceRenderer,
    seed: u64,
) -> Result<TrialRecord, ExperimentError> {
    let wrap = |source| ExperimentError::Trial { index: trial.index, source };
    // surfaces are explored left then right
    let (k_ref, k_cmp) = match trial.reference_side {
        ReferenceSide::Left => {
            let r = renderer.rendered(reference, SurfaceLabel::Reference).map_err(wrap)?;
            (r, renderer.rendered(trial.comparison, SurfaceLabel::Comparison).map_err(wrap)?)
        }
        ReferenceSide::Right => {
            let c = renderer.rendered(trial.comparison, SurfaceLabel::Comparison).map_err(wrap)?;
            (renderer.rendered(reference, SurfaceLabel::Reference).map_err(wrap)?, c)
        }
    };
    let mut rng = stream_rng(seed, trial.seed_stream);
    let chose = observer_decide(obs, k_ref, k_cmp, &mut rng);
    Ok(TrialRecord {
        trial: *trial,
        response: Response::new(chose, reference, trial.comparison),
        rendered_k_ref: k_ref,
        rendered_k_cmp: k_cmp,
    })
}

/// Optional per-subject ratings. Stored as given; never simulated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectiveRatings {
    pub realism: Option<f64>,
    pub comfort: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverDescriptor {
    pub id: String,
    pub model: ObserverModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<SubjectiveRatings>,
}

/// Procedure details from the human protocol, carried as metadata with no
/// effect on the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureMetadata {
    pub short_break_every_trials: usize,
    pub short_break_minutes: f64,
    pub mode_break_minutes: f64,
    pub ear_protection: bool,
}

impl Default for ProcedureMetadata {
    fn default() -> Self {
        Self { short_break_every_trials: 55, short_break_minutes: 2.0, mode_break_minutes: 10.0, ear_protection: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fingerprints {
    pub render: String,
    pub protocol: String,
    pub observer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunStamp>,
}

/// Identifies the run that produced an artifact. Artifacts with equal stamps
/// are byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStamp {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

/// SHA-256 of the canonical JSON encoding of a value.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialise");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub protocol: StimulusProtocol,
    pub observer: ObserverDescriptor,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
    pub fingerprints: Fingerprints,
    pub procedure: ProcedureMetadata,
}

impl SessionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fraction correct over trials where the answer is defined.
    pub fn accuracy(&self) -> Option<f64> {
        let scored: Vec<bool> = self.records.iter().filter_map(|r| r.response.correct).collect();
        if scored.is_empty() {
            return None;
        }
        Some(scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64)
    }
}

/// Execute a full session: schedule, render, decide, log.
pub fn run_session(
    protocol: &StimulusProtocol,
    observer: &ObserverDescriptor,
    seed: u64,
    setup: &RenderSetup,
) -> Result<SessionLog, ExperimentError> {
    protocol.validate().map_err(|e| e.within("protocol"))?;
    observer.model.validate().map_err(|e| e.within(&format!("observers.{}", observer.id)))?;
    let mut renderer = SurfaceRenderer::new(setup, protocol.axis, protocol.mode);
    let records = build_schedule(protocol, seed)
        .iter()
        .map(|t| run_trial(t, protocol.reference, &observer.model, &mut renderer, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SessionLog {
        protocol: protocol.clone(),
        observer: observer.clone(),
        seed,
        records,
        fingerprints: Fingerprints {
            render: fingerprint(renderer.setup()),
            protocol: fingerprint(protocol),
            observer: fingerprint(&observer.model),
            run: None,
        },
        procedure: ProcedureMetadata::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anon(model: ObserverModel) -> ObserverDescriptor {
        ObserverDescriptor { id: "s".into(), model, ratings: None }
    }

    #[test]
    fn default_schedule_is_full_factorial() {
        let p = StimulusProtocol::default();
        let s = build_schedule(&p, 7);
        assert_eq!(s.len(), 110);
        for level in DEFAULT_COMPARISONS_NM {
            assert_eq!(s.iter().filter(|t| t.comparison == level).count(), 10);
        }
        assert_eq!(s, build_schedule(&p, 7));
        assert_ne!(s, build_schedule(&p, 8));
        assert!(s.iter().enumerate().all(|(i, t)| t.index == i && t.seed_stream == i as u64 + 1));
    }

    #[test]
    fn protocol_validation() {
        let ok = StimulusProtocol::default();
        ok.validate().unwrap();
        let mut p = ok.clone();
        p.comparisons = vec![10.0, 28.0];
        assert_eq!(p.validate().unwrap_err().field, "comparisons");
        let mut p = ok.clone();
        p.repetitions = 0;
        assert_eq!(p.validate().unwrap_err().field, "repetitions");
        let mut p = ok;
        p.comparisons.swap(0, 1);
        assert!(p.validate().is_err());
    }

    #[test]
    fn noiseless_observer() {
        let obs = ObserverModel { pse_bias: 0.0, noise_sigma: 1e-9, lapse_rate: 0.0 };
        let mut rng = stream_rng(1, 1);
        assert!((0..1000).all(|_| observer_decide(&obs, 100.0, 190.0, &mut rng)));
        let biased = ObserverModel { pse_bias: 10.0, ..obs };
        assert!((0..1000).all(|_| !observer_decide(&biased, 100.0, 105.0, &mut rng)));
    }

    #[test]
    fn equal_stimuli_are_a_coin_flip() {
        let obs = ObserverModel { pse_bias: 0.0, noise_sigma: 20.0, lapse_rate: 0.0 };
        let mut rng = stream_rng(3, 9);
        let n = 40_000;
        let yes = (0..n).filter(|_| observer_decide(&obs, 100.0, 100.0, &mut rng)).count();
        let p = yes as f64 / n as f64;
        // 4 standard errors of a fair coin
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn monte_carlo_matches_analytic_curve() {
        let obs = ObserverModel { pse_bias: 6.0, noise_sigma: 15.0, lapse_rate: 0.08 };
        let n = 20_000;
        for (i, k) in [64.0, 100.0, 118.0, 154.0].into_iter().enumerate() {
            let mut rng = stream_rng(11, i as u64);
            let yes = (0..n).filter(|_| observer_decide(&obs, 100.0, k, &mut rng)).count();
            let p = obs.choice_probability(100.0, k);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((yes as f64 / n as f64 - p).abs() < 4.0 * se, "k={k}");
        }
    }

    #[test]
    fn observer_from_thresholds() {
        let obs = ObserverModel::from_pse_jnd(154.42, 57.15, 100.0);
        assert!((obs.analytic_pse(100.0) - 154.42).abs() < 1e-12);
        assert!((obs.analytic_jnd() - 57.15).abs() < 1e-12);
        assert!((obs.choice_probability(100.0, 154.42) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn response_correctness() {
        assert_eq!(Response::new(true, 100.0, 100.0).correct, None);
        assert_eq!(Response::new(true, 100.0, 190.0).correct, Some(true));
        assert_eq!(Response::new(true, 100.0, 10.0).correct, Some(false));
        assert_eq!(Response::new(false, 100.0, 10.0).correct, Some(true));
    }

    #[test]
    fn session_is_replayable_and_sensible() {
        let p = StimulusProtocol::default();
        let obs = anon(ObserverModel { pse_bias: 0.0, noise_sigma: 1e-6, lapse_rate: 0.0 });
        let setup = RenderSetup::default();
        let a = run_session(&p, &obs, 42, &setup).unwrap();
        let b = run_session(&p, &obs, 42, &setup).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 110);
        assert_eq!(a.accuracy(), Some(1.0));
        for r in &a.records {
            assert!((r.rendered_k_cmp / r.trial.comparison - 1.0).abs() < 0.01);
            if r.trial.comparison == p.reference {
                assert_eq!(r.response.correct, None);
            }
        }
    }

    #[test]
    fn rejects_invalid_observer() {
        let obs = anon(ObserverModel { pse_bias: 0.0, noise_sigma: 0.0, lapse_rate: 0.0 });
        let err = run_session(&StimulusProtocol::default(), &obs, 1, &RenderSetup::default()).unwrap_err();
        assert!(err.to_string().contains("noise_sigma"));
    }
}
