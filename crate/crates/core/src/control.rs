//! Force rendering loop: desired force → tip displacement → tendon references
//! → per-actuator PD tracking against a simulated motor/finger plant.
//!
//! Each actuator is modelled as a first-order velocity lag (`tau dv/dt = u - v`)
//! feeding an integrator, discretised exactly for a zero-order-hold command.
//! Positions are tracked in tendon travel (mm); the encoder quantises the
//! measured shaft angle.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    self, ArcState, FingerGeometry, GroundingMode, KinematicsError, MotionType, TendonPair,
};
use crate::validate::{non_negative, positive, ValidationError};

/// Counts per encoder line with quadrature decoding.
pub const QUADRATURE_FACTOR: f64 = 4.0;

/// Consecutive over-threshold steps before a loop is declared unstable.
pub const INSTABILITY_WINDOW: usize = 100;
/// Error growth factor over the initial scale that counts as divergence.
pub const INSTABILITY_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control loop diverged at step {step}")]
    Unstable { step: usize, trace: Box<LoopTrace> },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("trace export failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace export failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Torque capacity and moment arm for flexion feedback in one grounding mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexionLimit {
    pub torque_cap_nmm: f64,
    /// Distance from the most proximal actuated joint to the fingertip (mm).
    pub lever_arm_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlexionLimits {
    pub back_of_hand: FlexionLimit,
    pub proximal_phalanx: FlexionLimit,
    pub middle_phalanx: FlexionLimit,
}

impl Default for FlexionLimits {
    fn default() -> Self {
        Self {
            back_of_hand: FlexionLimit { torque_cap_nmm: 300.0, lever_arm_mm: 90.0 },
            proximal_phalanx: FlexionLimit { torque_cap_nmm: 190.0, lever_arm_mm: 55.0 },
            middle_phalanx: FlexionLimit { torque_cap_nmm: 80.0, lever_arm_mm: 25.0 },
        }
    }
}

impl FlexionLimits {
    pub fn for_mode(&self, mode: GroundingMode) -> FlexionLimit {
        match mode {
            GroundingMode::BackOfHand => self.back_of_hand,
            GroundingMode::ProximalPhalanx => self.proximal_phalanx,
            GroundingMode::MiddlePhalanx => self.middle_phalanx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    pub mode: GroundingMode,
    /// Largest force along the finger axis (N).
    pub max_axial_force_n: f64,
    /// Fingertip torque range across modes (N·mm).
    pub torque_min_nmm: f64,
    pub torque_max_nmm: f64,
    pub gear_ratio: f64,
    /// Encoder lines per motor revolution.
    pub encoder_cpr: f64,
    /// Force-position translator gain (mm of tip travel per N).
    pub device_compliance_mm_per_n: f64,
    pub geometry: FingerGeometry,
    pub flexion_limits: FlexionLimits,
}

pub const MAX_AXIAL_FORCE_N: f64 = 28.9;
pub const MAX_TORQUE_NMM: f64 = 300.0;

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            mode: GroundingMode::BackOfHand,
            max_axial_force_n: MAX_AXIAL_FORCE_N,
            torque_min_nmm: 80.0,
            torque_max_nmm: MAX_TORQUE_NMM,
            gear_ratio: 256.0,
            encoder_cpr: 50.0,
            // full axial force maps to 10 mm of tip travel
            device_compliance_mm_per_n: 10.0 / MAX_AXIAL_FORCE_N,
            geometry: FingerGeometry::default(),
            flexion_limits: FlexionLimits::default(),
        }
    }
}

impl DeviceConfig {
    pub fn with_mode(mut self, mode: GroundingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        positive("max_axial_force_n", self.max_axial_force_n)?;
        positive("torque_min_nmm", self.torque_min_nmm)?;
        positive("torque_max_nmm", self.torque_max_nmm)?;
        if self.torque_min_nmm >= self.torque_max_nmm {
            return Err(ValidationError::new("torque_min_nmm", "must be below torque_max_nmm"));
        }
        positive("gear_ratio", self.gear_ratio)?;
        positive("encoder_cpr", self.encoder_cpr)?;
        positive("device_compliance_mm_per_n", self.device_compliance_mm_per_n)?;
        self.geometry
            .validate()
            .map_err(|e| ValidationError::new("geometry", e.to_string()))?;
        for mode in GroundingMode::ALL {
            let lim = self.flexion_limits.for_mode(mode);
            let field = format!("flexion_limits.{mode}");
            positive(&format!("{field}.lever_arm_mm"), lim.lever_arm_mm)?;
            if !(lim.torque_cap_nmm >= self.torque_min_nmm && lim.torque_cap_nmm <= self.torque_max_nmm) {
                return Err(ValidationError::new(
                    format!("{field}.torque_cap_nmm"),
                    format!(
                        "{} outside [{}, {}]",
                        lim.torque_cap_nmm, self.torque_min_nmm, self.torque_max_nmm
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Largest force the device can render for a feedback direction.
    pub fn max_force(&self, motion: MotionType) -> f64 {
        match motion {
            MotionType::AxialPull => self.max_axial_force_n,
            MotionType::FlexionExtension => {
                let lim = self.flexion_limits.for_mode(self.mode);
                lim.torque_cap_nmm / lim.lever_arm_mm
            }
        }
    }

    /// Output-shaft angle of one encoder count (rad).
    pub fn count_angle(&self) -> f64 {
        TAU / (self.encoder_cpr * QUADRATURE_FACTOR * self.gear_ratio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdGains {
    /// Proportional gain ((mm/s) per mm).
    pub k_p: f64,
    /// Derivative gain ((mm/s) per mm/s).
    pub k_d: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        // tuned by examples/tune_gains.rs
        Self { k_p: 80.0, k_d: 1.05 }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<(), ValidationError> {
        positive("k_p", self.k_p)?;
        non_negative("k_d", self.k_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub gains: PdGains,
    pub loop_period_s: f64,
    /// Velocity lag of motor plus finger.
    pub plant_time_constant_s: f64,
    /// Tendon spool radius on the gearbox output (mm).
    pub spool_radius_mm: f64,
    /// Command saturation (mm/s of tendon travel).
    pub max_tendon_speed_mm_s: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            gains: PdGains::default(),
            loop_period_s: 1e-3,
            plant_time_constant_s: 0.02,
            spool_radius_mm: 3.0,
            max_tendon_speed_mm_s: 30.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.gains.validate().map_err(|e| e.within("gains"))?;
        positive("loop_period_s", self.loop_period_s)?;
        positive("plant_time_constant_s", self.plant_time_constant_s)?;
        positive("spool_radius_mm", self.spool_radius_mm)?;
        if !(self.max_tendon_speed_mm_s > 0.0) {
            return Err(ValidationError::new("max_tendon_speed_mm_s", "must be positive"));
        }
        Ok(())
    }
}

/// Desired tip displacement (mm) for a desired force along the feedback
/// direction. The force saturates at the device limit for that direction.
pub fn force_to_position(f_desired: f64, motion: MotionType, cfg: &DeviceConfig) -> f64 {
    let magnitude = f_desired.abs().min(cfg.max_force(motion));
    magnitude.copysign(f_desired) * cfg.device_compliance_mm_per_n
}

/// PD law with `e = y - r`; the output saturates at `±limit`.
pub fn pd_step(e: f64, e_prev: f64, dt: f64, gains: &PdGains, limit: f64) -> f64 {
    debug_assert!(dt > 0.0);
    let u = gains.k_p * e + gains.k_d * (e - e_prev) / dt;
    u.clamp(-limit, limit)
}

/// Output-shaft angle for an encoder count.
pub fn encoder_to_angle(counts: i64, cfg: &DeviceConfig) -> f64 {
    TAU * counts as f64 / (cfg.encoder_cpr * QUADRATURE_FACTOR * cfg.gear_ratio)
}

pub fn angle_to_counts(angle: f64, cfg: &DeviceConfig) -> i64 {
    (angle / cfg.count_angle()).round() as i64
}

/// Actuator travel (mm, each in its own rotation sense) that moves the tip by
/// `tip_mm` in the given direction.
///
/// Axial pull winds both tendons in by the same amount with opposite shaft
/// senses, leaving the bend angle unchanged. Flexion bends the arc by
/// `tip_mm / r` with both shafts turning the same way.
pub fn tendon_references(
    tip_mm: f64,
    motion: MotionType,
    geom: &FingerGeometry,
) -> Result<TendonPair, KinematicsError> {
    match motion {
        MotionType::AxialPull => Ok(TendonPair { a: tip_mm, b: -tip_mm }),
        MotionType::FlexionExtension => {
            let r = geom.rest_radius();
            let theta_o = geom.rest_theta;
            kinematics::tendon_displacements(geom, r, theta_o, theta_o - tip_mm / r)
        }
    }
}

/// Split actuator travel into its bend-angle change and axial pull.
pub fn decompose_travel(travel: TendonPair, geom: &FingerGeometry) -> (f64, f64) {
    let r = geom.rest_radius();
    let d_theta = (travel.a + travel.b) / (2.0 * r + geom.r_a - geom.r_b);
    let axial = travel.a - (r + geom.r_a) * d_theta;
    (d_theta, axial)
}

/// Tip displacement along the feedback direction for a given actuator travel.
pub fn tip_displacement(travel: TendonPair, motion: MotionType, geom: &FingerGeometry) -> f64 {
    let (d_theta, axial) = decompose_travel(travel, geom);
    match motion {
        MotionType::AxialPull => axial,
        MotionType::FlexionExtension => geom.rest_radius() * d_theta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub shaft_angle_a: f64,
    pub shaft_angle_b: f64,
    pub shaft_velocity_a: f64,
    pub shaft_velocity_b: f64,
    pub arc: ArcState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Actuator {
    /// Tendon travel (mm).
    travel: f64,
    /// Travel rate (mm/s).
    rate: f64,
}

impl Actuator {
    /// Advance one period under a held velocity command.
    fn advance(&mut self, cmd: f64, dt: f64, tau: f64) {
        let decay = (-dt / tau).exp();
        let gain = 1.0 - decay;
        self.travel += cmd * dt + (self.rate - cmd) * tau * gain;
        self.rate = cmd + (self.rate - cmd) * decay;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSample {
    pub t: f64,
    pub desired_force: f64,
    #[serde(rename = "ref_pos")]
    pub reference_position: f64,
    #[serde(rename = "act_pos")]
    pub actual_position: f64,
    pub error: f64,
    pub command: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopTrace {
    pub period_s: f64,
    pub samples: Vec<LoopSample>,
}

impl LoopTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with header `t,desired_force,ref_pos,act_pos,error,command`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ControlError> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.samples {
            w.serialize(s)?;
        }
        if self.samples.is_empty() {
            w.write_record(["t", "desired_force", "ref_pos", "act_pos", "error", "command"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stepwise force-rendering loop for one feedback direction.
#[derive(Debug, Clone)]
pub struct ForceLoop {
    device: DeviceConfig,
    control: ControlConfig,
    motion: MotionType,
    actuators: [Actuator; 2],
    prev_error: [f64; 2],
    step: usize,
    first_error: f64,
    peak_reference: f64,
    over_threshold: usize,
}

impl ForceLoop {
    pub fn new(device: &DeviceConfig, control: &ControlConfig, motion: MotionType) -> Result<Self, ControlError> {
        device.validate().map_err(|e| e.within("device"))?;
        control.validate().map_err(|e| e.within("control"))?;
        Ok(Self {
            device: device.clone(),
            control: *control,
            motion,
            actuators: [Actuator::default(); 2],
            prev_error: [0.0; 2],
            step: 0,
            first_error: 0.0,
            peak_reference: 0.0,
            over_threshold: 0,
        })
    }

    pub fn motion(&self) -> MotionType {
        self.motion
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.control.loop_period_s
    }

    fn travel(&self) -> TendonPair {
        TendonPair { a: self.actuators[0].travel, b: self.actuators[1].travel }
    }

    fn measured(&self, travel: f64) -> f64 {
        let rho = self.control.spool_radius_mm;
        let counts = angle_to_counts(travel / rho, &self.device);
        encoder_to_angle(counts, &self.device) * rho
    }

    /// Current tip displacement along the feedback direction (mm).
    pub fn tip_position(&self) -> f64 {
        tip_displacement(self.travel(), self.motion, &self.device.geometry)
    }

    /// Force the device currently exerts on the fingertip (N), limited by
    /// what the actuators can deliver. Joint torque is only ever resistive, so
    /// flexion output is one-sided; axial pull is symmetric.
    pub fn emitted_force(&self) -> f64 {
        let f = self.tip_position() / self.device.device_compliance_mm_per_n;
        let cap = self.device.max_force(self.motion);
        match self.motion {
            MotionType::AxialPull => f.clamp(-cap, cap),
            MotionType::FlexionExtension => f.clamp(0.0, cap),
        }
    }

    pub fn plant_state(&self) -> Result<PlantState, KinematicsError> {
        let geom = &self.device.geometry;
        let rho = self.control.spool_radius_mm;
        let (d_theta, _) = decompose_travel(self.travel(), geom);
        let r = geom.rest_radius();
        let theta = kinematics::arc_from_displacements(geom, r, geom.rest_theta, (r + geom.r_a) * d_theta)?;
        Ok(PlantState {
            shaft_angle_a: self.actuators[0].travel / rho,
            shaft_angle_b: self.actuators[1].travel / rho,
            shaft_velocity_a: self.actuators[0].rate / rho,
            shaft_velocity_b: self.actuators[1].rate / rho,
            arc: ArcState::from_radius(theta, r)?,
        })
    }

    /// Run one control period for the given desired force. The returned sample
    /// describes the state at the start of the period; the plant then advances.
    pub fn step(&mut self, desired_force: f64) -> Result<LoopSample, KinematicsError> {
        let dt = self.control.loop_period_s;
        let geom = &self.device.geometry;
        let reference = force_to_position(desired_force, self.motion, &self.device);
        let refs = tendon_references(reference, self.motion, geom)?;
        let actual = self.tip_position();

        let mut commands = [0.0; 2];
        let mut worst = 0.0_f64;
        for (i, target) in [refs.a, refs.b].into_iter().enumerate() {
            let e = self.measured(self.actuators[i].travel) - target;
            let e_prev = if self.step == 0 { e } else { self.prev_error[i] };
            commands[i] = pd_step(e, e_prev, dt, &self.control.gains, self.control.max_tendon_speed_mm_s);
            self.prev_error[i] = e;
            worst = worst.max(e.abs());
        }
        self.track_divergence(worst, refs);

        let sample = LoopSample {
            t: self.time(),
            desired_force,
            reference_position: reference,
            actual_position: actual,
            error: actual - reference,
            command: commands[0],
        };
        let tau = self.control.plant_time_constant_s;
        // positive command (measured ahead of reference) winds the tendon back
        for (act, u) in self.actuators.iter_mut().zip(commands) {
            act.advance(-u, dt, tau);
        }
        self.step += 1;
        Ok(sample)
    }

    fn track_divergence(&mut self, error: f64, refs: TendonPair) {
        if self.first_error == 0.0 && error > 0.0 {
            self.first_error = error;
        }
        self.peak_reference = self.peak_reference.max(refs.a.abs()).max(refs.b.abs());
        let scale = self.first_error.max(self.peak_reference);
        if scale > 0.0 && error > INSTABILITY_FACTOR * scale {
            self.over_threshold += 1;
        } else {
            self.over_threshold = 0;
        }
    }

    pub fn is_diverging(&self) -> bool {
        self.over_threshold >= INSTABILITY_WINDOW
    }
}

/// Simulate the loop for `duration_s` under a time-varying desired force.
pub fn simulate_loop(
    device: &DeviceConfig,
    control: &ControlConfig,
    motion: MotionType,
    force_profile: impl Fn(f64) -> f64,
    duration_s: f64,
) -> Result<LoopTrace, ControlError> {
    positive("duration_s", duration_s)?;
    let mut lp = ForceLoop::new(device, control, motion)?;
    let steps = (duration_s / control.loop_period_s).round() as usize;
    let mut trace = LoopTrace { period_s: control.loop_period_s, samples: Vec::with_capacity(steps) };
    for _ in 0..steps {
        let f = force_profile(lp.time());
        trace.samples.push(lp.step(f)?);
        if lp.is_diverging() {
            return Err(ControlError::Unstable { step: lp.step, trace: Box::new(trace) });
        }
    }
    Ok(trace)
}
