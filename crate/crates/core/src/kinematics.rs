//! Planar constant-curvature model of the finger and its two tendons.
//!
//! The finger is treated as a single circular arc in the x–z plane, bent by
//! an angle `theta` with arc length `l` and radius `r = l / theta`. Tendon `a`
//! runs on the outside of the arc at offset `r_a`, tendon `b` on the inside at
//! offset `r_b`. The mapping is the same for every grounding mode; the mode
//! only decides which finger joints the device drives.
//!
//! Units: millimetres and radians.

use nalgebra::{Matrix4, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bend angles below this are treated as a straight finger.
pub const STRAIGHT_EPS: f64 = 1e-6;

/// Default upper bound on the bend angle.
pub const DEFAULT_THETA_MAX: f64 = std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid arc: {0}")]
    InvalidArc(String),
    #[error("invalid finger geometry: {0}")]
    InvalidGeometry(String),
    #[error("tendon-b offset {r_b} mm is not smaller than the arc radius {radius} mm")]
    TendonOffset { r_b: f64, radius: f64 },
    #[error("bend angle {theta} rad outside [0, {theta_max}]")]
    OutOfRange { theta: f64, theta_max: f64 },
}

pub type Result<T> = std::result::Result<T, KinematicsError>;

/// Constant-curvature configuration of the finger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcState {
    /// Bend angle (rad).
    pub theta: f64,
    /// Arc length (mm).
    pub l: f64,
    /// Arc radius (mm); infinite for a straight finger.
    pub r: f64,
}

impl ArcState {
    /// Arc of radius `r` bent by `theta`; the length follows from `l = r * theta`.
    pub fn from_radius(theta: f64, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(KinematicsError::InvalidArc(format!("radius {r} must be positive")));
        }
        let arc = Self { theta, l: r * theta, r };
        arc.validate()?;
        Ok(arc)
    }

    /// Arc of length `l` bent by `theta`. A bend below [`STRAIGHT_EPS`] gives a
    /// straight finger with infinite radius.
    pub fn from_length(theta: f64, l: f64) -> Result<Self> {
        let r = if theta.abs() <= STRAIGHT_EPS { f64::INFINITY } else { l / theta };
        let arc = Self { theta, l, r };
        arc.validate()?;
        Ok(arc)
    }

    pub fn straight(l: f64) -> Result<Self> {
        Self::from_length(0.0, l)
    }

    pub fn is_straight(&self) -> bool {
        self.theta.abs() <= STRAIGHT_EPS
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_within(DEFAULT_THETA_MAX)
    }

    pub fn validate_within(&self, theta_max: f64) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(KinematicsError::InvalidArc(format!("length {} must be positive", self.l)));
        }
        if !(self.theta >= -STRAIGHT_EPS && self.theta <= theta_max) {
            return Err(KinematicsError::OutOfRange { theta: self.theta, theta_max });
        }
        if !self.is_straight() {
            let rel = (self.l - self.r * self.theta).abs() / self.l;
            if !(rel <= 1e-9) {
                return Err(KinematicsError::InvalidArc(format!(
                    "l = {} does not match r * theta = {}",
                    self.l,
                    self.r * self.theta
                )));
            }
        }
        Ok(())
    }
}

/// Tendon routing and finger size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FingerGeometry {
    /// Offset of tendon `a` from the tip centre-point (mm).
    pub r_a: f64,
    /// Offset of tendon `b` from the tip centre-point (mm).
    pub r_b: f64,
    /// Nominal finger arc length (mm).
    pub l: f64,
    /// Resting bend angle the device starts from (rad). The nominal arc
    /// radius is derived as `l / rest_theta`.
    pub rest_theta: f64,
    /// Largest admissible bend angle (rad).
    pub theta_max: f64,
}

impl Default for FingerGeometry {
    fn default() -> Self {
        Self { r_a: 8.0, r_b: 8.0, l: 80.0, rest_theta: 0.6, theta_max: DEFAULT_THETA_MAX }
    }
}

impl FingerGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KinematicsError::InvalidGeometry(msg));
        if !(self.r_a > 0.0) {
            return bad(format!("r_a = {} must be positive", self.r_a));
        }
        if !(self.r_b > 0.0) {
            return bad(format!("r_b = {} must be positive", self.r_b));
        }
        if !(self.l.is_finite() && self.l > 0.0) {
            return bad(format!("l = {} must be positive", self.l));
        }
        if !(self.theta_max > 0.0 && self.theta_max <= DEFAULT_THETA_MAX) {
            return bad(format!("theta_max = {} must lie in (0, pi]", self.theta_max));
        }
        if !(self.rest_theta > STRAIGHT_EPS && self.rest_theta <= self.theta_max) {
            return bad(format!(
                "rest_theta = {} must lie in (0, theta_max]",
                self.rest_theta
            ));
        }
        // The tightest reachable arc is at theta_max.
        let min_radius = self.l / self.theta_max;
        if self.r_b >= min_radius {
            return Err(KinematicsError::TendonOffset { r_b: self.r_b, radius: min_radius });
        }
        Ok(())
    }

    /// Arc radius of the resting configuration.
    pub fn rest_radius(&self) -> f64 {
        self.l / self.rest_theta
    }

    pub fn rest_arc(&self) -> Result<ArcState> {
        ArcState::from_length(self.rest_theta, self.l)
    }

    fn offset(&self, side: TendonSide) -> f64 {
        match side {
            TendonSide::A => self.r_a,
            TendonSide::B => self.r_b,
        }
    }
}

/// Which of the two tendons. `A` sits on the outside of the bend (`+` branch),
/// `B` on the inside (`-` branch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TendonSide {
    A,
    B,
}

impl TendonSide {
    fn sign(self) -> f64 {
        match self {
            TendonSide::A => 1.0,
            TendonSide::B => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Joint {
    Mp1,
    Pip,
    Dip,
}

/// Where the device base transfers reaction forces to the hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    BackOfHand,
    ProximalPhalanx,
    MiddlePhalanx,
}

impl GroundingMode {
    pub const ALL: [GroundingMode; 3] =
        [GroundingMode::BackOfHand, GroundingMode::ProximalPhalanx, GroundingMode::MiddlePhalanx];

    /// Finger joints spanned by the tendons in this mode.
    pub fn actuated_joints(self) -> &'static [Joint] {
        match self {
            GroundingMode::BackOfHand => &[Joint::Mp1, Joint::Pip, Joint::Dip],
            GroundingMode::ProximalPhalanx => &[Joint::Pip, Joint::Dip],
            GroundingMode::MiddlePhalanx => &[Joint::Dip],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroundingMode::BackOfHand => "back_of_hand",
            GroundingMode::ProximalPhalanx => "proximal_phalanx",
            GroundingMode::MiddlePhalanx => "middle_phalanx",
        }
    }
}

impl std::fmt::Display for GroundingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GroundingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        GroundingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown grounding mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationSense {
    Cw,
    Ccw,
}

impl RotationSense {
    pub fn of(value: f64) -> Self {
        if value < 0.0 {
            RotationSense::Ccw
        } else {
            RotationSense::Cw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionType {
    FlexionExtension,
    AxialPull,
}

/// Both actuators turning the same way bend the finger; opposite senses pull
/// along the finger axis.
pub fn classify_motion(dir_a: RotationSense, dir_b: RotationSense) -> MotionType {
    if dir_a == dir_b {
        MotionType::FlexionExtension
    } else {
        MotionType::AxialPull
    }
}

/// Fingertip position `(x, z)` for an arc.
pub fn fingertip_position(arc: &ArcState) -> Result<Point2<f64>> {
    arc.validate()?;
    if arc.is_straight() {
        return Ok(Point2::new(0.0, arc.l));
    }
    let (sin, cos) = arc.theta.sin_cos();
    Ok(Point2::new(arc.r * (1.0 - cos), arc.r * sin))
}

/// Homogeneous transform from the base frame to the end of tendon `side`:
/// a rotation about y by `theta` and a translation `(p_x, 0, p_z)` with
/// `p = (l / theta ± r_j) * (1 - cos theta, sin theta)`.
pub fn tendon_frame(arc: &ArcState, side: TendonSide, geom: &FingerGeometry) -> Result<Matrix4<f64>> {
    arc.validate()?;
    if arc.is_straight() {
        let mut t = Matrix4::identity();
        t[(2, 3)] = arc.l;
        return Ok(t);
    }
    let base = arc.l / arc.theta;
    if side == TendonSide::B && base - geom.r_b <= 0.0 {
        return Err(KinematicsError::TendonOffset { r_b: geom.r_b, radius: base });
    }
    let lever = base + side.sign() * geom.offset(side);
    let (sin, cos) = arc.theta.sin_cos();
    #[rustfmt::skip]
    let t = Matrix4::new(
        cos,  0.0, sin, lever * (1.0 - cos),
        0.0,  1.0, 0.0, 0.0,
        -sin, 0.0, cos, lever * sin,
        0.0,  0.0, 0.0, 1.0,
    );
    Ok(t)
}

/// Tendon length changes (mm); positive means the tendon shortens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TendonPair {
    pub a: f64,
    pub b: f64,
}

/// Displacements of both tendons when the arc goes from `theta_o` to `theta_t`
/// at radius `r`.
pub fn tendon_displacements(
    geom: &FingerGeometry,
    r: f64,
    theta_o: f64,
    theta_t: f64,
) -> Result<TendonPair> {
    if !(r > geom.r_b) {
        return Err(KinematicsError::TendonOffset { r_b: geom.r_b, radius: r });
    }
    let delta = theta_o - theta_t;
    Ok(TendonPair { a: (r + geom.r_a) * delta, b: (r - geom.r_b) * delta })
}

/// Bend angle reached after tendon `a` shortens by `s_a`; inverse of
/// [`tendon_displacements`].
pub fn arc_from_displacements(geom: &FingerGeometry, r: f64, theta_o: f64, s_a: f64) -> Result<f64> {
    if !(r > geom.r_b) {
        return Err(KinematicsError::TendonOffset { r_b: geom.r_b, radius: r });
    }
    let theta_t = theta_o - s_a / (r + geom.r_a);
    if !(0.0..=geom.theta_max).contains(&theta_t) {
        return Err(KinematicsError::OutOfRange { theta: theta_t, theta_max: geom.theta_max });
    }
    Ok(theta_t)
}
