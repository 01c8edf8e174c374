//! Headless planar virtual environment: stiff planar surfaces, a god-object
//! proxy for contact, and projection of the contact force onto the device's
//! feedback direction.
//!
//! Geometry is in millimetres in the finger's x–z plane; stiffness is in N/m.

use std::io::Write;

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::{ControlConfig, ControlError, DeviceConfig, ForceLoop, LoopTrace};
use crate::kinematics::MotionType;
use crate::validate::{positive, ValidationError};

/// Tolerance on the non-penetration check (mm).
pub const PENETRATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceLabel {
    Reference,
    Comparison,
}

/// Infinite plane `{p : n·p = offset}`; the free side is `n·p > offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub normal: Vector2<f64>,
    pub offset: f64,
    /// N/m
    pub stiffness: f64,
    pub label: SurfaceLabel,
}

impl Surface {
    pub fn new(normal: Vector2<f64>, offset: f64, stiffness: f64, label: SurfaceLabel) -> Result<Self, ValidationError> {
        positive("stiffness", stiffness)?;
        let len = normal.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(ValidationError::new("normal", "must be a non-zero vector"));
        }
        Ok(Self { normal: normal / len, offset, stiffness, label })
    }

    /// Surface through the origin facing the cursor for a study axis.
    pub fn for_axis(axis: StudyAxis, stiffness: f64, label: SurfaceLabel) -> Result<Self, ValidationError> {
        Self::new(axis.feedback_direction(), 0.0, stiffness, label)
    }

    /// Signed distance of a point above the plane (negative inside).
    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CursorState {
    pub position: Point2<f64>,
    pub god_position: Point2<f64>,
}

/// Which feedback direction a study renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    /// Study A: feedback along the finger axis (z); surfaces are presented as
    /// vertical planes in front of the fingertip.
    AlongFingerAxis,
    /// Study B: flexion–extension feedback (x); surfaces lie horizontally.
    FlexionExtension,
}

impl StudyAxis {
    pub const ALL: [StudyAxis; 2] = [StudyAxis::AlongFingerAxis, StudyAxis::FlexionExtension];

    pub fn feedback_direction(self) -> Vector2<f64> {
        match self {
            StudyAxis::AlongFingerAxis => Vector2::new(0.0, 1.0),
            StudyAxis::FlexionExtension => Vector2::new(1.0, 0.0),
        }
    }

    pub fn motion(self) -> MotionType {
        match self {
            StudyAxis::AlongFingerAxis => MotionType::AxialPull,
            StudyAxis::FlexionExtension => MotionType::FlexionExtension,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StudyAxis::AlongFingerAxis => "along_finger_axis",
            StudyAxis::FlexionExtension => "flexion_extension",
        }
    }
}

impl std::fmt::Display for StudyAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StudyAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "along_finger_axis" | "a" | "A" => Ok(StudyAxis::AlongFingerAxis),
            "flexion_extension" | "b" | "B" => Ok(StudyAxis::FlexionExtension),
            _ => Err(format!("unknown study axis `{s}`")),
        }
    }
}

/// Single-plane god object: the proxy follows the cursor in free space and
/// stays on the surface, at the point closest to the cursor, while the cursor
/// is inside.
///
/// `prev_god` must be on the free side; a proxy cannot cross the plane, so the
/// constrained minimum is the orthogonal projection of the cursor.
pub fn god_object_update(cursor: &Point2<f64>, surface: &Surface, prev_god: &Point2<f64>) -> Point2<f64> {
    debug_assert!(surface.signed_distance(prev_god) >= -PENETRATION_TOL);
    let depth = surface.signed_distance(cursor);
    if depth >= 0.0 {
        *cursor
    } else {
        cursor - surface.normal * depth
    }
}

/// Spring force (N) pulling the cursor towards the proxy.
pub fn interaction_force(cursor: &Point2<f64>, god: &Point2<f64>, surface: &Surface) -> Vector2<f64> {
    // mm -> m
    (god - cursor) * (surface.stiffness * 1e-3)
}

/// Component of the contact force along the device's active direction;
/// anything else is not rendered.
pub fn project_feedback(force: &Vector2<f64>, axis: StudyAxis) -> f64 {
    force.dot(&axis.feedback_direction())
}

/// Scripted press against a surface: approach, press to depth, hold, release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressProfile {
    /// Starting distance above the surface (mm).
    pub approach_gap_mm: f64,
    pub speed_mm_s: f64,
    /// Target penetration (mm).
    pub depth_mm: f64,
    pub hold_s: f64,
    /// Tail of the hold over which the rendered force is averaged.
    pub settle_window_s: f64,
}

impl Default for PressProfile {
    fn default() -> Self {
        Self { approach_gap_mm: 5.0, speed_mm_s: 50.0, depth_mm: 10.0, hold_s: 0.4, settle_window_s: 0.1 }
    }
}

impl PressProfile {
    pub fn validate(&self) -> Result<(), ValidationError> {
        positive("approach_gap_mm", self.approach_gap_mm)?;
        positive("speed_mm_s", self.speed_mm_s)?;
        positive("depth_mm", self.depth_mm)?;
        positive("hold_s", self.hold_s)?;
        positive("settle_window_s", self.settle_window_s)?;
        if self.settle_window_s > self.hold_s {
            return Err(ValidationError::new("settle_window_s", "must not exceed hold_s"));
        }
        Ok(())
    }

    fn approach_end(&self) -> f64 {
        self.approach_gap_mm / self.speed_mm_s
    }

    fn press_end(&self) -> f64 {
        self.approach_end() + self.depth_mm / self.speed_mm_s
    }

    fn hold_end(&self) -> f64 {
        self.press_end() + self.hold_s
    }

    pub fn duration(&self) -> f64 {
        self.hold_end() + (self.depth_mm + self.approach_gap_mm) / self.speed_mm_s
    }

    /// Commanded penetration at time `t` (negative above the surface).
    pub fn penetration(&self, t: f64) -> f64 {
        let start = -self.approach_gap_mm;
        if t <= self.press_end() {
            (start + self.speed_mm_s * t).min(self.depth_mm)
        } else if t <= self.hold_end() {
            self.depth_mm
        } else {
            (self.depth_mm - self.speed_mm_s * (t - self.hold_end())).max(start)
        }
    }

    pub fn in_settle_window(&self, t: f64) -> bool {
        t > self.hold_end() - self.settle_window_s && t <= self.hold_end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSample {
    pub t: f64,
    pub cursor_x: f64,
    pub cursor_z: f64,
    pub god_x: f64,
    pub god_z: f64,
    pub force_x: f64,
    pub force_z: f64,
    pub desired_force: f64,
    pub rendered_force: f64,
}

pub fn write_env_csv<W: Write>(samples: &[EnvSample], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressOutcome {
    /// Mean rendered force over the settle window divided by the commanded
    /// penetration (N/m).
    pub rendered_stiffness: f64,
    pub settled_force: f64,
    pub env: Vec<EnvSample>,
    pub loop_trace: LoopTrace,
}

/// Drive one press through contact, force projection and the force loop.
/// Traces are only kept when `record` is set.
pub fn render_press(
    surface: &Surface,
    axis: StudyAxis,
    device: &DeviceConfig,
    control: &ControlConfig,
    profile: &PressProfile,
    record: bool,
) -> Result<PressOutcome, ControlError> {
    profile.validate().map_err(|e| e.within("press"))?;
    let mut lp = ForceLoop::new(device, control, axis.motion())?;
    let steps = (profile.duration() / control.loop_period_s).round() as usize;
    let anchor = Point2::from(surface.normal * surface.offset);

    let mut god = anchor + surface.normal * profile.approach_gap_mm;
    let mut env = Vec::new();
    let mut trace = LoopTrace { period_s: control.loop_period_s, samples: Vec::new() };
    let (mut sum, mut n) = (0.0, 0usize);

    for _ in 0..steps {
        let t = lp.time();
        let cursor = anchor - surface.normal * profile.penetration(t);
        god = god_object_update(&cursor, surface, &god);
        let force = interaction_force(&cursor, &god, surface);
        let desired = project_feedback(&force, axis);
        let sample = lp.step(desired)?;
        if lp.is_diverging() {
            return Err(ControlError::Unstable { step: trace.len(), trace: Box::new(trace) });
        }
        let rendered = lp.emitted_force();
        if profile.in_settle_window(t) {
            sum += rendered;
            n += 1;
        }
        if record {
            env.push(EnvSample {
                t,
                cursor_x: cursor.x,
                cursor_z: cursor.y,
                god_x: god.x,
                god_z: god.y,
                force_x: force.x,
                force_z: force.y,
                desired_force: desired,
                rendered_force: rendered,
            });
            trace.samples.push(sample);
        }
    }
    let settled_force = sum / n.max(1) as f64;
    Ok(PressOutcome {
        rendered_stiffness: settled_force / (profile.depth_mm * 1e-3),
        settled_force,
        env,
        loop_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn floor(k: f64) -> Surface {
        Surface::new(Vector2::new(0.0, 1.0), 0.0, k, SurfaceLabel::Reference).unwrap()
    }

    #[test]
    fn free_space_follows_cursor() {
        let s = floor(100.0);
        let c = Point2::new(1.0, 5.0);
        assert_eq!(god_object_update(&c, &s, &Point2::new(0.0, 6.0)), c);
        assert_eq!(interaction_force(&c, &c, &s), Vector2::zeros());
    }

    #[test]
    fn penetration_projects_onto_plane() {
        let s = floor(100.0);
        let c = Point2::new(2.5, -3.0);
        let g = god_object_update(&c, &s, &Point2::new(2.5, 1.0));
        assert_eq!(g, Point2::new(2.5, 0.0));
        // sliding tracks the tangential coordinate
        let mut god = g;
        for i in 0..20 {
            let c = Point2::new(2.5 + i as f64 * 0.7, -3.0 - 0.1 * i as f64);
            god = god_object_update(&c, &s, &god);
            assert_eq!(god.x, c.x);
            assert!(s.signed_distance(&god) >= -PENETRATION_TOL);
        }
    }

    #[test]
    fn hooke_examples() {
        let s = floor(100.0);
        let c = Point2::new(0.0, -10.0);
        let g = god_object_update(&c, &s, &Point2::new(0.0, 1.0));
        let f = interaction_force(&c, &g, &s);
        assert_relative_eq!(f.y, 1.0, epsilon = 1e-12);
        assert_eq!(f.x, 0.0);
        let f = interaction_force(&c, &g, &floor(190.0));
        assert_relative_eq!(f.y, 1.9, epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_feedback(&Vector2::new(0.0, 1.0), StudyAxis::AlongFingerAxis), 1.0);
        assert_eq!(project_feedback(&Vector2::new(0.7, 0.0), StudyAxis::AlongFingerAxis), 0.0);
        assert_relative_eq!(project_feedback(&Vector2::new(0.6, 0.8), StudyAxis::FlexionExtension), 0.6);
    }

    #[test]
    fn surface_validation() {
        assert!(Surface::new(Vector2::new(0.0, 1.0), 0.0, 0.0, SurfaceLabel::Reference).is_err());
        assert!(Surface::new(Vector2::zeros(), 0.0, 10.0, SurfaceLabel::Reference).is_err());
        let s = Surface::new(Vector2::new(3.0, 4.0), 1.0, 10.0, SurfaceLabel::Comparison).unwrap();
        assert_relative_eq!(s.normal.norm(), 1.0);
    }

    #[test]
    fn press_profile_phases() {
        let p = PressProfile::default();
        assert_eq!(p.penetration(0.0), -5.0);
        assert_relative_eq!(p.penetration(0.1), 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.penetration(0.3), 10.0, epsilon = 1e-12);
        assert_eq!(p.penetration(0.5), 10.0);
        assert_relative_eq!(p.duration(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.penetration(p.duration()), -5.0, epsilon = 1e-9);
        assert!(p.in_settle_window(0.65) && !p.in_settle_window(0.55));
    }

    #[test]
    fn press_renders_nominal_stiffness() {
        for axis in StudyAxis::ALL {
            let s = Surface::for_axis(axis, 100.0, SurfaceLabel::Reference).unwrap();
            let out = render_press(&s, axis, &DeviceConfig::default(), &ControlConfig::default(), &PressProfile::default(), true).unwrap();
            assert_relative_eq!(out.rendered_stiffness, 100.0, max_relative = 0.01);
            assert_eq!(out.env.len(), 1000);
            assert_eq!(out.loop_trace.len(), 1000);
            assert!(out.env.iter().all(|e| s.signed_distance(&Point2::new(e.god_x, e.god_z)) >= -PENETRATION_TOL));
        }
    }
}
