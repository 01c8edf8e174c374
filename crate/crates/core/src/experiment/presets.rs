//! Observer presets seeded from published per-subject PSE/JND values for the
//! two feedback directions and three grounding locations.

use crate::haptic_env::StudyAxis;
use crate::kinematics::GroundingMode;

use super::{ObserverModel, DEFAULT_REFERENCE_NM};

/// One subject's (PSE, JND) in N/m for back of hand, proximal phalanx and
/// middle phalanx, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectRow {
    pub axis: StudyAxis,
    pub subject: u8,
    pub values: [(f64, f64); 3],
}

impl SubjectRow {
    pub fn pse_jnd(&self, mode: GroundingMode) -> (f64, f64) {
        self.values[mode_index(mode)]
    }

    pub fn observer(&self, mode: GroundingMode) -> ObserverModel {
        let (pse, jnd) = self.pse_jnd(mode);
        ObserverModel::from_pse_jnd(pse, jnd, DEFAULT_REFERENCE_NM)
    }
}

/// Condition mean and standard deviation rows, per axis and mode. The
/// published standard deviations are population (divide-by-n) values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionRow {
    pub axis: StudyAxis,
    pub mode: GroundingMode,
    pub mean_pse: f64,
    pub mean_jnd: f64,
    pub sd_pse: f64,
    pub sd_jnd: f64,
}

pub fn mode_index(mode: GroundingMode) -> usize {
    match mode {
        GroundingMode::BackOfHand => 0,
        GroundingMode::ProximalPhalanx => 1,
        GroundingMode::MiddlePhalanx => 2,
    }
}

const fn row(axis: StudyAxis, subject: u8, values: [(f64, f64); 3]) -> SubjectRow {
    SubjectRow { axis, subject, values }
}

use StudyAxis::{AlongFingerAxis as A, FlexionExtension as B};

#[rustfmt::skip]
pub const SUBJECTS: [SubjectRow; 24] = [
    row(A, 1,  [(154.42, 57.15), (150.74, 47.35), (120.34, 41.32)]),
    row(A, 2,  [(111.17,  9.86), (107.58, 17.44), (103.37,  6.2 )]),
    row(A, 3,  [(139.75, 48.5 ), (129.95, 34.27), ( 81.3 ,  7.32)]),
    row(A, 4,  [( 87.56,  6.07), ( 92.95,  5.72), (102.27, 20.24)]),
    row(A, 5,  [( 98.62, 32.37), ( 85.2 ,  6.79), (114.85, 19.04)]),
    row(A, 6,  [(113.23, 13.08), (104.68, 25.28), (100.74, 20.1 )]),
    row(A, 7,  [( 99.6 , 13.21), (108.99,  7.97), ( 94.68,  9.48)]),
    row(A, 8,  [(118.75, 46.88), (128.0 , 31.13), (109.11, 38.95)]),
    row(A, 9,  [(115.5 , 20.23), (103.4 , 10.16), (105.51, 19.72)]),
    row(A, 10, [(114.64, 12.93), (103.46, 12.15), (116.09, 19.0 )]),
    row(A, 11, [( 85.87,  7.32), (108.22, 12.65), (117.25, 17.41)]),
    row(A, 12, [( 92.94,  6.66), (114.14, 22.17), ( 91.54, 15.65)]),
    row(B, 1,  [( 96.06,  0.17), (101.2 , 12.26), (103.8 , 13.75)]),
    row(B, 2,  [( 92.71, 13.51), (104.59, 13.02), ( 92.79,  8.64)]),
    row(B, 3,  [(125.72, 40.06), ( 94.9 , 28.36), (121.88, 45.98)]),
    row(B, 4,  [(104.87,  6.41), ( 98.32, 14.36), ( 87.34,  6.75)]),
    row(B, 5,  [(115.52, 41.74), (114.25, 40.84), (102.2 , 20.0 )]),
    row(B, 6,  [(122.16, 33.52), ( 90.2 , 16.44), (119.91, 16.88)]),
    row(B, 7,  [(121.54, 20.98), (116.83, 36.64), (125.8 , 64.77)]),
    row(B, 8,  [(105.76, 10.69), (108.89, 11.67), (104.6 , 26.4 )]),
    row(B, 9,  [( 98.85, 25.9 ), (100.0 , 16.83), (117.3 , 25.28)]),
    row(B, 10, [( 99.45, 41.48), ( 95.07, 22.3 ), (104.98, 24.18)]),
    row(B, 11, [(138.96, 41.62), (127.0 , 30.4 ), (122.64, 24.03)]),
    row(B, 12, [(113.34, 38.78), ( 95.35, 45.78), (120.79, 60.43)]),
];

use GroundingMode::{BackOfHand as Boh, MiddlePhalanx as Mid, ProximalPhalanx as Prox};

const fn cond(axis: StudyAxis, mode: GroundingMode, mean_pse: f64, mean_jnd: f64, sd_pse: f64, sd_jnd: f64) -> ConditionRow {
    ConditionRow { axis, mode, mean_pse, mean_jnd, sd_pse, sd_jnd }
}

#[rustfmt::skip]
pub const CONDITIONS: [ConditionRow; 6] = [
    cond(A, Boh,  111.004, 22.855, 19.581, 17.677),
    cond(A, Prox, 111.442, 19.423, 16.843, 12.404),
    cond(A, Mid,  104.754, 19.536, 11.178, 10.411),
    cond(B, Boh,  111.245, 26.238, 13.426, 14.761),
    cond(B, Prox, 103.883, 24.075, 10.435, 11.520),
    cond(B, Mid,  110.336, 28.091, 12.181, 18.222),
];

pub fn subjects(axis: StudyAxis) -> impl Iterator<Item = &'static SubjectRow> {
    SUBJECTS.iter().filter(move |r| r.axis == axis)
}

pub fn condition(axis: StudyAxis, mode: GroundingMode) -> &'static ConditionRow {
    CONDITIONS.iter().find(|c| c.axis == axis && c.mode == mode).expect("every condition is listed")
}
