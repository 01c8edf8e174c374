//! Grid search for the default PD gains.
//!
//! Each candidate drives a 5 N step on both feedback directions. A candidate
//! qualifies if it overshoots by less than 1%, stays within 2% of the
//! reference from some time on, and still settles with k_p doubled. Among
//! candidates settling within 10 ms of the fastest, the smallest gains win.
//!
//! cargo run --release --example tune_gains

use handground::control::{simulate_loop, ControlConfig, DeviceConfig, PdGains};
use handground::kinematics::MotionType;

const STEP_N: f64 = 5.0;
const DURATION_S: f64 = 1.0;
const TIE_S: f64 = 0.010;

struct Score {
    settle_s: f64,
    overshoot: f64,
}

fn score(gains: PdGains) -> Option<Score> {
    let device = DeviceConfig::default();
    let control = ControlConfig { gains, ..ControlConfig::default() };
    let mut worst = Score { settle_s: 0.0, overshoot: 0.0 };
    for motion in [MotionType::AxialPull, MotionType::FlexionExtension] {
        let trace = simulate_loop(&device, &control, motion, |_| STEP_N, DURATION_S).ok()?;
        let target = trace.samples[0].reference_position;
        let rel: Vec<f64> = trace.samples.iter().map(|s| s.error / target).collect();
        let overshoot = trace.samples.iter().map(|s| s.actual_position / target - 1.0).fold(0.0, f64::max);
        let last_out = rel.iter().rposition(|e| e.abs() > 0.02)?;
        if last_out + 1 == rel.len() {
            return None;
        }
        worst.settle_s = worst.settle_s.max((last_out + 1) as f64 * trace.period_s);
        worst.overshoot = worst.overshoot.max(overshoot);
    }
    Some(worst)
}

fn main() {
    let mut candidates: Vec<(PdGains, Score)> = Vec::new();
    for ip in 1..=40 {
        for id in 0..=40 {
            let gains = PdGains { k_p: 5.0 * ip as f64, k_d: 0.05 * id as f64 };
            let Some(s) = score(gains).filter(|s| s.overshoot < 0.01) else { continue };
            if score(PdGains { k_p: 2.0 * gains.k_p, ..gains }).is_none() {
                continue;
            }
            candidates.push((gains, s));
        }
    }
    let Some(fastest) = candidates.iter().map(|(_, s)| s.settle_s).min_by(f64::total_cmp) else {
        println!("no candidate qualified");
        return;
    };
    // the loop is rate-limited, so settle times within TIE_S are treated as equal
    let (g, s) = candidates
        .iter()
        .filter(|(_, s)| s.settle_s <= fastest + TIE_S)
        .min_by(|a, b| a.0.k_p.total_cmp(&b.0.k_p).then(a.0.k_d.total_cmp(&b.0.k_d)))
        .expect("the fastest candidate is in range");
    println!("k_p = {}, k_d = {:.2}", g.k_p, g.k_d);
    println!("settles within 2% after {:.3} s, overshoot {:.2}%", s.settle_s, 100.0 * s.overshoot);
}
