//! Maximum-likelihood psychometric fitting for 2AFC "comparison stiffer"
//! data, threshold extraction, fit screening and per-condition summaries.
//!
//! The fitted curve is `P(x) = γ + (1 − γ − λ)·F((x − μ)/σ)` with γ fixed at 0
//! and λ bounded, where `F` is a standard cumulative Gaussian or logistic.

pub mod optim;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::experiment::SessionLog;
use crate::haptic_env::StudyAxis;
use crate::kinematics::GroundingMode;
use crate::validate::{positive, ValidationError};

use optim::{minimize, Bounds, NelderMeadOptions};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("session log has no trials")]
    EmptyLog,
    #[error("need at least {MIN_LEVELS} distinct stimulus levels, got {0}")]
    InsufficientLevels(usize),
    #[error("unidentifiable: {0}")]
    Unidentifiable(&'static str),
    #[error("no start converged ({} starts tried)", .0.len())]
    FitFailure(Vec<StartDiagnostic>),
    #[error("proportion {0} is not attainable by the core sigmoid")]
    Unattainable(f64),
    #[error("thresholds out of order: j25={j25}, pse={pse}, j75={j75}")]
    Ordering { pse: f64, j25: f64, j75: f64 },
    #[error("fit was rejected by screening")]
    NotAccepted,
    #[error("no accepted fits for {axis}/{mode}")]
    NoAcceptedFits { axis: StudyAxis, mode: GroundingMode },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const MIN_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    /// N/m
    pub stimulus: f64,
    pub n_trials: u32,
    pub n_chose_comparison: u32,
}

impl LevelCount {
    pub fn proportion(&self) -> f64 {
        self.n_chose_comparison as f64 / self.n_trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionTable {
    levels: Vec<LevelCount>,
}

impl ProportionTable {
    pub fn new(levels: Vec<LevelCount>) -> Result<Self, ValidationError> {
        for (i, l) in levels.iter().enumerate() {
            if !l.stimulus.is_finite() {
                return Err(ValidationError::new(format!("levels[{i}].stimulus"), "must be finite"));
            }
            if l.n_trials == 0 {
                return Err(ValidationError::new(format!("levels[{i}].n_trials"), "must be at least 1"));
            }
            if l.n_chose_comparison > l.n_trials {
                return Err(ValidationError::new(format!("levels[{i}].n_chose_comparison"), "exceeds n_trials"));
            }
        }
        if levels.windows(2).any(|w| w[1].stimulus <= w[0].stimulus) {
            return Err(ValidationError::new("levels", "stimuli must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[LevelCount] {
        &self.levels
    }

    pub fn n_trials(&self) -> u32 {
        self.levels.iter().map(|l| l.n_trials).sum()
    }

    /// Copy with every stimulus multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let levels = self.levels.iter().map(|l| LevelCount { stimulus: l.stimulus * factor, ..*l }).collect();
        Self { levels }
    }

    fn range(&self) -> (f64, f64) {
        (self.levels[0].stimulus, self.levels[self.levels.len() - 1].stimulus)
    }
}

/// Count "comparison stiffer" answers per nominal comparison level.
pub fn aggregate(log: &SessionLog) -> Result<ProportionTable, FitError> {
    if log.is_empty() {
        return Err(FitError::EmptyLog);
    }
    let mut counts: BTreeMap<u64, (f64, u32, u32)> = BTreeMap::new();
    for r in &log.records {
        let k = r.trial.comparison;
        // order-preserving key for non-negative finite floats
        let e = counts.entry(k.to_bits()).or_insert((k, 0, 0));
        e.1 += 1;
        e.2 += r.response.chose_comparison_stiffer as u32;
    }
    let mut levels: Vec<LevelCount> = counts
        .into_values()
        .map(|(stimulus, n_trials, n_chose_comparison)| LevelCount { stimulus, n_trials, n_chose_comparison })
        .collect();
    levels.sort_by(|a, b| a.stimulus.total_cmp(&b.stimulus));
    Ok(ProportionTable::new(levels)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    CumulativeGaussian,
    Logistic,
}

impl Family {
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            Family::CumulativeGaussian => Normal::standard().cdf(z),
            Family::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            Family::CumulativeGaussian => Normal::standard().inverse_cdf(p),
            Family::Logistic => (p / (1.0 - p)).ln(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::CumulativeGaussian => "cumulative_gaussian",
            Family::Logistic => "logistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    /// Deviance test level.
    pub p_value: f64,
    /// Accepted sigma range, N/m.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { p_value: 0.05, sigma_min: 0.0, sigma_max: 200.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub family: Family,
    pub lambda_max: f64,
    /// Search bounds on sigma as multiples of the stimulus span.
    pub sigma_min_span: f64,
    pub sigma_max_span: f64,
    pub max_iterations: usize,
    pub screen: ScreenConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: Family::CumulativeGaussian,
            lambda_max: 0.05,
            sigma_min_span: 0.0025,
            sigma_max_span: 10.0,
            max_iterations: 4000,
            screen: ScreenConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(0.0..0.5).contains(&self.lambda_max) {
            return Err(ValidationError::new("lambda_max", "must lie in [0, 0.5)"));
        }
        positive("sigma_min_span", self.sigma_min_span)?;
        if !(self.sigma_max_span > self.sigma_min_span) {
            return Err(ValidationError::new("sigma_max_span", "must exceed sigma_min_span"));
        }
        if self.max_iterations == 0 {
            return Err(ValidationError::new("max_iterations", "must be at least 1"));
        }
        let s = &self.screen;
        if !(s.p_value > 0.0 && s.p_value < 1.0) {
            return Err(ValidationError::new("screen.p_value", "must lie in (0, 1)"));
        }
        if !(s.sigma_min >= 0.0 && s.sigma_max > s.sigma_min) {
            return Err(ValidationError::new("screen.sigma_max", "must exceed screen.sigma_min >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostic {
    /// (mu, sigma, lambda) at the start
    pub start: [f64; 3],
    pub start_nll: f64,
    pub final_nll: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    pub sigma_at_lower_bound: bool,
    pub sigma_at_upper_bound: bool,
    pub lambda_at_upper_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub family: Family,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub pse: f64,
    pub j25: f64,
    pub j75: f64,
    pub jnd: f64,
    pub weber_fraction: f64,
    pub reference: f64,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub dof: usize,
    pub accepted: bool,
    pub flags: FitFlags,
    pub starts: Vec<StartDiagnostic>,
}

impl PsychometricFit {
    /// Probability of calling the comparison stiffer at stimulus `x`.
    pub fn curve(&self, x: f64) -> f64 {
        self.gamma + (1.0 - self.gamma - self.lambda) * self.family.cdf((x - self.mu) / self.sigma)
    }

    fn free_parameters(&self, lambda_max: f64) -> usize {
        if lambda_max > 0.0 {
            3
        } else {
            2
        }
    }
}

const P_FLOOR: f64 = 1e-12;

fn negative_log_likelihood(table: &ProportionTable, family: Family, mu: f64, sigma: f64, lambda: f64) -> f64 {
    table
        .levels
        .iter()
        .map(|l| {
            let p = ((1.0 - lambda) * family.cdf((l.stimulus - mu) / sigma)).clamp(P_FLOOR, 1.0 - P_FLOOR);
            let y = l.n_chose_comparison as f64;
            let n = l.n_trials as f64;
            -(y * p.ln() + (n - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Log-likelihood of the saturated model (one free proportion per level).
pub fn saturated_log_likelihood(table: &ProportionTable) -> f64 {
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    table
        .levels
        .iter()
        .map(|l| {
            let y = l.n_chose_comparison as f64;
            let n = l.n_trials as f64;
            xlogy(y, y / n) + xlogy(n - y, (n - y) / n)
        })
        .sum()
}

/// Maximum-likelihood fit from a fixed five-point start grid over (mu, sigma).
pub fn fit(table: &ProportionTable, reference: f64, cfg: &FitConfig) -> Result<PsychometricFit, FitError> {
    cfg.validate()?;
    positive("reference", reference)?;
    let n_levels = table.levels.len();
    if n_levels < MIN_LEVELS {
        return Err(FitError::InsufficientLevels(n_levels));
    }
    if table.levels.iter().all(|l| l.n_chose_comparison == 0) {
        return Err(FitError::Unidentifiable("no level was ever called stiffer"));
    }
    if table.levels.iter().all(|l| l.n_chose_comparison == l.n_trials) {
        return Err(FitError::Unidentifiable("every level was always called stiffer"));
    }

    // Work in normalised stimulus units so that rescaling the data rescales
    // the answer exactly.
    let (lo, hi) = table.range();
    let span = hi - lo;
    let unit: Vec<LevelCount> =
        table.levels.iter().map(|l| LevelCount { stimulus: (l.stimulus - lo) / span, ..*l }).collect();
    let unit = ProportionTable { levels: unit };
    let (ln_sig_lo, ln_sig_hi) = (cfg.sigma_min_span.ln(), cfg.sigma_max_span.ln());
    let bounds = Bounds { lower: [-1.0, ln_sig_lo, 0.0], upper: [2.0, ln_sig_hi, cfg.lambda_max] };
    let opts = NelderMeadOptions {
        step: [0.1, 0.5, 0.5 * cfg.lambda_max],
        scale: [1.0, 1.0, cfg.lambda_max.max(1e-12)],
        f_tol: 1e-10,
        x_tol: 1e-8,
        max_iterations: cfg.max_iterations,
    };
    let family = cfg.family;
    let nll = |x: &[f64; 3]| negative_log_likelihood(&unit, family, x[0], x[1].exp(), x[2]);

    let grid = [(0.5, 0.25), (0.25, 0.25), (0.75, 0.25), (0.5, 1.0 / 16.0), (0.5, 1.0)];
    let lambda0 = 0.2 * cfg.lambda_max;
    let mut starts = Vec::with_capacity(grid.len());
    let mut best: Option<([f64; 3], f64)> = None;
    for (mu0, sigma0) in grid {
        let x0 = bounds.project([mu0, f64::ln(sigma0), lambda0]);
        let start_nll = nll(&x0);
        // one restart from the first solution guards against a collapsed simplex
        let first = minimize(nll, x0, &bounds, &opts);
        let second = minimize(nll, first.x, &bounds, &opts);
        let m = if second.value <= first.value { second } else { first };
        starts.push(StartDiagnostic {
            start: [lo + x0[0] * span, x0[1].exp() * span, x0[2]],
            start_nll,
            final_nll: m.value,
            iterations: first.iterations + second.iterations,
            converged: second.converged,
        });
        if second.converged && best.is_none_or(|(_, v)| m.value < v) {
            best = Some((m.x, m.value));
        }
    }
    let Some((x, value)) = best else {
        return Err(FitError::FitFailure(starts));
    };

    let (mu, sigma, lambda) = (lo + x[0] * span, x[1].exp() * span, x[2]);
    let log_likelihood = -value;
    let deviance = (2.0 * (saturated_log_likelihood(table) - log_likelihood)).max(0.0);
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + b.abs());
    let flags = FitFlags {
        sigma_at_lower_bound: rel(x[1], ln_sig_lo),
        sigma_at_upper_bound: rel(x[1], ln_sig_hi),
        lambda_at_upper_bound: cfg.lambda_max > 0.0 && rel(lambda, cfg.lambda_max),
    };
    let mut out = PsychometricFit {
        family,
        mu,
        sigma,
        gamma: 0.0,
        lambda,
        pse: f64::NAN,
        j25: f64::NAN,
        j75: f64::NAN,
        jnd: f64::NAN,
        weber_fraction: f64::NAN,
        reference,
        log_likelihood,
        deviance,
        dof: 0,
        accepted: false,
        flags,
        starts,
    };
    out.dof = n_levels.saturating_sub(out.free_parameters(cfg.lambda_max));
    let (pse, j25, j75) = thresholds(&out, true)?;
    out.pse = pse;
    out.j25 = j25;
    out.j75 = j75;
    out.jnd = jnd(pse, j25, j75)?;
    out.weber_fraction = weber_fraction(out.jnd, reference);
    out.accepted = screen_fit(&out, table, &cfg.screen);
    Ok(out)
}

/// Stimulus at which the core sigmoid (γ and λ scaling removed) reaches `p`.
pub fn threshold(fit: &PsychometricFit, p: f64) -> Result<f64, FitError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FitError::Unattainable(p));
    }
    Ok(fit.mu + fit.sigma * fit.family.quantile(p))
}

/// `(pse, j25, j75)`. Rejected fits need `force`.
pub fn thresholds(fit: &PsychometricFit, force: bool) -> Result<(f64, f64, f64), FitError> {
    if !fit.accepted && !force {
        return Err(FitError::NotAccepted);
    }
    Ok((threshold(fit, 0.5)?, threshold(fit, 0.25)?, threshold(fit, 0.75)?))
}

/// Mean distance from the PSE to the two quartile thresholds.
pub fn jnd(pse: f64, j25: f64, j75: f64) -> Result<f64, FitError> {
    if !(j25 <= pse && pse <= j75) {
        return Err(FitError::Ordering { pse, j25, j75 });
    }
    Ok(((pse - j25) + (j75 - pse)) / 2.0)
}

pub fn weber_fraction(jnd: f64, reference: f64) -> f64 {
    debug_assert!(reference > 0.0);
    jnd / reference
}

/// Deviance goodness-of-fit test plus a plausibility window on sigma.
pub fn screen_fit(fit: &PsychometricFit, table: &ProportionTable, cfg: &ScreenConfig) -> bool {
    debug_assert!(fit.dof < table.levels.len());
    let sigma_ok = fit.sigma >= cfg.sigma_min && fit.sigma <= cfg.sigma_max;
    sigma_ok && deviance_ok(fit.deviance, fit.dof, cfg.p_value)
}

fn deviance_ok(deviance: f64, dof: usize, p_value: f64) -> bool {
    deviance <= deviance_limit(dof, p_value)
}

/// Largest deviance the goodness-of-fit test accepts at `dof` degrees of
/// freedom.
pub fn deviance_limit(dof: usize, p_value: f64) -> f64 {
    if dof == 0 {
        return 1e-9;
    }
    ChiSquared::new(dof as f64).expect("dof is positive").inverse_cdf(1.0 - p_value)
}

/// Fitted-curve samples every `step` N/m across `[lo, hi]`.
pub fn curve_samples(fit: &PsychometricFit, lo: f64, hi: f64, step: f64) -> Vec<(f64, f64)> {
    let n = ((hi - lo) / step).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).map(|x| (x, fit.curve(x))).collect()
}

/// Per-level proportions followed by 1 N/m curve samples.
pub fn write_plot_csv<W: Write>(table: &ProportionTable, fit: &PsychometricFit, writer: W) -> Result<(), FitError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "stimulus_nm", "proportion", "n_trials"])?;
    for l in table.levels() {
        w.write_record(["data", &l.stimulus.to_string(), &l.proportion().to_string(), &l.n_trials.to_string()])?;
    }
    let (lo, hi) = table.range();
    for (x, p) in curve_samples(fit, lo, hi, 1.0) {
        w.write_record(["fit", &x.to_string(), &p.to_string(), ""])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFit {
    pub subject: String,
    pub axis: StudyAxis,
    pub mode: GroundingMode,
    pub fit: PsychometricFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPoint {
    pub subject: String,
    pub pse: f64,
    pub jnd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub axis: StudyAxis,
    pub mode: GroundingMode,
    pub subjects: Vec<SubjectPoint>,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub mean_pse: f64,
    pub sd_pse: f64,
    pub mean_jnd: f64,
    pub sd_jnd: f64,
    /// Set when only one fit was accepted and the SDs are 0 by convention.
    pub single_fit: bool,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample SD of PSE and JND over the accepted fits of one condition.
pub fn summarize(fits: &[SubjectFit], axis: StudyAxis, mode: GroundingMode) -> Result<ConditionSummary, FitError> {
    let in_condition: Vec<&SubjectFit> = fits.iter().filter(|f| f.axis == axis && f.mode == mode).collect();
    let accepted: Vec<&SubjectFit> = in_condition.iter().copied().filter(|f| f.fit.accepted).collect();
    if accepted.is_empty() {
        return Err(FitError::NoAcceptedFits { axis, mode });
    }
    let pse: Vec<f64> = accepted.iter().map(|f| f.fit.pse).collect();
    let jnd: Vec<f64> = accepted.iter().map(|f| f.fit.jnd).collect();
    let (mean_pse, sd_pse) = mean_sd(&pse);
    let (mean_jnd, sd_jnd) = mean_sd(&jnd);
    Ok(ConditionSummary {
        axis,
        mode,
        subjects: accepted
            .iter()
            .map(|f| SubjectPoint { subject: f.subject.clone(), pse: f.fit.pse, jnd: f.fit.jnd })
            .collect(),
        n_accepted: accepted.len(),
        n_rejected: in_condition.len() - accepted.len(),
        mean_pse,
        sd_pse,
        mean_jnd,
        sd_jnd,
        single_fit: accepted.len() == 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{UPPER_QUARTILE_Z, DEFAULT_COMPARISONS_NM};
    use approx::assert_relative_eq;

    fn table_from(levels: &[f64], n: u32, p: impl Fn(f64) -> f64) -> ProportionTable {
        ProportionTable::new(
            levels
                .iter()
                .map(|&x| LevelCount { stimulus: x, n_trials: n, n_chose_comparison: (p(x) * n as f64).round() as u32 })
                .collect(),
        )
        .unwrap()
    }

    fn bare_fit(family: Family, mu: f64, sigma: f64, lambda: f64) -> PsychometricFit {
        PsychometricFit {
            family,
            mu,
            sigma,
            gamma: 0.0,
            lambda,
            pse: mu,
            j25: f64::NAN,
            j75: f64::NAN,
            jnd: f64::NAN,
            weber_fraction: f64::NAN,
            reference: 100.0,
            log_likelihood: 0.0,
            deviance: 0.0,
            dof: 8,
            accepted: true,
            flags: FitFlags::default(),
            starts: vec![],
        }
    }

    #[test]
    fn recovers_expected_counts() {
        let levels: Vec<f64> = (0..11).map(|i| 10.0 + 18.0 * i as f64).collect();
        let t = table_from(&levels, 10_000, |x| Normal::standard().cdf((x - 100.0) / 28.0));
        let f = fit(&t, 100.0, &FitConfig::default()).unwrap();
        assert!((f.mu - 100.0).abs() < 0.5, "{f:?}");
        assert!((f.sigma - 28.0).abs() < 1.0, "{f:?}");
        assert!(f.lambda < 1e-3);
        assert!(f.accepted);
    }

    #[test]
    fn step_data_hits_lower_sigma_bound() {
        let t = table_from(&DEFAULT_COMPARISONS_NM, 10, |x| if x > 100.0 { 1.0 } else { 0.0 });
        let f = fit(&t, 100.0, &FitConfig::default()).unwrap();
        assert!(f.flags.sigma_at_lower_bound, "{f:?}");
        assert!(f.mu > 100.0 && f.mu < 118.0);
    }

    #[test]
    fn degenerate_data_is_unidentifiable() {
        let zeros = table_from(&DEFAULT_COMPARISONS_NM, 10, |_| 0.0);
        assert!(matches!(fit(&zeros, 100.0, &FitConfig::default()), Err(FitError::Unidentifiable(_))));
        let ones = table_from(&DEFAULT_COMPARISONS_NM, 10, |_| 1.0);
        assert!(matches!(fit(&ones, 100.0, &FitConfig::default()), Err(FitError::Unidentifiable(_))));
        let few = table_from(&[1.0, 2.0, 3.0, 4.0], 10, |x| x / 5.0);
        assert!(matches!(fit(&few, 2.0, &FitConfig::default()), Err(FitError::InsufficientLevels(4))));
    }

    #[test]
    fn quartile_thresholds() {
        let f = bare_fit(Family::CumulativeGaussian, 100.0, 29.652, 0.0);
        let (pse, j25, j75) = thresholds(&f, false).unwrap();
        assert_relative_eq!(pse, 100.0, epsilon = 1e-12);
        assert_relative_eq!(j25, 80.0, epsilon = 1e-3);
        assert_relative_eq!(j75, 120.0, epsilon = 1e-3);
        assert_relative_eq!(29.652 * UPPER_QUARTILE_Z, 20.0, epsilon = 1e-4);

        let l = bare_fit(Family::Logistic, 123.0, 9.0, 0.03);
        let (pse, j25, j75) = thresholds(&l, false).unwrap();
        assert_eq!(pse, 123.0);
        assert!(((pse - j25) - (j75 - pse)).abs() < 1e-9);
        assert!(matches!(threshold(&l, 1.0), Err(FitError::Unattainable(_))));
        assert!(matches!(threshold(&l, 0.0), Err(FitError::Unattainable(_))));
        let rejected = PsychometricFit { accepted: false, ..l };
        assert!(matches!(thresholds(&rejected, false), Err(FitError::NotAccepted)));
        assert!(thresholds(&rejected, true).is_ok());
    }

    #[test]
    fn jnd_and_weber() {
        assert_eq!(jnd(100.0, 80.0, 120.0).unwrap(), 20.0);
        assert_eq!(jnd(111.0, 95.0, 140.0).unwrap(), 22.5);
        assert!(matches!(jnd(100.0, 101.0, 120.0), Err(FitError::Ordering { .. })));
        assert_eq!(weber_fraction(20.0, 100.0), 0.2);
        assert_eq!(weber_fraction(22.855, 100.0), 22.855 / 100.0);
        assert_relative_eq!(weber_fraction(22.855, 100.0), 0.22855, epsilon = 1e-15);
        assert_eq!(weber_fraction(0.0, 100.0), 0.0);
    }

    #[test]
    fn coin_flip_rejected() {
        let t = table_from(&DEFAULT_COMPARISONS_NM, 10, |_| 0.5);
        let f = fit(&t, 100.0, &FitConfig::default()).unwrap();
        assert!(!f.accepted, "{f:?}");
    }

    #[test]
    fn optimum_beats_every_start() {
        let t = table_from(&DEFAULT_COMPARISONS_NM, 10, |x| Normal::standard().cdf((x - 112.0) / 35.0));
        let f = fit(&t, 100.0, &FitConfig::default()).unwrap();
        assert_eq!(f.starts.len(), 5);
        for s in &f.starts {
            assert!(-f.log_likelihood <= s.start_nll + 1e-12);
        }
    }

    #[test]
    fn aggregate_table_validation() {
        let bad = ProportionTable::new(vec![LevelCount { stimulus: 1.0, n_trials: 0, n_chose_comparison: 0 }]);
        assert_eq!(bad.unwrap_err().field, "levels[0].n_trials");
        let unordered = ProportionTable::new(vec![
            LevelCount { stimulus: 2.0, n_trials: 1, n_chose_comparison: 0 },
            LevelCount { stimulus: 1.0, n_trials: 1, n_chose_comparison: 0 },
        ]);
        assert!(unordered.is_err());
    }

    fn subject(id: &str, pse: f64, jnd: f64, accepted: bool) -> SubjectFit {
        let mut f = bare_fit(Family::CumulativeGaussian, pse, 1.0, 0.0);
        f.jnd = jnd;
        f.accepted = accepted;
        SubjectFit { subject: id.into(), axis: StudyAxis::AlongFingerAxis, mode: GroundingMode::BackOfHand, fit: f }
    }

    #[test]
    fn summary_conventions() {
        let a = StudyAxis::AlongFingerAxis;
        let m = GroundingMode::BackOfHand;
        let one = summarize(&[subject("s1", 110.0, 20.0, true), subject("s2", 500.0, 90.0, false)], a, m).unwrap();
        assert!(one.single_fit);
        assert_eq!((one.mean_pse, one.sd_pse, one.n_rejected), (110.0, 0.0, 1));
        let same: Vec<SubjectFit> = (0..4).map(|i| subject(&i.to_string(), 104.0, 21.0, true)).collect();
        let s = summarize(&same, a, m).unwrap();
        assert_eq!((s.sd_pse, s.sd_jnd, s.single_fit), (0.0, 0.0, false));
        let two = summarize(&[subject("a", 100.0, 10.0, true), subject("b", 110.0, 30.0, true)], a, m).unwrap();
        assert_relative_eq!(two.sd_pse, 50f64.sqrt(), epsilon = 1e-12);
        assert!(matches!(
            summarize(&[subject("x", 1.0, 1.0, false)], a, m),
            Err(FitError::NoAcceptedFits { .. })
        ));
    }
}
