use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use handground::control::{simulate_loop, ControlError};
use handground::experiment::{
    export_log, import_log, run_session, sidecar_path, ExperimentError, LogError, RenderSetup, RunStamp, SessionLog,
};
use handground::haptic_env::StudyAxis;
use handground::kinematics::GroundingMode;
use handground::psychometrics::{
    aggregate, deviance_limit, fit as fit_table, summarize, write_plot_csv, FitConfig, FitError, ProportionTable,
    PsychometricFit, ScreenConfig, SubjectFit,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{session_seed, OutputConfig, RunConfig};
use crate::{CliError, Context};

fn stamp_line(stamp: &RunStamp) -> String {
    format!("# handground {} config {} seed {}\n", stamp.version, stamp.config_hash, stamp.seed)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact types serialise");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// CSV text preceded by the run stamp as a `#` comment line.
fn stamped_csv<F>(stamp: &RunStamp, body: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut buf = stamp_line(stamp).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        body(&mut w).map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
        w.flush().map_err(|e| CliError::Runtime(format!("csv: {e}")))?;
    }
    Ok(buf)
}

fn slash_path(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// The configuration as recorded in artifacts: identical to what is hashed.
fn recorded_config(cfg: &RunConfig) -> RunConfig {
    RunConfig { output: OutputConfig::default(), ..cfg.clone() }
}

fn control_error(e: ControlError) -> CliError {
    match e {
        ControlError::Invalid(v) => CliError::Validation(v.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Invalid(v) => CliError::Validation(v.to_string()),
        ExperimentError::Log(LogError::Io { path, source }) => CliError::Io { path, source },
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Debug, Serialize)]
struct TraceEntry {
    axis: StudyAxis,
    mode: GroundingMode,
    trace: String,
    samples: usize,
    final_error_mm: f64,
}

#[derive(Debug, Serialize)]
struct SimulateManifest {
    stamp: RunStamp,
    config: RunConfig,
    traces: Vec<TraceEntry>,
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let stamp = cfg.stamp();
    let dir = ctx.out_dir.join("traces");
    let conditions: Vec<(StudyAxis, GroundingMode)> =
        ctx.axes.iter().flat_map(|&a| ctx.modes.iter().map(move |&m| (a, m))).collect();
    let traces = conditions
        .par_iter()
        .map(|&(axis, mode)| {
            let device = cfg.device.clone().with_mode(mode);
            let profile = cfg.simulate.profile;
            let trace = simulate_loop(&device, &cfg.control, axis.motion(), |t| profile.at(t), cfg.simulate.duration_s)
                .map_err(control_error)?;
            let rel = Path::new(axis.as_str()).join(format!("{mode}.csv"));
            let mut buf = stamp_line(&stamp).into_bytes();
            trace.write_csv(&mut buf).map_err(control_error)?;
            write_file(&dir.join(&rel), &buf)?;
            Ok(TraceEntry {
                axis,
                mode,
                trace: slash_path(&rel),
                samples: trace.len(),
                final_error_mm: trace.samples.last().map_or(0.0, |s| s.error),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    for t in &traces {
        eprintln!("{}/{}: {} samples, final error {:.4} mm", t.axis, t.mode, t.samples, t.final_error_mm);
    }
    write_json(&dir.join("manifest.json"), &SimulateManifest { stamp, config: recorded_config(cfg), traces })
}

#[derive(Debug, Serialize)]
struct SessionEntry {
    axis: StudyAxis,
    mode: GroundingMode,
    observer: String,
    seed: u64,
    log: String,
    n_trials: usize,
}

#[derive(Debug, Serialize)]
struct StudyManifest {
    stamp: RunStamp,
    config: RunConfig,
    axes: Vec<StudyAxis>,
    modes: Vec<GroundingMode>,
    sessions: Vec<SessionEntry>,
}

pub fn run_study(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let stamp = cfg.stamp();
    let roster = cfg.observers.roster(cfg.protocol.reference_nm);
    let setup = RenderSetup { device: cfg.device.clone(), control: cfg.control, press: cfg.press };
    let sessions_dir = ctx.out_dir.join("sessions");

    let jobs: Vec<_> = ctx
        .axes
        .iter()
        .flat_map(|&axis| ctx.modes.iter().map(move |&mode| (axis, mode)))
        .flat_map(|(axis, mode)| roster.iter().filter(move |s| s.axis == axis).map(move |s| (axis, mode, s)))
        .collect();
    if jobs.is_empty() {
        return Err(CliError::Validation("observers: no observers configured for the selected axes".into()));
    }

    let results = jobs
        .par_iter()
        .map(|&(axis, mode, spec)| {
            let rel = Path::new(axis.as_str()).join(mode.as_str()).join(format!("{}.csv", spec.id));
            let path = sessions_dir.join(&rel);
            let seed = session_seed(cfg.seed, axis, mode, &spec.id);
            let protocol = cfg.protocol.for_condition(axis, mode);
            let observer = spec.descriptor(mode);
            let entry = |n_trials| SessionEntry {
                axis,
                mode,
                observer: spec.id.clone(),
                seed,
                log: slash_path(&rel),
                n_trials,
            };

            if let Ok(done) = import_log(&path) {
                let current = done.fingerprints.run.as_ref() == Some(&stamp)
                    && done.seed == seed
                    && done.protocol == protocol
                    && done.observer == observer;
                if current {
                    return Ok((entry(done.len()), true));
                }
            }
            let mut log = run_session(&protocol, &observer, seed, &setup).map_err(experiment_error)?;
            log.fingerprints.run = Some(stamp.clone());
            let parent = path.parent().expect("session path has a parent");
            std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
            export_log(&log, &path).map_err(|e| experiment_error(e.into()))?;
            Ok((entry(log.len()), false))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let reused = results.iter().filter(|r| r.1).count();
    eprintln!("{} sessions ({} written, {reused} already complete)", results.len(), results.len() - reused);
    let manifest = StudyManifest {
        stamp,
        config: recorded_config(cfg),
        axes: ctx.axes.clone(),
        modes: ctx.modes.clone(),
        sessions: results.into_iter().map(|r| r.0).collect(),
    };
    write_json(&ctx.out_dir.join("study_manifest.json"), &manifest)
}

fn collect_logs(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, String)>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(CliError::io(dir))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_logs(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") && sidecar_path(&path).is_file() {
            let rel = path.strip_prefix(root).unwrap_or(&path);
            out.push((path.clone(), slash_path(rel)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub session: String,
    pub observer: String,
    pub axis: StudyAxis,
    pub mode: GroundingMode,
    pub session_seed: u64,
    pub reference_nm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<PsychometricFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FitRecord {
    pub fn accepted(&self) -> bool {
        self.fit.as_ref().is_some_and(|f| f.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub axis: StudyAxis,
    pub mode: GroundingMode,
    pub reference_nm: f64,
    pub n_sessions: usize,
    pub n_accepted: usize,
    pub n_excluded: usize,
    pub mean_pse_nm: Option<f64>,
    pub sd_pse_nm: Option<f64>,
    pub mean_jnd_nm: Option<f64>,
    pub sd_jnd_nm: Option<f64>,
    /// Mean JND over the reference stiffness.
    pub weber_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub session: String,
    pub observer: String,
    pub axis: StudyAxis,
    pub mode: GroundingMode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub stamp: RunStamp,
    pub analysis: FitConfig,
    pub sessions: Vec<FitRecord>,
    pub conditions: Vec<ConditionRow>,
    pub exclusions: Vec<Exclusion>,
}

fn rejection_reason(fit: &PsychometricFit, screen: &ScreenConfig) -> String {
    let mut reasons = Vec::new();
    let limit = deviance_limit(fit.dof, screen.p_value);
    if fit.deviance > limit {
        reasons.push(format!("deviance {:.3} exceeds {limit:.3} (dof {}, p {})", fit.deviance, fit.dof, screen.p_value));
    }
    if fit.sigma < screen.sigma_min || fit.sigma > screen.sigma_max {
        reasons.push(format!("sigma {:.3} N/m outside [{}, {}]", fit.sigma, screen.sigma_min, screen.sigma_max));
    }
    reasons.join("; ")
}

fn condition_rows(records: &[FitRecord], axes: &[StudyAxis], modes: &[GroundingMode]) -> Vec<ConditionRow> {
    let mut rows = Vec::new();
    for &axis in axes {
        for &mode in modes {
            let here: Vec<&FitRecord> = records.iter().filter(|r| r.axis == axis && r.mode == mode).collect();
            let Some(first) = here.first() else { continue };
            let subject_fits: Vec<SubjectFit> = here
                .iter()
                .filter_map(|r| {
                    r.fit.clone().map(|fit| SubjectFit { subject: r.observer.clone(), axis, mode, fit })
                })
                .collect();
            let summary = summarize(&subject_fits, axis, mode).ok();
            let n_accepted = summary.as_ref().map_or(0, |s| s.n_accepted);
            rows.push(ConditionRow {
                axis,
                mode,
                reference_nm: first.reference_nm,
                n_sessions: here.len(),
                n_accepted,
                n_excluded: here.len() - n_accepted,
                mean_pse_nm: summary.as_ref().map(|s| s.mean_pse),
                sd_pse_nm: summary.as_ref().map(|s| s.sd_pse),
                mean_jnd_nm: summary.as_ref().map(|s| s.mean_jnd),
                sd_jnd_nm: summary.as_ref().map(|s| s.sd_jnd),
                weber_fraction: summary.as_ref().map(|s| s.mean_jnd / first.reference_nm),
            });
        }
    }
    rows
}

#[derive(Debug, Serialize)]
struct FitCsvRow<'a> {
    session: &'a str,
    axis: StudyAxis,
    mode: GroundingMode,
    observer: &'a str,
    status: &'static str,
    pse_nm: Option<f64>,
    jnd_nm: Option<f64>,
    j25_nm: Option<f64>,
    j75_nm: Option<f64>,
    mu_nm: Option<f64>,
    sigma_nm: Option<f64>,
    lambda: Option<f64>,
    weber_fraction: Option<f64>,
    deviance: Option<f64>,
    dof: Option<usize>,
}

impl<'a> From<&'a FitRecord> for FitCsvRow<'a> {
    fn from(r: &'a FitRecord) -> Self {
        let f = r.fit.as_ref();
        FitCsvRow {
            session: &r.session,
            axis: r.axis,
            mode: r.mode,
            observer: &r.observer,
            status: match f {
                Some(f) if f.accepted => "accepted",
                Some(_) => "rejected",
                None => "failed",
            },
            pse_nm: f.map(|f| f.pse),
            jnd_nm: f.map(|f| f.jnd),
            j25_nm: f.map(|f| f.j25),
            j75_nm: f.map(|f| f.j75),
            mu_nm: f.map(|f| f.mu),
            sigma_nm: f.map(|f| f.sigma),
            lambda: f.map(|f| f.lambda),
            weber_fraction: f.map(|f| f.weber_fraction),
            deviance: f.map(|f| f.deviance),
            dof: f.map(|f| f.dof),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// One row per observer with PSE/JND columns for each grounding mode,
/// followed by mean and SD rows. Only accepted fits are shown.
fn subjects_table(
    w: &mut csv::Writer<&mut Vec<u8>>,
    records: &[FitRecord],
    rows: &[ConditionRow],
) -> Result<(), csv::Error> {
    let mut header = vec!["axis".to_string(), "observer".to_string()];
    for mode in GroundingMode::ALL {
        header.push(format!("{mode}_pse_nm"));
        header.push(format!("{mode}_jnd_nm"));
    }
    w.write_record(&header)?;
    for axis in StudyAxis::ALL {
        let observers: BTreeSet<&str> =
            records.iter().filter(|r| r.axis == axis).map(|r| r.observer.as_str()).collect();
        if observers.is_empty() {
            continue;
        }
        for obs in observers {
            let mut line = vec![axis.to_string(), obs.to_string()];
            for mode in GroundingMode::ALL {
                let fit = records
                    .iter()
                    .find(|r| r.axis == axis && r.mode == mode && r.observer == obs && r.accepted())
                    .and_then(|r| r.fit.as_ref());
                line.push(fmt_opt(fit.map(|f| f.pse)));
                line.push(fmt_opt(fit.map(|f| f.jnd)));
            }
            w.write_record(&line)?;
        }
        for (label, pick) in [
            ("mean", (|r: &ConditionRow| (r.mean_pse_nm, r.mean_jnd_nm)) as fn(&ConditionRow) -> _),
            ("sd", |r: &ConditionRow| (r.sd_pse_nm, r.sd_jnd_nm)),
        ] {
            let mut line = vec![axis.to_string(), label.to_string()];
            for mode in GroundingMode::ALL {
                let v = rows.iter().find(|r| r.axis == axis && r.mode == mode).map(pick);
                line.push(fmt_opt(v.and_then(|v| v.0)));
                line.push(fmt_opt(v.and_then(|v| v.1)));
            }
            w.write_record(&line)?;
        }
    }
    Ok(())
}

fn import_error(path: &Path, e: LogError) -> CliError {
    match e {
        LogError::Io { path, source } => CliError::Io { path, source },
        other => CliError::Validation(format!("{}: {other}", path.display())),
    }
}

pub fn fit(ctx: &Context, inputs: &[PathBuf]) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let stamp = cfg.stamp();
    let default_input = [ctx.out_dir.join("sessions")];
    let (inputs, searched) = if inputs.is_empty() {
        if !default_input[0].is_dir() {
            return Err(CliError::NoSessions(default_input[0].clone()));
        }
        (&default_input[..], default_input[0].clone())
    } else {
        (inputs, inputs[0].clone())
    };

    let mut files = Vec::new();
    for input in inputs {
        let meta = std::fs::metadata(input).map_err(CliError::io(input))?;
        if meta.is_dir() {
            collect_logs(input, input, &mut files)?;
        } else {
            let name = input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            files.push((input.clone(), name));
        }
    }

    let logs: Vec<(String, SessionLog)> = files
        .par_iter()
        .map(|(path, rel)| import_log(path).map(|log| (rel.clone(), log)).map_err(|e| import_error(path, e)))
        .collect::<Result<_, _>>()?;
    let mut logs: Vec<(String, SessionLog)> = logs
        .into_iter()
        .filter(|(_, l)| ctx.axes.contains(&l.protocol.axis) && ctx.modes.contains(&l.protocol.mode))
        .collect();
    if logs.is_empty() {
        return Err(CliError::NoSessions(searched));
    }
    logs.sort_by(|a, b| {
        (a.1.protocol.axis, a.1.protocol.mode, &a.1.observer.id, &a.0).cmp(&(
            b.1.protocol.axis,
            b.1.protocol.mode,
            &b.1.observer.id,
            &b.0,
        ))
    });
    for pair in logs.windows(2) {
        let key = |l: &SessionLog| (l.protocol.axis, l.protocol.mode, l.observer.id.clone());
        if key(&pair[0].1) == key(&pair[1].1) {
            return Err(CliError::Validation(format!(
                "sessions {} and {} are both {}/{} for observer `{}`",
                pair[0].0, pair[1].0, pair[0].1.protocol.axis, pair[0].1.protocol.mode, pair[0].1.observer.id
            )));
        }
    }

    let fitted: Vec<(FitRecord, Option<ProportionTable>)> = logs
        .par_iter()
        .map(|(rel, log)| {
            let reference = log.protocol.reference;
            let result = aggregate(log).and_then(|t| fit_table(&t, reference, &cfg.analysis).map(|f| (t, f)));
            let (fit, error, table) = match result {
                Ok((t, f)) => (Some(f), None, Some(t)),
                Err(FitError::Invalid(v)) => return Err(CliError::Validation(format!("analysis: {v}"))),
                Err(e) => (None, Some(e.to_string()), None),
            };
            let record = FitRecord {
                session: rel.clone(),
                observer: log.observer.id.clone(),
                axis: log.protocol.axis,
                mode: log.protocol.mode,
                session_seed: log.seed,
                reference_nm: reference,
                fit,
                error,
            };
            Ok((record, table))
        })
        .collect::<Result<_, CliError>>()?;

    let dir = ctx.out_dir.join("fits");
    fitted
        .par_iter()
        .filter_map(|(r, t)| Some((r, r.fit.as_ref()?, t.as_ref()?)))
        .map(|(r, f, t)| {
            let rel = Path::new("plots").join(r.axis.as_str()).join(r.mode.as_str()).join(format!("{}.csv", r.observer));
            let mut buf = stamp_line(&stamp).into_bytes();
            write_plot_csv(t, f, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
            write_file(&dir.join(rel), &buf)
        })
        .collect::<Result<(), CliError>>()?;

    let records: Vec<FitRecord> = fitted.into_iter().map(|(r, _)| r).collect();
    let exclusions: Vec<Exclusion> = records
        .iter()
        .filter(|r| !r.accepted())
        .map(|r| Exclusion {
            session: r.session.clone(),
            observer: r.observer.clone(),
            axis: r.axis,
            mode: r.mode,
            reason: match (&r.fit, &r.error) {
                (Some(f), _) => format!("rejected: {}", rejection_reason(f, &cfg.analysis.screen)),
                (None, Some(e)) => format!("fit failed: {e}"),
                (None, None) => "fit failed".into(),
            },
        })
        .collect();
    let conditions = condition_rows(&records, &ctx.axes, &ctx.modes);

    let fits_csv = stamped_csv(&stamp, |w| records.iter().try_for_each(|r| w.serialize(FitCsvRow::from(r))))?;
    write_file(&dir.join("fits.csv"), &fits_csv)?;
    let summary_csv = stamped_csv(&stamp, |w| conditions.iter().try_for_each(|c| w.serialize(c)))?;
    write_file(&dir.join("summary.csv"), &summary_csv)?;
    let subjects_csv = stamped_csv(&stamp, |w| subjects_table(w, &records, &conditions))?;
    write_file(&dir.join("subjects.csv"), &subjects_csv)?;
    let exclusions_csv = stamped_csv(&stamp, |w| {
        w.write_record(["session", "axis", "mode", "observer", "reason"])?;
        exclusions
            .iter()
            .try_for_each(|e| w.write_record([&e.session, e.axis.as_str(), e.mode.as_str(), &e.observer, &e.reason]))
    })?;
    write_file(&dir.join("exclusions.csv"), &exclusions_csv)?;

    eprintln!(
        "{} sessions fitted, {} accepted, {} excluded",
        records.len(),
        records.len() - exclusions.len(),
        exclusions.len()
    );
    let file = FitsFile { stamp, analysis: cfg.analysis, sessions: records, conditions, exclusions };
    write_json(&dir.join("fits.json"), &file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub stamp: RunStamp,
    /// Stamp of the fit results the report was built from.
    pub source: RunStamp,
    pub conditions: Vec<ConditionRow>,
    pub n_excluded: usize,
}

fn pm(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:8.2} +/- {s:6.2}"),
        _ => format!("{:>18}", "n/a"),
    }
}

fn render_text(report: &Report) -> String {
    let mut out = stamp_line(&report.stamp);
    for axis in StudyAxis::ALL {
        let rows: Vec<&ConditionRow> = report.conditions.iter().filter(|c| c.axis == axis).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n{axis}");
        let _ = writeln!(out, "  {:<18} {:>9}  {:>18}  {:>18}  {:>6}", "mode", "accepted", "PSE (N/m)", "JND (N/m)", "Weber");
        for c in rows {
            let _ = writeln!(
                out,
                "  {:<18} {:>4} / {:<2}  {}  {}  {:>6}",
                c.mode.as_str(),
                c.n_accepted,
                c.n_sessions,
                pm(c.mean_pse_nm, c.sd_pse_nm),
                pm(c.mean_jnd_nm, c.sd_jnd_nm),
                c.weber_fraction.map_or_else(|| "n/a".into(), |w| format!("{w:.3}")),
            );
        }
    }
    let _ = writeln!(out, "\n{} sessions excluded (see fits/exclusions.csv)", report.n_excluded);
    out
}

pub fn report(ctx: &Context, input: Option<&Path>) -> Result<(), CliError> {
    let path = input.map_or_else(|| ctx.out_dir.join("fits").join("fits.json"), Path::to_path_buf);
    if !path.exists() {
        return Err(CliError::NoSessions(path));
    }
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let fits: FitsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let selected = |axis: StudyAxis, mode: GroundingMode| ctx.axes.contains(&axis) && ctx.modes.contains(&mode);
    if !fits.sessions.iter().any(|r| selected(r.axis, r.mode)) {
        return Err(CliError::NoSessions(path));
    }
    let report = Report {
        stamp: ctx.config.stamp(),
        source: fits.stamp,
        conditions: fits.conditions.into_iter().filter(|c| selected(c.axis, c.mode)).collect(),
        n_excluded: fits.exclusions.iter().filter(|e| selected(e.axis, e.mode)).count(),
    };
    let text = render_text(&report);
    let dir = ctx.out_dir.join("report");
    write_file(&dir.join("report.txt"), text.as_bytes())?;
    write_json(&dir.join("report.json"), &report)?;
    print!("{text}");
    Ok(())
}
