//! On-disk formats: trace/curve/scatter CSV, summary, calibration and run
//! manifest JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::harness::{summarize, ConditionRun, ConditionSummary, EpisodeRecord, ExperimentPlan};
use crate::monitor::Event;
use crate::sim::{Calibration, EpisodeTrace, StepRecord};

pub const TRACE_HEADER: [&str; 6] = ["t", "nu", "energy", "drift_score", "semantic_drift", "event"];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
const SIGNIFICANT_DIGITS: usize = 12;

/// Formats `x` with 12 significant digits, `%g` style.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialization(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn emit_episode_csv(path: &Path, steps: &[StepRecord]) -> Result<()> {
    write_csv(
        path,
        &TRACE_HEADER,
        steps.iter().map(|s| {
            [
                s.t.to_string(),
                format_sig(s.nu),
                format_sig(s.energy),
                opt(s.drift_score),
                format_sig(s.semantic_drift),
                s.event.map(|e| e.as_str().to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let bad = |col: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: col + 1,
            message: msg,
        };
        let num = |col: usize| -> Result<f64> {
            rec[col]
                .parse::<f64>()
                .map_err(|e| bad(col, format!("{}: {e}", TRACE_HEADER[col])))
        };
        out.push(StepRecord {
            t: rec[0].parse().map_err(|e| bad(0, format!("t: {e}")))?,
            nu: num(1)?,
            energy: num(2)?,
            drift_score: if rec[3].is_empty() { None } else { Some(num(3)?) },
            semantic_drift: num(4)?,
            event: if rec[5].is_empty() {
                None
            } else {
                Some(Event::parse(&rec[5]).ok_or_else(|| bad(5, format!("unknown event `{}`", &rec[5])))?)
            },
        });
    }
    Ok(out)
}

pub fn emit_curves_csv(path: &Path, s: &ConditionSummary) -> Result<()> {
    let c = &s.curves;
    write_csv(
        path,
        &[
            "t",
            "nu_mean",
            "nu_std",
            "energy_mean",
            "energy_std",
            "drift_score_mean",
            "drift_score_std",
            "semantic_drift_mean",
            "semantic_drift_std",
        ],
        (0..c.nu.len()).map(|i| {
            let d = c.drift_score[i];
            vec![
                (i + 1).to_string(),
                format_sig(c.nu[i].mean),
                format_sig(c.nu[i].std),
                format_sig(c.energy[i].mean),
                format_sig(c.energy[i].std),
                opt(d.map(|a| a.mean)),
                opt(d.map(|a| a.std)),
                format_sig(c.semantic_drift[i].mean),
                format_sig(c.semantic_drift[i].std),
            ]
        }),
    )
}

pub fn emit_scatter_csv(path: &Path, s: &ConditionSummary) -> Result<()> {
    write_csv(
        path,
        &["episode", "drift_score", "semantic_drift"],
        s.scatter.iter().map(|p| {
            [
                p.episode.to_string(),
                opt(p.drift_score),
                format_sig(p.semantic_drift),
            ]
        }),
    )
}

/// One summary row; nullable metrics are `None` exactly when their
/// population is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub name: String,
    pub scenario: String,
    pub variant: String,
    pub episodes: usize,
    pub det_rate: f64,
    pub rec_rate: Option<f64>,
    pub mttr_mean: Option<f64>,
    pub mttr_std: Option<f64>,
    pub latency_mean: Option<f64>,
    pub pre_onset_detections: usize,
    pub curves_path: String,
    pub scatter_path: String,
    pub traces_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub version: String,
    pub conditions: Vec<SummaryRecord>,
}

pub fn curves_rel(name: &str) -> String {
    format!("curves/{name}.csv")
}

pub fn scatter_rel(name: &str) -> String {
    format!("scatter/{name}.csv")
}

pub fn traces_rel(name: &str) -> String {
    format!("traces/{name}")
}

fn variant_label(s: &ConditionSummary) -> String {
    match s.variant {
        crate::sim::Variant::Baseline => "baseline".into(),
        crate::sim::Variant::RecoveryAware(m) => {
            let names: Vec<String> = Vec::<crate::recovery::Mechanism>::from(m)
                .into_iter()
                .map(|x| serde_json::to_value(x).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                .collect();
            format!("recovery_aware[{}]", names.join("+"))
        }
    }
}

pub fn summary_record(s: &ConditionSummary) -> SummaryRecord {
    SummaryRecord {
        name: s.name.clone(),
        scenario: s.scenario.as_str().into(),
        variant: variant_label(s),
        episodes: s.episodes,
        det_rate: s.detection_rate,
        rec_rate: s.recovery_rate,
        mttr_mean: s.mttr.map(|m| m.mean),
        mttr_std: s.mttr.map(|m| m.std),
        latency_mean: s.latency_mean,
        pre_onset_detections: s.pre_onset_detections,
        curves_path: curves_rel(&s.name),
        scatter_path: scatter_rel(&s.name),
        traces_dir: traces_rel(&s.name),
    }
}

/// Writes `summary.json` plus each condition's curve and scatter files.
pub fn emit_summary(out: &Path, summaries: &[ConditionSummary]) -> Result<Vec<String>> {
    if summaries.is_empty() {
        return Err(Error::contract("no summaries to emit"));
    }
    let mut written = Vec::new();
    for s in summaries {
        emit_curves_csv(&out.join(curves_rel(&s.name)), s)?;
        emit_scatter_csv(&out.join(scatter_rel(&s.name)), s)?;
        written.push(curves_rel(&s.name));
        written.push(scatter_rel(&s.name));
    }
    let doc = SummaryDocument {
        version: env!("CARGO_PKG_VERSION").into(),
        conditions: summaries.iter().map(summary_record).collect(),
    };
    write_json(&out.join(SUMMARY_FILE), &doc)?;
    written.push(SUMMARY_FILE.into());
    Ok(written)
}

fn episode_file(index: u64, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(4);
    format!("episode_{index:0width$}.csv")
}

pub fn emit_traces(out: &Path, name: &str, traces: &[EpisodeTrace]) -> Result<Vec<String>> {
    let dir = out.join(traces_rel(name));
    create_dir(&dir)?;
    traces
        .iter()
        .map(|tr| {
            let file = episode_file(tr.index, traces.len());
            emit_episode_csv(&dir.join(&file), &tr.steps)?;
            Ok(format!("{}/{file}", traces_rel(name)))
        })
        .collect()
}

/// Reads every trace of a condition, in file-name order.
pub fn read_traces(out: &Path, name: &str) -> Result<Vec<EpisodeRecord>> {
    let dir = out.join(traces_rel(name));
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let index = p
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.strip_prefix("episode_"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: p.clone(),
                    line: 0,
                    column: 0,
                    message: "trace file name must be episode_<index>.csv".into(),
                })?;
            Ok(EpisodeRecord {
                index,
                steps: read_episode_csv(p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_digest: String,
    pub master_seed: u64,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
    pub outputs: Vec<String>,
    pub config: Config,
}

pub fn timestamp_now() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, outputs: Vec<String>) -> Result<Self> {
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_digest: config.digest()?,
            master_seed: config.experiment.master_seed,
            timestamp: timestamp_now(),
            outputs,
            config: config.clone(),
        })
    }
}

pub fn emit_calibrations(out: &Path, cals: &BTreeMap<String, Calibration>) -> Result<String> {
    write_json(&out.join(CALIBRATION_FILE), cals)?;
    Ok(CALIBRATION_FILE.into())
}

/// Writes traces, summaries and the manifest for a finished set of runs.
pub fn emit_runs(
    out: &Path,
    command: &str,
    config: &Config,
    calibrations: &BTreeMap<String, Calibration>,
    runs: &[ConditionRun],
) -> Result<RunManifest> {
    create_dir(out)?;
    let mut outputs = vec![emit_calibrations(out, calibrations)?];
    for r in runs {
        outputs.extend(emit_traces(out, &r.summary.name, &r.traces)?);
    }
    let summaries: Vec<ConditionSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    outputs.extend(emit_summary(out, &summaries)?);
    let manifest = RunManifest::new(command, config, outputs)?;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Rebuilds summaries from the trace files of a previous run directory.
pub fn regenerate(dir: &Path) -> Result<Vec<ConditionSummary>> {
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let plan = ExperimentPlan::from_config(&manifest.config)?;
    let mut out = Vec::new();
    for c in &plan.conditions {
        let trace_dir = dir.join(traces_rel(&c.name));
        if !trace_dir.is_dir() {
            continue;
        }
        let records = read_traces(dir, &c.name)?;
        out.push(summarize(&c.name, c.scenario, c.variant, plan.sim.onset, &records)?);
    }
    if out.is_empty() {
        return Err(Error::validation("out", format!("no traces found under {}", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Scenario, Variant};

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.1), "0.1");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig(2.0 / 3.0 * 100.0), "66.6666666667");
        assert_eq!(format_sig(123456789012345.0), "1.23456789012e14");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
        assert_eq!(format_sig(-0.25), "-0.25");
        assert_eq!(format_sig(9.9999999999999), "10");
    }

    fn steps() -> Vec<StepRecord> {
        vec![
            StepRecord { t: 1, nu: 0.0, energy: 0.0, drift_score: None, semantic_drift: 0.0, event: None },
            StepRecord {
                t: 2,
                nu: 0.125,
                energy: 2.5,
                drift_score: Some(1.25),
                semantic_drift: 0.5,
                event: Some(Event::DriftDetected),
            },
        ]
    }

    #[test]
    fn trace_csv_roundtrip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        emit_episode_csv(&p, &steps()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "t,nu,energy,drift_score,semantic_drift,event\n1,0,0,,0,\n2,0.125,2.5,1.25,0.5,drift_detected\n"
        );
        assert_eq!(read_episode_csv(&p).unwrap(), steps());
        let first = fs::read(&p).unwrap();
        emit_episode_csv(&p, &steps()).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_episode_csv(&blocker.join("t.csv"), &steps()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn summary_nulls_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EpisodeRecord { index: 0, steps: vec![steps()[0]] };
        let s = summarize("quiet", Scenario::Nominal, Variant::Baseline, 1, &[rec]).unwrap();
        emit_summary(dir.path(), &[s]).unwrap();
        let doc: SummaryDocument = read_json(&dir.path().join(SUMMARY_FILE)).unwrap();
        let r = &doc.conditions[0];
        assert_eq!(r.det_rate, 0.0);
        assert!(r.rec_rate.is_none() && r.mttr_mean.is_none() && r.mttr_std.is_none());
        assert!(r.latency_mean.is_none());
        let raw = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert!(raw.contains("\"rec_rate\": null"));
        assert!(dir.path().join(&r.curves_path).exists());
        assert!(dir.path().join(&r.scatter_path).exists());
    }

    #[test]
    fn exact_rate_serialization() {
        let mk = |i, ev| EpisodeRecord {
            index: i,
            steps: vec![StepRecord { t: 3, nu: 0.5, energy: 1.0, drift_score: Some(1.0), semantic_drift: 0.1, event: ev }],
        };
        let eps = vec![
            mk(0, Some(Event::DriftDetected)),
            mk(1, Some(Event::DriftDetected)),
            mk(2, Some(Event::DriftDetected)),
            mk(3, None),
        ];
        let s = summarize("c", Scenario::Misroute, Variant::Baseline, 2, &eps).unwrap();
        let rec = summary_record(&s);
        let text = serde_json::to_string(&rec).unwrap();
        let back: SummaryRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.det_rate, 0.75);
    }
}
