//! Instance-level metrics, patient-level majority voting and inference-duration
//! sweeps. The positive class is the disorder (label 1).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::WINDOW_S;
use crate::network::CostStats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Ratios that are undefined for the given counts are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn instance_metrics(predictions: &[u8], labels: &[u8]) -> Result<InstanceMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let mut c = Confusion::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "non-binary prediction/label pair ({p}, {l})"
                )))
            }
        }
    }
    Ok(InstanceMetrics {
        confusion: c,
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        fpr: ratio(c.fp, c.fp + c.tn),
        fnr: ratio(c.fn_, c.fn_ + c.tp),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        // equals 2PR/(P+R) wherever that is defined
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    })
}

/// Instances covered by `minutes` of data.
pub fn instances_for(minutes: f64) -> usize {
    (minutes * 60.0 / WINDOW_S as f64 + 1e-9).floor() as usize
}

/// Majority label over the first `duration` worth of chronological instance
/// predictions (all of them if fewer are available). Ties go to the disorder class.
pub fn patient_vote(predictions: &[u8], duration_minutes: f64) -> Result<u8> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput(
            "patient has no instance predictions".into(),
        ));
    }
    let n = instances_for(duration_minutes);
    if n == 0 {
        return Err(Error::InvalidInput(format!(
            "duration of {duration_minutes} min is shorter than one {WINDOW_S} s window"
        )));
    }
    let window = &predictions[..n.min(predictions.len())];
    let pos = window.iter().filter(|&&p| p == 1).count();
    Ok(u8::from(2 * pos >= window.len()))
}

/// Chronological instance predictions for one test patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientPredictions {
    pub participant_id: String,
    pub label: u8,
    pub predictions: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub minutes: f64,
    pub instances: usize,
    pub correct: usize,
    pub patients: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationCurve {
    pub step_minutes: f64,
    pub points: Vec<CurvePoint>,
    /// First point after which patient accuracy never changes within the sweep.
    pub saturation: Option<CurvePoint>,
}

impl DurationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("minutes,instances,correct,patients,accuracy\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                p.minutes, p.instances, p.correct, p.patients, p.accuracy
            );
        }
        out
    }
}

/// Patient-level accuracy at `step`, `2 * step`, ... minutes, up to the
/// shortest patient's span. A single point at that span is used when it is
/// shorter than one step.
pub fn duration_sweep(patients: &[PatientPredictions], step_minutes: f64) -> Result<DurationCurve> {
    if patients.is_empty() {
        return Err(Error::InvalidInput("no test patients".into()));
    }
    if instances_for(step_minutes) == 0 {
        return Err(Error::InvalidInput(format!(
            "sweep step {step_minutes} min is shorter than one window"
        )));
    }
    let min_len = patients
        .iter()
        .map(|p| p.predictions.len())
        .min()
        .unwrap_or(0);
    if min_len == 0 {
        return Err(Error::InvalidInput(
            "a test patient has no instances".into(),
        ));
    }
    let span_minutes = min_len as f64 * WINDOW_S as f64 / 60.0;
    let mut durations: Vec<f64> = (1..)
        .map(|k| k as f64 * step_minutes)
        .take_while(|&d| instances_for(d) <= min_len)
        .collect();
    if durations.is_empty() {
        durations.push(span_minutes);
    }
    let points = durations
        .into_iter()
        .map(|minutes| {
            let correct = patients
                .iter()
                .map(|p| patient_vote(&p.predictions, minutes).map(|v| usize::from(v == p.label)))
                .sum::<Result<usize>>()?;
            Ok(CurvePoint {
                minutes,
                instances: instances_for(minutes),
                correct,
                patients: patients.len(),
                accuracy: correct as f64 / patients.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let last = points.last().map(|p| p.correct);
    let saturation = points
        .iter()
        .rposition(|p| Some(p.correct) != last)
        .map_or(points.first(), |i| points.get(i + 1))
        .copied();
    Ok(DurationCurve {
        step_minutes,
        points,
        saturation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: InstanceMetrics,
    pub cost: CostStats,
    /// Vote over each patient's full test recording.
    pub patient_votes: Vec<(String, u8, u8)>,
    pub curve: DurationCurve,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "\"n/a\"".to_string(), |x| format!("{x:.6}"))
}

impl EvaluationReport {
    /// `key = value` text; undefined ratios are written as `"n/a"`.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let c = &m.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "[instance]");
        let _ = writeln!(out, "accuracy = {:.6}", m.accuracy);
        let _ = writeln!(out, "fpr = {}", fmt_opt(m.fpr));
        let _ = writeln!(out, "fnr = {}", fmt_opt(m.fnr));
        let _ = writeln!(out, "f1 = {}", fmt_opt(m.f1));
        let _ = writeln!(
            out,
            "tp = {}\nfp = {}\ntn = {}\nfn = {}",
            c.tp, c.fp, c.tn, c.fn_
        );
        let _ = writeln!(out, "\n[cost]");
        let _ = writeln!(
            out,
            "params = {}\nflops = {}",
            self.cost.params, self.cost.flops
        );
        let _ = writeln!(
            out,
            "param_compression = \"{:.1}x\"",
            self.cost.param_compression()
        );
        let _ = writeln!(
            out,
            "flop_compression = \"{:.1}x\"",
            self.cost.flop_compression()
        );
        let _ = writeln!(out, "\n[patient]");
        let correct = self.patient_votes.iter().filter(|(_, l, v)| l == v).count();
        let _ = writeln!(
            out,
            "accuracy = {:.6}",
            correct as f64 / self.patient_votes.len().max(1) as f64
        );
        let _ = writeln!(out, "step_minutes = {}", self.curve.step_minutes);
        match &self.curve.saturation {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "saturation_minutes = {}\nsaturation_accuracy = {:.6}",
                    s.minutes, s.accuracy
                );
            }
            None => {
                let _ = writeln!(out, "saturation_minutes = \"n/a\"");
            }
        }
        for (pid, label, vote) in &self.patient_votes {
            let _ = writeln!(
                out,
                "vote.{pid} = {{ label = {label}, predicted = {vote} }}"
            );
        }
        out
    }
}
