//! Synthetic cohorts with controllable class separability.
//!
//! Every channel is i.i.d. Gaussian around a per-subject baseline:
//! `baseline + subject_offset + shift`, where the subject offset is drawn once
//! per participant and the shift (in noise-std units) applies to disorder
//! classes only.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_participant, Label, ParticipantRecording, SensorId, SensorStream};
use crate::rng::rng_for;

/// Class shift in noise-std units: one value for every channel, or one per sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassShift {
    Uniform(f64),
    PerSensor(Vec<f64>),
}

impl ClassShift {
    fn for_sensor(&self, id: SensorId) -> f64 {
        match self {
            ClassShift::Uniform(s) => *s,
            ClassShift::PerSensor(v) => v[id.index()],
        }
    }
}

impl Default for ClassShift {
    fn default() -> Self {
        ClassShift::Uniform(2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub healthy: usize,
    pub bipolar: usize,
    pub mdd: usize,
    pub schizoaffective: usize,
    pub recording_minutes: f64,
    pub class_shift: ClassShift,
    /// Per-sensor noise std in canonical order; `None` uses [`default_noise_std`].
    pub noise_std: Option<Vec<f64>>,
    /// Std of the per-subject baseline offset, in noise-std units.
    pub subject_offset: f64,
    pub start_ms: i64,
    /// Each stream starts up to this many ms late, so synchronization has work to do.
    pub start_jitter_ms: i64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            healthy: 10,
            bipolar: 10,
            mdd: 0,
            schizoaffective: 0,
            recording_minutes: 90.0,
            class_shift: ClassShift::default(),
            noise_std: None,
            subject_offset: 0.25,
            start_ms: 1_600_000_000_000,
            start_jitter_ms: 0,
            seed: 0,
        }
    }
}

/// Per-channel resting means, canonical sensor order.
pub fn baseline(id: SensorId) -> &'static [f64] {
    match id {
        SensorId::Gsr => &[2.0],
        SensorId::St => &[33.0],
        SensorId::Ibi => &[800.0],
        SensorId::AccW => &[0.0, 0.0, 64.0],
        SensorId::Temp => &[22.0],
        SensorId::Grav => &[0.0, 0.0, 9.81],
        SensorId::AccP => &[0.0, 0.0, 0.0],
        SensorId::Vel => &[0.0, 0.0, 0.0],
    }
}

pub fn default_noise_std() -> Vec<f64> {
    vec![0.3, 0.2, 60.0, 8.0, 0.5, 0.3, 0.5, 0.2]
}

impl CohortSpec {
    pub fn count(&self, label: Label) -> usize {
        match label {
            Label::Healthy => self.healthy,
            Label::Bipolar => self.bipolar,
            Label::Mdd => self.mdd,
            Label::Schizoaffective => self.schizoaffective,
        }
    }

    pub fn noise(&self) -> Vec<f64> {
        self.noise_std.clone().unwrap_or_else(default_noise_std)
    }

    pub fn validate(&self) -> Result<()> {
        let noise = self.noise();
        if noise.len() != SensorId::ALL.len() {
            return Err(Error::config("noise_std", "needs one value per sensor (8)"));
        }
        if noise.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config(
                "noise_std",
                "every std must be positive and finite",
            ));
        }
        if !(self.recording_minutes > 0.0 && self.recording_minutes.is_finite()) {
            return Err(Error::config("recording_minutes", "must be positive"));
        }
        if let ClassShift::PerSensor(v) = &self.class_shift {
            if v.len() != SensorId::ALL.len() {
                return Err(Error::config(
                    "class_shift",
                    "per-sensor shift needs 8 values",
                ));
            }
        }
        if !(self.subject_offset >= 0.0 && self.subject_offset.is_finite()) {
            return Err(Error::config("subject_offset", "must be non-negative"));
        }
        if self.start_jitter_ms < 0 {
            return Err(Error::config("start_jitter_ms", "must be non-negative"));
        }
        Ok(())
    }
}

fn participant(spec: &CohortSpec, label: Label, index: usize) -> Result<ParticipantRecording> {
    let noise = spec.noise();
    let mut rng = rng_for(spec.seed, &[label as u64, index as u64]);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let streams = SensorId::ALL
        .iter()
        .map(|&id| {
            let sigma = noise[id.index()];
            let shift = if label == Label::Healthy {
                0.0
            } else {
                spec.class_shift.for_sensor(id)
            };
            let means: Vec<f64> = baseline(id)
                .iter()
                .map(|&b| b + sigma * (spec.subject_offset * unit.sample(&mut rng) + shift))
                .collect();
            let jitter = if spec.start_jitter_ms > 0 {
                rng.gen_range(0..=spec.start_jitter_ms)
            } else {
                0
            };
            let n = (spec.recording_minutes * 60.0 * id.rate_hz() as f64).round() as usize;
            let mut samples = Vec::with_capacity(n * means.len());
            for _ in 0..n {
                for &m in &means {
                    samples.push(m + sigma * unit.sample(&mut rng));
                }
            }
            SensorStream::new(id, spec.start_ms + jitter, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    ParticipantRecording::new(format!("{}_{:03}", label.name(), index), label, streams)
}

/// Generate every participant of the cohort. Deterministic in `spec.seed`;
/// participants are generated in parallel from independent seeds.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<ParticipantRecording>> {
    spec.validate()?;
    let jobs: Vec<(Label, usize)> = Label::ALL
        .iter()
        .flat_map(|&l| (0..spec.count(l)).map(move |i| (l, i)))
        .collect();
    jobs.par_iter()
        .map(|&(l, i)| participant(spec, l, i))
        .collect()
}

pub fn write_cohort(dir: &Path, cohort: &[ParticipantRecording]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cohort
        .par_iter()
        .try_for_each(|rec| write_participant(&dir.join(&rec.participant_id), rec))
}
