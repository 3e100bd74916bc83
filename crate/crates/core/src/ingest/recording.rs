use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sensor::SensorId;
use super::stream::{parse_stream, SensorStream};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Bipolar,
    Mdd,
    Schizoaffective,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::Healthy,
        Label::Bipolar,
        Label::Mdd,
        Label::Schizoaffective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Bipolar => "bipolar",
            Label::Mdd => "mdd",
            Label::Schizoaffective => "schizoaffective",
        }
    }

    /// 0 = healthy, 1 = any disorder.
    pub fn binary(self) -> u8 {
        u8::from(self != Label::Healthy)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Label::Healthy),
            "bipolar" => Ok(Label::Bipolar),
            "mdd" => Ok(Label::Mdd),
            "schizo" | "schizoaffective" => Ok(Label::Schizoaffective),
            other => Err(Error::InvalidInput(format!("unknown label `{other}`"))),
        }
    }
}

/// Binary classification task: healthy versus one disorder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Bipolar,
    Mdd,
    Schizo,
}

impl Task {
    pub fn disorder(self) -> Label {
        match self {
            Task::Bipolar => Label::Bipolar,
            Task::Mdd => Label::Mdd,
            Task::Schizo => Label::Schizoaffective,
        }
    }

    pub fn includes(self, label: Label) -> bool {
        label == Label::Healthy || label == self.disorder()
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Bipolar => "bipolar",
            Task::Mdd => "mdd",
            Task::Schizo => "schizo",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bipolar" => Ok(Task::Bipolar),
            "mdd" => Ok(Task::Mdd),
            "schizo" | "schizoaffective" => Ok(Task::Schizo),
            other => Err(Error::config(
                "task",
                format!("unknown task `{other}` (bipolar, mdd, schizo)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub participant_id: String,
    pub label: Label,
}

/// All eight streams of one participant, held in canonical sensor order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticipantRecording {
    pub participant_id: String,
    pub label: Label,
    streams: Vec<SensorStream>,
}

impl ParticipantRecording {
    pub fn new(
        participant_id: impl Into<String>,
        label: Label,
        streams: Vec<SensorStream>,
    ) -> Result<Self> {
        let participant_id = participant_id.into();
        let mut slots: Vec<Option<SensorStream>> = vec![None; SensorId::ALL.len()];
        for s in streams {
            let i = s.sensor.index();
            if slots[i].is_some() {
                return Err(Error::InvalidRecording(format!(
                    "{participant_id}: sensor {} present more than once",
                    s.sensor
                )));
            }
            slots[i] = Some(s);
        }
        let streams = slots
            .into_iter()
            .zip(SensorId::ALL)
            .map(|(s, id)| {
                s.ok_or_else(|| {
                    Error::InvalidRecording(format!("{participant_id}: missing sensor {id}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticipantRecording {
            participant_id,
            label,
            streams,
        })
    }

    pub fn stream(&self, id: SensorId) -> &SensorStream {
        &self.streams[id.index()]
    }

    pub fn streams(&self) -> &[SensorStream] {
        &self.streams
    }

    /// `[max(start), min(end))` in epoch microseconds; may be empty.
    pub fn overlap_us(&self) -> (i64, i64) {
        let start = self.streams.iter().map(|s| s.start_us).max().unwrap_or(0);
        let end = self.streams.iter().map(|s| s.end_us()).min().unwrap_or(0);
        (start, end)
    }

    /// Shortest retained stream duration, in seconds.
    pub fn common_span_s(&self) -> f64 {
        self.streams
            .iter()
            .map(SensorStream::duration_s)
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of full windows every stream can supply.
    pub fn window_count(&self, window_s: u32) -> usize {
        self.streams
            .iter()
            .map(|s| s.len() / (s.rate_hz * window_s) as usize)
            .min()
            .unwrap_or(0)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            participant_id: self.participant_id.clone(),
            label: self.label,
        }
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b) + i64::from(a.rem_euclid(b) != 0)
}

/// Trim every stream to the common span. Each stream is re-anchored on its
/// absolute nominal grid (multiples of its period since the epoch): the first
/// retained grid point is the first at or after the latest stream start, and
/// each grid point takes the first sample at or after it.
pub fn synchronize(
    recording: &ParticipantRecording,
    min_overlap_s: u32,
) -> Result<ParticipantRecording> {
    let (common_start, common_end) = recording.overlap_us();
    let required = min_overlap_s as i64 * 1_000_000;
    if common_end - common_start < required {
        return Err(Error::InsufficientOverlap {
            overlap_ms: (common_end - common_start).max(i64::MIN / 2) / 1000,
            required_ms: required / 1000,
        });
    }
    let streams = recording
        .streams()
        .iter()
        .map(|s| {
            let p = s.period_us();
            let grid_start = ceil_div(common_start, p) * p;
            let first = ceil_div(grid_start - s.start_us, p).max(0) as usize;
            // grid points strictly before the common end
            let n_grid = ceil_div(common_end - grid_start, p).max(0) as usize;
            let n = n_grid.min(s.len().saturating_sub(first));
            SensorStream {
                sensor: s.sensor,
                rate_hz: s.rate_hz,
                channels: s.channels,
                start_us: grid_start,
                samples: s.samples[first * s.channels..(first + n) * s.channels].to_vec(),
            }
        })
        .collect();
    Ok(ParticipantRecording {
        participant_id: recording.participant_id.clone(),
        label: recording.label,
        streams,
    })
}

fn stream_file(dir: &Path, id: SensorId) -> std::path::PathBuf {
    dir.join(format!("{}.csv", id.name()))
}

pub fn read_participant(dir: &Path) -> Result<ParticipantRecording> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::format(mpath.display().to_string(), e))?;
    let streams = SensorId::ALL
        .iter()
        .map(|&id| {
            let s = parse_stream(&stream_file(dir, id))?;
            if s.sensor != id {
                return Err(Error::InvalidRecording(format!(
                    "{}: file for {id} declares sensor {}",
                    dir.display(),
                    s.sensor
                )));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    ParticipantRecording::new(manifest.participant_id, manifest.label, streams)
}

pub fn write_participant(dir: &Path, rec: &ParticipantRecording) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = toml::to_string(&rec.manifest()).map_err(|e| Error::format("manifest", e))?;
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    for s in rec.streams() {
        let p = stream_file(dir, s.sensor);
        std::fs::write(&p, s.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Every subdirectory holding a manifest, in lexicographic order.
pub fn load_cohort(root: &Path) -> Result<Vec<ParticipantRecording>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let p = entry.path();
        if p.is_dir() && p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no participant directories",
            root.display()
        )));
    }
    dirs.iter().map(|d| read_participant(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(id: SensorId, start_ms: i64, seconds: usize) -> SensorStream {
        let n = seconds * id.rate_hz() as usize;
        let samples = (0..n * id.channels()).map(|i| i as f64).collect();
        SensorStream::new(id, start_ms, samples).unwrap()
    }

    fn recording(starts: impl Fn(SensorId) -> i64, seconds: usize) -> ParticipantRecording {
        let streams = SensorId::ALL
            .iter()
            .map(|&id| stream(id, starts(id), seconds))
            .collect();
        ParticipantRecording::new("p1", Label::Healthy, streams).unwrap()
    }

    #[test]
    fn missing_or_duplicate_sensors_are_rejected() {
        let mut streams: Vec<_> = SensorId::ALL.iter().map(|&id| stream(id, 0, 1)).collect();
        streams.pop();
        assert!(ParticipantRecording::new("p", Label::Mdd, streams.clone()).is_err());
        streams.push(stream(SensorId::Gsr, 0, 1));
        assert!(ParticipantRecording::new("p", Label::Mdd, streams).is_err());
    }

    #[test]
    fn later_start_trims_leading_samples() {
        let rec = recording(|id| if id == SensorId::Temp { 1000 } else { 0 }, 60);
        let out = synchronize(&rec, 15).unwrap();
        let gsr = out.stream(SensorId::Gsr);
        assert_eq!(gsr.start_us, 1_000_000);
        // 4 Hz: samples 0..3 fall before 1000 ms
        assert_eq!(gsr.samples[0], 4.0);
        assert_eq!(out.stream(SensorId::Temp).samples[0], 0.0);
        assert!(out.streams().iter().all(|s| s.start_us == 1_000_000));
    }

    #[test]
    fn identical_spans_are_unchanged() {
        let rec = recording(|_| 5000, 30);
        assert_eq!(synchronize(&rec, 15).unwrap(), rec);
    }

    #[test]
    fn off_grid_start_snaps_to_next_grid_point() {
        let rec = recording(|id| if id == SensorId::Ibi { 2300 } else { 0 }, 60);
        let out = synchronize(&rec, 15).unwrap();
        let ibi = out.stream(SensorId::Ibi);
        // next-grid-point oracle: smallest multiple of 1000 ms that is >= 2300 ms
        let oracle = (0..).map(|k| k * 1000).find(|&t| t >= 2300).unwrap();
        assert_eq!(ibi.start_us, oracle * 1000);
        // first sample at or after 3000 ms is the one taken at 3300 ms
        assert_eq!(ibi.samples[0], 1.0);
        assert_eq!(out.stream(SensorId::Gsr).start_us, 2_500_000);
    }

    #[test]
    fn short_overlap_is_an_error() {
        let rec = recording(|id| if id == SensorId::Vel { 20_000 } else { 0 }, 30);
        let e = synchronize(&rec, 15).unwrap_err();
        assert!(e.to_string().contains("insufficient overlap"));
    }

    #[test]
    fn participant_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = recording(|_| 1_600_000_000_000, 2);
        write_participant(&dir.path().join("p1"), &rec).unwrap();
        let cohort = load_cohort(dir.path()).unwrap();
        assert_eq!(cohort, vec![rec]);
    }
}
