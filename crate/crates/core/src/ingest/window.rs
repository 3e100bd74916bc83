use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::recording::ParticipantRecording;
use super::sensor::CategorySet;

/// One flattened window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DataInstance<T> {
    pub participant_id: String,
    pub window_index: usize,
    pub features: Vec<T>,
    /// 0 = healthy, 1 = disorder.
    pub label: u8,
}

/// Cut a synchronized recording into non-overlapping windows of `window_s`
/// seconds and flatten the selected categories. Within a window, categories go
/// in canonical order; each category contributes its channels one after another,
/// every channel as a time-ordered run. Trailing partial windows are dropped.
pub fn window_and_flatten<T: Scalar>(
    recording: &ParticipantRecording,
    categories: CategorySet,
    window_s: u32,
) -> Result<Vec<DataInstance<T>>> {
    if window_s == 0 {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    let n_windows = recording.window_count(window_s);
    if n_windows == 0 {
        return Err(Error::RecordingTooShort(format!(
            "{}: {:.1} s available, one window needs {window_s} s",
            recording.participant_id,
            recording.common_span_s()
        )));
    }
    let dim = categories.dims(window_s);
    let label = recording.label.binary();
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let mut features = Vec::with_capacity(dim);
        for id in categories.iter() {
            let s = recording.stream(id);
            let len = (s.rate_hz * window_s) as usize;
            let base = w * len;
            for c in 0..s.channels {
                features.extend((base..base + len).map(|t| T::of(s.samples[t * s.channels + c])));
            }
        }
        debug_assert_eq!(features.len(), dim);
        out.push(DataInstance {
            participant_id: recording.participant_id.clone(),
            window_index: w,
            features,
            label,
        });
    }
    Ok(out)
}
