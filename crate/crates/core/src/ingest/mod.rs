//! Sensor stream ingestion: stream files, multi-rate synchronization, and
//! windowed flattening into fixed-length feature vectors.

mod recording;
mod sensor;
mod stream;
mod table;
mod window;

pub use recording::{
    load_cohort, read_participant, synchronize, write_participant, Label, Manifest,
    ParticipantRecording, Task, MANIFEST_FILE,
};
pub use sensor::{category_dims, CategorySet, SensorId, Source};
pub use stream::{parse_stream, parse_stream_str, SensorStream};
pub use table::{read_instances, write_instances, InstanceTable};
pub use window::{window_and_flatten, DataInstance};

use crate::error::Result;
use crate::scalar::Scalar;

pub const WINDOW_S: u32 = 15;

/// Synchronize and window one participant.
pub fn ingest_participant<T: Scalar>(
    recording: &ParticipantRecording,
    categories: CategorySet,
) -> Result<Vec<DataInstance<T>>> {
    let synced = synchronize(recording, WINDOW_S).map_err(|e| match e {
        crate::Error::InsufficientOverlap { .. } => {
            crate::Error::RecordingTooShort(format!("{}: {e}", recording.participant_id))
        }
        other => other,
    })?;
    window_and_flatten(&synced, categories, WINDOW_S)
}
