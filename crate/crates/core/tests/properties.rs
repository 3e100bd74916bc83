use mhdeep::ingest::{
    load_cohort, synchronize, window_and_flatten, CategorySet, DataInstance, Label,
    ParticipantRecording, SensorId, SensorStream,
};
use mhdeep::simulate::{generate_cohort, write_cohort, CohortSpec};
use mhdeep::synth::{fit_gmm, GmmOptions};
use mhdeep::Matrix;
use proptest::prelude::*;

const EPOCH_MS: i64 = 1_700_000_000_000;

fn recording(offsets_s: &[i64], lengths_s: &[usize]) -> ParticipantRecording {
    let streams = SensorId::ALL
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let n = lengths_s[i] * id.rate_hz() as usize * id.channels();
            let samples = (0..n).map(|v| (v % 97) as f64).collect();
            SensorStream::new(id, EPOCH_MS + offsets_s[i] * 1000, samples).unwrap()
        })
        .collect();
    ParticipantRecording::new("p", Label::Healthy, streams).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn window_count_is_floor_of_common_span(
        offsets in proptest::collection::vec(0i64..40, 8),
        lengths in proptest::collection::vec(60usize..200, 8),
        bits in 1u8..=255,
    ) {
        let rec = recording(&offsets, &lengths);
        let start = offsets.iter().max().unwrap();
        let end = offsets.iter().zip(&lengths).map(|(o, l)| o + *l as i64).min().unwrap();
        let synced = synchronize(&rec, 15);
        if end - start < 15 {
            prop_assert!(synced.is_err());
            return Ok(());
        }
        let synced = synced.unwrap();
        let cats = CategorySet::from_bits(bits).unwrap();
        let rows: Vec<DataInstance<f64>> = window_and_flatten(&synced, cats, 15).unwrap();
        prop_assert_eq!(rows.len() as i64, (end - start) / 15);
        prop_assert!(rows.iter().all(|r| r.features.len() == cats.dims(15)));
        prop_assert!(rows.iter().enumerate().all(|(i, r)| r.window_index == i));
    }

    #[test]
    fn em_log_likelihood_never_decreases(
        data in proptest::collection::vec(-5.0f64..5.0, 60..120),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let rows = data.len() / 3;
        let x = Matrix::from_vec(rows, 3, data[..rows * 3].to_vec()).unwrap();
        let fit = fit_gmm(&x, k, seed, &GmmOptions::default()).unwrap();
        prop_assert!(!fit.history.is_empty());
        prop_assert!(fit.history.windows(2).all(|w| w[1] - w[0] >= -1e-8 * w[0].abs().max(1.0)));
        let total: f64 = fit.model.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(fit.model.variances.iter_rows().flatten().all(|&v| v > 0.0));
    }
}

#[test]
fn written_cohort_loads_back_identically() {
    let spec = CohortSpec {
        healthy: 2,
        bipolar: 1,
        mdd: 1,
        recording_minutes: 1.5,
        start_jitter_ms: 700,
        seed: 11,
        ..CohortSpec::default()
    };
    let cohort = generate_cohort(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_cohort(dir.path(), &cohort).unwrap();
    let loaded = load_cohort(dir.path()).unwrap();
    assert_eq!(loaded.len(), cohort.len());
    let mut expected = cohort.clone();
    expected.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    for (a, b) in expected.iter().zip(&loaded) {
        assert_eq!(a.participant_id, b.participant_id);
        assert_eq!(a.label, b.label);
        for (s, t) in a.streams().iter().zip(b.streams()) {
            assert_eq!(s.start_us, t.start_us);
            assert_eq!(s.samples.len(), t.samples.len());
            for (u, v) in s.samples.iter().zip(&t.samples) {
                assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0), "{u} vs {v}");
            }
        }
    }
}
