//! One end-to-end run: partition, ingest, normalize, up-sample, synthesize
//! labeled data, pre-train, grow-and-prune, evaluate.

use std::ops::Range;

use rayon::prelude::*;

use crate::config::{PipelineConfig, RunConfig};
use crate::dataset::{
    normalize_apply, normalize_fit, partition, smote, NormStats, PartitionScheme, Split,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    duration_sweep, instance_metrics, patient_vote, EvaluationReport, PatientPredictions,
};
use crate::growprune::{pretrain, synthesize, warmup, HistoryEntry, Labeled};
use crate::ingest::{ingest_participant, CategorySet, Label, ParticipantRecording, Task, WINDOW_S};
use crate::matrix::Matrix;
use crate::network::{init_mlp, MaskedMlp};
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;
use crate::synth::{
    fit_labeler, label_synthetic, sample_synthetic, select_components, ComponentSelection,
    LabelerSpec,
};

/// Seed of the run for one (subset, partition) pair. Depends on nothing else,
/// so a search and a direct run of the same pair agree.
pub fn run_seed(global: u64, categories: CategorySet, partition: u8) -> u64 {
    derive_seed(
        global,
        &[u64::from(categories.bits()), u64::from(partition)],
    )
}

/// `[input, hidden..., 2]`.
pub fn architecture(categories: CategorySet, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = vec![categories.dims(WINDOW_S)];
    sizes.extend_from_slice(hidden);
    sizes.push(2);
    sizes
}

/// Rows of one participant inside a split matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRows {
    pub participant_id: String,
    pub label: u8,
    pub rows: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct SplitData<T> {
    pub x: Matrix<T>,
    pub y: Vec<u8>,
    /// Real participants in id order; SMOTE rows, if any, follow the last of them.
    pub patients: Vec<PatientRows>,
}

impl<T: Scalar> SplitData<T> {
    fn from_instances(parts: Vec<(String, u8, Vec<Vec<T>>)>, dim: usize) -> Result<Self> {
        let mut data = Vec::new();
        let mut y = Vec::new();
        let mut patients = Vec::with_capacity(parts.len());
        for (pid, label, rows) in parts {
            let start = y.len();
            for r in rows {
                data.extend(r);
                y.push(label);
            }
            patients.push(PatientRows {
                participant_id: pid,
                label,
                rows: start..y.len(),
            });
        }
        Ok(SplitData {
            x: Matrix::from_vec(y.len(), dim, data)?,
            y,
            patients,
        })
    }

    pub fn labeled(&self) -> Result<Labeled<'_, T>> {
        Labeled::new(&self.x, &self.y)
    }

    pub fn count(&self, label: u8) -> usize {
        self.y.iter().filter(|&&l| l == label).count()
    }
}

pub fn task_cohort(cohort: &[ParticipantRecording], task: Task) -> Vec<&ParticipantRecording> {
    let mut v: Vec<_> = cohort.iter().filter(|r| task.includes(r.label)).collect();
    v.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    v
}

pub fn partition_for(
    cohort: &[ParticipantRecording],
    task: Task,
    partition_index: u8,
    seed: u64,
) -> Result<PartitionScheme> {
    let members: Vec<(String, _)> = task_cohort(cohort, task)
        .into_iter()
        .map(|r| (r.participant_id.clone(), r.label))
        .collect();
    for label in [Label::Healthy, task.disorder()] {
        if !members.iter().any(|(_, l)| *l == label) {
            return Err(Error::InvalidInput(format!(
                "task {task}: the cohort has no {label} participants"
            )));
        }
    }
    partition(&members, partition_index, seed)
}

/// Ingest the task's participants and group them by split, unnormalized.
pub fn build_splits<T: Scalar>(
    cohort: &[ParticipantRecording],
    scheme: &PartitionScheme,
    task: Task,
    categories: CategorySet,
) -> Result<[SplitData<T>; 3]> {
    let members = task_cohort(cohort, task);
    let ingested = members
        .par_iter()
        .map(|r| {
            let inst = ingest_participant::<T>(r, categories)?;
            let split = scheme.split_of(&r.participant_id).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} is missing from the partition",
                    r.participant_id
                ))
            })?;
            Ok((
                split,
                r.participant_id.clone(),
                r.label.binary(),
                inst.into_iter().map(|i| i.features).collect(),
            ))
        })
        .collect::<Result<Vec<(Split, String, u8, Vec<Vec<T>>)>>>()?;
    let dim = categories.dims(WINDOW_S);
    let mut by_split: [Vec<_>; 3] = Default::default();
    for (split, pid, label, rows) in ingested {
        by_split[split as usize].push((pid, label, rows));
    }
    let [a, b, c] = by_split;
    Ok([
        SplitData::from_instances(a, dim)?,
        SplitData::from_instances(b, dim)?,
        SplitData::from_instances(c, dim)?,
    ])
}

/// Normalized splits with the training split balanced by SMOTE.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub scheme: PartitionScheme,
    pub norm: NormStats<T>,
    pub train: SplitData<T>,
    pub validation: SplitData<T>,
    pub test: SplitData<T>,
    pub smote_added: usize,
}

pub fn prepare<T: Scalar>(
    cohort: &[ParticipantRecording],
    cfg: &RunConfig,
    categories: CategorySet,
    partition_index: u8,
) -> Result<Prepared<T>> {
    let seed = run_seed(cfg.seed, categories, partition_index);
    let scheme = partition_for(cohort, cfg.task, partition_index, cfg.seed)?;
    let [train, validation, test] = build_splits::<T>(cohort, &scheme, cfg.task, categories)?;
    for (name, s) in [
        ("train", &train),
        ("validation", &validation),
        ("test", &test),
    ] {
        if s.count(0) == 0 || s.count(1) == 0 {
            return Err(Error::InvalidInput(format!(
                "{name} split lacks one of the classes"
            )));
        }
    }
    let norm = normalize_fit(&train.x)?;
    let mut train = SplitData {
        x: normalize_apply(&norm, &train.x)?,
        ..train
    };
    let validation = SplitData {
        x: normalize_apply(&norm, &validation.x)?,
        ..validation
    };
    let test = SplitData {
        x: normalize_apply(&norm, &test.x)?,
        ..test
    };

    let (n0, n1) = (train.count(0), train.count(1));
    let minority = u8::from(n1 < n0);
    let (n_min, n_max) = (n0.min(n1), n0.max(n1));
    let mut smote_added = 0;
    if n_min < n_max {
        let rows: Vec<usize> = (0..train.y.len())
            .filter(|&i| train.y[i] == minority)
            .collect();
        let k = cfg.pipeline.smote_k.min(n_min.saturating_sub(1));
        if k < cfg.pipeline.smote_k {
            log::warn!(
                "only {n_min} minority rows; SMOTE k lowered from {} to {k}",
                cfg.pipeline.smote_k
            );
        }
        let out = smote(
            &train.x.select_rows(&rows),
            n_max,
            k,
            derive_seed(seed, &[tag("smote")]),
        )?;
        let extra = out
            .samples
            .select_rows(&(n_min..out.samples.rows()).collect::<Vec<_>>());
        smote_added = extra.rows();
        train.x = train.x.vstack(&extra)?;
        train.y.extend(std::iter::repeat_n(minority, smote_added));
    }
    Ok(Prepared {
        scheme,
        norm,
        train,
        validation,
        test,
        smote_added,
    })
}

/// Labeled synthetic data drawn from a mixture fitted to the real data.
#[derive(Clone, Debug)]
pub struct SyntheticData<T> {
    pub selection: ComponentSelection,
    pub labeler: LabelerSpec,
    pub labeler_scores: Vec<(LabelerSpec, f64)>,
    pub x: Matrix<T>,
    pub y: Vec<u8>,
}

pub fn synthetic_data<T: Scalar>(
    prep: &Prepared<T>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SyntheticData<T>> {
    let gmm_seed = derive_seed(seed, &[tag("gmm")]);
    let selection = select_components(
        &prep.train.x,
        &prep.validation.x,
        &cfg.gmm_candidates,
        gmm_seed,
        &cfg.gmm,
    )?;
    log::info!(
        "mixture components: {} (scores {:?})",
        selection.best,
        selection.scores
    );
    let (x, _) = sample_synthetic(
        &prep.train.x,
        &prep.validation.x,
        selection.best,
        cfg.synthetic_count,
        gmm_seed,
        &cfg.gmm,
    )?;
    let chosen = fit_labeler(
        &prep.train.x,
        &prep.train.y,
        &prep.validation.x,
        &prep.validation.y,
        &cfg.labeler_grid,
        derive_seed(seed, &[tag("labeler")]),
    )?;
    log::info!("labeler: {}", chosen.labeler.spec);
    let y = label_synthetic(&chosen.labeler, &x)?;
    Ok(SyntheticData {
        selection,
        labeler: chosen.labeler.spec.clone(),
        labeler_scores: chosen.results,
        x,
        y,
    })
}

/// Instance predictions of every test patient, in chronological order.
pub fn patient_predictions<T: Scalar>(
    mlp: &MaskedMlp<T>,
    split: &SplitData<T>,
) -> Result<Vec<PatientPredictions>> {
    let preds = mlp.predict(&split.x)?;
    Ok(split
        .patients
        .iter()
        .map(|p| PatientPredictions {
            participant_id: p.participant_id.clone(),
            label: p.label,
            predictions: preds[p.rows.clone()].to_vec(),
        })
        .collect())
}

pub fn evaluate_split<T: Scalar>(
    mlp: &MaskedMlp<T>,
    split: &SplitData<T>,
    step_minutes: f64,
) -> Result<EvaluationReport> {
    let patients = patient_predictions(mlp, split)?;
    let preds: Vec<u8> = patients
        .iter()
        .flat_map(|p| p.predictions.iter().copied())
        .collect();
    let labels: Vec<u8> = split
        .patients
        .iter()
        .flat_map(|p| split.y[p.rows.clone()].iter().copied())
        .collect();
    let metrics = instance_metrics(&preds, &labels)?;
    let patient_votes = patients
        .iter()
        .map(|p| {
            let full = p.predictions.len() as f64 * WINDOW_S as f64 / 60.0;
            Ok((
                p.participant_id.clone(),
                p.label,
                patient_vote(&p.predictions, full)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        metrics,
        cost: mlp.cost(),
        patient_votes,
        curve: duration_sweep(&patients, step_minutes)?,
    })
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub categories: CategorySet,
    pub partition: u8,
    pub run_seed: u64,
    pub prepared: Prepared<T>,
    pub synthetic: SyntheticData<T>,
    pub pretrain_loss: Vec<f64>,
    pub warmup_loss: Vec<f64>,
    pub model: MaskedMlp<T>,
    pub best_val_accuracy: f64,
    pub history: Vec<HistoryEntry>,
    pub report: EvaluationReport,
}

/// The full pipeline for one category subset and partition.
pub fn run<T: Scalar>(
    cohort: &[ParticipantRecording],
    cfg: &RunConfig,
    categories: CategorySet,
    partition_index: u8,
) -> Result<RunOutput<T>> {
    let seed = run_seed(cfg.seed, categories, partition_index);
    let prepared = prepare::<T>(cohort, cfg, categories, partition_index)?;
    let synthetic = synthetic_data(&prepared, &cfg.pipeline, seed)?;
    let gp = &cfg.pipeline.growprune;
    let mut mlp = init_mlp::<T>(
        &architecture(categories, &cfg.hidden_layers()),
        derive_seed(seed, &[tag("init")]),
    )?;
    let pretrain_loss = pretrain(
        &mut mlp,
        Labeled::new(&synthetic.x, &synthetic.y)?,
        gp,
        seed,
    )?;
    let warmup_loss = warmup(&mut mlp, prepared.train.labeled()?, gp, seed)?;
    let synthesis = synthesize(
        mlp,
        prepared.train.labeled()?,
        prepared.validation.labeled()?,
        gp,
        seed,
    )?;
    if synthesis.history.iter().any(|h| !h.train_loss.is_finite()) {
        return Err(Error::Numeric("training loss diverged".into()));
    }
    let report = evaluate_split(
        &synthesis.best,
        &prepared.test,
        cfg.pipeline.sweep_step_minutes,
    )?;
    Ok(RunOutput {
        categories,
        partition: partition_index,
        run_seed: seed,
        prepared,
        synthetic,
        pretrain_loss,
        warmup_loss,
        model: synthesis.best,
        best_val_accuracy: synthesis.best_val_accuracy,
        history: synthesis.history,
        report,
    })
}
