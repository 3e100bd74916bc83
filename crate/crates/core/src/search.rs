//! Exhaustive search over data-category subsets.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluate::EvaluationReport;
use crate::ingest::{CategorySet, ParticipantRecording};
use crate::pipeline;
use crate::rng::{rng_for, tag};
use crate::scalar::Scalar;

/// All 255 non-empty subsets, bitmask ascending.
pub fn enumerate_subsets() -> Vec<CategorySet> {
    (1..=u8::MAX)
        .map(|b| CategorySet::from_bits(b).expect("non-zero"))
        .collect()
}

/// Subsets named by the search config, sorted by bitmask.
pub fn configured_subsets(cfg: &RunConfig) -> Vec<CategorySet> {
    let s = &cfg.search;
    let mut out = if s.full {
        enumerate_subsets()
    } else if let Some(n) = s.sample {
        let mut all = enumerate_subsets();
        all.shuffle(&mut rng_for(cfg.seed, &[tag("subset-sample")]));
        all.truncate(n);
        all
    } else {
        s.subsets.clone()
    };
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub partition: u8,
    pub run_seed: u64,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub categories: CategorySet,
    pub partitions: Vec<PartitionResult>,
    pub average_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub categories: CategorySet,
    pub partition: u8,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Average test accuracy descending, bitmask ascending among equals.
    pub ranked: Vec<SubsetResult>,
    pub failures: Vec<SearchFailure>,
}

/// Train and evaluate one model per (subset, partition) on a pool of at most
/// `workers` threads. A subset with any failed partition is left out of the
/// ranking. Results do not depend on `workers`.
pub fn search<T: Scalar>(
    cohort: &[ParticipantRecording],
    cfg: &RunConfig,
    subsets: &[CategorySet],
    workers: usize,
) -> Result<SearchOutcome> {
    if subsets.is_empty() {
        return Err(Error::config("search.subsets", "no subsets to search"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let jobs: Vec<(CategorySet, u8)> = subsets
        .iter()
        .flat_map(|&s| cfg.search.partitions.iter().map(move |&p| (s, p)))
        .collect();
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cats, p)| {
                log::info!("search: subset {cats} partition {p}");
                let r = pipeline::run::<T>(cohort, cfg, cats, p).map(|out| PartitionResult {
                    partition: p,
                    run_seed: out.run_seed,
                    report: out.report,
                });
                (cats, p, r)
            })
            .collect()
    });
    Ok(merge(results, cfg.search.partitions.len()))
}

fn merge(
    results: Vec<(CategorySet, u8, Result<PartitionResult>)>,
    n_partitions: usize,
) -> SearchOutcome {
    let mut ranked: Vec<SubsetResult> = Vec::new();
    let mut failures = Vec::new();
    for (cats, p, r) in results {
        match r {
            Ok(pr) => match ranked.last_mut() {
                Some(last) if last.categories == cats => last.partitions.push(pr),
                _ => ranked.push(SubsetResult {
                    categories: cats,
                    partitions: vec![pr],
                    average_accuracy: 0.0,
                }),
            },
            Err(e) => {
                log::warn!("search: subset {cats} partition {p} failed: {e}");
                failures.push(SearchFailure {
                    categories: cats,
                    partition: p,
                    error: e.to_string(),
                });
            }
        }
    }
    ranked.retain(|s| {
        s.partitions.len() == n_partitions && !failures.iter().any(|f| f.categories == s.categories)
    });
    for s in &mut ranked {
        s.average_accuracy = s
            .partitions
            .iter()
            .map(|p| p.report.metrics.accuracy)
            .sum::<f64>()
            / n_partitions as f64;
    }
    ranked.sort_by(|a, b| {
        b.average_accuracy
            .partial_cmp(&a.average_accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.categories.cmp(&b.categories))
    });
    SearchOutcome { ranked, failures }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = vals.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl SearchOutcome {
    /// One row per (subset, partition) in ranking order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,subset,bitmask,partition,params,flops,param_compression,flop_compression,acc,fpr,fnr,f1\n");
        for (rank, s) in self.ranked.iter().enumerate() {
            for p in &s.partitions {
                let (m, c) = (&p.report.metrics, &p.report.cost);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{:.1},{:.1},{:.4},{},{},{}",
                    rank + 1,
                    s.categories,
                    s.categories.bits(),
                    p.partition,
                    c.params,
                    c.flops,
                    c.param_compression(),
                    c.flop_compression(),
                    m.accuracy,
                    cell(m.fpr),
                    cell(m.fnr),
                    cell(m.f1)
                );
            }
        }
        out
    }

    /// Tables for the `top_k` best subsets: one row per partition plus an average row.
    pub fn to_text(&self, top_k: usize) -> String {
        let mut out = String::new();
        for (rank, s) in self.ranked.iter().take(top_k).enumerate() {
            let _ = writeln!(
                out,
                "## {}. {} (average accuracy {:.4})",
                rank + 1,
                s.categories,
                s.average_accuracy
            );
            let _ = writeln!(
                out,
                "{:<9} {:>16} {:>16} {:>8} {:>8} {:>8} {:>8}",
                "partition", "params", "flops", "acc", "fpr", "fnr", "f1"
            );
            for p in &s.partitions {
                let (m, c) = (&p.report.metrics, &p.report.cost);
                let _ = writeln!(
                    out,
                    "{:<9} {:>16} {:>16} {:>8.4} {:>8} {:>8} {:>8}",
                    p.partition,
                    c.describe_params(),
                    c.describe_flops(),
                    m.accuracy,
                    cell(m.fpr),
                    cell(m.fnr),
                    cell(m.f1)
                );
            }
            let ms = || s.partitions.iter().map(|p| &p.report.metrics);
            let _ = writeln!(
                out,
                "{:<9} {:>16} {:>16} {:>8.4} {:>8} {:>8} {:>8}\n",
                "average",
                "",
                "",
                s.average_accuracy,
                cell(mean(ms().map(|m| m.fpr))),
                cell(mean(ms().map(|m| m.fnr))),
                cell(mean(ms().map(|m| m.f1)))
            );
        }
        for f in &self.failures {
            let _ = writeln!(
                out,
                "failed: {} partition {}: {}",
                f.categories, f.partition, f.error
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{Confusion, DurationCurve, InstanceMetrics};
    use crate::network::CostStats;
    use std::collections::HashSet;

    #[test]
    fn subsets_are_canonical() {
        let s = enumerate_subsets();
        assert_eq!(s.len(), 255);
        assert_eq!(s[0].to_string(), "GSR");
        assert_eq!(
            s.iter().map(|c| c.bits()).collect::<HashSet<_>>().len(),
            255
        );
        assert!(s.windows(2).all(|w| w[0].bits() < w[1].bits()));
    }

    #[test]
    fn sampling_is_seeded() {
        let mut cfg = RunConfig::new(4);
        cfg.search.sample = Some(5);
        let a = configured_subsets(&cfg);
        assert_eq!(a.len(), 5);
        assert_eq!(a, configured_subsets(&cfg));
        cfg.seed = 5;
        assert_ne!(a, configured_subsets(&cfg));
    }

    fn fake(acc: f64, p: u8) -> PartitionResult {
        let n = 100;
        let right = (acc * n as f64) as usize;
        PartitionResult {
            partition: p,
            run_seed: 0,
            report: EvaluationReport {
                metrics: InstanceMetrics {
                    confusion: Confusion {
                        tp: right,
                        fp: n - right,
                        tn: 0,
                        fn_: 0,
                    },
                    accuracy: acc,
                    fpr: Some(1.0),
                    fnr: Some(0.0),
                    precision: None,
                    recall: None,
                    f1: Some(acc),
                },
                cost: CostStats {
                    params: 10,
                    flops: 20,
                    dense_params: 10,
                    dense_flops: 20,
                },
                patient_votes: vec![],
                curve: DurationCurve {
                    step_minutes: 2.0,
                    points: vec![],
                    saturation: None,
                },
            },
        }
    }

    #[test]
    fn ranking_excludes_failures_and_breaks_ties_by_mask() {
        let c = |b| CategorySet::from_bits(b).unwrap();
        let results = vec![
            (c(1), 1, Ok(fake(0.5, 1))),
            (c(1), 2, Ok(fake(0.7, 2))),
            (c(2), 1, Ok(fake(0.9, 1))),
            (c(2), 2, Err(Error::Numeric("boom".into()))),
            (c(3), 1, Ok(fake(0.6, 1))),
            (c(3), 2, Ok(fake(0.6, 2))),
            (c(4), 1, Ok(fake(0.8, 1))),
            (c(4), 2, Ok(fake(0.8, 2))),
        ];
        let out = merge(results, 2);
        let order: Vec<u8> = out.ranked.iter().map(|s| s.categories.bits()).collect();
        assert_eq!(order, vec![4, 1, 3]);
        assert_eq!(out.failures.len(), 1);
        assert!(out
            .ranked
            .windows(2)
            .all(|w| w[0].average_accuracy >= w[1].average_accuracy));
        let text = out.to_text(3);
        assert_eq!(
            text.lines().filter(|l| l.starts_with("average ")).count(),
            3
        );
        assert!(text.contains("failed: ST partition 2"));
        assert_eq!(out.to_csv().lines().count(), 1 + 6);
    }
}
