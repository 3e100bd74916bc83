use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhdeep::checkpoint::{scalar_of, Checkpoint, CheckpointMeta};
use mhdeep::config::{Precision, Provenance, RunConfig};
use mhdeep::dataset::normalize_apply;
use mhdeep::evaluate::patient_vote;
use mhdeep::ingest::{
    ingest_participant, load_cohort, read_participant, CategorySet, DataInstance, InstanceTable,
    WINDOW_S,
};
use mhdeep::pipeline::{self, build_splits, evaluate_split, partition_for, SplitData};
use mhdeep::search::{configured_subsets, enumerate_subsets, search};
use mhdeep::simulate::{generate_cohort, write_cohort};
use mhdeep::{Error, Result, Scalar};

#[derive(Parser, Debug)]
#[command(
    name = "mhdeep",
    version,
    about = "Wearable-sensor mental-health classification pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// bipolar, mdd or schizo.
    #[arg(long, global = true)]
    task: Option<String>,
    /// 1, 2 or 3.
    #[arg(long, global = true)]
    partition: Option<u8>,
    /// Category subset: a bitmask (decimal, 0x.., 0b..), `all`, `watch`, `phone`, or names joined by `+`.
    #[arg(long, global = true)]
    subset: Option<String>,
    /// Cohort directory.
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort under <out>/cohort.
    Simulate,
    /// Synchronize, window and flatten every participant into <out>/instances.csv.
    Ingest,
    /// Write the subject-disjoint split for the task to <out>/partition.toml.
    Partition,
    /// Write GMM-sampled, labeler-labeled synthetic data to <out>/synthetic.csv.
    Synth,
    /// Run the full pipeline and write a checkpoint plus reports.
    Train,
    /// Rank category subsets by average test accuracy.
    Search {
        /// Sweep all 255 subsets.
        #[arg(long)]
        all_subsets: bool,
    },
    /// Score a checkpoint on its test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Predict one participant directory with a checkpoint.
    Predict {
        checkpoint: PathBuf,
        participant: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut table = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::config("config", e.message()))?
        }
        None => toml::Table::new(),
    };
    let mut set = |k: &str, v: toml::Value| {
        table.insert(k.to_string(), v);
    };
    if let Some(s) = c.seed {
        let s = i64::try_from(s)
            .map_err(|_| Error::config("seed", "must fit in a signed 64-bit integer"))?;
        set("seed", toml::Value::Integer(s));
    }
    if let Some(t) = &c.task {
        set(
            "task",
            toml::Value::String(t.parse::<mhdeep::ingest::Task>()?.name().to_string()),
        );
    }
    if let Some(p) = c.partition {
        set("partition", toml::Value::Integer(p.into()));
    }
    if let Some(s) = &c.subset {
        let cats: CategorySet = s
            .parse()
            .map_err(|e: Error| Error::config("subset", e.to_string()))?;
        set("categories", toml::Value::String(cats.to_string()));
    }
    if let Some(p) = &c.cohort {
        set("cohort", toml::Value::String(p.display().to_string()));
    }
    if let Some(p) = &c.out {
        set("output", toml::Value::String(p.display().to_string()));
    }
    RunConfig::from_table(table)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn with_header(prov: &Provenance, body: &str) -> String {
    format!("{}{body}", prov.header())
}

fn cohort(cfg: &RunConfig) -> Result<Vec<mhdeep::ingest::ParticipantRecording>> {
    if !cfg.cohort.is_dir() {
        return Err(Error::config(
            "cohort",
            format!("{} is not a directory", cfg.cohort.display()),
        ));
    }
    load_cohort(&cfg.cohort)
}

fn simulate(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let dir = cfg.output.join("cohort");
    let recs = generate_cohort(&cfg.simulate)?;
    write_cohort(&dir, &recs)?;
    write(
        &dir.join("cohort.toml"),
        &with_header(prov, &cfg.to_toml()?),
    )?;
    println!("{} participants written to {}", recs.len(), dir.display());
    Ok(())
}

fn provenance_pairs(cfg: &RunConfig, prov: &Provenance) -> Vec<(String, String)> {
    vec![
        ("config_hash".into(), prov.config_hash.clone()),
        ("seed".into(), prov.seed.to_string()),
        ("categories".into(), cfg.categories.to_string()),
        ("dims".into(), cfg.categories.dims(WINDOW_S).to_string()),
    ]
}

fn ingest<T: Scalar>(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let recs = cohort(cfg)?;
    let mut instances = Vec::new();
    for r in &recs {
        instances.extend(ingest_participant::<T>(r, cfg.categories)?);
    }
    let path = cfg.output.join("instances.csv");
    let table = InstanceTable {
        provenance: provenance_pairs(cfg, prov),
        instances,
    };
    write(&path, &table.to_text())?;
    println!(
        "{} instances from {} participants written to {}",
        table.instances.len(),
        recs.len(),
        path.display()
    );
    Ok(())
}

fn partition(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let scheme = partition_for(&cohort(cfg)?, cfg.task, cfg.partition, cfg.seed)?;
    write(
        &cfg.output.join("partition.toml"),
        &with_header(prov, &scheme.to_toml()?),
    )?;
    for (label, c) in &scheme.counts {
        println!("{label}: train {} validation {} test {}", c[0], c[1], c[2]);
    }
    Ok(())
}

fn synth<T: Scalar>(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let recs = cohort(cfg)?;
    let prep = pipeline::prepare::<T>(&recs, cfg, cfg.categories, cfg.partition)?;
    let seed = pipeline::run_seed(cfg.seed, cfg.categories, cfg.partition);
    let syn = pipeline::synthetic_data(&prep, &cfg.pipeline, seed)?;
    let instances = (0..syn.x.rows())
        .map(|i| DataInstance {
            participant_id: "synthetic".into(),
            window_index: i,
            features: syn.x.row(i).to_vec(),
            label: syn.y[i],
        })
        .collect();
    let mut pairs = provenance_pairs(cfg, prov);
    pairs.push(("components".into(), syn.selection.best.to_string()));
    pairs.push(("labeler".into(), syn.labeler.to_string()));
    write(
        &cfg.output.join("synthetic.csv"),
        &InstanceTable {
            provenance: pairs,
            instances,
        }
        .to_text(),
    )?;
    let mut summary = String::from("[components]\n");
    summary.push_str(&format!("selected = {}\n", syn.selection.best));
    for (n, s) in &syn.selection.scores {
        summary.push_str(&format!("score.{n} = {s}\n"));
    }
    summary.push_str(&format!("\n[labeler]\nselected = \"{}\"\n", syn.labeler));
    for (spec, acc) in &syn.labeler_scores {
        summary.push_str(&format!("\"{spec}\" = {acc}\n"));
    }
    summary.push_str(&format!(
        "\n[data]\nsmote_added = {}\nsynthetic = {}\n",
        prep.smote_added,
        syn.y.len()
    ));
    write(&cfg.output.join("synth.toml"), &with_header(prov, &summary))?;
    println!(
        "{} synthetic rows from {} components, labeled by {}",
        syn.y.len(),
        syn.selection.best,
        syn.labeler
    );
    Ok(())
}

fn train<T: Scalar>(cfg: &RunConfig, prov: &Provenance) -> Result<()> {
    let recs = cohort(cfg)?;
    let out = pipeline::run::<T>(&recs, cfg, cfg.categories, cfg.partition)?;
    let meta = CheckpointMeta {
        task: cfg.task,
        partition: cfg.partition,
        run_seed: out.run_seed,
        provenance: prov.clone(),
        best_val_accuracy: out.best_val_accuracy,
        history: out.history.clone(),
        config: cfg.to_toml()?,
    };
    let ck = Checkpoint::new(out.model, out.prepared.norm, cfg.categories, meta)?;
    let dir = &cfg.output;
    write(&dir.join("checkpoint.json"), &ck.to_json()?)?;
    write(
        &dir.join("report.txt"),
        &with_header(prov, &out.report.to_text()),
    )?;
    write(
        &dir.join("curve.csv"),
        &with_header(prov, &out.report.curve.to_csv()),
    )?;
    let log: String = out.history.iter().map(|h| h.log_line() + "\n").collect();
    write(&dir.join("history.log"), &with_header(prov, &log))?;
    write(
        &dir.join("config.toml"),
        &with_header(prov, &cfg.to_toml()?),
    )?;
    println!(
        "test accuracy {:.4}, params {}, flops {}",
        out.report.metrics.accuracy,
        out.report.cost.describe_params(),
        out.report.cost.describe_flops()
    );
    Ok(())
}

fn run_search<T: Scalar>(
    cfg: &RunConfig,
    prov: &Provenance,
    all: bool,
    subset_flag: bool,
    workers: usize,
) -> Result<()> {
    let recs = cohort(cfg)?;
    let subsets = if all {
        enumerate_subsets()
    } else if subset_flag {
        vec![cfg.categories]
    } else {
        configured_subsets(cfg)
    };
    let outcome = search::<T>(&recs, cfg, &subsets, workers)?;
    let text = outcome.to_text(cfg.search.top_k);
    write(&cfg.output.join("search.txt"), &with_header(prov, &text))?;
    write(
        &cfg.output.join("search.csv"),
        &with_header(prov, &outcome.to_csv()),
    )?;
    print!("{text}");
    Ok(())
}

fn evaluate<T: Scalar>(cfg: &RunConfig, prov: &Provenance, path: &Path) -> Result<()> {
    let ck = Checkpoint::<T>::load(path)?;
    let recs = cohort(cfg)?;
    let scheme = partition_for(
        &recs,
        ck.meta.task,
        ck.meta.partition,
        ck.meta.provenance.seed,
    )?;
    let [_, _, test] = build_splits::<T>(&recs, &scheme, ck.meta.task, ck.categories)?;
    let test = SplitData {
        x: normalize_apply(&ck.norm, &test.x)?,
        ..test
    };
    let report = evaluate_split(&ck.network, &test, cfg.pipeline.sweep_step_minutes)?;
    write(
        &cfg.output.join("evaluation.txt"),
        &with_header(prov, &report.to_text()),
    )?;
    write(
        &cfg.output.join("evaluation_curve.csv"),
        &with_header(prov, &report.curve.to_csv()),
    )?;
    print!("{}", report.curve.to_csv());
    println!("test accuracy {:.4}", report.metrics.accuracy);
    Ok(())
}

fn predict<T: Scalar>(ck_path: &Path, dir: &Path) -> Result<()> {
    let ck = Checkpoint::<T>::load(ck_path)?;
    let rec = read_participant(dir)?;
    let inst = ingest_participant::<T>(&rec, ck.categories)?;
    let dim = ck.categories.dims(WINDOW_S);
    let data: Vec<T> = inst
        .iter()
        .flat_map(|i| i.features.iter().copied())
        .collect();
    let x = normalize_apply(&ck.norm, &mhdeep::Matrix::from_vec(inst.len(), dim, data)?)?;
    let preds = ck.network.predict(&x)?;
    println!("window,prediction");
    for (i, p) in preds.iter().enumerate() {
        println!("{i},{p}");
    }
    let minutes = preds.len() as f64 * WINDOW_S as f64 / 60.0;
    let vote = patient_vote(&preds, minutes)?;
    println!(
        "# {}: vote {vote} ({}) over {} windows",
        rec.participant_id,
        if vote == 1 { "disorder" } else { "healthy" },
        preds.len()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(w) = cli.common.workers {
        if w == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        // fails only if a pool already exists, in which case the old bound stays
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    if let Command::Predict {
        checkpoint,
        participant,
    } = &cli.command
    {
        return match scalar_of(checkpoint)?.as_str() {
            "f32" => predict::<f32>(checkpoint, participant),
            _ => predict::<f64>(checkpoint, participant),
        };
    }
    let cfg = load_config(&cli.common)?;
    let prov = cfg.provenance()?;
    let workers = cli
        .common
        .workers
        .unwrap_or_else(rayon::current_num_threads);
    macro_rules! by_precision {
        ($f:ident ( $($a:expr),* )) => {
            match cfg.precision {
                Precision::F32 => $f::<f32>($($a),*),
                Precision::F64 => $f::<f64>($($a),*),
            }
        };
    }
    match &cli.command {
        Command::Simulate => simulate(&cfg, &prov),
        Command::Ingest => by_precision!(ingest(&cfg, &prov)),
        Command::Partition => partition(&cfg, &prov),
        Command::Synth => by_precision!(synth(&cfg, &prov)),
        Command::Train => by_precision!(train(&cfg, &prov)),
        Command::Search { all_subsets } => {
            by_precision!(run_search(
                &cfg,
                &prov,
                *all_subsets,
                cli.common.subset.is_some(),
                workers
            ))
        }
        Command::Evaluate { checkpoint } => match scalar_of(checkpoint)?.as_str() {
            "f32" => evaluate::<f32>(&cfg, &prov, checkpoint),
            _ => evaluate::<f64>(&cfg, &prov, checkpoint),
        },
        Command::Predict { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
