//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line to the
//! real stdout (not the captured one) before asserting.

use std::fmt::Display;
use std::io::Write;
use std::sync::OnceLock;

use mhdeep::checkpoint::{Checkpoint, CheckpointMeta};
use mhdeep::config::RunConfig;
use mhdeep::dataset::smote;
use mhdeep::growprune::{prune, synthesize, GrowPruneConfig, Labeled};
use mhdeep::ingest::{category_dims, CategorySet, SensorId, Source};
use mhdeep::network::{init_mlp, train_epochs, MaskedMlp, TrainConfig};
use mhdeep::pipeline::{self, RunOutput};
use mhdeep::search::search;
use mhdeep::simulate::{generate_cohort, ClassShift};
use mhdeep::synth::{fit_gmm, select_components, GmmOptions};
use mhdeep::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(id: u32, name: &str, pass: bool, detail: impl Display) {
    let line = format!(
        "acceptance {id:>2} {}: {name} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn gaussian_blobs(
    centers: &[Vec<f64>],
    per: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> (Matrix<f64>, Vec<usize>) {
    let dim = centers[0].len();
    let mut data = Vec::with_capacity(centers.len() * per * dim);
    let mut comp = Vec::new();
    for (c, mu) in centers.iter().enumerate() {
        for _ in 0..per {
            data.extend(
                mu.iter()
                    .map(|m| m + std * rng.sample::<f64, _>(StandardNormal)),
            );
            comp.push(c);
        }
    }
    (Matrix::from_vec(comp.len(), dim, data).unwrap(), comp)
}

#[test]
fn criterion_01_feature_dimensions() {
    let dims = |src: Option<Source>| {
        category_dims(
            SensorId::ALL
                .into_iter()
                .filter(|s| src.is_none_or(|x| s.source() == x)),
        )
        .unwrap()
    };
    let (all, watch, phone) = (
        dims(None),
        dims(Some(Source::Watch)),
        dims(Some(Source::Phone)),
    );
    verdict(
        1,
        "feature dimensions",
        (all, watch, phone) == (2325, 1575, 750),
        format!("all {all}, watch {watch}, phone {phone}; expected 2325, 1575, 750"),
    );
}

fn mean_loss(net: &MaskedMlp<f64>, x: &Matrix<f64>, y: &[u8]) -> f64 {
    net.loss(x, y).unwrap()
}

#[test]
fn criterion_02_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = init_mlp::<f64>(&[10, 8, 4, 2], 2).unwrap();
    for l in &mut net.layers {
        let n = l.mask.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n / 2] {
            l.mask[i] = 0;
        }
        l.apply_mask();
        for b in &mut l.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let x = Matrix::from_vec(
        20,
        10,
        (0..200).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let y: Vec<u8> = (0..20).map(|_| rng.gen_range(0..2)).collect();
    let grads = net.backward(&x, &y).unwrap();
    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    let mut masked_nonzero = 0;
    let mut checked = 0;
    let rel = |a: f64, b: f64| {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    };
    for li in 0..net.layers.len() {
        for i in 0..net.layers[li].mask.len() {
            let g = grads.weights[li].as_slice()[i];
            if net.layers[li].mask[i] == 0 {
                masked_nonzero += usize::from(g != 0.0);
                continue;
            }
            let orig = net.layers[li].weights.as_slice()[i];
            let mut probe = net.clone();
            probe.layers[li].weights.as_mut_slice()[i] = orig + eps;
            let up = mean_loss(&probe, &x, &y);
            probe.layers[li].weights.as_mut_slice()[i] = orig - eps;
            let down = mean_loss(&probe, &x, &y);
            max_rel = max_rel.max(rel(g, (up - down) / (2.0 * eps)));
            checked += 1;
        }
        for i in 0..net.layers[li].bias.len() {
            let g = grads.bias[li][i];
            let mut probe = net.clone();
            probe.layers[li].bias[i] += eps;
            let up = mean_loss(&probe, &x, &y);
            probe.layers[li].bias[i] -= 2.0 * eps;
            let down = mean_loss(&probe, &x, &y);
            max_rel = max_rel.max(rel(g, (up - down) / (2.0 * eps)));
            checked += 1;
        }
    }
    verdict(
        2,
        "gradient check",
        max_rel < 1e-4 && masked_nonzero == 0,
        format!("{checked} entries, max relative error {max_rel:.2e} < 1e-4, {masked_nonzero} non-zero masked gradients"),
    );
}

fn monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] - w[0] >= -1e-9)
}

#[test]
fn criterion_03_em_recovery() {
    let truth = [vec![0.0, 0.0], vec![5.0, 5.0]];
    let mut worst = 0.0f64;
    let mut all_monotone = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (x, _) = gaussian_blobs(&truth, 1000, 1.0, &mut rng);
        let fit = fit_gmm(&x, 2, seed, &GmmOptions::default()).unwrap();
        all_monotone &= monotone(&fit.history);
        let m = &fit.model.means;
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let straight = d(m.row(0), &truth[0]).max(d(m.row(1), &truth[1]));
        let swapped = d(m.row(0), &truth[1]).max(d(m.row(1), &truth[0]));
        worst = worst.max(straight.min(swapped));
    }
    verdict(
        3,
        "EM monotone and recovers means",
        all_monotone && worst <= 0.15,
        format!("log-likelihood non-decreasing: {all_monotone}; worst mean error {worst:.4} <= 0.15 over 5 seeds"),
    );
}

#[test]
fn criterion_04_component_selection() {
    let centers = [
        vec![0.0, 0.0, 0.0],
        vec![8.0, 0.0, 0.0],
        vec![0.0, 8.0, 0.0],
    ];
    let mut hits = 0;
    let mut picks = Vec::new();
    let mut all_monotone = true;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (train, _) = gaussian_blobs(&centers, 200, 1.0, &mut rng);
        let (val, _) = gaussian_blobs(&centers, 100, 1.0, &mut rng);
        let sel = select_components(
            &train,
            &val,
            &[1, 2, 3, 4, 5, 6],
            seed,
            &GmmOptions::default(),
        )
        .unwrap();
        for n in 1..=6 {
            all_monotone &= monotone(
                &fit_gmm(&train, n, seed, &GmmOptions::default())
                    .unwrap()
                    .history,
            );
        }
        hits += usize::from(sel.best == 3);
        picks.push(sel.best);
    }
    verdict(
        4,
        "component selection",
        hits >= 8 && all_monotone,
        format!("selected 3 in {hits}/10 seeds (need >= 8), picks {picks:?}; every fit monotone: {all_monotone}"),
    );
}

#[test]
fn criterion_05_prune_exactness() {
    let sizes = [37, 21, 13, 2];
    let orig = init_mlp::<f64>(&sizes, 5).unwrap();
    let mut net = orig.clone();
    prune(&mut net, 0.5).unwrap();
    let mut counts_ok = true;
    let mut order_ok = true;
    for (l, o) in net.layers.iter().zip(&orig.layers) {
        let mn = l.mask.len();
        counts_ok &= l.active_weights() == mn - mn / 2;
        let w = o.weights.as_slice();
        let min_active = (0..mn)
            .filter(|&i| l.mask[i] == 1)
            .map(|i| w[i].abs())
            .fold(f64::INFINITY, f64::min);
        let max_pruned = (0..mn)
            .filter(|&i| l.mask[i] == 0)
            .map(|i| w[i].abs())
            .fold(0.0, f64::max);
        order_ok &= min_active >= max_pruned;
    }
    let masks: Vec<Vec<u8>> = net.layers.iter().map(|l| l.mask.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let x = Matrix::from_vec(
        200,
        37,
        (0..200 * 37).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let y: Vec<u8> = (0..200).map(|i| u8::from(x.row(i)[0] > 0.0)).collect();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 20,
        shuffle_seed: 5,
    };
    train_epochs(&mut net, &x, &y, &cfg).unwrap();
    let holds = net.layers.iter().all(|l| {
        l.weights
            .as_slice()
            .iter()
            .zip(&l.mask)
            .all(|(w, m)| *m == 1 || *w == 0.0)
    }) && net
        .layers
        .iter()
        .map(|l| l.mask.clone())
        .collect::<Vec<_>>()
        == masks;
    verdict(
        5,
        "prune exactness",
        counts_ok && order_ok && holds,
        format!("active = MN - floor(MN/2) per layer: {counts_ok}; min active >= max pruned: {order_ok}; W*Mask = W after 20 epochs: {holds}"),
    );
}

#[test]
fn criterion_06_grow_prune_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let centers: Vec<Vec<f64>> = vec![
        vec![0.0; 20],
        (0..20).map(|i| if i < 4 { 0.6 } else { 0.0 }).collect(),
    ];
    let (xt, ct) = gaussian_blobs(&centers, 300, 1.0, &mut rng);
    let (xv, cv) = gaussian_blobs(&centers, 100, 1.0, &mut rng);
    let yt: Vec<u8> = ct.iter().map(|&c| c as u8).collect();
    let yv: Vec<u8> = cv.iter().map(|&c| c as u8).collect();
    let cfg = GrowPruneConfig {
        num_iterations: 5,
        epochs_per_change: 5,
        initial_lr: 0.05,
        ..Default::default()
    };
    let net = init_mlp::<f64>(&[20, 32, 16, 2], 6).unwrap();
    let out = synthesize(
        net,
        Labeled::new(&xt, &yt).unwrap(),
        Labeled::new(&xv, &yv).unwrap(),
        &cfg,
        6,
    )
    .unwrap();
    let max = out
        .history
        .iter()
        .map(|h| h.val_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let recomputed = out.best.accuracy(&xv, &yv).unwrap();
    verdict(
        6,
        "grow-and-prune contract",
        out.history.len() == 6 && out.best_val_accuracy == max && recomputed == max,
        format!(
            "{} evaluations (need 6); returned {:.4}, recomputed {recomputed:.4}, history max {max:.4}",
            out.history.len(),
            out.best_val_accuracy
        ),
    );
}

fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    ap.iter()
        .zip(&ab)
        .map(|(v, u)| (v - t * u).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn criterion_07_smote_geometry_and_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, dim, k) = (30, 5, 5);
    let minority = Matrix::from_vec(
        n,
        dim,
        (0..n * dim).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let out = smote(&minority, 100, k, 7).unwrap();
    let mut worst = 0.0f64;
    let mut outside_knn = 0;
    for (s, o) in out.origins.iter().enumerate() {
        let p = out.samples.row(n + s);
        worst = worst.max(segment_distance(
            p,
            minority.row(o.base),
            minority.row(o.neighbor),
        ));
        let mut by_dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != o.base)
            .map(|j| {
                (
                    segment_distance(minority.row(j), minority.row(o.base), minority.row(o.base)),
                    j,
                )
            })
            .collect();
        by_dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        outside_knn += usize::from(!by_dist[..k].iter().any(|&(_, j)| j == o.neighbor));
    }

    let mut cfg = RunConfig::new(7);
    cfg.simulate.healthy = 10;
    cfg.simulate.bipolar = 5;
    cfg.simulate.recording_minutes = 3.0;
    cfg.resolve();
    let cohort = generate_cohort(&cfg.simulate).unwrap();
    let prep =
        pipeline::prepare::<f64>(&cohort, &cfg, CategorySet::from_bits(0b101).unwrap(), 1).unwrap();
    let (c0, c1) = (prep.train.count(0), prep.train.count(1));
    verdict(
        7,
        "SMOTE geometry and balance",
        out.samples.rows() == 100 && worst <= 1e-9 && outside_knn == 0 && c0 == c1 && prep.smote_added > 0,
        format!("max distance to parent segment {worst:.1e} <= 1e-9; {outside_knn} neighbours outside k-NN; post-SMOTE train counts {c0}/{c1}"),
    );
}

fn e2e_config(shift: f64) -> RunConfig {
    let mut cfg = RunConfig::new(2024);
    cfg.simulate.healthy = 10;
    cfg.simulate.bipolar = 10;
    cfg.simulate.recording_minutes = 30.0;
    cfg.simulate.class_shift = ClassShift::Uniform(shift);
    cfg.categories = CategorySet::ALL;
    cfg.resolve();
    cfg
}

fn e2e_run(shift: f64) -> RunOutput<f64> {
    let cfg = e2e_config(shift);
    let cohort = generate_cohort(&cfg.simulate).unwrap();
    pipeline::run::<f64>(&cohort, &cfg, cfg.categories, cfg.partition).unwrap()
}

fn separable_run() -> &'static RunOutput<f64> {
    static RUN: OnceLock<RunOutput<f64>> = OnceLock::new();
    RUN.get_or_init(|| e2e_run(2.0))
}

#[test]
fn criterion_08_end_to_end() {
    let sep = separable_run();
    let acc = sep.report.metrics.accuracy;
    let curve = &sep.report.curve;
    let span = curve.points.last().map_or(0.0, |p| p.minutes);
    let sat = curve.saturation;
    let saturated = sat.is_some_and(|s| s.accuracy == 1.0 && s.minutes <= span)
        && curve.points.last().is_some_and(|p| p.accuracy == 1.0);
    let null = e2e_run(0.0);
    let null_acc = null.report.metrics.accuracy;
    verdict(
        8,
        "end-to-end desk-scale run",
        acc >= 0.95 && saturated && (0.4..=0.6).contains(&null_acc),
        format!(
            "2 sigma: instance accuracy {acc:.4} >= 0.95, patient accuracy saturates at 100% at {} of {span} min: {saturated}; 0 sigma: instance accuracy {null_acc:.4} in [0.4, 0.6]",
            sat.map_or("n/a".to_string(), |s| format!("{} min", s.minutes))
        ),
    );
}

#[test]
fn criterion_09_vote_window_arithmetic() {
    let curve = &separable_run().report.curve;
    let sizes: Vec<usize> = curve.points.iter().map(|p| p.instances).collect();
    let steps_ok = curve.step_minutes == 2.0
        && sizes.len() > 1
        && sizes[0] == 8
        && sizes.windows(2).all(|w| w[1] - w[0] == 8);
    verdict(
        9,
        "vote-window arithmetic",
        steps_ok,
        format!("logged window sizes {sizes:?}"),
    );
}

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(seed);
    cfg.simulate.healthy = 5;
    cfg.simulate.bipolar = 5;
    cfg.simulate.recording_minutes = 4.0;
    cfg.pipeline.gmm_candidates = vec![1, 2, 3];
    cfg.pipeline.synthetic_count = 400;
    cfg.pipeline.hidden_layers = Some(vec![16, 8]);
    cfg.pipeline.growprune = GrowPruneConfig {
        num_iterations: 2,
        epochs_per_change: 3,
        pretrain_epochs: 3,
        warmup_epochs: 3,
        ..Default::default()
    };
    cfg.search.partitions = vec![1, 2];
    cfg.resolve();
    cfg
}

#[test]
fn criterion_10_reproducibility() {
    let cfg = small_config(10);
    let cohort = generate_cohort(&cfg.simulate).unwrap();
    let cats = CategorySet::from_bits(0b0000_0101).unwrap();
    let artifacts = || {
        let out = pipeline::run::<f64>(&cohort, &cfg, cats, 2).unwrap();
        let meta = CheckpointMeta {
            task: cfg.task,
            partition: 2,
            run_seed: out.run_seed,
            provenance: cfg.provenance().unwrap(),
            best_val_accuracy: out.best_val_accuracy,
            history: out.history.clone(),
            config: cfg.to_toml().unwrap(),
        };
        let ck = Checkpoint::new(out.model, out.prepared.norm, cats, meta).unwrap();
        (
            ck.to_json().unwrap(),
            out.report.to_text(),
            out.report.curve.to_csv(),
        )
    };
    let single_identical = artifacts() == artifacts();

    let subsets: Vec<CategorySet> = [0b0000_0100u8, 0b0000_0101, 0b0100_0000]
        .iter()
        .map(|&b| CategorySet::from_bits(b).unwrap())
        .collect();
    let one = search::<f64>(&cohort, &cfg, &subsets, 1).unwrap();
    let many = search::<f64>(&cohort, &cfg, &subsets, 3).unwrap();
    let merged_identical =
        one == many && one.to_csv() == many.to_csv() && one.to_text(3) == many.to_text(3);

    let solo = search::<f64>(&cohort, &cfg, &[cats], 1).unwrap();
    let direct = pipeline::run::<f64>(&cohort, &cfg, cats, 1).unwrap();
    let equivalent = solo.ranked.len() == 1 && solo.ranked[0].partitions[0].report == direct.report;
    verdict(
        10,
        "reproducibility",
        single_identical && merged_identical && equivalent,
        format!("repeat run byte-identical: {single_identical}; 1 vs 3 workers identical ranking: {merged_identical}; single-subset search equals direct run: {equivalent}"),
    );
}

#[test]
fn criterion_11_parameter_accounting() {
    let net = init_mlp::<f64>(&[2325, 256, 128, 128, 2], 11).unwrap();
    let cost = net.cost();
    let desc = cost.describe_params();
    verdict(
        11,
        "parameter accounting",
        net.count_params() == 645_122
            && cost.param_compression() == 1.0
            && desc.ends_with("(1.0x)"),
        format!(
            "{} params (expected 645122), reported as {desc}",
            net.count_params()
        ),
    );
}
