//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a single `criterion N ... PASS|FAIL` line.
//!
//! Run with `cargo test -p lmturk-core --test acceptance -- --nocapture`.

use std::collections::{BTreeSet, HashSet};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use lmturk_core::acquisition::{acquire_entropy, acquire_least_confident};
use lmturk_core::aggregation::{aggregate, compute_weights};
use lmturk_core::data_model::{argmax_tiebreak, entropy, kl_divergence, sample_few_shot, softmax};
use lmturk_core::harness::experiment::{prepare_data, run_experiment_on, PreparedData};
use lmturk_core::harness::{CommitteeSource, ExperimentConfig, RunLog};
use lmturk_core::orchestrator::{run_loop, Seeds};
use lmturk_core::quality::{instance_threshold, instance_weight};
use lmturk_core::student::{gradient, objective, train_student};
use lmturk_core::workers::{SimulatedWorker, SimulatedWorkerSpec};
use lmturk_core::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCHMARK: &str = include_str!("../../../configs/benchmark.toml");

fn verdict(id: u32, title: &str, pass: bool, detail: impl AsRef<str>) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} ({title}): {status} {}", detail.as_ref());
    assert!(pass, "criterion {id} ({title}) failed: {}", detail.as_ref());
}

/// Criteria run one at a time so their runtime budgets measure only themselves.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

// ---------------------------------------------------------------------------
// Independent oracles.

fn oracle_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn oracle_softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn oracle_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_aggregation_matches_oracles() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA66);
    let mut mismatches = Vec::new();
    let mut degenerate_checked = 0;
    for trial in 0..1_000 {
        let k = rng.random_range(1..=5);
        let n = rng.random_range(2..=5);
        let integer = rng.random_bool(0.5);
        let logits: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| if integer { rng.random_range(-1..=1) as f64 } else { rng.random_range(-3.0..3.0) })
                    .collect()
            })
            .collect();
        let scores: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { (rng.random_range(0..=10) as f64) / 10.0 })
            .collect();
        let annotations: Vec<Annotation> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| Annotation::from_logits(format!("w{i}"), l.clone()).unwrap())
            .collect();
        let profiles: Vec<WorkerProfile> = scores.iter().enumerate().map(|(i, &s)| WorkerProfile::new(format!("w{i}"), s)).collect();

        // MajorityVoting
        let labels: Vec<usize> = logits.iter().map(|l| oracle_argmax(l)).collect();
        let mut counts = vec![0.0; n];
        for &l in &labels {
            counts[l] += 1.0;
        }
        let mv_dist: Vec<f64> = counts.iter().map(|c| c / k as f64).collect();
        let mv = aggregate(AggregationStrategy::MajorityVoting, &annotations, None).unwrap();
        if mv.label != oracle_argmax(&counts) || !close(&mv.dist, &mv_dist, 1e-9) || (mv.entropy - oracle_entropy(&mv_dist)).abs() > 1e-9 {
            mismatches.push(format!("trial {trial} majority"));
        }

        // LogitVoting
        let mean: Vec<f64> = (0..n).map(|j| logits.iter().map(|l| l[j]).sum::<f64>() / k as f64).collect();
        let lv = aggregate(AggregationStrategy::LogitVoting, &annotations, None).unwrap();
        let lv_dist = oracle_softmax(&mean);
        if lv.label != oracle_argmax(&mean) || !close(&lv.dist, &lv_dist, 1e-9) || (lv.entropy - oracle_entropy(&lv_dist)).abs() > 1e-9 {
            mismatches.push(format!("trial {trial} logit"));
        }

        let total: f64 = scores.iter().sum();
        if total == 0.0 {
            degenerate_checked += 1;
            if aggregate(AggregationStrategy::WeightedLogitVoting, &annotations, Some(&profiles)).is_ok() {
                mismatches.push(format!("trial {trial} weighted accepted all-zero scores"));
            }
        } else {
            // WeightedLogitVoting
            let sum: Vec<f64> = (0..n).map(|j| (0..k).map(|i| scores[i] / total * logits[i][j]).sum()).collect();
            let wv = aggregate(AggregationStrategy::WeightedLogitVoting, &annotations, Some(&profiles)).unwrap();
            let wv_dist = oracle_softmax(&sum);
            if wv.label != oracle_argmax(&sum) || !close(&wv.dist, &wv_dist, 1e-9) {
                mismatches.push(format!("trial {trial} weighted"));
            }
        }

        // BestWorker
        let mut best = 0;
        for i in 1..k {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        let bw = aggregate(AggregationStrategy::BestWorker, &annotations, Some(&profiles)).unwrap();
        if bw.label != labels[best] || !close(&bw.dist, &oracle_softmax(&logits[best]), 1e-9) {
            mismatches.push(format!("trial {trial} best-worker"));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "aggregation oracles",
        mismatches.is_empty() && within(elapsed, 5),
        format!(
            "1000 committees, {} mismatches {:?}, {degenerate_checked} all-zero-score committees rejected, {:.2}s",
            mismatches.len(),
            mismatches.iter().take(5).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------

fn random_sparse(rng: &mut ChaCha8Rng, dim: u32) -> SparseVector {
    let nnz = rng.random_range(1..=4);
    SparseVector::from_pairs((0..nnz).map(|_| (rng.random_range(0..dim), rng.random_range(0.0..1.0))))
}

#[test]
fn criterion_2_acquisition_matches_oracles() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC0);
    let dim = 16u32;
    let featurizer = FeaturizerConfig { dimension: dim as usize, ..Default::default() };
    let mut mismatches = Vec::new();
    for trial in 0..1_000 {
        let n = rng.random_range(2..=5);
        let u = rng.random_range(1..=100);
        let b = rng.random_range(1..=u + 5);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let bias: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = StudentModel::from_parameters(LabelSet::numbered(n).unwrap(), featurizer.clone(), &rows, bias.clone()).unwrap();

        let mut ids: Vec<usize> = (0..u).collect();
        ids.shuffle(&mut rng);
        let mut features: Vec<SparseVector> = Vec::with_capacity(u);
        for i in 0..u {
            let f = if i > 0 && rng.random_bool(0.2) {
                features[rng.random_range(0..i)].clone()
            } else {
                random_sparse(&mut rng, dim)
            };
            features.push(f);
        }
        let pool: Vec<Example> = (0..u).map(|i| Example::new(format!("x{:03}", ids[i]), features[i].clone())).collect();

        let logits: Vec<Vec<f64>> = features
            .iter()
            .map(|x| (0..n).map(|c| bias[c] + x.iter().map(|(f, v)| rows[c][f as usize] * v).sum::<f64>()).collect())
            .collect();
        let take = b.min(u);
        let pick = |mut order: Vec<usize>| -> BTreeSet<String> {
            order.truncate(take);
            order.into_iter().map(|i| pool[i].id.clone()).collect()
        };
        let entropies: Vec<f64> = logits.iter().map(|l| oracle_entropy(&oracle_softmax(l))).collect();
        let mut by_entropy: Vec<usize> = (0..u).collect();
        by_entropy.sort_by(|&a, &c| entropies[c].total_cmp(&entropies[a]).then(pool[a].id.cmp(&pool[c].id)));
        let maxes: Vec<f64> = logits.iter().map(|l| l.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut by_max: Vec<usize> = (0..u).collect();
        by_max.sort_by(|&a, &c| maxes[a].total_cmp(&maxes[c]).then(pool[a].id.cmp(&pool[c].id)));

        let got = |s: lmturk_core::Selection| -> (BTreeSet<String>, bool) {
            (s.indices.iter().map(|&i| pool[i].id.clone()).collect(), s.truncated)
        };
        let (e_set, e_trunc) = got(acquire_entropy(&model, &pool, b).unwrap());
        let (l_set, l_trunc) = got(acquire_least_confident(&model, &pool, b).unwrap());
        if e_set != pick(by_entropy) || e_trunc != (b > u) {
            mismatches.push(format!("trial {trial} entropy"));
        }
        if l_set != pick(by_max) || l_trunc != (b > u) {
            mismatches.push(format!("trial {trial} least-confident"));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "acquisition oracles",
        mismatches.is_empty() && within(elapsed, 5),
        format!("1000 pools, {} mismatches {:?}, {:.2}s", mismatches.len(), mismatches.iter().take(5).collect::<Vec<_>>(), elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------

fn nonzero_uniform(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(0.1..1.0);
    if rng.random_bool(0.5) { magnitude } else { -magnitude }
}

#[test]
fn criterion_3_gradients_match_finite_differences() {
    let _guard = exclusive();
    let start = Instant::now();
    let h = 1e-5;
    let dim = 8usize;
    let featurizer = FeaturizerConfig { dimension: dim, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut worst = [0.0f64; 2];
    let mut failures = 0;
    for (m, loss) in [LossMode::HardCe, LossMode::SoftKl].into_iter().enumerate() {
        for _ in 0..100 {
            let n = rng.random_range(2..=5);
            let labels = LabelSet::numbered(n).unwrap();
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| nonzero_uniform(&mut rng)).collect()).collect();
            let bias: Vec<f64> = (0..n).map(|_| nonzero_uniform(&mut rng)).collect();
            let batch: Vec<TrainingItem> = (0..rng.random_range(1..=6))
                .map(|i| {
                    let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..1.0) }).collect();
                    let total: f64 = raw.iter().sum::<f64>().max(1e-3);
                    let mut dist: Vec<f64> = raw.iter().map(|r| r / total).collect();
                    if dist.iter().all(|&p| p == 0.0) {
                        dist[0] = 1.0;
                    }
                    let agg = AggregatedLabel::from_dist(dist).unwrap();
                    let ex = Example::new(format!("i{i}"), random_sparse(&mut rng, dim as u32));
                    let mut item = TrainingItem::annotated(ex, agg, ItemSource::Worker);
                    item.weight = rng.random_range(0.0..1.0);
                    item
                })
                .collect();
            let cfg = TrainConfig {
                loss,
                use_weights: rng.random_bool(0.5),
                l2: [0.0, 1e-2, 1e-1][rng.random_range(0..3)],
                ..Default::default()
            };
            let model = StudentModel::from_parameters(labels.clone(), featurizer.clone(), &rows, bias.clone()).unwrap();
            let grad = gradient(&model, &batch, &cfg);

            let active: Vec<u32> = batch.iter().flat_map(|it| it.example.features.indices().to_vec()).collect();
            let label = rng.random_range(0..n);
            let probe_bias = rng.random_bool(0.2);
            let feature = if rng.random_bool(0.8) { active[rng.random_range(0..active.len())] as usize } else { rng.random_range(0..dim) };
            let shifted = |delta: f64| {
                let (mut r, mut b) = (rows.clone(), bias.clone());
                if probe_bias {
                    b[label] += delta;
                } else {
                    r[label][feature] += delta;
                }
                let m = StudentModel::from_parameters(labels.clone(), featurizer.clone(), &r, b).unwrap();
                objective(&m, &batch, &cfg)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = if probe_bias { grad.bias()[label] } else { grad.weight(&model, label, feature) };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst[m] = worst[m].max(rel);
            if rel >= 1e-4 {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "finite-difference gradients",
        failures == 0 && within(elapsed, 30),
        format!(
            "100 probes per loss, max relative error hard_ce {:.2e} soft_kl {:.2e}, {failures} over 1e-4, {:.2}s",
            worst[0],
            worst[1],
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Statistical runs on the synthetic benchmark.

fn benchmark() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(BENCHMARK).expect("shipped benchmark config parses")
}

fn benchmark_data() -> &'static PreparedData {
    static DATA: OnceLock<PreparedData> = OnceLock::new();
    DATA.get_or_init(|| prepare_data(&benchmark()).unwrap())
}

/// Test-metric curve per repetition.
fn curves(config: &ExperimentConfig) -> (Vec<Vec<f64>>, RunLog) {
    let out = run_experiment_on(config, benchmark_data(), CommitteeSource::Simulated).unwrap();
    assert!(out.log.all_completed(), "{:?}", out.log.repetitions);
    let curves = (0..config.repetitions).map(|r| out.log.repetition(r).map(|e| e.test_metric).collect()).collect();
    (curves, out.log)
}

fn finals(curves: &[Vec<f64>]) -> Vec<f64> {
    curves.iter().map(|c| *c.last().unwrap()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

struct Grid {
    al: Vec<Vec<f64>>,
    lmturk: Vec<Vec<f64>>,
    st: Vec<Vec<f64>>,
    lmturk_random: Vec<Vec<f64>>,
    elapsed: Duration,
}

fn scheme_grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let start = Instant::now();
        benchmark_data();
        let run = |scheme: Scheme, acquisition: AcquisitionKind| {
            let mut cfg = benchmark();
            cfg.loop_config.scheme = scheme;
            cfg.loop_config.acquisition = acquisition;
            curves(&cfg).0
        };
        Grid {
            al: run(Scheme::ActiveLearningGold, AcquisitionKind::Entropy),
            lmturk: run(Scheme::LmTurk, AcquisitionKind::Entropy),
            st: run(Scheme::SelfTraining, AcquisitionKind::Entropy),
            lmturk_random: run(Scheme::LmTurk, AcquisitionKind::Random),
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_4_scheme_ordering() {
    let _guard = exclusive();
    let g = scheme_grid();
    let (al, lm, st) = (finals(&g.al), finals(&g.lmturk), finals(&g.st));
    let ordered = (0..al.len()).filter(|&r| al[r] >= lm[r] && lm[r] >= st[r]).count();
    let gap = mean(&lm) - mean(&st);
    verdict(
        4,
        "scheme ordering",
        ordered >= 4 && gap >= 0.02 && within(g.elapsed, 600),
        format!(
            "AL >= LMTurk >= ST in {ordered}/5; mean LMTurk - ST = {:.2} points; AL [{}] LMTurk [{}] ST [{}]; grid {:.0}s",
            100.0 * gap,
            fmt(&al),
            fmt(&lm),
            fmt(&st),
            g.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_entropy_beats_random() {
    let _guard = exclusive();
    let g = scheme_grid();
    let reached: Vec<Option<usize>> = (0..g.lmturk.len())
        .map(|r| {
            let target = g.lmturk_random[r][10];
            g.lmturk[r].iter().position(|&v| v >= target)
        })
        .collect();
    let ok = reached.iter().filter(|j| j.is_some_and(|j| j <= 8)).count();
    verdict(
        5,
        "acquisition benefit",
        ok >= 4,
        format!(
            "Entropy reaches Random's j=10 accuracy by j <= 8 in {ok}/5; first iterations {:?}; Random j=10 [{}]",
            reached,
            fmt(&g.lmturk_random.iter().map(|c| c[10]).collect::<Vec<_>>())
        ),
    );
}

#[test]
fn criterion_6_soft_labels_help_on_five_classes() {
    let _guard = exclusive();
    let start = Instant::now();
    let run = |loss: LossMode| {
        let mut cfg = benchmark();
        cfg.loop_config.aggregation = AggregationStrategy::WeightedLogitVoting;
        cfg.loop_config.train.loss = loss;
        finals(&curves(&cfg).0)
    };
    let soft = run(LossMode::SoftKl);
    let hard = run(LossMode::HardCe);
    let elapsed = start.elapsed();
    verdict(
        6,
        "KL distillation",
        mean(&soft) >= mean(&hard) && within(elapsed, 600),
        format!(
            "mean soft_kl {:.4} vs hard_ce {:.4}; soft [{}] hard [{}]; {:.0}s",
            mean(&soft),
            mean(&hard),
            fmt(&soft),
            fmt(&hard),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_thresholding_trade_off() {
    let _guard = exclusive();
    let start = Instant::now();
    let gold = {
        let cfg = benchmark();
        cfg.loop_config.shots * 5
    };
    let mut means = Vec::new();
    let mut count_errors = 0;
    let mut finals_by_tau = Vec::new();
    for tenths in [1usize, 5, 10] {
        let mut cfg = benchmark();
        cfg.workers.accuracies = vec![0.65; 5];
        cfg.workers.class_error_weights = None;
        cfg.loop_config.tau = Tau::new(tenths as f64 / 10.0).unwrap();
        let (c, log) = curves(&cfg);
        for e in &log.iterations {
            let worker_items = e.train_size - gold;
            let expected = gold + (worker_items * tenths).div_ceil(10);
            if e.kept_size != expected {
                count_errors += 1;
            }
        }
        let f = finals(&c);
        means.push(mean(&f));
        finals_by_tau.push(f);
    }
    let elapsed = start.elapsed();
    let minimum = means[0] <= means[1] && means[0] <= means[2];
    verdict(
        7,
        "thresholding trade-off",
        minimum && count_errors == 0 && within(elapsed, 600),
        format!(
            "mean final accuracy tau=0.1 {:.4}, tau=0.5 {:.4}, tau=1.0 {:.4}; {count_errors} kept-count mismatches; {:.0}s",
            means[0],
            means[1],
            means[2],
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_byte_identical_logs() {
    let _guard = exclusive();
    let start = Instant::now();
    let mut cfg = benchmark();
    cfg.repetitions = 2;
    let once = || {
        let data = prepare_data(&cfg).unwrap();
        run_experiment_on(&cfg, &data, CommitteeSource::Simulated).unwrap().log.to_ndjson_string().unwrap()
    };
    let (a, b) = (once(), once());
    let serial = {
        let mut c = cfg.clone();
        c.parallelism = 1;
        let data = prepare_data(&c).unwrap();
        let mut log = run_experiment_on(&c, &data, CommitteeSource::Simulated).unwrap().log;
        log.config.parallelism = cfg.parallelism;
        log.to_ndjson_string().unwrap()
    };
    let elapsed = start.elapsed();
    verdict(
        8,
        "determinism",
        a == b && a == serial && within(elapsed, 60),
        format!("{} bytes, identical across runs: {}, serial matches parallel: {}, {:.0}s", a.len(), a == b, a == serial, elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// Invariant suite.

const CASES: u32 = 500;

fn check<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new_with_rng(
        RunnerConfig { cases: CASES, failure_persistence: None, ..RunnerConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn logit_vec(n: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-20.0f64..20.0, n)
}

fn dist_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let total: f64 = v.iter().sum();
        if total == 0.0 {
            let mut d = vec![0.0; v.len()];
            d[0] = 1.0;
            d
        } else {
            v.iter().map(|x| x / total).collect()
        }
    })
}

fn committee_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=5, 2usize..=5).prop_flat_map(|(k, n)| {
        (
            proptest::collection::vec(proptest::collection::vec((-3i32..=3).prop_map(f64::from), n), k),
            proptest::collection::vec(0.05f64..1.0, k),
        )
    })
}

fn annotations(logits: &[Vec<f64>]) -> Vec<Annotation> {
    logits.iter().enumerate().map(|(i, l)| Annotation::from_logits(format!("w{i}"), l.clone()).unwrap()).collect()
}

fn profiles(scores: &[f64]) -> Vec<WorkerProfile> {
    scores.iter().enumerate().map(|(i, &s)| WorkerProfile::new(format!("w{i}"), s)).collect()
}

fn items_strategy() -> impl Strategy<Value = Vec<TrainingItem>> {
    proptest::collection::vec((any::<bool>(), 0u8..6, dist_vec(3)), 0..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (gold, bucket, dist))| {
                let ex = Example::new(format!("e{i:02}"), SparseVector::default());
                if gold {
                    TrainingItem::gold(ex, bucket as usize % 3, 3)
                } else {
                    let mut agg = AggregatedLabel::from_dist(dist).unwrap();
                    agg.entropy = f64::from(bucket) * 0.1;
                    TrainingItem::annotated(ex, agg, ItemSource::Worker)
                }
            })
            .collect()
    })
}

fn data_model_invariants() -> Vec<Result<(), String>> {
    vec![
        check("entropy of softmax is shift invariant", (logit_vec(2..6), -50.0f64..50.0), |(v, c)| {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = entropy(&softmax(&v).unwrap()).unwrap();
            let b = entropy(&softmax(&shifted).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            Ok(())
        }),
        check("softmax preserves argmax", logit_vec(1..8), |v| {
            prop_assert_eq!(argmax_tiebreak(&softmax(&v).unwrap()).unwrap(), argmax_tiebreak(&v).unwrap());
            Ok(())
        }),
        check("kl divergence is non-negative", (2usize..6).prop_flat_map(|n| (dist_vec(n), dist_vec(n))), |(p, q)| {
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            Ok(())
        }),
        check("few-shot samples are class balanced", (2usize..5, 1usize..4, 0usize..4, any::<u64>()), |(n, shots, extra, seed)| {
            let labels = LabelSet::numbered(n).unwrap();
            let pool: Vec<LabeledExample> = (0..n * (shots + extra))
                .map(|i| LabeledExample::new(Example::new(format!("p{i}"), SparseVector::default()), i % n))
                .collect();
            let (sample, rest) = sample_few_shot(&pool, &labels, shots, seed).unwrap();
            for c in 0..n {
                prop_assert_eq!(sample.iter().filter(|s| s.label == c).count(), shots);
            }
            prop_assert_eq!(sample.len() + rest.len(), pool.len());
            Ok(())
        }),
    ]
}

fn worker_invariants() -> Vec<Result<(), String>> {
    let spec_strategy = (2usize..5, 0.0f64..=1.0, 0.2f64..3.0, any::<u64>(), 1usize..30);
    let mut results = vec![
        check("annotation label is the argmax of its logits", spec_strategy.clone(), |(n, acc, t, seed, len)| {
            let mut w = SimulatedWorker::new("w", SimulatedWorkerSpec::symmetric(n, acc, t, seed).unwrap()).unwrap();
            let exs: Vec<Example> = (0..len).map(|i| Example::new(format!("x{i}"), SparseVector::default()).with_gold(i % n)).collect();
            for a in w.annotate_batch(&exs, &LabelSet::numbered(n).unwrap()).unwrap() {
                prop_assert_eq!(a.label, argmax_tiebreak(&a.logits).unwrap());
            }
            Ok(())
        }),
        check("simulated workers are reproducible", spec_strategy, |(n, acc, t, seed, len)| {
            let spec = SimulatedWorkerSpec::symmetric(n, acc, t, seed).unwrap();
            let exs: Vec<Example> = (0..len).map(|i| Example::new(format!("x{i}"), SparseVector::default()).with_gold(i % n)).collect();
            let labels = LabelSet::numbered(n).unwrap();
            let a = SimulatedWorker::new("w", spec.clone()).unwrap().annotate_batch(&exs, &labels).unwrap();
            let b = SimulatedWorker::new("w", spec).unwrap().annotate_batch(&exs, &labels).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        }),
    ];

    // Law of large numbers at 10,000 draws, +- 3 sigma.
    let labels = LabelSet::numbered(4).unwrap();
    let confusion = vec![
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.2, 0.6, 0.1, 0.1],
        vec![0.0, 0.1, 0.9, 0.0],
        vec![0.25, 0.25, 0.25, 0.25],
    ];
    let spec = SimulatedWorkerSpec::new(confusion, 1.0, 17).unwrap();
    let draws = 10_000;
    let exs: Vec<Example> = (0..draws).map(|i| Example::new(format!("x{i}"), SparseVector::default()).with_gold(i % 4)).collect();
    let anns = SimulatedWorker::new("w", spec.clone()).unwrap().annotate_batch(&exs, &labels).unwrap();
    let observed = anns.iter().zip(&exs).filter(|(a, e)| Some(a.label) == e.gold).count() as f64 / draws as f64;
    let expected = spec.expected_accuracy(&[0.25; 4]);
    let sigma = (expected * (1.0 - expected) / draws as f64).sqrt();
    results.push(if (observed - expected).abs() <= 3.0 * sigma {
        Ok(())
    } else {
        Err(format!("worker accuracy {observed} outside {expected} +- {}", 3.0 * sigma))
    });

    // Lower temperature gives sharper logits.
    let sharpness = |t: f64| {
        let spec = SimulatedWorkerSpec::symmetric(4, 0.7, t, 3).unwrap();
        let anns = SimulatedWorker::new("w", spec).unwrap().annotate_batch(&exs[..4_000], &labels).unwrap();
        anns.iter().map(|a| softmax(&a.logits).unwrap().into_iter().fold(0.0, f64::max)).sum::<f64>() / anns.len() as f64
    };
    let (cold, hot) = (sharpness(0.5), sharpness(2.0));
    results.push(if cold >= hot { Ok(()) } else { Err(format!("temperature 0.5 max-prob {cold} < temperature 2.0 {hot}")) });
    results
}

fn aggregation_invariants() -> Vec<Result<(), String>> {
    vec![
        check("voting is permutation invariant", (committee_strategy(), any::<u64>()), |((logits, scores), seed)| {
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (anns, profs) = (annotations(&logits), profiles(&scores));
            let p_anns: Vec<Annotation> = order.iter().map(|&i| anns[i].clone()).collect();
            let p_profs: Vec<WorkerProfile> = order.iter().map(|&i| profs[i].clone()).collect();
            for s in [AggregationStrategy::MajorityVoting, AggregationStrategy::LogitVoting] {
                let (a, b) = (aggregate(s, &anns, None).unwrap(), aggregate(s, &p_anns, None).unwrap());
                prop_assert_eq!(a.label, b.label);
                prop_assert!(close(&a.dist, &b.dist, 1e-12));
            }
            let a = aggregate(AggregationStrategy::WeightedLogitVoting, &anns, Some(&profs)).unwrap();
            let b = aggregate(AggregationStrategy::WeightedLogitVoting, &p_anns, Some(&p_profs)).unwrap();
            prop_assert_eq!(a.label, b.label);
            prop_assert!(close(&a.dist, &b.dist, 1e-9));
            Ok(())
        }),
        check("unanimous committees win under every strategy", (committee_strategy(), 0usize..5), |((mut logits, scores), winner)| {
            let n = logits[0].len();
            let winner = winner % n;
            for l in &mut logits {
                l[winner] = 10.0;
            }
            let (anns, profs) = (annotations(&logits), profiles(&scores));
            for s in [
                AggregationStrategy::MajorityVoting,
                AggregationStrategy::LogitVoting,
                AggregationStrategy::WeightedLogitVoting,
                AggregationStrategy::BestWorker,
            ] {
                prop_assert_eq!(aggregate(s, &anns, Some(&profs)).unwrap().label, winner);
            }
            Ok(())
        }),
        check("weights ignore positive rescaling", (proptest::collection::vec(0.01f64..1.0, 1..6), 0.01f64..=1.0), |(scores, c)| {
            let a = compute_weights(&profiles(&scores)).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let b = compute_weights(&profiles(&scaled)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.weight.unwrap() - y.weight.unwrap()).abs() <= 1e-12);
            }
            Ok(())
        }),
        check("a single worker decides every strategy", (logit_vec(2..6), 0.05f64..1.0), |(l, s)| {
            let (anns, profs) = (annotations(std::slice::from_ref(&l)), profiles(&[s]));
            for st in [
                AggregationStrategy::MajorityVoting,
                AggregationStrategy::LogitVoting,
                AggregationStrategy::WeightedLogitVoting,
                AggregationStrategy::BestWorker,
            ] {
                prop_assert_eq!(aggregate(st, &anns, Some(&profs)).unwrap().label, anns[0].label);
            }
            Ok(())
        }),
        check("uniform weights agree with logit voting", (1usize..=5, 2usize..=5).prop_flat_map(|(k, n)| proptest::collection::vec(logit_vec(n), k)), |logits| {
            let anns = annotations(&logits);
            let uniform = profiles(&vec![0.5; logits.len()]);
            prop_assert_eq!(
                aggregate(AggregationStrategy::WeightedLogitVoting, &anns, Some(&uniform)).unwrap().label,
                aggregate(AggregationStrategy::LogitVoting, &anns, None).unwrap().label
            );
            Ok(())
        }),
    ]
}

fn acquisition_invariants() -> Vec<Result<(), String>> {
    let pool_strategy = (2usize..5, 1usize..40, 1usize..50, -30.0f64..30.0, any::<u64>());
    let model_and_pool = |n: usize, u: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let bias: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pool: Vec<Example> = (0..u).map(|i| Example::new(format!("q{i:02}"), random_sparse(&mut rng, 16))).collect();
        (rows, bias, pool)
    };
    let fc = FeaturizerConfig { dimension: 16, ..Default::default() };
    let fc2 = fc.clone();
    vec![
        check("entropy acquisition ignores a constant logit shift", pool_strategy.clone(), move |(n, u, b, c, seed)| {
            let (rows, bias, pool) = model_and_pool(n, u, seed);
            let labels = LabelSet::numbered(n).unwrap();
            let a = StudentModel::from_parameters(labels.clone(), fc.clone(), &rows, bias.clone()).unwrap();
            let shifted = StudentModel::from_parameters(labels, fc.clone(), &rows, bias.iter().map(|x| x + c).collect()).unwrap();
            let (x, y) = (acquire_entropy(&a, &pool, b).unwrap(), acquire_entropy(&shifted, &pool, b).unwrap());
            let (x, y): (HashSet<usize>, HashSet<usize>) = (x.indices.into_iter().collect(), y.indices.into_iter().collect());
            prop_assert_eq!(x, y);
            Ok(())
        }),
        check("batch size is min(b, |U|)", pool_strategy, move |(n, u, b, _, seed)| {
            let (rows, bias, pool) = model_and_pool(n, u, seed);
            let m = StudentModel::from_parameters(LabelSet::numbered(n).unwrap(), fc2.clone(), &rows, bias).unwrap();
            let want = b.min(u);
            prop_assert_eq!(acquire_entropy(&m, &pool, b).unwrap().indices.len(), want);
            prop_assert_eq!(acquire_least_confident(&m, &pool, b).unwrap().indices.len(), want);
            prop_assert_eq!(lmturk_core::acquisition::acquire_random(&pool, b, seed).indices.len(), want);
            Ok(())
        }),
    ]
}

fn quality_invariants() -> Vec<Result<(), String>> {
    let mut results = vec![
        check("gold items are never dropped or down-weighted", (items_strategy(), 1u32..=10), |(items, t)| {
            let tau = Tau::new(f64::from(t) / 10.0).unwrap();
            let gold: Vec<String> = items.iter().filter(|i| i.is_gold()).map(|i| i.example.id.clone()).collect();
            let kept = instance_threshold(items.clone(), tau);
            let kept_gold: Vec<String> = kept.iter().filter(|i| i.is_gold()).map(|i| i.example.id.clone()).collect();
            prop_assert_eq!(&gold, &kept_gold);
            prop_assert!(instance_weight(items).iter().filter(|i| i.is_gold()).all(|i| i.weight == 1.0));
            Ok(())
        }),
        check("kept size is |gold| + ceil(tau * |non-gold|)", (items_strategy(), 1u32..=10), |(items, t)| {
            let gold = items.iter().filter(|i| i.is_gold()).count();
            let other = items.len() - gold;
            let kept = instance_threshold(items, Tau::new(f64::from(t) / 10.0).unwrap());
            prop_assert_eq!(kept.len(), gold + (other * t as usize).div_ceil(10));
            Ok(())
        }),
        check("smaller tau keeps a subset", (items_strategy(), 1u32..=10, 1u32..=10), |(items, a, b)| {
            let (lo, hi) = (a.min(b), a.max(b));
            let ids = |t: u32| -> HashSet<String> {
                instance_threshold(items.clone(), Tau::new(f64::from(t) / 10.0).unwrap()).into_iter().map(|i| i.example.id).collect()
            };
            prop_assert!(ids(lo).is_subset(&ids(hi)));
            Ok(())
        }),
    ];

    // Quality/size trade-off: over 20 seeded trials, low-entropy halves of
    // committee labels agree with gold at least as often as the full set.
    let labels = LabelSet::numbered(3).unwrap();
    let mut at_half = 0.0;
    let mut at_full = 0.0;
    for trial in 0..20u64 {
        let specs: Vec<SimulatedWorkerSpec> = (0..5).map(|i| SimulatedWorkerSpec::symmetric(3, 0.6, 1.0, trial * 10 + i).unwrap()).collect();
        let mut committee = Committee::simulated(specs).unwrap();
        let exs: Vec<Example> = (0..200).map(|i| Example::new(format!("t{i:03}"), SparseVector::default()).with_gold(i % 3)).collect();
        let anns = committee.annotate(&exs, &labels).unwrap();
        let items: Vec<TrainingItem> = exs
            .iter()
            .zip(&anns)
            .map(|(e, a)| TrainingItem::annotated(e.clone(), aggregate(AggregationStrategy::LogitVoting, a, None).unwrap(), ItemSource::Worker))
            .collect();
        let agreement = |kept: Vec<TrainingItem>| {
            kept.iter().filter(|i| Some(i.target_label) == i.example.gold).count() as f64 / kept.len() as f64
        };
        at_half += agreement(instance_threshold(items.clone(), Tau::new(0.5).unwrap())) / 20.0;
        at_full += agreement(instance_threshold(items, Tau::ALL)) / 20.0;
    }
    results.push(if at_half >= at_full { Ok(()) } else { Err(format!("tau 0.5 agreement {at_half} < tau 1.0 {at_full}")) });
    results
}

fn student_invariants() -> Vec<Result<(), String>> {
    let fc = FeaturizerConfig { dimension: 32, ..Default::default() };
    let labels = LabelSet::numbered(3).unwrap();
    // The first two items carry different labels so training is never degenerate.
    let batch_strategy = (proptest::collection::vec((0usize..3, proptest::collection::vec((0u32..32, 0.0f64..1.0), 1..5)), 2..20), any::<u64>())
        .prop_map(|(mut rows, seed)| {
            rows[0].0 = 0;
            rows[1].0 = 1;
            (rows, seed)
        });
    let to_items = |rows: Vec<(usize, Vec<(u32, f64)>)>| -> Vec<TrainingItem> {
        rows.into_iter()
            .enumerate()
            .map(|(i, (y, f))| TrainingItem::gold(Example::new(format!("s{i}"), SparseVector::from_pairs(f)), y, 3))
            .collect()
    };
    let (fc1, fc2, fc3, l1, l2, l3) = (fc.clone(), fc.clone(), fc.clone(), labels.clone(), labels.clone(), labels.clone());
    let mut results = vec![
        check("training depends only on data, config and seed", batch_strategy.clone(), move |(rows, seed)| {
            let items = to_items(rows);
            let cfg = TrainConfig { epochs: 3, ..Default::default() };
            let a = train_student(&items, &l1, &fc1, &cfg, seed, None).unwrap();
            let _ = train_student(&items[..2], &l1, &fc1, &cfg, seed ^ 1, None).unwrap();
            let b = train_student(&items, &l1, &fc1, &cfg, seed, None).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        }),
        check("unit weights reproduce the unweighted loss bit for bit", batch_strategy.clone(), move |(rows, seed)| {
            let mut items = to_items(rows);
            for it in &mut items {
                it.weight = 1.0;
            }
            let plain = TrainConfig { epochs: 3, ..Default::default() };
            let weighted = TrainConfig { use_weights: true, ..plain.clone() };
            let a = train_student(&items, &l2, &fc2, &plain, seed, None).unwrap();
            let b = train_student(&items, &l2, &fc2, &weighted, seed, None).unwrap();
            prop_assert_eq!(objective(&a, &items, &plain).to_bits(), objective(&b, &items, &weighted).to_bits());
            prop_assert_eq!(a, b);
            Ok(())
        }),
        check("logits are linear in feature values", (proptest::collection::vec(-2.0f64..2.0, 3 * 32), proptest::collection::vec((0u32..32, 0.0f64..1.0), 1..5)), move |(w, f)| {
            let rows: Vec<Vec<f64>> = w.chunks(32).map(|c| c.to_vec()).collect();
            let m = StudentModel::from_parameters(l3.clone(), fc3.clone(), &rows, vec![0.0; 3]).unwrap();
            let x = SparseVector::from_pairs(f);
            let (a, b) = (m.logits(&x).unwrap(), m.logits(&x.scaled(2.0)).unwrap());
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((2.0 * p - q).abs() <= 1e-9 * (1.0 + q.abs()));
            }
            Ok(())
        }),
    ];

    // Full-batch loss decreases monotonically on a separable fixture.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let items: Vec<TrainingItem> = (0..200)
        .map(|i| {
            let y = i % 2;
            let f = SparseVector::from_pairs([(y as u32, rng.random_range(0.5..1.0)), (2 + rng.random_range(0..4u32), rng.random_range(0.0..0.3))]);
            TrainingItem::gold(Example::new(format!("b{i}"), f), y, 2)
        })
        .collect();
    let two = LabelSet::numbered(2).unwrap();
    let fc8 = FeaturizerConfig { dimension: 8, ..Default::default() };
    let mut losses = Vec::new();
    for epochs in 1..=20 {
        let cfg = TrainConfig { epochs, batch_size: items.len(), learning_rate: 1e-2, ..Default::default() };
        let m = train_student(&items, &two, &fc8, &cfg, 0, None).unwrap();
        losses.push(objective(&m, &items, &cfg));
    }
    results.push(if losses.windows(2).all(|w| w[1] < w[0]) { Ok(()) } else { Err(format!("full-batch loss not decreasing: {losses:?}")) });
    results
}

fn orchestrator_invariants() -> Vec<Result<(), String>> {
    let labels = LabelSet::numbered(3).unwrap();
    let fc = FeaturizerConfig { dimension: 64, ..Default::default() };
    let strategy = (0usize..30, 1usize..8, 1usize..5, prop_oneof![Just(Scheme::ActiveLearningGold), Just(Scheme::SelfTraining), Just(Scheme::LmTurk)], any::<u64>());
    vec![check("expanding pool, disjoint partitions, determinism", strategy, move |(u, b, j, scheme, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ex = |prefix: &str, i: usize| {
            let y = i % 3;
            Example::new(format!("{prefix}{i}"), SparseVector::from_pairs([(y as u32, 1.0), (rng.random_range(3..64), 0.5)])).with_gold(y)
        };
        let labeled = |e: Example| {
            let y = e.gold.unwrap();
            LabeledExample::new(e, y)
        };
        let pool = Pool::new(
            (0..u).map(|i| ex("u", i)).collect(),
            (0..3).map(|i| labeled(ex("g", i))).collect(),
            (0..3).map(|i| labeled(ex("d", i))).collect(),
            (0..6).map(|i| labeled(ex("t", i))).collect(),
        )
        .unwrap();
        let cfg = LoopConfig {
            scheme,
            acquisition: AcquisitionKind::Entropy,
            batch_size: b,
            iterations: j,
            k: 3,
            shots: 1,
            train: TrainConfig { epochs: 2, learning_rate: 0.5, ..Default::default() },
            seeds: Seeds { sampling: seed, training: seed ^ 7, workers: seed ^ 11 },
            ..Default::default()
        };
        let run = || {
            let mut committee = Committee::simulated(
                (0..3).map(|i| SimulatedWorkerSpec::symmetric(3, 0.8, 1.0, seed.wrapping_add(i)).unwrap()).collect(),
            )
            .unwrap();
            let c = (scheme == Scheme::LmTurk).then_some(&mut committee);
            run_loop(&cfg, pool.clone(), &labels, &fc, c).unwrap()
        };
        let out = run();
        for (jj, rec) in out.records.iter().enumerate() {
            if jj * b <= u {
                prop_assert_eq!(rec.train_size, 3 + jj * b);
            }
            prop_assert!(rec.kept_size >= 3);
        }
        let mut seen = HashSet::new();
        for batch in &out.acquired_ids {
            for id in batch {
                prop_assert!(id.starts_with('u'), "acquired non-pool id {}", id);
                prop_assert!(seen.insert(id.clone()), "acquired {} twice", id);
            }
        }
        let again = run();
        prop_assert_eq!(&out.records.iter().map(|r| IterationRecord { wall_time_ms: 0, ..r.clone() }).collect::<Vec<_>>(),
            &again.records.iter().map(|r| IterationRecord { wall_time_ms: 0, ..r.clone() }).collect::<Vec<_>>());
        Ok(())
    })]
}

fn harness_invariants() -> Vec<Result<(), String>> {
    let mut cfg = ExperimentConfig::default();
    if let Some(s) = cfg.dataset.synthetic.as_mut() {
        s.n_examples = 300;
        s.n_classes = 3;
    }
    cfg.loop_config.shots = 3;
    cfg.loop_config.batch_size = 10;
    cfg.loop_config.iterations = 2;
    cfg.featurizer.dimension = 1 << 10;
    cfg.repetitions = 2;
    let run = |c: &ExperimentConfig| {
        let data = prepare_data(c).unwrap();
        run_experiment_on(c, &data, CommitteeSource::Simulated).unwrap().log.to_ndjson_string().unwrap()
    };
    let original = run(&cfg);
    let replayed = run(&RunLog::read_ndjson(original.as_bytes()).unwrap().config);
    vec![if original == replayed { Ok(()) } else { Err("replay from the logged config differs".into()) }]
}

#[test]
fn criterion_9_invariant_suite() {
    let _guard = exclusive();
    let start = Instant::now();
    let groups: Vec<(&str, Vec<Result<(), String>>)> = vec![
        ("data_model", data_model_invariants()),
        ("workers", worker_invariants()),
        ("aggregation", aggregation_invariants()),
        ("acquisition", acquisition_invariants()),
        ("quality", quality_invariants()),
        ("student", student_invariants()),
        ("orchestrator", orchestrator_invariants()),
        ("harness", harness_invariants()),
    ];
    let total: usize = groups.iter().map(|(_, r)| r.len()).sum();
    let failures: Vec<String> = groups.iter().flat_map(|(_, r)| r.iter().filter_map(|x| x.clone().err())).collect();
    let elapsed = start.elapsed();
    verdict(
        9,
        "invariant suite",
        failures.is_empty() && within(elapsed, 120),
        format!(
            "{total} properties across {} modules ({CASES} cases each where randomized), {} failed {:?}, {:.0}s",
            groups.len(),
            failures.len(),
            failures,
            elapsed.as_secs_f64()
        ),
    );
}
