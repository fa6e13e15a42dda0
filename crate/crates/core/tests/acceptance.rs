//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use exploit_target::cli;
use exploit_target::embed::EmbeddingMatrix;
use exploit_target::evalharness::{
    class_metrics, confusion, metrics, stars, stratified_kfold, student_t_upper, ConfusionMatrix, Metrics,
};
use exploit_target::nn::{batch_loss, compute_gradients, softmax, SeqKind, SequenceModel};
use exploit_target::synthetic::{desk_config, keyword_task, order_task, reference_bin_gold};
use exploit_target::textprep::{EncodedExample, PAD};
use exploit_target::{seed, tensor::Matrix};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// 1. Analytic gradients against central differences (step 1e-5) on random
//    tiny models: d ≤ 4, h ≤ 3, K ≤ 3, T ≤ 5. Max relative error < 1e-4, < 10 s.
fn criterion_1() -> Outcome {
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = seed::rng(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for kind in SeqKind::ALL {
        for _ in 0..6 {
            let (d, h, k, vocab) = (rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(2..=3), 7);
            let mut matrix = Matrix::from_fn(vocab, d, |_, _| rng.gen_range(-0.8..0.8));
            matrix.row_mut(PAD as usize).fill(0.0);
            let emb = EmbeddingMatrix { matrix, trainable: true, coverage: 0.0 };
            let model = SequenceModel::new(kind, emb, h, k, &mut rng);
            let batch: Vec<(EncodedExample, usize)> = (0..3)
                .map(|_| {
                    let t = rng.gen_range(1..=5);
                    let mut ids: Vec<u32> = (0..t).map(|_| rng.gen_range(1..vocab as u32)).collect();
                    ids.resize(5, PAD);
                    (EncodedExample { ids, true_length: t }, rng.gen_range(0..k))
                })
                .collect();
            let (_, grads) = compute_gradients(&model, &batch).map_err(|e| e.to_string())?;
            let analytic: BTreeMap<String, Vec<f64>> = grads.tensors().into_iter().map(|(n, g)| (n, g.to_vec())).collect();
            let names: Vec<String> = model.tensors().into_iter().map(|(n, _, _)| n).collect();
            check(names.iter().all(|n| analytic.contains_key(n)), "a parameter tensor has no gradient")?;
            let mut probe = model.clone();
            for name in &names {
                for i in 0..analytic[name].len() {
                    let bump = |m: &mut SequenceModel, v: f64| {
                        for (n, t) in m.tensors_mut() {
                            if n == *name {
                                t[i] = v;
                            }
                        }
                    };
                    let orig = model.tensors().into_iter().find(|(n, _, _)| n == name).unwrap().2[i];
                    bump(&mut probe, orig + STEP);
                    let plus = batch_loss(&probe, &batch).unwrap();
                    bump(&mut probe, orig - STEP);
                    let minus = batch_loss(&probe, &batch).unwrap();
                    bump(&mut probe, orig);
                    let numeric = (plus - minus) / (2.0 * STEP);
                    let a = analytic[name][i];
                    // Relative error with a small absolute floor for zero gradients.
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check(worst < TOL, format!("max relative error {worst:.3e} ≥ {TOL:e}"))?;
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{checked} parameters, max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()))
}

fn brute_force_metrics(cm: &ConfusionMatrix) -> Metrics {
    let k = cm.k();
    let mut pairs = Vec::new();
    for g in 0..k {
        for p in 0..k {
            pairs.extend(std::iter::repeat_n((g, p), cm.get(g, p) as usize));
        }
    }
    let (mut ps, mut rs, mut fs, mut present) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(g, p)| g == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(g, p)| g != c && p == c).count() as f64;
        let fneg = pairs.iter().filter(|&&(g, p)| g == c && p != c).count() as f64;
        if tp + fneg == 0.0 {
            continue;
        }
        present += 1.0;
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = tp / (tp + fneg);
        ps += prec;
        rs += rec;
        fs += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64;
    Metrics { accuracy: correct / pairs.len() as f64, precision: ps / present, recall: rs / present, f1: fs / present }
}

// 2. Softmax normalization (1e-9, 10,000 vectors), metrics vs a brute-force
//    oracle (1e-12, 1,000 matrices), and the binary hand example.
fn criterion_2() -> Outcome {
    let mut rng = seed::rng(2);
    let mut worst_sum = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let p = softmax(&z).map_err(|e| e.to_string())?;
        check(p.iter().all(|&v| v >= 0.0), "negative probability")?;
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    check(worst_sum <= 1e-9, format!("softmax sum off by {worst_sum:e}"))?;

    let mut worst_metric = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=6);
        let mut counts: Vec<u64> = (0..k * k).map(|_| rng.gen_range(0..15)).collect();
        counts[rng.gen_range(0..k * k)] += 1;
        let cm = ConfusionMatrix::from_counts(k, counts).unwrap();
        let got = metrics(&cm).map_err(|e| e.to_string())?;
        let want = brute_force_metrics(&cm);
        for (a, b) in got.values().iter().zip(want.values()) {
            worst_metric = worst_metric.max((a - b).abs());
        }
    }
    check(worst_metric <= 1e-12, format!("metrics differ from oracle by {worst_metric:e}"))?;

    // positive class 0: TP=3, FN=2, FP=1, TN=4
    let cm = confusion(&[0, 0, 0, 1, 1, 0, 1, 1, 1, 1], &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1], 2).unwrap();
    let pos = class_metrics(&cm, 0);
    let acc = metrics(&cm).unwrap().accuracy;
    check((pos.tp, pos.fp, pos.fn_, pos.tn) == (3, 1, 2, 4), "hand example counts")?;
    check(acc == 0.7 && pos.precision == 0.75 && pos.recall == 0.6, "hand example accuracy/precision/recall")?;
    check(format!("{:.4}", pos.f1) == "0.6667", format!("hand example f1 {}", pos.f1))?;
    Ok(format!("softmax max |Σ−1| {worst_sum:.1e}; metrics max diff {worst_metric:.1e}; hand example 0.7/0.75/0.6/0.6667"))
}

// 3. Reference class counts: folds of exactly 521, per-class deviation ≤ 1,
//    majority-class accuracy 0.3417 ± 0.0005 over folds.
fn criterion_3() -> Outcome {
    let ds = reference_bin_gold().map_err(|e| e.to_string())?;
    let plan = stratified_kfold(&ds, 10, 11).map_err(|e| e.to_string())?;
    check(plan.sizes() == vec![521; 10], format!("fold sizes {:?}", plan.sizes()))?;
    for c in 0..ds.num_classes() {
        let per: Vec<usize> = plan.folds.iter().map(|f| f.iter().filter(|&&i| ds.labels()[i] == c).count()).collect();
        check(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1, format!("class {c} spread {per:?}"))?;
    }
    let mut accs = Vec::new();
    for f in 0..10 {
        let mut counts = vec![0usize; ds.num_classes()];
        for i in plan.train_indices(f) {
            counts[ds.labels()[i]] += 1;
        }
        let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        let golds: Vec<usize> = plan.folds[f].iter().map(|&i| ds.labels()[i]).collect();
        let cm = confusion(&vec![majority; golds.len()], &golds, ds.num_classes()).unwrap();
        accs.push(metrics(&cm).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    check((mean - 0.3417).abs() <= 0.0005, format!("majority accuracy {mean:.5}"))?;
    Ok(format!("10 folds × 521; majority accuracy {mean:.4}"))
}

// 4. Student-t upper tail at df = 9 within 2e-4; exact star boundaries.
fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for (t, p) in [(0.0, 0.5), (1.383, 0.10), (1.833, 0.05), (2.821, 0.01), (4.781, 0.0005)] {
        worst = worst.max((student_t_upper(t, 9.0) - p).abs());
    }
    check(worst <= 2e-4, format!("tail error {worst:e}"))?;
    let boundaries = [
        (0.05, ""),
        (0.05 - 1e-12, "*"),
        (0.01, "*"),
        (0.01 - 1e-12, "**"),
        (0.001, "**"),
        (0.001 - 1e-12, "***"),
    ];
    for (p, s) in boundaries {
        check(stars(p) == s, format!("stars({p}) = {:?}, expected {s:?}", stars(p)))?;
    }
    Ok(format!("max tail error {worst:.1e}; boundaries exact"))
}

fn write_gold(dir: &Path, ds: &exploit_target::corpus::GoldDataset) -> std::path::PathBuf {
    let p = dir.join("gold.jsonl");
    ds.write_jsonl(&p).unwrap();
    p
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["exploit-target"];
    argv.extend_from_slice(args);
    match cli::main(argv.iter().copied()) {
        0 => Ok(()),
        code => Err(format!("CLI exited with {code} for {args:?}")),
    }
}

fn report_rows(json: &str) -> serde_json::Value {
    serde_json::from_str::<serde_json::Value>(json).unwrap()["report"].clone()
}

fn row<'a>(report: &'a serde_json::Value, name: &str) -> &'a serde_json::Value {
    report["rows"].as_array().unwrap().iter().find(|r| r["name"] == name).unwrap()
}

// 5. Order-dependent task, 2,000 documents, 10 folds, all 8 models,
//    single-threaded: bilstm F1 ≥ 0.90, nb F1 ≤ 0.60, one-tailed p < 0.001,
//    under 15 minutes. 7. A rerun reproduces report.json byte for byte.
fn criteria_5_and_7(work: &Path) -> (Outcome, Outcome) {
    let gold = write_gold(work, &order_task(2000, 7).unwrap());
    let config = work.join("order.json");
    let run_config = cli::RunConfig { seed: 7, bins: exploit_target::synthetic::ORDER_CLASSES.iter().map(|s| s.to_string()).collect(), experiment: desk_config(), ..Default::default() };
    fs::write(&config, serde_json::to_string_pretty(&run_config).unwrap()).unwrap();
    let out = work.join("order-out");
    let args = ["benchmark", "--config", config.to_str().unwrap(), "--gold", gold.to_str().unwrap(), "--out", out.to_str().unwrap()];

    let start = Instant::now();
    let first = run_cli(&[&args[..], &["--jobs", "1"]].concat());
    let elapsed = start.elapsed();
    let c5 = first.and_then(|()| {
        let json = fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
        let report = report_rows(&json);
        let f1 = |name: &str| row(&report, name)["mean"]["f1"].as_f64().unwrap();
        let p = row(&report, "nb")["vs_champion"]["f1"]["p"].as_f64().unwrap();
        let (bi, nb) = (f1("bilstm"), f1("nb"));
        check(bi >= 0.90, format!("bilstm F1 {bi:.4} < 0.90"))?;
        check(nb <= 0.60, format!("nb F1 {nb:.4} > 0.60"))?;
        check(p < 0.001, format!("p = {p:e} ≥ 0.001"))?;
        check(elapsed < Duration::from_secs(15 * 60), format!("took {elapsed:?}"))?;
        Ok(format!("bilstm F1 {bi:.4}, nb F1 {nb:.4}, p = {p:.2e}, {:.1}s single-threaded", elapsed.as_secs_f64()))
    });
    let c7 = (|| {
        let before = fs::read(out.join("report.json")).map_err(|e| format!("no first report: {e}"))?;
        run_cli(&[&args[..], &["--jobs", "3"]].concat())?;
        let after = fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
        check(before == after, "report.json differs between runs")?;
        Ok(format!("report.json identical across reruns ({} bytes, 1 vs 3 worker threads)", after.len()))
    })();
    (c5, c7)
}

// 6. Five-class keyword task: every model macro-F1 ≥ 0.80, bilstm ≥ 0.95.
fn criterion_6(work: &Path) -> Outcome {
    let gold = write_gold(work, &keyword_task(1000, 5).unwrap());
    let out = work.join("keyword-out");
    let config = work.join("keyword.json");
    let run_config = cli::RunConfig { seed: 5, experiment: desk_config(), ..Default::default() };
    fs::write(&config, serde_json::to_string_pretty(&run_config).unwrap()).unwrap();
    run_cli(&["benchmark", "--config", config.to_str().unwrap(), "--gold", gold.to_str().unwrap(), "--out", out.to_str().unwrap()])?;
    let report = report_rows(&fs::read_to_string(out.join("report.json")).unwrap());
    let mut parts = Vec::new();
    for r in report["rows"].as_array().unwrap() {
        let name = r["name"].as_str().unwrap();
        let f1 = r["mean"]["f1"].as_f64().ok_or(format!("{name} failed"))?;
        let floor = if name == "bilstm" { 0.95 } else { 0.80 };
        check(f1 >= floor, format!("{name} F1 {f1:.4} < {floor}"))?;
        parts.push(format!("{name} {f1:.3}"));
    }
    Ok(parts.join(", "))
}

// 8. ingest → extract → build-gold on the 200-post fixture: idempotent
//    re-ingest, the 99-mention bin pruned, the 100-mention bin kept, only
//    retained labels emitted.
fn criterion_8(work: &Path) -> Outcome {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures/posts_200.jsonl");
    let store = work.join("store");
    let (s, f) = (store.to_str().unwrap(), fixture.to_str().unwrap());
    let out1 = work.join("pipeline-1");
    let out2 = work.join("pipeline-2");

    run_cli(&["ingest", "--store", s, f])?;
    let posts_after_first = fs::read_to_string(store.join("posts.jsonl")).unwrap();
    check(posts_after_first.lines().count() == 200, format!("{} posts stored", posts_after_first.lines().count()))?;
    run_cli(&["extract", "--store", s, "--out", out1.to_str().unwrap()])?;
    run_cli(&["build-gold", "--store", s, "--min-bin", "100", "--out", out1.to_str().unwrap()])?;

    run_cli(&["ingest", "--store", s, f])?;
    check(fs::read_to_string(store.join("posts.jsonl")).unwrap() == posts_after_first, "re-ingest changed the store")?;
    run_cli(&["build-gold", "--store", s, "--min-bin", "100", "--out", out2.to_str().unwrap()])?;
    let gold1 = fs::read_to_string(out1.join("gold.jsonl")).unwrap();
    check(gold1 == fs::read_to_string(out2.join("gold.jsonl")).unwrap(), "gold differs after re-ingest")?;

    let mentions: serde_json::Value = serde_json::from_str(&fs::read_to_string(out1.join("mentions.json")).unwrap()).unwrap();
    let counts = &mentions["bin_counts"];
    check(counts["Mobile"] == 99 && counts["Open Source"] == 100, format!("bin counts {counts}"))?;
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out1.join("gold.meta.json")).unwrap()).unwrap();
    let retained: Vec<&str> = meta["retained_bins"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    check(!retained.contains(&"Mobile") && retained.contains(&"Open Source"), format!("retained {retained:?}"))?;
    let labels: Vec<String> = gold1
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["bin"].as_str().unwrap().to_string())
        .collect();
    check(labels.iter().all(|b| retained.contains(&b.as_str())), "a gold label is outside the retained bins")?;
    check(labels.iter().any(|b| b == "Open Source"), "no Open Source record")?;
    Ok(format!("200 posts stored once; Mobile (99) pruned, Open Source (100) kept; {} gold records", labels.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
    })
}

fn main() {
    let tmp = tempfile::TempDir::new().unwrap();
    let work = tmp.path();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "gradient correctness", guarded(criterion_1)));
    results.push((2, "softmax and metrics oracles", guarded(criterion_2)));
    results.push((3, "fold discipline", guarded(criterion_3)));
    results.push((4, "t-distribution and stars", guarded(criterion_4)));
    let (c5, c7) = catch_unwind(AssertUnwindSafe(|| criteria_5_and_7(work)))
        .unwrap_or_else(|_| (Err("panic".into()), Err("panic".into())));
    results.push((5, "order-sensitivity", c5));
    results.push((6, "separable task", guarded(|| criterion_6(work))));
    results.push((7, "determinism", c7));
    results.push((8, "pipeline integrity", guarded(|| criterion_8(work))));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
